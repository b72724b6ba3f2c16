use memtweak::attack::{
    self, bridge_payload, cc_candidates, find_bridge, find_bridge_candidates, find_cc,
    inject_shellcode, run_attack, AttackError, AttackPlan, FailReason, Outcome,
};
use memtweak::guest::{
    AttackSurface, GuestConfig, GuestError, GuestImage, Shellcode, VictimStatus, BRIDGE_GROUPS,
    BRIDGE_LEN, PAGE_SIZE, SHELLCODE_LEN,
};
use memtweak::memcrypt::Mode;
use memtweak::tweak::{PhysAddr, TweakTable};
use memtweak::{Block, Scenario, BLOCK_SIZE};

const PAGES: u64 = 512;

fn config(seed: u64, mode: Mode) -> GuestConfig {
    GuestConfig {
        page_count: PAGES,
        mode,
        ..GuestConfig::with_seed(seed)
    }
}

fn guest(seed: u64, mode: Mode) -> GuestImage {
    GuestImage::new(config(seed, mode)).unwrap()
}

fn plan() -> AttackPlan {
    AttackPlan::from_scenario(&Scenario::default(), TweakTable::table1())
}

/// Start addresses of every maximal run of at least `len` equal blocks.
fn equal_runs(dump: &[u8], len: usize) -> Vec<(u64, usize)> {
    let blocks: Vec<&[u8]> = dump.chunks_exact(BLOCK_SIZE).collect();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=blocks.len() {
        if i == blocks.len() || blocks[i] != blocks[start] {
            if i - start >= len {
                out.push(((start * BLOCK_SIZE) as u64, i - start));
            }
            start = i;
        }
    }
    out
}

#[test]
fn bridge_matches_white_box() {
    for seed in 0..5 {
        let mut g = guest(seed, Mode::Vulnerable);
        let truth = g.whitebox().bridge_address();
        assert_eq!(find_bridge(&mut g, &plan()).unwrap(), truth, "seed {seed}");
    }
}

#[test]
fn exhaustive_scan_finds_exactly_one_run() {
    for seed in 10..13 {
        let mut g = guest(seed, Mode::Vulnerable);
        let dump_before = g
            .hv_read_cipher(PhysAddr::default(), g.memory_size() as usize)
            .unwrap();
        assert!(equal_runs(&dump_before, 2).is_empty());

        g.inject(&bridge_payload(&TweakTable::table1(), plan().bridge_offset).unwrap())
            .unwrap();
        let dump = g
            .hv_read_cipher(PhysAddr::default(), g.memory_size() as usize)
            .unwrap();
        let runs = equal_runs(&dump, BRIDGE_GROUPS);
        assert_eq!(
            runs,
            vec![(g.whitebox().bridge_address().value(), BRIDGE_GROUPS)]
        );
    }
}

// Every bridge block enters AES as T(page base): the in-page offset terms
// cancel, and the unknown page bits add the same tweak to all 62 blocks.
#[test]
fn bridge_inputs_all_equal_page_tweak() {
    let table = TweakTable::table1();
    let payload = bridge_payload(&table, plan().bridge_offset).unwrap();
    for seed in 0..3 {
        let mut g = guest(seed, Mode::Vulnerable);
        g.inject(&payload).unwrap();
        let wb = g.whitebox();
        let bpa = wb.bridge_address();
        let base = PhysAddr::new(wb.bridge_page() * PAGE_SIZE).unwrap();
        let plain = wb.read_plain(bpa, BRIDGE_LEN).unwrap();
        for (i, chunk) in plain.chunks_exact(BLOCK_SIZE).enumerate() {
            let slot = bpa.checked_add((i * BLOCK_SIZE) as u64).unwrap();
            assert_eq!(
                Block::from_slice(chunk) ^ table.tweak_of(slot),
                table.tweak_of(base)
            );
        }
    }
    // Holds for every page, not only the real one.
    for page in 0..PAGES {
        let base = page * PAGE_SIZE;
        for (i, chunk) in payload.chunks_exact(BLOCK_SIZE).enumerate() {
            let slot =
                PhysAddr::new(base + plan().bridge_offset + (i * BLOCK_SIZE) as u64).unwrap();
            assert_eq!(
                Block::from_slice(chunk) ^ table.tweak_of(slot),
                table.tweak_of_raw(base).unwrap()
            );
        }
    }
}

#[test]
fn cc_search_finds_victim_within_round_bound() {
    for seed in 0..5 {
        let mut g = guest(seed, Mode::Vulnerable);
        let p = plan();
        let bpa = find_bridge(&mut g, &p).unwrap();
        let m = find_cc(&mut g, &p, bpa).unwrap();
        assert_eq!(m.pcc, g.whitebox().victim_address());
        let candidates = cc_candidates(PAGES, &p, bpa).len();
        assert!(m.rounds <= candidates.div_ceil(BRIDGE_GROUPS));
        // Ascending page order fixes the round exactly.
        let victim_page = g.whitebox().victim_page() as usize;
        assert_eq!(m.rounds, victim_page / BRIDGE_GROUPS + 1);
    }
}

#[test]
fn forged_blocks_equal_white_box_encryption() {
    for seed in 0..5 {
        let mut g = guest(seed, Mode::Vulnerable);
        let p = plan();
        let report = run_attack(&mut g, &p);
        assert_eq!(report.outcome, Outcome::ShellcodeActive, "seed {seed}");
        let pcc = report.pcc.unwrap();
        let forged = report.forged.unwrap();
        let engine = g.whitebox().engine();
        for k in 0..SHELLCODE_LEN / BLOCK_SIZE {
            let at = pcc.checked_add((k * BLOCK_SIZE) as u64).unwrap();
            let expect = engine.encrypt_block(p.shellcode.block(k), at).unwrap();
            assert_eq!(
                Block::from_slice(&forged[k * BLOCK_SIZE..]),
                expect,
                "seed {seed} block {k}"
            );
        }
        assert_eq!(
            g.whitebox().read_plain(pcc, SHELLCODE_LEN).unwrap(),
            p.shellcode.0
        );
    }
}

#[test]
fn custom_shellcode_and_offsets() {
    let mut s = Scenario {
        page_count: PAGES,
        bridge_offset: 0x40,
        cc_offset: 0x800,
        seed: 77,
        ..Scenario::default()
    };
    s.shellcode = Shellcode([0xcc; SHELLCODE_LEN]);
    s.victim = (0..64u8).collect();
    let mut g = GuestImage::new(GuestConfig::from(&s)).unwrap();
    let report = run_attack(&mut g, &AttackPlan::from_scenario(&s, TweakTable::table1()));
    assert!(report.outcome.is_success(), "{}", report.to_text(false));
    assert_eq!(report.bpa.unwrap().value() % PAGE_SIZE, 0x40);
    assert_eq!(report.pcc.unwrap().value() % PAGE_SIZE, 0x800);
}

#[test]
fn random_tweak_table_guest() {
    let table = TweakTable::random(4);
    let mut g = GuestImage::new(GuestConfig {
        table: table.clone(),
        ..config(4, Mode::Vulnerable)
    })
    .unwrap();
    let mut p = plan();
    assert!(matches!(
        find_bridge(&mut g, &p),
        Err(AttackError::BridgeNotFound)
    ));
    p.table = table;
    assert!(run_attack(&mut g, &p).outcome.is_success());
}

#[test]
fn duplicate_plaintext_fill_is_harmless() {
    for rate in [0.5, 1.0] {
        let mut g = GuestImage::new(GuestConfig {
            duplicate_rate: rate,
            ..config(5, Mode::Vulnerable)
        })
        .unwrap();
        let dump = g
            .hv_read_cipher(PhysAddr::default(), g.memory_size() as usize)
            .unwrap();
        assert!(equal_runs(&dump, 2).is_empty(), "rate {rate}");
        let report = run_attack(&mut g, &plan());
        assert!(report.outcome.is_success(), "rate {rate}");
        assert_eq!(report.bridge_candidates.len(), 1);
    }
}

/// Copies the Bridge ciphertext to a decoy page after each injection.
struct Mirror {
    inner: GuestImage,
    decoy: PhysAddr,
}

impl AttackSurface for Mirror {
    fn page_count(&self) -> u64 {
        self.inner.page_count()
    }

    fn inject(&mut self, payload: &[u8]) -> Result<(), GuestError> {
        self.inner.inject(payload)?;
        let bpa = self.inner.whitebox().bridge_address();
        let c = self.inner.hv_read_cipher(bpa, BRIDGE_LEN)?;
        self.inner.hv_write_cipher(self.decoy, &c)
    }

    fn hv_read_cipher(&self, p: PhysAddr, len: usize) -> Result<Vec<u8>, GuestError> {
        self.inner.hv_read_cipher(p, len)
    }

    fn hv_write_cipher(&mut self, p: PhysAddr, data: &[u8]) -> Result<(), GuestError> {
        self.inner.hv_write_cipher(p, data)
    }

    fn victim_check(&self, shellcode: &Shellcode) -> VictimStatus {
        self.inner.victim_check(shellcode)
    }
}

#[test]
fn copied_bridge_is_ambiguous_and_resolved() {
    let inner = guest(6, Mode::Vulnerable);
    let wb = inner.whitebox();
    let (bridge, victim) = (wb.bridge_page(), wb.victim_page());
    let decoy_page = (0..PAGES).find(|&p| p != bridge && p != victim).unwrap();
    let bpa = wb.bridge_address();
    let decoy = PhysAddr::new(decoy_page * PAGE_SIZE + plan().bridge_offset).unwrap();
    let mut m = Mirror { inner, decoy };

    match find_bridge(&mut m, &plan()) {
        Err(AttackError::AmbiguousBridge(found)) => {
            let mut expect = vec![bpa, decoy];
            expect.sort();
            assert_eq!(found, expect);
        }
        other => panic!("expected ambiguity, got {other:?}"),
    }

    let report = run_attack(&mut m, &plan());
    assert_eq!(report.bridge_candidates.len(), 2);
    assert_eq!(report.bpa, Some(bpa));
    assert!(report.outcome.is_success());
}

#[derive(Debug, PartialEq)]
enum Call {
    Inject(usize),
    Read(u64, usize),
    Write(u64, usize),
    Check,
}

/// Records every attack-surface call.
struct Recorder {
    inner: GuestImage,
    calls: std::cell::RefCell<Vec<Call>>,
}

impl AttackSurface for Recorder {
    fn page_count(&self) -> u64 {
        self.inner.page_count()
    }

    fn inject(&mut self, payload: &[u8]) -> Result<(), GuestError> {
        self.calls.borrow_mut().push(Call::Inject(payload.len()));
        self.inner.inject(payload)
    }

    fn hv_read_cipher(&self, p: PhysAddr, len: usize) -> Result<Vec<u8>, GuestError> {
        self.calls.borrow_mut().push(Call::Read(p.value(), len));
        self.inner.hv_read_cipher(p, len)
    }

    fn hv_write_cipher(&mut self, p: PhysAddr, data: &[u8]) -> Result<(), GuestError> {
        self.calls
            .borrow_mut()
            .push(Call::Write(p.value(), data.len()));
        self.inner.hv_write_cipher(p, data)
    }

    fn victim_check(&self, shellcode: &Shellcode) -> VictimStatus {
        self.calls.borrow_mut().push(Call::Check);
        self.inner.victim_check(shellcode)
    }
}

#[test]
fn attack_uses_only_the_surface() {
    let mut r = Recorder {
        inner: guest(8, Mode::Vulnerable),
        calls: Default::default(),
    };
    let report = run_attack(&mut r, &plan());
    assert!(report.outcome.is_success());
    let (bpa, pcc) = (report.bpa.unwrap().value(), report.pcc.unwrap().value());
    let calls = r.calls.into_inner();

    assert_eq!(calls[0], Call::Inject(BRIDGE_LEN));
    assert_eq!(calls[1], Call::Read(0, (PAGES * PAGE_SIZE) as usize));
    let injects = calls
        .iter()
        .filter(|c| matches!(c, Call::Inject(_)))
        .count();
    assert_eq!(injects, 1 + report.cc_rounds + 1);
    let writes: Vec<_> = calls
        .iter()
        .filter(|c| matches!(c, Call::Write(..)))
        .collect();
    assert_eq!(writes, vec![&Call::Write(pcc, SHELLCODE_LEN)]);
    assert_eq!(
        &calls[calls.len() - 4..],
        &[
            Call::Inject(SHELLCODE_LEN),
            Call::Read(bpa, SHELLCODE_LEN),
            Call::Write(pcc, SHELLCODE_LEN),
            Call::Check
        ]
    );
}

#[test]
fn identical_seeds_give_identical_reports() {
    let a = run_attack(&mut guest(9, Mode::Vulnerable), &plan());
    let b = run_attack(&mut guest(9, Mode::Vulnerable), &plan());
    assert_eq!(a.to_text(false), b.to_text(false));
    assert_eq!(a.outcome, b.outcome);
    assert_eq!(
        (a.bpa, a.pcc, a.cc_rounds, a.forged),
        (b.bpa, b.pcc, b.cc_rounds, b.forged)
    );
}

#[test]
fn mitigated_guest_defeats_every_stage() {
    let mut g = guest(10, Mode::Mitigated);
    let p = plan();
    assert!(matches!(
        find_bridge(&mut g, &p),
        Err(AttackError::BridgeNotFound)
    ));
    assert_eq!(
        run_attack(&mut g, &p).outcome,
        Outcome::Failed(FailReason::BridgeNotFound)
    );

    // Even handed the true locations, the CC search and forgery fail.
    let (bpa, pcc) = (g.whitebox().bridge_address(), g.whitebox().victim_address());
    assert!(matches!(
        find_cc(&mut g, &p, bpa),
        Err(AttackError::CcNotFound { .. })
    ));
    let forged = inject_shellcode(&mut g, &p, bpa, pcc).unwrap();
    assert_eq!(forged.len(), SHELLCODE_LEN);
    assert_eq!(g.victim_check(&p.shellcode), VictimStatus::Corrupted);
}

#[test]
fn bridge_follows_server_restart() {
    let mut g = guest(11, Mode::Vulnerable);
    let first = find_bridge(&mut g, &plan()).unwrap();
    g.restart_server();
    let moved = g.whitebox().bridge_address();
    assert_ne!(moved, first);
    assert!(find_bridge_candidates(&mut g, &plan())
        .unwrap()
        .contains(&moved));
    assert!(attack::run_attack(&mut g, &plan()).outcome.is_success());
}
