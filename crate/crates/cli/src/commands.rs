use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use memtweak::attack::{self, AttackError, AttackPlan};
use memtweak::guest::{AttackSurface, GuestConfig, GuestImage, SHELLCODE_LEN};
use memtweak::memcrypt::{hex_dump, EncryptedMemory, Engine, EngineConfig, Mode};
use memtweak::recovery::{self, RecoveryReport, RecoveryVerdict, PROBE_CIPHERTEXT};
use memtweak::tweak::{PhysAddr, TweakTable, ADDRESS_LIMIT};
use memtweak::Scenario;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::{ProbeArgs, RecoverArgs, RunArgs};

/// Report text plus whether the run achieved its goal.
pub struct Outcome {
    pub report: String,
    pub success: bool,
}

// Stream separation for runs that are not guest scenarios.
const VEK_STREAM: u64 = 0x7665_6b00;
const ADDR_STREAM: u64 = 0x6164_6472;

fn engine_key(seed: u64) -> [u8; 16] {
    let mut vek = [0u8; 16];
    ChaCha8Rng::seed_from_u64(seed ^ VEK_STREAM).fill_bytes(&mut vek);
    vek
}

fn engine_for(mode: Mode, seed: u64, table: TweakTable) -> Engine {
    let vek = engine_key(seed);
    Engine::new(match mode {
        Mode::Vulnerable => EngineConfig::vulnerable(vek, table),
        Mode::Mitigated => EngineConfig::mitigated(vek),
    })
}

fn load_table(path: Option<&Path>) -> Result<TweakTable> {
    match path {
        Some(p) => TweakTable::load(p).with_context(|| format!("reading table {}", p.display())),
        None => Ok(TweakTable::table1()),
    }
}

fn base_scenario(args: &RunArgs) -> Result<Scenario> {
    let mut s = match &args.scenario {
        Some(p) => {
            Scenario::load(p).with_context(|| format!("reading scenario {}", p.display()))?
        }
        None => Scenario::default(),
    };
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(pages) = args.pages {
        s.page_count = pages;
    }
    if let Some(mode) = args.mode {
        s.mode = mode;
    }
    Ok(s)
}

fn header(command: &str, s: &Scenario) -> String {
    format!(
        "command={command}\nseed={}\npages={}\nmode={}\n",
        s.seed, s.page_count, s.mode
    )
}

fn guest_for(s: &Scenario) -> Result<GuestImage> {
    GuestImage::new(GuestConfig::from(s)).context("building guest")
}

/// Runs `stage` over every trial and aggregates.
fn per_trial(
    command: &str,
    args: &RunArgs,
    mut stage: impl FnMut(&Scenario, &AttackPlan) -> Result<Outcome>,
) -> Result<Outcome> {
    let base = base_scenario(args)?;
    let table = load_table(args.table.as_deref())?;
    let mut report = String::new();
    let mut successes = 0;
    for trial in 0..args.trials {
        let mut s = base.clone();
        s.seed = base.seed.wrapping_add(trial);
        let plan = AttackPlan::from_scenario(&s, table.clone());
        let out = stage(&s, &plan)?;
        if args.trials > 1 {
            let _ = writeln!(report, "[trial {trial}]");
        }
        report.push_str(&header(command, &s));
        report.push_str(&out.report);
        successes += usize::from(out.success);
    }
    let trials = args.trials as usize;
    if trials > 1 {
        let _ = writeln!(report, "[summary]\ntrials={trials}\nsuccesses={successes}");
    }
    Ok(Outcome {
        report,
        success: successes == trials,
    })
}

pub fn attack(args: &RunArgs) -> Result<Outcome> {
    per_trial("attack", args, |s, plan| {
        let mut guest = guest_for(s)?;
        let report = attack::run_attack(&mut guest, plan);
        Ok(Outcome {
            success: report.outcome.is_success(),
            report: report.to_text(args.timings),
        })
    })
}

pub fn find_bridge(args: &RunArgs) -> Result<Outcome> {
    per_trial("find-bridge", args, |s, plan| {
        let mut guest = guest_for(s)?;
        let found = attack::find_bridge_candidates(&mut guest, plan)?;
        let mut r = String::new();
        let _ = writeln!(r, "bridge_candidates={}", found.len());
        for a in &found {
            let _ = writeln!(r, "bpa={a}");
        }
        Ok(Outcome {
            success: found.len() == 1,
            report: r,
        })
    })
}

pub fn find_cc(args: &RunArgs) -> Result<Outcome> {
    per_trial("find-cc", args, |s, plan| {
        let mut guest = guest_for(s)?;
        let mut r = String::new();
        let bpa = match attack::find_bridge(&mut guest, plan) {
            Ok(bpa) => bpa,
            Err(e) => {
                let _ = writeln!(r, "error={e}");
                return Ok(Outcome {
                    report: r,
                    success: false,
                });
            }
        };
        let _ = writeln!(r, "bpa={bpa}");
        let success = match attack::find_cc(&mut guest, plan, bpa) {
            Ok(m) => {
                let _ = writeln!(r, "pcc={}\ncc_rounds={}", m.pcc, m.rounds);
                true
            }
            Err(AttackError::CcNotFound { rounds }) => {
                let _ = writeln!(r, "pcc=none\ncc_rounds={rounds}");
                false
            }
            Err(e) => return Err(e.into()),
        };
        Ok(Outcome { report: r, success })
    })
}

pub fn inject(args: &RunArgs) -> Result<Outcome> {
    per_trial("inject", args, |s, plan| {
        let mut guest = guest_for(s)?;
        let mut r = String::new();
        let located = attack::find_bridge(&mut guest, plan)
            .and_then(|bpa| attack::find_cc(&mut guest, plan, bpa).map(|m| (bpa, m.pcc)));
        let (bpa, pcc) = match located {
            Ok(found) => found,
            Err(e) => {
                let _ = writeln!(r, "error={e}");
                return Ok(Outcome {
                    report: r,
                    success: false,
                });
            }
        };
        let before = guest.hv_read_cipher(pcc, SHELLCODE_LEN)?;
        let payload = attack::shellcode_payload(&plan.table, &plan.shellcode, bpa, pcc)?;
        let forged = attack::inject_shellcode(&mut guest, plan, bpa, pcc)?;
        let status = guest.victim_check(&plan.shellcode);

        let _ = writeln!(r, "bpa={bpa}\npcc={pcc}\nvictim={status}");
        let _ = writeln!(r, "# plaintext sent to the Bridge");
        r.push_str(&hex_dump(bpa.value(), &payload));
        let _ = writeln!(r, "# victim ciphertext before");
        r.push_str(&hex_dump(pcc.value(), &before));
        let _ = writeln!(r, "# victim ciphertext after");
        r.push_str(&hex_dump(pcc.value(), &forged));
        Ok(Outcome {
            report: r,
            success: status == memtweak::VictimStatus::ShellcodeActive,
        })
    })
}

fn random_pair(rng: &mut ChaCha8Rng) -> (PhysAddr, PhysAddr) {
    loop {
        let a = rng.gen_range(0..ADDRESS_LIMIT) & !0xf;
        let b = rng.gen_range(0..ADDRESS_LIMIT) & !0xf;
        if a != b {
            return (PhysAddr::new(a).unwrap(), PhysAddr::new(b).unwrap());
        }
    }
}

pub fn demo_mitigated(args: &RunArgs) -> Result<Outcome> {
    let mut base = base_scenario(args)?;
    base.mode = Mode::Mitigated;
    let table = load_table(args.table.as_deref())?;
    let mut r = String::new();
    let _ = write!(r, "{}", header("demo-mitigated", &base));

    // Equal-ciphertext relation.
    let engine = engine_for(Mode::Mitigated, base.seed, TweakTable::table1());
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed ^ ADDR_STREAM);
    let trials = 1000;
    let mut holds = 0;
    for _ in 0..trials {
        let m = memtweak::Block(rng.gen());
        let (p1, p2) = random_pair(&mut rng);
        let forged = engine.encrypt_block(m ^ table.tweak_of(p1.xor(p2)), p2)?;
        holds += usize::from(forged == engine.encrypt_block(m, p1)?);
    }
    let _ = writeln!(
        r,
        "equal_cipher_trials={trials}\nequal_cipher_holds={holds}"
    );

    // Tweak recovery.
    let mut mem = EncryptedMemory::full_space(engine);
    let addrs =
        recovery::random_block_addresses(&mut rng, recovery::DEFAULT_SAMPLES, 0..ADDRESS_LIMIT)?;
    let set = recovery::collect_equal_cipher_samples(&mut mem, &addrs, PROBE_CIPHERTEXT)?;
    let rec = RecoveryReport::from_samples(&set);
    let _ = writeln!(
        r,
        "recovery_verdict={}\nrecovery_rank={}",
        rec.verdict, rec.rank
    );

    // Attack.
    let plan = AttackPlan::from_scenario(&base, table);
    let mut guest = guest_for(&base)?;
    let report = attack::run_attack(&mut guest, &plan);
    let _ = writeln!(r, "attack_outcome={}", report.outcome);

    let held =
        holds == 0 && rec.verdict != RecoveryVerdict::Recovered && !report.outcome.is_success();
    let _ = writeln!(r, "mitigation_holds={held}");
    Ok(Outcome {
        report: r,
        success: held,
    })
}

pub fn probe_randomness(args: &ProbeArgs) -> Result<Outcome> {
    let p = PhysAddr::new(args.address)?;
    let mut mem =
        EncryptedMemory::full_space(engine_for(args.mode, args.seed, TweakTable::table1()));
    let probe = recovery::probe_mode(&mut mem, p, args.blocks)?;

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ ADDR_STREAM);
    let addrs = recovery::random_block_addresses(&mut rng, args.samples, 0..ADDRESS_LIMIT)?;
    let set = recovery::collect_equal_cipher_samples(&mut mem, &addrs, PROBE_CIPHERTEXT)?;
    let rec = RecoveryReport::from_samples(&set);

    let mut r = format!(
        "command=probe-randomness\nseed={}\nmode={}\n",
        args.seed, args.mode
    );
    r.push_str(&probe.to_text());
    let _ = writeln!(r, "equal_cipher_samples={}", set.len());
    let _ = writeln!(r, "equal_cipher_rank={}", rec.rank);
    let _ = writeln!(
        r,
        "equal_cipher_plaintexts_linear={}",
        rec.verdict == RecoveryVerdict::Recovered
    );
    Ok(Outcome {
        success: probe.verdict == recovery::ModeVerdict::EcbLike,
        report: r,
    })
}

pub fn recover_tweak(args: &RecoverArgs) -> Result<Outcome> {
    let truth = if args.random_table {
        TweakTable::random(args.seed)
    } else {
        load_table(args.table.as_deref())?
    };
    let mut mem = EncryptedMemory::full_space(engine_for(args.mode, args.seed, truth.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ ADDR_STREAM);
    let addrs = recovery::random_block_addresses(&mut rng, args.samples, 0..ADDRESS_LIMIT)?;
    let set = recovery::collect_equal_cipher_samples(&mut mem, &addrs, PROBE_CIPHERTEXT)?;
    let rec = RecoveryReport::from_samples(&set);

    let mut r = format!(
        "command=recover-tweak\nseed={}\nmode={}\n",
        args.seed, args.mode
    );
    r.push_str(&rec.to_text());
    let matches = rec.table.as_ref() == Some(&truth);
    if args.mode == Mode::Vulnerable {
        let _ = writeln!(r, "matches_ground_truth={matches}");
    }

    if let Some(path) = &args.truth_out {
        truth
            .save(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let (Some(path), Some(table)) = (&args.table_out, &rec.table) {
        table
            .save(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(Outcome {
        report: r,
        success: rec.verdict == RecoveryVerdict::Recovered,
    })
}
