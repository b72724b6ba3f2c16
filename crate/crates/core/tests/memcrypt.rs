use memtweak::memcrypt::{EncryptedMemory, Engine, EngineConfig};
use memtweak::randomness::{self, bits_of, ALPHA};
use memtweak::tweak::{PhysAddr, TweakTable, ADDRESS_LIMIT};
use memtweak::Block;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VEK: [u8; 16] = [
    0x2b, 0x7e, 0x15, 0x16, 0x28, 0xae, 0xd2, 0xa6, 0xab, 0xf7, 0x15, 0x88, 0x09, 0xcf, 0x4f, 0x3c,
];

fn vulnerable(table: TweakTable) -> Engine {
    Engine::new(EngineConfig::vulnerable(VEK, table))
}

fn mitigated() -> Engine {
    Engine::new(EngineConfig::mitigated(VEK))
}

fn block_addr(rng: &mut impl Rng) -> PhysAddr {
    PhysAddr::new(rng.gen_range(0..ADDRESS_LIMIT) & !0xf).unwrap()
}

fn distinct_pair(rng: &mut impl Rng) -> (PhysAddr, PhysAddr) {
    loop {
        let (a, b) = (block_addr(rng), block_addr(rng));
        if a != b {
            return (a, b);
        }
    }
}

#[test]
fn equal_ciphertext_criterion_both_directions() {
    let t = TweakTable::table1();
    let e = vulnerable(t.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..1000 {
        let m1 = Block(rng.gen());
        let (p1, p2) = distinct_pair(&mut rng);
        let c1 = e.encrypt_block(m1, p1).unwrap();

        // m₂ = m₁ ⊕ T(p₁⊕p₂) implies equal ciphertexts.
        let m2 = m1 ^ t.tweak_of(p1.xor(p2));
        assert_eq!(e.encrypt_block(m2, p2).unwrap(), c1);

        // Equal ciphertexts imply that relation: the only plaintext at p₂
        // producing c₁ is the decryption of c₁ there.
        assert_eq!(e.decrypt_block(c1, p2).unwrap(), m2);

        // Any other plaintext at p₂ gives a different ciphertext.
        let mut other = m2;
        other.0[rng.gen_range(0..16)] ^= 1 << rng.gen_range(0..8);
        assert_ne!(e.encrypt_block(other, p2).unwrap(), c1);
    }
}

#[test]
fn criterion_holds_for_random_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for seed in 0..20 {
        let t = TweakTable::random(seed);
        let e = vulnerable(t.clone());
        for _ in 0..50 {
            let m = Block(rng.gen());
            let (p1, p2) = distinct_pair(&mut rng);
            assert_eq!(
                e.encrypt_block(m ^ t.tweak_of(p1.xor(p2)), p2).unwrap(),
                e.encrypt_block(m, p1).unwrap()
            );
        }
    }
}

/// XOR between what the move attack predicts and what the moved block
/// actually decrypts to, for `n` random moves.
fn move_residuals(e: &Engine, n: usize, seed: u64) -> Vec<u8> {
    let t = TweakTable::table1();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(16 * n);
    for _ in 0..n {
        let m = Block(rng.gen());
        let (p1, p2) = distinct_pair(&mut rng);
        let moved = e
            .decrypt_block(e.encrypt_block(m, p1).unwrap(), p2)
            .unwrap();
        out.extend_from_slice(&(moved ^ m ^ t.tweak_of(p1.xor(p2))).0);
    }
    out
}

#[test]
fn mitigated_move_leaves_no_detectable_relation() {
    let residual = move_residuals(&mitigated(), 1000, 102);
    let bits = bits_of(&residual);
    let mono = randomness::monobit(&bits);
    let runs = randomness::runs(&bits);
    assert!(mono.passed(ALPHA), "{mono}");
    assert!(runs.passed(ALPHA), "{runs}");
    assert!(residual.chunks(16).all(|b| b.iter().any(|&x| x != 0)));
}

#[test]
fn vulnerable_move_residual_is_zero() {
    let residual = move_residuals(&vulnerable(TweakTable::table1()), 1000, 102);
    assert!(residual.iter().all(|&b| b == 0));
    assert!(!randomness::monobit(&bits_of(&residual)).passed(ALPHA));
}

#[test]
fn memory_level_collision_through_both_views() {
    let t = TweakTable::table1();
    let mut mem = EncryptedMemory::full_space(vulnerable(t.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..200 {
        let k = Block(rng.gen());
        let (p1, p2) = distinct_pair(&mut rng);
        mem.write_plain(p1, &(t.tweak_of(p1) ^ k).0).unwrap();
        mem.write_plain(p2, &(t.tweak_of(p2) ^ k).0).unwrap();
        assert_eq!(
            mem.read_cipher(p1, 16).unwrap(),
            mem.read_cipher(p2, 16).unwrap()
        );
    }
}

proptest! {
    #[test]
    fn round_trip(m: [u8; 16], block in 0u64..(ADDRESS_LIMIT >> 4), mitigate: bool) {
        let e = if mitigate { mitigated() } else { vulnerable(TweakTable::table1()) };
        let p = PhysAddr::new(block << 4).unwrap();
        let c = e.encrypt_block(Block(m), p).unwrap();
        prop_assert_eq!(e.decrypt_block(c, p).unwrap(), Block(m));
    }

    #[test]
    fn cipher_copy_is_move_attack(m: [u8; 16], a in 0u64..(1 << 26), b in 0u64..(1 << 26)) {
        prop_assume!(a != b);
        let t = TweakTable::table1();
        let mut mem = EncryptedMemory::new(vulnerable(t.clone()), 1 << 30).unwrap();
        let (p1, p2) = (PhysAddr::new(a << 4).unwrap(), PhysAddr::new(b << 4).unwrap());
        mem.write_plain(p1, &m).unwrap();
        let c = mem.read_cipher(p1, 16).unwrap();
        mem.write_cipher(p2, &c).unwrap();
        let expect = Block(m) ^ t.tweak_of(p1) ^ t.tweak_of(p2);
        prop_assert_eq!(mem.read_plain(p2, 16).unwrap(), expect.0.to_vec());
    }
}
