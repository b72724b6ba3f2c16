//! Counter-mode key derivation (NIST SP 800-108) with AES-CMAC as PRF.
//!
//! Each PRF input is `[i]₃₂ ‖ Label ‖ 0x00 ‖ Context ‖ [L]₃₂`, with the
//! counter and the output length in bits encoded big-endian.

use aes::Aes128;
use cmac::{Cmac, Mac};

pub struct CounterKdf {
    mac: Cmac<Aes128>,
}

impl CounterKdf {
    pub fn new(key: &[u8; 16]) -> Self {
        CounterKdf {
            mac: <Cmac<Aes128> as Mac>::new(key.into()),
        }
    }

    /// Fills `out` with key material bound to `label` and `context`.
    pub fn derive_into(&self, label: &[u8], context: &[u8], out: &mut [u8]) {
        let length_bits = u32::try_from(out.len() * 8).expect("output length fits in 32 bits");
        for (i, chunk) in out.chunks_mut(16).enumerate() {
            let counter = u32::try_from(i + 1).expect("counter fits in 32 bits");
            let mut mac = self.mac.clone();
            mac.update(&counter.to_be_bytes());
            mac.update(label);
            mac.update(&[0x00]);
            mac.update(context);
            mac.update(&length_bits.to_be_bytes());
            let block = mac.finalize().into_bytes();
            chunk.copy_from_slice(&block[..chunk.len()]);
        }
    }

    pub fn derive_key128(&self, label: &[u8], context: &[u8]) -> [u8; 16] {
        let mut out = [0u8; 16];
        self.derive_into(label, context, &mut out);
        out
    }
}

impl Clone for CounterKdf {
    fn clone(&self) -> Self {
        CounterKdf {
            mac: self.mac.clone(),
        }
    }
}
