//! Simulator of physical-address-tweaked memory encryption (SME/SEV style)
//! and the toolkit that breaks it.
//!
//! * [`memcrypt`] models the encryption engine and the two C-bit views of
//!   physical memory, in a vulnerable (tweak XORed into the plaintext) and a
//!   mitigated (address-derived key) flavor.
//! * [`tweak`] holds the linear tweak function and its measured parameters.
//! * [`recovery`] rediscovers those parameters from plaintext/ciphertext
//!   access alone, using [`gf2`] elimination and [`randomness`] tests.
//! * [`guest`] simulates an encrypted VM and [`attack`] injects code into it
//!   from the hypervisor side.

pub mod attack;
pub mod block;
pub mod gf2;
pub mod guest;
pub mod kdf;
pub mod memcrypt;
pub mod randomness;
pub mod recovery;
pub mod scenario;
pub mod tweak;

pub use attack::{run_attack, AttackError, AttackPlan, AttackReport, Outcome};
pub use block::{BitVec128, Block, BLOCK_SIZE};
pub use gf2::{Coeffs, Gf2Error, Gf2System};
pub use guest::{AttackSurface, GuestConfig, GuestError, GuestImage, Shellcode, VictimStatus};
pub use memcrypt::{EncryptedMemory, Engine, EngineConfig, MemError, Mode};
pub use recovery::{recover_tweak, RecoveryError, SampleSet};
pub use scenario::Scenario;
pub use tweak::{PhysAddr, TweakError, TweakTable};
