//! Frequency, block-frequency and runs tests from the NIST SP 800-22 battery.

use std::fmt;

use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

/// Significance level used for pass/fail verdicts.
pub const ALPHA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub name: &'static str,
    pub statistic: f64,
    pub p_value: f64,
}

impl TestResult {
    pub fn passed(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

impl fmt::Display for TestResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} p={:.6}", self.name, self.p_value)
    }
}

/// Bits of `bytes`, most significant bit of each byte first.
pub fn bits_of(bytes: &[u8]) -> Vec<bool> {
    bytes
        .iter()
        .flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1 == 1))
        .collect()
}

/// Parses a `0`/`1` string; any other character is skipped.
pub fn bits_from_ascii(s: &str) -> Vec<bool> {
    s.chars()
        .filter_map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        })
        .collect()
}

fn ones(bits: &[bool]) -> usize {
    bits.iter().filter(|&&b| b).count()
}

pub fn monobit(bits: &[bool]) -> TestResult {
    let n = bits.len() as f64;
    let sum = 2.0 * ones(bits) as f64 - n;
    let s_obs = sum.abs() / n.sqrt();
    TestResult {
        name: "monobit",
        statistic: s_obs,
        p_value: erfc(s_obs / std::f64::consts::SQRT_2),
    }
}

/// Smallest block length meeting the M ≥ 20, M > 0.01·n, N < 100 guidance.
pub fn recommended_block_len(n: usize) -> usize {
    let by_count = n / 99 + 1;
    let by_fraction = n / 100 + 1;
    20.max(by_count).max(by_fraction)
}

/// Block-frequency test with block length `m`; a trailing partial block is dropped.
pub fn block_frequency(bits: &[bool], m: usize) -> TestResult {
    assert!(m > 0, "block length must be positive");
    let blocks = bits.len() / m;
    let chi_sq: f64 = bits
        .chunks_exact(m)
        .map(|chunk| {
            let pi = ones(chunk) as f64 / m as f64;
            (pi - 0.5).powi(2)
        })
        .sum::<f64>()
        * 4.0
        * m as f64;
    let p_value = if blocks == 0 {
        0.0
    } else {
        gamma_ur(blocks as f64 / 2.0, chi_sq / 2.0)
    };
    TestResult {
        name: "block-frequency",
        statistic: chi_sq,
        p_value,
    }
}

/// Runs test. Fails outright (p = 0) when the frequency prerequisite is not met.
pub fn runs(bits: &[bool]) -> TestResult {
    let n = bits.len() as f64;
    let pi = ones(bits) as f64 / n;
    let tau = 2.0 / n.sqrt();
    if (pi - 0.5).abs() >= tau {
        return TestResult {
            name: "runs",
            statistic: f64::NAN,
            p_value: 0.0,
        };
    }
    let v_obs = 1 + bits.windows(2).filter(|w| w[0] != w[1]).count();
    let v_obs = v_obs as f64;
    let spread = 2.0 * n * pi * (1.0 - pi);
    let p_value = erfc((v_obs - spread).abs() / (2.0 * (2.0 * n).sqrt() * pi * (1.0 - pi)));
    TestResult {
        name: "runs",
        statistic: v_obs,
        p_value,
    }
}

/// The three tests over one byte stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Battery {
    pub bits: usize,
    pub results: Vec<TestResult>,
}

impl Battery {
    pub fn run(bytes: &[u8]) -> Self {
        let bits = bits_of(bytes);
        let m = recommended_block_len(bits.len());
        Battery {
            bits: bits.len(),
            results: vec![monobit(&bits), block_frequency(&bits, m), runs(&bits)],
        }
    }

    pub fn passed(&self, alpha: f64) -> bool {
        self.results.iter().all(|r| r.passed(alpha))
    }

    pub fn get(&self, name: &str) -> Option<&TestResult> {
        self.results.iter().find(|r| r.name == name)
    }
}
