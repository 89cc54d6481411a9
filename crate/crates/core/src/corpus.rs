//! Reference machines with independent semantics oracles.

use crate::machine::TmSpec;

pub const PARITY_SRC: &str = include_str!("../machines/parity.json");
pub const PALINDROME_SRC: &str = include_str!("../machines/palindrome.json");
pub const BINARY_INCREMENT_SRC: &str = include_str!("../machines/binary_increment.json");
pub const COPY_COMPARE_SRC: &str = include_str!("../machines/copy_compare.json");
pub const MINIMAL_SRC: &str = include_str!("../machines/minimal.json");
pub const BOUNCE_SRC: &str = include_str!("../machines/bounce.json");

fn load(src: &str) -> TmSpec {
    TmSpec::from_json(src).expect("bundled machine is valid")
}

/// Odd number of ones.
pub fn parity() -> TmSpec {
    load(PARITY_SRC)
}

pub fn palindrome() -> TmSpec {
    load(PALINDROME_SRC)
}

/// Increments the MSB-first input in place and answers the carry-out.
pub fn binary_increment() -> TmSpec {
    load(BINARY_INCREMENT_SRC)
}

/// Accepts squares `ww`: marks both halves from the ends inward, then
/// carries first-half symbols across to compare them with the second half.
pub fn copy_compare() -> TmSpec {
    load(COPY_COMPARE_SRC)
}

/// Halts on the forced first move; the answer is whatever sits in cell 2.
pub fn minimal() -> TmSpec {
    load(MINIMAL_SRC)
}

/// Sweeps between `>` and the first blank forever.
pub fn bounce() -> TmSpec {
    load(BOUNCE_SRC)
}

pub fn parity_oracle(x: &str) -> Option<u8> {
    Some((x.chars().filter(|&c| c == '1').count() % 2) as u8)
}

pub fn palindrome_oracle(x: &str) -> Option<u8> {
    Some(u8::from(x.chars().rev().eq(x.chars())))
}

pub fn binary_increment_oracle(x: &str) -> Option<u8> {
    Some(u8::from(x.chars().all(|c| c == '1')))
}

pub fn copy_compare_oracle(x: &str) -> Option<u8> {
    let n = x.len();
    Some(u8::from(n.is_multiple_of(2) && x[..n / 2] == x[n / 2..]))
}

pub fn minimal_oracle(x: &str) -> Option<u8> {
    x.chars().next().map(|c| if c == '1' { 1 } else { 0 })
}

/// `s(n) = n + 2`: `>`, the input, and one blank probed past its end.
pub fn linear_space(n: usize) -> usize {
    n + 2
}

/// A named machine with its declared space bound and reference semantics.
#[derive(Clone)]
pub struct CorpusEntry {
    pub name: &'static str,
    pub tm: TmSpec,
    pub space: fn(usize) -> usize,
    pub oracle: fn(&str) -> Option<u8>,
}

impl std::fmt::Debug for CorpusEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CorpusEntry")
            .field("name", &self.name)
            .finish()
    }
}

impl CorpusEntry {
    fn new(name: &'static str, tm: TmSpec, oracle: fn(&str) -> Option<u8>) -> Self {
        CorpusEntry {
            name,
            tm,
            space: linear_space,
            oracle,
        }
    }
}

/// The four differential-suite machines.
pub fn corpus() -> Vec<CorpusEntry> {
    ["parity", "palindrome", "binary-increment", "copy-compare"]
        .into_iter()
        .map(|n| entry(n).expect("known corpus name"))
        .collect()
}

/// Looks up a corpus machine (plus the `minimal` fixture) by name.
pub fn entry(name: &str) -> Option<CorpusEntry> {
    Some(match name {
        "parity" => CorpusEntry::new("parity", parity(), parity_oracle),
        "palindrome" => CorpusEntry::new("palindrome", palindrome(), palindrome_oracle),
        "binary-increment" => CorpusEntry::new(
            "binary-increment",
            binary_increment(),
            binary_increment_oracle,
        ),
        "copy-compare" => CorpusEntry::new("copy-compare", copy_compare(), copy_compare_oracle),
        "minimal" => CorpusEntry::new("minimal", minimal(), minimal_oracle),
        _ => return None,
    })
}

/// Every bit string of length `0..=max_len`, shortest first, then
/// lexicographic.
pub fn inputs_up_to(max_len: usize) -> Vec<String> {
    let mut out = Vec::new();
    for n in 0..=max_len {
        for v in 0..(1u64 << n) {
            out.push(
                (0..n)
                    .map(|k| if v >> (n - 1 - k) & 1 == 1 { '1' } else { '0' })
                    .collect(),
            );
        }
    }
    out
}
