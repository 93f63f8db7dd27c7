//! Token-ID sequences: seeded synthetic prompts and the text file format
//! (whitespace-separated integers, one sequence per line).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `count` sequences of `len` tokens drawn uniformly from `0..vocab`.
pub fn synthetic_sequences(count: usize, len: usize, vocab: usize, seed: u64) -> Result<Vec<Vec<u32>>> {
    if vocab == 0 || vocab > u32::MAX as usize {
        return Err(Error::Input(format!("vocabulary size {vocab} out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| (0..len).map(|_| rng.random_range(0..vocab as u32)).collect())
        .collect())
}

pub fn parse_token_file(text: &str) -> Result<Vec<Vec<u32>>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let seq = line
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>().map_err(|_| {
                    Error::Input(format!("line {}: `{t}` is not a token id", lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(seq);
    }
    if out.is_empty() {
        return Err(Error::Input("token file holds no sequences".into()));
    }
    Ok(out)
}

pub fn format_token_file(seqs: &[Vec<u32>]) -> String {
    let mut s = String::new();
    for seq in seqs {
        let line: Vec<String> = seq.iter().map(u32::to_string).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn load_token_file(path: impl AsRef<Path>) -> Result<Vec<Vec<u32>>> {
    parse_token_file(&std::fs::read_to_string(path)?)
}

/// Fails if any id is outside `0..vocab`.
pub fn check_vocab(seqs: &[Vec<u32>], vocab: usize) -> Result<()> {
    for (i, seq) in seqs.iter().enumerate() {
        if let Some(&t) = seq.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::Input(format!(
                "sequence {i}: token id {t} outside vocabulary of {vocab}"
            )));
        }
    }
    Ok(())
}
