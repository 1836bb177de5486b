//! Chroma residuals beyond the 511-symbol alphabet.
//!
//! Co/Cg residuals span `[-510, 510]`. The main stream carries them clamped
//! to `[-255, 255]`, so a main symbol of ±255 is ambiguous: it is either the
//! real value or an escape. For every boundary symbol, in point order, the
//! side stream holds the exact residual; it is coded as the excess
//! `|r| - 255`, which is 0 for genuine boundary values.

use super::rle::{run_length_decode, run_length_encode};
use crate::error::{corrupt, Result};

/// Largest magnitude the main alphabet represents.
pub const MAIN_LIMIT: i32 = 255;

/// Clamped main-stream residuals and the exact values of boundary symbols.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OverflowSplit {
    pub clamped: Vec<i32>,
    pub side: Vec<i32>,
}

pub fn encode_overflow(residuals: &[i32]) -> OverflowSplit {
    let mut split = OverflowSplit::default();
    for &r in residuals {
        let c = r.clamp(-MAIN_LIMIT, MAIN_LIMIT);
        if c.abs() == MAIN_LIMIT {
            split.side.push(r);
        }
        split.clamped.push(c);
    }
    split
}

/// Restores exact residuals from a main stream and its side values.
pub fn decode_overflow(clamped: &[i32], side: &[i32]) -> Result<Vec<i32>> {
    let mut it = side.iter();
    let out = clamped
        .iter()
        .map(|&c| {
            if c.abs() != MAIN_LIMIT {
                return Ok(c);
            }
            let &r = it.next().ok_or_else(|| corrupt("overflow stream too short"))?;
            if r.signum() != c.signum() || r.abs() < MAIN_LIMIT {
                return Err(corrupt("overflow value disagrees with its escape symbol"));
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    if it.next().is_some() {
        return Err(corrupt("overflow stream too long"));
    }
    Ok(out)
}

/// Run-length codes the side values as excesses over 255. Empty input
/// gives an empty stream.
pub fn encode_side_stream(side: &[i32]) -> Vec<u8> {
    if side.is_empty() {
        return Vec::new();
    }
    let excess: Vec<i64> = side.iter().map(|&r| i64::from(r.abs() - MAIN_LIMIT)).collect();
    run_length_encode(&excess)
}

/// Decodes `count` excesses and re-attaches the signs of the escape
/// symbols they belong to (`signs[i]` is +1 or -1).
pub fn decode_side_stream(bytes: &[u8], signs: &[i32]) -> Result<Vec<i32>> {
    if signs.is_empty() {
        if !bytes.is_empty() {
            return Err(corrupt("overflow stream present without escape symbols"));
        }
        return Ok(Vec::new());
    }
    let excess = run_length_decode(bytes, signs.len())?;
    if excess.len() != signs.len() {
        return Err(corrupt("overflow stream length mismatch"));
    }
    excess
        .iter()
        .zip(signs)
        .map(|(&e, &s)| {
            if !(0..=i64::from(MAIN_LIMIT)).contains(&e) {
                return Err(corrupt("overflow excess out of range"));
            }
            Ok(s * (MAIN_LIMIT + e as i32))
        })
        .collect()
}
