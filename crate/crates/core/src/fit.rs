//! Empirical split weights and the logit-normal fit of the generator.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use serde::Serialize;

use crate::address::{AddressUniverse, Family, PrefixMassTree};
use crate::error::{Error, Result};

/// Left-child mass fraction of one nonempty parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitWeight {
    /// Prefix length of the children.
    pub level: u32,
    pub parent_count: u64,
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub sigma: f64,
    pub samples: usize,
    pub level_min: u32,
    pub level_max: u32,
}

/// Child levels whose weights enter the fit by default.
pub fn default_fit_range(universe: AddressUniverse) -> RangeInclusive<u32> {
    match universe.family() {
        Family::V4 => 8..=16,
        Family::V6 => 20.min(universe.bits())..=44.min(universe.bits()),
    }
}

/// One weight per nonempty parent for every child level in `levels`.
pub fn compute_weights(tree: &PrefixMassTree, levels: RangeInclusive<u32>) -> Result<Vec<SplitWeight>> {
    let (lo, hi) = (*levels.start(), *levels.end());
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!("bad child level range {lo}..={hi}")));
    }
    tree.check_level(lo - 1)?;
    tree.check_level(hi)?;
    let mut out = Vec::new();
    for level in lo..=hi {
        let parents = tree.level(level - 1)?;
        let children = tree.level(level)?;
        let mut kids = children.iter().peekable();
        for (p, n) in parents.iter() {
            let mut left = 0;
            while let Some(&(c, k)) = kids.peek() {
                if c >> 1 != p {
                    break;
                }
                if c & 1 == 0 {
                    left = k;
                }
                kids.next();
            }
            out.push(SplitWeight {
                level,
                parent_count: n,
                w: left as f64 / n as f64,
            });
        }
    }
    Ok(out)
}

/// Drop single-address parents, move exact 0/1 weights inward by `1/(2n)`,
/// and keep only child levels in `levels`.
pub fn preprocess(weights: &[SplitWeight], levels: RangeInclusive<u32>) -> Result<Vec<SplitWeight>> {
    let cleaned: Vec<SplitWeight> = weights
        .iter()
        .filter(|sw| sw.parent_count > 1 && levels.contains(&sw.level))
        .map(|sw| {
            let nudge = 1.0 / (2.0 * sw.parent_count as f64);
            let w = if sw.w <= 0.0 {
                nudge
            } else if sw.w >= 1.0 {
                1.0 - nudge
            } else {
                sw.w
            };
            SplitWeight { w, ..*sw }
        })
        .collect();
    if cleaned.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no weights from parents with two or more addresses at child levels {}..={}",
            levels.start(),
            levels.end()
        )));
    }
    Ok(cleaned)
}

/// Zero-mean RMS of the logits of cleaned weights.
pub fn fit_sigma(cleaned: &[SplitWeight]) -> Result<FitResult> {
    if cleaned.is_empty() {
        return Err(Error::InsufficientData(String::from("no weights to fit")));
    }
    let sum_sq: f64 = cleaned
        .iter()
        .map(|sw| {
            let y = (sw.w / (1.0 - sw.w)).ln();
            y * y
        })
        .sum();
    Ok(FitResult {
        sigma: (sum_sq / cleaned.len() as f64).sqrt(),
        samples: cleaned.len(),
        level_min: cleaned.iter().map(|sw| sw.level).min().unwrap_or(0),
        level_max: cleaned.iter().map(|sw| sw.level).max().unwrap_or(0),
    })
}

/// CSV with header `level,parent_count,w`.
pub fn weights_csv(weights: &[SplitWeight]) -> String {
    let mut out = String::from("level,parent_count,w\n");
    for sw in weights {
        let _ = writeln!(out, "{},{},{}", sw.level, sw.parent_count, sw.w);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelHistogram {
    pub level: u32,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightHistogram {
    pub bins: usize,
    pub levels: Vec<LevelHistogram>,
}

impl WeightHistogram {
    /// CSV with header `level,bin_lo,bin_hi,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,bin_lo,bin_hi,count\n");
        let width = 1.0 / self.bins as f64;
        for lh in &self.levels {
            for (b, c) in lh.counts.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    lh.level,
                    b as f64 * width,
                    (b + 1) as f64 * width,
                    c
                );
            }
        }
        out
    }
}

/// Per-level histogram of weights over `bins` equal bins of `[0, 1]`.
///
/// With `mirrored`, each weight also contributes `1 - w` (the right child's
/// fraction), which makes the picture symmetric. An empty `levels` keeps every
/// level present in `weights`.
pub fn weight_histogram(
    weights: &[SplitWeight],
    bins: usize,
    levels: &[u32],
    mirrored: bool,
) -> Result<WeightHistogram> {
    if bins < 2 {
        return Err(Error::Config(format!(
            "need at least 2 histogram bins, got {bins}"
        )));
    }
    if weights.is_empty() {
        return Err(Error::InsufficientData(String::from("no weights to histogram")));
    }
    let mut wanted: Vec<u32> = if levels.is_empty() {
        weights.iter().map(|sw| sw.level).collect()
    } else {
        levels.to_vec()
    };
    wanted.sort_unstable();
    wanted.dedup();
    let bin_of = |w: f64| ((w * bins as f64) as usize).min(bins - 1);
    let levels = wanted
        .into_iter()
        .map(|level| {
            let mut counts = vec![0u64; bins];
            for sw in weights.iter().filter(|sw| sw.level == level) {
                counts[bin_of(sw.w)] += 1;
                if mirrored {
                    counts[bin_of(1.0 - sw.w)] += 1;
                }
            }
            LevelHistogram { level, counts }
        })
        .collect();
    Ok(WeightHistogram { bins, levels })
}
