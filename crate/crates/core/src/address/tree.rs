use std::fmt::Write as _;

use super::{shr, AddressSet, AddressUniverse, Family, Prefix};
use crate::error::{Error, Result};

/// Nonzero prefix counts at one level, sorted by prefix index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LevelCounts {
    entries: Vec<(u128, u64)>,
}

impl LevelCounts {
    pub fn from_sorted(entries: Vec<(u128, u64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        debug_assert!(entries.iter().all(|&(_, c)| c > 0));
        LevelCounts { entries }
    }

    pub fn get(&self, index: u128) -> u64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|k| self.entries[k].1)
            .unwrap_or(0)
    }

    pub fn entries(&self) -> &[(u128, u64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (u128, u64)> + '_ {
        self.entries.iter().copied()
    }

    /// Number of nonempty prefixes.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c).sum()
    }
}

/// Per-level prefix counts of an address set: the discrete cascade measure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixMassTree {
    universe: AddressUniverse,
    min_level: u32,
    levels: Vec<LevelCounts>,
}

impl PrefixMassTree {
    pub fn universe(&self) -> AddressUniverse {
        self.universe
    }

    pub fn min_level(&self) -> u32 {
        self.min_level
    }

    pub fn max_level(&self) -> u32 {
        self.min_level + self.levels.len() as u32 - 1
    }

    pub fn covers(&self, level: u32) -> bool {
        (self.min_level..=self.max_level()).contains(&level)
    }

    pub fn check_level(&self, level: u32) -> Result<()> {
        if self.covers(level) {
            Ok(())
        } else {
            Err(Error::LevelOutOfRange {
                level,
                min: self.min_level,
                max: self.max_level(),
            })
        }
    }

    pub fn level(&self, level: u32) -> Result<&LevelCounts> {
        self.check_level(level)?;
        Ok(&self.levels[(level - self.min_level) as usize])
    }

    pub fn count(&self, prefix: &Prefix) -> u64 {
        match self.level(prefix.len()) {
            Ok(lc) => lc.get(prefix.index()),
            Err(_) => 0,
        }
    }

    /// Total mass (identical at every level).
    pub fn total(&self) -> u64 {
        self.levels[0].total()
    }

    /// Build from sorted, distinct address values.
    pub fn from_sorted_values(
        universe: AddressUniverse,
        values: &[u128],
        min_level: u32,
        max_level: u32,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySet);
        }
        if min_level > max_level || max_level > universe.bits() {
            return Err(Error::LevelOutOfRange {
                level: max_level,
                min: min_level,
                max: universe.bits(),
            });
        }
        let levels = (min_level..=max_level)
            .map(|l| {
                let shift = universe.bits() - l;
                let mut entries: Vec<(u128, u64)> = Vec::new();
                for &v in values {
                    let idx = shr(v, shift);
                    match entries.last_mut() {
                        Some((last, c)) if *last == idx => *c += 1,
                        _ => entries.push((idx, 1)),
                    }
                }
                LevelCounts { entries }
            })
            .collect();
        Ok(PrefixMassTree {
            universe,
            min_level,
            levels,
        })
    }

    /// Tree with every mass multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> PrefixMassTree {
        let levels = self
            .levels
            .iter()
            .map(|lc| LevelCounts {
                entries: lc.entries.iter().map(|&(i, c)| (i, c * factor)).collect(),
            })
            .collect();
        PrefixMassTree {
            universe: self.universe,
            min_level: self.min_level,
            levels,
        }
    }

    /// Check that every parent's count equals the sum of its children.
    pub fn is_conservative(&self) -> bool {
        self.levels.windows(2).all(|w| {
            let (parents, children) = (&w[0], &w[1]);
            let mut rebuilt: Vec<(u128, u64)> = Vec::with_capacity(parents.len());
            for (idx, c) in children.iter() {
                match rebuilt.last_mut() {
                    Some((last, n)) if *last == idx >> 1 => *n += c,
                    _ => rebuilt.push((idx >> 1, c)),
                }
            }
            rebuilt == parents.entries
        })
    }
}

/// Count addresses per prefix for every level in `min_level..=max_level`.
pub fn build_mass_tree(set: &AddressSet, min_level: u32, max_level: u32) -> Result<PrefixMassTree> {
    PrefixMassTree::from_sorted_values(set.universe(), set.values(), min_level, max_level)
}

/// Sibling histogram around a target address at one zoom level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoomLevel {
    pub level: u32,
    pub ancestor: Prefix,
    /// Every sub-prefix of `ancestor` at the sub-resolution, zeros included.
    pub bins: Vec<(Prefix, u64)>,
}

/// Default zoom sub-resolution in bits.
pub const DEFAULT_ZOOM_BITS: u32 = 4;

/// For each level, the counts of the sub-prefixes `sub_bits` deeper inside
/// the target's ancestor at that level.
pub fn zoom_path(
    tree: &PrefixMassTree,
    target: u128,
    levels: &[u32],
    sub_bits: u32,
) -> Result<Vec<ZoomLevel>> {
    let universe = tree.universe();
    if !universe.contains(target) {
        return Err(Error::InvalidUniverse(format!(
            "target {target:#x} lies outside the universe"
        )));
    }
    if sub_bits == 0 || sub_bits > 20 {
        return Err(Error::Config(format!(
            "zoom sub-resolution must lie in 1..=20 bits, got {sub_bits}"
        )));
    }
    levels
        .iter()
        .map(|&level| {
            tree.check_level(level)?;
            let sub = (level + sub_bits).min(universe.bits());
            let counts = tree.level(sub)?;
            let ancestor = Prefix::of_value(target, level, universe);
            let width = sub - level;
            let base = ancestor.index() << width;
            let bins = (0..(1u128 << width))
                .map(|k| {
                    let idx = base | k;
                    (Prefix::new(idx, sub).expect("sub-prefix fits"), counts.get(idx))
                })
                .collect();
            Ok(ZoomLevel {
                level,
                ancestor,
                bins,
            })
        })
        .collect()
}

/// CSV with header `level,bin_prefix,count`.
pub fn zoom_csv(zoom: &[ZoomLevel], family: Family) -> String {
    let mut out = String::from("level,bin_prefix,count\n");
    for z in zoom {
        for (p, c) in &z.bins {
            let _ = writeln!(out, "{},{},{}", z.level, p.display(family), c);
        }
    }
    out
}
