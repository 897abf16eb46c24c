//! Method-of-moments estimation of the structure function.
//!
//! The two-level estimator compares partition sums over prefixes with at
//! least two addresses at length `l` against the sums over their children at
//! `l + 1`, which keeps `τ̃(1) = 0` exactly. Per-level estimates are averaged
//! over an analysis band.

use std::f64::consts::LN_2;
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use serde::Serialize;

use crate::address::{AddressUniverse, Family, PrefixMassTree};
use crate::cascade::CriticalRange;
use crate::error::{Error, Result};

/// Tolerance for matching a requested `q` against grid points.
const Q_EPS: f64 = 1e-9;

/// `lo, lo + step, ...` up to and including `hi`, with values rounded so that
/// grid points compare exactly.
pub fn q_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || step <= 0.0 || hi < lo {
        return Err(Error::Config(format!("bad q grid {lo}:{hi}:{step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((lo + step * i as f64) * 1e9).round() / 1e9)
        .collect())
}

pub fn default_q_grid() -> Vec<f64> {
    q_grid(-2.0, 4.0, 0.25).expect("default grid is valid")
}

/// Parent levels of the default analysis band.
pub fn default_levels(universe: AddressUniverse) -> RangeInclusive<u32> {
    match universe.family() {
        Family::V4 => 8..=16,
        Family::V6 => 20.min(universe.bits() - 1)..=44.min(universe.bits() - 1),
    }
}

pub(crate) fn find_q(qs: &[f64], q: f64) -> Result<usize> {
    qs.iter()
        .position(|&x| (x - q).abs() < Q_EPS)
        .ok_or(Error::MissingQ(q))
}

/// Neumaier-compensated sum. Supports removal so running totals can be
/// updated in place.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `c^q` for integer counts, tabulated for small counts.
#[derive(Clone)]
pub(crate) struct PowTable {
    q: f64,
    table: Vec<f64>,
}

impl PowTable {
    const SIZE: usize = 4096;

    pub(crate) fn new(q: f64) -> Self {
        let table = (0..Self::SIZE).map(|c| (c as f64).powf(q)).collect();
        PowTable { q, table }
    }

    pub(crate) fn pow(&self, c: u64) -> f64 {
        match self.table.get(c as usize) {
            Some(&v) => v,
            None => (c as f64).powf(self.q),
        }
    }
}

/// Running sums behind one level's estimate at one `q`.
///
/// For each retained parent `p`, `A_p = c_p^q` and `B_p` is the sum of
/// `c^q` over its nonempty children.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LevelMoments {
    pub parents: u64,
    pub a: CompensatedSum,
    pub b: CompensatedSum,
    pub aa: CompensatedSum,
    pub ab: CompensatedSum,
    pub bb: CompensatedSum,
}

impl LevelMoments {
    pub fn add(&mut self, a: f64, b: f64) {
        self.parents += 1;
        self.a.add(a);
        self.b.add(b);
        self.aa.add(a * a);
        self.ab.add(a * b);
        self.bb.add(b * b);
    }

    pub fn remove(&mut self, a: f64, b: f64) {
        self.parents -= 1;
        self.a.add(-a);
        self.b.add(-b);
        self.aa.add(-a * a);
        self.ab.add(-a * b);
        self.bb.add(-b * b);
    }

    pub fn is_usable(&self) -> bool {
        self.parents > 0
    }

    /// `log2 Z'(q, l) - log2 Z'(q, l + 1)`.
    pub fn tau(&self) -> f64 {
        (self.a.value() / self.b.value()).log2()
    }

    /// Delta-method variance of [`tau`](Self::tau) from the scatter of the
    /// per-parent ratios `B_p / A_p`.
    pub fn ratio_variance(&self) -> f64 {
        let (sa, sb) = (self.a.value(), self.b.value());
        let r = sb / sa;
        let resid = self.bb.value() - 2.0 * r * self.ab.value() + r * r * self.aa.value();
        let v = resid.max(0.0) / (sa * sa) / (r * LN_2).powi(2);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    }
}

/// Sums for parent level `level` over the parents with two or more addresses.
pub fn level_moments(tree: &PrefixMassTree, level: u32, q: f64) -> Result<LevelMoments> {
    let pow = PowTable::new(q);
    let mut out = level_moments_multi(tree, level, std::slice::from_ref(&pow))?;
    Ok(out.pop().expect("one q requested"))
}

pub(crate) fn level_moments_multi(
    tree: &PrefixMassTree,
    level: u32,
    pows: &[PowTable],
) -> Result<Vec<LevelMoments>> {
    tree.check_level(level)?;
    tree.check_level(level + 1)?;
    let parents = tree.level(level)?;
    let children = tree.level(level + 1)?;
    let mut out = vec![LevelMoments::default(); pows.len()];
    let mut kids = children.entries();
    for (p, c) in parents.iter() {
        // Children of p occupy the next one or two entries.
        let take = kids.iter().take(2).take_while(|&&(k, _)| k >> 1 == p).count();
        let (mine, rest) = kids.split_at(take);
        kids = rest;
        if c < 2 {
            continue;
        }
        for (m, pow) in out.iter_mut().zip(pows) {
            let b = mine.iter().map(|&(_, k)| pow.pow(k)).sum();
            m.add(pow.pow(c), b);
        }
    }
    Ok(out)
}

/// Single-level estimate `τ̃_l(q)`.
pub fn tau_tilde_level(tree: &PrefixMassTree, level: u32, q: f64) -> Result<f64> {
    let m = level_moments(tree, level, q)?;
    if !m.is_usable() {
        return Err(Error::UnusableLevel(level));
    }
    Ok(m.tau())
}

/// `log2 Z(l, q)` over every nonempty prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTable {
    pub qs: Vec<f64>,
    pub levels: Vec<u32>,
    /// Indexed `[q][level]`.
    pub log2_z: Vec<Vec<f64>>,
}

impl PartitionTable {
    /// CSV with header `q,level,log2_Z`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("q,level,log2_Z\n");
        for (q, row) in self.qs.iter().zip(&self.log2_z) {
            for (l, z) in self.levels.iter().zip(row) {
                let _ = writeln!(out, "{q},{l},{z}");
            }
        }
        out
    }
}

pub fn partition_function(
    tree: &PrefixMassTree,
    qs: &[f64],
    levels: RangeInclusive<u32>,
) -> Result<PartitionTable> {
    let levels: Vec<u32> = levels.collect();
    for &l in &levels {
        if tree.level(l)?.is_empty() {
            return Err(Error::EmptySet);
        }
    }
    let log2_z = qs
        .iter()
        .map(|&q| {
            let pow = PowTable::new(q);
            levels
                .iter()
                .map(|&l| {
                    let mut z = CompensatedSum::default();
                    for (_, c) in tree.level(l).expect("checked above").iter() {
                        z.add(pow.pow(c));
                    }
                    z.value().log2()
                })
                .collect()
        })
        .collect();
    Ok(PartitionTable {
        qs: qs.to_vec(),
        levels,
        log2_z,
    })
}

/// How the averaged estimator's variance is computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceKind {
    /// `(1/n²) Σ_l D²_l(q)` with `D²_l` the delta-method variance of the
    /// per-level ratio estimator.
    #[default]
    WithinLevel,
    /// `s²(q) / n` from the spread of the per-level estimates.
    BetweenLevel,
}

impl std::str::FromStr for VarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "within-level" | "within" => Ok(VarianceKind::WithinLevel),
            "between-level" | "between" => Ok(VarianceKind::BetweenLevel),
            _ => Err(Error::Config(format!("unknown variance estimator {s:?}"))),
        }
    }
}

/// Averaged structure-function estimate on a q-grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureEstimate {
    pub qs: Vec<f64>,
    pub tau: Vec<f64>,
    pub variance: Vec<f64>,
    /// Parent levels that had at least one prefix with two or more addresses.
    pub levels: Vec<u32>,
    pub variance_kind: VarianceKind,
    /// Least-squares slope of level entropy (bits) against prefix length.
    pub entropy_slope: f64,
    pub critical: Option<CriticalRange>,
}

impl StructureEstimate {
    pub fn ci95(&self, i: usize) -> (f64, f64) {
        let half = 1.96 * self.variance[i].sqrt();
        (self.tau[i] - half, self.tau[i] + half)
    }

    /// `(τ̃(q), variance)` at a grid point.
    pub fn at(&self, q: f64) -> Result<(f64, f64)> {
        let i = find_q(&self.qs, q)?;
        Ok((self.tau[i], self.variance[i]))
    }

    /// CSV with header `q,tau,variance,ci_lo,ci_hi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("q,tau,variance,ci_lo,ci_hi\n");
        for i in 0..self.qs.len() {
            let (lo, hi) = self.ci95(i);
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.qs[i], self.tau[i], self.variance[i], lo, hi
            );
        }
        out
    }
}

/// Average `τ̃_l(q)` over the usable parent levels in `levels`.
///
/// The tree must also cover `levels.end() + 1`.
pub fn tau_tilde_avg(
    tree: &PrefixMassTree,
    qs: &[f64],
    levels: RangeInclusive<u32>,
    kind: VarianceKind,
) -> Result<StructureEstimate> {
    if qs.is_empty() {
        return Err(Error::Config(String::from("empty q grid")));
    }
    let pows: Vec<PowTable> = qs.iter().map(|&q| PowTable::new(q)).collect();
    let mut used = Vec::new();
    let mut per_level: Vec<Vec<LevelMoments>> = Vec::new();
    for level in levels.clone() {
        let ms = level_moments_multi(tree, level, &pows)?;
        if ms[0].is_usable() {
            used.push(level);
            per_level.push(ms);
        }
    }
    if used.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} usable level(s) in {}..={}; need at least 2 with a prefix holding two or more addresses",
            used.len(),
            levels.start(),
            levels.end()
        )));
    }
    let (tau, variance) = combine(&per_level, kind);
    Ok(StructureEstimate {
        qs: qs.to_vec(),
        tau,
        variance,
        levels: used,
        variance_kind: kind,
        entropy_slope: entropy_slope(tree, levels)?,
        critical: None,
    })
}

/// Mean and variance across levels from per-level sums, indexed `[level][q]`.
pub(crate) fn combine(per_level: &[Vec<LevelMoments>], kind: VarianceKind) -> (Vec<f64>, Vec<f64>) {
    let n = per_level.len() as f64;
    let nq = per_level[0].len();
    let mut tau = Vec::with_capacity(nq);
    let mut variance = Vec::with_capacity(nq);
    for qi in 0..nq {
        let ts: Vec<f64> = per_level.iter().map(|ms| ms[qi].tau()).collect();
        let mean = ts.iter().sum::<f64>() / n;
        let var = match kind {
            VarianceKind::WithinLevel => {
                per_level.iter().map(|ms| ms[qi].ratio_variance()).sum::<f64>() / (n * n)
            }
            VarianceKind::BetweenLevel => ts.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0) / n,
        };
        tau.push(mean);
        variance.push(var);
    }
    (tau, variance)
}

/// Shannon entropy in bits of the mass distribution at `level`.
pub fn level_entropy(tree: &PrefixMassTree, level: u32) -> Result<f64> {
    let lc = tree.level(level)?;
    let total = lc.total() as f64;
    let mut h = CompensatedSum::default();
    for (_, c) in lc.iter() {
        let p = c as f64 / total;
        h.add(-p * p.log2());
    }
    Ok(h.value())
}

/// Least-squares slope of level entropy against prefix length.
pub fn entropy_slope(tree: &PrefixMassTree, levels: RangeInclusive<u32>) -> Result<f64> {
    let xs: Vec<f64> = levels.clone().map(f64::from).collect();
    let ys = levels
        .map(|l| level_entropy(tree, l))
        .collect::<Result<Vec<f64>>>()?;
    if xs.len() < 2 {
        return Err(Error::InsufficientData(String::from(
            "entropy slope needs two or more levels",
        )));
    }
    Ok(least_squares(&xs, &ys).0)
}

/// `(slope, intercept)` of the least-squares line.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Measure {
    pub value: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfoDimension {
    /// Entropy-regression estimate.
    pub value: f64,
    /// Slope of `τ̃` over the grid points in `[0.5, 1]`.
    pub tau_window_slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DimensionsReport {
    pub d0: Measure,
    pub d1: InfoDimension,
    pub d2: Measure,
    #[serde(rename = "tau1_zero")]
    pub tau1_is_zero: bool,
    /// Whether `D2 <= D1 <= D0` holds for the point estimates.
    pub ordered: bool,
}

/// `D0 = -τ̃(0)`, `D2 = τ̃(2)`, and `D1` from the entropy regression.
pub fn generalized_dimensions(est: &StructureEstimate) -> Result<DimensionsReport> {
    let (t0, v0) = est.at(0.0)?;
    let (t1, v1) = est.at(1.0)?;
    let (t2, v2) = est.at(2.0)?;
    let (wx, wy): (Vec<f64>, Vec<f64>) = est
        .qs
        .iter()
        .zip(&est.tau)
        .filter(|(&q, _)| (0.5 - Q_EPS..=1.0 + Q_EPS).contains(&q))
        .unzip();
    if wx.len() < 2 {
        return Err(Error::MissingQ(0.5));
    }
    let d0 = Measure {
        value: -t0,
        std: v0.sqrt(),
    };
    let d1 = InfoDimension {
        value: est.entropy_slope,
        tau_window_slope: least_squares(&wx, &wy).0,
    };
    let d2 = Measure {
        value: t2,
        std: v2.sqrt(),
    };
    Ok(DimensionsReport {
        d0,
        d1,
        d2,
        tau1_is_zero: t1.abs() <= 1.96 * v1.sqrt() + 1e-9,
        ordered: d2.value <= d1.value && d1.value <= d0.value,
    })
}

pub const DEFAULT_LINEARITY_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Linearity {
    pub is_linear: bool,
    pub max_residual: f64,
    pub slope: f64,
    pub intercept: f64,
}

/// Fit a line to `τ̃` over grid points in `window` and compare the worst
/// residual against `threshold`.
pub fn linearity_test(est: &StructureEstimate, window: (f64, f64), threshold: f64) -> Result<Linearity> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = est
        .qs
        .iter()
        .zip(&est.tau)
        .filter(|(&q, _)| q >= window.0 - Q_EPS && q <= window.1 + Q_EPS)
        .unzip();
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "linearity test needs 3 grid points in [{}, {}], found {}",
            window.0,
            window.1,
            xs.len()
        )));
    }
    let (slope, intercept) = least_squares(&xs, &ys);
    let max_residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - slope * x - intercept).abs())
        .fold(0.0, f64::max);
    Ok(Linearity {
        is_linear: max_residual <= threshold,
        max_residual,
        slope,
        intercept,
    })
}

/// Fraction of nonempty prefixes at `level` holding exactly one address.
pub fn singleton_fraction(tree: &PrefixMassTree, level: u32) -> Result<f64> {
    let lc = tree.level(level)?;
    if lc.is_empty() {
        return Err(Error::EmptySet);
    }
    let ones = lc.iter().filter(|&(_, c)| c == 1).count();
    Ok(ones as f64 / lc.len() as f64)
}
