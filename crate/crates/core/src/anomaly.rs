//! Streaming anomaly detection on the structure function of recent addresses.
//!
//! A fixed-size hash table holds the most recent distinct addresses. Every
//! accepted address updates the per-level partition sums incrementally, and
//! the resulting `τ̃` vector is compared with the one from `k` events earlier
//! by a Hotelling-style test.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::statistics::{Data, OrderStatistics};

use crate::address::{shr, AddressSet, AddressUniverse, Family, PrefixMassTree};
use crate::cascade::{generate, CascadeSpec, CriticalRange, Generator};
use crate::error::{Error, Result};
use crate::moments::{self, LevelMoments, PowTable, VarianceKind};

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub universe: AddressUniverse,
    pub slots: usize,
    pub qs: Vec<f64>,
    /// Parent levels of the estimator.
    pub levels: RangeInclusive<u32>,
    pub lag: usize,
    pub seed: u64,
    pub variance: VarianceKind,
}

impl DetectorConfig {
    /// Grid over the gaussianity range in steps of 0.25, skipping `q = 1`
    /// where every estimate has zero variance.
    pub fn q_grid_for(range: &CriticalRange) -> Vec<f64> {
        let (lo, hi) = range.gaussianity;
        let mut qs = Vec::new();
        let mut i = 0;
        loop {
            let q = ((lo + 0.25 * i as f64) * 1e9).round() / 1e9;
            if q > hi + 1e-9 {
                break;
            }
            if (q - 1.0).abs() > 1e-9 {
                qs.push(q);
            }
            i += 1;
        }
        qs
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 {
            return Err(Error::Config(String::from("detector needs at least one slot")));
        }
        if self.lag == 0 {
            return Err(Error::Config(String::from("lag must be at least 1")));
        }
        if self.qs.is_empty() {
            return Err(Error::Config(String::from("empty q grid")));
        }
        let (lo, hi) = (*self.levels.start(), *self.levels.end());
        if lo > hi || hi >= self.universe.bits() {
            return Err(Error::LevelOutOfRange {
                level: hi,
                min: lo,
                max: self.universe.bits() - 1,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnomalyScore {
    pub score: f64,
    pub p_value: f64,
    pub t2: f64,
    pub warming: bool,
}

impl AnomalyScore {
    const WARMING: AnomalyScore = AnomalyScore {
        score: 0.0,
        p_value: 1.0,
        t2: 0.0,
        warming: true,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub tau: Vec<f64>,
    pub variance: Vec<f64>,
}

/// 64-bit avalanche mixer (splitmix64 finalizer).
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Two-sample test with known per-q variances.
///
/// `T² = Σ Δτ(q)² / (var_now(q) + var_lag(q))` is referred to a chi-squared
/// distribution with one degree of freedom per q. A q with `Δτ = 0`
/// contributes nothing whatever its variance.
pub fn hotelling_score(current: &Snapshot, lagged: &Snapshot, qs: &[f64]) -> Result<(f64, f64)> {
    let p = current.tau.len();
    if p == 0 || lagged.tau.len() != p || current.variance.len() != p || lagged.variance.len() != p {
        return Err(Error::Config(String::from("snapshot vectors differ in length")));
    }
    let mut t2 = 0.0;
    for i in 0..p {
        let d = current.tau[i] - lagged.tau[i];
        if d == 0.0 {
            continue;
        }
        let pooled = current.variance[i] + lagged.variance[i];
        if pooled.is_nan() || pooled <= 0.0 {
            return Err(Error::DegenerateTest(qs.get(i).copied().unwrap_or(f64::NAN)));
        }
        t2 += d * d / pooled;
    }
    let chi = ChiSquared::new(p as f64).expect("p >= 1");
    Ok((t2, chi.sf(t2)))
}

#[derive(Clone)]
pub struct Detector {
    config: DetectorConfig,
    pows: Vec<PowTable>,
    slots: Vec<Option<u128>>,
    /// Prefix counts for levels `lo..=hi + 1`.
    counts: Vec<HashMap<u128, u64>>,
    /// Indexed `[level - lo][q]`.
    sums: Vec<Vec<LevelMoments>>,
    ring: VecDeque<Option<Snapshot>>,
    insertions: u64,
    last: AnomalyScore,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let depth = config.levels.clone().count();
        Ok(Detector {
            pows: config.qs.iter().map(|&q| PowTable::new(q)).collect(),
            slots: vec![None; config.slots],
            counts: vec![HashMap::new(); depth + 1],
            sums: vec![vec![LevelMoments::default(); config.qs.len()]; depth],
            ring: VecDeque::with_capacity(config.lag + 1),
            insertions: 0,
            last: AnomalyScore::WARMING,
            config,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn ring_capacity(&self) -> usize {
        self.config.lag + 1
    }

    pub fn ring_len(&self) -> usize {
        self.ring.len()
    }

    pub fn occupied(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_warming(&self) -> bool {
        self.insertions < self.config.slots as u64 || self.ring.len() < self.ring_capacity()
    }

    pub fn slot_of(&self, value: u128) -> usize {
        let folded = (value as u64) ^ ((value >> 64) as u64).rotate_left(32);
        (mix64(folded ^ self.config.seed) % self.config.slots as u64) as usize
    }

    /// Addresses currently held, sorted.
    pub fn contents(&self) -> Vec<u128> {
        let mut v: Vec<u128> = self.slots.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    }

    /// Change the lag. Snapshots beyond the new ring capacity are dropped.
    pub fn set_lag(&mut self, lag: usize) -> Result<()> {
        if lag == 0 {
            return Err(Error::Config(String::from("lag must be at least 1")));
        }
        self.config.lag = lag;
        while self.ring.len() > lag + 1 {
            self.ring.pop_front();
        }
        Ok(())
    }

    pub fn observe(&mut self, value: u128) -> Result<AnomalyScore> {
        if !self.config.universe.contains(value) {
            return Err(Error::InvalidUniverse(format!(
                "value {value:#x} lies outside the detector's {}-bit universe",
                self.config.universe.bits()
            )));
        }
        let slot = self.slot_of(value);
        match self.slots[slot] {
            Some(v) if v == value => return Ok(self.last),
            Some(old) => self.apply(old, -1),
            None => {}
        }
        self.slots[slot] = Some(value);
        self.apply(value, 1);
        self.insertions += 1;

        if self.ring.len() == self.ring_capacity() {
            self.ring.pop_front();
        }
        self.ring.push_back(self.snapshot());
        self.last = self.score();
        Ok(self.last)
    }

    fn score(&self) -> AnomalyScore {
        if self.is_warming() {
            return AnomalyScore::WARMING;
        }
        let (Some(lagged), Some(current)) = (&self.ring[0], &self.ring[self.ring.len() - 1]) else {
            return AnomalyScore::WARMING;
        };
        match hotelling_score(current, lagged, &self.config.qs) {
            Ok((t2, p)) => AnomalyScore {
                score: (1.0 - p).clamp(0.0, 1.0),
                p_value: p,
                t2,
                warming: false,
            },
            // A zero pooled variance with a nonzero shift is infinitely
            // significant.
            Err(_) => AnomalyScore {
                score: 1.0,
                p_value: 0.0,
                t2: f64::INFINITY,
                warming: false,
            },
        }
    }

    /// Current `τ̃` and variance, or `None` with fewer than two usable levels.
    pub fn snapshot(&self) -> Option<Snapshot> {
        let usable: Vec<Vec<LevelMoments>> =
            self.sums.iter().filter(|ms| ms[0].is_usable()).cloned().collect();
        if usable.len() < 2 {
            return None;
        }
        let (tau, variance) = moments::combine(&usable, self.config.variance);
        Some(Snapshot { tau, variance })
    }

    /// Add (`delta = 1`) or remove (`delta = -1`) one address.
    fn apply(&mut self, value: u128, delta: i64) {
        let lo = *self.config.levels.start();
        let bits = self.config.universe.bits();
        let depth = self.sums.len();
        for i in 0..depth {
            let p = shr(value, bits - lo - i as u32);
            self.update_parent(i, p, false);
        }
        for (i, map) in self.counts.iter_mut().enumerate() {
            let idx = shr(value, bits - lo - i as u32);
            let c = map.entry(idx).or_insert(0);
            *c = c.checked_add_signed(delta).expect("count stays nonnegative");
            if *c == 0 {
                map.remove(&idx);
            }
        }
        for i in 0..depth {
            let p = shr(value, bits - lo - i as u32);
            self.update_parent(i, p, true);
        }
    }

    fn update_parent(&mut self, i: usize, parent: u128, add: bool) {
        let c = self.counts[i].get(&parent).copied().unwrap_or(0);
        if c < 2 {
            return;
        }
        let kids = &self.counts[i + 1];
        let left = kids.get(&(parent << 1)).copied().unwrap_or(0);
        let right = kids.get(&((parent << 1) | 1)).copied().unwrap_or(0);
        for (m, pow) in self.sums[i].iter_mut().zip(&self.pows) {
            let a = pow.pow(c);
            let mut b = 0.0;
            if left > 0 {
                b += pow.pow(left);
            }
            if right > 0 {
                b += pow.pow(right);
            }
            if add {
                m.add(a, b);
            } else {
                m.remove(a, b);
            }
        }
    }

    /// Incrementally maintained sums, indexed `[level][q]`.
    pub fn level_sums(&self) -> &[Vec<LevelMoments>] {
        &self.sums
    }

    /// Prefix count at `level` as tracked incrementally.
    pub fn prefix_count(&self, level: u32, index: u128) -> u64 {
        let lo = *self.config.levels.start();
        level
            .checked_sub(lo)
            .and_then(|i| self.counts.get(i as usize))
            .and_then(|m| m.get(&index).copied())
            .unwrap_or(0)
    }

    /// The same sums computed from scratch over the current slot contents.
    pub fn batch_sums(&self) -> Result<Vec<Vec<LevelMoments>>> {
        let (lo, hi) = (*self.config.levels.start(), *self.config.levels.end());
        let tree = self.batch_tree()?;
        (lo..=hi)
            .map(|l| moments::level_moments_multi(&tree, l, &self.pows))
            .collect()
    }

    /// Tree over the current slot contents covering the estimator's levels.
    pub fn batch_tree(&self) -> Result<PrefixMassTree> {
        let (lo, hi) = (*self.config.levels.start(), *self.config.levels.end());
        PrefixMassTree::from_sorted_values(self.config.universe, &self.contents(), lo, hi + 1)
    }

    /// `τ̃_now(q) - τ̃_lagged(q)` with the lag `k` (at most the configured lag).
    pub fn delta_tau_report(&self, k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > self.config.lag {
            return Err(Error::Config(format!(
                "report lag {k} must lie in 1..={}",
                self.config.lag
            )));
        }
        if self.ring.len() < k + 1 {
            return Err(Error::InsufficientData(format!(
                "detector is warming ({} of {} snapshots)",
                self.ring.len(),
                k + 1
            )));
        }
        let n = self.ring.len();
        match (&self.ring[n - 1 - k], &self.ring[n - 1]) {
            (Some(lagged), Some(now)) => Ok(now.tau.iter().zip(&lagged.tau).map(|(a, b)| a - b).collect()),
            _ => Err(Error::InsufficientData(String::from(
                "fewer than two usable levels in a compared snapshot",
            ))),
        }
    }

    /// Variances of the current snapshot.
    pub fn current_variance(&self) -> Option<Vec<f64>> {
        self.ring.back().cloned().flatten().map(|s| s.variance)
    }
}

/// Addresses that reuse a /8 seen in `baseline` with the low 24 bits drawn
/// uniformly, distinct from each other and from the baseline.
pub fn synth_anomalous(baseline: &AddressSet, count: usize, seed: u64) -> Result<Vec<u128>> {
    if baseline.universe().family() != Family::V4 {
        return Err(Error::InvalidUniverse(String::from(
            "anomalous addresses are drawn per /8, which needs an IPv4 baseline",
        )));
    }
    if baseline.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut slash8: Vec<u128> = baseline.values().iter().map(|v| v >> 24).collect();
    slash8.dedup();
    let space = (slash8.len() as u128) << 24;
    let free = space - baseline.len() as u128;
    if count as u128 > free {
        return Err(Error::OverCapacity {
            requested: count as u64,
            capacity: free,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let hi = slash8[rng.random_range(0..slash8.len())];
        let v = (hi << 24) | rng.random_range(0u128..1 << 24);
        if !baseline.contains(v) && seen.insert(v) {
            out.push(v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    pub p5: f64,
    pub median: f64,
    pub p95: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Quantiles {
        let mut data = Data::new(values.to_vec());
        Quantiles {
            p5: data.percentile(5),
            median: data.median(),
            p95: data.percentile(95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagSummary {
    pub k: usize,
    pub anomalous: Quantiles,
    pub control: Quantiles,
}

/// Score of the `k`-th address of `stream` after loading `baseline` into a
/// fresh detector with lag `k`. All of the stream lies inside the lag window.
pub fn first_injection_score(loaded: &Detector, stream: &[u128], k: usize) -> Result<AnomalyScore> {
    if stream.len() < k {
        return Err(Error::InsufficientData(format!(
            "stream has {} addresses, lag {k} needs {k}",
            stream.len()
        )));
    }
    let mut d = loaded.clone();
    d.set_lag(k)?;
    let mut last = AnomalyScore::WARMING;
    for &v in &stream[..k] {
        last = d.observe(v)?;
    }
    Ok(last)
}

/// Per-lag first-injection scores for one baseline.
///
/// The detector is loaded with `baseline` once (its ring sized for the
/// largest lag) and then fed each stream separately.
pub fn lag_scores(
    config: &DetectorConfig,
    baseline: &[u128],
    anomalous: &[u128],
    control: &[u128],
    ks: &[usize],
) -> Result<Vec<(usize, f64, f64)>> {
    let kmax = ks.iter().copied().max().unwrap_or(1);
    let mut cfg = config.clone();
    cfg.lag = kmax;
    let mut d = Detector::new(cfg)?;
    for &v in baseline {
        d.observe(v)?;
    }
    ks.iter()
        .map(|&k| {
            let a = first_injection_score(&d, anomalous, k)?;
            let c = first_injection_score(&d, control, k)?;
            Ok((k, a.score, c.score))
        })
        .collect()
}

/// Synthetic experiment parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrial {
    pub sigma: f64,
    /// Size of the cascade the baseline is sampled from.
    pub population: u64,
    /// Distinct baseline addresses (also the slot count).
    pub baseline: usize,
    pub levels: RangeInclusive<u32>,
    pub qs: Vec<f64>,
    pub variance: VarianceKind,
}

impl SyntheticTrial {
    /// Baseline, anomalous stream and control stream for one seed.
    ///
    /// The baseline is a uniform sample of a larger cascade; the control
    /// stream continues that sample.
    pub fn streams(&self, seed: u64, len: usize) -> Result<(Vec<u128>, Vec<u128>, Vec<u128>)> {
        let spec = CascadeSpec::new(
            Generator::logit_normal(self.sigma)?,
            self.population,
            AddressUniverse::v4(),
            seed,
        );
        let (set, _) = generate(&spec)?;
        split_population(&set, self.baseline, len, seed)
    }

    pub fn detector_config(&self, seed: u64) -> DetectorConfig {
        DetectorConfig {
            universe: AddressUniverse::v4(),
            slots: self.baseline,
            qs: self.qs.clone(),
            levels: self.levels.clone(),
            lag: 1,
            seed,
            variance: self.variance,
        }
    }
}

/// Shuffle an IPv4 population and cut it into a baseline, a control stream
/// continuing the baseline sample, and an anomalous stream built from the
/// baseline's /8s.
pub fn split_population(
    population: &AddressSet,
    baseline: usize,
    len: usize,
    seed: u64,
) -> Result<(Vec<u128>, Vec<u128>, Vec<u128>)> {
    if population.len() < baseline + len {
        return Err(Error::InsufficientData(format!(
            "population of {} cannot supply a baseline of {baseline} plus {len} control addresses",
            population.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let mut all = population.values().to_vec();
    all.shuffle(&mut rng);
    let control = all[baseline..baseline + len].to_vec();
    all.truncate(baseline);
    let base_set = AddressSet::new(population.universe(), all.clone())?;
    let anomalous = synth_anomalous(&base_set, len, seed.wrapping_add(1))?;
    Ok((all, anomalous, control))
}

/// Quantiles of first-injection scores per lag across seeds.
pub fn lag_sweep(trial: &SyntheticTrial, ks: &[usize], seeds: &[u64]) -> Result<Vec<LagSummary>> {
    sweep(ks, seeds, |seed, len| {
        Ok((trial.detector_config(seed), trial.streams(seed, len)?))
    })
}

/// [`lag_sweep`] over a fixed population instead of fresh cascades. The
/// config's slot count doubles as the baseline size.
pub fn population_sweep(
    population: &AddressSet,
    config: &DetectorConfig,
    ks: &[usize],
    seeds: &[u64],
) -> Result<Vec<LagSummary>> {
    sweep(ks, seeds, |seed, len| {
        let cfg = DetectorConfig {
            seed,
            ..config.clone()
        };
        Ok((cfg, split_population(population, config.slots, len, seed)?))
    })
}

type Streams = (Vec<u128>, Vec<u128>, Vec<u128>);

fn sweep<F>(ks: &[usize], seeds: &[u64], mut setup: F) -> Result<Vec<LagSummary>>
where
    F: FnMut(u64, usize) -> Result<(DetectorConfig, Streams)>,
{
    if ks.is_empty() || seeds.is_empty() {
        return Err(Error::Config(String::from(
            "sweep needs at least one lag and one seed",
        )));
    }
    let kmax = ks.iter().copied().max().unwrap_or(1);
    let mut per_k: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); ks.len()];
    for &seed in seeds {
        let (config, (baseline, anomalous, control)) = setup(seed, kmax)?;
        let scores = lag_scores(&config, &baseline, &anomalous, &control, ks)?;
        for (i, (_, a, c)) in scores.into_iter().enumerate() {
            per_k[i].0.push(a);
            per_k[i].1.push(c);
        }
    }
    Ok(ks
        .iter()
        .zip(per_k)
        .map(|(&k, (a, c))| LagSummary {
            k,
            anomalous: Quantiles::of(&a),
            control: Quantiles::of(&c),
        })
        .collect())
}

/// CSV with header `index,address,score,warming`.
pub fn stream_csv_header() -> &'static str {
    "index,address,score,warming\n"
}

pub fn stream_csv_row(index: usize, address: &str, score: &AnomalyScore) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{index},{address},{},{}", score.score, score.warming);
    out
}
