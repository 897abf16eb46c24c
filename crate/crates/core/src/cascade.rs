//! Finite conservative cascades over a prefix tree.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64`, so a seed fixes the
//! output on every platform.

use std::f64::consts::{LN_2, PI};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::address::{AddressSet, AddressUniverse, CapacityMap, Prefix};
use crate::error::{Error, Result};
use crate::quadrature;

/// Distribution of the left-child mass fraction `W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    /// `W ≡ 1/2`.
    DeterministicHalf,
    /// `W = 1 / (1 + exp(-σZ))` with standard-normal `Z`.
    LogitNormal { sigma: f64 },
}

impl Generator {
    /// Logit-normal generator; `σ = 0` collapses to the deterministic half.
    pub fn logit_normal(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::Config(format!(
                "sigma must be finite and >= 0, got {sigma}"
            )));
        }
        Ok(if sigma == 0.0 {
            Generator::DeterministicHalf
        } else {
            Generator::LogitNormal { sigma }
        })
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            Generator::DeterministicHalf => 0.0,
            Generator::LogitNormal { sigma } => sigma,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.sigma() == 0.0
    }
}

pub fn sample_weight<R: Rng + ?Sized>(generator: &Generator, rng: &mut R) -> f64 {
    match *generator {
        Generator::DeterministicHalf => 0.5,
        Generator::LogitNormal { sigma } => {
            let z: f64 = rng.sample(StandardNormal);
            1.0 / (1.0 + (-sigma * z).exp())
        }
    }
}

/// Split `n` addresses between two children with fraction `w` going left.
///
/// The left share is rounded half away from zero and the right child takes
/// the remainder. Mass above a child's capacity spills into its sibling.
pub fn split_mass(n: u64, w: f64, cap_left: u128, cap_right: u128) -> Result<(u64, u64)> {
    split_logged(n, w, cap_left, cap_right).map(|(l, r, _)| (l, r))
}

fn split_logged(n: u64, w: f64, cap_left: u128, cap_right: u128) -> Result<(u64, u64, bool)> {
    if n as u128 > cap_left.saturating_add(cap_right) {
        return Err(Error::InfeasibleSplit {
            mass: n,
            left: cap_left,
            right: cap_right,
        });
    }
    let ideal = (w.clamp(0.0, 1.0) * n as f64).round() as u64;
    let mut left = ideal.min(n);
    let mut spilled = false;
    if left as u128 > cap_left {
        left = cap_left as u64;
        spilled = true;
    }
    let mut right = n - left;
    if right as u128 > cap_right {
        right = cap_right as u64;
        left = n - right;
        spilled = true;
    }
    Ok((left, right, spilled))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSpec {
    pub generator: Generator,
    pub total_mass: u64,
    pub universe: AddressUniverse,
    pub capacity: CapacityMap,
    pub seed: u64,
}

impl CascadeSpec {
    /// Spec over the default capacity map of `universe`.
    pub fn new(generator: Generator, total_mass: u64, universe: AddressUniverse, seed: u64) -> Self {
        CascadeSpec {
            generator,
            total_mass,
            universe,
            capacity: CapacityMap::default_for(universe),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SpilloverLevel {
    /// Prefix length of the children produced by the splits.
    pub level: u32,
    pub spilled: u64,
    pub total: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpilloverLog {
    pub levels: Vec<SpilloverLevel>,
}

impl SpilloverLog {
    /// Shortest child prefix length at which any split spilled.
    pub fn first_spill_level(&self) -> Option<u32> {
        self.levels.iter().find(|l| l.spilled > 0).map(|l| l.level)
    }

    /// CSV with header `level,spilled,total`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,spilled,total\n");
        for l in &self.levels {
            let _ = writeln!(out, "{},{},{}", l.level, l.spilled, l.total);
        }
        out
    }
}

struct Node {
    index: u128,
    mass: u64,
    // Nested with some capacity override, so the plain span does not apply.
    touched: bool,
}

/// Distribute `total_mass` addresses down the prefix tree, one level at a time.
pub fn generate(spec: &CascadeSpec) -> Result<(AddressSet, SpilloverLog)> {
    let universe = spec.universe;
    if spec.capacity.universe() != universe {
        return Err(Error::Config(String::from(
            "capacity map and cascade use different universes",
        )));
    }
    if spec.total_mass == 0 {
        return Err(Error::EmptySet);
    }
    let available = spec.capacity.total();
    if spec.total_mass as u128 > available {
        return Err(Error::OverCapacity {
            requested: spec.total_mass,
            capacity: available,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut log = SpilloverLog::default();
    let mut nodes = vec![Node {
        index: 0,
        mass: spec.total_mass,
        touched: spec.capacity.touches(&Prefix::root()),
    }];
    let capacity_of = |index: u128, len: u32, touched: bool| -> u128 {
        if touched {
            spec.capacity
                .capacity(&Prefix::new(index, len).expect("index fits its length"))
        } else {
            universe.span(len)
        }
    };

    for len in 0..universe.bits() {
        let child_len = len + 1;
        let mut next = Vec::with_capacity(nodes.len() * 2);
        let mut stats = SpilloverLevel {
            level: child_len,
            spilled: 0,
            total: 0,
        };
        for node in &nodes {
            let (li, ri) = (node.index << 1, (node.index << 1) | 1);
            let touch = |i: u128| {
                node.touched
                    && spec
                        .capacity
                        .touches(&Prefix::new(i, child_len).expect("index fits its length"))
            };
            let (lt, rt) = (touch(li), touch(ri));
            let w = sample_weight(&spec.generator, &mut rng);
            let (left, right, spilled) = split_logged(
                node.mass,
                w,
                capacity_of(li, child_len, lt),
                capacity_of(ri, child_len, rt),
            )?;
            stats.total += 1;
            stats.spilled += u64::from(spilled);
            if left > 0 {
                next.push(Node {
                    index: li,
                    mass: left,
                    touched: lt,
                });
            }
            if right > 0 {
                next.push(Node {
                    index: ri,
                    mass: right,
                    touched: rt,
                });
            }
        }
        log.levels.push(stats);
        nodes = next;
    }

    debug_assert!(nodes.iter().all(|n| n.mass == 1));
    let values = nodes.into_iter().map(|n| n.index).collect();
    Ok((AddressSet::new(universe, values)?, log))
}

const TAU_REL_TOL: f64 = 1e-9;

/// ln E[W^q].
fn log_moment(generator: &Generator, q: f64) -> Result<f64> {
    let sigma = match *generator {
        Generator::DeterministicHalf => return Ok(-q * LN_2),
        Generator::LogitNormal { sigma } => sigma,
    };
    // ln(w^q φ(z)) up to the normal constant; ln w = -ln(1 + e^{-σz}).
    let g = |z: f64| -q * softplus(-sigma * z) - 0.5 * z * z;
    let reach = q.abs() * sigma + 40.0;
    let (a, b) = (-reach, reach);
    // Factor out the peak so large |q| cannot overflow.
    let steps = 4000;
    let peak = (0..=steps)
        .map(|i| g(a + (b - a) * i as f64 / steps as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    let integral = quadrature::integrate(|z| (g(z) - peak).exp(), a, b, 32, TAU_REL_TOL, 0.0, 20_000)?;
    Ok(peak + integral.value.ln() - 0.5 * (2.0 * PI).ln())
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Structure function of the generator, `τ(q) = -log2 E[W^q] - 1`.
///
/// This is the sign convention of the moment estimator, so `τ(1) = 0` and
/// `τ(0) = -1`.
pub fn theoretical_tau(generator: &Generator, q: f64) -> Result<f64> {
    Ok(-log_moment(generator, q)? / LN_2 - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalRange {
    pub consistency: (f64, f64),
    pub gaussianity: (f64, f64),
}

const DIFF_STEP: f64 = 1e-4;
const ROOT_TOL: f64 = 1e-4;
const SCAN_STEP: f64 = 0.5;
const SCAN_LIMIT: f64 = 64.0;

/// Roots of `h(q) = q τ'(q) - τ(q)` on either side of zero.
pub fn critical_q_range(generator: &Generator) -> Result<CriticalRange> {
    if generator.is_degenerate() {
        return Err(Error::DegenerateGenerator("h(q) is identically 1 for W = 1/2"));
    }
    let h = |q: f64| -> Result<f64> {
        let up = theoretical_tau(generator, q + DIFF_STEP)?;
        let down = theoretical_tau(generator, q - DIFF_STEP)?;
        Ok(q * (up - down) / (2.0 * DIFF_STEP) - theoretical_tau(generator, q)?)
    };
    let root = |sign: f64, side: &'static str| -> Result<f64> {
        // h(0) = -τ(0) = 1 > 0.
        let mut inner = 0.0;
        loop {
            let outer = inner + sign * SCAN_STEP;
            if outer.abs() > SCAN_LIMIT {
                return Err(Error::NoCriticalRoot {
                    side,
                    limit: SCAN_LIMIT,
                });
            }
            if h(outer)? <= 0.0 {
                let (mut pos, mut neg) = (inner, outer);
                while (pos - neg).abs() > ROOT_TOL {
                    let mid = 0.5 * (pos + neg);
                    if h(mid)? > 0.0 {
                        pos = mid;
                    } else {
                        neg = mid;
                    }
                }
                return Ok(0.5 * (pos + neg));
            }
            inner = outer;
        }
    };
    let lo = root(-1.0, "negative")?;
    let hi = root(1.0, "positive")?;
    Ok(CriticalRange {
        consistency: (lo, hi),
        gaussianity: (lo / 2.0, hi / 2.0),
    })
}
