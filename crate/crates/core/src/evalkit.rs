//! Simulation scenarios, noise-level estimation and accuracy metrics.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::fitted_values;
use crate::error::{Error, Result};

/// `Phi^-1(0.75)`: MAD of a standard normal.
pub const MAD_SCALE: f64 = 0.6744897501960817;

fn default_value_sd() -> f64 {
    2.0
}

fn default_noise_sd() -> f64 {
    1.0
}

/// A simulation scenario, deserializable from TOML with a `kind` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// `m` equally spaced changes; mean values at `0, taus.., n` drawn
    /// i.i.d. `N(0, value_sd^2)`.
    RandomEquispaced {
        n: usize,
        m: usize,
        #[serde(default = "default_value_sd")]
        value_sd: f64,
        #[serde(default = "default_noise_sd")]
        noise_sd: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Fixed knots; times run from 0 to `n` strictly increasing.
    ExplicitKnots {
        knot_times: Vec<usize>,
        knot_values: Vec<f64>,
        #[serde(default = "default_noise_sd")]
        noise_sd: f64,
        #[serde(default)]
        seed: u64,
    },
}

/// Simulated data with its generating truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulated {
    pub y: Vec<f64>,
    pub taus: Vec<usize>,
    pub mean: Vec<f64>,
}

impl Scenario {
    pub fn random(n: usize, m: usize, seed: u64) -> Self {
        Scenario::RandomEquispaced {
            n,
            m,
            value_sd: default_value_sd(),
            noise_sd: default_noise_sd(),
            seed,
        }
    }

    /// Zigzag between `low` and `high` with `segments` pieces of `seg_len`.
    pub fn zigzag(
        segments: usize,
        seg_len: usize,
        low: f64,
        high: f64,
        noise_sd: f64,
        seed: u64,
    ) -> Self {
        Scenario::ExplicitKnots {
            knot_times: (0..=segments).map(|i| i * seg_len).collect(),
            knot_values: (0..=segments)
                .map(|i| if i % 2 == 0 { low } else { high })
                .collect(),
            noise_sd,
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Scenario::RandomEquispaced { seed, .. } | Scenario::ExplicitKnots { seed, .. } => *seed,
        }
    }

    pub fn with_seed(mut self, new_seed: u64) -> Self {
        match &mut self {
            Scenario::RandomEquispaced { seed, .. } | Scenario::ExplicitKnots { seed, .. } => {
                *seed = new_seed
            }
        }
        self
    }

    pub fn n(&self) -> usize {
        match self {
            Scenario::RandomEquispaced { n, .. } => *n,
            Scenario::ExplicitKnots { knot_times, .. } => knot_times.last().copied().unwrap_or(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadScenario(msg));
        match self {
            Scenario::RandomEquispaced {
                n,
                m,
                value_sd,
                noise_sd,
                ..
            } => {
                if *n < 2 {
                    return bad(format!("n must be at least 2, got {n}"));
                }
                if m + 1 > *n {
                    return bad(format!("m = {m} changes do not fit in n = {n}"));
                }
                if !(value_sd.is_finite() && *value_sd >= 0.0) {
                    return bad(format!("value_sd must be non-negative, got {value_sd}"));
                }
                if !(noise_sd.is_finite() && *noise_sd >= 0.0) {
                    return bad(format!("noise_sd must be non-negative, got {noise_sd}"));
                }
                let taus = equispaced(*n, *m);
                if taus.windows(2).any(|w| w[0] >= w[1]) || taus.first() == Some(&0) {
                    return bad("equispaced changepoints collide".into());
                }
            }
            Scenario::ExplicitKnots {
                knot_times,
                knot_values,
                noise_sd,
                ..
            } => {
                if knot_times.len() < 2 || knot_times.len() != knot_values.len() {
                    return bad(format!(
                        "need matching knot_times and knot_values of length >= 2, got {} and {}",
                        knot_times.len(),
                        knot_values.len()
                    ));
                }
                if knot_times[0] != 0 || knot_times.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("knot_times must start at 0 and strictly increase".into());
                }
                if knot_values.iter().any(|v| !v.is_finite()) {
                    return bad("knot_values must be finite".into());
                }
                if !(noise_sd.is_finite() && *noise_sd >= 0.0) {
                    return bad(format!("noise_sd must be non-negative, got {noise_sd}"));
                }
            }
        }
        Ok(())
    }
}

/// Changepoints at `round(i * n / (m + 1))`, `i = 1..=m`.
pub fn equispaced(n: usize, m: usize) -> Vec<usize> {
    (1..=m)
        .map(|i| (i as f64 * n as f64 / (m + 1) as f64).round() as usize)
        .collect()
}

/// Portable standard-normal stream: ChaCha8 seeded with `seed_from_u64`,
/// 53-bit uniforms from the high bits of `next_u64`, and Box-Muller pairs
/// (cosine branch first).
#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Draws a dataset. Knot values (random scenario only) are drawn first, then
/// one noise term per time point.
pub fn simulate(sc: &Scenario) -> Result<Simulated> {
    sc.validate()?;
    let mut stream = GaussianStream::new(sc.seed());
    let (n, taus, values, noise_sd) = match sc {
        Scenario::RandomEquispaced {
            n,
            m,
            value_sd,
            noise_sd,
            ..
        } => {
            let taus = equispaced(*n, *m);
            let values: Vec<f64> = (0..m + 2)
                .map(|_| value_sd * stream.standard_normal())
                .collect();
            (*n, taus, values, *noise_sd)
        }
        Scenario::ExplicitKnots {
            knot_times,
            knot_values,
            noise_sd,
            ..
        } => {
            let n = *knot_times.last().unwrap();
            let taus = knot_times[1..knot_times.len() - 1].to_vec();
            (n, taus, knot_values.clone(), *noise_sd)
        }
    };
    let mean = fitted_values(n, &taus, &values);
    let y = mean
        .iter()
        .map(|&mu| {
            let z = stream.standard_normal();
            if noise_sd == 0.0 {
                mu
            } else {
                mu + noise_sd * z
            }
        })
        .collect();
    Ok(Simulated { y, taus, mean })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Noise standard deviation from the MAD of second differences, whose
/// variance is six times the noise variance within a linear segment.
pub fn estimate_sigma(y: &[f64]) -> Result<f64> {
    if y.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: y.len(),
        });
    }
    let mut d: Vec<f64> = y.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect();
    let centre = median(&mut d);
    let mut dev: Vec<f64> = d.iter().map(|v| (v - centre).abs()).collect();
    let mad = median(&mut dev);
    let var = (mad / MAD_SCALE).powi(2);
    if var == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((var / 6.0).sqrt())
}

pub fn mse(fitted: &[f64], truth: &[f64]) -> Result<f64> {
    if fitted.len() != truth.len() {
        return Err(Error::LengthMismatch(fitted.len(), truth.len()));
    }
    if fitted.is_empty() {
        return Ok(0.0);
    }
    Ok(fitted
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / fitted.len() as f64)
}

/// Longest segment of the segmentation of `1..=n` induced by `taus`.
pub fn longest_segment(taus: &[usize], n: usize) -> usize {
    let mut prev = 0;
    let mut longest = 0;
    for &t in taus.iter().chain(std::iter::once(&n)) {
        longest = longest.max(t.saturating_sub(prev));
        prev = t;
    }
    longest
}

/// Shortest segment of the segmentation of `1..=n` induced by `taus`.
pub fn shortest_segment(taus: &[usize], n: usize) -> usize {
    let mut prev = 0;
    let mut shortest = usize::MAX;
    for &t in taus.iter().chain(std::iter::once(&n)) {
        shortest = shortest.min(t.saturating_sub(prev));
        prev = t;
    }
    shortest
}

fn directed(from: &[usize], to: &[usize]) -> usize {
    from.iter()
        .map(|&a| {
            to.iter()
                .map(|&b| a.abs_diff(b))
                .min()
                .unwrap_or(usize::MAX)
        })
        .max()
        .unwrap_or(0)
}

/// Symmetric Hausdorff distance between changepoint sets divided by `n_s`.
///
/// Both empty gives 0; exactly one empty gives `+inf`.
pub fn hausdorff_scaled(truth: &[usize], est: &[usize], n_s: usize) -> f64 {
    match (truth.is_empty(), est.is_empty()) {
        (true, true) => 0.0,
        (true, false) | (false, true) => f64::INFINITY,
        _ => directed(truth, est).max(directed(est, truth)) as f64 / n_s.max(1) as f64,
    }
}

/// Proportion of true changes detected within `threshold`, and proportion
/// of estimates that are false positives.
pub fn tp_fp(truth: &[usize], est: &[usize], threshold: usize) -> (f64, f64) {
    let tp = truth
        .iter()
        .filter(|&&t| est.iter().any(|&e| e.abs_diff(t) <= threshold))
        .count();
    let fp = est.len().saturating_sub(tp);
    let tp_prop = if truth.is_empty() {
        1.0
    } else {
        tp as f64 / truth.len() as f64
    };
    let fp_prop = if est.is_empty() {
        0.0
    } else {
        fp as f64 / est.len() as f64
    };
    (tp_prop, fp_prop)
}
