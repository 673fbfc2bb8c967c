//! Search space over the cognitive parameters and ridge strength, and a
//! seeded sequential sampler (random start-up trials, then a tree-structured
//! Parzen estimator).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cognitive::CognitiveParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Random,
    #[default]
    Tpe,
}

/// Closed search intervals, each strictly inside the parameter's admissible range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub threshold: [f64; 2],
    /// Searched on a log scale.
    pub temperature: [f64; 2],
    pub scatter: [f64; 2],
    pub prior_scatter: [f64; 2],
    /// Ridge strengths relative to the mean diagonal of the centred Gram matrix.
    pub ridge_grid: Vec<f64>,
    pub budget: usize,
    /// Taken from the run seed rather than the search section.
    #[serde(skip)]
    pub seed: u64,
    pub sampler: SamplerKind,
    /// Random trials before the density model takes over.
    pub startup_trials: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            threshold: [0.05, 0.99],
            temperature: [0.1, 10.0],
            scatter: [0.01, 0.99],
            prior_scatter: [0.01, 0.99],
            ridge_grid: (-3..=3).map(|e| 10f64.powi(e)).collect(),
            budget: 50,
            seed: 0,
            sampler: SamplerKind::Tpe,
            startup_trials: 10,
        }
    }
}

/// Names of the searched parameters, in the order used by trial records.
pub const PARAMETER_NAMES: [&str; 5] = [
    "threshold",
    "temperature",
    "scatter",
    "prior_scatter",
    "ridge",
];

/// One point of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub threshold: f64,
    pub temperature: f64,
    pub scatter: f64,
    pub prior_scatter: f64,
    /// Relative ridge strength, one of the grid values.
    pub ridge: f64,
}

impl TrialParams {
    pub fn cognitive(&self) -> CognitiveParams {
        CognitiveParams {
            threshold: self.threshold,
            temperature: self.temperature,
            scatter: self.scatter,
            prior_scatter: self.prior_scatter,
        }
    }

    pub fn with_cognitive(c: &CognitiveParams, ridge: f64) -> Self {
        Self {
            threshold: c.threshold,
            temperature: c.temperature,
            scatter: c.scatter,
            prior_scatter: c.prior_scatter,
            ridge,
        }
    }
}

impl SearchSpace {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, r) in [
            ("threshold", self.threshold),
            ("scatter", self.scatter),
            ("prior_scatter", self.prior_scatter),
        ] {
            if !(r[0] > 0.0 && r[0] <= r[1] && r[1] < 1.0) {
                v.push(format!(
                    "search.{name} = {r:?} must satisfy 0 < low <= high < 1"
                ));
            }
        }
        let t = self.temperature;
        if !(t[0] > 0.0 && t[0] <= t[1] && t[1].is_finite()) {
            v.push(format!(
                "search.temperature = {t:?} must satisfy 0 < low <= high < inf"
            ));
        }
        if self.ridge_grid.is_empty() {
            v.push("search.ridge_grid must not be empty".into());
        }
        if let Some(r) = self
            .ridge_grid
            .iter()
            .find(|r| !(r.is_finite() && **r >= 0.0))
        {
            v.push(format!(
                "search.ridge_grid value {r} must be finite and non-negative"
            ));
        }
        if self.budget == 0 {
            v.push("search.budget must be at least 1".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    fn continuous(&self) -> [[f64; 2]; 4] {
        [
            self.threshold,
            self.temperature,
            self.scatter,
            self.prior_scatter,
        ]
    }

    /// Maps unit coordinates to parameter values.
    pub fn point(&self, unit: &UnitPoint) -> TrialParams {
        let r = self.continuous();
        let lin = |i: usize| r[i][0] + unit.coords[i] * (r[i][1] - r[i][0]);
        let (lo, hi) = (r[1][0].ln(), r[1][1].ln());
        TrialParams {
            threshold: lin(0).clamp(r[0][0], r[0][1]),
            temperature: (lo + unit.coords[1] * (hi - lo))
                .exp()
                .clamp(r[1][0], r[1][1]),
            scatter: lin(2).clamp(r[2][0], r[2][1]),
            prior_scatter: lin(3).clamp(r[3][0], r[3][1]),
            ridge: self.ridge_grid[unit.ridge.min(self.ridge_grid.len() - 1)],
        }
    }

    /// Inverse of [`SearchSpace::point`] for in-range values; the ridge snaps to the nearest grid entry.
    pub fn unit(&self, p: &TrialParams) -> UnitPoint {
        let r = self.continuous();
        let frac = |v: f64, b: [f64; 2]| {
            if b[1] > b[0] {
                ((v - b[0]) / (b[1] - b[0])).clamp(0.0, 1.0)
            } else {
                0.5
            }
        };
        let t = r[1];
        let log_frac = if t[1] > t[0] {
            ((p.temperature.ln() - t[0].ln()) / (t[1].ln() - t[0].ln())).clamp(0.0, 1.0)
        } else {
            0.5
        };
        let ridge = self
            .ridge_grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - p.ridge).abs().total_cmp(&(b.1 - p.ridge).abs()))
            .map_or(0, |(i, _)| i);
        UnitPoint {
            coords: [
                frac(p.threshold, r[0]),
                log_frac,
                frac(p.scatter, r[2]),
                frac(p.prior_scatter, r[3]),
            ],
            ridge,
        }
    }
}

/// A point in unit coordinates: four continuous values in `[0, 1]` and a ridge grid index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitPoint {
    pub coords: [f64; 4],
    pub ridge: usize,
}

/// Fraction of completed trials treated as "good" by the density model.
const GOOD_FRACTION: f64 = 0.25;
const MAX_GOOD: usize = 25;
/// Candidates drawn from the good-trial density per proposal.
const CANDIDATES: usize = 24;
const MIN_BANDWIDTH: f64 = 0.02;
/// Kernel width at one good trial, as a fraction of each unit interval.
const BANDWIDTH_SCALE: f64 = 0.2;

/// Seeded sequential sampler; identical seeds and histories give identical proposals.
pub struct Sampler {
    kind: SamplerKind,
    startup: usize,
    n_ridge: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(space: &SearchSpace) -> Self {
        Self {
            kind: space.sampler,
            startup: space.startup_trials,
            n_ridge: space.ridge_grid.len().max(1),
            rng: ChaCha8Rng::seed_from_u64(space.seed),
        }
    }

    fn random(&mut self) -> UnitPoint {
        UnitPoint {
            coords: std::array::from_fn(|_| self.rng.random::<f64>()),
            ridge: self.rng.random_range(0..self.n_ridge),
        }
    }

    /// Next point given the completed trials `(point, score)`; higher scores are better.
    pub fn propose(&mut self, history: &[(UnitPoint, f64)]) -> UnitPoint {
        if self.kind == SamplerKind::Random || history.len() < self.startup.max(2) {
            return self.random();
        }
        let mut order: Vec<usize> = (0..history.len()).collect();
        // Stable sort keeps ties in trial order, so proposals are reproducible.
        order.sort_by(|&a, &b| history[b].1.total_cmp(&history[a].1));
        let n_good = ((history.len() as f64 * GOOD_FRACTION).ceil() as usize).clamp(1, MAX_GOOD);
        let (good, bad): (Vec<UnitPoint>, Vec<UnitPoint>) = {
            let g = order[..n_good].iter().map(|&i| history[i].0).collect();
            let b = order[n_good..].iter().map(|&i| history[i].0).collect();
            (g, b)
        };
        let good_kde = Parzen::new(&good);
        let bad_kde = Parzen::new(&bad);
        let good_cat = Categorical::new(good.iter().map(|p| p.ridge), self.n_ridge);
        let bad_cat = Categorical::new(bad.iter().map(|p| p.ridge), self.n_ridge);

        let mut best: Option<(f64, UnitPoint)> = None;
        for _ in 0..CANDIDATES {
            let coords = good_kde.sample(&mut self.rng);
            let ridge = good_cat.sample(&mut self.rng);
            let score = good_kde.ln_density(&coords) - bad_kde.ln_density(&coords)
                + good_cat.ln_prob(ridge)
                - bad_cat.ln_prob(ridge);
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, UnitPoint { coords, ridge }));
            }
        }
        best.map_or_else(|| self.random(), |(_, p)| p)
    }
}

/// Mixture of product Gaussians on the unit hypercube plus a uniform prior
/// component. Each kernel spans all coordinates jointly, so correlated good
/// regions (such as a ridge between threshold and temperature) are kept.
struct Parzen {
    centres: Vec<[f64; 4]>,
    bandwidth: [f64; 4],
}

impl Parzen {
    fn new(points: &[UnitPoint]) -> Self {
        let centres: Vec<[f64; 4]> = points.iter().map(|p| p.coords).collect();
        let n = centres.len().max(1) as f64;
        // Fixed magnitude shrinking slowly with n; a spread-based rule collapses
        // onto early good trials and stops exploring.
        let h = (BANDWIDTH_SCALE * n.powf(-1.0 / 8.0)).max(MIN_BANDWIDTH);
        let bandwidth = [h; 4];
        Self { centres, bandwidth }
    }

    fn n_components(&self) -> usize {
        self.centres.len() + 1
    }

    fn ln_density(&self, x: &[f64; 4]) -> f64 {
        let kernel = |v: f64, c: f64, h: f64| {
            let z = |t: f64| 0.5 * (1.0 + erf((t - c) / (h * std::f64::consts::SQRT_2)));
            let mass = (z(1.0) - z(0.0)).max(1e-300);
            let u = (v - c) / h;
            (-0.5 * u * u).exp() / (h * (2.0 * std::f64::consts::PI).sqrt()) / mass
        };
        let kernel_sum: f64 = self
            .centres
            .iter()
            .map(|c| {
                (0..4)
                    .map(|d| kernel(x[d], c[d], self.bandwidth[d]))
                    .product::<f64>()
            })
            .sum();
        // The uniform prior has density 1 on the unit hypercube.
        ((kernel_sum + 1.0) / self.n_components() as f64).ln()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 4] {
        let k = rng.random_range(0..self.n_components());
        if k == self.centres.len() {
            return std::array::from_fn(|_| rng.random::<f64>());
        }
        std::array::from_fn(|d| {
            let normal =
                Normal::new(self.centres[k][d], self.bandwidth[d]).expect("positive bandwidth");
            for _ in 0..64 {
                let v = normal.sample(rng);
                if (0.0..=1.0).contains(&v) {
                    return v;
                }
            }
            self.centres[k][d].clamp(0.0, 1.0)
        })
    }
}

/// Smoothed frequencies over ridge grid indices.
struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    fn new(values: impl Iterator<Item = usize>, n: usize) -> Self {
        let mut counts = vec![1.0; n];
        for v in values {
            counts[v.min(n - 1)] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        Self {
            probs: counts.into_iter().map(|c| c / total).collect(),
        }
    }

    fn ln_prob(&self, k: usize) -> f64 {
        self.probs[k].ln()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u = rng.random::<f64>();
        let mut acc = 0.0;
        for (k, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        self.probs.len() - 1
    }
}

/// Error function (Abramowitz and Stegun 7.1.26, |error| < 1.5e-7), ample for kernel truncation weights.
fn erf(x: f64) -> f64 {
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736
                + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    sign * (1.0 - poly * (-x * x).exp())
}
