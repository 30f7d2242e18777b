//! Distances between measures on Q and the convergence-curve experiment.
//!
//! Weak convergence on the compact set Q is tracked with the 1-D
//! Wasserstein distance of a projection (enough when the latent space is
//! effectively one-dimensional) or with the energy distance in general.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LlsError, Result};
use crate::measure::MixingMeasure;
use crate::model::ModelSpec;
use crate::posterior::{pushforward_with, EmpiricalMeasureQ, PosteriorEngine};
use crate::rng::{derive_seed, stream_rng};

/// Exact energy distance is used while (|e1| + |e2|)² stays below this.
pub const ENERGY_EXACT_BUDGET: usize = 25_000_000;
/// Per-measure subsample size above the budget.
pub const ENERGY_SUBSAMPLE: usize = 2_000;

/// Direction onto which points are projected before a 1-D comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Projection {
    Coordinate(usize),
    Direction(Vec<f64>),
}

impl Default for Projection {
    fn default() -> Self {
        Projection::Coordinate(0)
    }
}

impl Projection {
    fn check(&self, dim: usize) -> Result<()> {
        match self {
            Projection::Coordinate(i) if *i < dim => Ok(()),
            Projection::Direction(d) if d.len() == dim && d.iter().any(|x| *x != 0.0) => Ok(()),
            _ => Err(LlsError::Parameter(format!(
                "projection {self:?} does not fit dimension {dim}"
            ))),
        }
    }

    fn apply(&self, x: &[f64]) -> f64 {
        match self {
            Projection::Coordinate(i) => x[*i],
            Projection::Direction(d) => d.iter().zip(x).map(|(a, b)| a * b).sum(),
        }
    }
}

fn check_pair(e1: &EmpiricalMeasureQ, e2: &EmpiricalMeasureQ) -> Result<()> {
    if e1.is_empty() || e2.is_empty() {
        return Err(LlsError::Parameter("empty measure".into()));
    }
    if e1.dim() != e2.dim() {
        return Err(LlsError::Dimension {
            expected: e1.dim(),
            got: e2.dim(),
        });
    }
    Ok(())
}

/// Exact W₁ between the projected measures: ∫ |F₁ − F₂| over the merged
/// support.
pub fn wasserstein1_1d(
    e1: &EmpiricalMeasureQ,
    e2: &EmpiricalMeasureQ,
    projection: &Projection,
) -> Result<f64> {
    check_pair(e1, e2)?;
    projection.check(e1.dim())?;
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(e1.len() + e2.len());
    events.extend(
        e1.points
            .iter()
            .zip(&e1.weights)
            .map(|(p, &w)| (projection.apply(p.coords()), w)),
    );
    events.extend(
        e2.points
            .iter()
            .zip(&e2.weights)
            .map(|(p, &w)| (projection.apply(p.coords()), -w)),
    );
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut gap = 0.0;
    let mut area = 0.0;
    for pair in events.windows(2) {
        gap += pair[0].1;
        area += gap.abs() * (pair[1].0 - pair[0].0);
    }
    Ok(area)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn mean_distance(xs: &[&[f64]], wx: &[f64], ys: &[&[f64]], wy: &[f64]) -> f64 {
    xs.iter()
        .zip(wx)
        .map(|(x, a)| {
            a * ys
                .iter()
                .zip(wy)
                .map(|(y, b)| b * euclid(x, y))
                .sum::<f64>()
        })
        .sum()
}

fn resample(e: &EmpiricalMeasureQ, size: usize, seed: u64, stream: u64) -> Vec<&[f64]> {
    let mut rng = stream_rng(seed, stream);
    let mut cdf = Vec::with_capacity(e.len());
    let mut acc = 0.0;
    for w in &e.weights {
        acc += w;
        cdf.push(acc);
    }
    (0..size)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let i = cdf.partition_point(|&c| c <= u).min(e.len() - 1);
            e.points[i].coords()
        })
        .collect()
}

/// 2E‖X − Y‖ − E‖X − X′‖ − E‖Y − Y′‖, exact over the atoms while the pair
/// count fits [`ENERGY_EXACT_BUDGET`], otherwise over seeded subsamples.
/// Points and their weights.
type WeightedCloud<'a> = (Vec<&'a [f64]>, Vec<f64>);

pub fn energy_distance(e1: &EmpiricalMeasureQ, e2: &EmpiricalMeasureQ, seed: u64) -> Result<f64> {
    check_pair(e1, e2)?;
    let total = e1.len() + e2.len();
    let ((xs, wx), (ys, wy)): (WeightedCloud, WeightedCloud) =
        if total.saturating_mul(total) <= ENERGY_EXACT_BUDGET {
            (
                (
                    e1.points.iter().map(|p| p.coords()).collect(),
                    e1.weights.clone(),
                ),
                (
                    e2.points.iter().map(|p| p.coords()).collect(),
                    e2.weights.clone(),
                ),
            )
        } else {
            let w = vec![1.0 / ENERGY_SUBSAMPLE as f64; ENERGY_SUBSAMPLE];
            (
                (resample(e1, ENERGY_SUBSAMPLE, seed, 0), w.clone()),
                (resample(e2, ENERGY_SUBSAMPLE, seed, 1), w),
            )
        };
    let cross = mean_distance(&xs, &wx, &ys, &wy);
    let within_x = mean_distance(&xs, &wx, &xs, &wx);
    let within_y = mean_distance(&ys, &wy, &ys, &wy);
    Ok((2.0 * cross - within_x - within_y).max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Metric {
    Wasserstein1 {
        #[serde(default)]
        projection: Projection,
    },
    Energy,
}

impl Default for Metric {
    fn default() -> Self {
        Metric::Wasserstein1 {
            projection: Projection::default(),
        }
    }
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Wasserstein1 { .. } => "wasserstein1",
            Metric::Energy => "energy",
        }
    }

    pub fn distance(
        &self,
        e1: &EmpiricalMeasureQ,
        e2: &EmpiricalMeasureQ,
        seed: u64,
    ) -> Result<f64> {
        match self {
            Metric::Wasserstein1 { projection } => wasserstein1_1d(e1, e2, projection),
            Metric::Energy => energy_distance(e1, e2, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub n: usize,
    pub replicates: usize,
    pub repeats: usize,
    pub mean_distance: f64,
    pub stderr: f64,
    pub distances: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveVerdict {
    Converging,
    Plateau,
    Undecided,
}

/// Rules the verdict was derived from, echoed into every report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VerdictRules {
    /// Converging needs last mean < first mean / decay_factor.
    pub decay_factor: f64,
    /// Converging needs |floor| ≤ converge_sigmas · floor_stderr.
    pub converge_sigmas: f64,
    /// Plateau needs floor > plateau_sigmas · floor_stderr.
    pub plateau_sigmas: f64,
    /// Curves whose means all sit below this count as already converged.
    pub zero_tol: f64,
}

impl Default for VerdictRules {
    fn default() -> Self {
        VerdictRules {
            decay_factor: 5.0,
            converge_sigmas: 2.0,
            plateau_sigmas: 5.0,
            zero_tol: 1e-12,
        }
    }
}

/// Least-squares fit of mean_distance(n) = floor + slope / √n.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurveFit {
    pub floor: f64,
    pub floor_stderr: f64,
    pub slope: f64,
    /// last mean / first mean
    pub decay_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceCurve {
    pub scenario: String,
    pub metric: Metric,
    pub seed: u64,
    pub rows: Vec<CurveRow>,
    pub fit: CurveFit,
    pub rules: VerdictRules,
    pub verdict: CurveVerdict,
    /// Distance between the reference and a refined quadrature of it.
    pub discretization_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSettings {
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub repeats: usize,
    pub metric: Metric,
    pub seed: u64,
}

impl CurveSettings {
    fn validate(&self, model: &ModelSpec) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LlsError::Parameter(
                "n_grid must be nonempty and strictly increasing".into(),
            ));
        }
        if self.replicates == 0 || self.repeats == 0 {
            return Err(LlsError::Parameter("M and R must be at least 1".into()));
        }
        let last = *self.n_grid.last().unwrap();
        if last > 0 && !model.items().reaches(last) {
            return Err(LlsError::OutOfRange {
                item: last,
                horizon: model.horizon(),
            });
        }
        Ok(())
    }
}

pub fn fit_curve(rows: &[CurveRow]) -> CurveFit {
    let means: Vec<f64> = rows.iter().map(|r| r.mean_distance).collect();
    let first = means[0];
    let last = *means.last().unwrap();
    let decay_ratio = if first > 0.0 { last / first } else { 0.0 };
    if rows.len() == 1 {
        return CurveFit {
            floor: first,
            floor_stderr: rows[0].stderr,
            slope: 0.0,
            decay_ratio,
        };
    }
    let xs: Vec<f64> = rows
        .iter()
        .map(|r| 1.0 / (r.n.max(1) as f64).sqrt())
        .collect();
    let m = xs.len() as f64;
    let x_bar = xs.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - x_bar) * (x - x_bar)).sum();
    // floor = Σ aᵢ dᵢ with aᵢ = 1/m − x̄ (xᵢ − x̄)/Sxx
    let coef: Vec<f64> = xs
        .iter()
        .map(|x| 1.0 / m - x_bar * (x - x_bar) / sxx)
        .collect();
    let floor: f64 = coef.iter().zip(&means).map(|(a, d)| a * d).sum();
    let floor_stderr = coef
        .iter()
        .zip(rows)
        .map(|(a, r)| a * a * r.stderr * r.stderr)
        .sum::<f64>()
        .sqrt();
    // distances are nonnegative, so a negative intercept (faster than 1/√n
    // decay) is refit through the origin
    if floor < 0.0 {
        let slope = xs.iter().zip(&means).map(|(x, d)| x * d).sum::<f64>()
            / xs.iter().map(|x| x * x).sum::<f64>();
        return CurveFit {
            floor: 0.0,
            floor_stderr,
            slope,
            decay_ratio,
        };
    }
    let slope = xs
        .iter()
        .zip(&means)
        .map(|(x, d)| (x - x_bar) * d)
        .sum::<f64>()
        / sxx;
    CurveFit {
        floor,
        floor_stderr,
        slope,
        decay_ratio,
    }
}

pub fn classify(rows: &[CurveRow], fit: &CurveFit, rules: &VerdictRules) -> CurveVerdict {
    let first = rows[0].mean_distance;
    let last = rows.last().unwrap().mean_distance;
    let all_zero = rows.iter().all(|r| r.mean_distance <= rules.zero_tol);
    let decayed = last < first / rules.decay_factor || all_zero;
    let floor_at_zero =
        fit.floor.abs() <= rules.converge_sigmas * fit.floor_stderr + rules.zero_tol;
    if decayed && floor_at_zero {
        CurveVerdict::Converging
    } else if fit.floor > rules.plateau_sigmas * fit.floor_stderr && fit.floor > rules.zero_tol {
        CurveVerdict::Plateau
    } else {
        CurveVerdict::Undecided
    }
}

/// For each n in the grid, R independent μ̂ₙ estimates of M replicates each,
/// compared with `reference` under `settings.metric`.
///
/// Cell (n-index, repeat) uses seed `derive_seed(seed, [n-index, repeat])`
/// and cells are collected in grid order, so output does not depend on the
/// worker count.
pub fn convergence_curve(
    scenario: &str,
    model: &ModelSpec,
    mu: &MixingMeasure,
    reference: &MixingMeasure,
    settings: &CurveSettings,
    refinement: Option<&MixingMeasure>,
) -> Result<ConvergenceCurve> {
    settings.validate(model)?;
    let n_max = *settings.n_grid.last().unwrap();
    let engine = PosteriorEngine::new(mu, model, n_max)?;
    let reference_q = EmpiricalMeasureQ::from_mixing(reference);
    let cells: Vec<(usize, usize)> = (0..settings.n_grid.len())
        .flat_map(|i| (0..settings.repeats).map(move |r| (i, r)))
        .collect();
    let distances = cells
        .par_iter()
        .map(|&(i, r)| {
            let cell_seed = derive_seed(settings.seed, &[i as u64, r as u64]);
            let est =
                pushforward_with(&engine, settings.n_grid[i], settings.replicates, cell_seed)?;
            settings
                .metric
                .distance(&est, &reference_q, derive_seed(cell_seed, &[u64::MAX]))
        })
        .collect::<Result<Vec<f64>>>()?;

    let rows: Vec<CurveRow> = settings
        .n_grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let d = distances[i * settings.repeats..(i + 1) * settings.repeats].to_vec();
            let r = d.len() as f64;
            let mean = d.iter().sum::<f64>() / r;
            let stderr = if d.len() > 1 {
                (d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (r - 1.0)).sqrt()
                    / r.sqrt()
            } else {
                0.0
            };
            CurveRow {
                n,
                replicates: settings.replicates,
                repeats: settings.repeats,
                mean_distance: mean,
                stderr,
                distances: d,
            }
        })
        .collect();
    let fit = fit_curve(&rows);
    let rules = VerdictRules::default();
    let verdict = classify(&rows, &fit, &rules);
    let discretization_error = refinement
        .map(|fine| {
            settings.metric.distance(
                &reference_q,
                &EmpiricalMeasureQ::from_mixing(fine),
                derive_seed(settings.seed, &[u64::MAX, u64::MAX]),
            )
        })
        .transpose()?;
    Ok(ConvergenceCurve {
        scenario: scenario.to_string(),
        metric: settings.metric.clone(),
        seed: settings.seed,
        rows,
        fit,
        rules,
        verdict,
        discretization_error,
    })
}
