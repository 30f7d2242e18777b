//! Posterior means eₙ(a) = E(G | a₁..aₙ) and the pushforward estimator μ̂ₙ.
//!
//! With μ = Σᵢ wᵢ δ_{gᵢ} the conditional expectation is the Bayes ratio
//! eₙ(a) = Σᵢ wᵢ Lᵢ(a) gᵢ / Σᵢ wᵢ Lᵢ(a) with Lᵢ(a) = Π_{j≤n} β_{j aⱼ}(gᵢ).
//! Likelihoods are accumulated as sums of logs.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LlsError, Result};
use crate::measure::{draw_from_rows, rows_of, MixingMeasure, OutcomeSequence};
use crate::model::{LatentPoint, ModelSpec};
use crate::rng::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PosteriorResult {
    pub point: LatentPoint,
    /// wᵢLᵢ / Σ wᵢLᵢ per atom.
    pub atom_posteriors: Vec<f64>,
    /// ln Lᵢ(a) per atom (−∞ where the outcome is impossible).
    pub log_likelihoods: Vec<f64>,
    pub n: usize,
}

impl PosteriorResult {
    /// Index and posterior mass of the heaviest atom (first on ties).
    pub fn top_atom(&self) -> (usize, f64) {
        self.atom_posteriors.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |best, (i, p)| {
                if p > best.1 {
                    (i, p)
                } else {
                    best
                }
            },
        )
    }
}

/// Per-atom profile tables for items 1..=n_max, shared across many
/// posterior evaluations and draws.
pub struct PosteriorEngine<'a> {
    mu: &'a MixingMeasure,
    n_max: usize,
    /// rows[atom][item - 1]
    rows: Vec<Vec<Vec<f64>>>,
    /// log_rows[item - 1][atom][category - 1], empty for uninformative items
    log_rows: Vec<Vec<Vec<f64>>>,
    /// ln of the shared row for items where every atom has the same row
    shared_log_rows: Vec<Option<Vec<f64>>>,
}

impl<'a> PosteriorEngine<'a> {
    pub fn new(mu: &'a MixingMeasure, model: &ModelSpec, n_max: usize) -> Result<Self> {
        mu.check_against(model)?;
        if n_max > 0 && !model.items().reaches(n_max) {
            return Err(LlsError::OutOfRange {
                item: n_max,
                horizon: model.horizon(),
            });
        }
        let rows = mu
            .atoms()
            .iter()
            .map(|a| rows_of(a.g.coords(), n_max, model))
            .collect::<Result<Vec<_>>>()?;
        let ln_row = |row: &Vec<f64>| -> Vec<f64> {
            row.iter()
                .map(|&p| {
                    if p > 0.0 {
                        p.min(1.0).ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect()
        };
        let mut log_rows = Vec::with_capacity(n_max);
        let mut shared_log_rows = Vec::with_capacity(n_max);
        for j in 0..n_max {
            let first = &rows[0][j];
            if rows.iter().all(|r| &r[j] == first) {
                log_rows.push(Vec::new());
                shared_log_rows.push(Some(ln_row(first)));
            } else {
                log_rows.push(rows.iter().map(|r| ln_row(&r[j])).collect());
                shared_log_rows.push(None);
            }
        }
        Ok(PosteriorEngine {
            mu,
            n_max,
            rows,
            log_rows,
            shared_log_rows,
        })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Number of items among 1..=n_max that separate at least two atoms.
    pub fn informative_items(&self) -> usize {
        self.shared_log_rows.iter().filter(|s| s.is_none()).count()
    }

    pub fn posterior(&self, a: &[usize]) -> Result<PosteriorResult> {
        if a.len() > self.n_max {
            return Err(LlsError::OutOfRange {
                item: a.len(),
                horizon: self.n_max,
            });
        }
        let atoms = self.mu.atoms();
        let mut ll = vec![0.0; atoms.len()];
        let mut common = 0.0;
        for (j, &l) in a.iter().enumerate() {
            let count = self.rows[0][j].len();
            if l == 0 || l > count {
                return Err(LlsError::Category {
                    item: j + 1,
                    category: l,
                    count,
                });
            }
            match &self.shared_log_rows[j] {
                Some(shared) => common += shared[l - 1],
                None => {
                    for (acc, table) in ll.iter_mut().zip(&self.log_rows[j]) {
                        *acc += table[l - 1];
                    }
                }
            }
        }
        let log_likelihoods: Vec<f64> = ll.iter().map(|x| x + common).collect();
        let log_post: Vec<f64> = atoms
            .iter()
            .zip(&log_likelihoods)
            .map(|(atom, l)| atom.w.ln() + l)
            .collect();
        let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(LlsError::ZeroEvidence);
        }
        let mut atom_posteriors: Vec<f64> = log_post.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = atom_posteriors.iter().sum();
        for p in &mut atom_posteriors {
            *p /= total;
        }
        let mut point = vec![0.0; self.mu.dim()];
        for (atom, &p) in atoms.iter().zip(&atom_posteriors) {
            if p > 0.0 {
                for (x, g) in point.iter_mut().zip(atom.g.coords()) {
                    *x += p * g;
                }
            }
        }
        Ok(PosteriorResult {
            point: LatentPoint::from_raw(point),
            atom_posteriors,
            log_likelihoods,
            n: a.len(),
        })
    }

    /// n outcomes from P_{g_atom}.
    pub fn draw<R: Rng + ?Sized>(&self, atom: usize, n: usize, rng: &mut R) -> OutcomeSequence {
        draw_from_rows(&self.rows[atom][..n], rng)
    }
}

/// eₙ(a) for a single outcome sequence.
pub fn posterior_mean(
    mu: &MixingMeasure,
    model: &ModelSpec,
    a: &OutcomeSequence,
) -> Result<PosteriorResult> {
    PosteriorEngine::new(mu, model, a.len())?.posterior(a.values())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalProvenance {
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
}

/// Weighted point cloud on Q.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalMeasureQ {
    pub points: Vec<LatentPoint>,
    pub weights: Vec<f64>,
    pub provenance: Option<EmpiricalProvenance>,
}

impl EmpiricalMeasureQ {
    pub fn new(points: Vec<LatentPoint>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(LlsError::Parameter(
                "empirical measure needs as many weights as points, at least one".into(),
            ));
        }
        if weights.iter().any(|w| w.is_nan() || *w <= 0.0) {
            return Err(LlsError::Parameter("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(LlsError::Parameter(format!("weights sum to {total}")));
        }
        Ok(EmpiricalMeasureQ {
            points,
            weights,
            provenance: None,
        })
    }

    pub fn uniform(points: Vec<LatentPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(LlsError::Parameter(
                "empirical measure needs a point".into(),
            ));
        }
        // skips the sum check: naive summation of M copies of 1/M drifts
        // past 1e-12 for very large M
        let w = 1.0 / points.len() as f64;
        Ok(EmpiricalMeasureQ {
            weights: vec![w; points.len()],
            points,
            provenance: None,
        })
    }

    pub fn from_mixing(mu: &MixingMeasure) -> Self {
        EmpiricalMeasureQ {
            points: mu.atoms().iter().map(|a| a.g.clone()).collect(),
            weights: mu.atoms().iter().map(|a| a.w).collect(),
            provenance: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for (mi, x) in m.iter_mut().zip(p.coords()) {
                *mi += w * x;
            }
        }
        m
    }

    /// Distinct points after rounding coordinates to `decimals`.
    pub fn distinct_points(&self, decimals: i32) -> Vec<Vec<f64>> {
        let scale = 10f64.powi(decimals);
        let mut out: Vec<Vec<f64>> = self
            .points
            .iter()
            .map(|p| {
                p.coords()
                    .iter()
                    .map(|x| (x * scale).round() / scale)
                    .collect()
            })
            .collect();
        out.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        out.dedup();
        out
    }
}

/// Atom index for each of `m` replicates by systematic resampling with a
/// single uniform offset.
fn stratified_atoms(mu: &MixingMeasure, m: usize, offset: f64) -> Vec<usize> {
    (0..m)
        .map(|i| mu.atom_at((i as f64 + offset) / m as f64))
        .collect()
}

/// μ̂ₙ realized as the empirical law of eₙ(a⁽ⁱ⁾) over M replicates.
///
/// Replicate i draws its latent atom by systematic resampling of μ (one
/// offset from stream 0 of `seed`) and its outcomes from stream i + 1, so
/// the point order is fixed regardless of thread count.
pub fn pushforward_estimate(
    mu: &MixingMeasure,
    model: &ModelSpec,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<EmpiricalMeasureQ> {
    let engine = PosteriorEngine::new(mu, model, n)?;
    pushforward_with(&engine, n, replicates, seed)
}

pub(crate) fn pushforward_with(
    engine: &PosteriorEngine<'_>,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<EmpiricalMeasureQ> {
    if replicates == 0 {
        return Err(LlsError::Parameter("need at least one replicate".into()));
    }
    let offset: f64 = stream_rng(seed, 0).random();
    let atoms = stratified_atoms(engine.mu, replicates, offset);
    let points = atoms
        .par_iter()
        .enumerate()
        .map(|(i, &atom)| {
            let mut rng = stream_rng(seed, i as u64 + 1);
            let a = engine.draw(atom, n, &mut rng);
            engine.posterior(a.values()).map(|r| r.point)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut est = EmpiricalMeasureQ::uniform(points)?;
    est.provenance = Some(EmpiricalProvenance {
        n,
        replicates,
        seed,
    });
    Ok(est)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub n: usize,
    pub estimate: LatentPoint,
}

/// Posterior means along one outcome stream drawn from P_g.
pub fn individual_trajectory(
    g: &LatentPoint,
    mu: &MixingMeasure,
    model: &ModelSpec,
    n_list: &[usize],
    seed: u64,
) -> Result<Vec<TrajectoryPoint>> {
    let n_max = n_list.iter().copied().max().unwrap_or(0);
    model.require_in_q(g)?;
    let engine = PosteriorEngine::new(mu, model, n_max)?;
    let rows = rows_of(g.coords(), n_max, model)?;
    let a = draw_from_rows(&rows, &mut stream_rng(seed, 0));
    n_list
        .iter()
        .map(|&n| {
            engine.posterior(&a.values()[..n]).map(|r| TrajectoryPoint {
                n,
                estimate: r.point,
            })
        })
        .collect()
}
