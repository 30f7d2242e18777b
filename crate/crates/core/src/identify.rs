//! Covariance structure of the mixing measure and its rank.
//!
//! For a mixing measure μ supported on a K-dimensional latent hyperplane the
//! profile covariance C = Cov_μ(β_{jl}, β_{j′l′}) has rank at most K − 1 (the
//! constraint Σₖ gₖ = 1 removes one direction) and at most (#atoms − 1).
//! Rank is estimated from singular values with a relative cutoff.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Serialize, Serializer};

use crate::error::{LlsError, Result};
use crate::measure::{rows_of, MixingMeasure};
use crate::model::ModelSpec;
use crate::rng::stream_rng;

pub const DEFAULT_RANK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    ExactFromAtoms,
    MonteCarlo { samples: usize, seed: u64 },
}

fn matrix_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovarianceBlock {
    /// `(item, category)` labels of rows and columns, both 1-based.
    pub index: Vec<(usize, usize)>,
    #[serde(serialize_with = "matrix_rows")]
    pub matrix: DMatrix<f64>,
    pub provenance: Provenance,
}

impl CovarianceBlock {
    /// Column labels `b{j}_{l}`.
    pub fn labels(&self) -> Vec<String> {
        self.index
            .iter()
            .map(|(j, l)| format!("b{j}_{l}"))
            .collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let m = &self.matrix;
        (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
    }

    /// Smallest eigenvalue ≥ −1e−8 · largest.
    pub fn is_psd(&self) -> bool {
        let eig = self.matrix.clone().symmetric_eigen();
        let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let min = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        min >= -1e-8 * max.max(f64::MIN_POSITIVE)
    }
}

/// Flattened β(g) over items 1..=J.
fn profile(g: &[f64], model: &ModelSpec, items: usize) -> Result<Vec<f64>> {
    Ok(rows_of(g, items, model)?.into_iter().flatten().collect())
}

fn index_set(model: &ModelSpec, items: usize) -> Result<Vec<(usize, usize)>> {
    let mut index = Vec::new();
    for j in 1..=items {
        for l in 1..=model.count(j)? {
            index.push((j, l));
        }
    }
    Ok(index)
}

fn check_items(model: &ModelSpec, items: usize) -> Result<()> {
    if items == 0 || items > model.horizon() {
        return Err(LlsError::OutOfRange {
            item: items,
            horizon: model.horizon(),
        });
    }
    Ok(())
}

fn weighted_covariance(profiles: &[Vec<f64>], weights: &[f64]) -> DMatrix<f64> {
    let d = profiles[0].len();
    let mut mean = vec![0.0; d];
    for (p, &w) in profiles.iter().zip(weights) {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += w * x;
        }
    }
    let mut c = DMatrix::zeros(d, d);
    for (p, &w) in profiles.iter().zip(weights) {
        let centered: Vec<f64> = p.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for a in 0..d {
            for b in a..d {
                c[(a, b)] += w * centered[a] * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            c[(a, b)] = c[(b, a)];
        }
    }
    c
}

/// Exact weighted covariance of the profile entries over the atoms of μ.
pub fn mixing_covariance(
    mu: &MixingMeasure,
    model: &ModelSpec,
    items: usize,
) -> Result<CovarianceBlock> {
    check_items(model, items)?;
    mu.check_against(model)?;
    let profiles = mu
        .atoms()
        .iter()
        .map(|a| profile(a.g.coords(), model, items))
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = mu.atoms().iter().map(|a| a.w).collect();
    Ok(CovarianceBlock {
        index: index_set(model, items)?,
        matrix: weighted_covariance(&profiles, &weights),
        provenance: Provenance::ExactFromAtoms,
    })
}

/// Covariance estimated from `samples` latent draws of μ.
pub fn sampled_covariance(
    mu: &MixingMeasure,
    model: &ModelSpec,
    items: usize,
    samples: usize,
    seed: u64,
) -> Result<CovarianceBlock> {
    check_items(model, items)?;
    mu.check_against(model)?;
    if samples < 2 {
        return Err(LlsError::Parameter("need at least 2 samples".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let profiles = (0..samples)
        .map(|_| {
            let idx = mu.atom_at(rng.random());
            profile(mu.atoms()[idx].g.coords(), model, items)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = vec![1.0 / samples as f64; samples];
    Ok(CovarianceBlock {
        index: index_set(model, items)?,
        matrix: weighted_covariance(&profiles, &weights),
        provenance: Provenance::MonteCarlo { samples, seed },
    })
}

/// Singular values in descending order and the count at or above
/// `rel_tol` times the largest.
pub fn singular_value_rank(m: &DMatrix<f64>, rel_tol: f64) -> (usize, Vec<f64>) {
    let mut sv: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let largest = sv.first().copied().unwrap_or(0.0);
    if largest <= 0.0 {
        return (0, sv);
    }
    let rank = sv.iter().filter(|&&s| s >= rel_tol * largest).count();
    (rank, sv)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankVerdict {
    /// Centered rank equals K − 1.
    Consistent,
    Inconsistent,
    /// Zero covariance: μ carries no spread to identify anything from.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankReport {
    pub k: usize,
    pub rank: usize,
    pub expected_rank: usize,
    pub rel_tol: f64,
    pub singular_values: Vec<f64>,
    pub verdict: RankVerdict,
    /// Rank of the uncentered atom-profile matrix, when computed.
    pub profile_rank: Option<usize>,
    pub note: &'static str,
}

const RANK_NOTE: &str = "a full-support rank-K mixing measure on the hyperplane sum(g)=1 has \
centered covariance rank K-1 (every minor of size K vanishes, some minor of size K-1 does not); \
the uncentered atom-profile matrix has rank up to K";

pub fn rank_test(c: &CovarianceBlock, k: usize, rel_tol: f64) -> Result<RankReport> {
    if c.matrix.is_empty() {
        return Err(LlsError::Parameter("covariance matrix is empty".into()));
    }
    if k == 0 || rel_tol.is_nan() || rel_tol <= 0.0 {
        return Err(LlsError::Parameter(
            "K must be positive and rel_tol > 0".into(),
        ));
    }
    let (rank, singular_values) = singular_value_rank(&c.matrix, rel_tol);
    let expected_rank = k - 1;
    let verdict = if rank == 0 {
        RankVerdict::Degenerate
    } else if rank == expected_rank {
        RankVerdict::Consistent
    } else {
        RankVerdict::Inconsistent
    };
    Ok(RankReport {
        k,
        rank,
        expected_rank,
        rel_tol,
        singular_values,
        verdict,
        profile_rank: None,
        note: RANK_NOTE,
    })
}

/// Rank of the matrix whose rows are the atoms' profiles over items 1..=J.
pub fn profile_rank(
    mu: &MixingMeasure,
    model: &ModelSpec,
    items: usize,
    rel_tol: f64,
) -> Result<usize> {
    check_items(model, items)?;
    let profiles = mu
        .atoms()
        .iter()
        .map(|a| profile(a.g.coords(), model, items))
        .collect::<Result<Vec<_>>>()?;
    let m = DMatrix::from_fn(profiles.len(), profiles[0].len(), |r, c| profiles[r][c]);
    Ok(singular_value_rank(&m, rel_tol).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BasisVector, ItemSpace, LatentPoint};

    fn model3() -> ModelSpec {
        ModelSpec::new(
            vec![
                BasisVector::new(vec![vec![0.8, 0.1, 0.1], vec![0.6, 0.4], vec![0.1, 0.9]]),
                BasisVector::new(vec![vec![0.1, 0.8, 0.1], vec![0.3, 0.7], vec![0.5, 0.5]]),
                BasisVector::new(vec![vec![0.1, 0.1, 0.8], vec![0.9, 0.1], vec![0.7, 0.3]]),
            ],
            ItemSpace::new(vec![3, 2, 2], None).unwrap(),
        )
        .unwrap()
    }

    fn pt(c: &[f64]) -> LatentPoint {
        LatentPoint::new(c.to_vec()).unwrap()
    }

    #[test]
    fn dirac_has_zero_covariance() {
        let m = model3();
        let mu = MixingMeasure::dirac(pt(&[0.2, 0.3, 0.5]));
        let c = mixing_covariance(&mu, &m, 3).unwrap();
        assert!(c.matrix.iter().all(|&x| x == 0.0));
        let r = rank_test(&c, 3, DEFAULT_RANK_TOL).unwrap();
        assert_eq!((r.rank, r.verdict), (0, RankVerdict::Degenerate));
    }

    #[test]
    fn two_point_covariance_is_quarter_outer_product() {
        let m = model3();
        let (a, b) = (pt(&[0.6, 0.2, 0.2]), pt(&[0.1, 0.3, 0.6]));
        let mu = MixingMeasure::discrete(vec![(a.clone(), 0.5), (b.clone(), 0.5)]).unwrap();
        let c = mixing_covariance(&mu, &m, 3).unwrap();
        let pa = profile(a.coords(), &m, 3).unwrap();
        let pb = profile(b.coords(), &m, 3).unwrap();
        let d: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
        for i in 0..d.len() {
            for j in 0..d.len() {
                assert!((c.matrix[(i, j)] - 0.25 * d[i] * d[j]).abs() < 1e-15);
            }
        }
        assert_eq!(rank_test(&c, 2, DEFAULT_RANK_TOL).unwrap().rank, 1);
        let r3 = rank_test(&c, 3, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r3.verdict, RankVerdict::Inconsistent);
        assert!(c.is_symmetric(1e-10) && c.is_psd());
        assert_eq!(c.labels()[0], "b1_1");
        assert_eq!(c.labels().len(), 7);
    }

    #[test]
    fn three_atoms_general_position() {
        let m = model3();
        let mu = MixingMeasure::discrete(vec![
            (pt(&[0.7, 0.2, 0.1]), 0.3),
            (pt(&[0.1, 0.6, 0.3]), 0.3),
            (pt(&[0.2, 0.2, 0.6]), 0.4),
        ])
        .unwrap();
        let c = mixing_covariance(&mu, &m, 3).unwrap();
        let r = rank_test(&c, 3, DEFAULT_RANK_TOL).unwrap();
        assert_eq!((r.rank, r.verdict), (2, RankVerdict::Consistent));
        assert_eq!(profile_rank(&mu, &m, 3, DEFAULT_RANK_TOL).unwrap(), 3);
    }

    #[test]
    fn sampled_covariance_approaches_exact() {
        let m = model3();
        let mu = MixingMeasure::discrete(vec![
            (pt(&[0.6, 0.2, 0.2]), 0.3),
            (pt(&[0.1, 0.3, 0.6]), 0.7),
        ])
        .unwrap();
        let exact = mixing_covariance(&mu, &m, 3).unwrap();
        let est = sampled_covariance(&mu, &m, 3, 20_000, 3).unwrap();
        let scale = exact.matrix.abs().max();
        assert!((est.matrix.clone() - exact.matrix).abs().max() < 0.05 * scale);
    }

    #[test]
    fn horizon_limit() {
        let m = model3();
        let mu = MixingMeasure::dirac(pt(&[0.2, 0.3, 0.5]));
        assert!(mixing_covariance(&mu, &m, 4).is_err());
    }
}
