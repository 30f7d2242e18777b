//! Built-in scenarios: worked examples of orthogonal and non-orthogonal
//! families plus seeded random families for stress tests.
//!
//! Scalar latent families are embedded in the K = 2 hyperplane so that one
//! code path serves every scenario; the embedding is stored alongside.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::converge::{wasserstein1_1d, CurveSettings, CurveVerdict, Metric, Projection};
use crate::error::{LlsError, Result};
use crate::hellinger::Verdict;
use crate::measure::MixingMeasure;
use crate::model::{BasisVector, Generator, ItemSpace, LatentPoint, ModelSpec};
use crate::posterior::EmpiricalMeasureQ;
use crate::rng::{stream_rng, LabRng};

/// Default fineness of quadrature mixing measures.
pub const DEFAULT_QUADRATURE_NODES: usize = 400;

/// How a scalar latent value sits on the K = 2 hyperplane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Embedding {
    /// g ↦ (g, 1 − g)
    Unit,
    /// g ↦ ((1 + g)/2, (1 − g)/2)
    Symmetric,
    /// Points are given directly in K coordinates.
    Native,
}

impl Embedding {
    pub fn embed(self, g: f64) -> LatentPoint {
        let coords = match self {
            Embedding::Unit => vec![g, 1.0 - g],
            Embedding::Symmetric => vec![(1.0 + g) / 2.0, (1.0 - g) / 2.0],
            Embedding::Native => panic!("native embedding has no scalar form"),
        };
        LatentPoint::new(coords).expect("embedded scalars sum to 1")
    }

    pub fn scalar(self, p: &LatentPoint) -> Option<f64> {
        match self {
            Embedding::Unit => Some(p.coords()[0]),
            Embedding::Symmetric => Some(p.coords()[0] - p.coords()[1]),
            Embedding::Native => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpectedDiagnosis {
    /// Verdict matrix over the scenario's grid.
    pub orthogonality: Vec<Vec<Verdict>>,
    pub convergence: CurveVerdict,
    pub known_constants: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub id: String,
    pub description: String,
    pub model: ModelSpec,
    pub mixing: MixingMeasure,
    pub embedding: Embedding,
    /// Vertices of a polytope inside Q; random pairs are drawn from it.
    pub q_vertices: Vec<LatentPoint>,
    /// Points for pairwise orthogonality scans.
    pub grid: Vec<LatentPoint>,
    pub expected: ExpectedDiagnosis,
    pub curve: CurveSettings,
    /// Finer quadrature of the same density, for discretization error.
    pub refinement: Option<MixingMeasure>,
}

impl Scenario {
    /// A uniformly weighted random convex combination of the Q vertices.
    pub fn sample_point(&self, rng: &mut LabRng) -> LatentPoint {
        let raw: Vec<f64> = self
            .q_vertices
            .iter()
            .map(|_| -rng.random::<f64>().max(f64::MIN_POSITIVE).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let k = self.q_vertices[0].dim();
        let mut coords = vec![0.0; k];
        for (v, r) in self.q_vertices.iter().zip(&raw) {
            for (c, x) in coords.iter_mut().zip(v.coords()) {
                *c += r / total * x;
            }
        }
        // renormalize away rounding so the hyperplane check passes
        let s: f64 = coords.iter().sum();
        let last = coords.len() - 1;
        coords[last] += 1.0 - s;
        LatentPoint::new(coords).expect("convex combination stays on the hyperplane")
    }
}

/// The K = 2 binary family λ¹ = (1,0,½,½,…), λ² = (0,1,½,½,…).
fn flip_model(horizon: usize) -> ModelSpec {
    let mut l1 = vec![vec![1.0, 0.0]];
    let mut l2 = vec![vec![0.0, 1.0]];
    for _ in 1..horizon {
        l1.push(vec![0.5, 0.5]);
        l2.push(vec![0.5, 0.5]);
    }
    let tail = Generator::constant_tail(vec![vec![0.5, 0.5], vec![0.5, 0.5]])
        .expect("constant tail rows are valid");
    ModelSpec::new(
        vec![BasisVector::new(l1), BasisVector::new(l2)],
        ItemSpace::new(vec![2; horizon], Some(tail)).expect("binary items"),
    )
    .expect("flip basis is independent")
}

fn default_curve(seed: u64) -> CurveSettings {
    CurveSettings {
        n_grid: vec![10, 50, 200, 400],
        replicates: 2000,
        repeats: 10,
        metric: Metric::Wasserstein1 {
            projection: Projection::Coordinate(0),
        },
        seed,
    }
}

fn scalar_grid(embedding: Embedding, values: &[f64]) -> Vec<LatentPoint> {
    values.iter().map(|&g| embedding.embed(g)).collect()
}

fn off_diagonal(size: usize, verdict: impl Fn(usize, usize) -> Verdict) -> Vec<Vec<Verdict>> {
    (0..size)
        .map(|i| {
            (0..size)
                .map(|j| {
                    if i == j {
                        Verdict::NonOrthogonal
                    } else {
                        verdict(i.min(j), i.max(j))
                    }
                })
                .collect()
        })
        .collect()
}

/// Two point masses whose profiles differ only at the first item.
pub fn scenario_binary_counterexample() -> Scenario {
    let e = Embedding::Unit;
    let model = flip_model(4);
    let (g1, g2) = (e.embed(1.0), e.embed(0.0));
    let mixing = MixingMeasure::discrete(vec![(g1.clone(), 0.5), (g2.clone(), 0.5)])
        .expect("two equal weights");
    let known_constants = BTreeMap::from([
        ("hellinger_product".to_string(), 0.0),
        ("hellinger_sum".to_string(), 2.0),
    ]);
    Scenario {
        id: "binary-counterexample".into(),
        description:
            "Binary items, profiles (1,0,1/2,1/2,...) vs (0,1,1/2,1/2,...): zero Hellinger \
product yet H+ sum stays at 2"
                .into(),
        model,
        mixing,
        embedding: e,
        q_vertices: vec![g1.clone(), g2.clone()],
        grid: vec![g1, g2],
        expected: ExpectedDiagnosis {
            orthogonality: off_diagonal(2, |_, _| Verdict::OrthogonalZeroFactor),
            convergence: CurveVerdict::Converging,
            known_constants,
        },
        curve: default_curve(0x5eed_0001),
        refinement: None,
    }
}

/// The same family with a uniform mixing measure on Q = [0, 1]: only the
/// first item is informative, so μ̂ₙ stalls at ½δ_{1/3} + ½δ_{2/3}.
pub fn scenario_remark_tail_equivalent() -> Scenario {
    let e = Embedding::Unit;
    let model = flip_model(4);
    let (lo, hi) = (e.embed(0.0), e.embed(1.0));
    let mixing = MixingMeasure::uniform_segment(&lo, &hi, DEFAULT_QUADRATURE_NODES)
        .expect("positive node count");
    let refinement = MixingMeasure::uniform_segment(&lo, &hi, 2 * DEFAULT_QUADRATURE_NODES)
        .expect("positive node count");
    let refinement_w1 = wasserstein1_1d(
        &EmpiricalMeasureQ::from_mixing(&mixing),
        &EmpiricalMeasureQ::from_mixing(&refinement),
        &Projection::Coordinate(0),
    )
    .expect("same dimension");
    let values = [0.0, 0.25, 0.5, 0.75, 1.0];
    let known_constants = BTreeMap::from([
        ("plateau_floor".to_string(), 5.0 / 36.0),
        ("posterior_first_item_1".to_string(), 2.0 / 3.0),
        ("posterior_first_item_2".to_string(), 1.0 / 3.0),
        ("quadrature_refinement_w1".to_string(), refinement_w1),
    ]);
    Scenario {
        id: "remark-tail-equivalent".into(),
        description:
            "Uniform mixing over the same binary family: endpoint measures are orthogonal, \
interior pairs are equivalent, and the estimator plateaus"
                .into(),
        model,
        mixing,
        embedding: e,
        q_vertices: vec![lo, hi],
        grid: scalar_grid(e, &values),
        expected: ExpectedDiagnosis {
            orthogonality: off_diagonal(values.len(), |i, j| {
                if values[i] == 0.0 && values[j] == 1.0 {
                    Verdict::OrthogonalZeroFactor
                } else {
                    Verdict::NonOrthogonal
                }
            }),
            convergence: CurveVerdict::Plateau,
            known_constants,
        },
        curve: default_curve(0x5eed_0002),
        refinement: Some(refinement),
    }
}

/// Binary items with P_g(X_j = 1) = ½ + g/(2√j) on Q = [−1, 1].
pub fn scenario_sqrt_decay() -> Scenario {
    let e = Embedding::Symmetric;
    let gen = Generator::sqrt_decay(1.0).expect("unit scale");
    let horizon = 16;
    let rows = |k| (1..=horizon).map(|j| gen.basis_row(k, j)).collect();
    let model = ModelSpec::new(
        vec![BasisVector::new(rows(0)), BasisVector::new(rows(1))],
        ItemSpace::new(vec![2; horizon], Some(gen.clone())).expect("binary items"),
    )
    .expect("vertex rows (1,0) and (0,1) at item 1");
    let mixing = MixingMeasure::discrete(vec![
        (e.embed(-0.8), 0.3),
        (e.embed(0.0), 0.4),
        (e.embed(0.7), 0.3),
    ])
    .expect("weights sum to 1");
    let values = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let known_constants = BTreeMap::from([("h_plus_growth_rate_pair_-1_1".to_string(), 1.0)]);
    Scenario {
        id: "sqrt-decay".into(),
        description:
            "Binary items with P(X_j=1) = 1/2 + g/(2 sqrt j) on [-1,1]: pairwise orthogonal \
through a logarithmically divergent H+ series"
                .into(),
        model,
        mixing,
        embedding: e,
        q_vertices: vec![e.embed(-1.0), e.embed(1.0)],
        grid: scalar_grid(e, &values),
        expected: ExpectedDiagnosis {
            orthogonality: off_diagonal(values.len(), |i, j| {
                if values[i] == -1.0 && values[j] == 1.0 {
                    Verdict::OrthogonalZeroFactor
                } else {
                    Verdict::OrthogonalByDecay
                }
            }),
            convergence: CurveVerdict::Converging,
            known_constants,
        },
        curve: default_curve(0x5eed_0003),
        refinement: None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RandomTail {
    /// Every item, tabulated or generated, separates the basis vectors.
    Separated,
    /// Items after the first `informative` are identical across the basis.
    Constant { informative: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomFamily {
    pub k: usize,
    /// Tabulated items.
    pub items: usize,
    pub categories: usize,
    pub atoms: usize,
    /// Mass each basis vector moves onto its own category, in (0, 1].
    #[serde(default = "default_separation")]
    pub separation: f64,
    pub tail: RandomTail,
}

fn default_separation() -> f64 {
    0.5
}

impl Default for RandomFamily {
    fn default() -> Self {
        RandomFamily {
            k: 2,
            items: 8,
            categories: 2,
            atoms: 2,
            separation: default_separation(),
            tail: RandomTail::Separated,
        }
    }
}

fn random_simplex(rng: &mut LabRng, size: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..size)
        .map(|_| -rng.random::<f64>().max(f64::MIN_POSITIVE).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    let mut out: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let s: f64 = out.iter().sum();
    out[size - 1] += 1.0 - s;
    out
}

/// Rows for K basis vectors where vector k carries extra mass on its own
/// randomly chosen category.
fn separated_rows(rng: &mut LabRng, k: usize, categories: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut order: Vec<usize> = (0..categories).collect();
    for i in (1..categories).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let base = random_simplex(rng, categories);
    (0..k)
        .map(|kk| {
            let mut row: Vec<f64> = base.iter().map(|b| (1.0 - separation) * b).collect();
            row[order[kk]] += separation;
            row
        })
        .collect()
}

/// Random family, fully determined by `params` and `seed`.
pub fn scenario_random(params: RandomFamily, seed: u64) -> Result<Scenario> {
    let RandomFamily {
        k,
        items,
        categories,
        atoms,
        separation,
        tail,
    } = params;
    if k < 2 || items == 0 || atoms == 0 {
        return Err(LlsError::Parameter(
            "random family needs K >= 2, at least one item and one atom".into(),
        ));
    }
    if categories < k.max(2) {
        return Err(LlsError::Parameter(format!(
            "need at least max(K, 2) = {} categories to separate {k} basis vectors",
            k.max(2)
        )));
    }
    if !(separation > 0.0 && separation <= 1.0) {
        return Err(LlsError::Parameter(format!(
            "separation {separation} not in (0, 1]"
        )));
    }
    let informative = match tail {
        RandomTail::Separated => items,
        RandomTail::Constant { informative } if informative >= 1 && informative <= items => {
            informative
        }
        RandomTail::Constant { informative } => {
            return Err(LlsError::Parameter(format!(
                "informative items {informative} must lie in 1..={items}"
            )))
        }
    };
    let mut rng = stream_rng(seed, 0);
    let mut basis = vec![Vec::with_capacity(items); k];
    for j in 0..items {
        let rows = if j < informative {
            separated_rows(&mut rng, k, categories, separation)
        } else {
            vec![random_simplex(&mut rng, categories); k]
        };
        for (b, r) in basis.iter_mut().zip(rows) {
            b.push(r);
        }
    }
    let tail_rows = match tail {
        RandomTail::Separated => separated_rows(&mut rng, k, categories, separation),
        RandomTail::Constant { .. } => vec![random_simplex(&mut rng, categories); k],
    };
    let model = ModelSpec::new(
        basis.into_iter().map(BasisVector::new).collect(),
        ItemSpace::new(
            vec![categories; items],
            Some(Generator::constant_tail(tail_rows)?),
        )?,
    )?;
    let points: Vec<LatentPoint> = (0..atoms)
        .map(|_| LatentPoint::new(random_simplex(&mut rng, k)))
        .collect::<Result<_>>()?;
    let weights = random_simplex(&mut rng, atoms);
    let mixing = MixingMeasure::discrete(points.iter().cloned().zip(weights).collect())?;
    let vertices: Vec<LatentPoint> = (0..k)
        .map(|i| LatentPoint::new((0..k).map(|c| if c == i { 1.0 } else { 0.0 }).collect()))
        .collect::<Result<_>>()?;
    let (pair_verdict, convergence) = match tail {
        RandomTail::Separated => (Verdict::OrthogonalByDecay, CurveVerdict::Converging),
        RandomTail::Constant { .. } => (Verdict::NonOrthogonal, CurveVerdict::Plateau),
    };
    let metric = if k == 2 {
        Metric::Wasserstein1 {
            projection: Projection::Coordinate(0),
        }
    } else {
        Metric::Energy
    };
    let n_max = (4 * items).max(informative + 8);
    let curve = CurveSettings {
        n_grid: vec![informative.max(2), (n_max / 2).max(informative + 1), n_max],
        replicates: 500,
        repeats: 8,
        metric,
        seed: seed ^ 0x5eed_00ff,
    };
    let tag = match tail {
        RandomTail::Separated => "separated".to_string(),
        RandomTail::Constant { informative } => format!("tail-constant-{informative}"),
    };
    Ok(Scenario {
        id: format!("random-{tag}-k{k}-seed{seed}"),
        description: "Seeded random family for regression and stress runs".into(),
        model,
        mixing,
        embedding: if k == 2 {
            Embedding::Unit
        } else {
            Embedding::Native
        },
        q_vertices: vertices,
        grid: points.clone(),
        expected: ExpectedDiagnosis {
            orthogonality: off_diagonal(points.len(), |_, _| pair_verdict),
            convergence,
            known_constants: BTreeMap::new(),
        },
        curve,
        refinement: None,
    })
}

/// `(id, description)` for every named scenario.
pub fn catalog() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "binary-counterexample",
            "Two point masses on binary profiles that differ only at item 1; product 0, H+ = 2",
        ),
        (
            "remark-tail-equivalent",
            "Uniform mixing over the same family; interior pairs equivalent, estimator plateaus at W1 = 5/36",
        ),
        (
            "sqrt-decay",
            "P(X_j=1) = 1/2 + g/(2 sqrt j) on [-1,1]; pairwise orthogonal with H+ growing like ln N",
        ),
        (
            "random",
            "Seeded random family (separated or tail-constant) configured through the `random` block",
        ),
    ]
}

pub fn by_id(id: &str, random: Option<RandomFamily>, seed: u64) -> Result<Scenario> {
    match id {
        "binary-counterexample" => Ok(scenario_binary_counterexample()),
        "remark-tail-equivalent" => Ok(scenario_remark_tail_equivalent()),
        "sqrt-decay" => Ok(scenario_sqrt_decay()),
        "random" => scenario_random(random.unwrap_or_default(), seed),
        other => Err(LlsError::Parameter(format!(
            "unknown scenario id {other:?}"
        ))),
    }
}

/// Every named scenario with fixed parameters (random families included).
pub fn builtin() -> Vec<Scenario> {
    vec![
        scenario_binary_counterexample(),
        scenario_remark_tail_equivalent(),
        scenario_sqrt_decay(),
        scenario_random(RandomFamily::default(), 7).expect("default family is feasible"),
        scenario_random(
            RandomFamily {
                k: 3,
                items: 6,
                categories: 3,
                atoms: 3,
                separation: 0.5,
                tail: RandomTail::Constant { informative: 3 },
            },
            11,
        )
        .expect("tail-constant family is feasible"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        for s in builtin() {
            s.mixing.check_against(&s.model).unwrap();
            for g in &s.grid {
                s.model.require_in_q(g).unwrap();
            }
            assert_eq!(s.expected.orthogonality.len(), s.grid.len());
        }
    }

    #[test]
    fn random_is_deterministic() {
        let p = RandomFamily::default();
        assert_eq!(
            scenario_random(p, 3).unwrap(),
            scenario_random(p, 3).unwrap()
        );
        assert_ne!(
            scenario_random(p, 3).unwrap().model,
            scenario_random(p, 4).unwrap().model
        );
    }

    #[test]
    fn infeasible_random_family() {
        let p = RandomFamily {
            k: 3,
            categories: 2,
            ..RandomFamily::default()
        };
        assert!(scenario_random(p, 0).is_err());
        let p = RandomFamily {
            tail: RandomTail::Constant { informative: 20 },
            ..RandomFamily::default()
        };
        assert!(scenario_random(p, 0).is_err());
    }

    #[test]
    fn embeddings_round_trip() {
        for e in [Embedding::Unit, Embedding::Symmetric] {
            for g in [-0.5, 0.0, 0.25, 1.0] {
                assert!((e.scalar(&e.embed(g)).unwrap() - g).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn unknown_id() {
        assert!(by_id("nope", None, 0).is_err());
    }
}
