//! Independent measures P_g, mixtures P_μ = Σᵢ wᵢ P_{gᵢ}, cylinder
//! probabilities and seeded sampling.

use std::collections::BTreeMap;

use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{LlsError, Result};
use crate::model::{LatentPoint, ModelSpec};
use crate::rng::{stream_rng, LabRng};

/// Weight sums must hit 1 within this tolerance.
pub const WEIGHT_TOL: f64 = 1e-12;

/// Largest outcome space [`finite_robbins_identity`] will enumerate.
pub const ENUMERATION_BUDGET: u128 = 1_000_000;

/// Finitely based event {X_{j₁} = l₁, …, X_{j_p} = l_p}.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Cylinder {
    assignments: BTreeMap<usize, usize>,
}

impl Cylinder {
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut assignments = BTreeMap::new();
        for (item, category) in pairs {
            if item == 0 || category == 0 {
                return Err(LlsError::Structure(
                    "cylinder items and categories are 1-based".into(),
                ));
            }
            if assignments.insert(item, category).is_some() {
                return Err(LlsError::Structure(format!(
                    "item {item} assigned twice in cylinder"
                )));
            }
        }
        Ok(Cylinder { assignments })
    }

    pub fn empty() -> Self {
        Cylinder::default()
    }

    /// The cylinder fixing the first `a.len()` outcomes to `a`.
    pub fn prefix(a: &[usize]) -> Result<Self> {
        Cylinder::new(a.iter().enumerate().map(|(i, &l)| (i + 1, l)))
    }

    pub fn assignments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignments.iter().map(|(&j, &l)| (j, l))
    }

    pub fn contains(&self, a: &[usize]) -> bool {
        self.assignments
            .iter()
            .all(|(&j, &l)| a.get(j - 1) == Some(&l))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixingKind {
    #[default]
    Discrete,
    Quadrature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub g: LatentPoint,
    pub w: f64,
}

/// Finite atomic mixing measure on Q.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMeasure {
    atoms: Vec<Atom>,
    kind: MixingKind,
    /// Description of the density a quadrature measure approximates.
    density: Option<String>,
}

impl MixingMeasure {
    pub fn new(atoms: Vec<Atom>, kind: MixingKind) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(LlsError::Mixing("no atoms".into()));
        };
        let dim = first.g.dim();
        if let Some(a) = atoms.iter().find(|a| a.g.dim() != dim) {
            return Err(LlsError::Dimension {
                expected: dim,
                got: a.g.dim(),
            });
        }
        if let Some(a) = atoms.iter().find(|a| !(a.w > 0.0 && a.w.is_finite())) {
            return Err(LlsError::Mixing(format!("non-positive weight {}", a.w)));
        }
        let total: f64 = atoms.iter().map(|a| a.w).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(LlsError::Mixing(format!("weights sum to {total}")));
        }
        Ok(MixingMeasure {
            atoms,
            kind,
            density: None,
        })
    }

    pub fn with_density(mut self, description: impl Into<String>) -> Self {
        self.density = Some(description.into());
        self
    }

    pub fn dirac(g: LatentPoint) -> Self {
        MixingMeasure {
            atoms: vec![Atom { g, w: 1.0 }],
            kind: MixingKind::Discrete,
            density: None,
        }
    }

    /// Discrete measure from `(point, weight)` pairs.
    pub fn discrete(points: Vec<(LatentPoint, f64)>) -> Result<Self> {
        MixingMeasure::new(
            points.into_iter().map(|(g, w)| Atom { g, w }).collect(),
            MixingKind::Discrete,
        )
    }

    /// Midpoint rule for the uniform density on the segment [from, to].
    pub fn uniform_segment(from: &LatentPoint, to: &LatentPoint, nodes: usize) -> Result<Self> {
        if nodes == 0 {
            return Err(LlsError::Parameter(
                "quadrature needs at least one node".into(),
            ));
        }
        let w = 1.0 / nodes as f64;
        let atoms = (0..nodes)
            .map(|i| {
                let t = (i as f64 + 0.5) / nodes as f64;
                Atom {
                    g: LatentPoint::blend(to, from, t),
                    w,
                }
            })
            .collect();
        Ok(
            MixingMeasure::new(atoms, MixingKind::Quadrature)?.with_density(format!(
                "uniform on segment {from} -> {to}, {nodes} midpoint nodes"
            )),
        )
    }

    /// `alpha * a + (1 - alpha) * b` as a measure.
    pub fn blend(a: &MixingMeasure, b: &MixingMeasure, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(LlsError::Parameter(format!("blend weight {alpha}")));
        }
        let mut atoms = Vec::with_capacity(a.len() + b.len());
        for (src, scale) in [(a, alpha), (b, 1.0 - alpha)] {
            if scale > 0.0 {
                atoms.extend(src.atoms.iter().map(|x| Atom {
                    g: x.g.clone(),
                    w: x.w * scale,
                }));
            }
        }
        let kind = if a.kind == MixingKind::Discrete && b.kind == MixingKind::Discrete {
            MixingKind::Discrete
        } else {
            MixingKind::Quadrature
        };
        MixingMeasure::new(atoms, kind)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn kind(&self) -> &MixingKind {
        &self.kind
    }

    pub fn density(&self) -> Option<&str> {
        self.density.as_deref()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].g.dim()
    }

    /// Σᵢ wᵢ gᵢ.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for a in &self.atoms {
            for (mi, gi) in m.iter_mut().zip(a.g.coords()) {
                *mi += a.w * gi;
            }
        }
        m
    }

    /// Checks dimension against the model and that every atom lies in Q.
    pub fn check_against(&self, model: &ModelSpec) -> Result<()> {
        for a in &self.atoms {
            if a.g.dim() != model.k() {
                return Err(LlsError::Dimension {
                    expected: model.k(),
                    got: a.g.dim(),
                });
            }
            model.require_in_q(&a.g)?;
        }
        Ok(())
    }

    /// Index of the atom owning cumulative mass `u ∈ [0, 1)`.
    pub(crate) fn atom_at(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, a) in self.atoms.iter().enumerate() {
            acc += a.w;
            if u < acc {
                return i;
            }
        }
        self.atoms.len() - 1
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixingDoc {
    atoms: Vec<Atom>,
    #[serde(default)]
    kind: MixingKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    density: Option<String>,
}

impl Serialize for MixingMeasure {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MixingDoc {
            atoms: self.atoms.clone(),
            kind: self.kind.clone(),
            density: self.density.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MixingMeasure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = MixingDoc::deserialize(d)?;
        let mut m = MixingMeasure::new(doc.atoms, doc.kind).map_err(D::Error::custom)?;
        m.density = doc.density;
        Ok(m)
    }
}

/// Outcomes a₁..aₙ, categories 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutcomeSequence(pub Vec<usize>);

impl OutcomeSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }

    /// Checks every category against the model's item counts.
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        for (i, &l) in self.0.iter().enumerate() {
            let count = model.count(i + 1)?;
            if l == 0 || l > count {
                return Err(LlsError::Category {
                    item: i + 1,
                    category: l,
                    count,
                });
            }
        }
        Ok(())
    }
}

/// P_g(C) = Π β_{j l}(g) over the cylinder's assignments.
pub fn cylinder_prob(g: &LatentPoint, c: &Cylinder, model: &ModelSpec) -> Result<f64> {
    let mut row = Vec::new();
    let mut p = 1.0;
    for (item, category) in c.assignments() {
        if g.dim() != model.k() {
            return Err(LlsError::Dimension {
                expected: model.k(),
                got: g.dim(),
            });
        }
        model.beta_into(g.coords(), item, &mut row)?;
        if category > row.len() {
            return Err(LlsError::Category {
                item,
                category,
                count: row.len(),
            });
        }
        p *= row[category - 1].clamp(0.0, 1.0);
    }
    Ok(p)
}

/// P_μ(C) = Σᵢ wᵢ P_{gᵢ}(C).
pub fn mixture_cylinder_prob(mu: &MixingMeasure, c: &Cylinder, model: &ModelSpec) -> Result<f64> {
    mu.atoms()
        .iter()
        .map(|a| cylinder_prob(&a.g, c, model).map(|p| a.w * p))
        .sum()
}

/// Profile rows β_j(g) for j = 1..=n.
pub(crate) fn rows_of(g: &[f64], n: usize, model: &ModelSpec) -> Result<Vec<Vec<f64>>> {
    (1..=n)
        .map(|j| {
            let mut row = Vec::new();
            model.beta_into(g, j, &mut row).map(|_| row)
        })
        .collect()
}

pub(crate) fn draw_category<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (l, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_positive = l;
            acc += p;
            if u < acc {
                return l + 1;
            }
        }
    }
    last_positive + 1
}

pub(crate) fn draw_from_rows<R: Rng + ?Sized>(rows: &[Vec<f64>], rng: &mut R) -> OutcomeSequence {
    OutcomeSequence(rows.iter().map(|row| draw_category(row, rng)).collect())
}

fn check_reach(model: &ModelSpec, n: usize) -> Result<()> {
    if n > 0 && !model.items().reaches(n) {
        return Err(LlsError::OutOfRange {
            item: n,
            horizon: model.horizon(),
        });
    }
    Ok(())
}

/// n independent draws a_j ~ β_j(g) using the caller's generator.
pub fn sample_outcomes_with<R: Rng + ?Sized>(
    g: &LatentPoint,
    n: usize,
    model: &ModelSpec,
    rng: &mut R,
) -> Result<OutcomeSequence> {
    check_reach(model, n)?;
    model.require_in_q(g)?;
    let rows = rows_of(g.coords(), n, model)?;
    Ok(draw_from_rows(&rows, rng))
}

/// n independent draws a_j ~ β_j(g); deterministic in `seed`.
pub fn sample_outcomes(
    g: &LatentPoint,
    n: usize,
    model: &ModelSpec,
    seed: u64,
) -> Result<OutcomeSequence> {
    sample_outcomes_with(g, n, model, &mut stream_rng(seed, 0))
}

/// Draws an atom index by weight, then its outcomes.
pub fn sample_joint_with<R: Rng + ?Sized>(
    mu: &MixingMeasure,
    n: usize,
    model: &ModelSpec,
    rng: &mut R,
) -> Result<(usize, OutcomeSequence)> {
    let idx = mu.atom_at(rng.random());
    let a = sample_outcomes_with(&mu.atoms()[idx].g, n, model, rng)?;
    Ok((idx, a))
}

/// One draw (g, a) from the joint law ν on Q × 𝒜 truncated to n items.
pub fn sample_joint(
    mu: &MixingMeasure,
    n: usize,
    model: &ModelSpec,
    seed: u64,
) -> Result<(LatentPoint, OutcomeSequence)> {
    let mut rng: LabRng = stream_rng(seed, 0);
    let (idx, a) = sample_joint_with(mu, n, model, &mut rng)?;
    Ok((mu.atoms()[idx].g.clone(), a))
}

/// Odometer over every outcome sequence of the first n items.
pub struct OutcomeSpace {
    counts: Vec<usize>,
    current: Option<Vec<usize>>,
}

impl OutcomeSpace {
    pub fn new(model: &ModelSpec, n: usize, budget: u128) -> Result<Self> {
        check_reach(model, n)?;
        let counts = (1..=n)
            .map(|j| model.count(j))
            .collect::<Result<Vec<_>>>()?;
        let size = counts
            .iter()
            .try_fold(1u128, |acc, &c| acc.checked_mul(c as u128))
            .unwrap_or(u128::MAX);
        if size > budget {
            return Err(LlsError::EnumerationBudget { size, budget });
        }
        Ok(OutcomeSpace {
            current: Some(vec![1; n]),
            counts,
        })
    }
}

impl Iterator for OutcomeSpace {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let mut next = out.clone();
        let mut pos = next.len();
        loop {
            if pos == 0 {
                self.current = None;
                break;
            }
            pos -= 1;
            if next[pos] < self.counts[pos] {
                next[pos] += 1;
                for v in &mut next[pos + 1..] {
                    *v = 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}

/// Both sides of ∫ f dP_μ = Σᵢ wᵢ ∫ f dP_{gᵢ}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RobbinsReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Finite-horizon form of Robbins' identity for a nonnegative `f` depending
/// on the first `n` outcomes. The left side integrates f against the
/// mixture probabilities outcome by outcome; the right side integrates f
/// under each P_{gᵢ} separately and then mixes.
pub fn finite_robbins_identity<F>(
    f: F,
    n: usize,
    mu: &MixingMeasure,
    model: &ModelSpec,
) -> Result<RobbinsReport>
where
    F: Fn(&[usize]) -> f64,
{
    let space: Vec<Vec<usize>> = OutcomeSpace::new(model, n, ENUMERATION_BUDGET)?.collect();
    let values: Vec<f64> = space.iter().map(|a| f(a)).collect();
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(LlsError::Parameter(format!(
            "f must be finite and nonnegative, got {v}"
        )));
    }
    let atom_rows = mu
        .atoms()
        .iter()
        .map(|a| rows_of(a.g.coords(), n, model))
        .collect::<Result<Vec<_>>>()?;
    let prob = |rows: &[Vec<f64>], a: &[usize]| -> f64 {
        rows.iter()
            .zip(a)
            .map(|(row, &l)| row[l - 1].clamp(0.0, 1.0))
            .product()
    };

    let lhs = space
        .iter()
        .zip(&values)
        .map(|(a, v)| {
            let p: f64 = mu
                .atoms()
                .iter()
                .zip(&atom_rows)
                .map(|(atom, rows)| atom.w * prob(rows, a))
                .sum();
            v * p
        })
        .sum::<f64>();
    let rhs = mu
        .atoms()
        .iter()
        .zip(&atom_rows)
        .map(|(atom, rows)| {
            let e: f64 = space
                .iter()
                .zip(&values)
                .map(|(a, v)| v * prob(rows, a))
                .sum();
            atom.w * e
        })
        .sum::<f64>();
    Ok(RobbinsReport {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BasisVector, Generator, ItemSpace};

    fn flip_model() -> ModelSpec {
        let gen = Generator::constant_tail(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        ModelSpec::new(
            vec![
                BasisVector::new(vec![vec![1.0, 0.0], vec![0.5, 0.5]]),
                BasisVector::new(vec![vec![0.0, 1.0], vec![0.5, 0.5]]),
            ],
            ItemSpace::new(vec![2, 2], Some(gen)).unwrap(),
        )
        .unwrap()
    }

    fn sqrt_model() -> ModelSpec {
        let gen = Generator::sqrt_decay(1.0).unwrap();
        ModelSpec::new(
            vec![
                BasisVector::new(vec![gen.basis_row(0, 1)]),
                BasisVector::new(vec![gen.basis_row(1, 1)]),
            ],
            ItemSpace::new(vec![2], Some(gen)).unwrap(),
        )
        .unwrap()
    }

    fn pt(c: &[f64]) -> LatentPoint {
        LatentPoint::new(c.to_vec()).unwrap()
    }

    #[test]
    fn cylinder_examples() {
        let m = sqrt_model();
        let c = Cylinder::new([(1, 1), (2, 1), (3, 1)]).unwrap();
        assert!((cylinder_prob(&pt(&[0.5, 0.5]), &c, &m).unwrap() - 0.125).abs() < 1e-15);

        let f = flip_model();
        let gp = pt(&[1.0, 0.0]);
        assert_eq!(
            cylinder_prob(&gp, &Cylinder::new([(1, 1)]).unwrap(), &f).unwrap(),
            1.0
        );
        assert_eq!(
            cylinder_prob(&gp, &Cylinder::new([(1, 2)]).unwrap(), &f).unwrap(),
            0.0
        );
        assert!(matches!(
            cylinder_prob(&gp, &Cylinder::new([(1, 3)]).unwrap(), &f),
            Err(LlsError::Category { .. })
        ));
    }

    #[test]
    fn duplicate_cylinder_item_rejected() {
        assert!(Cylinder::new([(1, 1), (1, 2)]).is_err());
    }

    #[test]
    fn mixture_examples() {
        let f = flip_model();
        let mu =
            MixingMeasure::discrete(vec![(pt(&[1.0, 0.0]), 0.5), (pt(&[0.0, 1.0]), 0.5)]).unwrap();
        let c = Cylinder::new([(1, 1)]).unwrap();
        assert_eq!(mixture_cylinder_prob(&mu, &c, &f).unwrap(), 0.5);
        assert_eq!(
            mixture_cylinder_prob(&mu, &Cylinder::empty(), &f).unwrap(),
            1.0
        );
        let d = MixingMeasure::dirac(pt(&[0.3, 0.7]));
        let c2 = Cylinder::new([(1, 2), (5, 1)]).unwrap();
        assert_eq!(
            mixture_cylinder_prob(&d, &c2, &f).unwrap(),
            cylinder_prob(&pt(&[0.3, 0.7]), &c2, &f).unwrap()
        );
    }

    #[test]
    fn probabilities_over_all_outcomes_sum_to_one() {
        let m = sqrt_model();
        let g = pt(&[0.8, 0.2]);
        let total: f64 = OutcomeSpace::new(&m, 6, ENUMERATION_BUDGET)
            .unwrap()
            .map(|a| cylinder_prob(&g, &Cylinder::prefix(&a).unwrap(), &m).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_rows_give_constant_draws() {
        let m = flip_model();
        let g = pt(&[1.0, 0.0]);
        for seed in 0..20 {
            assert_eq!(sample_outcomes(&g, 1, &m, seed).unwrap().0, vec![1]);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = sqrt_model();
        let g = pt(&[0.3, 0.7]);
        assert_eq!(
            sample_outcomes(&g, 50, &m, 11).unwrap(),
            sample_outcomes(&g, 50, &m, 11).unwrap()
        );
    }

    #[test]
    fn outcome_space_size_and_budget() {
        let m = sqrt_model();
        assert_eq!(OutcomeSpace::new(&m, 3, 100).unwrap().count(), 8);
        assert_eq!(OutcomeSpace::new(&m, 0, 100).unwrap().count(), 1);
        assert!(matches!(
            OutcomeSpace::new(&m, 30, ENUMERATION_BUDGET),
            Err(LlsError::EnumerationBudget { .. })
        ));
    }

    #[test]
    fn robbins_trivial_cases() {
        let m = sqrt_model();
        let mu = MixingMeasure::discrete(vec![(pt(&[0.9, 0.1]), 0.25), (pt(&[0.2, 0.8]), 0.75)])
            .unwrap();
        let r = finite_robbins_identity(|_| 1.0, 4, &mu, &m).unwrap();
        assert!((r.lhs - 1.0).abs() < 1e-12 && (r.rhs - 1.0).abs() < 1e-12);

        let c = Cylinder::new([(2, 1), (4, 2)]).unwrap();
        let r =
            finite_robbins_identity(|a| if c.contains(a) { 1.0 } else { 0.0 }, 4, &mu, &m).unwrap();
        let exact = mixture_cylinder_prob(&mu, &c, &m).unwrap();
        assert!(r.gap < 1e-12);
        assert!((r.lhs - exact).abs() < 1e-12);

        assert!(matches!(
            finite_robbins_identity(|_| 1.0, 25, &mu, &m),
            Err(LlsError::EnumerationBudget { .. })
        ));
    }

    #[test]
    fn mixing_validation() {
        let g = pt(&[0.5, 0.5]);
        assert!(MixingMeasure::discrete(vec![(g.clone(), 0.5), (g.clone(), 0.4)]).is_err());
        assert!(MixingMeasure::discrete(vec![(g.clone(), 1.5), (g.clone(), -0.5)]).is_err());
        let text = r#"{"atoms":[{"g":[0.25,0.75],"w":1.0}],"kind":"discrete"}"#;
        let mu: MixingMeasure = serde_json::from_str(text).unwrap();
        assert_eq!(mu.len(), 1);
        let back = serde_json::to_string(&mu).unwrap();
        assert_eq!(serde_json::from_str::<MixingMeasure>(&back).unwrap(), mu);
    }

    #[test]
    fn outside_q_atom_rejected() {
        let m = sqrt_model();
        let mu = MixingMeasure::dirac(pt(&[1.25, -0.25]));
        assert!(matches!(
            mu.check_against(&m),
            Err(LlsError::OutsideQ { .. })
        ));
    }
}
