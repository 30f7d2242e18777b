//! The linear latent structure model.
//!
//! A model fixes K basis profiles λ¹..λᴷ over a sequence of categorical items
//! and maps latent coordinates `g` on the hyperplane Σₖ gₖ = 1 to the item
//! profile β(g) = Σₖ gₖ λᵏ. The set Q of admissible latent points is the
//! preimage of the probability polytope: coordinates may be negative as long
//! as every β_{jl}(g) stays in [0, 1].
//!
//! Items are indexed from 1. Items up to the horizon are tabulated; a
//! generator, when present, supplies every item past the horizon in the
//! closed form λᵏ_{jl} = a_{kl} + b_{kl}/√j.

use std::fmt;

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use crate::error::{LlsError, Result};

/// Tolerance on Σₖ gₖ = 1.
pub const HYPERPLANE_TOL: f64 = 1e-12;
/// Tolerance on probability entries and row sums.
pub const RANGE_TOL: f64 = 1e-12;

/// Coordinates of a point on the hyperplane Σₖ gₖ = 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPoint(Vec<f64>);

impl LatentPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(LlsError::Dimension {
                expected: 1,
                got: 0,
            });
        }
        let sum: f64 = coords.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > HYPERPLANE_TOL {
            return Err(LlsError::OffHyperplane { sum });
        }
        Ok(LatentPoint(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `alpha * a + (1 - alpha) * b`.
    pub fn blend(a: &LatentPoint, b: &LatentPoint, alpha: f64) -> LatentPoint {
        debug_assert_eq!(a.dim(), b.dim());
        LatentPoint(
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
                .collect(),
        )
    }

    pub fn midpoint(a: &LatentPoint, b: &LatentPoint) -> LatentPoint {
        LatentPoint::blend(a, b, 0.5)
    }

    pub fn distance(&self, other: &LatentPoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn from_raw(coords: Vec<f64>) -> LatentPoint {
        LatentPoint(coords)
    }
}

impl fmt::Display for LatentPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl Serialize for LatentPoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LatentPoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let coords = Vec::<f64>::deserialize(d)?;
        LatentPoint::new(coords).map_err(D::Error::custom)
    }
}

/// One basis profile: a probability row per tabulated item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BasisVector {
    pub rows: Vec<Vec<f64>>,
}

impl BasisVector {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        BasisVector { rows }
    }
}

/// A single constraint violation found by [`validate_basis_vector`].
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    EntryRange {
        item: usize,
        category: usize,
        value: f64,
    },
    RowSum {
        item: usize,
        sum: f64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BasisValidation {
    pub violations: Vec<Violation>,
}

impl BasisValidation {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that every row of `v` is a probability vector. Row-length
/// mismatches against the item counts are structural errors, not violations.
pub fn validate_basis_vector(v: &BasisVector, items: &ItemSpace) -> Result<BasisValidation> {
    if v.rows.len() != items.horizon() {
        return Err(LlsError::Structure(format!(
            "basis vector has {} rows, horizon is {}",
            v.rows.len(),
            items.horizon()
        )));
    }
    let mut report = BasisValidation::default();
    for (idx, (row, &count)) in v.rows.iter().zip(&items.counts).enumerate() {
        let item = idx + 1;
        if row.len() != count {
            return Err(LlsError::Structure(format!(
                "item {item} row has {} entries, expected {count}",
                row.len()
            )));
        }
        for (l, &value) in row.iter().enumerate() {
            if !(-RANGE_TOL..=1.0 + RANGE_TOL).contains(&value) {
                report.violations.push(Violation::EntryRange {
                    item,
                    category: l + 1,
                    value,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if sum.is_nan() || (sum - 1.0).abs() > RANGE_TOL {
            report.violations.push(Violation::RowSum { item, sum });
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorFamily {
    /// Every item past the horizon repeats one fixed row per basis vector.
    ConstantTail,
    /// Binary items with λ¹_j = (½ + c/(2√j), ½ − c/(2√j)) and λ² mirrored.
    SqrtDecay,
    /// λᵏ_{jl} = a_{kl} + b_{kl}/√j with user-supplied a and b.
    AffineInvSqrt,
}

impl GeneratorFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            GeneratorFamily::ConstantTail => "constant-tail",
            GeneratorFamily::SqrtDecay => "sqrt-decay",
            GeneratorFamily::AffineInvSqrt => "affine-inv-sqrt",
        }
    }
}

/// Closed-form rule for items past the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    family: GeneratorFamily,
    params: Value,
    intercept: Vec<Vec<f64>>,
    slope: Vec<Vec<f64>>,
}

/// The generated row Σₖ gₖ λᵏ_j past the horizon, written as `a + b/√j`.
#[derive(Clone, Debug, PartialEq)]
pub struct TailForm {
    pub intercept: Vec<f64>,
    pub slope: Vec<f64>,
}

impl TailForm {
    pub fn at(&self, item: usize) -> Vec<f64> {
        let t = 1.0 / (item as f64).sqrt();
        self.intercept
            .iter()
            .zip(&self.slope)
            .map(|(a, b)| a + b * t)
            .collect()
    }
}

impl Generator {
    pub fn constant_tail(rows: Vec<Vec<f64>>) -> Result<Self> {
        let params = json!({ "rows": rows });
        let slope = rows.iter().map(|r| vec![0.0; r.len()]).collect();
        Self::build(GeneratorFamily::ConstantTail, params, rows, slope)
    }

    pub fn sqrt_decay(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale.abs() <= 1.0) {
            return Err(LlsError::Parameter(format!(
                "sqrt-decay scale must lie in [-1, 1], got {scale}"
            )));
        }
        let params = json!({ "scale": scale });
        let half = 0.5 * scale;
        Self::build(
            GeneratorFamily::SqrtDecay,
            params,
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![half, -half], vec![-half, half]],
        )
    }

    pub fn affine_inv_sqrt(intercept: Vec<Vec<f64>>, slope: Vec<Vec<f64>>) -> Result<Self> {
        let params = json!({ "intercept": intercept, "slope": slope });
        Self::build(GeneratorFamily::AffineInvSqrt, params, intercept, slope)
    }

    fn build(
        family: GeneratorFamily,
        params: Value,
        intercept: Vec<Vec<f64>>,
        slope: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if intercept.is_empty() || intercept.len() != slope.len() {
            return Err(LlsError::Structure(
                "generator needs one intercept and one slope row per basis vector".into(),
            ));
        }
        let categories = intercept[0].len();
        if categories < 2 {
            return Err(LlsError::Structure(
                "generated items need at least 2 categories".into(),
            ));
        }
        for (a, b) in intercept.iter().zip(&slope) {
            if a.len() != categories || b.len() != categories {
                return Err(LlsError::Structure(
                    "generator rows have inconsistent category counts".into(),
                ));
            }
            if a.iter().chain(b).any(|x| !x.is_finite()) {
                return Err(LlsError::Parameter(
                    "generator entries must be finite".into(),
                ));
            }
            let sa: f64 = a.iter().sum();
            let sb: f64 = b.iter().sum();
            if (sa - 1.0).abs() > RANGE_TOL || sb.abs() > RANGE_TOL {
                return Err(LlsError::Parameter(format!(
                    "generated rows must sum to 1 for every item (intercept sum {sa}, slope sum {sb})"
                )));
            }
        }
        Ok(Generator {
            family,
            params,
            intercept,
            slope,
        })
    }

    fn from_doc(doc: GeneratorDoc) -> Result<Self> {
        let params = doc.params;
        let field = |name: &str| -> Result<Vec<Vec<f64>>> {
            let v = params.get(name).ok_or_else(|| {
                LlsError::Parameter(format!(
                    "generator family {} requires params.{name}",
                    doc.family.as_str()
                ))
            })?;
            serde_json::from_value(v.clone())
                .map_err(|e| LlsError::Parameter(format!("params.{name}: {e}")))
        };
        match doc.family {
            GeneratorFamily::ConstantTail => Generator::constant_tail(field("rows")?),
            GeneratorFamily::SqrtDecay => {
                let scale = match params.get("scale") {
                    None => 1.0,
                    Some(v) => v.as_f64().ok_or_else(|| {
                        LlsError::Parameter("params.scale must be a number".into())
                    })?,
                };
                Generator::sqrt_decay(scale)
            }
            GeneratorFamily::AffineInvSqrt => {
                Generator::affine_inv_sqrt(field("intercept")?, field("slope")?)
            }
        }
    }

    pub fn family(&self) -> GeneratorFamily {
        self.family
    }

    pub fn params(&self) -> &Value {
        &self.params
    }

    pub fn basis_count(&self) -> usize {
        self.intercept.len()
    }

    /// Category count of every generated item.
    pub fn categories(&self) -> usize {
        self.intercept[0].len()
    }

    pub fn basis_row(&self, k: usize, item: usize) -> Vec<f64> {
        let t = 1.0 / (item as f64).sqrt();
        self.intercept[k]
            .iter()
            .zip(&self.slope[k])
            .map(|(a, b)| a + b * t)
            .collect()
    }

    /// Σₖ gₖ (aₖ + bₖ t) collapsed to a single affine row in t = 1/√j.
    pub fn tail_form(&self, g: &[f64]) -> TailForm {
        let l = self.categories();
        let mut intercept = vec![0.0; l];
        let mut slope = vec![0.0; l];
        for (k, &gk) in g.iter().enumerate() {
            for c in 0..l {
                intercept[c] += gk * self.intercept[k][c];
                slope[c] += gk * self.slope[k][c];
            }
        }
        TailForm { intercept, slope }
    }
}

/// Category counts of the tabulated items plus the optional tail generator.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemSpace {
    counts: Vec<usize>,
    generator: Option<Generator>,
}

impl ItemSpace {
    pub fn new(counts: Vec<usize>, generator: Option<Generator>) -> Result<Self> {
        if counts.is_empty() {
            return Err(LlsError::Structure("horizon must be at least 1".into()));
        }
        if let Some(item) = counts.iter().position(|&c| c < 2) {
            return Err(LlsError::Structure(format!(
                "item {} has {} categories, need at least 2",
                item + 1,
                counts[item]
            )));
        }
        Ok(ItemSpace { counts, generator })
    }

    pub fn horizon(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn generator(&self) -> Option<&Generator> {
        self.generator.as_ref()
    }

    /// Whether rows are available for `item` (1-based).
    pub fn reaches(&self, item: usize) -> bool {
        item >= 1 && (item <= self.horizon() || self.generator.is_some())
    }

    pub fn count(&self, item: usize) -> Result<usize> {
        if item >= 1 && item <= self.horizon() {
            Ok(self.counts[item - 1])
        } else if let (true, Some(gen)) = (item >= 1, &self.generator) {
            Ok(gen.categories())
        } else {
            Err(LlsError::OutOfRange {
                item,
                horizon: self.horizon(),
            })
        }
    }
}

/// Result of a membership test for Q.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Membership {
    pub inside: bool,
    /// First offending `(item, category)`, 1-based.
    pub violation: Option<(usize, usize)>,
}

/// K basis profiles over an item space.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    k: usize,
    basis: Vec<BasisVector>,
    items: ItemSpace,
}

impl ModelSpec {
    pub fn new(basis: Vec<BasisVector>, items: ItemSpace) -> Result<Self> {
        let k = basis.len();
        if k == 0 {
            return Err(LlsError::Structure(
                "model needs at least one basis vector".into(),
            ));
        }
        for (idx, v) in basis.iter().enumerate() {
            let report = validate_basis_vector(v, &items)?;
            if let Some(first) = report.violations.first() {
                return Err(LlsError::Structure(format!(
                    "basis vector {} is not a probability profile: {first:?}",
                    idx + 1
                )));
            }
        }
        if let Some(gen) = &items.generator {
            if gen.basis_count() != k {
                return Err(LlsError::Structure(format!(
                    "generator defines {} basis rows, model has K = {k}",
                    gen.basis_count()
                )));
            }
            // the first generated item bounds t from above; the t -> 0 limit
            // bounds it from below, and entries are affine in t
            let t_max = 1.0 / ((items.horizon() + 1) as f64).sqrt();
            for kk in 0..k {
                for c in 0..gen.categories() {
                    for t in [0.0, t_max] {
                        let v = gen.intercept[kk][c] + gen.slope[kk][c] * t;
                        if !(-RANGE_TOL..=1.0 + RANGE_TOL).contains(&v) {
                            return Err(LlsError::Structure(format!(
                                "generator row for basis vector {} leaves [0, 1] (value {v})",
                                kk + 1
                            )));
                        }
                    }
                }
            }
        }
        let width: usize = items.counts.iter().sum();
        let stacked = DMatrix::from_fn(k, width, |r, c| {
            let mut c = c;
            for (row, count) in basis[r].rows.iter().zip(&items.counts) {
                if c < *count {
                    return row[c];
                }
                c -= count;
            }
            unreachable!()
        });
        let svd = stacked.svd(false, false);
        let largest = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-10 * largest.max(f64::MIN_POSITIVE))
            .count();
        if rank < k {
            return Err(LlsError::Dependent { rank, k });
        }
        Ok(ModelSpec { k, basis, items })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn horizon(&self) -> usize {
        self.items.horizon()
    }

    pub fn items(&self) -> &ItemSpace {
        &self.items
    }

    pub fn basis(&self) -> &[BasisVector] {
        &self.basis
    }

    pub fn generator(&self) -> Option<&Generator> {
        self.items.generator()
    }

    pub fn count(&self, item: usize) -> Result<usize> {
        self.items.count(item)
    }

    /// Builds a latent point and checks its dimension against K.
    pub fn point(&self, coords: Vec<f64>) -> Result<LatentPoint> {
        if coords.len() != self.k {
            return Err(LlsError::Dimension {
                expected: self.k,
                got: coords.len(),
            });
        }
        LatentPoint::new(coords)
    }

    /// Profile row of basis vector `k` (0-based) at `item` (1-based).
    pub fn basis_row(&self, k: usize, item: usize) -> Result<Vec<f64>> {
        if item >= 1 && item <= self.horizon() {
            Ok(self.basis[k].rows[item - 1].clone())
        } else if let (true, Some(gen)) = (item >= 1, self.generator()) {
            Ok(gen.basis_row(k, item))
        } else {
            Err(LlsError::OutOfRange {
                item,
                horizon: self.horizon(),
            })
        }
    }

    fn check_dim(&self, g: &LatentPoint) -> Result<()> {
        if g.dim() != self.k {
            return Err(LlsError::Dimension {
                expected: self.k,
                got: g.dim(),
            });
        }
        Ok(())
    }

    /// β_j(g) = Σₖ gₖ λᵏ_j.
    pub fn beta_of(&self, g: &LatentPoint, item: usize) -> Result<Vec<f64>> {
        self.check_dim(g)?;
        let mut row = Vec::new();
        self.beta_into(g.coords(), item, &mut row)?;
        Ok(row)
    }

    pub(crate) fn beta_into(&self, g: &[f64], item: usize, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        if item >= 1 && item <= self.horizon() {
            out.resize(self.items.counts[item - 1], 0.0);
            for (gk, v) in g.iter().zip(&self.basis) {
                for (o, x) in out.iter_mut().zip(&v.rows[item - 1]) {
                    *o += gk * x;
                }
            }
            Ok(())
        } else if let (true, Some(gen)) = (item >= 1, self.generator()) {
            let t = 1.0 / (item as f64).sqrt();
            out.resize(gen.categories(), 0.0);
            for (k, gk) in g.iter().enumerate() {
                for (c, o) in out.iter_mut().enumerate() {
                    *o += gk * (gen.intercept[k][c] + gen.slope[k][c] * t);
                }
            }
            Ok(())
        } else {
            Err(LlsError::OutOfRange {
                item,
                horizon: self.horizon(),
            })
        }
    }

    /// Membership in Q: every tabulated row of β(g) must be a distribution,
    /// and with a generator the whole tail is checked analytically.
    pub fn in_q(&self, g: &LatentPoint) -> Result<Membership> {
        self.check_dim(g)?;
        let bad = |v: f64| !(-RANGE_TOL..=1.0 + RANGE_TOL).contains(&v);
        let mut row = Vec::new();
        for item in 1..=self.horizon() {
            self.beta_into(g.coords(), item, &mut row)?;
            if let Some(l) = row.iter().position(|&v| bad(v)) {
                return Ok(Membership {
                    inside: false,
                    violation: Some((item, l + 1)),
                });
            }
        }
        if let Some(gen) = self.generator() {
            let tail = gen.tail_form(g.coords());
            let first = self.horizon() + 1;
            let t_max = 1.0 / (first as f64).sqrt();
            // first generated item
            for c in 0..gen.categories() {
                if bad(tail.intercept[c] + tail.slope[c] * t_max) {
                    return Ok(Membership {
                        inside: false,
                        violation: Some((first, c + 1)),
                    });
                }
            }
            // the j -> infinity limit; entries move monotonically toward it
            let mut earliest: Option<(usize, usize)> = None;
            for c in 0..gen.categories() {
                let (a, b) = (tail.intercept[c], tail.slope[c]);
                if !bad(a) {
                    continue;
                }
                let bound = if a < 0.0 { -RANGE_TOL } else { 1.0 + RANGE_TOL };
                let t_cross = (bound - a) / b;
                let mut item = if t_cross > 0.0 {
                    ((1.0 / (t_cross * t_cross)).floor() as usize).max(first)
                } else {
                    first
                };
                while !bad(a + b / (item as f64).sqrt()) {
                    item += 1;
                }
                if earliest.is_none_or(|(j, _)| item < j) {
                    earliest = Some((item, c + 1));
                }
            }
            if let Some(v) = earliest {
                return Ok(Membership {
                    inside: false,
                    violation: Some(v),
                });
            }
        }
        Ok(Membership {
            inside: true,
            violation: None,
        })
    }

    /// Errors unless `g` lies in Q.
    pub fn require_in_q(&self, g: &LatentPoint) -> Result<()> {
        let m = self.in_q(g)?;
        match m.violation {
            None => Ok(()),
            Some((item, category)) => {
                let mut row = Vec::new();
                let value = self
                    .beta_into(g.coords(), item, &mut row)
                    .map(|_| row[category - 1])
                    .unwrap_or(f64::NAN);
                Err(LlsError::OutsideQ {
                    item,
                    category,
                    value,
                })
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorDoc {
    family: GeneratorFamily,
    #[serde(default)]
    params: Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    #[serde(rename = "K")]
    k: usize,
    counts: Vec<usize>,
    /// Defaults to the length of `counts`.
    horizon: Option<usize>,
    basis: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    generator: Option<GeneratorDoc>,
}

impl TryFrom<ModelDoc> for ModelSpec {
    type Error = LlsError;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        if let Some(h) = doc.horizon.filter(|&h| h != doc.counts.len()) {
            return Err(LlsError::Structure(format!(
                "horizon is {h} but counts has {} entries",
                doc.counts.len()
            )));
        }
        if doc.basis.len() != doc.k {
            return Err(LlsError::Structure(format!(
                "K is {} but basis has {} vectors",
                doc.k,
                doc.basis.len()
            )));
        }
        let generator = doc.generator.map(Generator::from_doc).transpose()?;
        let items = ItemSpace::new(doc.counts, generator)?;
        ModelSpec::new(doc.basis.into_iter().map(BasisVector::new).collect(), items)
    }
}

impl Serialize for ModelSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelDoc {
            k: self.k,
            counts: self.items.counts.clone(),
            horizon: Some(self.horizon()),
            basis: self.basis.iter().map(|v| v.rows.clone()).collect(),
            generator: self.generator().map(|g| GeneratorDoc {
                family: g.family,
                params: g.params.clone(),
            }),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = ModelDoc::deserialize(d)?;
        ModelSpec::try_from(doc).map_err(D::Error::custom)
    }
}
