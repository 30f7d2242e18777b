//! Orthogonality diagnostics for pairs of independent measures.
//!
//! For latent points g′, g″ the per-item Hellinger affinity is
//! h_j = Σ_l √(β_{jl}(g′) β_{jl}(g″)). P_{g′} ⊥ P_{g″} exactly when the
//! infinite product Π h_j vanishes. The companion series
//! H⁺ = Σ_j Σ_l (√β_{jl}(g′) − √β_{jl}(g″))² = 2 Σ_j (1 − h_j) diverges
//! whenever the product vanishes through decay rather than through a single
//! zero factor.
//!
//! Finite computation cannot settle an infinite product in general, so a
//! verdict is only exact when a zero factor is found or when the model's tail
//! generator yields a certificate; everything else is labeled heuristic.

use std::f64::consts::SQRT_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LlsError, Result};
use crate::model::{LatentPoint, ModelSpec};

/// Constant of the midpoint inequality (3/2 − √2)(√a − √b)² ≤ (√((a+b)/2) − √b)².
pub const MIDPOINT_CONSTANT: f64 = 1.5 - SQRT_2;

/// Default truncation depth for generator-backed models.
pub const DEFAULT_DEPTH: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Products below this count as orthogonal (heuristic).
    pub decay: f64,
    /// A constant-tail head product above this counts as non-orthogonal.
    pub floor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            decay: 1e-8,
            floor: 1e-6,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.floor > 0.0) {
            return Err(LlsError::Parameter("thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    OrthogonalZeroFactor,
    OrthogonalByDecay,
    NonOrthogonal,
    Undecided,
}

impl Verdict {
    /// One-letter code used in verdict matrices.
    pub fn code(self) -> char {
        match self {
            Verdict::OrthogonalZeroFactor => 'Z',
            Verdict::OrthogonalByDecay => 'D',
            Verdict::NonOrthogonal => 'N',
            Verdict::Undecided => 'U',
        }
    }

    pub fn is_orthogonal(self) -> bool {
        matches!(
            self,
            Verdict::OrthogonalZeroFactor | Verdict::OrthogonalByDecay
        )
    }
}

/// What the tail generator says about the pair beyond the horizon.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TailCertificate {
    /// Limit rows differ, so H⁺ terms tend to `limit_term` > 0.
    Separated { limit_term: f64 },
    /// Limit rows agree but slopes differ: every tail term is at least c/j.
    InverseJ { c: f64 },
    /// Tail rows coincide, so h_j = 1 past the horizon and the whole product
    /// is the finite head product.
    ConstantTail {
        head_product: f64,
        head_zero_at: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerdictBasis {
    pub rule: &'static str,
    pub heuristic: bool,
    pub thresholds: Thresholds,
    pub certificate: Option<TailCertificate>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HellingerReport {
    pub first: LatentPoint,
    pub second: LatentPoint,
    pub depth: usize,
    pub factors: Vec<f64>,
    pub product: f64,
    pub sum: f64,
    pub zero_factor_at: Option<usize>,
    pub verdict: Verdict,
    pub basis: VerdictBasis,
}

/// (h_j, Σ_l (√p − √q)²) for one pair of rows.
fn item_terms(p: &[f64], q: &[f64]) -> (f64, f64) {
    if p == q {
        return (1.0, 0.0);
    }
    let mut h = 0.0;
    let mut term = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let (sa, sb) = (a.max(0.0).sqrt(), b.max(0.0).sqrt());
        h += sa * sb;
        term += (sa - sb) * (sa - sb);
    }
    (h.clamp(0.0, 1.0), term)
}

fn check_pair(g1: &LatentPoint, g2: &LatentPoint, model: &ModelSpec) -> Result<()> {
    model.require_in_q(g1)?;
    model.require_in_q(g2)
}

/// Calls `visit(j, h_j, term_j)` for j = 1..=depth.
fn walk_pair<F>(
    g1: &LatentPoint,
    g2: &LatentPoint,
    model: &ModelSpec,
    depth: usize,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, f64, f64),
{
    if depth == 0 {
        return Err(LlsError::Parameter("depth N must be at least 1".into()));
    }
    if !model.items().reaches(depth) {
        return Err(LlsError::OutOfRange {
            item: depth,
            horizon: model.horizon(),
        });
    }
    let (mut r1, mut r2) = (Vec::new(), Vec::new());
    for j in 1..=depth {
        model.beta_into(g1.coords(), j, &mut r1)?;
        model.beta_into(g2.coords(), j, &mut r2)?;
        let (h, t) = item_terms(&r1, &r2);
        visit(j, h, t);
    }
    Ok(())
}

/// h_j = Σ_l √(β_{jl}(g′) β_{jl}(g″)).
pub fn hellinger_item(
    g1: &LatentPoint,
    g2: &LatentPoint,
    item: usize,
    model: &ModelSpec,
) -> Result<f64> {
    check_pair(g1, g2, model)?;
    let r1 = model.beta_of(g1, item)?;
    let r2 = model.beta_of(g2, item)?;
    Ok(item_terms(&r1, &r2).0)
}

/// Π_{j≤N} h_j, accumulated in the log domain; exactly 0 on a zero factor.
pub fn hellinger_product(
    g1: &LatentPoint,
    g2: &LatentPoint,
    depth: usize,
    model: &ModelSpec,
) -> Result<f64> {
    check_pair(g1, g2, model)?;
    let mut log_sum = 0.0;
    let mut zero = false;
    walk_pair(g1, g2, model, depth, |_, h, _| {
        if h == 0.0 {
            zero = true;
        } else {
            log_sum += h.ln();
        }
    })?;
    Ok(if zero { 0.0 } else { log_sum.exp() })
}

/// Partial sum of H⁺ up to depth N.
pub fn hellinger_sum(
    g1: &LatentPoint,
    g2: &LatentPoint,
    depth: usize,
    model: &ModelSpec,
) -> Result<f64> {
    check_pair(g1, g2, model)?;
    let mut sum = CompensatedSum::default();
    walk_pair(g1, g2, model, depth, |_, _, t| sum.add(t))?;
    Ok(sum.value())
}

/// Neumaier summation; long H⁺ partial sums otherwise drift by many ulps.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

fn tail_certificate(
    g1: &LatentPoint,
    g2: &LatentPoint,
    model: &ModelSpec,
) -> Result<Option<TailCertificate>> {
    let Some(gen) = model.generator() else {
        return Ok(None);
    };
    let t1 = gen.tail_form(g1.coords());
    let t2 = gen.tail_form(g2.coords());
    let max_gap = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    if max_gap(&t1.intercept, &t2.intercept) > 1e-12 {
        let limit_term = item_terms(&t1.intercept, &t2.intercept).1;
        return Ok(Some(TailCertificate::Separated { limit_term }));
    }
    if max_gap(&t1.slope, &t2.slope) > 1e-12 {
        // (√x − √y)² ≥ (x − y)²/4 on [0,1], and x − y = Δb/√j
        let c = t1
            .slope
            .iter()
            .zip(&t2.slope)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 4.0;
        return Ok(Some(TailCertificate::InverseJ { c }));
    }
    let mut log_sum = 0.0;
    let mut head_zero_at = None;
    walk_pair(g1, g2, model, model.horizon(), |j, h, _| {
        if h == 0.0 {
            head_zero_at.get_or_insert(j);
        } else {
            log_sum += h.ln();
        }
    })?;
    let head_product = if head_zero_at.is_some() {
        0.0
    } else {
        log_sum.exp()
    };
    Ok(Some(TailCertificate::ConstantTail {
        head_product,
        head_zero_at,
    }))
}

/// Full diagnostic for one pair at truncation depth N.
pub fn orthogonality_verdict(
    g1: &LatentPoint,
    g2: &LatentPoint,
    model: &ModelSpec,
    depth: usize,
    thresholds: Thresholds,
) -> Result<HellingerReport> {
    thresholds.validate()?;
    check_pair(g1, g2, model)?;
    let mut factors = Vec::with_capacity(depth);
    let mut acc = CompensatedSum::default();
    let mut log_sum = 0.0;
    let mut zero_factor_at = None;
    walk_pair(g1, g2, model, depth, |j, h, t| {
        factors.push(h);
        acc.add(t);
        if h == 0.0 {
            zero_factor_at.get_or_insert(j);
        } else {
            log_sum += h.ln();
        }
    })?;
    let sum = acc.value();
    let product = if zero_factor_at.is_some() {
        0.0
    } else {
        log_sum.exp()
    };
    let certificate = tail_certificate(g1, g2, model)?;
    if let Some(TailCertificate::ConstantTail {
        head_zero_at: Some(j),
        ..
    }) = certificate
    {
        zero_factor_at.get_or_insert(j);
    }

    let (verdict, rule, heuristic) = if zero_factor_at.is_some() {
        (Verdict::OrthogonalZeroFactor, "zero-factor", false)
    } else if g1.coords() == g2.coords() {
        (Verdict::NonOrthogonal, "identical-points", false)
    } else if let Some(TailCertificate::Separated { .. }) = certificate {
        (Verdict::OrthogonalByDecay, "tail-separated", false)
    } else if let Some(TailCertificate::InverseJ { .. }) = certificate {
        (Verdict::OrthogonalByDecay, "inverse-j-lower-bound", false)
    } else if product < thresholds.decay {
        (
            Verdict::OrthogonalByDecay,
            "product-below-decay-threshold",
            true,
        )
    } else if let Some(TailCertificate::ConstantTail { head_product, .. }) = certificate {
        if head_product > thresholds.floor {
            (Verdict::NonOrthogonal, "constant-tail-head-product", false)
        } else {
            (Verdict::Undecided, "constant-tail-head-below-floor", true)
        }
    } else {
        (Verdict::Undecided, "no-rule", true)
    };

    Ok(HellingerReport {
        first: g1.clone(),
        second: g2.clone(),
        depth,
        factors,
        product,
        sum,
        zero_factor_at,
        verdict,
        basis: VerdictBasis {
            rule,
            heuristic,
            thresholds,
            certificate,
        },
    })
}

/// Symmetric verdict matrix over a grid plus the per-pair reports (i < j,
/// row-major).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerdictMatrix {
    pub grid: Vec<LatentPoint>,
    pub depth: usize,
    pub thresholds: Thresholds,
    pub verdicts: Vec<Vec<Verdict>>,
    pub pairs: Vec<(usize, usize, HellingerReport)>,
}

impl VerdictMatrix {
    /// Fraction of off-diagonal pairs left undecided (0 for a singleton grid).
    pub fn undecided_fraction(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        let u = self
            .pairs
            .iter()
            .filter(|(_, _, r)| r.verdict == Verdict::Undecided)
            .count();
        u as f64 / self.pairs.len() as f64
    }
}

pub fn pairwise_scan(
    model: &ModelSpec,
    grid: &[LatentPoint],
    depth: usize,
    thresholds: Thresholds,
) -> Result<VerdictMatrix> {
    thresholds.validate()?;
    for g in grid {
        model.require_in_q(g)?;
    }
    let m = grid.len();
    let index: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();
    let reports = index
        .par_iter()
        .map(|&(i, j)| orthogonality_verdict(&grid[i], &grid[j], model, depth, thresholds))
        .collect::<Result<Vec<_>>>()?;
    let mut verdicts = vec![vec![Verdict::NonOrthogonal; m]; m];
    for (&(i, j), r) in index.iter().zip(&reports) {
        verdicts[i][j] = r.verdict;
        verdicts[j][i] = r.verdict;
    }
    Ok(VerdictMatrix {
        grid: grid.to_vec(),
        depth,
        thresholds,
        verdicts,
        pairs: index
            .into_iter()
            .zip(reports)
            .map(|((i, j), r)| (i, j, r))
            .collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// (3/2 − √2)(√a − √b)² against (√((a+b)/2) − √b)² for a, b ∈ [0, 1].
pub fn simple_inequality_check(a: f64, b: f64) -> Result<InequalityCheck> {
    for v in [a, b] {
        if !(0.0..=1.0).contains(&v) {
            return Err(LlsError::Domain { value: v });
        }
    }
    let d = a.sqrt() - b.sqrt();
    let lhs = MIDPOINT_CONSTANT * d * d;
    let e = ((a + b) / 2.0).sqrt() - b.sqrt();
    let rhs = e * e;
    Ok(InequalityCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-15,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MidpointReport {
    pub depth: usize,
    /// Partial H⁺ sum between the midpoint and g″.
    pub midpoint_sum: f64,
    /// (3/2 − √2) times the partial H⁺ sum between g′ and g″.
    pub scaled_sum: f64,
    pub holds: bool,
    /// Items where the per-item bound fails beyond 1e−15.
    pub termwise_violations: usize,
    /// min_j (term_j(mid, g″) − c · term_j(g′, g″)).
    pub min_term_slack: f64,
}

/// Checks H⁺_N((g′+g″)/2, g″) ≥ (3/2 − √2) H⁺_N(g′, g″) term by term.
pub fn midpoint_divergence_check(
    g1: &LatentPoint,
    g2: &LatentPoint,
    model: &ModelSpec,
    depth: usize,
) -> Result<MidpointReport> {
    check_pair(g1, g2, model)?;
    let mid = LatentPoint::midpoint(g1, g2);
    model.require_in_q(&mid)?;
    if depth == 0 || !model.items().reaches(depth) {
        return Err(LlsError::OutOfRange {
            item: depth,
            horizon: model.horizon(),
        });
    }
    let (mut r1, mut r2, mut rm) = (Vec::new(), Vec::new(), Vec::new());
    let mut midpoint_sum = 0.0;
    let mut full_sum = 0.0;
    let mut termwise_violations = 0;
    let mut min_term_slack = f64::INFINITY;
    for j in 1..=depth {
        model.beta_into(g1.coords(), j, &mut r1)?;
        model.beta_into(g2.coords(), j, &mut r2)?;
        model.beta_into(mid.coords(), j, &mut rm)?;
        let t_mid = item_terms(&rm, &r2).1;
        let t_full = item_terms(&r1, &r2).1;
        midpoint_sum += t_mid;
        full_sum += t_full;
        let slack = t_mid - MIDPOINT_CONSTANT * t_full;
        min_term_slack = min_term_slack.min(slack);
        if slack < -1e-15 {
            termwise_violations += 1;
        }
    }
    let scaled_sum = MIDPOINT_CONSTANT * full_sum;
    Ok(MidpointReport {
        depth,
        midpoint_sum,
        scaled_sum,
        holds: midpoint_sum >= scaled_sum - 1e-9,
        termwise_violations,
        min_term_slack,
    })
}
