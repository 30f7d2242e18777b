//! Acceptance gate. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each. Exits non-zero on any result that differs from
//! `EXPECTED_FAIL`, including an expected failure that starts passing.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use lls_core::converge::{convergence_curve, CurveVerdict};
use lls_core::hellinger::{
    hellinger_item, hellinger_product, hellinger_sum, midpoint_divergence_check,
    simple_inequality_check,
};
use lls_core::identify::{mixing_covariance, rank_test, singular_value_rank, RankVerdict};
use lls_core::measure::MixingMeasure;
use lls_core::model::{BasisVector, ItemSpace, LatentPoint, ModelSpec};
use lls_core::posterior::PosteriorEngine;
use lls_core::rng::stream_rng;
use lls_core::scenarios::{
    builtin, scenario_binary_counterexample, scenario_remark_tail_equivalent, scenario_sqrt_decay,
};
use rand::Rng;

/// Criteria known not to hold; see the notes on logarithmic separation in
/// the README.
const EXPECTED_FAIL: &[&str] = &["6a"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn c1_exact_constants() -> Outcome {
    let s = scenario_binary_counterexample();
    let (a, b) = (&s.grid[0], &s.grid[1]);
    let start = Instant::now();
    let p = hellinger_product(a, b, 64, &s.model).unwrap();
    let sum = hellinger_sum(a, b, 64, &s.model).unwrap();
    let elapsed = start.elapsed();
    let mut worst: f64 = 0.0;
    for n in 2..=4096 {
        worst = worst.max((hellinger_sum(a, b, n, &s.model).unwrap() - 2.0).abs());
    }
    let zero_at_1 = hellinger_item(a, b, 1, &s.model).unwrap() == 0.0;
    outcome(
        p == 0.0
            && zero_at_1
            && (sum - 2.0).abs() <= 1e-15
            && worst <= 1e-15
            && elapsed < Duration::from_millis(1),
        format!("product={p}, max|sum_N-2| over N in 2..=4096 = {worst:e}, time={elapsed:?}"),
    )
}

fn kahan(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

fn c2_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for (si, s) in builtin().iter().enumerate() {
        let mut rng = stream_rng(2024, si as u64);
        for _ in 0..100 {
            let a = s.sample_point(&mut rng);
            let b = s.sample_point(&mut rng);
            let sum = hellinger_sum(&a, &b, 1_000, &s.model).unwrap();
            let direct = 2.0
                * kahan((1..=1_000).map(|j| 1.0 - hellinger_item(&a, &b, j, &s.model).unwrap()));
            worst = worst.max((sum - direct).abs());
        }
    }
    outcome(
        worst <= 1e-12,
        format!("max deviation {worst:e} over 100 pairs per scenario"),
    )
}

fn c3_inequalities() -> Outcome {
    let mut min_slack = f64::INFINITY;
    for i in 0..100 {
        for k in 0..100 {
            let c = simple_inequality_check(i as f64 / 99.0, k as f64 / 99.0).unwrap();
            min_slack = min_slack.min(c.rhs - c.lhs);
        }
    }
    let mut midpoint_ok = true;
    let mut pairs = 0;
    for s in builtin() {
        let depth = if s.model.items().reaches(10_000) {
            10_000
        } else {
            s.model.horizon()
        };
        for i in 0..s.grid.len() {
            for j in 0..s.grid.len() {
                if i != j {
                    let r =
                        midpoint_divergence_check(&s.grid[i], &s.grid[j], &s.model, depth).unwrap();
                    midpoint_ok &= r.holds && r.termwise_violations == 0;
                    pairs += 1;
                }
            }
        }
    }
    outcome(
        min_slack >= -1e-15 && midpoint_ok,
        format!(
            "min grid slack {min_slack:e}; midpoint bound on {pairs} ordered pairs: {midpoint_ok}"
        ),
    )
}

fn c4_growth_law() -> Outcome {
    let s = scenario_sqrt_decay();
    let (a, b) = (s.embedding.embed(-1.0), s.embedding.embed(1.0));
    let start = Instant::now();
    let sum = hellinger_sum(&a, &b, 1_000_000, &s.model).unwrap();
    let elapsed = start.elapsed();
    let ratio = sum / 1e6f64.ln();
    outcome(
        (ratio - 1.0).abs() <= 0.2 && elapsed < Duration::from_secs(1),
        format!("sum/ln N = {ratio:.4} (target 1), time={elapsed:?}"),
    )
}

fn likelihood(g: &LatentPoint, a: &[usize], model: &ModelSpec) -> f64 {
    a.iter()
        .enumerate()
        .map(|(j, &cat)| {
            (0..model.k())
                .map(|k| g.coords()[k] * model.basis_row(k, j + 1).unwrap()[cat - 1])
                .sum::<f64>()
        })
        .product()
}

fn c5_posterior_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_tower: f64 = 0.0;
    let mut checked = 0;
    for s in builtin() {
        if s.mixing.len() > 4 || !(1..=3).all(|j| s.model.count(j).unwrap() == 2) {
            continue;
        }
        checked += 1;
        let engine = PosteriorEngine::new(&s.mixing, &s.model, 3).unwrap();
        let mut tower = vec![0.0; s.model.k()];
        for bits in 0..8usize {
            let a: Vec<usize> = (0..3).map(|j| 1 + ((bits >> j) & 1)).collect();
            let weights: Vec<f64> = s
                .mixing
                .atoms()
                .iter()
                .map(|at| at.w * likelihood(&at.g, &a, &s.model))
                .collect();
            let evidence: f64 = weights.iter().sum();
            if evidence == 0.0 {
                continue;
            }
            let e = engine.posterior(&a).unwrap();
            for k in 0..s.model.k() {
                let oracle: f64 = s
                    .mixing
                    .atoms()
                    .iter()
                    .zip(&weights)
                    .map(|(at, w)| w * at.g.coords()[k])
                    .sum::<f64>()
                    / evidence;
                worst = worst.max((e.point.coords()[k] - oracle).abs());
                tower[k] += evidence * e.point.coords()[k];
            }
        }
        for (t, m) in tower.iter().zip(s.mixing.mean()) {
            worst_tower = worst_tower.max((t - m).abs());
        }
    }
    outcome(
        checked > 0 && worst <= 1e-12 && worst_tower <= 1e-10,
        format!("{checked} scenarios; max |e_n - oracle| {worst:e}; max tower gap {worst_tower:e}"),
    )
}

fn c6a_sqrt_decay_converges() -> Outcome {
    let s = scenario_sqrt_decay();
    let start = Instant::now();
    let c = convergence_curve(&s.id, &s.model, &s.mixing, &s.mixing, &s.curve, None).unwrap();
    let elapsed = start.elapsed();
    let first = c.rows[0].mean_distance;
    let last = c.rows.last().unwrap().mean_distance;
    let means: Vec<String> = c
        .rows
        .iter()
        .map(|r| format!("{:.4}", r.mean_distance))
        .collect();
    outcome(
        c.verdict == CurveVerdict::Converging
            && last < first / 5.0
            && elapsed < Duration::from_secs(60),
        format!(
            "verdict {:?}, W1 means [{}], last/first {:.3} (need < 0.2), time={elapsed:?}",
            c.verdict,
            means.join(", "),
            last / first
        ),
    )
}

fn c6b_remark_plateau() -> Outcome {
    let s = scenario_remark_tail_equivalent();
    let c = convergence_curve(
        &s.id,
        &s.model,
        &s.mixing,
        &s.mixing,
        &s.curve,
        s.refinement.as_ref(),
    )
    .unwrap();
    let exact = 5.0 / 36.0;
    let rel = (c.fit.floor - exact).abs() / exact;
    outcome(
        c.verdict == CurveVerdict::Plateau && rel <= 0.15,
        format!(
            "verdict {:?}, floor {:.5} vs 5/36 (rel err {rel:.4})",
            c.verdict, c.fit.floor
        ),
    )
}

fn det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))
            .unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            d = -d;
        }
        d *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    d
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|b| b.count_ones() as usize == k)
        .map(|b| (0..n).filter(|i| b >> i & 1 == 1).collect())
        .collect()
}

fn minor_rank(m: &[Vec<f64>]) -> usize {
    let n = m.len();
    let scale = m.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
    if scale == 0.0 {
        return 0;
    }
    let mut rank = 0;
    for k in 1..=n {
        let sets = subsets(n, k);
        let found = sets.iter().any(|rows| {
            sets.iter().any(|cols| {
                let sub = rows
                    .iter()
                    .map(|&r| cols.iter().map(|&c| m[r][c]).collect())
                    .collect();
                det(sub).abs() > 1e-10 * scale.powi(k as i32)
            })
        });
        if !found {
            break;
        }
        rank = k;
    }
    rank
}

fn random_case(seed: u64) -> (ModelSpec, MixingMeasure) {
    let mut rng = stream_rng(seed, 77);
    let k = rng.random_range(2..=5);
    let atoms = rng.random_range(1..=6);
    let basis = (0..k)
        .map(|_| {
            BasisVector::new(
                (0..4)
                    .map(|_| {
                        let p: f64 = rng.random_range(0.05..0.95);
                        vec![p, 1.0 - p]
                    })
                    .collect(),
            )
        })
        .collect();
    let model = ModelSpec::new(basis, ItemSpace::new(vec![2; 4], None).unwrap()).unwrap();
    let pts = (0..atoms)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.01).collect();
            let s: f64 = raw.iter().sum();
            (
                LatentPoint::new(raw.iter().map(|x| x / s).collect()).unwrap(),
                1.0 / atoms as f64,
            )
        })
        .collect();
    (model, MixingMeasure::discrete(pts).unwrap())
}

fn c7_identifiability() -> Outcome {
    let s = scenario_sqrt_decay();
    let mu = MixingMeasure::discrete(vec![
        (s.embedding.embed(-0.6), 0.5),
        (s.embedding.embed(0.4), 0.5),
    ])
    .unwrap();
    let c = mixing_covariance(&mu, &s.model, 8).unwrap();
    let r2 = rank_test(&c, 2, 1e-9).unwrap();
    let ratio = r2.singular_values[1] / r2.singular_values[0];
    let r3 = rank_test(&c, 3, 1e-9).unwrap();
    let mut mismatches = 0;
    let cases = 50;
    for seed in 0..cases {
        let (model, mu) = random_case(seed);
        let cov = mixing_covariance(&mu, &model, 4).unwrap();
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| (0..8).map(|j| cov.matrix[(i, j)]).collect())
            .collect();
        if singular_value_rank(&cov.matrix, 1e-9).0 != minor_rank(&rows) {
            mismatches += 1;
        }
    }
    outcome(
        r2.rank == 1
            && ratio < 1e-9
            && r2.verdict == RankVerdict::Consistent
            && r3.verdict != RankVerdict::Consistent
            && mismatches == 0,
        format!(
            "K=2 rank {} (s2/s1 {ratio:.1e}) {:?}; K=3 {:?}; SVD vs minors mismatches {mismatches}/{cases}",
            r2.rank, r2.verdict, r3.verdict
        ),
    )
}

fn c8_reproducible() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"scenario": "sqrt-decay", "seed": 4242}"#).unwrap();
    let run = |jobs: &str, out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_lls-lab"))
            .args(["converge", "--config"])
            .arg(&cfg)
            .args(["--jobs", jobs, "--seed", "99", "--out"])
            .arg(dir.path().join(out))
            .output()
            .unwrap()
            .status;
        assert!(status.success());
    };
    run("1", "a");
    run("4", "b");
    let mut same = true;
    for f in ["curve.csv", "pushforward.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        same &= a == b && !a.is_empty();
    }
    outcome(
        same,
        "curve.csv and pushforward.csv with --jobs 1 vs --jobs 4",
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Outcome); 9] = [
        ("1", "counterexample constants", c1_exact_constants),
        ("2", "Hellinger identity", c2_identity),
        ("3", "inequality grid and midpoint bound", c3_inequalities),
        ("4", "growth law at N = 1e6", c4_growth_law),
        (
            "5",
            "posterior oracle and tower property",
            c5_posterior_oracle,
        ),
        ("6a", "sqrt-decay converges", c6a_sqrt_decay_converges),
        ("6b", "remark family plateaus at 5/36", c6b_remark_plateau),
        ("7", "identifiability rank", c7_identifiability),
        ("8", "reproducibility across --jobs", c8_reproducible),
    ];
    let mut unexpected = 0;
    for (id, name, run) in criteria {
        let o = run();
        let expected_fail = EXPECTED_FAIL.contains(&id);
        let tag = match (o.pass, expected_fail) {
            (true, false) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
            (true, true) => "PASS (unexpected)",
        };
        if o.pass == expected_fail {
            unexpected += 1;
        }
        println!("{tag:<18} criterion {id:<3} {name}: {}", o.detail);
    }
    if unexpected > 0 {
        println!("{unexpected} criteria differ from the expected outcome");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
