use lls_core::measure::{MixingMeasure, OutcomeSequence};
use lls_core::model::{LatentPoint, ModelSpec};
use lls_core::posterior::{
    individual_trajectory, posterior_mean, pushforward_estimate, PosteriorEngine,
};
use lls_core::rng::stream_rng;
use lls_core::scenarios::{builtin, scenario_remark_tail_equivalent, scenario_sqrt_decay};
use lls_core::LlsError;
use proptest::prelude::*;

/// P_g(a) as a plain product of Σₖ gₖ λᵏ entries.
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

fn brute_force_mean(mu: &MixingMeasure, a: &[usize], model: &ModelSpec) -> (f64, Vec<f64>) {
    let mut evidence = 0.0;
    let mut num = vec![0.0; model.k()];
    for atom in mu.atoms() {
        let p = atom.w * likelihood(&atom.g, a, model);
        evidence += p;
        for (n, x) in num.iter_mut().zip(atom.g.coords()) {
            *n += p * x;
        }
    }
    (evidence, num.into_iter().map(|x| x / evidence).collect())
}

fn binary_sequences(n: usize) -> Vec<Vec<usize>> {
    (0..1usize << n)
        .map(|bits| (0..n).map(|j| 1 + ((bits >> j) & 1)).collect())
        .collect()
}

fn small_binary_scenarios() -> Vec<lls_core::scenarios::Scenario> {
    builtin()
        .into_iter()
        .filter(|s| s.mixing.len() <= 4 && (1..=3).all(|j| s.model.count(j).unwrap() == 2))
        .collect()
}

#[test]
fn posterior_matches_enumeration() {
    let scens = small_binary_scenarios();
    assert!(scens.len() >= 3);
    for s in scens {
        let engine = PosteriorEngine::new(&s.mixing, &s.model, 3).unwrap();
        let mut tower = vec![0.0; s.model.k()];
        for a in binary_sequences(3) {
            let (evidence, oracle) = brute_force_mean(&s.mixing, &a, &s.model);
            if evidence == 0.0 {
                assert!(matches!(engine.posterior(&a), Err(LlsError::ZeroEvidence)));
                continue;
            }
            let got = engine.posterior(&a).unwrap();
            for k in 0..s.model.k() {
                assert!(
                    (got.point.coords()[k] - oracle[k]).abs() <= 1e-12,
                    "{} {a:?}",
                    s.id
                );
                tower[k] += evidence * got.point.coords()[k];
            }
        }
        for (t, m) in tower.iter().zip(s.mixing.mean()) {
            assert!((t - m).abs() <= 1e-10, "{}: tower {t} vs {m}", s.id);
        }
    }
}

#[test]
fn refinement_is_a_martingale() {
    for s in small_binary_scenarios() {
        let engine = PosteriorEngine::new(&s.mixing, &s.model, 5).unwrap();
        for a in binary_sequences(2) {
            let (ev_a, _) = brute_force_mean(&s.mixing, &a, &s.model);
            if ev_a == 0.0 {
                continue;
            }
            let e2 = engine.posterior(&a).unwrap().point;
            let mut avg = vec![0.0; s.model.k()];
            for b in binary_sequences(3) {
                let ab: Vec<usize> = a.iter().chain(&b).copied().collect();
                let (ev_ab, _) = brute_force_mean(&s.mixing, &ab, &s.model);
                if ev_ab == 0.0 {
                    continue;
                }
                let e5 = engine.posterior(&ab).unwrap().point;
                for k in 0..avg.len() {
                    avg[k] += ev_ab / ev_a * e5.coords()[k];
                }
            }
            for k in 0..avg.len() {
                assert!((avg[k] - e2.coords()[k]).abs() <= 1e-10, "{} {a:?}", s.id);
            }
        }
    }
}

proptest! {
    #[test]
    fn posterior_stays_in_hull(seed in 0u64..5_000, n in 1usize..30) {
        let s = scenario_sqrt_decay();
        let engine = PosteriorEngine::new(&s.mixing, &s.model, n).unwrap();
        let atom = seed as usize % s.mixing.len();
        let a = engine.draw(atom, n, &mut stream_rng(seed, 3));
        let e = engine.posterior(a.values()).unwrap();
        let xs: Vec<f64> = s.mixing.atoms().iter().map(|at| at.g.coords()[0]).collect();
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(e.point.coords()[0] >= lo - 1e-12 && e.point.coords()[0] <= hi + 1e-12);
        prop_assert!((e.point.coords().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((e.atom_posteriors.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn atom_relabeling_is_invisible(seed in 0u64..5_000) {
        let s = scenario_sqrt_decay();
        let mut atoms: Vec<(LatentPoint, f64)> =
            s.mixing.atoms().iter().map(|a| (a.g.clone(), a.w)).collect();
        atoms.reverse();
        let flipped = MixingMeasure::discrete(atoms).unwrap();
        let engine = PosteriorEngine::new(&s.mixing, &s.model, 12).unwrap();
        let a = engine.draw(seed as usize % 3, 12, &mut stream_rng(seed, 4));
        let p = posterior_mean(&s.mixing, &s.model, &a).unwrap().point;
        let q = posterior_mean(&flipped, &s.model, &a).unwrap().point;
        for k in 0..2 {
            prop_assert!((p.coords()[k] - q.coords()[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn pushforward_mean_matches_mixing_mean() {
    let s = scenario_sqrt_decay();
    let est = pushforward_estimate(&s.mixing, &s.model, 50, 4_000, 21).unwrap();
    let m = est.mean();
    let target = s.mixing.mean();
    // stratified latent draws leave only outcome noise; spread of e_n is < 1
    assert!(
        (m[0] - target[0]).abs() < 4.0 / (4_000f64).sqrt(),
        "{m:?} vs {target:?}"
    );
}

#[test]
fn remark_pushforward_has_two_support_points() {
    let s = scenario_remark_tail_equivalent();
    for n in [1, 10, 200] {
        let est = pushforward_estimate(&s.mixing, &s.model, n, 2_000, 3).unwrap();
        let mut xs: Vec<f64> = est
            .points
            .iter()
            .map(|p| s.embedding.scalar(p).unwrap())
            .collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        assert_eq!(xs.len(), 2, "n={n}: {xs:?}");
        assert!(
            (xs[0] - 1.0 / 3.0).abs() < 1e-3 && (xs[1] - 2.0 / 3.0).abs() < 1e-3,
            "{xs:?}"
        );
        let low = est
            .points
            .iter()
            .filter(|p| s.embedding.scalar(p).unwrap() < 0.5)
            .count() as f64
            / 2_000.0;
        assert!((low - 0.5).abs() < 4.0 * (0.25f64 / 2_000.0).sqrt());
    }
}

#[test]
fn trajectories_mostly_approach_truth() {
    let s = scenario_sqrt_decay();
    let (mut improved, mut streams) = (0, 0);
    let (mut err10, mut err400) = (0.0, 0.0);
    for atom in s.mixing.atoms() {
        let truth = s.embedding.scalar(&atom.g).unwrap();
        for seed in 0..60u64 {
            let traj =
                individual_trajectory(&atom.g, &s.mixing, &s.model, &[10, 400], seed).unwrap();
            let d0 = (s.embedding.scalar(&traj[0].estimate).unwrap() - truth).abs();
            let d1 = (s.embedding.scalar(&traj[1].estimate).unwrap() - truth).abs();
            improved += (d1 < d0) as usize;
            streams += 1;
            err10 += d0;
            err400 += d1;
        }
    }
    assert!(improved * 2 > streams, "{improved}/{streams}");
    assert!(err400 < err10, "{err400} vs {err10}");
}

#[test]
fn zero_evidence_is_reported() {
    let s = lls_core::scenarios::scenario_binary_counterexample();
    let mu = MixingMeasure::dirac(s.grid[0].clone());
    let engine = PosteriorEngine::new(&mu, &s.model, 2).unwrap();
    let ok = engine.posterior(&[1]);
    let bad = engine.posterior(&[2]);
    assert_eq!(ok.is_ok(), !bad.is_ok());
    assert!(matches!(
        posterior_mean(
            &mu,
            &s.model,
            &OutcomeSequence(vec![if ok.is_ok() { 2 } else { 1 }])
        ),
        Err(LlsError::ZeroEvidence)
    ));
}
