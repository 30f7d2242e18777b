use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _, Result};
use lls_core::converge::convergence_curve;
use lls_core::hellinger::pairwise_scan;
use lls_core::identify::{mixing_covariance, profile_rank, rank_test, sampled_covariance};
use lls_core::io::{
    fmt_f64, read_outcomes_csv, write_covariance_csv, write_curve_csv, write_empirical_csv,
    write_verdict_csv,
};
use lls_core::posterior::{pushforward_estimate, PosteriorEngine};
use lls_core::rng::derive_seed;
use serde_json::json;

use crate::config::{resolve, resolve_experiment, ExperimentConfig};

pub struct Context {
    pub seed: u64,
    pub out: PathBuf,
    /// Directory of the config file; relative paths in it resolve here.
    pub base: PathBuf,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let p = dir.join(name);
    Ok(BufWriter::new(File::create(&p).with_context(|| {
        format!("cannot create {}", p.display())
    })?))
}

fn write_json(dir: &Path, name: &str, v: &serde_json::Value) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn diagnose(cfg: &ExperimentConfig, ctx: &Context) -> Result<u8> {
    let r = resolve_experiment(cfg, ctx.seed)?;
    let scan = pairwise_scan(&r.model, &r.grid, r.depth, r.thresholds)?;
    let mut w = create(&ctx.out, "verdicts.csv")?;
    writeln!(
        w,
        "# scenario={}, depth={}, decay={}, floor={}",
        r.id,
        r.depth,
        fmt_f64(r.thresholds.decay),
        fmt_f64(r.thresholds.floor)
    )?;
    write_verdict_csv(&mut w, &scan)?;
    w.flush()?;
    let undecided = scan.undecided_fraction();
    write_json(
        &ctx.out,
        "diagnose.json",
        &json!({
            "scenario": r.id,
            "seed": r.seed,
            "undecided_fraction": undecided,
            "scan": scan,
        }),
    )?;
    println!(
        "{}: {} grid points, depth {}, undecided fraction {undecided:.3}",
        r.id,
        r.grid.len(),
        r.depth
    );
    Ok(if !scan.pairs.is_empty() && undecided >= 0.5 {
        2
    } else {
        0
    })
}

pub fn estimate(cfg: &ExperimentConfig, ctx: &Context, outcomes: Option<PathBuf>) -> Result<u8> {
    let r = resolve_experiment(cfg, ctx.seed)?;
    let path = outcomes
        .or_else(|| cfg.outcomes.as_ref().map(|o| resolve(&ctx.base, o)))
        .ok_or_else(|| anyhow!("no outcomes file: pass --outcomes or set field outcomes"))?;
    let file = File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
    let rows = read_outcomes_csv(file)?;
    let k = r.model.k();

    let checked: Vec<std::result::Result<Vec<usize>, String>> = rows
        .into_iter()
        .map(|row| {
            let seq = row?;
            seq.validate(&r.model).map_err(|e| e.to_string())?;
            Ok(seq.0)
        })
        .collect();
    let n_max = checked
        .iter()
        .filter_map(|c| c.as_ref().ok().map(|s| s.len()))
        .max()
        .unwrap_or(0);
    let engine = PosteriorEngine::new(&r.mixing, &r.model, n_max)?;

    let mut w = create(&ctx.out, "posterior.csv")?;
    let header: Vec<String> = ["row".to_string(), "n".to_string()]
        .into_iter()
        .chain((1..=k).map(|i| format!("e{i}")))
        .chain(["top_atom", "top_mass", "error"].map(String::from))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    let mut failures = 0;
    for (i, row) in checked.iter().enumerate() {
        let result = row
            .as_ref()
            .map_err(Clone::clone)
            .and_then(|a| engine.posterior(a).map_err(|e| e.to_string()));
        let n = row
            .as_ref()
            .map(|a| a.len().to_string())
            .unwrap_or_default();
        let cells: Vec<String> = match result {
            Ok(p) => {
                let (top, mass) = p.top_atom();
                p.point
                    .coords()
                    .iter()
                    .map(|&x| fmt_f64(x))
                    .chain([top.to_string(), fmt_f64(mass), String::new()])
                    .collect()
            }
            Err(msg) => {
                failures += 1;
                std::iter::repeat_n(String::new(), k + 2)
                    .chain([csv_escape(&msg)])
                    .collect()
            }
        };
        writeln!(w, "{},{n},{}", i + 1, cells.join(","))?;
    }
    w.flush()?;
    println!("{}: {} rows, {failures} flagged", r.id, checked.len());
    Ok(0)
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn converge(cfg: &ExperimentConfig, ctx: &Context) -> Result<u8> {
    let r = resolve_experiment(cfg, ctx.seed)?;
    let curve = convergence_curve(
        &r.id,
        &r.model,
        &r.mixing,
        &r.reference,
        &r.curve,
        r.refinement.as_ref(),
    )?;
    let mut w = create(&ctx.out, "curve.csv")?;
    writeln!(
        w,
        "# scenario={}, seed={}, decay_factor={}, converge_sigmas={}, plateau_sigmas={}, zero_tol={}",
        r.id,
        r.seed,
        curve.rules.decay_factor,
        curve.rules.converge_sigmas,
        curve.rules.plateau_sigmas,
        fmt_f64(curve.rules.zero_tol)
    )?;
    write_curve_csv(&mut w, &curve)?;
    w.flush()?;

    let n_last = *r.curve.n_grid.last().expect("validated");
    let est = pushforward_estimate(
        &r.mixing,
        &r.model,
        n_last,
        r.curve.replicates,
        derive_seed(r.seed, &[u64::MAX - 1]),
    )?;
    let mut w = create(&ctx.out, "pushforward.csv")?;
    write_empirical_csv(&mut w, &est)?;
    w.flush()?;

    write_json(&ctx.out, "curve.json", &serde_json::to_value(&curve)?)?;
    println!(
        "{}: verdict {:?}, floor {:.5} ± {:.5}, last/first {:.3}",
        r.id, curve.verdict, curve.fit.floor, curve.fit.floor_stderr, curve.fit.decay_ratio
    );
    Ok(0)
}

pub fn identify(cfg: &ExperimentConfig, ctx: &Context) -> Result<u8> {
    let r = resolve_experiment(cfg, ctx.seed)?;
    let items = cfg.items.unwrap_or(r.model.horizon());
    let k = cfg.k.unwrap_or(r.model.k());
    let tol = cfg.rank_tol.unwrap_or(1e-9);
    let cov = match cfg.samples {
        Some(s) => sampled_covariance(&r.mixing, &r.model, items, s, r.seed)?,
        None => mixing_covariance(&r.mixing, &r.model, items)?,
    };
    let mut report = rank_test(&cov, k, tol)?;
    report.profile_rank = Some(profile_rank(&r.mixing, &r.model, items, tol)?);
    let mut w = create(&ctx.out, "covariance.csv")?;
    write_covariance_csv(&mut w, &cov)?;
    w.flush()?;
    write_json(
        &ctx.out,
        "rank.json",
        &json!({
            "scenario": r.id,
            "items": items,
            "provenance": cov.provenance,
            "report": report,
        }),
    )?;
    println!(
        "{}: rank {} (expected {}), verdict {:?}",
        r.id, report.rank, report.expected_rank, report.verdict
    );
    Ok(0)
}
