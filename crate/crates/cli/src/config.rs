use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use lls_core::converge::{CurveSettings, Metric};
use lls_core::hellinger::{Thresholds, DEFAULT_DEPTH};
use lls_core::scenarios::{by_id, RandomFamily, Scenario};
use lls_core::{LatentPoint, MixingMeasure, ModelSpec};
use serde::Deserialize;

/// One JSON document describing an experiment. Every field is optional;
/// unset fields fall back to the scenario's defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Option<String>,
    pub random: Option<RandomFamily>,
    pub model: Option<ModelSpec>,
    pub mixing: Option<MixingMeasure>,
    pub grid: Option<Vec<LatentPoint>>,
    pub depth: Option<usize>,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub n_grid: Option<Vec<usize>>,
    #[serde(rename = "M")]
    pub replicates: Option<usize>,
    #[serde(rename = "R")]
    pub repeats: Option<usize>,
    pub metric: Option<Metric>,
    /// Items entering the covariance block.
    #[serde(rename = "J")]
    pub items: Option<usize>,
    /// Hypothesized latent dimension for the rank test.
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub rank_tol: Option<f64>,
    /// Monte Carlo draws for the covariance; exact from atoms when unset.
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub outcomes: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
        cfg.check(path.parent().unwrap_or(Path::new(".")))?;
        Ok(cfg)
    }

    fn check(&self, base: &Path) -> Result<()> {
        if let Some(g) = &self.n_grid {
            if g.windows(2).any(|w| w[0] >= w[1]) {
                bail!("field n_grid: must be strictly increasing, got {g:?}");
            }
        }
        if self.scenario.is_none() && (self.model.is_none() || self.mixing.is_none()) {
            bail!("config needs either `scenario` or both `model` and `mixing`");
        }
        if self.scenario.is_some() && self.model.is_some() {
            bail!("fields scenario and model are mutually exclusive");
        }
        if let Some(o) = &self.outcomes {
            let p = resolve(base, o);
            if !p.is_file() {
                bail!("field outcomes: {} does not exist", p.display());
            }
        }
        Ok(())
    }
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() || p.exists() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// The configured experiment after defaults and overrides are applied.
pub struct Resolved {
    pub id: String,
    pub model: ModelSpec,
    pub mixing: MixingMeasure,
    pub reference: MixingMeasure,
    pub refinement: Option<MixingMeasure>,
    pub grid: Vec<LatentPoint>,
    pub depth: usize,
    pub thresholds: Thresholds,
    pub curve: CurveSettings,
    pub seed: u64,
}

pub fn resolve_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<Resolved> {
    let (id, model, scen_mixing, grid, curve, refinement) = match &cfg.scenario {
        Some(id) => {
            let Scenario {
                model,
                mixing,
                grid,
                curve,
                refinement,
                ..
            } = by_id(id, cfg.random, seed).map_err(|e| anyhow!("field scenario: {e}"))?;
            (id.clone(), model, mixing, grid, curve, refinement)
        }
        None => {
            let model = cfg.model.clone().expect("checked");
            let mixing = cfg.mixing.clone().expect("checked");
            let grid = mixing.atoms().iter().map(|a| a.g.clone()).collect();
            let curve = CurveSettings {
                n_grid: vec![10, 50, 200, 400],
                replicates: 2000,
                repeats: 10,
                metric: Metric::default(),
                seed,
            };
            ("inline".to_string(), model, mixing, grid, curve, None)
        }
    };
    let overridden = cfg.scenario.is_some() && cfg.mixing.is_some();
    let mixing = cfg.mixing.clone().unwrap_or(scen_mixing);
    mixing
        .check_against(&model)
        .map_err(|e| anyhow!("field mixing: {e}"))?;
    let depth = cfg.depth.unwrap_or(if model.generator().is_some() {
        DEFAULT_DEPTH
    } else {
        model.horizon()
    });
    let curve = CurveSettings {
        n_grid: cfg.n_grid.clone().unwrap_or(curve.n_grid),
        replicates: cfg.replicates.unwrap_or(curve.replicates),
        repeats: cfg.repeats.unwrap_or(curve.repeats),
        metric: cfg.metric.clone().unwrap_or(curve.metric),
        seed,
    };
    Ok(Resolved {
        id,
        reference: mixing.clone(),
        refinement: if overridden { None } else { refinement },
        model,
        mixing,
        grid: cfg.grid.clone().unwrap_or(grid),
        depth,
        thresholds: cfg.thresholds,
        curve,
        seed,
    })
}
