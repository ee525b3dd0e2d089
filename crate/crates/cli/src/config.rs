use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lccm::dataset::{ChoiceSchema, IndicatorSchema};
use lccm::efa::{EfaOptions, FactorCount, SALIENCE};
use lccm::lccm::{EstimationOptions, ModelSpec};
use lccm::synthgen::GeneratorSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Markdown,
}

fn all_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json, Format::Markdown]
}

/// Input files. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub choices: Option<PathBuf>,
    pub choice_schema: ChoiceSchema,
    pub indicators: Option<PathBuf>,
    pub indicator_schema: IndicatorSchema,
    /// Admissible indicator range; unbounded when absent.
    pub indicator_scale: Option<(f64, f64)>,
    /// Estimation result to reuse; defaults to `<out>/estimate.json`.
    pub estimate: Option<PathBuf>,
    /// Posterior file to reuse; defaults to `<out>/posterior.csv`.
    pub posterior: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    /// Indicator columns to profile; empty means all.
    pub indicators: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FmnlConfig {
    pub covariates: Vec<String>,
    pub reference_class: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfaConfig {
    /// Items to analyse; empty means all indicator columns.
    pub indicators: Vec<String>,
    pub n_factors: FactorCount,
    pub tol: f64,
    pub max_iter: usize,
    pub rotate: bool,
    /// Salience threshold for item retention; `null` keeps every item.
    pub retention: Option<f64>,
    /// Rescale factor scores to unit sample variance.
    pub unit_variance: bool,
}

impl Default for EfaConfig {
    fn default() -> Self {
        let o = EfaOptions::default();
        Self {
            indicators: Vec::new(),
            n_factors: o.n_factors,
            tol: o.tol,
            max_iter: o.max_iter,
            rotate: o.rotate,
            retention: Some(SALIENCE),
            unit_variance: false,
        }
    }
}

impl EfaConfig {
    pub fn options(&self) -> EfaOptions {
        EfaOptions {
            n_factors: self.n_factors,
            tol: self.tol,
            max_iter: self.max_iter,
            rotate: self.rotate,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Indicator columns (or factor names) entering the membership model.
    pub covariates: Vec<String>,
    /// Use factor scores from the `efa` block instead of raw indicators.
    pub factor_scores: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub formats: Vec<Format>,
    pub data: DataConfig,
    pub model: Option<ModelSpec>,
    pub options: EstimationOptions,
    pub profile: ProfileConfig,
    pub fmnl: FmnlConfig,
    pub efa: EfaConfig,
    pub compare: CompareConfig,
    pub simulate: Option<GeneratorSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            output_dir: None,
            formats: all_formats(),
            data: DataConfig::default(),
            model: None,
            options: EstimationOptions::default(),
            profile: ProfileConfig::default(),
            fmnl: FmnlConfig::default(),
            efa: EfaConfig::default(),
            compare: CompareConfig::default(),
            simulate: None,
        }
    }
}

/// Resolved configuration: paths absolute-or-cwd-relative, seed applied everywhere.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl Run {
    pub fn load(config: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<Run> {
        let mut cfg = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read config `{}`", path.display()))?;
                let mut cfg: RunConfig = serde_json::from_str(&text)
                    .with_context(|| format!("invalid config `{}`", path.display()))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                resolve(&base, &mut cfg.data.choices);
                resolve(&base, &mut cfg.data.indicators);
                resolve(&base, &mut cfg.data.estimate);
                resolve(&base, &mut cfg.data.posterior);
                resolve(&base, &mut cfg.output_dir);
                cfg
            }
            None => RunConfig::default(),
        };
        let Some(seed) = seed.or(cfg.seed) else {
            bail!("a seed is required (config `seed` or --seed)");
        };
        cfg.seed = Some(seed);
        cfg.options.seed = seed;
        if let Some(g) = &mut cfg.simulate {
            g.seed = seed;
        }
        let Some(out) = out.or_else(|| cfg.output_dir.clone()) else {
            bail!("an output directory is required (config `output_dir` or --out)");
        };
        std::fs::create_dir_all(&out)
            .with_context(|| format!("cannot create output directory `{}`", out.display()))?;
        for p in [
            &cfg.data.choices,
            &cfg.data.indicators,
            &cfg.data.estimate,
            &cfg.data.posterior,
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                bail!("input file `{}` does not exist", p.display());
            }
        }
        Ok(Run { config: cfg, out })
    }

    pub fn wants(&self, f: Format) -> bool {
        self.config.formats.contains(&f)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn estimate_path(&self) -> PathBuf {
        self.config
            .data
            .estimate
            .clone()
            .unwrap_or_else(|| self.path("estimate.json"))
    }

    pub fn posterior_path(&self) -> PathBuf {
        self.config
            .data
            .posterior
            .clone()
            .unwrap_or_else(|| self.path("posterior.csv"))
    }

    pub fn indicator_scale(&self) -> (f64, f64) {
        self.config
            .data
            .indicator_scale
            .unwrap_or((f64::NEG_INFINITY, f64::INFINITY))
    }
}
