//! Declarative run configuration (TOML).
//!
//! Parsing is strict: unknown keys are rejected with their name and location.
//! After parsing, every defaulted value is written back into the struct so
//! the echoed config in a report reproduces the run on its own.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dynamics::{BetaSchedule, Rule, UpdateRule};
use crate::engine::{InitSpec, RunPlan, StepConfig};
use crate::error::{Error, Result};
use crate::kernel::{Bandwidth, KernelConfig, KernelFamily};
use crate::nnet::Activation;

fn default_prior_variance() -> f64 {
    0.1
}

fn default_minibatch() -> usize {
    64
}

fn default_ood_radius() -> [f64; 2] {
    [3.0, 6.0]
}

fn default_stride() -> usize {
    100
}

fn default_mode_radius() -> f64 {
    3.0
}

fn default_mode_threshold() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Synthetic two-moons train/test splits with a far-field OOD ring.
    TwoMoons {
        train: usize,
        test: usize,
        noise: f64,
        #[serde(default)]
        data_seed: u64,
        /// OOD point count; defaults to the test size.
        #[serde(default)]
        ood: Option<usize>,
        #[serde(default = "default_ood_radius")]
        ood_radius: [f64; 2],
    },
    /// IDX image/label files; relative paths resolve against the config's directory.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        ood_images: PathBuf,
        #[serde(default)]
        train_subsample: Option<usize>,
        #[serde(default)]
        test_subsample: Option<usize>,
    },
    /// CSV tables: numeric features with a trailing label column (OOD has no labels).
    Csv {
        train: PathBuf,
        test: PathBuf,
        ood: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    GaussianMixture {
        centers: Vec<Vec<f64>>,
        weights: Vec<f64>,
        /// Isotropic per-component variances; unit when omitted.
        #[serde(default)]
        variances: Option<Vec<f64>>,
    },
    StandardNormal {
        dim: usize,
    },
    LogisticRegression {
        data: DataSpec,
        #[serde(default = "default_prior_variance")]
        prior_variance: f64,
    },
    Bnn {
        data: DataSpec,
        hidden: Vec<usize>,
        #[serde(default)]
        activation: Activation,
        #[serde(default = "default_prior_variance")]
        prior_variance: f64,
        #[serde(default = "default_minibatch")]
        minibatch_size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub rule: Rule,
    pub learning_rate: f64,
    pub steps: usize,
    #[serde(default)]
    pub schedule: Option<BetaSchedule>,
    #[serde(default)]
    pub bandwidth: Bandwidth,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
}

impl PhaseSpec {
    pub fn to_step_config(&self) -> Result<StepConfig> {
        let cfg = StepConfig {
            rule: UpdateRule::new(self.rule, self.schedule)?,
            learning_rate: self.learning_rate,
            steps: self.steps,
            kernel: KernelConfig {
                family: KernelFamily::Rbf,
                bandwidth: self.bandwidth,
            },
            batch_size: self.batch_size,
            snapshot_stride: self.snapshot_stride,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    #[serde(default = "default_mode_radius")]
    pub mode_radius: f64,
    #[serde(default = "default_mode_threshold")]
    pub mode_threshold: f64,
    /// Size of the oracle sample set for MMD; defaults to the particle count.
    #[serde(default)]
    pub oracle_samples: Option<usize>,
    /// MMD kernel scale; the pooled median heuristic when omitted.
    #[serde(default)]
    pub mmd_bandwidth: Option<f64>,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            mode_radius: default_mode_radius(),
            mode_threshold: default_mode_threshold(),
            oracle_samples: None,
            mmd_bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub particles: usize,
    pub target: TargetSpec,
    pub init: InitSpec,
    #[serde(default)]
    pub phases: Vec<PhaseSpec>,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
}

/// Command-line overrides applied on top of a parsed config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub rule: Option<Rule>,
    pub beta: Option<f64>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.chars().count(), |nl| {
        before[nl + 1..].chars().count()
    }) + 1;
    (line, col)
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
        message: e.message().to_string(),
        location: e.span().map(|s| line_col(text, s.start)),
    })?;
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_run_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run_config(&text)
}

impl RunConfig {
    /// Fills every optional field with the value the run will actually use.
    pub fn resolved(mut self) -> Self {
        for p in &mut self.phases {
            if p.rule.uses_schedule() {
                p.schedule = p.schedule.or_else(|| p.rule.default_schedule());
            } else {
                p.schedule = None;
            }
        }
        if let TargetSpec::GaussianMixture {
            centers, variances, ..
        } = &mut self.target
        {
            if variances.is_none() {
                *variances = Some(vec![1.0; centers.len()]);
            }
        }
        if let TargetSpec::Bnn { data, .. } | TargetSpec::LogisticRegression { data, .. } =
            &mut self.target
        {
            if let DataSpec::TwoMoons { test, ood, .. } = data {
                ood.get_or_insert(*test);
            }
        }
        if self.diagnostics.oracle_samples.is_none() {
            self.diagnostics.oracle_samples = Some(self.particles);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::Config {
            message: m,
            location: None,
        };
        if self.particles == 0 {
            return Err(bad("particles must be at least 1".into()));
        }
        for (i, p) in self.phases.iter().enumerate() {
            p.to_step_config()
                .map_err(|e| bad(format!("phase {}: {e}", i + 1)))?;
        }
        if !(self.diagnostics.mode_radius > 0.0) {
            return Err(bad("diagnostics.mode_radius must be positive".into()));
        }
        if let Some(h) = self.diagnostics.mmd_bandwidth {
            if !(h > 0.0) {
                return Err(bad("diagnostics.mmd_bandwidth must be positive".into()));
            }
        }
        if let TargetSpec::Bnn { hidden, .. } = &self.target {
            if hidden.contains(&0) {
                return Err(bad("bnn hidden sizes must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn plan(&self) -> Result<RunPlan> {
        RunPlan::new(
            self.phases
                .iter()
                .map(PhaseSpec::to_step_config)
                .collect::<Result<_>>()?,
        )
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            message: e.to_string(),
            location: None,
        })
    }

    /// Applies overrides. A step override caps the total step count across
    /// phases, truncating later phases first and dropping phases left empty.
    pub fn apply(mut self, o: &Overrides) -> Result<Self> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(rule) = o.rule {
            for p in &mut self.phases {
                if p.rule != rule {
                    p.rule = rule;
                    p.schedule = rule.default_schedule();
                }
            }
        }
        if let Some(beta) = o.beta {
            for p in &mut self.phases {
                if let Some(s) = p.schedule {
                    p.schedule = Some(s.with_beta(beta));
                }
            }
        }
        if let Some(mut budget) = o.steps {
            let mut kept = Vec::new();
            for mut p in self.phases {
                if budget == 0 {
                    break;
                }
                p.steps = p.steps.min(budget);
                budget -= p.steps;
                kept.push(p);
            }
            self.phases = kept;
        }
        let out = self.resolved();
        out.validate()?;
        Ok(out)
    }
}
