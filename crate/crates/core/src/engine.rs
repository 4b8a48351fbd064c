//! Particle ensemble lifecycle: initialization, Euler steps, and phased runs.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, UpdateRule};
use crate::error::{Error, Result};
use crate::kernel::{KernelConfig, PairwiseKernel};
use crate::target::ScoredDensity;

/// `n` particles in `d` dimensions plus the generator that drives minibatching.
#[derive(Debug, Clone)]
pub struct Ensemble {
    particles: Array2<f64>,
    step: usize,
    rng: ChaCha8Rng,
}

impl Ensemble {
    pub fn from_particles(particles: Array2<f64>, seed: u64) -> Result<Self> {
        if particles.nrows() == 0 {
            return Err(Error::usage("ensemble needs at least one particle"));
        }
        if particles.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("ensemble particles must be finite"));
        }
        Ok(Self {
            particles,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn particles(&self) -> &Array2<f64> {
        &self.particles
    }

    pub fn into_particles(self) -> Array2<f64> {
        self.particles
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn len(&self) -> usize {
        self.particles.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.particles.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// `x0` plus `jitter`-scaled standard-normal noise.
    Point {
        x0: Vec<f64>,
        #[serde(default)]
        jitter: f64,
    },
    /// Independent `N(mean, std²)` coordinates; a length-1 mean is broadcast.
    Gaussian { mean: Vec<f64>, std: f64 },
    /// Draws from the target's prior.
    Prior,
    /// Final particles of a saved trajectory CSV, resolved by the io layer.
    Warm { trajectory: std::path::PathBuf },
}

pub fn init_ensemble(
    n: usize,
    d: usize,
    init: &InitSpec,
    seed: u64,
    target: Option<&dyn ScoredDensity>,
) -> Result<Ensemble> {
    if n == 0 || d == 0 {
        return Err(Error::usage(format!(
            "ensemble shape must be positive, got {n}x{d}"
        )));
    }
    // Initialization and minibatching draw from separate streams of the same seed.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut particles = Array2::zeros((n, d));
    match init {
        InitSpec::Point { x0, jitter } => {
            if !(*jitter >= 0.0 && jitter.is_finite()) {
                return Err(Error::usage(format!(
                    "jitter must be non-negative, got {jitter}"
                )));
            }
            if x0.len() != d {
                return Err(Error::usage(format!(
                    "init point has dimension {}, expected {d}",
                    x0.len()
                )));
            }
            for mut row in particles.rows_mut() {
                for (v, c) in row.iter_mut().zip(x0) {
                    *v = if *jitter > 0.0 {
                        c + jitter * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        *c
                    };
                }
            }
        }
        InitSpec::Gaussian { mean, std } => {
            if !(*std >= 0.0 && std.is_finite()) {
                return Err(Error::usage(format!(
                    "init std must be non-negative, got {std}"
                )));
            }
            if mean.len() != d && mean.len() != 1 {
                return Err(Error::usage(format!(
                    "init mean has dimension {}, expected {d} or 1",
                    mean.len()
                )));
            }
            for mut row in particles.rows_mut() {
                for (c, v) in row.iter_mut().enumerate() {
                    let mu = if mean.len() == 1 { mean[0] } else { mean[c] };
                    *v = mu + std * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        InitSpec::Warm { trajectory } => {
            return Err(Error::usage(format!(
                "warm start from {} must be loaded before initialization",
                trajectory.display()
            )));
        }
        InitSpec::Prior => {
            let target = target.ok_or_else(|| Error::usage("prior init needs a target"))?;
            if target.dim() != d {
                return Err(Error::usage(format!(
                    "target dimension {} does not match ensemble dimension {d}",
                    target.dim()
                )));
            }
            for mut row in particles.rows_mut() {
                let draw = target.sample_prior(&mut rng).ok_or_else(|| {
                    Error::usage(format!("target {} has no prior to sample", target.name()))
                })?;
                row.assign(&draw);
            }
        }
    }
    Ensemble::from_particles(particles, seed)
}

fn default_stride() -> usize {
    1
}

/// One phase of a run: an update rule driven for `steps` Euler steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub rule: UpdateRule,
    pub learning_rate: f64,
    pub steps: usize,
    #[serde(default)]
    pub kernel: KernelConfig,
    /// Minibatch size for data targets; `None` defers to the target's default.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
}

impl StepConfig {
    pub fn new(rule: UpdateRule, learning_rate: f64, steps: usize) -> Self {
        Self {
            rule,
            learning_rate,
            steps,
            kernel: KernelConfig::default(),
            batch_size: None,
            snapshot_stride: steps.max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::usage(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.steps == 0 {
            return Err(Error::usage("phase must run at least one step"));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::usage("snapshot stride must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::usage("batch size must be positive"));
        }
        if self.rule.rule.uses_schedule() && self.rule.schedule.is_none() {
            return Err(Error::usage(format!(
                "{} needs a beta schedule",
                self.rule.rule
            )));
        }
        if let Some(s) = &self.rule.schedule {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub phases: Vec<StepConfig>,
}

impl RunPlan {
    pub fn new(phases: Vec<StepConfig>) -> Result<Self> {
        for p in &phases {
            p.validate()?;
        }
        Ok(Self { phases })
    }

    pub fn total_steps(&self) -> usize {
        self.phases.iter().map(|p| p.steps).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    /// β that drives the next step; `None` for rules without a scalar β.
    pub beta: Option<f64>,
    pub particles: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    fn push(&mut self, e: &Ensemble, beta: Option<f64>) {
        if self.snapshots.last().is_some_and(|s| s.step == e.step) {
            return;
        }
        self.snapshots.push(Snapshot {
            step: e.step,
            beta,
            particles: e.particles.clone(),
        });
    }
}

/// A run that stopped early; `partial` ends at the last good state.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: Trajectory,
    pub ensemble: Ensemble,
}

fn draw_batch(
    e: &mut Ensemble,
    target: &dyn ScoredDensity,
    cfg: &StepConfig,
) -> Option<Vec<usize>> {
    let n = target.data_len()?;
    let b = cfg.batch_size.or_else(|| target.default_batch_size())?;
    if b >= n {
        return None;
    }
    let mut idx = rand::seq::index::sample(&mut e.rng, n, b).into_vec();
    idx.sort_unstable();
    Some(idx)
}

/// Scores of every particle in `particles`, evaluated independently.
pub fn scores(
    target: &dyn ScoredDensity,
    particles: &Array2<f64>,
    batch: Option<&[usize]>,
) -> Result<Array2<f64>> {
    if target.dim() != particles.ncols() {
        return Err(Error::usage(format!(
            "target dimension {} does not match particle dimension {}",
            target.dim(),
            particles.ncols()
        )));
    }
    let rows: Vec<Array1<f64>> = particles
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|x| target.log_density_and_score(x, batch).map(|(_, s)| s))
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros(particles.dim());
    for (mut row, s) in out.rows_mut().into_iter().zip(rows) {
        row.assign(&s);
    }
    Ok(out)
}

/// One synchronous Euler step `x <- x + η v(x)` from the current snapshot.
pub fn step(
    e: &mut Ensemble,
    target: &dyn ScoredDensity,
    cfg: &StepConfig,
    beta: Option<f64>,
) -> Result<()> {
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::usage(format!(
            "learning rate must be non-negative, got {}",
            cfg.learning_rate
        )));
    }
    let batch = draw_batch(e, target, cfg);
    let s = scores(target, &e.particles, batch.as_deref())?;
    let kernel = match PairwiseKernel::compute(e.particles.view(), &cfg.kernel) {
        Ok(k) => k,
        // distances overflow long before positions do
        Err(err) => match e
            .particles
            .rows()
            .into_iter()
            .position(|r| !r.dot(&r).is_finite())
        {
            Some(particle) => {
                return Err(Error::Divergence {
                    step: e.step,
                    particle,
                })
            }
            None => return Err(err),
        },
    };
    let v = dynamics::velocity(cfg.rule.rule, s.view(), &kernel, beta)?;
    let mut next = e.particles.clone();
    next.scaled_add(cfg.learning_rate, &v);
    let finite = |a: &Array2<f64>, i: usize| a.row(i).iter().all(|c| c.is_finite());
    if let Some(bad) = (0..v.nrows()).find(|&i| !finite(&v, i) || !finite(&next, i)) {
        return Err(Error::Divergence {
            step: e.step,
            particle: bad,
        });
    }
    e.particles = next;
    e.step += 1;
    Ok(())
}

/// Runs every phase in order on one ensemble.
///
/// The trajectory holds the initial state, every `snapshot_stride`-th step of
/// each phase, and the final state.
pub fn run(
    plan: &RunPlan,
    target: &dyn ScoredDensity,
    mut ensemble: Ensemble,
) -> Result<(Trajectory, Ensemble), Box<RunFailure>> {
    let mut traj = Trajectory::default();
    let fail = |error: Error, mut traj: Trajectory, ensemble: Ensemble, beta: Option<f64>| {
        traj.push(&ensemble, beta);
        Box::new(RunFailure {
            error,
            partial: traj,
            ensemble,
        })
    };
    if let Err(err) = plan.phases.iter().try_for_each(StepConfig::validate) {
        return Err(fail(err, traj, ensemble, None));
    }
    let initial_beta = match plan.phases.first().map(|p| p.rule.beta(0, p.steps)) {
        Some(Ok(b)) => b,
        Some(Err(err)) => return Err(fail(err, traj, ensemble, None)),
        None => None,
    };
    traj.push(&ensemble, initial_beta);
    let mut last_beta = initial_beta;
    for phase in &plan.phases {
        for local in 0..phase.steps {
            let outcome = phase
                .rule
                .beta(local, phase.steps)
                .and_then(|beta| step(&mut ensemble, target, phase, beta))
                .and_then(|()| phase.rule.beta(local + 1, phase.steps));
            match outcome {
                Ok(next_beta) => {
                    last_beta = next_beta;
                    if (local + 1) % phase.snapshot_stride == 0 {
                        traj.push(&ensemble, next_beta);
                    }
                }
                Err(err) => return Err(fail(err, traj, ensemble, last_beta)),
            }
        }
    }
    traj.push(&ensemble, last_beta);
    Ok((traj, ensemble))
}
