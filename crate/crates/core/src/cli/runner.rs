//! Builds targets and data from a config, runs the plan, and assembles reports.

use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{ensemble_eval, mmd2, mode_coverage, pooled_bandwidth};
use crate::engine::{init_ensemble, run, Ensemble, InitSpec, Trajectory};
use crate::error::{Error, Result};
use crate::io::config::{DataSpec, RunConfig, TargetSpec};
use crate::io::report::{
    read_trajectory_csv, FinalMetrics, RunReport, RunStatus, SnapshotDiagnostics,
};
use crate::io::{far_field, read_csv_dataset, read_csv_features, two_moons, Dataset, DatasetMeta};
use crate::nnet::LayerSpec;
use crate::target::{BayesLogReg, BnnPosterior, GaussianMixture, ScoredDensity};

pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    pub ood: Array2<f64>,
    pub ood_meta: DatasetMeta,
}

/// Seed for subsampling file-backed data; fixed so data do not vary with the run seed.
const FILE_SUBSAMPLE_SEED: u64 = 0;

fn subsample_rows(a: Array2<f64>, n: usize, seed: u64) -> Array2<f64> {
    if n >= a.nrows() {
        return a;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, a.nrows(), n).into_vec();
    idx.sort_unstable();
    a.select(Axis(0), &idx)
}

pub fn load_data(spec: &DataSpec, base: &Path) -> Result<LoadedData> {
    match spec {
        DataSpec::TwoMoons {
            train,
            test,
            noise,
            data_seed,
            ood,
            ood_radius,
        } => {
            let train = two_moons(*train, *noise, *data_seed)?;
            let test = two_moons(*test, *noise, data_seed.wrapping_add(1))?;
            let centroid = train.features.mean_axis(Axis(0)).expect("non-empty");
            let n_ood = ood.unwrap_or(test.len());
            let ood = far_field(
                n_ood,
                [centroid[0], centroid[1]],
                ood_radius[0],
                ood_radius[1],
                data_seed.wrapping_add(2),
            )?;
            let ood_meta = DatasetMeta {
                name: format!(
                    "far_field(n={n_ood}, radius=[{}, {}], center=({:.4}, {:.4}))",
                    ood_radius[0], ood_radius[1], centroid[0], centroid[1]
                ),
                source: None,
                normalization: "none".into(),
                subsampled_from: None,
            };
            Ok(LoadedData {
                train,
                test,
                ood,
                ood_meta,
            })
        }
        DataSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ood_images,
            train_subsample,
            test_subsample,
        } => {
            use crate::io::idx::{images_to_features, load_idx_dataset, read_idx};
            let mut train =
                load_idx_dataset(&base.join(train_images), &base.join(train_labels), "train")?;
            let mut test =
                load_idx_dataset(&base.join(test_images), &base.join(test_labels), "test")?;
            let ood_path = base.join(ood_images);
            let mut ood = images_to_features(&read_idx(&ood_path)?)?;
            let total_ood = ood.nrows();
            if let Some(n) = train_subsample {
                train = train.subsample(*n, FILE_SUBSAMPLE_SEED);
            }
            if let Some(n) = test_subsample {
                test = test.subsample(*n, FILE_SUBSAMPLE_SEED);
                ood = subsample_rows(ood, *n, FILE_SUBSAMPLE_SEED);
            }
            let ood_meta = DatasetMeta {
                name: "ood".into(),
                source: Some(ood_path),
                normalization: "pixels / 255".into(),
                subsampled_from: (ood.nrows() < total_ood).then_some(total_ood),
            };
            Ok(LoadedData {
                train,
                test,
                ood,
                ood_meta,
            })
        }
        DataSpec::Csv { train, test, ood } => {
            let ood_path = base.join(ood);
            Ok(LoadedData {
                train: read_csv_dataset(&base.join(train))?,
                test: read_csv_dataset(&base.join(test))?,
                ood: read_csv_features(&ood_path)?,
                ood_meta: DatasetMeta {
                    name: "ood".into(),
                    source: Some(ood_path),
                    normalization: "none".into(),
                    subsampled_from: None,
                },
            })
        }
    }
}

/// What a classifier ensemble is evaluated on.
pub struct Classifier {
    pub spec: LayerSpec,
    pub test: Dataset,
    pub ood: Array2<f64>,
}

pub struct Prepared {
    pub target: Box<dyn ScoredDensity>,
    /// Closed-form mixture, when the target is one; drives mode and MMD diagnostics.
    pub mixture: Option<GaussianMixture>,
    pub classifier: Option<Classifier>,
    pub data: Vec<DatasetMeta>,
}

pub fn prepare(cfg: &RunConfig, base: &Path) -> Result<Prepared> {
    match &cfg.target {
        TargetSpec::GaussianMixture {
            centers,
            weights,
            variances,
        } => {
            let variances = variances
                .clone()
                .unwrap_or_else(|| vec![1.0; centers.len()]);
            let gm = GaussianMixture::new(centers.clone(), weights.clone(), variances)?;
            Ok(Prepared {
                target: Box::new(gm.clone()),
                mixture: Some(gm),
                classifier: None,
                data: Vec::new(),
            })
        }
        TargetSpec::StandardNormal { dim } => {
            let gm = GaussianMixture::standard_normal(*dim)?;
            Ok(Prepared {
                target: Box::new(gm.clone()),
                mixture: Some(gm),
                classifier: None,
                data: Vec::new(),
            })
        }
        TargetSpec::LogisticRegression {
            data,
            prior_variance,
        } => {
            let d = load_data(data, base)?;
            d.train.check_labels(2)?;
            let meta = vec![d.train.meta.clone(), d.test.meta.clone()];
            Ok(Prepared {
                target: Box::new(BayesLogReg::new(
                    d.train.features,
                    d.train.labels,
                    *prior_variance,
                )?),
                mixture: None,
                classifier: None,
                data: meta,
            })
        }
        TargetSpec::Bnn {
            data,
            hidden,
            activation,
            prior_variance,
            minibatch_size,
        } => {
            let d = load_data(data, base)?;
            let classes = d.train.num_classes().max(d.test.num_classes()).max(2);
            d.train.check_labels(classes)?;
            d.test.check_labels(classes)?;
            let input = d.train.features.ncols();
            if d.test.features.ncols() != input || d.ood.ncols() != input {
                return Err(Error::data(format!(
                    "feature widths differ: train {input}, test {}, ood {}",
                    d.test.features.ncols(),
                    d.ood.ncols()
                )));
            }
            let mut sizes = vec![input];
            sizes.extend(hidden);
            sizes.push(classes);
            let spec = LayerSpec::new(sizes, *activation)?;
            let meta = vec![
                d.train.meta.clone(),
                d.test.meta.clone(),
                d.ood_meta.clone(),
            ];
            let post = BnnPosterior::new(
                spec.clone(),
                d.train.features,
                d.train.labels,
                *prior_variance,
                *minibatch_size,
            )?;
            Ok(Prepared {
                target: Box::new(post),
                mixture: None,
                classifier: Some(Classifier {
                    spec,
                    test: d.test,
                    ood: d.ood,
                }),
                data: meta,
            })
        }
    }
}

/// Reference samples from the mixture, drawn from a stream reserved for diagnostics.
pub fn oracle_samples(cfg: &RunConfig, gm: &GaussianMixture) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let m = cfg.diagnostics.oracle_samples.unwrap_or(cfg.particles);
    gm.sample(m, &mut rng)
}

fn mixture_diagnostics(
    cfg: &RunConfig,
    gm: &GaussianMixture,
    oracle: &Array2<f64>,
    x: ArrayView2<f64>,
) -> Result<(Option<crate::diagnostics::ModeReport>, Option<f64>)> {
    let modes = mode_coverage(
        x,
        gm.centers(),
        cfg.diagnostics.mode_radius,
        cfg.diagnostics.mode_threshold,
    )?;
    let mmd = if x.nrows() >= 2 && oracle.nrows() >= 2 {
        let h = match cfg.diagnostics.mmd_bandwidth {
            Some(h) => h,
            None => pooled_bandwidth(x, oracle.view())?,
        };
        Some(mmd2(x, oracle.view(), h)?)
    } else {
        None
    };
    Ok((Some(modes), mmd))
}

/// Diagnostics of a particle set under the prepared target.
pub fn final_metrics(
    cfg: &RunConfig,
    prep: &Prepared,
    particles: ArrayView2<f64>,
) -> Result<FinalMetrics> {
    let mut out = FinalMetrics::default();
    if let Some(gm) = &prep.mixture {
        let oracle = oracle_samples(cfg, gm);
        (out.modes, out.mmd2) = mixture_diagnostics(cfg, gm, &oracle, particles)?;
    }
    if let Some(c) = &prep.classifier {
        let members: Vec<ArrayView1<f64>> = particles.rows().into_iter().collect();
        out.ensemble = Some(ensemble_eval(
            &members,
            &c.spec,
            c.test.features.view(),
            &c.test.labels,
            c.ood.view(),
        )?);
    }
    Ok(out)
}

pub struct RunOutcome {
    pub report: RunReport,
    pub trajectory: Trajectory,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match self.report.status {
            RunStatus::Ok => 0,
            RunStatus::Diverged => 1,
        }
    }
}

/// The run's starting ensemble. A warm start reuses the final snapshot of a
/// saved trajectory (path relative to `base`), which must match the shape.
pub fn initial_ensemble(
    cfg: &RunConfig,
    prep: &Prepared,
    n: usize,
    base: &Path,
) -> Result<Ensemble> {
    let d = prep.target.dim();
    match &cfg.init {
        InitSpec::Warm { trajectory } => {
            let path = base.join(trajectory);
            let traj = read_trajectory_csv(&path)?;
            let last = traj
                .last()
                .ok_or_else(|| Error::data(format!("{} holds no snapshots", path.display())))?;
            let (rows, cols) = last.particles.dim();
            if rows < n || cols != d {
                return Err(Error::data(format!(
                    "warm start {} has {rows}x{cols} particles, need {n}x{d}",
                    path.display()
                )));
            }
            Ensemble::from_particles(last.particles.slice(s![..n, ..]).to_owned(), cfg.seed)
        }
        init => init_ensemble(n, d, init, cfg.seed, Some(prep.target.as_ref())),
    }
}

/// Runs a resolved config end to end. Divergence is reported in the outcome,
/// not as an error; any other failure is an error.
pub fn execute(command: &str, cfg: &RunConfig, base: &Path) -> Result<RunOutcome> {
    let started = Instant::now();
    let prep = prepare(cfg, base)?;
    let plan = cfg.plan()?;
    let ensemble = initial_ensemble(cfg, &prep, cfg.particles, base)?;
    let (trajectory, final_particles, status, error) =
        match run(&plan, prep.target.as_ref(), ensemble) {
            Ok((traj, e)) => (traj, e.into_particles(), RunStatus::Ok, None),
            Err(fail) => match fail.error {
                Error::Divergence { .. } => {
                    let msg = fail.error.to_string();
                    (
                        fail.partial,
                        fail.ensemble.into_particles(),
                        RunStatus::Diverged,
                        Some(msg),
                    )
                }
                other => return Err(other),
            },
        };

    let oracle = prep.mixture.as_ref().map(|gm| oracle_samples(cfg, gm));
    let mut snapshots = Vec::with_capacity(trajectory.snapshots.len());
    for s in &trajectory.snapshots {
        let (modes, mmd) = match (&prep.mixture, &oracle) {
            (Some(gm), Some(o)) => mixture_diagnostics(cfg, gm, o, s.particles.view())?,
            _ => (None, None),
        };
        snapshots.push(SnapshotDiagnostics {
            step: s.step,
            beta: s.beta,
            modes,
            mmd2: mmd,
        });
    }
    let final_metrics = if status == RunStatus::Ok {
        final_metrics(cfg, &prep, final_particles.view())?
    } else {
        FinalMetrics::default()
    };
    let report = RunReport {
        command: command.to_string(),
        config: cfg.clone(),
        seed: cfg.seed,
        status,
        error,
        data: prep.data,
        snapshots,
        final_metrics,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome { report, trajectory })
}
