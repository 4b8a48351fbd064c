//! Finite-difference verification of analytic scores and network gradients.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::synthetic::two_moons;
use crate::nnet::{self, Activation, LayerSpec};
use crate::target::{
    finite_diff_score, relative_error, BayesLogReg, BnnPosterior, GaussianMixture, ScoredDensity,
};

pub const DEFAULT_TOLERANCE: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
const NORM_FLOOR: f64 = 1e-3;

pub enum Check {
    Score {
        name: String,
        target: Box<dyn ScoredDensity>,
        points: Array2<f64>,
    },
    NetBackward {
        name: String,
        spec: LayerSpec,
        x: Array2<f64>,
        labels: Vec<usize>,
        params: Array2<f64>,
    },
}

impl Check {
    pub fn name(&self) -> &str {
        match self {
            Check::Score { name, .. } | Check::NetBackward { name, .. } => name,
        }
    }
}

pub struct Registry {
    pub checks: Vec<Check>,
    pub tolerance: f64,
}

impl Default for Registry {
    fn default() -> Self {
        Self {
            checks: Vec::new(),
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub points: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Negates another target's score while keeping its density; a fault to detect.
pub struct FlippedScore<T>(pub T);

impl<T: ScoredDensity> ScoredDensity for FlippedScore<T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn name(&self) -> String {
        format!("flipped({})", self.0.name())
    }

    fn log_density_and_score(
        &self,
        x: ArrayView1<f64>,
        batch: Option<&[usize]>,
    ) -> Result<(f64, Array1<f64>)> {
        let (lp, s) = self.0.log_density_and_score(x, batch)?;
        Ok((lp, -s))
    }
}

fn normal_matrix(rng: &mut dyn RngCore, rows: usize, cols: usize, sd: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| sd * rng.sample::<f64, _>(StandardNormal))
}

impl Registry {
    pub fn push_score(
        &mut self,
        name: impl Into<String>,
        target: Box<dyn ScoredDensity>,
        points: Array2<f64>,
    ) {
        self.checks.push(Check::Score {
            name: name.into(),
            target,
            points,
        });
    }

    /// Mixtures, logistic regression, a small BNN posterior and the raw network backward pass.
    pub fn standard(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reg = Self::default();

        let centers = vec![
            vec![213.0, 200.0],
            vec![180.0, 200.0],
            vec![200.0, 210.0],
            vec![200.0, 190.0],
        ];
        let gm = GaussianMixture::new(centers.clone(), vec![0.6, 0.3, 0.05, 0.05], vec![1.0; 4])?;
        let mut pts = normal_matrix(&mut rng, 12, 2, 2.0);
        for (i, mut row) in pts.rows_mut().into_iter().enumerate() {
            let c = &centers[i % 4];
            row[0] += c[0];
            row[1] += c[1];
        }
        reg.push_score("mixture-2d", Box::new(gm), pts);

        let gm3 = GaussianMixture::new(
            vec![
                vec![0.0, 1.0, -1.0],
                vec![2.0, 0.0, 0.5],
                vec![-1.5, -1.0, 1.0],
            ],
            vec![0.5, 0.3, 0.2],
            vec![0.5, 1.5, 0.8],
        )?;
        let pts = normal_matrix(&mut rng, 12, 3, 1.5);
        reg.push_score("mixture-3d", Box::new(gm3), pts);

        let x = normal_matrix(&mut rng, 60, 3, 1.0);
        let truth = [1.5, -2.0, 0.5];
        let labels = x
            .rows()
            .into_iter()
            .map(|r| {
                let z: f64 = r.iter().zip(truth).map(|(a, b)| a * b).sum();
                usize::from(rng.random::<f64>() < 1.0 / (1.0 + (-z).exp()))
            })
            .collect();
        let blr = BayesLogReg::new(x, labels, 0.1)?;
        reg.push_score(
            "logistic-regression",
            Box::new(blr),
            normal_matrix(&mut rng, 10, 3, 1.0),
        );

        let moons = two_moons(40, 0.1, seed)?;
        let spec = LayerSpec::new(vec![2, 5, 2], Activation::Tanh)?;
        let p = spec.num_params();
        let bnn = BnnPosterior::new(
            spec.clone(),
            moons.features.clone(),
            moons.labels.clone(),
            0.1,
            16,
        )?;
        reg.push_score(
            "bnn-posterior",
            Box::new(bnn),
            normal_matrix(&mut rng, 6, p, 0.5),
        );

        let spec = LayerSpec::new(vec![3, 4, 4, 3], Activation::Tanh)?;
        let x = normal_matrix(&mut rng, 8, 3, 1.0);
        let labels = (0..8).map(|i| i % 3).collect();
        let params = normal_matrix(&mut rng, 6, spec.num_params(), 0.7);
        reg.checks.push(Check::NetBackward {
            name: "nnet-backward".into(),
            spec,
            x,
            labels,
            params,
        });
        Ok(reg)
    }
}

fn fd_backward(
    spec: &LayerSpec,
    theta: ArrayView1<f64>,
    x: &Array2<f64>,
    labels: &[usize],
) -> Result<Array1<f64>> {
    let mut probe = theta.to_owned();
    let mut out = Array1::zeros(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let up = nnet::mean_nll(spec, probe.view(), x.view(), labels)?;
        probe[i] = orig - FD_STEP;
        let down = nnet::mean_nll(spec, probe.view(), x.view(), labels)?;
        probe[i] = orig;
        out[i] = (up - down) / (2.0 * FD_STEP);
    }
    Ok(out)
}

pub fn run_checks(reg: &Registry) -> Result<Vec<CheckResult>> {
    if reg.checks.is_empty() {
        return Err(Error::usage("gradient check registry is empty"));
    }
    let mut out = Vec::with_capacity(reg.checks.len());
    for check in &reg.checks {
        let mut worst = 0.0f64;
        let points = match check {
            Check::Score { target, points, .. } => {
                for x in points.rows() {
                    let analytic = target.score(x)?;
                    let numeric = finite_diff_score(target.as_ref(), x, FD_STEP)?;
                    worst = worst.max(relative_error(analytic.view(), numeric.view(), NORM_FLOOR));
                }
                points.nrows()
            }
            Check::NetBackward {
                spec,
                x,
                labels,
                params,
                ..
            } => {
                for theta in params.rows() {
                    let (_, analytic) = nnet::backward_nll(spec, theta, x.view(), labels)?;
                    let numeric = fd_backward(spec, theta, x, labels)?;
                    worst = worst.max(relative_error(analytic.view(), numeric.view(), NORM_FLOOR));
                }
                params.nrows()
            }
        };
        // NaN errors fail
        let passed = worst < reg.tolerance;
        out.push(CheckResult {
            name: check.name().to_string(),
            points,
            max_rel_error: worst,
            passed,
        });
    }
    Ok(out)
}

pub fn render_table(results: &[CheckResult], tolerance: f64) -> String {
    let width = results
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(0)
        .max(6);
    let mut s = format!(
        "{:<width$}  {:>6}  {:>12}  result (tol {tolerance:e})\n",
        "target", "points", "max rel err"
    );
    for r in results {
        s.push_str(&format!(
            "{:<width$}  {:>6}  {:>12.3e}  {}\n",
            r.name,
            r.points,
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_registry_passes() {
        let reg = Registry::standard(0).unwrap();
        let results = run_checks(&reg).unwrap();
        assert_eq!(results.len(), 5);
        for r in &results {
            assert!(r.passed, "{r:?}");
        }
        let table = render_table(&results, reg.tolerance);
        assert!(table.contains("bnn-posterior"));
        assert_eq!(table.lines().count(), 6);
    }

    #[test]
    fn flipped_score_is_caught_by_name() {
        let mut reg = Registry::default();
        let gm = GaussianMixture::standard_normal(2).unwrap();
        reg.push_score(
            "flipped-normal",
            Box::new(FlippedScore(gm)),
            ndarray::array![[1.0, -0.5], [0.3, 2.0]],
        );
        let results = run_checks(&reg).unwrap();
        assert!(!results[0].passed);
        assert_eq!(results[0].name, "flipped-normal");
        assert!(render_table(&results, reg.tolerance).contains("flipped-normal"));
    }

    #[test]
    fn empty_registry_is_usage_error() {
        assert!(matches!(
            run_checks(&Registry::default()),
            Err(Error::Usage(_))
        ));
    }
}
