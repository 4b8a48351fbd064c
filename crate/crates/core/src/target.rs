//! Target densities exposing log-density and score.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nnet::{self, LayerSpec};

/// A target distribution `π` with `log π` and `∇ log π`.
///
/// Data-dependent targets accept an optional minibatch of data indices. The
/// minibatch likelihood is rescaled by `N / |batch|`, so the returned score is
/// an unbiased estimate of the full-data score. `None` means the full data set.
pub trait ScoredDensity: Send + Sync {
    fn dim(&self) -> usize;

    fn name(&self) -> String;

    /// Number of data points for data-dependent targets.
    fn data_len(&self) -> Option<usize> {
        None
    }

    fn default_batch_size(&self) -> Option<usize> {
        None
    }

    /// Unnormalized log-density and score, up to a constant offset.
    fn log_density_and_score(
        &self,
        x: ArrayView1<f64>,
        batch: Option<&[usize]>,
    ) -> Result<(f64, Array1<f64>)>;

    fn log_density(&self, x: ArrayView1<f64>) -> Result<f64> {
        Ok(self.log_density_and_score(x, None)?.0)
    }

    fn score(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.log_density_and_score(x, None)?.1)
    }

    /// One draw from the prior, for targets that carry one.
    fn sample_prior(&self, _rng: &mut dyn RngCore) -> Option<Array1<f64>> {
        None
    }
}

fn check_dim(x: &ArrayView1<f64>, d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::usage(format!(
            "point has dimension {}, target expects {d}",
            x.len()
        )));
    }
    Ok(())
}

fn check_batch(batch: &[usize], n: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::usage("empty minibatch"));
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= n) {
        return Err(Error::usage(format!(
            "batch index {bad} out of range for {n} data points"
        )));
    }
    Ok(())
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Mixture of isotropic Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    centers: Array2<f64>,
    weights: Vec<f64>,
    variances: Vec<f64>,
    log_weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(centers: Vec<Vec<f64>>, weights: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let m = centers.len();
        if m == 0 {
            return Err(Error::usage("mixture needs at least one component"));
        }
        if weights.len() != m || variances.len() != m {
            return Err(Error::usage(format!(
                "mixture has {m} centers, {} weights, {} variances",
                weights.len(),
                variances.len()
            )));
        }
        let d = centers[0].len();
        if d == 0 || centers.iter().any(|c| c.len() != d) {
            return Err(Error::usage(
                "mixture centers must share one positive dimension",
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::usage("mixture weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::usage(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        if variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::usage("mixture variances must be positive"));
        }
        let flat: Vec<f64> = centers.into_iter().flatten().collect();
        Ok(Self {
            centers: Array2::from_shape_vec((m, d), flat).expect("validated shape"),
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            weights,
            variances,
        })
    }

    /// `N(mean, variance · I)`.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![mean], vec![1.0], vec![variance])
    }

    pub fn standard_normal(d: usize) -> Result<Self> {
        Self::isotropic(vec![0.0; d], 1.0)
    }

    pub fn centers(&self) -> ArrayView2<'_, f64> {
        self.centers.view()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    /// Per-component `log w_m + log N(x | c_m, σ²_m I)`.
    fn component_terms(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let d = self.centers.ncols() as f64;
        self.centers
            .rows()
            .into_iter()
            .zip(self.log_weights.iter().zip(&self.variances))
            .map(|(c, (lw, var))| {
                let sq: f64 = c.iter().zip(x.iter()).map(|(a, b)| (b - a) * (b - a)).sum();
                lw - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln() - sq / (2.0 * var)
            })
            .collect()
    }

    pub fn gm_log_density(&self, x: ArrayView1<f64>) -> Result<f64> {
        check_dim(&x, self.centers.ncols())?;
        Ok(log_sum_exp(&self.component_terms(x)))
    }

    /// `Σ_m r_m(x) (c_m - x) / σ²_m` with posterior responsibilities `r_m`.
    pub fn gm_score(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.log_density_and_score(x, None)?.1)
    }

    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Array2<f64> {
        let pick = WeightedIndex::new(&self.weights).expect("validated weights");
        let d = self.centers.ncols();
        let mut out = Array2::zeros((n, d));
        for mut row in out.rows_mut() {
            let m = pick.sample(rng);
            let sd = self.variances[m].sqrt();
            for (v, c) in row.iter_mut().zip(self.centers.row(m)) {
                let z: f64 = rng.sample(StandardNormal);
                *v = c + sd * z;
            }
        }
        out
    }
}

impl ScoredDensity for GaussianMixture {
    fn dim(&self) -> usize {
        self.centers.ncols()
    }

    fn name(&self) -> String {
        format!("gaussian_mixture[{}]", self.num_components())
    }

    fn log_density_and_score(
        &self,
        x: ArrayView1<f64>,
        _batch: Option<&[usize]>,
    ) -> Result<(f64, Array1<f64>)> {
        check_dim(&x, self.dim())?;
        let terms = self.component_terms(x);
        let lse = log_sum_exp(&terms);
        let mut score = Array1::zeros(self.dim());
        for ((c, t), var) in self
            .centers
            .rows()
            .into_iter()
            .zip(&terms)
            .zip(&self.variances)
        {
            let r = (t - lse).exp();
            if r == 0.0 {
                continue;
            }
            for ((s, ci), xi) in score.iter_mut().zip(c.iter()).zip(x.iter()) {
                *s += r * (ci - xi) / var;
            }
        }
        Ok((lse, score))
    }
}

/// `log σ(z)` without overflow.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Bayesian logistic regression with an isotropic Gaussian prior.
#[derive(Debug, Clone)]
pub struct BayesLogReg {
    features: Array2<f64>,
    labels: Vec<usize>,
    prior_variance: f64,
}

impl BayesLogReg {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, prior_variance: f64) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::usage(
                "logistic regression needs at least one example",
            ));
        }
        if labels.len() != features.nrows() {
            return Err(Error::usage(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.nrows()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::data(format!(
                "logistic regression label {bad} not in {{0, 1}}"
            )));
        }
        if !(prior_variance > 0.0) {
            return Err(Error::usage("prior variance must be positive"));
        }
        Ok(Self {
            features,
            labels,
            prior_variance,
        })
    }

    /// Log posterior (up to a constant) and its gradient.
    pub fn blr_log_posterior_and_score(
        &self,
        theta: ArrayView1<f64>,
        batch: Option<&[usize]>,
    ) -> Result<(f64, Array1<f64>)> {
        check_dim(&theta, self.features.ncols())?;
        let n = self.features.nrows();
        let all: Vec<usize>;
        let idx = match batch {
            Some(b) => {
                check_batch(b, n)?;
                b
            }
            None => {
                all = (0..n).collect();
                &all
            }
        };
        let scale = n as f64 / idx.len() as f64;
        let mut ll = 0.0;
        let mut grad = Array1::zeros(theta.len());
        for &i in idx {
            let x = self.features.row(i);
            let z = x.dot(&theta);
            let y = self.labels[i] as f64;
            ll += y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z);
            grad.scaled_add(y - sigmoid(z), &x);
        }
        let prior = theta.dot(&theta) / (2.0 * self.prior_variance);
        let mut score = grad * scale;
        score.scaled_add(-1.0 / self.prior_variance, &theta);
        Ok((scale * ll - prior, score))
    }
}

impl ScoredDensity for BayesLogReg {
    fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn name(&self) -> String {
        "bayes_logistic_regression".into()
    }

    fn data_len(&self) -> Option<usize> {
        Some(self.features.nrows())
    }

    fn log_density_and_score(
        &self,
        x: ArrayView1<f64>,
        batch: Option<&[usize]>,
    ) -> Result<(f64, Array1<f64>)> {
        self.blr_log_posterior_and_score(x, batch)
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Option<Array1<f64>> {
        Some(gaussian_draw(rng, self.dim(), self.prior_variance.sqrt()))
    }
}

fn gaussian_draw(rng: &mut dyn RngCore, d: usize, sd: f64) -> Array1<f64> {
    Array1::from_iter((0..d).map(|_| sd * rng.sample::<f64, _>(StandardNormal)))
}

/// Posterior over the weights of a softmax classifier network.
#[derive(Debug, Clone)]
pub struct BnnPosterior {
    net: LayerSpec,
    features: Array2<f64>,
    labels: Vec<usize>,
    prior_variance: f64,
    minibatch_size: usize,
    likelihood_weight: f64,
}

impl BnnPosterior {
    pub fn new(
        net: LayerSpec,
        features: Array2<f64>,
        labels: Vec<usize>,
        prior_variance: f64,
        minibatch_size: usize,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::usage("BNN posterior needs at least one example"));
        }
        if features.ncols() != net.input_dim() {
            return Err(Error::usage(format!(
                "features have {} columns, network input is {}",
                features.ncols(),
                net.input_dim()
            )));
        }
        if labels.len() != features.nrows() {
            return Err(Error::usage("labels and features differ in length"));
        }
        let k = net.num_classes();
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
            return Err(Error::data(format!(
                "label {y} at index {i} is outside [0, {k})"
            )));
        }
        if !(prior_variance > 0.0) {
            return Err(Error::usage("prior variance must be positive"));
        }
        if minibatch_size == 0 {
            return Err(Error::usage("minibatch size must be positive"));
        }
        Ok(Self {
            net,
            features,
            labels,
            prior_variance,
            minibatch_size,
            likelihood_weight: 1.0,
        })
    }

    /// Scales the likelihood term; 0 leaves the prior alone.
    pub fn with_likelihood_weight(mut self, w: f64) -> Self {
        self.likelihood_weight = w;
        self
    }

    pub fn net(&self) -> &LayerSpec {
        &self.net
    }

    pub fn bnn_log_posterior_and_score(
        &self,
        theta: ArrayView1<f64>,
        batch: Option<&[usize]>,
    ) -> Result<(f64, Array1<f64>)> {
        check_dim(&theta, self.net.num_params())?;
        let n = self.features.nrows();
        let (nll, grad) = match batch {
            Some(b) => {
                check_batch(b, n)?;
                let x = self.features.select(Axis(0), b);
                let y: Vec<usize> = b.iter().map(|&i| self.labels[i]).collect();
                nnet::backward_nll(&self.net, theta, x.view(), &y)?
            }
            None => nnet::backward_nll(&self.net, theta, self.features.view(), &self.labels)?,
        };
        // mean NLL over the batch -> summed log-likelihood over N points
        let scale = -(n as f64) * self.likelihood_weight;
        let logp = scale * nll - theta.dot(&theta) / (2.0 * self.prior_variance);
        let mut score = grad * scale;
        score.scaled_add(-1.0 / self.prior_variance, &theta);
        Ok((logp, score))
    }
}

impl ScoredDensity for BnnPosterior {
    fn dim(&self) -> usize {
        self.net.num_params()
    }

    fn name(&self) -> String {
        format!("bnn{:?}", self.net.sizes)
    }

    fn data_len(&self) -> Option<usize> {
        Some(self.features.nrows())
    }

    fn default_batch_size(&self) -> Option<usize> {
        Some(self.minibatch_size)
    }

    fn log_density_and_score(
        &self,
        x: ArrayView1<f64>,
        batch: Option<&[usize]>,
    ) -> Result<(f64, Array1<f64>)> {
        self.bnn_log_posterior_and_score(x, batch)
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Option<Array1<f64>> {
        Some(gaussian_draw(rng, self.dim(), self.prior_variance.sqrt()))
    }
}

/// Central-difference gradient of the full-batch log-density.
pub fn finite_diff_score(
    target: &dyn ScoredDensity,
    x: ArrayView1<f64>,
    step: f64,
) -> Result<Array1<f64>> {
    if !(step > 0.0) {
        return Err(Error::usage(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut probe = x.to_owned();
    let mut out = Array1::zeros(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = target.log_density(probe.view())?;
        probe[i] = orig - step;
        let down = target.log_density(probe.view())?;
        probe[i] = orig;
        out[i] = (up - down) / (2.0 * step);
    }
    Ok(out)
}

/// `|a - b|_2 / max(|b|_2, floor)`.
pub fn relative_error(a: ArrayView1<f64>, b: ArrayView1<f64>, floor: f64) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    let den = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(floor);
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::Activation;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn four_mode_mixture() -> GaussianMixture {
        GaussianMixture::new(
            vec![
                vec![213.0, 200.0],
                vec![180.0, 200.0],
                vec![200.0, 210.0],
                vec![200.0, 190.0],
            ],
            vec![0.6, 0.3, 0.05, 0.05],
            vec![1.0; 4],
        )
        .unwrap()
    }

    struct Quadratic;
    impl ScoredDensity for Quadratic {
        fn dim(&self) -> usize {
            3
        }
        fn name(&self) -> String {
            "quadratic".into()
        }
        fn log_density_and_score(
            &self,
            x: ArrayView1<f64>,
            _: Option<&[usize]>,
        ) -> Result<(f64, Array1<f64>)> {
            Ok((-0.5 * x.dot(&x), -x.to_owned()))
        }
    }

    fn random_blr(rng: &mut ChaCha8Rng, n: usize, d: usize) -> BayesLogReg {
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let y = (0..n).map(|_| rng.random_range(0..2usize)).collect();
        BayesLogReg::new(x, y, 0.5).unwrap()
    }

    fn random_bnn(rng: &mut ChaCha8Rng) -> BnnPosterior {
        let spec = LayerSpec::new(vec![2, 4, 3], Activation::Tanh).unwrap();
        let x = Array2::from_shape_fn((5, 2), |_| rng.random_range(-2.0..2.0));
        let y = (0..5).map(|_| rng.random_range(0..3usize)).collect();
        BnnPosterior::new(spec, x, y, 0.1, 2).unwrap()
    }

    #[test]
    fn gm_log_density_at_mode() {
        let gm = GaussianMixture::standard_normal(2).unwrap();
        let v = gm.gm_log_density(array![0.0, 0.0].view()).unwrap();
        assert!((v + 1.837_877_066_4).abs() < 1e-10);
    }

    #[test]
    fn gm_symmetric_components() {
        let gm = GaussianMixture::new(vec![vec![-2.0], vec![2.0]], vec![0.5, 0.5], vec![1.0, 1.0])
            .unwrap();
        let a = gm.gm_log_density(array![2.0].view()).unwrap();
        let b = gm.gm_log_density(array![-2.0].view()).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(gm.gm_score(array![0.0].view()).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn gm_four_mode_mixture_matches_direct_sum() {
        let gm = four_mode_mixture();
        let x = [213.0, 200.0];
        // direct summation of weighted densities, no log-sum-exp
        let mut total = 0.0;
        for (c, w) in [
            ([213.0, 200.0], 0.6),
            ([180.0, 200.0], 0.3),
            ([200.0, 210.0], 0.05),
            ([200.0, 190.0], 0.05),
        ] {
            let sq: f64 = (x[0] - c[0]) * (x[0] - c[0]) + (x[1] - c[1]) * (x[1] - c[1]);
            total += w * (-sq / 2.0).exp() / (2.0 * std::f64::consts::PI);
        }
        let v = gm.gm_log_density(array![213.0, 200.0].view()).unwrap();
        assert!((v - total.ln()).abs() < 1e-12);
    }

    #[test]
    fn gm_far_points_do_not_underflow() {
        let gm = four_mode_mixture();
        let far = array![1200.0, -800.0];
        let v = gm.gm_log_density(far.view()).unwrap();
        assert!(v.is_finite());
        let s = gm.gm_score(far.view()).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gm_score_at_single_mode_is_zero() {
        let gm = GaussianMixture::isotropic(vec![1.0, -2.0, 3.0], 0.5).unwrap();
        assert!(gm
            .gm_score(array![1.0, -2.0, 3.0].view())
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn gm_score_matches_finite_differences() {
        let gm = four_mode_mixture();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = array![
                rng.random_range(175.0..218.0),
                rng.random_range(185.0..215.0)
            ];
            let s = gm.gm_score(x.view()).unwrap();
            let fd = finite_diff_score(&gm, x.view(), 1e-5).unwrap();
            assert!(relative_error(s.view(), fd.view(), 1e-8) < 1e-6);
        }
    }

    #[test]
    fn gm_translation_equivariance() {
        let gm = four_mode_mixture();
        let shift = [-150.0, 37.5];
        let moved = GaussianMixture::new(
            gm.centers()
                .rows()
                .into_iter()
                .map(|c| vec![c[0] + shift[0], c[1] + shift[1]])
                .collect(),
            gm.weights().to_vec(),
            gm.variances().to_vec(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = array![
                rng.random_range(170.0..220.0),
                rng.random_range(180.0..220.0)
            ];
            let y = array![x[0] + shift[0], x[1] + shift[1]];
            let a = gm.gm_log_density(x.view()).unwrap();
            let b = moved.gm_log_density(y.view()).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn gm_rejects_invalid() {
        assert!(GaussianMixture::new(vec![], vec![], vec![]).is_err());
        assert!(GaussianMixture::new(vec![vec![0.0]], vec![0.9], vec![1.0]).is_err());
        assert!(GaussianMixture::new(vec![vec![0.0]], vec![1.0], vec![0.0]).is_err());
        assert!(GaussianMixture::new(
            vec![vec![0.0], vec![1.0, 2.0]],
            vec![0.5, 0.5],
            vec![1.0, 1.0]
        )
        .is_err());
    }

    #[test]
    fn blr_at_zero() {
        let x = array![[1.0, 2.0], [-1.0, 0.5], [0.3, 0.3]];
        let y = vec![1, 0, 1];
        let blr = BayesLogReg::new(x.clone(), y.clone(), 2.0).unwrap();
        let (lp, s) = blr
            .blr_log_posterior_and_score(array![0.0, 0.0].view(), None)
            .unwrap();
        assert!((lp - 3.0 * 0.5f64.ln()).abs() < 1e-14);
        let mut expected = Array1::<f64>::zeros(2);
        for (i, &yi) in y.iter().enumerate() {
            expected.scaled_add(yi as f64 - 0.5, &x.row(i));
        }
        assert!((&s - &expected).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn blr_empty_batch_is_usage_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let blr = random_blr(&mut rng, 4, 2);
        assert!(matches!(
            blr.blr_log_posterior_and_score(array![0.0, 0.0].view(), Some(&[])),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            blr.blr_log_posterior_and_score(array![0.0, 0.0].view(), Some(&[4])),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn blr_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let blr = random_blr(&mut rng, 8, 3);
        for _ in 0..50 {
            let th = Array1::from_iter((0..3).map(|_| rng.random_range(-2.0..2.0)));
            let s = blr.score(th.view()).unwrap();
            let fd = finite_diff_score(&blr, th.view(), 1e-5).unwrap();
            assert!(relative_error(s.view(), fd.view(), 1e-8) < 1e-6);
        }
    }

    #[test]
    fn bnn_uniform_likelihood_at_zero() {
        let spec = LayerSpec::new(vec![2, 3, 4], Activation::Tanh).unwrap();
        let x = array![[0.2, 0.1], [1.0, -1.0]];
        let bnn = BnnPosterior::new(spec.clone(), x, vec![0, 3], 0.1, 2).unwrap();
        let (lp, _) = bnn
            .bnn_log_posterior_and_score(Array1::zeros(spec.num_params()).view(), None)
            .unwrap();
        assert!((lp - 2.0 * -(4f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn bnn_prior_only_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bnn = random_bnn(&mut rng).with_likelihood_weight(0.0);
        let th = Array1::from_iter((0..bnn.dim()).map(|_| rng.random_range(-1.0..1.0)));
        let s = bnn.score(th.view()).unwrap();
        assert!((&s + &(&th / 0.1)).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn bnn_label_out_of_range_is_data_error() {
        let spec = LayerSpec::new(vec![2, 3, 2], Activation::Tanh).unwrap();
        let err = BnnPosterior::new(spec, array![[0.0, 0.0]], vec![2], 0.1, 1).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn bnn_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bnn = random_bnn(&mut rng);
        for _ in 0..50 {
            let th = Array1::from_iter((0..bnn.dim()).map(|_| rng.random_range(-1.0..1.0)));
            let s = bnn.score(th.view()).unwrap();
            let fd = finite_diff_score(&bnn, th.view(), 1e-5).unwrap();
            assert!(relative_error(s.view(), fd.view(), 1e-8) < 1e-5);
        }
    }

    #[test]
    fn finite_diff_on_quadratic() {
        let x = array![0.5, -1.5, 2.0];
        let fd = finite_diff_score(&Quadratic, x.view(), 1e-4).unwrap();
        assert!((&fd + &x).iter().all(|v| v.abs() < 1e-8));
        assert!(finite_diff_score(&Quadratic, x.view(), 0.0).is_err());
    }

    #[test]
    fn finite_diff_step_stability() {
        let gm = four_mode_mixture();
        let x = array![205.3, 198.1];
        let a = finite_diff_score(&gm, x.view(), 1e-5).unwrap();
        let b = finite_diff_score(&gm, x.view(), 1e-6).unwrap();
        assert!(relative_error(a.view(), b.view(), 1e-8) < 1e-4);
    }

    #[test]
    fn minibatch_scores_are_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let blr = random_blr(&mut rng, 12, 3);
        let bnn = {
            let spec = LayerSpec::new(vec![2, 4, 3], Activation::Tanh).unwrap();
            let x = Array2::from_shape_fn((12, 2), |_| rng.random_range(-2.0..2.0));
            let y = (0..12).map(|_| rng.random_range(0..3usize)).collect();
            BnnPosterior::new(spec, x, y, 0.1, 4).unwrap()
        };
        let targets: [&dyn ScoredDensity; 2] = [&blr, &bnn];
        for t in targets {
            let th = Array1::from_iter((0..t.dim()).map(|_| rng.random_range(-1.0..1.0)));
            let full = t.score(th.view()).unwrap();
            let parts: [&[usize]; 3] = [&[0, 1, 2, 3], &[4, 5, 6, 7], &[8, 9, 10, 11]];
            let mut avg = Array1::zeros(t.dim());
            for p in parts {
                avg += &t.log_density_and_score(th.view(), Some(p)).unwrap().1;
            }
            avg /= 3.0;
            assert!(
                (&avg - &full).iter().all(|v| v.abs() < 1e-10),
                "{}",
                t.name()
            );
        }
    }

    #[test]
    fn mixture_sampler_is_seeded() {
        let gm = four_mode_mixture();
        let a = gm.sample(50, &mut ChaCha8Rng::seed_from_u64(3));
        let b = gm.sample(50, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }
}
