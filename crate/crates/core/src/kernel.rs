//! RBF kernel, its gradient, and bandwidth selection.
//!
//! The kernel is parameterized by a squared-distance scale `h`:
//! `k(x, x') = exp(-|x - x'|^2 / h)`.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest bandwidth the median heuristic will return.
pub const MIN_BANDWIDTH: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    #[default]
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default)]
    pub family: KernelFamily,
    #[serde(default)]
    pub bandwidth: Bandwidth,
}

impl KernelConfig {
    pub fn fixed(h: f64) -> Self {
        Self {
            family: KernelFamily::Rbf,
            bandwidth: Bandwidth::Fixed(h),
        }
    }

    pub fn median() -> Self {
        Self::default()
    }

    /// Resolves the bandwidth for a particular particle set.
    pub fn resolve(&self, particles: ArrayView2<f64>) -> Result<f64> {
        match self.bandwidth {
            Bandwidth::Fixed(h) => {
                check_bandwidth(h)?;
                Ok(h)
            }
            // A single particle has no pairs; any positive scale gives the same (unit) kernel.
            Bandwidth::Median if particles.nrows() < 2 => Ok(1.0),
            Bandwidth::Median => median_heuristic(particles),
        }
    }
}

fn check_bandwidth(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::usage(format!(
            "bandwidth must be positive and finite, got {h}"
        )));
    }
    Ok(())
}

fn check_dims(x: &ArrayView1<f64>, x2: &ArrayView1<f64>) -> Result<()> {
    if x.len() != x2.len() {
        return Err(Error::usage(format!(
            "kernel arguments differ in dimension ({} vs {})",
            x.len(),
            x2.len()
        )));
    }
    Ok(())
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

#[inline]
fn rbf_raw(a: &[f64], b: &[f64], h: f64) -> f64 {
    (-sq_dist(a, b) / h).exp()
}

/// `exp(-|x - x2|^2 / h)`.
pub fn rbf_eval(x: ArrayView1<f64>, x2: ArrayView1<f64>, h: f64) -> Result<f64> {
    check_dims(&x, &x2)?;
    check_bandwidth(h)?;
    Ok((-x
        .iter()
        .zip(x2.iter())
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        / h)
        .exp())
}

/// Gradient of [`rbf_eval`] with respect to its first argument,
/// `-(2/h) (x - x2) k(x, x2)`. Swapping the arguments negates the result exactly.
pub fn rbf_grad_first(x: ArrayView1<f64>, x2: ArrayView1<f64>, h: f64) -> Result<Array1<f64>> {
    let k = rbf_eval(x, x2, h)?;
    let scale = -2.0 / h * k;
    Ok(Array1::from_iter(
        x.iter().zip(x2.iter()).map(|(p, q)| scale * (p - q)),
    ))
}

/// `med^2 / max(ln n, 1)` over all pairwise Euclidean distances, clamped below
/// by [`MIN_BANDWIDTH`].
pub fn median_heuristic(particles: ArrayView2<f64>) -> Result<f64> {
    let n = particles.nrows();
    if n < 2 {
        return Err(Error::usage(format!(
            "median heuristic needs at least 2 particles, got {n}"
        )));
    }
    let rows: Vec<Vec<f64>> = particles.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(&rows[i], &rows[j]).sqrt());
        }
    }
    let med = median_in_place(&mut dists);
    let h = med * med / (n as f64).ln().max(1.0);
    Ok(h.max(MIN_BANDWIDTH))
}

pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let m = values.len();
    let upper_idx = m / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(upper_idx, f64::total_cmp);
    let upper = *upper;
    if m % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    }
}

/// `K[i][j] = k(x_i, x_j)` under the configured bandwidth.
pub fn kernel_matrix(particles: ArrayView2<f64>, cfg: &KernelConfig) -> Result<Array2<f64>> {
    Ok(PairwiseKernel::compute(particles, cfg)?.values)
}

/// Kernel values and first-argument gradients for every ordered particle pair.
#[derive(Debug, Clone)]
pub struct PairwiseKernel {
    pub bandwidth: f64,
    /// `values[[i, j]] = k(x_i, x_j)`.
    pub values: Array2<f64>,
    /// `grads[[i, j, ..]] = ∇_{x_i} k(x_i, x_j)`.
    pub grads: Array3<f64>,
}

impl PairwiseKernel {
    pub fn compute(particles: ArrayView2<f64>, cfg: &KernelConfig) -> Result<Self> {
        let h = cfg.resolve(particles)?;
        Self::with_bandwidth(particles, h)
    }

    pub fn with_bandwidth(particles: ArrayView2<f64>, h: f64) -> Result<Self> {
        check_bandwidth(h)?;
        let (n, d) = particles.dim();
        let owned = particles.as_standard_layout();
        let flat = owned.as_slice().expect("standard layout");
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = &flat[i * d..(i + 1) * d];
                let mut ks = Vec::with_capacity(n);
                let mut gs = Vec::with_capacity(n * d);
                for j in 0..n {
                    let xj = &flat[j * d..(j + 1) * d];
                    let k = rbf_raw(xi, xj, h);
                    let scale = -2.0 / h * k;
                    ks.push(k);
                    gs.extend(xi.iter().zip(xj).map(|(p, q)| scale * (p - q)));
                }
                (ks, gs)
            })
            .collect();
        let mut values = Vec::with_capacity(n * n);
        let mut grads = Vec::with_capacity(n * n * d);
        for (ks, gs) in rows {
            values.extend(ks);
            grads.extend(gs);
        }
        Ok(Self {
            bandwidth: h,
            values: Array2::from_shape_vec((n, n), values).expect("n*n values"),
            grads: Array3::from_shape_vec((n, n, d), grads).expect("n*n*d grads"),
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.grads.dim().2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn rbf_eval_examples() {
        let x = array![0.3, -1.2];
        assert_eq!(rbf_eval(x.view(), x.view(), 1.0).unwrap(), 1.0);

        // |x - x2|^2 = 2 = h
        let a = array![1.0, 1.0];
        let b = array![0.0, 0.0];
        let v = rbf_eval(a.view(), b.view(), 2.0).unwrap();
        assert!((v - 0.367_879_441_2).abs() < 1e-10);

        let v = rbf_eval(array![0.0, 0.0].view(), array![3.0, 4.0].view(), 5.0).unwrap();
        assert!((v - 0.006_737_947_0).abs() < 1e-10);
    }

    #[test]
    fn rbf_eval_rejects_bad_input() {
        let a = array![1.0, 2.0];
        let b = array![1.0];
        assert!(matches!(
            rbf_eval(a.view(), b.view(), 1.0),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            rbf_eval(a.view(), a.view(), 0.0),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            rbf_eval(a.view(), a.view(), -1.0),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn grad_examples() {
        let x = array![0.5, 0.5];
        assert_eq!(
            rbf_grad_first(x.view(), x.view(), 1.0).unwrap(),
            array![0.0, 0.0]
        );

        let g = rbf_grad_first(array![1.0].view(), array![0.0].view(), 2.0).unwrap();
        assert!((g[0] + 0.606_530_659_7).abs() < 1e-10);
        // central difference of rbf_eval
        let f = |t: f64| rbf_eval(array![t].view(), array![0.0].view(), 2.0).unwrap();
        let fd = (f(1.0 + 1e-5) - f(1.0 - 1e-5)) / 2e-5;
        assert!((fd - g[0]).abs() < 1e-9);

        let a = array![0.2, -0.7, 1.1];
        let b = array![-0.4, 0.3, 0.9];
        let gab = rbf_grad_first(a.view(), b.view(), 0.8).unwrap();
        let gba = rbf_grad_first(b.view(), a.view(), 0.8).unwrap();
        assert_eq!(gab, -gba);
    }

    #[test]
    fn median_heuristic_examples() {
        let two = array![[0.0], [1.0]];
        assert_eq!(median_heuristic(two.view()).unwrap(), 1.0);

        let three = array![[0.0], [1.0], [2.0]];
        let h = median_heuristic(three.view()).unwrap();
        assert!((h - 0.910_239_226_6).abs() < 1e-10);

        let same = Array2::from_elem((5, 3), 2.5);
        assert_eq!(median_heuristic(same.view()).unwrap(), MIN_BANDWIDTH);

        let one = array![[1.0, 2.0]];
        assert!(matches!(median_heuristic(one.view()), Err(Error::Usage(_))));
    }

    #[test]
    fn median_of_even_count_averages_middle_pair() {
        // 4 points in 1-D: distances {1,2,3,1,2,1} -> sorted {1,1,1,2,2,3} -> median 1.5
        let four = array![[0.0], [1.0], [2.0], [3.0]];
        let h = median_heuristic(four.view()).unwrap();
        assert!((h - 2.25 / 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn kernel_matrix_examples() {
        let one = array![[4.0, 2.0]];
        assert_eq!(
            kernel_matrix(one.view(), &KernelConfig::median()).unwrap(),
            array![[1.0]]
        );

        let pts = array![[0.0], [1.0], [2.0]];
        let k = kernel_matrix(pts.view(), &KernelConfig::fixed(1.0)).unwrap();
        let e1 = (-1.0f64).exp();
        let e4 = (-4.0f64).exp();
        let expected = array![[1.0, e1, e4], [e1, 1.0, e1], [e4, e1, 1.0]];
        assert_eq!(k, expected);
        assert_eq!(k, k.t());
    }

    #[test]
    fn pairwise_grads_match_pointwise() {
        let pts = array![[0.1, 0.2], [1.3, -0.4], [-0.5, 0.9]];
        let pk = PairwiseKernel::with_bandwidth(pts.view(), 0.7).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let g = rbf_grad_first(pts.row(i), pts.row(j), 0.7).unwrap();
                for c in 0..2 {
                    assert_eq!(pk.grads[[i, j, c]], g[c]);
                    assert_eq!(pk.grads[[i, j, c]], -pk.grads[[j, i, c]]);
                }
            }
        }
    }

    fn vec_pair(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            proptest::collection::vec(-3.0..3.0f64, d),
            proptest::collection::vec(-3.0..3.0f64, d),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn symmetric((a, b) in (1usize..6).prop_flat_map(vec_pair), h in 0.1..10.0f64) {
            let a = Array1::from(a);
            let b = Array1::from(b);
            prop_assert_eq!(
                rbf_eval(a.view(), b.view(), h).unwrap(),
                rbf_eval(b.view(), a.view(), h).unwrap()
            );
        }

        #[test]
        fn gradient_matches_central_difference(
            (a, b) in (1usize..5).prop_flat_map(vec_pair),
            h in 0.5..10.0f64,
        ) {
            let a = Array1::from(a);
            let b = Array1::from(b);
            let g = rbf_grad_first(a.view(), b.view(), h).unwrap();
            let eps = 1e-5;
            let mut fd = Array1::zeros(a.len());
            for c in 0..a.len() {
                let mut p = a.clone();
                let mut m = a.clone();
                p[c] += eps;
                m[c] -= eps;
                fd[c] = (rbf_eval(p.view(), b.view(), h).unwrap()
                    - rbf_eval(m.view(), b.view(), h).unwrap()) / (2.0 * eps);
            }
            let err = (&g - &fd).mapv(|v| v * v).sum().sqrt();
            let scale = fd.mapv(|v| v * v).sum().sqrt().max(1e-3);
            prop_assert!(err / scale < 1e-6, "rel err {}", err / scale);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn kernel_matrix_is_positive_definite(
            n in 1usize..=10,
            d in 1usize..4,
            seed in proptest::collection::vec(-2.0..2.0f64, 40),
            h in 0.2..5.0f64,
        ) {
            let pts = Array2::from_shape_fn((n, d), |(i, c)| seed[(i * d + c) % seed.len()] + 0.37 * i as f64);
            let k = kernel_matrix(pts.view(), &KernelConfig::fixed(h)).unwrap();
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| k[[i, j]] + if i == j { 1e-9 } else { 0.0 });
            let eig = m.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|&e| e > 0.0), "eigenvalues {:?}", eig);
        }
    }
}
