//! Seeded synthetic data sets.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, DatasetMeta};
use crate::error::{Error, Result};

/// Two interleaved half-circles with Gaussian noise.
///
/// Class 0 lies on the upper unit half-circle, class 1 on the lower
/// half-circle centred at `(1, 0.5)`. Angles are evenly spaced; with odd `n`
/// class 0 gets the extra point. Rows are shuffled.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::usage(format!("two_moons needs n >= 2, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::usage(format!(
            "noise must be non-negative, got {noise}"
        )));
    }
    let n0 = n.div_ceil(2);
    let n1 = n - n0;
    let angle = |i: usize, m: usize| {
        if m == 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (m - 1) as f64
        }
    };
    let mut rows: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    for i in 0..n0 {
        let t = angle(i, n0);
        rows.push(([t.cos(), t.sin()], 0));
    }
    for i in 0..n1 {
        let t = angle(i, n1);
        rows.push(([1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    let mut features = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for (r, (p, y)) in rows.into_iter().enumerate() {
        for c in 0..2 {
            let jitter = if noise > 0.0 {
                noise * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            features[[r, c]] = p[c] + jitter;
        }
        labels.push(y);
    }
    Dataset::new(
        features,
        labels,
        DatasetMeta {
            name: format!("two_moons(n={n}, noise={noise}, seed={seed})"),
            source: None,
            normalization: "none".into(),
            subsampled_from: None,
        },
    )
}

/// Points uniform in angle with radius uniform in `[r_min, r_max]` around `center`.
pub fn far_field(
    n: usize,
    center: [f64; 2],
    r_min: f64,
    r_max: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    if !(r_min >= 0.0 && r_max >= r_min && r_max.is_finite()) {
        return Err(Error::usage(format!(
            "invalid far-field radii [{r_min}, {r_max}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, 2));
    for mut row in out.rows_mut() {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let r = if r_max > r_min {
            rng.random_range(r_min..r_max)
        } else {
            r_min
        };
        row[0] = center[0] + r * theta.cos();
        row[1] = center[1] + r * theta.sin();
    }
    Ok(out)
}
