//! Sample-quality and ensemble-diversity metrics.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{self, LayerSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub radius: f64,
    pub threshold: f64,
    /// Fraction of particles assigned to each center.
    pub fractions: Vec<f64>,
    pub unassigned: f64,
    pub covered: Vec<bool>,
}

impl ModeReport {
    pub fn covered_count(&self) -> usize {
        self.covered.iter().filter(|&&c| c).count()
    }
}

/// Assigns each particle to its nearest center when that center is within
/// `radius`; ties go to the lower center index.
pub fn mode_coverage(
    particles: ArrayView2<f64>,
    centers: ArrayView2<f64>,
    radius: f64,
    threshold: f64,
) -> Result<ModeReport> {
    if !(radius > 0.0) {
        return Err(Error::usage(format!(
            "mode radius must be positive, got {radius}"
        )));
    }
    if particles.ncols() != centers.ncols() {
        return Err(Error::usage("particles and centers differ in dimension"));
    }
    let m = centers.nrows();
    let mut counts = vec![0usize; m];
    let r2 = radius * radius;
    for p in particles.rows() {
        let mut best: Option<(usize, f64)> = None;
        for (c, center) in centers.rows().into_iter().enumerate() {
            let d2: f64 = p
                .iter()
                .zip(center.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if best.is_none_or(|(_, bd)| d2 < bd) {
                best = Some((c, d2));
            }
        }
        if let Some((c, d2)) = best {
            if d2 <= r2 {
                counts[c] += 1;
            }
        }
    }
    let n = particles.nrows().max(1) as f64;
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let assigned: usize = counts.iter().sum();
    let unassigned = (particles.nrows() - assigned) as f64 / n;
    let covered = fractions.iter().map(|&f| f >= threshold).collect();
    Ok(ModeReport {
        radius,
        threshold,
        fractions,
        unassigned,
        covered,
    })
}

/// Gaussian kernel `exp(-|a - b|² / (2h))`; `h` is a squared length scale.
fn rbf(a: ArrayView1<f64>, b: ArrayView1<f64>, h: f64) -> f64 {
    (-a.iter()
        .zip(b.iter())
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        / (2.0 * h))
        .exp()
}

/// Unbiased MMD² between two sample sets: off-diagonal means of `k(X,X)` and
/// `k(Y,Y)` minus twice the full mean of `k(X,Y)`, with `k` from [`rbf`].
pub fn mmd2(x: ArrayView2<f64>, y: ArrayView2<f64>, h: f64) -> Result<f64> {
    if x.nrows() < 2 || y.nrows() < 2 {
        return Err(Error::usage("mmd2 needs at least two samples per set"));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::usage("mmd2 sample sets differ in dimension"));
    }
    if !(h > 0.0) {
        return Err(Error::usage(format!(
            "mmd2 bandwidth must be positive, got {h}"
        )));
    }
    let within = |s: ArrayView2<f64>| {
        let n = s.nrows();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    total += rbf(s.row(i), s.row(j), h);
                }
            }
        }
        total / (n * (n - 1)) as f64
    };
    let mut cross = 0.0;
    for a in x.rows() {
        for b in y.rows() {
            cross += rbf(a, b, h);
        }
    }
    cross /= (x.nrows() * y.nrows()) as f64;
    Ok(within(x) + within(y) - 2.0 * cross)
}

/// Median pairwise squared distance of the pooled samples, for use with [`mmd2`].
pub fn pooled_bandwidth(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    let pooled = ndarray::concatenate(ndarray::Axis(0), &[x, y])
        .map_err(|_| Error::usage("sample sets differ in dimension"))?;
    let n = pooled.nrows();
    if n < 2 {
        return Err(Error::usage("pooled bandwidth needs at least two samples"));
    }
    let mut sq = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = &pooled.row(i) - &pooled.row(j);
            sq.push(d.dot(&d));
        }
    }
    Ok(crate::kernel::median_in_place(&mut sq).max(crate::kernel::MIN_BANDWIDTH))
}

/// Bayesian model average: mean of the members' softmax outputs.
pub fn bma_predict(
    members: &[ArrayView1<f64>],
    spec: &LayerSpec,
    x: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    Ok(member_probs(members, spec, x)?.0)
}

/// BMA probabilities plus each member's own probabilities.
fn member_probs(
    members: &[ArrayView1<f64>],
    spec: &LayerSpec,
    x: ArrayView2<f64>,
) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    if members.is_empty() {
        return Err(Error::usage("BMA needs at least one member"));
    }
    let per: Vec<Array2<f64>> = members
        .iter()
        .map(|m| nnet::forward(spec, *m, x).map(|l| nnet::softmax_rows(l.view())))
        .collect::<Result<_>>()?;
    let mut avg = Array2::zeros((x.nrows(), spec.num_classes()));
    for p in &per {
        avg += p;
    }
    avg /= members.len() as f64;
    Ok((avg, per))
}

fn argmax(row: ArrayView1<f64>) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Mean negative log-likelihood of `labels` under row distributions `probs`.
pub fn nll(probs: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let n = labels.len().max(1) as f64;
    -labels
        .iter()
        .enumerate()
        .map(|(r, &y)| probs[[r, y]].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / n
}

pub fn accuracy(probs: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(r, &y)| argmax(probs.row(*r)) == y)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Mean Shannon entropy (nats) of the rows.
pub fn mean_entropy(probs: ArrayView2<f64>) -> f64 {
    let total: f64 = probs
        .rows()
        .into_iter()
        .map(|r| {
            -r.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .sum();
    total / probs.nrows().max(1) as f64
}

/// Mean over inputs of the fraction of ordered member pairs whose argmax differs.
pub fn model_disagreement(per_member: &[Array2<f64>]) -> f64 {
    let m = per_member.len();
    if m < 2 {
        return 0.0;
    }
    let rows = per_member[0].nrows();
    let mut total = 0.0;
    for r in 0..rows {
        let votes: Vec<usize> = per_member.iter().map(|p| argmax(p.row(r))).collect();
        let mut differ = 0usize;
        for i in 0..m {
            for j in 0..m {
                if i != j && votes[i] != votes[j] {
                    differ += 1;
                }
            }
        }
        total += differ as f64 / (m * (m - 1)) as f64;
    }
    total / rows.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEval {
    pub members: usize,
    pub accuracy: f64,
    pub nll: f64,
    /// Mean NLL of the individual members on the test set.
    pub member_nll: f64,
    pub entropy_test: f64,
    pub entropy_ood: f64,
    pub md_test: f64,
    pub md_ood: f64,
    /// `entropy_ood / entropy_test`; `None` when the denominator is zero.
    pub entropy_ratio: Option<f64>,
    /// `md_ood / md_test`; `None` when the denominator is zero.
    pub md_ratio: Option<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

pub fn ensemble_eval(
    members: &[ArrayView1<f64>],
    spec: &LayerSpec,
    test_x: ArrayView2<f64>,
    test_y: &[usize],
    ood_x: ArrayView2<f64>,
) -> Result<EnsembleEval> {
    if test_x.nrows() == 0 || ood_x.nrows() == 0 {
        return Err(Error::usage(
            "ensemble evaluation needs non-empty test and OOD sets",
        ));
    }
    if test_y.len() != test_x.nrows() {
        return Err(Error::usage("test labels and inputs differ in length"));
    }
    if let Some(&bad) = test_y.iter().find(|&&y| y >= spec.num_classes()) {
        return Err(Error::data(format!(
            "test label {bad} outside [0, {})",
            spec.num_classes()
        )));
    }
    let (bma_test, per_test) = member_probs(members, spec, test_x)?;
    let (bma_ood, per_ood) = member_probs(members, spec, ood_x)?;
    let member_nll =
        per_test.iter().map(|p| nll(p.view(), test_y)).sum::<f64>() / members.len() as f64;
    let entropy_test = mean_entropy(bma_test.view());
    let entropy_ood = mean_entropy(bma_ood.view());
    let md_test = model_disagreement(&per_test);
    let md_ood = model_disagreement(&per_ood);
    Ok(EnsembleEval {
        members: members.len(),
        accuracy: accuracy(bma_test.view(), test_y),
        nll: nll(bma_test.view(), test_y),
        member_nll,
        entropy_test,
        entropy_ood,
        md_test,
        md_ood,
        entropy_ratio: ratio(entropy_ood, entropy_test),
        md_ratio: ratio(md_ood, md_test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::Activation;
    use crate::target::GaussianMixture;
    use ndarray::{array, Array1, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn four_mode_mixture() -> GaussianMixture {
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

    fn random_members(
        rng: &mut ChaCha8Rng,
        spec: &LayerSpec,
        m: usize,
        scale: f64,
    ) -> Vec<Array1<f64>> {
        (0..m)
            .map(|_| {
                Array1::from_iter((0..spec.num_params()).map(|_| rng.random_range(-scale..scale)))
            })
            .collect()
    }

    #[test]
    fn all_particles_on_one_center() {
        let gm = four_mode_mixture();
        let pts = Array2::from_shape_fn((50, 2), |(_, c)| gm.centers()[[0, c]]);
        let rep = mode_coverage(pts.view(), gm.centers(), 3.0, 0.01).unwrap();
        assert_eq!(rep.fractions, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(rep.covered, vec![true, false, false, false]);
        assert_eq!(rep.unassigned, 0.0);
    }

    #[test]
    fn equidistant_far_particle_is_unassigned() {
        let centers = array![[-1.0, 0.0], [1.0, 0.0]];
        let rep = mode_coverage(array![[0.0, 5.0]].view(), centers.view(), 3.0, 0.01).unwrap();
        assert_eq!(rep.fractions, vec![0.0, 0.0]);
        assert_eq!(rep.unassigned, 1.0);
    }

    #[test]
    fn oracle_samples_cover_all_modes_with_true_weights() {
        let gm = four_mode_mixture();
        let samples = gm.sample(1000, &mut ChaCha8Rng::seed_from_u64(17));
        let rep = mode_coverage(samples.view(), gm.centers(), 3.0, 0.01).unwrap();
        assert!(rep.covered.iter().all(|&c| c));
        for (f, w) in rep.fractions.iter().zip(gm.weights()) {
            assert!((f - w).abs() <= 0.05, "{f} vs {w}");
        }
        let sum: f64 = rep.fractions.iter().sum::<f64>() + rep.unassigned;
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mode_radius_must_be_positive() {
        assert!(mode_coverage(array![[0.0]].view(), array![[0.0]].view(), 0.0, 0.1).is_err());
    }

    fn normal_samples(rng: &mut ChaCha8Rng, n: usize, mean: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, 1), |_| mean + rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn mmd2_of_a_set_with_itself() {
        // The cross term keeps the diagonal, so the estimate is -(2/n)(1 - mean off-diagonal k).
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = normal_samples(&mut rng, 100, 0.0);
        let n = x.nrows();
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += (-(x[[i, 0]] - x[[j, 0]]).powi(2) / 2.0).exp();
                }
            }
        }
        off /= (n * (n - 1)) as f64;
        let expected = -2.0 / n as f64 * (1.0 - off);
        let got = mmd2(x.view(), x.view(), 1.0).unwrap();
        assert!(got <= 0.0);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        // identical points: every kernel value is 1
        let same = Array2::from_elem((5, 2), 0.3);
        assert!(mmd2(same.view(), same.view(), 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn mmd2_separates_distant_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = normal_samples(&mut rng, 500, 0.0);
        let y = normal_samples(&mut rng, 500, 10.0);
        assert!(mmd2(x.view(), y.view(), 1.0).unwrap() > 1.0);
    }

    #[test]
    fn mmd2_symmetric_and_exchangeable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = normal_samples(&mut rng, 40, 0.0);
        let y = normal_samples(&mut rng, 30, 0.5);
        let a = mmd2(x.view(), y.view(), 0.8).unwrap();
        let b = mmd2(y.view(), x.view(), 0.8).unwrap();
        assert!((a - b).abs() < 1e-12);
        let perm: Vec<usize> = (0..30).rev().collect();
        let yp = y.select(Axis(0), &perm);
        assert!((mmd2(x.view(), yp.view(), 0.8).unwrap() - a).abs() < 1e-12);
        assert!(mmd2(x.slice(ndarray::s![..1, ..]), y.view(), 1.0).is_err());
    }

    #[test]
    fn bma_of_identical_members_is_member_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = LayerSpec::new(vec![2, 5, 3], Activation::Tanh).unwrap();
        let m = random_members(&mut rng, &spec, 1, 1.0).remove(0);
        let x = Array2::from_shape_fn((6, 2), |_| rng.random_range(-2.0..2.0));
        let single = nnet::softmax_rows(nnet::forward(&spec, m.view(), x.view()).unwrap().view());
        let bma = bma_predict(&[m.view(), m.view(), m.view()], &spec, x.view()).unwrap();
        assert!((&bma - &single).iter().all(|v| v.abs() < 1e-15));
        assert!(bma_predict(&[], &spec, x.view()).is_err());
    }

    #[test]
    fn bma_is_elementwise_average() {
        // member a: zero weights -> uniform; member b: large output bias on class 0
        let spec = LayerSpec::new(vec![1, 2], Activation::Tanh).unwrap();
        let a = array![0.0, 0.0, 0.0, 0.0];
        let b = array![0.0, 0.0, 50.0, 0.0];
        let x = array![[0.3], [-1.0]];
        let bma = bma_predict(&[a.view(), b.view()], &spec, x.view()).unwrap();
        for r in 0..2 {
            assert!((bma[[r, 0]] - 0.75).abs() < 1e-12);
            assert!((bma[[r, 1]] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn bma_rows_are_distributions_and_jensen_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = LayerSpec::new(vec![3, 6, 4], Activation::Tanh).unwrap();
        for _ in 0..20 {
            let members = random_members(&mut rng, &spec, 5, 2.0);
            let views: Vec<_> = members.iter().map(|m| m.view()).collect();
            let x = Array2::from_shape_fn((12, 3), |_| rng.random_range(-2.0..2.0));
            let y: Vec<usize> = (0..12).map(|_| rng.random_range(0..4)).collect();
            let bma = bma_predict(&views, &spec, x.view()).unwrap();
            for row in bma.rows() {
                assert!(row.iter().all(|&p| p >= 0.0));
                assert!((row.sum() - 1.0).abs() < 1e-10);
            }
            let ev = ensemble_eval(&views, &spec, x.view(), &y, x.view()).unwrap();
            assert!(ev.nll <= ev.member_nll + 1e-10);
        }
    }

    #[test]
    fn single_member_has_no_disagreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = LayerSpec::new(vec![2, 4, 3], Activation::Tanh).unwrap();
        let m = random_members(&mut rng, &spec, 1, 1.0);
        let x = Array2::from_shape_fn((5, 2), |_| rng.random_range(-2.0..2.0));
        let ev =
            ensemble_eval(&[m[0].view()], &spec, x.view(), &[0, 1, 2, 0, 1], x.view()).unwrap();
        assert_eq!(ev.md_test, 0.0);
        assert_eq!(ev.md_ood, 0.0);
        assert_eq!(ev.md_ratio, None);
    }

    #[test]
    fn uniform_members_have_max_entropy() {
        let spec = LayerSpec::new(vec![2, 3, 5], Activation::Tanh).unwrap();
        let z = Array1::zeros(spec.num_params());
        let x = array![[0.0, 1.0], [2.0, -3.0]];
        let ev = ensemble_eval(&[z.view(), z.view()], &spec, x.view(), &[0, 4], x.view()).unwrap();
        assert!((ev.entropy_test - 5f64.ln()).abs() < 1e-12);
        assert!((ev.entropy_ood - 5f64.ln()).abs() < 1e-12);
        assert_eq!(ev.entropy_ratio, Some(1.0));
    }

    #[test]
    fn eval_is_invariant_to_member_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = LayerSpec::new(vec![2, 4, 3], Activation::Tanh).unwrap();
        let members = random_members(&mut rng, &spec, 4, 2.0);
        let x = Array2::from_shape_fn((9, 2), |_| rng.random_range(-2.0..2.0));
        let ood = Array2::from_shape_fn((7, 2), |_| rng.random_range(-6.0..6.0));
        let y: Vec<usize> = (0..9).map(|_| rng.random_range(0..3)).collect();
        let fwd: Vec<_> = members.iter().map(|m| m.view()).collect();
        let rev: Vec<_> = members.iter().rev().map(|m| m.view()).collect();
        let a = ensemble_eval(&fwd, &spec, x.view(), &y, ood.view()).unwrap();
        let b = ensemble_eval(&rev, &spec, x.view(), &y, ood.view()).unwrap();
        assert!((a.accuracy - b.accuracy).abs() < 1e-12);
        assert!((a.nll - b.nll).abs() < 1e-12);
        assert!((a.entropy_test - b.entropy_test).abs() < 1e-12);
        assert!((a.md_ood - b.md_ood).abs() < 1e-12);
    }

    #[test]
    fn disagreement_counts_ordered_pairs() {
        // three members, one input: votes {0, 0, 1} -> 4 of 6 ordered pairs differ
        let p0 = array![[0.9, 0.1]];
        let p1 = array![[0.2, 0.8]];
        let md = model_disagreement(&[p0.clone(), p0, p1]);
        assert!((md - 4.0 / 6.0).abs() < 1e-15);
    }
}
