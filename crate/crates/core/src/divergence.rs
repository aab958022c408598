//! Exact entropy, KL and generalized Jensen-Shannon divergence on finite
//! distributions, plus the oracle-prior upper bound on GJSD.
//!
//! Natural logarithms throughout, with `0 ln 0 = 0`. Mixture entropies of
//! Gaussians have no closed form, so the identities linking GJSD to the
//! alignment bound are certified here on discrete supports where every
//! term can be computed exactly; [`verify_suite`] also runs the Gaussian
//! inequalities from [`crate::gaussian`].

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::gaussian::{cfs_matrix, conditional_cov, monte_carlo_entropy, JointStats};
use crate::linalg::{symmetric_eigen, Cholesky, Matrix};
use crate::par::{self, Execution};
use crate::rng::{stream_id, substream, Purpose};

const SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidDistribution(format!("negative or non-finite mass {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!("mass sums to {total}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidDistribution("zero total mass".into()));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    w: Vec<f64>,
}

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        let d = DiscreteDist::new(w)?;
        Ok(Self { w: d.probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            w: vec![1.0 / n as f64; n],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.w.len() as f64;
        self.w.iter().all(|w| (w - u).abs() <= SUM_TOL)
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn same_support(p: &DiscreteDist, q: &DiscreteDist) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Shape {
            op: "discrete",
            lhs: (p.len(), 1),
            rhs: (q.len(), 1),
        });
    }
    Ok(())
}

pub fn entropy(p: &DiscreteDist) -> f64 {
    -p.probs.iter().map(|&x| xlogy(x, x)).sum::<f64>()
}

/// `H_c(p, q) = -Σ p ln q`.
pub fn cross_entropy(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    same_support(p, q)?;
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi > 0.0 && qi == 0.0 {
            return Err(Error::AbsoluteContinuity { index: i });
        }
        total -= xlogy(pi, qi);
    }
    Ok(total)
}

pub fn kl(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    same_support(p, q)?;
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi > 0.0 {
            if qi == 0.0 {
                return Err(Error::AbsoluteContinuity { index: i });
            }
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total)
}

fn check_family(dists: &[DiscreteDist], w: &WeightVector) -> Result<usize> {
    let first = dists
        .first()
        .ok_or_else(|| Error::InvalidArgument("no distributions".into()))?;
    if dists.len() != w.len() {
        return Err(Error::InvalidArgument(format!(
            "{} distributions but {} weights",
            dists.len(),
            w.len()
        )));
    }
    for d in dists {
        same_support(first, d)?;
    }
    Ok(first.len())
}

/// `Σ_j w_j P_j`.
pub fn mixture(dists: &[DiscreteDist], w: &WeightVector) -> Result<DiscreteDist> {
    let k = check_family(dists, w)?;
    let mut probs = vec![0.0; k];
    for (d, &wj) in dists.iter().zip(&w.w) {
        for (m, &p) in probs.iter_mut().zip(&d.probs) {
            *m += wj * p;
        }
    }
    Ok(DiscreteDist { probs })
}

/// `Σ_j w_j KL(P_j ‖ Σ_i w_i P_i)`.
pub fn gjsd_kl_form(dists: &[DiscreteDist], w: &WeightVector) -> Result<f64> {
    let mix = mixture(dists, w)?;
    dists
        .iter()
        .zip(&w.w)
        .map(|(d, &wj)| Ok(wj * kl(d, &mix)?))
        .sum()
}

/// `H(Σ_j w_j P_j) - Σ_j w_j H(P_j)`.
pub fn gjsd_entropy_form(dists: &[DiscreteDist], w: &WeightVector) -> Result<f64> {
    let mix = mixture(dists, w)?;
    let mean_entropy: f64 = dists.iter().zip(&w.w).map(|(d, &wj)| wj * entropy(d)).sum();
    Ok(entropy(&mix) - mean_entropy)
}

/// Oracle-prior upper bound `H_c(mixture, oracle) - mean_n H(P_n)`.
///
/// Equals GJSD plus `KL(mixture ‖ oracle)`. Only uniform weights are accepted.
pub fn pub_value(dists: &[DiscreteDist], w: &WeightVector, oracle: &DiscreteDist) -> Result<f64> {
    check_family(dists, w)?;
    if !w.is_uniform() {
        return Err(Error::UnsupportedWeights);
    }
    let mix = mixture(dists, w)?;
    let mean_entropy = dists.iter().map(entropy).sum::<f64>() / dists.len() as f64;
    Ok(cross_entropy(&mix, oracle)? - mean_entropy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check_name: String,
    pub trials: usize,
    pub failures: usize,
    /// Smallest margin by which any trial cleared its tolerance; negative on failure.
    pub worst_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.failures == 0)
    }
}

pub const CHECK_NAMES: [&str; 5] = [
    "gjsd_dual_form",
    "pub_bound",
    "kl_nonnegative",
    "condition_reduces_entropy",
    "gaussian_entropy_monte_carlo",
];

/// Draws per trial for the in-suite Monte-Carlo entropy check.
pub const SUITE_MC_DRAWS: usize = 20_000;
pub const MC_REL_TOL: f64 = 1e-2;

/// Random distribution on `k` outcomes, with roughly one outcome in five zeroed.
pub fn random_dist(rng: &mut ChaCha8Rng, k: usize, allow_zeros: bool) -> DiscreteDist {
    loop {
        let w: Vec<f64> = (0..k)
            .map(|_| {
                if allow_zeros && rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(1e-3..1.0)
                }
            })
            .collect();
        if let Ok(d) = DiscreteDist::normalized(w) {
            return d;
        }
    }
}

pub fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> WeightVector {
    let d = random_dist(rng, n, false);
    WeightVector { w: d.probs }
}

/// `A Aᵀ / D + shift·I` with `A` uniform on `[-1, 1]`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, shift: f64) -> Matrix {
    let a = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let mut s = a.matmul_t(&a).expect("square").scale(1.0 / d as f64);
    for i in 0..d {
        s[(i, i)] += shift;
    }
    s.symmetrize()
}

/// Covariance with a random eigenbasis and eigenvalues uniform on `[lo, hi]`.
pub fn random_spd_spectrum(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> Matrix {
    let (_, basis) = symmetric_eigen(&random_spd(rng, d, 0.0));
    let vals: Vec<f64> = (0..d).map(|_| rng.random_range(lo..hi)).collect();
    basis
        .matmul(&Matrix::diag(&vals))
        .and_then(|m| m.matmul_t(&basis))
        .expect("square")
        .symmetrize()
}

/// Slack of one trial; negative means violated.
type Trial = fn(&mut ChaCha8Rng) -> Result<f64>;

fn trial_gjsd(rng: &mut ChaCha8Rng) -> Result<f64> {
    let k = rng.random_range(2..=16);
    let n = rng.random_range(2..=8);
    let dists: Vec<_> = (0..n).map(|_| random_dist(rng, k, true)).collect();
    let w = random_weights(rng, n);
    let diff = (gjsd_kl_form(&dists, &w)? - gjsd_entropy_form(&dists, &w)?).abs();
    Ok(1e-12 - diff)
}

fn trial_pub(rng: &mut ChaCha8Rng) -> Result<f64> {
    let k = rng.random_range(2..=16);
    let n = rng.random_range(2..=8);
    let dists: Vec<_> = (0..n).map(|_| random_dist(rng, k, true)).collect();
    let w = WeightVector::uniform(n);
    let oracle = random_dist(rng, k, false);
    let bound = pub_value(&dists, &w, &oracle)?;
    let gjsd = gjsd_entropy_form(&dists, &w)?;
    let gap = kl(&mixture(&dists, &w)?, &oracle)?;
    let above = bound - gjsd + 1e-12;
    let identity = 1e-12 - (bound - gjsd - gap).abs();
    Ok(above.min(identity))
}

fn trial_kl(rng: &mut ChaCha8Rng) -> Result<f64> {
    let k = rng.random_range(2..=16);
    let p = random_dist(rng, k, true);
    let q = random_dist(rng, k, false);
    Ok(kl(&p, &q)? + 1e-12)
}

fn trial_condition(rng: &mut ChaCha8Rng) -> Result<f64> {
    let dx = rng.random_range(1..=8);
    let dy = rng.random_range(1..=8);
    let cov = random_spd(rng, dx + dy, 0.05);
    let tape = Tape::new();
    let j = JointStats::from_moments(&tape, Matrix::zeros(1, dx + dy), cov, dx)?;
    let gap = j.xx()?.logdet()?.item() - conditional_cov(&j)?.logdet()?.item();
    let (eig, _) = symmetric_eigen(&cfs_matrix(&j)?.value());
    Ok((gap + 1e-10).min(eig[0] + 1e-10))
}

fn trial_entropy_mc(rng: &mut ChaCha8Rng) -> Result<f64> {
    let cov = random_spd_spectrum(rng, 3, 1.0, 4.0);
    let closed = 0.5 * (3.0 * (1.0 + (2.0 * PI).ln()) + Cholesky::factor(&cov)?.logdet());
    let mc = monte_carlo_entropy(&cov, SUITE_MC_DRAWS, rng)?;
    Ok(MC_REL_TOL - (closed - mc).abs() / closed.abs())
}

const TRIALS: [Trial; 5] = [
    trial_gjsd,
    trial_pub,
    trial_kl,
    trial_condition,
    trial_entropy_mc,
];

/// Runs every named check `trials` times; trial `t` of check `c` draws from
/// substream `(seed, Verify/c/t)`, so results do not depend on scheduling.
pub fn verify_suite(trials: usize, seed: u64, exec: Execution) -> Result<VerifyReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if trials > 1 << 16 {
        return Err(Error::InvalidArgument("at most 65536 trials".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..TRIALS.len())
        .flat_map(|c| (0..trials).map(move |t| (c, t)))
        .collect();
    let slacks = par::map(&jobs, exec, |&(c, t)| {
        let mut rng = substream(seed, stream_id(Purpose::Verify, c as u64, t as u64, 0));
        // an error inside a trial is a failed trial
        TRIALS[c](&mut rng).unwrap_or(f64::NEG_INFINITY)
    });
    let checks = CHECK_NAMES
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let s = &slacks[c * trials..(c + 1) * trials];
            CheckReport {
                check_name: (*name).to_string(),
                trials,
                failures: s.iter().filter(|&&v| !(v >= 0.0)).count(),
                worst_slack: s.iter().copied().fold(f64::INFINITY, f64::min),
            }
        })
        .collect();
    Ok(VerifyReport { seed, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn d(p: &[f64]) -> DiscreteDist {
        DiscreteDist::new(p.to_vec()).unwrap()
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(&d(&[1.0, 0.0])), 0.0);
        assert!((entropy(&d(&[0.5, 0.5])) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn kl_by_direct_summation() {
        let expected = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        let got = kl(&d(&[0.5, 0.5]), &d(&[0.25, 0.75])).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.143_841).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_decomposes() {
        let p = d(&[0.2, 0.0, 0.8]);
        let q = d(&[0.3, 0.3, 0.4]);
        let lhs = cross_entropy(&p, &q).unwrap();
        let rhs = entropy(&p) + kl(&p, &q).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn support_violations_are_errors() {
        let p = d(&[0.5, 0.5]);
        let q = d(&[1.0, 0.0]);
        assert!(matches!(kl(&p, &q), Err(Error::AbsoluteContinuity { index: 1 })));
        assert!(matches!(cross_entropy(&p, &q), Err(Error::AbsoluteContinuity { index: 1 })));
        assert!(kl(&q, &p).is_ok());
    }

    #[test]
    fn invalid_distributions_rejected() {
        assert!(DiscreteDist::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteDist::new(vec![1.5, -0.5]).is_err());
        assert!(WeightVector::new(vec![0.3, 0.3]).is_err());
    }

    #[test]
    fn disjoint_pair_gjsd_is_ln2() {
        let family = [d(&[1.0, 0.0]), d(&[0.0, 1.0])];
        let w = WeightVector::uniform(2);
        let ln2 = std::f64::consts::LN_2;
        assert!((gjsd_kl_form(&family, &w).unwrap() - ln2).abs() < 1e-15);
        assert!((gjsd_entropy_form(&family, &w).unwrap() - ln2).abs() < 1e-15);
        let oracle = d(&[0.5, 0.5]);
        assert!((pub_value(&family, &w, &oracle).unwrap() - ln2).abs() < 1e-15);
    }

    #[test]
    fn identical_family_has_zero_gjsd() {
        let p = d(&[0.1, 0.6, 0.3]);
        let family = [p.clone(), p.clone(), p];
        let w = WeightVector::uniform(3);
        assert!(gjsd_kl_form(&family, &w).unwrap().abs() < 1e-15);
        assert!(gjsd_entropy_form(&family, &w).unwrap().abs() < 1e-15);
    }

    #[test]
    fn mismatched_support_rejected() {
        let family = [d(&[1.0, 0.0]), d(&[0.2, 0.3, 0.5])];
        let w = WeightVector::uniform(2);
        assert!(matches!(gjsd_kl_form(&family, &w), Err(Error::Shape { .. })));
    }

    #[test]
    fn pub_with_mixture_oracle_equals_gjsd() {
        let mut rng = substream(1, 0);
        let family: Vec<_> = (0..4).map(|_| random_dist(&mut rng, 6, true)).collect();
        let w = WeightVector::uniform(4);
        let mix = mixture(&family, &w).unwrap();
        let bound = pub_value(&family, &w, &mix).unwrap();
        assert!((bound - gjsd_entropy_form(&family, &w).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pub_rejects_non_uniform_weights() {
        let family = [d(&[1.0, 0.0]), d(&[0.0, 1.0])];
        let w = WeightVector::new(vec![0.3, 0.7]).unwrap();
        assert!(matches!(
            pub_value(&family, &w, &d(&[0.5, 0.5])),
            Err(Error::UnsupportedWeights)
        ));
    }

    #[test]
    fn gjsd_bounded_by_mixture_entropy_and_permutation_invariant() {
        let mut rng = substream(2, 0);
        for _ in 0..50 {
            let n = rng.random_range(2..=6);
            let family: Vec<_> = (0..n).map(|_| random_dist(&mut rng, 8, true)).collect();
            let w = random_weights(&mut rng, n);
            let g = gjsd_entropy_form(&family, &w).unwrap();
            assert!(g >= -1e-12);
            assert!(g <= entropy(&mixture(&family, &w).unwrap()) + 1e-12);
            let mut order: Vec<usize> = (0..n).collect();
            order.reverse();
            order.swap(0, n / 2);
            let pf: Vec<_> = order.iter().map(|&i| family[i].clone()).collect();
            let pw = WeightVector::new(order.iter().map(|&i| w.as_slice()[i]).collect()).unwrap();
            assert!((gjsd_kl_form(&pf, &pw).unwrap() - gjsd_kl_form(&family, &w).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn suite_rejects_zero_trials() {
        assert!(verify_suite(0, 1, Execution::Sequential).is_err());
    }

    #[test]
    fn suite_is_deterministic_and_schedule_independent() {
        let a = verify_suite(20, 42, Execution::Sequential).unwrap();
        let b = verify_suite(20, 42, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.passed(), "{a:?}");
        let names: Vec<_> = a.checks.iter().map(|c| c.check_name.as_str()).collect();
        assert_eq!(names, CHECK_NAMES);
    }
}
