//! The four empirical objective terms and their weighted combination.
//!
//! - `a2`: posterior maximization; each feature stream is passed through the
//!   shared predictor and scored against the targets.
//! - `a1`: cross-domain alignment of the joint `(φ(X), ψ(Y))` Gaussians:
//!   `Σ_i ln|Σ_i| + ‖μ̄ − μ_i‖²_{Σ_i⁻¹}`.
//! - `r1`: pull `φ(X)` statistics toward frozen oracle features.
//! - `r2`: norm of the conditional feature shift `Σ_XY Σ_YY⁻¹ Σ_YX`.
//!
//! `iaim1` (alignment on `φ(X)` only) and `ireg2` (pooled minus mean
//! per-domain entropy of `φ(X)`) are the ablation stand-ins for `a1`/`r2`.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::gaussian::{
    conditional_cov, cfs_matrix, gaussian_entropy, pooled_moments, GaussianStats, JointStats,
};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    Regression,
    /// Predictions are row-wise probabilities, targets one-hot (or soft) labels.
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CfsNorm {
    #[default]
    Frobenius,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub v_a1: f64,
    pub v_a2: f64,
    pub v_r1: f64,
    pub v_r2: f64,
}

impl LossWeights {
    pub const ERM: Self = Self {
        v_a1: 0.0,
        v_a2: 1.0,
        v_r1: 0.0,
        v_r2: 0.0,
    };

    /// Weights used for the synthetic regression experiments.
    pub const TOY: Self = Self {
        v_a1: 0.1,
        v_a2: 1.0,
        v_r1: 0.1,
        v_r2: 0.1,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("v_a1", self.v_a1),
            ("v_a2", self.v_a2),
            ("v_r1", self.v_r1),
            ("v_r2", self.v_r2),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::TOY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantFlags {
    /// Evaluate `ψ(Y)`: second `a2` stream and joint statistics in `a1`/`r2`.
    pub use_psi: bool,
    /// Align `φ(X)` statistics only (replaces `a1` under `v_a1`).
    pub iaim1: bool,
    /// Entropy-gap regularizer (replaces `r2` under `v_r2`).
    pub ireg2: bool,
    pub cfs_norm: CfsNorm,
    /// Check `ln|Σ_XX| ≥ ln|Σ_XX|Y|` whenever joint statistics are formed.
    pub debug_checks: bool,
}

impl Default for VariantFlags {
    fn default() -> Self {
        Self {
            use_psi: true,
            iaim1: false,
            ireg2: false,
            cfs_norm: CfsNorm::Frobenius,
            debug_checks: false,
        }
    }
}

/// Features of one domain batch.
#[derive(Debug, Clone)]
pub struct DomainFeatures<'t> {
    pub phi: Var<'t>,
    pub psi: Option<Var<'t>>,
    /// Predictor output on `φ(X)` and, when present, on `ψ(Y)`.
    pub pred_from_x: Var<'t>,
    pub pred_from_y: Option<Var<'t>>,
    pub targets: Matrix,
    /// Frozen oracle features for the same rows.
    pub oracle: Option<Matrix>,
}

#[derive(Debug, Clone, Default)]
pub struct FeatureBundle<'t> {
    pub domains: Vec<DomainFeatures<'t>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Breakdown {
    pub a1: f64,
    pub a2: f64,
    pub r1: f64,
    pub r2: f64,
    pub iaim1: f64,
    pub ireg2: f64,
}

impl Breakdown {
    /// Recomputes the weighted total in the same order [`total_loss`] uses.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        let mut total = w.v_a2 * self.a2;
        for (v, x) in [
            (w.v_a1, self.a1 + self.iaim1),
            (w.v_r1, self.r1),
            (w.v_r2, self.r2 + self.ireg2),
        ] {
            if v > 0.0 {
                total += v * x;
            }
        }
        total
    }
}

fn same_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Shape { op, lhs: a, rhs: b });
    }
    Ok(())
}

fn mse<'t>(pred: Var<'t>, targets: &Matrix) -> Result<Var<'t>> {
    same_shape("mse", pred.shape(), targets.shape())?;
    Ok(pred.add_const(&targets.scale(-1.0))?.square().mean())
}

fn stream_loss<'t>(pred: Var<'t>, targets: &Matrix, task: TaskKind) -> Result<Var<'t>> {
    if !pred.value().all_finite() {
        return Err(Error::Domain {
            op: "loss_a2",
            value: f64::NAN,
        });
    }
    match task {
        TaskKind::Regression => mse(pred, targets),
        TaskKind::Classification => {
            same_shape("cross_entropy", pred.shape(), targets.shape())?;
            pred.cross_entropy(targets)
        }
    }
}

/// `H_c(φ(X), Y) + H_c(ψ(Y), Y)` realized as MSE (regression) or mean
/// cross-entropy (classification); the second stream is optional.
pub fn loss_a2<'t>(
    pred_from_x: Var<'t>,
    pred_from_y: Option<Var<'t>>,
    targets: &Matrix,
    task: TaskKind,
) -> Result<Var<'t>> {
    let mut loss = stream_loss(pred_from_x, targets, task)?;
    if let Some(py) = pred_from_y {
        loss = loss.add(stream_loss(py, targets, task)?)?;
    }
    Ok(loss)
}

/// `Σ_i ln|Σ_i| + ‖μ̄ − μ_i‖²_{Σ_i⁻¹}` with `μ̄` the mean of the `μ_i`.
pub fn alignment_loss<'t>(stats: &[GaussianStats<'t>]) -> Result<Var<'t>> {
    if stats.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "alignment needs >= 2 domains, got {}",
            stats.len()
        )));
    }
    let (mu_bar, _) = pooled_moments(stats)?;
    let mut total: Option<Var<'t>> = None;
    for s in stats {
        let term = s.logdet()?.add(s.mean_mahalanobis(mu_bar)?)?;
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    Ok(total.expect("at least two domains"))
}

fn check_widths(bundle: &FeatureBundle<'_>) -> Result<()> {
    for d in &bundle.domains {
        if let Some(psi) = d.psi {
            if psi.cols() != d.phi.cols() || psi.rows() != d.phi.rows() {
                return Err(Error::Shape {
                    op: "feature_bundle",
                    lhs: d.phi.shape(),
                    rhs: psi.shape(),
                });
            }
        }
    }
    Ok(())
}

fn psi_of<'t>(d: &DomainFeatures<'t>, op: &str) -> Result<Var<'t>> {
    d.psi
        .ok_or_else(|| Error::InvalidArgument(format!("{op} needs ψ(Y) features")))
}

/// Alignment over per-domain joint `(φ(X_n), ψ(Y_n))` statistics.
pub fn loss_a1<'t>(bundle: &FeatureBundle<'t>, ridge: f64) -> Result<Var<'t>> {
    check_widths(bundle)?;
    let stats = bundle
        .domains
        .iter()
        .map(|d| Ok(JointStats::estimate(d.phi, psi_of(d, "loss_a1")?, ridge)?.stats))
        .collect::<Result<Vec<_>>>()?;
    alignment_loss(&stats)
}

/// Alignment over per-domain `φ(X_n)` statistics only.
pub fn loss_iaim1<'t>(bundle: &FeatureBundle<'t>, ridge: f64) -> Result<Var<'t>> {
    let stats = bundle
        .domains
        .iter()
        .map(|d| GaussianStats::estimate(d.phi, ridge))
        .collect::<Result<Vec<_>>>()?;
    alignment_loss(&stats)
}

/// `ln|Σ_x| + mean_rows ‖x_O − μ_x‖²_{Σ_x⁻¹}`; oracle rows carry no gradient.
pub fn loss_r1<'t>(phi_x: Var<'t>, oracle_x: &Matrix, ridge: f64) -> Result<Var<'t>> {
    same_shape("loss_r1", phi_x.shape(), oracle_x.shape())?;
    let stats = GaussianStats::estimate(phi_x, ridge)?;
    let oracle = phi_x.tape().constant(oracle_x.clone());
    stats.logdet()?.add(stats.mean_mahalanobis(oracle)?)
}

/// Norm of `Σ_XY Σ_YY⁻¹ Σ_YX` estimated from centered features.
pub fn loss_r2<'t>(phi_x: Var<'t>, psi_y: Var<'t>, ridge: f64, norm: CfsNorm) -> Result<Var<'t>> {
    let joint = JointStats::estimate(phi_x, psi_y, ridge)?;
    let cfs = cfs_matrix(&joint)?;
    match norm {
        CfsNorm::Frobenius => Ok(cfs.frobenius_norm()),
        CfsNorm::Spectral => cfs.spectral_norm_psd(),
    }
}

/// Entropy of pooled `φ(X)` statistics minus mean per-domain entropy.
pub fn loss_ireg2<'t>(bundle: &FeatureBundle<'t>, ridge: f64) -> Result<Var<'t>> {
    let phis: Vec<Var<'t>> = bundle.domains.iter().map(|d| d.phi).collect();
    let pooled = gaussian_entropy(&GaussianStats::estimate(Var::vcat(&phis)?, ridge)?)?;
    let mut mean: Option<Var<'t>> = None;
    for &p in &phis {
        let h = gaussian_entropy(&GaussianStats::estimate(p, ridge)?)?;
        mean = Some(match mean {
            Some(m) => m.add(h)?,
            None => h,
        });
    }
    let mean = mean
        .ok_or_else(|| Error::InvalidArgument("no domains".into()))?
        .scale(1.0 / phis.len() as f64);
    pooled.sub(mean)
}

/// `ln|Σ_XX| − ln|Σ_XX|Y|`, nonnegative for any valid joint covariance.
pub fn entropy_reduction(phi_x: Var<'_>, psi_y: Var<'_>, ridge: f64) -> Result<f64> {
    let joint = JointStats::estimate(phi_x, psi_y, ridge)?;
    Ok(joint.xx()?.logdet()?.item() - conditional_cov(&joint)?.logdet()?.item())
}

fn pooled<'t>(parts: impl Iterator<Item = Var<'t>>) -> Result<Var<'t>> {
    let v: Vec<Var<'t>> = parts.collect();
    if v.len() == 1 {
        return Ok(v[0]);
    }
    Var::vcat(&v)
}

/// Weighted objective `v_a1 a1 + v_a2 a2 + v_r1 r1 + v_r2 r2`.
///
/// Terms with zero weight are neither evaluated nor added. `a2`, `r1` and
/// `r2` see the rows of all domains pooled; `a1` uses per-domain statistics.
pub fn total_loss<'t>(
    bundle: &FeatureBundle<'t>,
    weights: &LossWeights,
    flags: &VariantFlags,
    task: TaskKind,
    ridge: f64,
) -> Result<(Var<'t>, Breakdown)> {
    weights.validate()?;
    if bundle.domains.is_empty() {
        return Err(Error::InvalidArgument("empty feature bundle".into()));
    }
    check_widths(bundle)?;
    let mut br = Breakdown::default();

    let targets: Vec<&Matrix> = bundle.domains.iter().map(|d| &d.targets).collect();
    let targets = Matrix::vcat(&targets)?;
    let pred_x = pooled(bundle.domains.iter().map(|d| d.pred_from_x))?;
    let pred_y = if flags.use_psi {
        let ys = bundle
            .domains
            .iter()
            .map(|d| {
                d.pred_from_y
                    .ok_or_else(|| Error::InvalidArgument("use_psi set but ψ predictions missing".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Some(pooled(ys.into_iter())?)
    } else {
        None
    };
    let a2 = loss_a2(pred_x, pred_y, &targets, task)?;
    br.a2 = a2.item();
    let mut total = a2.scale(weights.v_a2);

    if weights.v_a1 > 0.0 {
        let term = if flags.iaim1 {
            let t = loss_iaim1(bundle, ridge)?;
            br.iaim1 = t.item();
            t
        } else {
            let t = loss_a1(bundle, ridge)?;
            br.a1 = t.item();
            t
        };
        total = total.add(term.scale(weights.v_a1))?;
    }

    if weights.v_r1 > 0.0 {
        let phi = pooled(bundle.domains.iter().map(|d| d.phi))?;
        let oracle: Vec<&Matrix> = bundle
            .domains
            .iter()
            .map(|d| {
                d.oracle
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("loss_r1 needs oracle features".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let t = loss_r1(phi, &Matrix::vcat(&oracle)?, ridge)?;
        br.r1 = t.item();
        total = total.add(t.scale(weights.v_r1))?;
    }

    if weights.v_r2 > 0.0 {
        let t = if flags.ireg2 {
            let t = loss_ireg2(bundle, ridge)?;
            br.ireg2 = t.item();
            t
        } else {
            let phi = pooled(bundle.domains.iter().map(|d| d.phi))?;
            let psi = pooled(
                bundle
                    .domains
                    .iter()
                    .map(|d| psi_of(d, "loss_r2"))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter(),
            )?;
            let t = loss_r2(phi, psi, ridge, flags.cfs_norm)?;
            br.r2 = t.item();
            t
        };
        total = total.add(t.scale(weights.v_r2))?;
    }

    if flags.debug_checks {
        for d in &bundle.domains {
            if let Some(psi) = d.psi {
                let gap = entropy_reduction(d.phi, psi, ridge)?;
                if gap < -1e-8 {
                    return Err(Error::Invariant(format!(
                        "conditioning increased log-determinant by {}",
                        -gap
                    )));
                }
            }
        }
    }
    Ok((total, br))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::gradcheck;
    use crate::rng::substream;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn a2_regression_arithmetic() {
        let tape = Tape::new();
        let y = m(3, 2, &[0.1, 0.2, -1.0, 0.5, 2.0, 3.0]);
        let exact = tape.constant(y.clone());
        let v = loss_a2(exact, Some(exact), &y, TaskKind::Regression).unwrap();
        assert_eq!(v.item(), 0.0);
        let shifted = tape.constant(y.map(|v| v + 1.0));
        let v = loss_a2(shifted, Some(exact), &y, TaskKind::Regression).unwrap();
        assert!((v.item() - 1.0).abs() < 1e-15);
        let wrong = tape.constant(Matrix::zeros(2, 2));
        assert!(matches!(
            loss_a2(wrong, None, &y, TaskKind::Regression),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn a2_classification_one_hot() {
        let tape = Tape::new();
        let y = m(2, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let p = tape.constant(y.clone());
        let v = loss_a2(p, Some(p), &y, TaskKind::Classification).unwrap();
        assert_eq!(v.item(), 0.0);
    }

    #[test]
    fn a2_rejects_non_finite() {
        let tape = Tape::new();
        let y = m(1, 1, &[0.0]);
        let p = tape.constant(m(1, 1, &[f64::NAN]));
        assert!(loss_a2(p, None, &y, TaskKind::Regression).is_err());
    }

    #[test]
    fn alignment_one_dimensional() {
        let tape = Tape::new();
        let a = GaussianStats::from_moments(&tape, m(1, 1, &[0.0]), m(1, 1, &[1.0])).unwrap();
        let b = GaussianStats::from_moments(&tape, m(1, 1, &[2.0]), m(1, 1, &[1.0])).unwrap();
        assert!((alignment_loss(&[a, b]).unwrap().item() - 2.0).abs() < 1e-15);
        assert!(alignment_loss(&[a]).is_err());
    }

    /// Columns of the 8x8 Sylvester-Hadamard matrix: ±1 entries, zero mean,
    /// mutually orthogonal, so any subset has population covariance exactly I.
    fn hadamard_columns(tape: &Tape, cols: std::ops::Range<usize>) -> Var<'_> {
        let width = cols.len();
        let start = cols.start;
        tape.constant(Matrix::from_fn(8, width, |r, c| {
            if (r & (start + c)).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 }
        }))
    }

    #[test]
    fn a1_identical_domains_unit_cov() {
        let tape = Tape::new();
        let x = hadamard_columns(&tape, 1..3);
        let psi = hadamard_columns(&tape, 3..5);
        let d = DomainFeatures {
            phi: x,
            psi: Some(psi),
            pred_from_x: x,
            pred_from_y: Some(psi),
            targets: Matrix::zeros(8, 2),
            oracle: None,
        };
        let bundle = FeatureBundle {
            domains: vec![d.clone(), d],
        };
        assert_eq!(loss_a1(&bundle, 0.0).unwrap().item(), 0.0);
        assert_eq!(loss_iaim1(&bundle, 0.0).unwrap().item(), 0.0);
    }

    #[test]
    fn r1_values() {
        let tape = Tape::new();
        let x = hadamard_columns(&tape, 1..3);
        let at_mean = Matrix::zeros(8, 2);
        assert!(loss_r1(x, &at_mean, 0.0).unwrap().item().abs() < 1e-15);
        let phi = tape.constant(m(2, 1, &[-1.0, 1.0]));
        let v = loss_r1(phi, &m(2, 1, &[2.0, 2.0]), 0.0).unwrap().item();
        assert!((v - 4.0).abs() < 1e-15);
    }

    #[test]
    fn r2_values() {
        let tape = Tape::new();
        // zero cross-covariance by construction
        let x = tape.constant(m(4, 1, &[1.0, 1.0, -1.0, -1.0]));
        let y = tape.constant(m(4, 1, &[1.0, -1.0, 1.0, -1.0]));
        assert_eq!(loss_r2(x, y, 0.0, CfsNorm::Frobenius).unwrap().item(), 0.0);
        // unit variances, correlation 0.6
        let s = (0.64f64).sqrt();
        let x = tape.constant(m(4, 1, &[1.0, 1.0, -1.0, -1.0]));
        let y = tape.constant(m(4, 1, &[0.6 + s, 0.6 - s, -0.6 + s, -0.6 - s]));
        let v = loss_r2(x, y, 0.0, CfsNorm::Frobenius).unwrap().item();
        assert!((v - 0.36).abs() < 1e-12, "{v}");
        let v = loss_r2(x, y, 0.0, CfsNorm::Spectral).unwrap().item();
        assert!((v - 0.36).abs() < 1e-12, "{v}");
    }

    #[test]
    fn ireg2_pooled_variance() {
        let tape = Tape::new();
        // N(0,1) and N(2,1) realized as ±1 around each mean
        let a = tape.constant(m(2, 1, &[-1.0, 1.0]));
        let b = tape.constant(m(2, 1, &[1.0, 3.0]));
        let dom = |phi| DomainFeatures {
            phi,
            psi: None,
            pred_from_x: phi,
            pred_from_y: None,
            targets: Matrix::zeros(2, 1),
            oracle: None,
        };
        let bundle = FeatureBundle {
            domains: vec![dom(a), dom(b)],
        };
        let v = loss_ireg2(&bundle, 0.0).unwrap().item();
        assert!((v - 0.5 * 2f64.ln()).abs() < 1e-15);
        let same = FeatureBundle {
            domains: vec![dom(a), dom(a)],
        };
        assert!(loss_ireg2(&same, 1e-4).unwrap().item().abs() < 1e-6);
    }

    #[test]
    fn losses_pass_gradcheck() {
        let mut rng = substream(21, 0);
        for _ in 0..3 {
            let inputs: Vec<Matrix> = (0..4).map(|_| rand_matrix(&mut rng, 16, 2)).collect();
            let oracle = rand_matrix(&mut rng, 16, 2);
            let r = gradcheck::check(&inputs, 1e-5, |_, v| {
                let dom = |phi, psi| DomainFeatures {
                    phi,
                    psi: Some(psi),
                    pred_from_x: phi,
                    pred_from_y: Some(psi),
                    targets: Matrix::zeros(16, 2),
                    oracle: None,
                };
                let b = FeatureBundle {
                    domains: vec![dom(v[0], v[1]), dom(v[2], v[3])],
                };
                loss_a1(&b, 1e-3)?
                    .add(loss_iaim1(&b, 1e-3)?)?
                    .add(loss_ireg2(&b, 1e-3)?)?
                    .add(loss_r1(v[0], &oracle, 1e-3)?)?
                    .add(loss_r2(v[0], v[1], 1e-3, CfsNorm::Frobenius)?)?
                    .add(loss_r2(v[2], v[3], 1e-3, CfsNorm::Spectral)?)
            })
            .unwrap();
            assert!(r.max_rel_err < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn losses_are_row_and_domain_permutation_invariant() {
        let mut rng = substream(22, 0);
        let xs: Vec<Matrix> = (0..4).map(|_| rand_matrix(&mut rng, 10, 3)).collect();
        let perm: Vec<usize> = (0..10).rev().collect();
        let eval = |mats: &[Matrix]| {
            let tape = Tape::new();
            let v: Vec<Var<'_>> = mats.iter().map(|m| tape.constant(m.clone())).collect();
            let dom = |phi, psi| DomainFeatures {
                phi,
                psi: Some(psi),
                pred_from_x: phi,
                pred_from_y: Some(psi),
                targets: Matrix::zeros(10, 3),
                oracle: None,
            };
            let b = FeatureBundle {
                domains: vec![dom(v[0], v[1]), dom(v[2], v[3])],
            };
            [
                loss_a1(&b, 1e-4).unwrap().item(),
                loss_iaim1(&b, 1e-4).unwrap().item(),
                loss_ireg2(&b, 1e-4).unwrap().item(),
                loss_r2(
                    Var::vcat(&[v[0], v[2]]).unwrap(),
                    Var::vcat(&[v[1], v[3]]).unwrap(),
                    1e-4,
                    CfsNorm::Frobenius,
                )
                .unwrap()
                .item(),
            ]
        };
        let base = eval(&xs);
        let rows: Vec<Matrix> = xs.iter().map(|m| m.select_rows(&perm)).collect();
        let swapped = vec![xs[2].clone(), xs[3].clone(), xs[0].clone(), xs[1].clone()];
        for other in [eval(&rows), eval(&swapped)] {
            for (a, b) in base.iter().zip(other) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn total_loss_short_circuits_and_sums() {
        let mut rng = substream(23, 0);
        let tape = Tape::new();
        let dom = |rng: &mut ChaCha8Rng| {
            let phi = tape.constant(rand_matrix(rng, 8, 2));
            let psi = tape.constant(rand_matrix(rng, 8, 2));
            DomainFeatures {
                phi,
                psi: Some(psi),
                pred_from_x: phi,
                pred_from_y: Some(psi),
                targets: rand_matrix(rng, 8, 2),
                oracle: Some(rand_matrix(rng, 8, 2)),
            }
        };
        let bundle = FeatureBundle {
            domains: vec![dom(&mut rng), dom(&mut rng)],
        };
        let flags = VariantFlags::default();
        let (erm, br) = total_loss(&bundle, &LossWeights::ERM, &flags, TaskKind::Regression, 1e-4).unwrap();
        assert_eq!(erm.item(), br.a2);
        assert_eq!((br.a1, br.r1, br.r2), (0.0, 0.0, 0.0));

        let (full, fb) = total_loss(&bundle, &LossWeights::TOY, &flags, TaskKind::Regression, 1e-4).unwrap();
        assert!((full.item() - fb.weighted_total(&LossWeights::TOY)).abs() <= 1e-12);
        assert_eq!(fb.a2, br.a2);
    }

    #[test]
    fn debug_checks_run_clean() {
        let mut rng = substream(24, 0);
        let tape = Tape::new();
        let phi = tape.constant(rand_matrix(&mut rng, 12, 3));
        let psi = tape.constant(rand_matrix(&mut rng, 12, 3));
        assert!(entropy_reduction(phi, psi, 1e-4).unwrap() >= -1e-8);
        let d = DomainFeatures {
            phi,
            psi: Some(psi),
            pred_from_x: phi,
            pred_from_y: Some(psi),
            targets: Matrix::zeros(12, 3),
            oracle: None,
        };
        let bundle = FeatureBundle {
            domains: vec![d.clone(), d],
        };
        let flags = VariantFlags {
            debug_checks: true,
            ..VariantFlags::default()
        };
        let weights = LossWeights {
            v_r1: 0.0,
            ..LossWeights::TOY
        };
        assert!(total_loss(&bundle, &weights, &flags, TaskKind::Regression, 1e-4).is_ok());
    }
}
