//! Empirical multivariate Gaussian statistics of feature batches.
//!
//! All quantities are recorded on an autodiff tape so they can sit inside a
//! loss. Covariances use population (`1/B`) normalization followed by a
//! diagonal ridge, and every matrix headed for a Cholesky factorization is
//! symmetrized first.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};

pub const DEFAULT_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct GaussianStats<'t> {
    /// `1 x d` row.
    pub mean: Var<'t>,
    /// `d x d`, exactly symmetric.
    pub cov: Var<'t>,
    pub count: usize,
    pub ridge: f64,
}

impl<'t> GaussianStats<'t> {
    /// Mean and ridge-regularized population covariance of `samples` (`B x d`).
    pub fn estimate(samples: Var<'t>, ridge: f64) -> Result<Self> {
        let (b, d) = samples.shape();
        if b < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: b });
        }
        if !(ridge >= 0.0) {
            return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
        }
        let mean = samples.col_mean();
        let centered = samples.sub_row(mean)?;
        let scatter = centered.t().matmul(centered)?.scale(1.0 / b as f64);
        let cov = scatter
            .symmetrize()?
            .add_const(&Matrix::identity(d).scale(ridge))?;
        Ok(Self {
            mean,
            cov,
            count: b,
            ridge,
        })
    }

    /// Wraps known moments (no sample count semantics beyond `count`).
    pub fn from_moments(tape: &'t Tape, mean: Matrix, cov: Matrix) -> Result<Self> {
        if mean.rows() != 1 || !cov.is_square() || cov.rows() != mean.cols() {
            return Err(Error::Shape {
                op: "from_moments",
                lhs: mean.shape(),
                rhs: cov.shape(),
            });
        }
        Ok(Self {
            mean: tape.constant(mean),
            cov: tape.constant(cov.symmetrize()),
            count: usize::MAX,
            ridge: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.cols()
    }

    /// `ln |Σ|`.
    pub fn logdet(&self) -> Result<Var<'t>> {
        self.cov.logdet()
    }

    /// Row-wise mean of squared Mahalanobis distances `‖x - μ‖²_{Σ⁻¹}` for
    /// the rows of `points`.
    pub fn mean_mahalanobis(&self, points: Var<'t>) -> Result<Var<'t>> {
        let diff = points.sub_row(self.mean)?;
        let solved = self.cov.solve_spd(diff.t())?;
        Ok(diff.t().mul(solved)?.sum().scale(1.0 / points.rows() as f64))
    }
}

/// Closed-form differential entropy `(D/2)(1 + ln 2π) + ½ ln|Σ|`.
pub fn gaussian_entropy<'t>(g: &GaussianStats<'t>) -> Result<Var<'t>> {
    let d = g.dim() as f64;
    Ok(g.logdet()?.scale(0.5).add_scalar(0.5 * d * (1.0 + (2.0 * PI).ln())))
}

/// `KL(p ‖ q)` between two Gaussians of equal dimension.
pub fn gaussian_kl<'t>(p: &GaussianStats<'t>, q: &GaussianStats<'t>) -> Result<Var<'t>> {
    if p.dim() != q.dim() {
        return Err(Error::Shape {
            op: "gaussian_kl",
            lhs: (p.dim(), p.dim()),
            rhs: (q.dim(), q.dim()),
        });
    }
    let d = p.dim() as f64;
    let trace = q.cov.solve_spd(p.cov)?.trace()?;
    let dmu = q.mean.sub(p.mean)?;
    let maha = dmu.matmul(q.cov.solve_spd(dmu.t())?)?;
    let logratio = q.logdet()?.sub(p.logdet()?)?;
    Ok(trace.add(maha)?.add(logratio)?.add_scalar(-d).scale(0.5))
}

/// Statistics of the concatenation `[φ(X) | ψ(Y)]`, with block accessors
/// for the `X`/`Y` partition.
#[derive(Debug, Clone, Copy)]
pub struct JointStats<'t> {
    pub stats: GaussianStats<'t>,
    pub dx: usize,
    pub dy: usize,
}

impl<'t> JointStats<'t> {
    pub fn estimate(x: Var<'t>, y: Var<'t>, ridge: f64) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::Shape {
                op: "joint_stats",
                lhs: x.shape(),
                rhs: y.shape(),
            });
        }
        let stats = GaussianStats::estimate(x.hcat(y)?, ridge)?;
        Ok(Self {
            stats,
            dx: x.cols(),
            dy: y.cols(),
        })
    }

    pub fn from_moments(tape: &'t Tape, mean: Matrix, cov: Matrix, dx: usize) -> Result<Self> {
        let stats = GaussianStats::from_moments(tape, mean, cov)?;
        let dim = stats.dim();
        if dx > dim {
            return Err(Error::InvalidArgument(format!("dx {dx} exceeds joint dim {dim}")));
        }
        Ok(Self {
            stats,
            dx,
            dy: dim - dx,
        })
    }

    pub fn xx(&self) -> Result<Var<'t>> {
        self.stats.cov.submatrix(0..self.dx, 0..self.dx)
    }

    pub fn xy(&self) -> Result<Var<'t>> {
        let n = self.dx + self.dy;
        self.stats.cov.submatrix(0..self.dx, self.dx..n)
    }

    /// Exactly `xy()ᵀ`.
    pub fn yx(&self) -> Result<Var<'t>> {
        Ok(self.xy()?.t())
    }

    pub fn yy(&self) -> Result<Var<'t>> {
        let n = self.dx + self.dy;
        self.stats.cov.submatrix(self.dx..n, self.dx..n)
    }

    /// Reassembles the four blocks into the full covariance.
    pub fn reassemble(&self) -> Result<Var<'t>> {
        let top = self.xx()?.hcat(self.xy()?)?;
        let bottom = self.yx()?.hcat(self.yy()?)?;
        Var::vcat(&[top, bottom])
    }
}

/// Conditional feature shift `Σ_XY Σ_YY⁻¹ Σ_YX`.
pub fn cfs_matrix<'t>(j: &JointStats<'t>) -> Result<Var<'t>> {
    let solved = j.yy()?.solve_spd(j.yx()?)?;
    j.xy()?.matmul(solved)?.symmetrize()
}

/// Schur complement `Σ_XX|Y = Σ_XX − Σ_XY Σ_YY⁻¹ Σ_YX`.
pub fn conditional_cov<'t>(j: &JointStats<'t>) -> Result<Var<'t>> {
    j.xx()?.sub(cfs_matrix(j)?)
}

/// `μ̄ = mean_n μ_n` and `Σ̄ = mean_n Σ_n` over per-domain statistics.
///
/// The alignment losses consume only `μ̄`; `Σ̄` is exposed for inspection.
pub fn pooled_moments<'t>(stats: &[GaussianStats<'t>]) -> Result<(Var<'t>, Var<'t>)> {
    let first = stats
        .first()
        .ok_or_else(|| Error::InvalidArgument("no statistics to pool".into()))?;
    let inv = 1.0 / stats.len() as f64;
    let mut mean = first.mean;
    let mut cov = first.cov;
    for s in &stats[1..] {
        mean = mean.add(s.mean)?;
        cov = cov.add(s.cov)?;
    }
    Ok((mean.scale(inv), cov.scale(inv)))
}

/// Monte-Carlo estimate of `-E[ln p(x)]` for `x ~ N(0, cov)`.
///
/// Entropy does not depend on the mean, so samples are drawn centered.
pub fn monte_carlo_entropy<R: Rng + ?Sized>(cov: &Matrix, draws: usize, rng: &mut R) -> Result<f64> {
    let d = cov.rows();
    let chol = Cholesky::factor(&cov.symmetrize())?;
    let l = chol.factor_matrix();
    let log_norm = 0.5 * (d as f64 * (2.0 * PI).ln() + chol.logdet());
    let mut z = vec![0.0; d];
    let mut x = Matrix::zeros(d, 1);
    let mut total = 0.0;
    for _ in 0..draws {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        for i in 0..d {
            x[(i, 0)] = (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>();
        }
        let solved = chol.solve(&x)?;
        let quad: f64 = (0..d).map(|i| x[(i, 0)] * solved[(i, 0)]).sum();
        total += log_norm + 0.5 * quad;
    }
    Ok(total / draws as f64)
}
