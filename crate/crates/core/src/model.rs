//! Small tanh MLPs, the frozen oracle, SGD and checkpoint files.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in x out`
    pub w: Matrix,
    /// `1 x out`
    pub b: Matrix,
}

impl Dense {
    fn init<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let scale = (1.0 / fan_in as f64).sqrt();
        let w = Matrix::from_fn(fan_in, fan_out, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        Self {
            w,
            b: Matrix::zeros(1, fan_out),
        }
    }
}

/// Stack of dense layers with tanh between them; the last layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`, giving `widths.len() - 1` layers.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| Dense::init(rng, w[0], w[1]))
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].w.cols()
    }

    pub fn params(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b])
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.matmul(&l.w)?.add_row(&l.b);
            if i < last {
                h = h.map(f64::tanh);
            }
        }
        Ok(h)
    }

    /// Registers every weight as a trainable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundMlp<'t> {
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.param(l.w.clone()), tape.param(l.b.clone())))
                .collect(),
        }
    }
}

/// An [`Mlp`] whose weights live on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp<'t> {
    pub layers: Vec<(Var<'t>, Var<'t>)>,
}

impl<'t> BoundMlp<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(w)?.add_row(b)?;
            if i < last {
                h = h.tanh();
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> impl Iterator<Item = Var<'t>> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

/// Trainable maps: `φ` on inputs, `ψ` on targets, and the shared predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub phi: Mlp,
    pub psi: Mlp,
    pub predictor: Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub target_dim: usize,
    pub hidden: usize,
    pub dz: usize,
    /// Dense layers in `φ` and `ψ`.
    pub layers: usize,
}

impl Architecture {
    fn encoder_widths(&self, input: usize) -> Result<Vec<usize>> {
        if self.layers == 0 {
            return Err(Error::InvalidArgument("layer count must be >= 1".into()));
        }
        let mut w = vec![input];
        w.extend(std::iter::repeat_n(self.hidden, self.layers - 1));
        w.push(self.dz);
        Ok(w)
    }

    pub fn encoder<R: Rng + ?Sized>(&self, rng: &mut R, input: usize) -> Result<Mlp> {
        Mlp::new(rng, &self.encoder_widths(input)?)
    }
}

impl ModelBundle {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, arch: &Architecture) -> Result<Self> {
        Ok(Self {
            phi: arch.encoder(rng, arch.input_dim)?,
            psi: arch.encoder(rng, arch.target_dim)?,
            predictor: Mlp::new(rng, &[arch.dz, arch.target_dim])?,
        })
    }

    /// `predictor(φ(x))`; `ψ` plays no part at inference.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.predictor.forward(&self.phi.forward(x)?)
    }

    pub fn params(&self) -> impl Iterator<Item = &Matrix> {
        self.phi
            .params()
            .chain(self.psi.params())
            .chain(self.predictor.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.phi
            .params_mut()
            .chain(self.psi.params_mut())
            .chain(self.predictor.params_mut())
    }

    pub fn param_hash(&self) -> u64 {
        hash_params(self.params())
    }
}

fn hash_params<'a>(params: impl Iterator<Item = &'a Matrix>) -> u64 {
    let mut h = DefaultHasher::new();
    for p in params {
        h.write_usize(p.rows());
        h.write_usize(p.cols());
        for v in p.as_slice() {
            h.write_u64(v.to_bits());
        }
    }
    h.finish()
}

/// Frozen feature extractor providing the reference features for `r1`.
/// Weights are private; nothing can update them after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenOracle {
    phi: Mlp,
    head: Mlp,
}

impl FrozenOracle {
    pub fn freeze(phi: Mlp, head: Mlp) -> Result<Self> {
        if phi.output_dim() != head.input_dim() {
            return Err(Error::Shape {
                op: "oracle",
                lhs: (phi.input_dim(), phi.output_dim()),
                rhs: (head.input_dim(), head.output_dim()),
            });
        }
        Ok(Self { phi, head })
    }

    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.phi.forward(x)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.head.forward(&self.phi.forward(x)?)
    }

    pub fn param_hash(&self) -> u64 {
        hash_params(self.phi.params().chain(self.head.params()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    /// Heavy-ball momentum with coefficient [`MOMENTUM`].
    Momentum,
}

pub const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    clip: Option<f64>,
    velocity: Vec<Matrix>,
}

impl Sgd {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
        }
        let momentum = match kind {
            OptimizerKind::Sgd => 0.0,
            OptimizerKind::Momentum => MOMENTUM,
        };
        Ok(Self {
            lr,
            momentum,
            clip: None,
            velocity: Vec::new(),
        })
    }

    /// Rescales the gradient whenever its global L2 norm exceeds `max_norm`.
    pub fn with_clip(mut self, max_norm: Option<f64>) -> Result<Self> {
        if let Some(c) = max_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidArgument(format!("clip norm must be > 0, got {c}")));
            }
        }
        self.clip = max_norm;
        Ok(self)
    }

    /// `params` and `grads` must keep the same order across calls.
    pub fn step<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut Matrix>,
        grads: &[Matrix],
    ) -> Result<()> {
        let params: Vec<&mut Matrix> = params.collect();
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
        }
        let norm = grads
            .iter()
            .map(|g| g.as_slice().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let gscale = match self.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            if p.shape() != g.shape() || v.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "sgd",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            let m = self.momentum;
            for ((pv, &gv), vv) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(v.as_mut_slice())
            {
                *vv = m * *vv + gscale * gv;
                *pv -= self.lr * *vv;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub names: Vec<String>,
    pub shapes: Vec<(usize, usize)>,
    pub seed: u64,
    pub step: usize,
    pub config: serde_json::Value,
}

fn param_names(model: &ModelBundle) -> Vec<String> {
    let mut names = Vec::new();
    for (net, mlp) in [("phi", &model.phi), ("psi", &model.psi), ("predictor", &model.predictor)] {
        for i in 0..mlp.layers.len() {
            names.push(format!("{net}.{i}.w"));
            names.push(format!("{net}.{i}.b"));
        }
    }
    names
}

/// Writes `<stem>.bin` (concatenated little-endian f64 parameters) and
/// `<stem>.json` (names, shapes, seed, config).
pub fn save_checkpoint(
    model: &ModelBundle,
    meta_config: serde_json::Value,
    seed: u64,
    step: usize,
    bin_path: &Path,
    json_path: &Path,
) -> Result<()> {
    let mut bytes = Vec::new();
    for p in model.params() {
        for v in p.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = CheckpointMeta {
        names: param_names(model),
        shapes: model.params().map(|p| p.shape()).collect(),
        seed,
        step,
        config: meta_config,
    };
    crate::io::write_atomic(bin_path, &bytes)?;
    crate::io::write_atomic(json_path, serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(())
}

/// Restores parameters into `template`, which fixes the architecture.
pub fn load_checkpoint(template: &ModelBundle, bin_path: &Path, json_path: &Path) -> Result<(ModelBundle, CheckpointMeta)> {
    let meta: CheckpointMeta = serde_json::from_slice(&std::fs::read(json_path)?)?;
    let bytes = std::fs::read(bin_path)?;
    let mut model = template.clone();
    let expected: Vec<(usize, usize)> = model.params().map(|p| p.shape()).collect();
    if expected != meta.shapes {
        return Err(Error::InvalidArgument("checkpoint shapes do not match the model".into()));
    }
    let total: usize = expected.iter().map(|(r, c)| r * c).sum();
    if bytes.len() != total * 8 {
        return Err(Error::InvalidArgument(format!(
            "checkpoint holds {} bytes, expected {}",
            bytes.len(),
            total * 8
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for p in model.params_mut() {
        for v in p.as_mut_slice() {
            *v = values.next().expect("length checked");
        }
    }
    Ok((model, meta))
}
