//! Leave-one-domain-out training and the synthetic benchmark matrix.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::gaussian::DEFAULT_RIDGE;
use crate::linalg::Matrix;
use crate::losses::{total_loss, Breakdown, DomainFeatures, FeatureBundle, LossWeights, TaskKind, VariantFlags};
use crate::model::{Architecture, FrozenOracle, Mlp, ModelBundle, OptimizerKind, Sgd};
use crate::par::{self, Execution};
use crate::rng::{stream_id, substream, Purpose};
use crate::synth::{generate, leave_one_out_split, DomainBatch, Split, SynthSpec, DOMAINS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr: 1e-2,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// ERM steps on the pooled training domains before freezing; 0 keeps
    /// the random initialization.
    pub pretrain_steps: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { pretrain_steps: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub dz: usize,
    pub layers: usize,
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    /// Rows drawn from each training domain per step.
    pub batch_size: usize,
    pub eval_interval: usize,
    pub seed: u64,
    pub ridge: f64,
    pub weights: LossWeights,
    pub variant: VariantFlags,
    pub oracle: OracleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            dz: 4,
            layers: 3,
            optimizer: OptimizerConfig::default(),
            steps: 2000,
            batch_size: 64,
            eval_interval: 100,
            seed: 0,
            ridge: DEFAULT_RIDGE,
            weights: LossWeights::TOY,
            variant: VariantFlags::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return bad("learning rate must be > 0");
        }
        if self.hidden == 0 || self.dz == 0 || self.layers == 0 {
            return bad("hidden, dz and layers must be >= 1");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be >= 1");
        }
        let joint = if self.variant.use_psi { 2 * self.dz } else { self.dz };
        if self.batch_size < 2 || self.batch_size <= joint {
            return bad("batch_size must exceed the joint feature dimension");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad("ridge must be >= 0");
        }
        self.weights.validate()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: 2,
            target_dim: 2,
            hidden: self.hidden,
            dz: self.dz,
            layers: self.layers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub breakdown: Breakdown,
    pub total: f64,
}

pub const HISTORY_HEADER: [&str; 8] = ["step", "a1", "a2", "r1", "r2", "total", "iaim1", "ireg2"];

pub fn write_history_csv<W: std::io::Write>(rows: &[HistoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTORY_HEADER)?;
    for r in rows {
        let b = &r.breakdown;
        w.write_record([
            r.step.to_string(),
            b.a1.to_string(),
            b.a2.to_string(),
            b.r1.to_string(),
            b.r2.to_string(),
            r.total.to_string(),
            b.iaim1.to_string(),
            b.ireg2.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation evaluation.
    pub model: ModelBundle,
    pub history: Vec<HistoryRow>,
    /// `(step, validation mse)` at every evaluation.
    pub evals: Vec<(usize, f64)>,
    pub val_mse: f64,
    pub best_step: usize,
}

/// Mean squared error of `predictor(φ(x))` against `y`.
pub fn evaluate(model: &ModelBundle, batch: &DomainBatch) -> Result<f64> {
    let pred = model.predict(&batch.x)?;
    if pred.shape() != batch.y.shape() {
        return Err(Error::Shape {
            op: "evaluate",
            lhs: pred.shape(),
            rhs: batch.y.shape(),
        });
    }
    let se: f64 = pred
        .as_slice()
        .iter()
        .zip(batch.y.as_slice())
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok(se / pred.len() as f64)
}

fn evaluate_pooled(model: &ModelBundle, batches: &[DomainBatch]) -> Result<f64> {
    let mut se = 0.0;
    let mut n = 0usize;
    for b in batches {
        let len = b.y.len();
        se += evaluate(model, b)? * len as f64;
        n += len;
    }
    Ok(se / n as f64)
}

fn draw_batches<R: Rng + ?Sized>(rng: &mut R, domains: &[DomainBatch], size: usize) -> Vec<(Matrix, Matrix)> {
    domains
        .iter()
        .map(|d| {
            let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..d.len())).collect();
            (d.x.select_rows(&idx), d.y.select_rows(&idx))
        })
        .collect()
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NotPositiveDefinite { .. } | Error::Domain { .. } => Error::Divergence {
            step,
            reason: e.to_string(),
        },
        other => other,
    }
}

/// ERM on the pooled training domains, then frozen. Uses its own random
/// streams so it does not perturb the main run.
pub fn build_oracle(train_domains: &[DomainBatch], config: &TrainConfig) -> Result<FrozenOracle> {
    if train_domains.is_empty() {
        return Err(Error::InvalidArgument("oracle needs >= 1 training domain".into()));
    }
    config.validate()?;
    let arch = config.architecture();
    let mut init = substream(config.seed, stream_id(Purpose::Oracle, 0, 0, 0));
    let mut phi = arch.encoder(&mut init, arch.input_dim)?;
    let mut head = Mlp::new(&mut init, &[arch.dz, arch.target_dim])?;
    let mut batches = substream(config.seed, stream_id(Purpose::Oracle, 1, 0, 0));
    let mut opt = Sgd::new(config.optimizer.kind, config.optimizer.lr)?.with_clip(config.optimizer.clip_norm)?;
    for step in 0..config.oracle.pretrain_steps {
        let drawn = draw_batches(&mut batches, train_domains, config.batch_size);
        let xs: Vec<&Matrix> = drawn.iter().map(|(x, _)| x).collect();
        let ys: Vec<&Matrix> = drawn.iter().map(|(_, y)| y).collect();
        let (x, y) = (Matrix::vcat(&xs)?, Matrix::vcat(&ys)?);
        let tape = Tape::new();
        let bphi = phi.bind(&tape);
        let bhead = head.bind(&tape);
        let pred = bhead.forward(bphi.forward(tape.constant(x))?)?;
        let loss = pred.add_const(&y.scale(-1.0))?.square().mean();
        if !loss.item().is_finite() {
            return Err(Error::Divergence {
                step,
                reason: "non-finite oracle loss".into(),
            });
        }
        loss.backward()?;
        let grads: Vec<Matrix> = bphi.params().chain(bhead.params()).map(|v| v.grad()).collect();
        opt.step(phi.params_mut().chain(head.params_mut()), &grads)?;
    }
    FrozenOracle::freeze(phi, head)
}

fn needs_oracle(config: &TrainConfig) -> bool {
    config.weights.v_r1 > 0.0
}

/// Trains on `split.train`, selecting the checkpoint with the lowest pooled
/// validation MSE. Builds the oracle itself when the config needs one.
pub fn train(split: &Split, config: &TrainConfig) -> Result<TrainOutcome> {
    let oracle = if needs_oracle(config) {
        Some(build_oracle(&split.train, config)?)
    } else {
        None
    };
    train_with_oracle(split, config, oracle.as_ref())
}

pub fn train_with_oracle(
    split: &Split,
    config: &TrainConfig,
    oracle: Option<&FrozenOracle>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::InvalidArgument("split has no training domains".into()));
    }
    if needs_oracle(config) && oracle.is_none() {
        return Err(Error::InvalidArgument("v_r1 > 0 requires an oracle".into()));
    }
    let tag = split.test_domain as u64;
    let mut init = substream(config.seed, stream_id(Purpose::Init, tag, 0, 0));
    let mut model = ModelBundle::new(&mut init, &config.architecture())?;
    let mut batches = substream(config.seed, stream_id(Purpose::Batches, tag, 0, 0));
    let mut opt = Sgd::new(config.optimizer.kind, config.optimizer.lr)?.with_clip(config.optimizer.clip_norm)?;

    let use_psi = config.variant.use_psi;
    let mut history = Vec::with_capacity(config.steps);
    let mut evals = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.clone());

    for step in 0..config.steps {
        let drawn = draw_batches(&mut batches, &split.train, config.batch_size);
        let tape = Tape::new();
        let phi = model.phi.bind(&tape);
        let psi = model.psi.bind(&tape);
        let pred = model.predictor.bind(&tape);
        let features = drawn
            .iter()
            .map(|(x, y)| {
                let phi_x = phi.forward(tape.constant(x.clone()))?;
                let (psi_y, pred_y) = if use_psi {
                    let p = psi.forward(tape.constant(y.clone()))?;
                    (Some(p), Some(pred.forward(p)?))
                } else {
                    (None, None)
                };
                Ok(DomainFeatures {
                    phi: phi_x,
                    psi: psi_y,
                    pred_from_x: pred.forward(phi_x)?,
                    pred_from_y: pred_y,
                    targets: y.clone(),
                    oracle: oracle.map(|o| o.features(x)).transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let bundle = FeatureBundle { domains: features };
        let (loss, breakdown) = total_loss(
            &bundle,
            &config.weights,
            &config.variant,
            TaskKind::Regression,
            config.ridge,
        )
        .map_err(|e| diverged(step, e))?;
        let total = loss.item();
        if !total.is_finite() {
            return Err(Error::Divergence {
                step,
                reason: format!("loss is {total}"),
            });
        }
        loss.backward()?;
        let vars: Vec<Var<'_>> = phi.params().chain(psi.params()).chain(pred.params()).collect();
        let grads: Vec<Matrix> = vars.iter().map(|v| v.grad()).collect();
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::Divergence {
                step,
                reason: "non-finite gradient".into(),
            });
        }
        drop(bundle);
        opt.step(model.params_mut(), &grads)?;
        history.push(HistoryRow {
            step,
            breakdown,
            total,
        });

        let done = step + 1;
        if done % config.eval_interval == 0 || done == config.steps {
            let v = evaluate_pooled(&model, &split.val)?;
            evals.push((done, v));
            if v < best.0 {
                best = (v, done, model.clone());
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Divergence {
            step: config.steps,
            reason: "validation error never finite".into(),
        });
    }
    Ok(TrainOutcome {
        model: best.2,
        history,
        evals,
        val_mse: best.0,
        best_step: best.1,
    })
}

/// The three objectives compared on the synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyVariant {
    Erm,
    /// Alignment of `φ(X)` statistics only.
    AlignPhi,
    /// Joint `(φ(X), ψ(Y))` alignment with the `ψ` prediction stream.
    AlignPhiPsi,
}

impl ToyVariant {
    pub const ALL: [ToyVariant; 3] = [ToyVariant::Erm, ToyVariant::AlignPhi, ToyVariant::AlignPhiPsi];

    pub fn label(self) -> &'static str {
        match self {
            ToyVariant::Erm => "erm",
            ToyVariant::AlignPhi => "a1_phi",
            ToyVariant::AlignPhiPsi => "a1_phi_psi",
        }
    }

    /// Applies the variant's weights and flags on top of `base`.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut c = *base;
        let v_a1 = base.weights.v_a1;
        c.weights = LossWeights::ERM;
        c.weights.v_a2 = base.weights.v_a2;
        match self {
            ToyVariant::Erm => {
                c.variant.use_psi = false;
            }
            ToyVariant::AlignPhi => {
                c.variant.use_psi = false;
                c.variant.iaim1 = true;
                c.weights.v_a1 = v_a1;
            }
            ToyVariant::AlignPhiPsi => {
                c.variant.use_psi = true;
                c.variant.iaim1 = false;
                c.weights.v_a1 = v_a1;
            }
        }
        c
    }
}

/// Settings in table order: (affine, no shift), (affine, shift),
/// (polynomial, no shift), (polynomial, shift).
pub const TOY_DATASETS: [u8; 4] = [1, 2, 3, 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRun {
    pub variant: ToyVariant,
    pub dataset: u8,
    pub seed: u64,
    pub test_domain: u8,
    pub test_mse: f64,
    pub val_mse: f64,
    pub best_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyMatrix {
    pub seeds: Vec<u64>,
    pub runs: Vec<ToyRun>,
    /// `medians[variant][dataset - 1]`
    pub medians: [[f64; 4]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyVerdict {
    pub with_psi_best_count: usize,
    /// Whether `a1_phi_psi` has the row-minimum median, per dataset 1..4.
    pub per_setting_pass: [bool; 4],
    pub with_psi_beats_erm_dcds_affine: bool,
    pub passed: bool,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl ToyMatrix {
    pub fn verdict(&self) -> ToyVerdict {
        let m = &self.medians;
        let per_setting_pass: [bool; 4] =
            std::array::from_fn(|d| m[2][d] <= m[0][d] && m[2][d] <= m[1][d]);
        let with_psi_best_count = per_setting_pass.iter().filter(|&&p| p).count();
        let beats = m[2][1] < m[0][1];
        ToyVerdict {
            with_psi_best_count,
            per_setting_pass,
            with_psi_beats_erm_dcds_affine: beats,
            passed: with_psi_best_count >= 3 && beats,
        }
    }

    /// Two rows (no shift / shift), six columns: affine then polynomial,
    /// each with the three variants.
    pub fn write_table_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["setting".to_string()];
        for family in ["affine", "poly"] {
            for v in ToyVariant::ALL {
                header.push(format!("{family}_{}", v.label()));
            }
        }
        w.write_record(&header)?;
        for (label, shifted) in [("no_dcds", false), ("with_dcds", true)] {
            let mut row = vec![label.to_string()];
            for poly in [false, true] {
                let dataset = match (poly, shifted) {
                    (false, false) => 1,
                    (false, true) => 2,
                    (true, false) => 3,
                    (true, true) => 4,
                };
                for vi in 0..3 {
                    row.push(format!("{:.6}", self.medians[vi][dataset - 1]));
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_runs_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["variant", "dataset", "seed", "test_domain", "test_mse", "val_mse", "best_step"])?;
        for r in &self.runs {
            w.write_record([
                r.variant.label().to_string(),
                r.dataset.to_string(),
                r.seed.to_string(),
                r.test_domain.to_string(),
                r.test_mse.to_string(),
                r.val_mse.to_string(),
                r.best_step.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Default base configuration for the benchmark matrix.
pub fn toy_base_config() -> TrainConfig {
    TrainConfig::default()
}

/// Every (variant, dataset, seed, held-out domain) run; medians over seeds
/// and splits. Variants share data, initialization and batch order.
pub fn run_toy_matrix(seeds: &[u64], base: &TrainConfig, data: &SynthSpec, exec: Execution) -> Result<ToyMatrix> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let mut datasets = Vec::new();
    for &dataset in &TOY_DATASETS {
        for &seed in seeds {
            datasets.push(((dataset, seed), generate(&SynthSpec { dataset_id: dataset, seed, ..*data })?));
        }
    }
    let mut jobs = Vec::new();
    for (di, ((dataset, seed), _)) in datasets.iter().enumerate() {
        for &test_domain in &DOMAINS {
            for variant in ToyVariant::ALL {
                jobs.push((di, *dataset, *seed, test_domain, variant));
            }
        }
    }
    let results = par::map(&jobs, exec, |&(di, dataset, seed, test_domain, variant)| -> Result<ToyRun> {
        let split = leave_one_out_split(&datasets[di].1, test_domain)?;
        let config = TrainConfig {
            seed,
            ..variant.configure(base)
        };
        let out = train(&split, &config)?;
        Ok(ToyRun {
            variant,
            dataset,
            seed,
            test_domain,
            test_mse: evaluate(&out.model, &split.test)?,
            val_mse: out.val_mse,
            best_step: out.best_step,
        })
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut medians = [[0.0; 4]; 3];
    for (vi, v) in ToyVariant::ALL.iter().enumerate() {
        for (d, &dataset) in TOY_DATASETS.iter().enumerate() {
            let mut vals: Vec<f64> = runs
                .iter()
                .filter(|r| r.variant == *v && r.dataset == dataset)
                .map(|r| r.test_mse)
                .collect();
            medians[vi][d] = median(&mut vals);
        }
    }
    Ok(ToyMatrix {
        seeds: seeds.to_vec(),
        runs,
        medians,
    })
}
