//! Synthetic three-domain regression data.
//!
//! Every sample draws a latent `hx ~ N(0, 1)` with `hy = hx`. Column 1 of
//! `X` and `Y` is the latent plus an optional domain shift; column 2 is a
//! domain-specific transformation of column 1 (affine, or squared/cubed),
//! or pure noise. Datasets 1 and 3 have no shift on column 1, datasets 2
//! and 4 do (domain-conditioned distribution shift, "DCDS").
//!
//! `N(m, s)` below always means mean `m` and standard deviation `s`.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{stream_id, substream, Purpose};

pub const DOMAINS: [u8; 3] = [1, 2, 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gauss {
    pub mean: f64,
    pub sd: f64,
}

const fn n(mean: f64, sd: f64) -> Gauss {
    Gauss { mean, sd }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Offset {
    Const(f64),
    Noise(Gauss),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Second {
    /// `scale * first^power + offset`
    Transform { scale: f64, power: i32, offset: Offset },
    Noise(Gauss),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Side {
    shift: Option<Gauss>,
    second: Second,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DomainRule {
    x: Side,
    y: Side,
}

const fn tf(scale: f64, power: i32, offset: Offset) -> Second {
    Second::Transform {
        scale,
        power,
        offset,
    }
}

const IDENTITY_NOISY: DomainRule = DomainRule {
    x: Side {
        shift: None,
        second: tf(1.0, 1, Offset::Noise(n(0.0, 0.3))),
    },
    y: Side {
        shift: None,
        second: tf(1.0, 1, Offset::Noise(n(0.0, 0.3))),
    },
};

const SHIFT_X2: Gauss = n(-0.1, 0.1);
const SHIFT_Y2: Gauss = n(0.2, 0.1);
const SHIFT_X3: Gauss = n(0.4, 0.2);
const SHIFT_Y3: Gauss = n(-0.4, 0.2);

/// Rules indexed `[dataset - 1][domain - 1]`.
const RULES: [[DomainRule; 3]; 4] = [
    // 1: no shift, affine
    [
        IDENTITY_NOISY,
        DomainRule {
            x: Side { shift: None, second: tf(4.0, 1, Offset::Noise(n(0.5, 0.3))) },
            y: Side { shift: None, second: tf(4.0, 1, Offset::Const(0.3)) },
        },
        DomainRule {
            x: Side { shift: None, second: tf(2.0, 1, Offset::Noise(n(-0.3, 0.2))) },
            y: Side { shift: None, second: tf(0.5, 1, Offset::Const(-0.2)) },
        },
    ],
    // 2: shift, affine
    [
        IDENTITY_NOISY,
        DomainRule {
            x: Side { shift: Some(SHIFT_X2), second: tf(4.0, 1, Offset::Noise(n(0.3, 0.3))) },
            y: Side { shift: Some(SHIFT_Y2), second: tf(8.0, 1, Offset::Const(-0.3)) },
        },
        DomainRule {
            x: Side { shift: Some(SHIFT_X3), second: tf(-1.0, 1, Offset::Noise(n(-0.3, 0.2))) },
            y: Side { shift: Some(SHIFT_Y3), second: Second::Noise(n(0.0, 0.2)) },
        },
    ],
    // 3: no shift, squared/cubed
    [
        IDENTITY_NOISY,
        DomainRule {
            x: Side { shift: None, second: tf(4.0, 3, Offset::Noise(n(0.5, 0.3))) },
            y: Side { shift: None, second: tf(4.0, 2, Offset::Const(0.3)) },
        },
        DomainRule {
            x: Side { shift: None, second: tf(2.0, 2, Offset::Noise(n(-0.3, 0.2))) },
            y: Side { shift: None, second: tf(0.5, 3, Offset::Const(-0.2)) },
        },
    ],
    // 4: shift, squared/cubed
    [
        IDENTITY_NOISY,
        DomainRule {
            x: Side { shift: Some(SHIFT_X2), second: tf(4.0, 3, Offset::Noise(n(0.5, 0.3))) },
            y: Side { shift: Some(SHIFT_Y2), second: tf(4.0, 2, Offset::Const(0.3)) },
        },
        DomainRule {
            x: Side { shift: Some(SHIFT_X3), second: tf(2.0, 2, Offset::Noise(n(-0.3, 0.2))) },
            y: Side { shift: Some(SHIFT_Y3), second: tf(0.5, 3, Offset::Const(-0.2)) },
        },
    ],
];

/// How noise terms are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Sample,
    /// Every noise term takes its mean; turns table rows into exact formulas.
    Suppress,
}

pub fn validate_dataset(dataset: u8) -> Result<()> {
    if !(1..=4).contains(&dataset) {
        return Err(Error::InvalidArgument(format!("dataset must be 1..=4, got {dataset}")));
    }
    Ok(())
}

fn validate_domain(domain: u8) -> Result<()> {
    if !DOMAINS.contains(&domain) {
        return Err(Error::InvalidArgument(format!("domain must be 1..=3, got {domain}")));
    }
    Ok(())
}

/// Whether column-1 features shift across domains.
pub fn has_dcds(dataset: u8) -> bool {
    matches!(dataset, 2 | 4)
}

/// Whether the column-2 transformations are polynomial (squared/cubed).
pub fn is_polynomial(dataset: u8) -> bool {
    matches!(dataset, 3 | 4)
}

fn side_values(side: &Side, latent: f64, noise: &mut dyn FnMut(Gauss) -> f64) -> (f64, f64) {
    let first = latent + side.shift.map_or(0.0, &mut *noise);
    let second = match side.second {
        Second::Transform {
            scale,
            power,
            offset,
        } => {
            let off = match offset {
                Offset::Const(c) => c,
                Offset::Noise(g) => noise(g),
            };
            scale * first.powi(power) + off
        }
        Second::Noise(g) => noise(g),
    };
    (first, second)
}

/// One sample `[x1, x2, y1, y2]` for a given latent. Noise is requested in
/// the fixed order x-shift, x2, y-shift, y2 (absent terms are skipped).
pub fn sample_row(
    dataset: u8,
    domain: u8,
    latent: f64,
    noise: &mut dyn FnMut(Gauss) -> f64,
) -> Result<[f64; 4]> {
    validate_dataset(dataset)?;
    validate_domain(domain)?;
    let rule = &RULES[dataset as usize - 1][domain as usize - 1];
    let (x1, x2) = side_values(&rule.x, latent, noise);
    let (y1, y2) = side_values(&rule.y, latent, noise);
    Ok([x1, x2, y1, y2])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub dataset_id: u8,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
    pub noise: NoiseMode,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dataset_id: 1,
            n_train: 10_000,
            n_val: 100,
            n_test: 100,
            seed: 0,
            noise: NoiseMode::Sample,
        }
    }
}

impl SynthSpec {
    pub fn new(dataset_id: u8, seed: u64) -> Self {
        Self {
            dataset_id,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_dataset(self.dataset_id)?;
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::InvalidArgument("sample counts must be >= 1".into()));
        }
        if self.n_train.max(self.n_val).max(self.n_test) >= 1 << 24 {
            return Err(Error::InvalidArgument("sample counts must be < 2^24".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainBatch {
    pub domain_id: u8,
    /// `B x 2`: columns `x1, x2`.
    pub x: Matrix,
    /// `B x 2`: columns `y1, y2`.
    pub y: Matrix,
    /// Globally unique sample ids within one generated dataset.
    pub row_ids: Vec<u64>,
}

impl DomainBatch {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainData {
    pub train: DomainBatch,
    pub val: DomainBatch,
    pub test: DomainBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub spec: SynthSpec,
    /// Domains 1, 2, 3 in order.
    pub domains: Vec<DomainData>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Partition {
    Train = 0,
    Val = 1,
    Test = 2,
}

fn draw_batch(spec: &SynthSpec, domain: u8, part: Partition, count: usize) -> Result<DomainBatch> {
    let mut rng = substream(
        spec.seed,
        stream_id(Purpose::Data, spec.dataset_id as u64, domain as u64, part as u64),
    );
    let mut x = Matrix::zeros(count, 2);
    let mut y = Matrix::zeros(count, 2);
    let base = ((domain as u64) << 40) | ((part as u64) << 32);
    for i in 0..count {
        let latent: f64 = rng.sample(StandardNormal);
        let mut noise = |g: Gauss| match spec.noise {
            NoiseMode::Sample => g.mean + g.sd * rng.sample::<f64, _>(StandardNormal),
            NoiseMode::Suppress => g.mean,
        };
        let [x1, x2, y1, y2] = sample_row(spec.dataset_id, domain, latent, &mut noise)?;
        x[(i, 0)] = x1;
        x[(i, 1)] = x2;
        y[(i, 0)] = y1;
        y[(i, 1)] = y2;
    }
    Ok(DomainBatch {
        domain_id: domain,
        x,
        y,
        row_ids: (0..count as u64).map(|i| base | i).collect(),
    })
}

/// Draws train/val/test partitions for all three domains. Each
/// (dataset, domain, partition) triple has its own random substream.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let domains = DOMAINS
        .iter()
        .map(|&d| {
            Ok(DomainData {
                train: draw_batch(spec, d, Partition::Train, spec.n_train)?,
                val: draw_batch(spec, d, Partition::Val, spec.n_val)?,
                test: draw_batch(spec, d, Partition::Test, spec.n_test)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthData {
        spec: *spec,
        domains,
    })
}

/// Leave-one-domain-out view: two seen domains for training and validation,
/// the held-out domain's test partition for testing.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub test_domain: u8,
    pub train: Vec<DomainBatch>,
    pub val: Vec<DomainBatch>,
    pub test: DomainBatch,
}

impl Split {
    pub fn train_domains(&self) -> Vec<u8> {
        self.train.iter().map(|b| b.domain_id).collect()
    }
}

pub fn leave_one_out_split(data: &SynthData, test_domain: u8) -> Result<Split> {
    validate_domain(test_domain)?;
    let seen: Vec<&DomainData> = data
        .domains
        .iter()
        .filter(|d| d.train.domain_id != test_domain)
        .collect();
    let held = data
        .domains
        .iter()
        .find(|d| d.test.domain_id == test_domain)
        .ok_or_else(|| Error::InvalidArgument(format!("domain {test_domain} not generated")))?;
    Ok(Split {
        test_domain,
        train: seen.iter().map(|d| d.train.clone()).collect(),
        val: seen.iter().map(|d| d.val.clone()).collect(),
        test: held.test.clone(),
    })
}

/// CSV with header `domain,x1,x2,y1,y2`; per domain the train, validation
/// and test rows follow each other.
pub fn write_csv<W: Write>(data: &SynthData, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["domain", "x1", "x2", "y1", "y2"])?;
    for d in &data.domains {
        for b in [&d.train, &d.val, &d.test] {
            for r in 0..b.len() {
                w.write_record([
                    b.domain_id.to_string(),
                    b.x[(r, 0)].to_string(),
                    b.x[(r, 1)].to_string(),
                    b.y[(r, 0)].to_string(),
                    b.y[(r, 1)].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn suppressed(dataset: u8, domain: u8, latent: f64) -> [f64; 4] {
        let mut noise = |g: Gauss| g.mean;
        sample_row(dataset, domain, latent, &mut noise).unwrap()
    }

    #[test]
    fn data1_domain2_row() {
        let [x1, x2, y1, y2] = suppressed(1, 2, 0.5);
        assert_eq!((y1, y2), (0.5, 4.0 * 0.5 + 0.3));
        assert_eq!((x1, x2), (0.5, 2.0 + 0.5));
    }

    #[test]
    fn data3_domain2_cubic() {
        let [_, x2, _, y2] = suppressed(3, 2, 1.0);
        assert_eq!(x2, 4.5);
        assert_eq!(y2, 4.0 + 0.3);
    }

    #[test]
    fn shifted_domains_apply_shift_before_transform() {
        // data 2 domain 3: x1 = hx + 0.4, x2 = -x1 - 0.3, y1 = hy - 0.4, y2 = 0
        let [x1, x2, y1, y2] = suppressed(2, 3, 1.0);
        assert!((x1 - 1.4).abs() < 1e-15);
        assert!((x2 + 1.7).abs() < 1e-15);
        assert!((y1 - 0.6).abs() < 1e-15);
        assert_eq!(y2, 0.0);
    }

    #[test]
    fn per_dataset_rows_kept_as_written() {
        // domain 2 x2 noise mean: 0.3 in data 2, 0.5 in data 4
        assert!((suppressed(2, 2, 0.0)[1] - (4.0 * -0.1 + 0.3)).abs() < 1e-15);
        assert!((suppressed(4, 2, 0.0)[1] - (4.0 * (-0.1f64).powi(3) + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn invalid_ids() {
        assert!(generate(&SynthSpec::new(5, 0)).is_err());
        assert!(generate(&SynthSpec::new(0, 0)).is_err());
        let mut noise = |g: Gauss| g.mean;
        assert!(sample_row(1, 4, 0.0, &mut noise).is_err());
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = SynthSpec {
            n_train: 50,
            ..SynthSpec::new(4, 9)
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec { seed: 10, ..spec };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn splits_hold_out_each_domain_once() {
        let spec = SynthSpec {
            n_train: 20,
            n_val: 5,
            n_test: 5,
            ..SynthSpec::new(1, 0)
        };
        let data = generate(&spec).unwrap();
        let s = leave_one_out_split(&data, 3).unwrap();
        assert_eq!(s.train_domains(), vec![1, 2]);
        assert_eq!(s.test.domain_id, 3);
        let mut held: Vec<u8> = DOMAINS
            .iter()
            .map(|&d| leave_one_out_split(&data, d).unwrap().test.domain_id)
            .collect();
        held.sort();
        assert_eq!(held, vec![1, 2, 3]);
        assert!(leave_one_out_split(&data, 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let spec = SynthSpec {
            n_train: 3,
            n_val: 2,
            n_test: 1,
            ..SynthSpec::new(2, 1)
        };
        let mut buf = Vec::new();
        write_csv(&generate(&spec).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "domain,x1,x2,y1,y2");
        assert_eq!(lines.len(), 1 + 3 * 6);
        assert!(lines[1].starts_with("1,"));
        assert!(lines[18].starts_with("3,"));
    }
}
