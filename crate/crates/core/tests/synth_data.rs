use std::collections::HashSet;

use gmdg::rng::{stream_id, substream, Purpose};
use gmdg::synth::{generate, has_dcds, leave_one_out_split, sample_row, Gauss, SynthSpec, DOMAINS};
use rand::Rng;
use rand_distr::StandardNormal;

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

fn column(m: &gmdg::linalg::Matrix, c: usize) -> Vec<f64> {
    (0..m.rows()).map(|r| m[(r, c)]).collect()
}

/// Draws rows with known latents, recording every noise term requested.
fn rows_with_latents(dataset: u8, domain: u8, n: usize) -> (Vec<f64>, Vec<[f64; 4]>) {
    let mut rng = substream(99, stream_id(Purpose::Data, dataset as u64, domain as u64, 7));
    let mut latents = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let h: f64 = rng.sample(StandardNormal);
        let mut draws: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        let mut noise = |g: Gauss| g.mean + g.sd * draws.pop().unwrap();
        rows.push(sample_row(dataset, domain, h, &mut noise).unwrap());
        latents.push(h);
    }
    (latents, rows)
}

#[test]
fn pure_noise_target_is_uncorrelated_with_latent() {
    let (h, rows) = rows_with_latents(2, 3, 10_000);
    let y2: Vec<f64> = rows.iter().map(|r| r[3]).collect();
    let c = corr(&y2, &h);
    assert!(c.abs() <= 0.05, "corr {c}");
    let sd = (y2.iter().map(|v| v * v).sum::<f64>() / y2.len() as f64).sqrt();
    assert!((sd - 0.2).abs() < 0.01, "sd {sd}");
}

#[test]
fn column_one_marginals_follow_shift_flag() {
    for dataset in 1..=4u8 {
        let data = generate(&SynthSpec::new(dataset, 4)).unwrap();
        let cols: Vec<Vec<f64>> = data.domains.iter().map(|d| column(&d.train.x, 0)).collect();
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in i + 1..3 {
                worst = worst.max(ks(&cols[i], &cols[j]));
            }
        }
        if has_dcds(dataset) {
            assert!(worst > 0.05, "dataset {dataset}: max KS {worst}");
        } else {
            assert!(worst <= 0.05, "dataset {dataset}: max KS {worst}");
        }
    }
}

#[test]
fn column_one_tracks_latent() {
    for dataset in 1..=4u8 {
        let data = generate(&SynthSpec::new(dataset, 5)).unwrap();
        for d in &data.domains {
            let c = corr(&column(&d.train.x, 0), &column(&d.train.y, 0));
            let shifted = has_dcds(dataset) && d.train.domain_id != 1;
            if !shifted {
                assert!(c >= 0.99 && (c - 1.0).abs() < 1e-12, "dataset {dataset} domain {}: {c}", d.train.domain_id);
            } else {
                // both sides carry independent shift noise of equal sd
                let sd: f64 = if d.train.domain_id == 2 { 0.1 } else { 0.2 };
                let expected = 1.0 / (1.0 + sd * sd);
                assert!((c - expected).abs() < 0.01, "dataset {dataset}: {c} vs {expected}");
            }
        }
    }
}

#[test]
fn values_are_finite_and_counts_match() {
    let spec = SynthSpec::new(4, 0);
    let data = generate(&spec).unwrap();
    for d in &data.domains {
        assert_eq!(d.train.len(), 10_000);
        assert_eq!(d.val.len(), 100);
        assert_eq!(d.test.len(), 100);
        for b in [&d.train, &d.val, &d.test] {
            assert!(b.x.all_finite() && b.y.all_finite());
            assert_eq!(b.x.shape(), (b.len(), 2));
        }
    }
}

#[test]
fn same_seed_same_bits() {
    let spec = SynthSpec::new(3, 17);
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    for (da, db) in a.domains.iter().zip(&b.domains) {
        let bits = |m: &gmdg::linalg::Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&da.train.x), bits(&db.train.x));
        assert_eq!(bits(&da.test.y), bits(&db.test.y));
    }
}

#[test]
fn held_out_rows_never_reach_training() {
    let data = generate(&SynthSpec {
        n_train: 2000,
        ..SynthSpec::new(2, 8)
    })
    .unwrap();
    for &held in &DOMAINS {
        let split = leave_one_out_split(&data, held).unwrap();
        let train: HashSet<u64> = split.train.iter().flat_map(|b| b.row_ids.iter().copied()).collect();
        let val: HashSet<u64> = split.val.iter().flat_map(|b| b.row_ids.iter().copied()).collect();
        let test: HashSet<u64> = split.test.row_ids.iter().copied().collect();
        assert!(train.is_disjoint(&test));
        assert!(val.is_disjoint(&test));
        assert!(train.is_disjoint(&val));
        assert!(split.train.iter().all(|b| b.domain_id != held));
        assert!(split.val.iter().all(|b| b.domain_id != held));
        assert_eq!(split.test.domain_id, held);
    }
}
