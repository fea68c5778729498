//! Trajectory error metrics: absolute and relative pose error, their
//! summary statistics and error histograms.

use std::io::Write;

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricSummary {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub sse: f64,
    pub count: usize,
}

impl MetricSummary {
    /// Statistics of `errors`. An empty slice gives all zeros.
    pub fn from_errors(errors: &[f64]) -> MetricSummary {
        let n = errors.len();
        if n == 0 {
            return MetricSummary::default();
        }
        let nf = n as f64;
        let sse: f64 = errors.iter().map(|e| e * e).sum();
        let mean = errors.iter().sum::<f64>() / nf;
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / nf;
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        MetricSummary {
            rmse: (sse / nf).sqrt(),
            mean,
            median,
            std: var.sqrt(),
            min: sorted[0],
            max: sorted[n - 1],
            sse,
            count: n,
        }
    }
}

fn check_pair(est: &[Pose], reference: &[Pose]) -> Result<()> {
    if est.len() != reference.len() {
        return Err(Error::InvalidInput(format!(
            "trajectory lengths differ: {} vs {}",
            est.len(),
            reference.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    for (i, (a, b)) in est.iter().zip(reference).enumerate() {
        if let (Some(ta), Some(tb)) = (a.timestamp, b.timestamp) {
            if (ta - tb).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!("timestamps differ at frame {i}: {ta} vs {tb}")));
            }
        }
    }
    Ok(())
}

/// Per-frame camera position error, with no alignment.
pub fn ape_errors(est: &[Pose], reference: &[Pose]) -> Result<Vec<f64>> {
    check_pair(est, reference)?;
    Ok(est
        .iter()
        .zip(reference)
        .map(|(e, r)| (e.camera_center() - r.camera_center()).norm())
        .collect())
}

pub fn ape(est: &[Pose], reference: &[Pose]) -> Result<MetricSummary> {
    Ok(MetricSummary::from_errors(&ape_errors(est, reference)?))
}

/// Translation error of the relative motion over `delta` frames, one value
/// per pair. Motions are taken between camera-to-world poses.
pub fn rpe_errors(est: &[Pose], reference: &[Pose], delta: usize) -> Result<Vec<f64>> {
    check_pair(est, reference)?;
    if delta == 0 || est.len() < delta + 1 {
        return Err(Error::InvalidInput(format!(
            "need at least {} frames for delta {delta}",
            delta + 1
        )));
    }
    let c_est: Vec<Pose> = est.iter().map(Pose::inverse).collect();
    let c_ref: Vec<Pose> = reference.iter().map(Pose::inverse).collect();
    Ok((0..est.len() - delta)
        .map(|k| {
            let q = c_ref[k].inverse().compose(&c_ref[k + delta]);
            let p = c_est[k].inverse().compose(&c_est[k + delta]);
            q.inverse().compose(&p).translation.norm()
        })
        .collect())
}

pub fn rpe(est: &[Pose], reference: &[Pose], delta: usize) -> Result<MetricSummary> {
    Ok(MetricSummary::from_errors(&rpe_errors(est, reference, delta)?))
}

/// Signed per-frame errors in world x, y and heading (degrees).
pub fn xy_yaw_errors(est: &[Pose], reference: &[Pose]) -> Result<Vec<[f64; 3]>> {
    check_pair(est, reference)?;
    Ok(est
        .iter()
        .zip(reference)
        .map(|(e, r)| {
            let d = e.camera_center() - r.camera_center();
            [d.x, d.y, wrap_angle(e.yaw() - r.yaw()).to_degrees()]
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` ascending bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width bins over the data range. Each bin includes its lower
/// edge; the last also includes the maximum.
pub fn error_histogram(errors: &[f64], bins: usize) -> Result<Histogram> {
    let lo = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if errors.is_empty() { (0.0, 1.0) } else { (lo, hi) };
    histogram_range(errors, bins, lo, hi)
}

/// Equal-width bins over `[lo, hi]`. Values outside fall into the end bins
/// so the counts always sum to the input length.
pub fn histogram_range(errors: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidInput("histogram needs at least one bin".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && hi >= lo) || errors.iter().any(|e| e.is_nan()) {
        return Err(Error::InvalidInput("histogram range must be finite".into()));
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for &e in errors {
        let b = ((e - lo) / width).floor();
        let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Rows `lower,upper,count`.
pub fn write_histogram_csv(h: &Histogram, mut out: impl Write) -> Result<()> {
    writeln!(out, "lower,upper,count")?;
    for (i, c) in h.counts.iter().enumerate() {
        writeln!(out, "{:?},{:?},{}", h.edges[i], h.edges[i + 1], c)?;
    }
    Ok(())
}

pub const METRIC_CSV_HEADER: &str = "metric,seq,rmse,mean,median,std,min,max,sse";

pub fn metric_csv_row(metric: &str, seq: &str, s: &MetricSummary) -> String {
    format!(
        "{metric},{seq},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
        s.rmse, s.mean, s.median, s.std, s.min, s.max, s.sse
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Quat, Vec3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_traj(rng: &mut impl Rng, n: usize) -> Vec<Pose> {
        (0..n)
            .map(|i| {
                Pose::looking(
                    Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.5..2.0)),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-0.3..0.3),
                )
                .with_timestamp(Some(i as f64))
            })
            .collect()
    }

    fn random_rigid(rng: &mut impl Rng) -> Pose {
        let q = Quat::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let t = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        Pose::new(q, t).unwrap()
    }

    #[test]
    fn identical_trajectories_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_traj(&mut rng, 10);
        assert_eq!(ape(&t, &t).unwrap(), MetricSummary { count: 10, ..Default::default() });
        assert_eq!(rpe(&t, &t, 1).unwrap(), MetricSummary { count: 9, ..Default::default() });
    }

    #[test]
    fn constant_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_traj(&mut rng, 12);
        let shifted: Vec<Pose> = t.iter().map(|p| p.perturbed_xy_yaw(0.3, 0.0, 0.0)).collect();
        let s = ape(&shifted, &t).unwrap();
        for v in [s.rmse, s.mean, s.median, s.min, s.max] {
            assert!((v - 0.3).abs() < 1e-12);
        }
        assert!(s.std < 1e-12);
        let r = rpe(&shifted, &t, 1).unwrap();
        assert!(r.max < 1e-12);
    }

    #[test]
    fn ape_matches_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_traj(&mut rng, 25);
        let b = random_traj(&mut rng, 25);
        let s = ape(&a, &b).unwrap();
        let mut sq = 0.0;
        let mut sum = 0.0;
        for (p, q) in a.iter().zip(&b) {
            // camera center from the inverse pose's translation
            let cp = p.inverse().translation;
            let cq = q.inverse().translation;
            let e = ((cp.x - cq.x).powi(2) + (cp.y - cq.y).powi(2) + (cp.z - cq.z).powi(2)).sqrt();
            sq += e * e;
            sum += e;
        }
        assert!((s.sse - sq).abs() < 1e-12 * sq.max(1.0));
        assert!((s.mean - sum / 25.0).abs() < 1e-12);
        assert!((s.rmse * s.rmse * 25.0 - s.sse).abs() < 1e-9);
        assert!(s.min <= s.median && s.median <= s.max);
    }

    #[test]
    fn single_displaced_frame_gives_two_pair_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_traj(&mut rng, 8);
        let mut e = t.clone();
        e[4] = e[4].perturbed_xy_yaw(0.2, -0.1, 0.0);
        let errs = rpe_errors(&e, &t, 1).unwrap();
        let nonzero: Vec<usize> = (0..errs.len()).filter(|&i| errs[i] > 1e-12).collect();
        assert_eq!(nonzero, vec![3, 4]);
    }

    #[test]
    fn rpe_is_invariant_to_rigid_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_traj(&mut rng, 10);
            let b = random_traj(&mut rng, 10);
            let base = rpe_errors(&a, &b, 2).unwrap();
            // a world transform g maps camera-to-world C to g C, so the
            // world-to-camera pose T becomes T g^-1
            let g = random_rigid(&mut rng);
            let gi = g.inverse();
            let move_all = |t: &[Pose]| -> Vec<Pose> { t.iter().map(|p| p.compose(&gi)).collect() };
            let both = rpe_errors(&move_all(&a), &move_all(&b), 2).unwrap();
            let est_only = rpe_errors(&move_all(&a), &b, 2).unwrap();
            for i in 0..base.len() {
                assert!((base[i] - both[i]).abs() < 1e-9);
                assert!((base[i] - est_only[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_traj(&mut rng, 5);
        assert!(ape(&a[..4], &a).is_err());
        assert!(rpe(&a[..1], &a[..1], 1).is_err());
        let mut b = a.clone();
        b[2].timestamp = Some(2.5);
        assert!(ape(&a, &b).is_err());
    }

    #[test]
    fn histogram_counts() {
        let h = error_histogram(&[0.0; 7], 5).unwrap();
        assert_eq!(h.counts, vec![7, 0, 0, 0, 0]);
        let h = error_histogram(&[], 4).unwrap();
        assert_eq!(h.counts, vec![0; 4]);
        assert!(error_histogram(&[1.0], 0).is_err());
        let h = error_histogram(&[0.0, 0.5, 1.0, 1.5, 2.0], 4).unwrap();
        assert_eq!(h.counts, vec![1, 1, 1, 2]);
    }

    #[test]
    fn uniform_errors_fill_bins_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20000;
        let bins = 10;
        let e: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let h = histogram_range(&e, bins, 0.0, 1.0).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), n);
        // five binomial standard deviations
        let p = 1.0 / bins as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in h.counts {
            assert!((c as f64 - n as f64 * p).abs() < 5.0 * sd, "{c}");
        }
    }
}
