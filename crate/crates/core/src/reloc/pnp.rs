//! Absolute pose from 2D-3D correspondences: a three-point solve checked on
//! a fourth point inside RANSAC, then Gauss-Newton on the inliers.

use nalgebra::{Matrix4, Matrix6, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::FeatureMatch;
use crate::error::{Error, Result};
use crate::geom::{Intrinsics, Mat3, Pose, Quat, Vec3};
use crate::raster::RenderedFrame;

pub const MIN_CORRESPONDENCES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpConfig {
    /// Reprojection error, in pixels, below which a point is an inlier.
    pub inlier_px: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for PnpConfig {
    fn default() -> Self {
        PnpConfig {
            inlier_px: 2.0,
            confidence: 0.999,
            max_iterations: 1000,
            min_inliers: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpResult {
    /// World-to-camera pose of the query.
    pub pose: Pose,
    /// Indices into the correspondence list.
    pub inliers: Vec<usize>,
    pub ransac_iterations: usize,
    /// Squared reprojection error summed over the inliers after each
    /// accepted Gauss-Newton step, starting with the RANSAC estimate.
    pub cost_history: Vec<f64>,
}

/// Real roots of `c[0] x^4 + c[1] x^3 + c[2] x^2 + c[3] x + c[4]`.
fn quartic_roots(c: [f64; 5]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(c[0].abs() > 1e-12 * scale) {
        return Vec::new();
    }
    let a = [c[1] / c[0], c[2] / c[0], c[3] / c[0], c[4] / c[0]];
    #[rustfmt::skip]
    let companion = Matrix4::new(
        -a[0], -a[1], -a[2], -a[3],
        1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
    );
    let poly = |x: f64| (((x + a[0]) * x + a[1]) * x + a[2]) * x + a[3];
    let dpoly = |x: f64| ((4.0 * x + 3.0 * a[0]) * x + 2.0 * a[1]) * x + a[2];
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-4 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..4 {
                let d = dpoly(x);
                if d == 0.0 {
                    break;
                }
                let nx = x - poly(x) / d;
                if !nx.is_finite() {
                    break;
                }
                x = nx;
            }
            x
        })
        .collect()
}

/// Rigid transform `R, t` with `q_i ~ R p_i + t` in the least-squares sense.
fn absolute_orientation(p: &[Vec3], q: &[Vec3]) -> Option<(Mat3, Vec3)> {
    let n = p.len() as f64;
    let pc = p.iter().sum::<Vec3>() / n;
    let qc = q.iter().sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for (a, b) in p.iter().zip(q) {
        h += (a - pc) * (b - qc).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    r.iter().all(|x| x.is_finite()).then(|| (r, qc - r * pc))
}

/// Camera poses consistent with three world points seen along three unit
/// bearings (Grunert's quartic).
pub fn p3p(world: [Vec3; 3], bearings: [Vec3; 3]) -> Vec<Pose> {
    let [p1, p2, p3] = world;
    let [j1, j2, j3] = bearings;
    let a2 = (p2 - p3).norm_squared();
    let b2 = (p1 - p3).norm_squared();
    let c2 = (p1 - p2).norm_squared();
    if !(a2 > 0.0 && b2 > 0.0 && c2 > 0.0) {
        return Vec::new();
    }
    let ca = j2.dot(&j3);
    let cb = j1.dot(&j3);
    let cg = j1.dot(&j2);
    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let bmc = (b2 - c2) / b2;
    let bma = (b2 - a2) / b2;
    let coeffs = [
        (amc - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca,
        4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb),
        2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * bmc * ca * ca - 4.0 * apc * ca * cb * cg
            + 2.0 * bma * cg * cg),
        4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg),
        (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cg * cg,
    ];
    let mut out = Vec::new();
    for v in quartic_roots(coeffs) {
        if !(v > 0.0) {
            continue;
        }
        let den = 2.0 * (cg - v * ca);
        if den.abs() < 1e-12 {
            continue;
        }
        let u = ((amc - 1.0) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / den;
        let s1_sq = c2 / (1.0 + u * u - 2.0 * u * cg);
        if !(u > 0.0 && s1_sq > 0.0) {
            continue;
        }
        let s1 = s1_sq.sqrt();
        let cam = [j1 * s1, j2 * (u * s1), j3 * (v * s1)];
        if let Some((r, t)) = absolute_orientation(&world, &cam) {
            out.push(Pose::from_rotation_matrix(&r, t));
        }
    }
    out
}

fn reprojection_sq(pose_r: &Mat3, t: &Vec3, x: &Vec3, px: &[f64; 2], k: &Intrinsics) -> f64 {
    let p = pose_r * x + t;
    if !(p.z > k.near) {
        return f64::INFINITY;
    }
    let u = k.fx * p.x / p.z + k.cx;
    let v = k.fy * p.y / p.z + k.cy;
    (u - px[0]).powi(2) + (v - px[1]).powi(2)
}

fn total_cost(pose: &Pose, world: &[Vec3], pixels: &[[f64; 2]], idx: &[usize], k: &Intrinsics) -> f64 {
    let r = pose.rotation_matrix();
    idx.iter()
        .map(|&i| reprojection_sq(&r, &pose.translation, &world[i], &pixels[i], k))
        .sum()
}

/// Applies the left increment `(omega, upsilon)`.
fn retract(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let w = Vec3::new(delta[0], delta[1], delta[2]);
    let v = Vec3::new(delta[3], delta[4], delta[5]);
    let dq = Quat::exp(w);
    let q = dq.mul(pose.rotation);
    let n = q.norm();
    Pose {
        rotation: Quat::new(q.w / n, q.x / n, q.y / n, q.z / n),
        translation: dq.to_rotation_unchecked() * pose.translation + v,
        timestamp: pose.timestamp,
    }
}

/// Gauss-Newton on the squared reprojection error over `idx`. A step is
/// halved until it lowers the cost, so the returned history is strictly
/// decreasing.
pub fn gauss_newton(
    pose: &Pose,
    world: &[Vec3],
    pixels: &[[f64; 2]],
    idx: &[usize],
    k: &Intrinsics,
    max_iters: usize,
) -> (Pose, Vec<f64>) {
    let mut pose = *pose;
    let mut cost = total_cost(&pose, world, pixels, idx, k);
    let mut history = vec![cost];
    for _ in 0..max_iters {
        if !(cost > 0.0) || !cost.is_finite() {
            break;
        }
        let r = pose.rotation_matrix();
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for &i in idx {
            let p = r * world[i] + pose.translation;
            if !(p.z > k.near) {
                continue;
            }
            let iz = 1.0 / p.z;
            let res = [k.fx * p.x * iz + k.cx - pixels[i][0], k.fy * p.y * iz + k.cy - pixels[i][1]];
            let jp = [[k.fx * iz, 0.0, -k.fx * p.x * iz * iz], [0.0, k.fy * iz, -k.fy * p.y * iz * iz]];
            // d p / d omega = -[p]x, d p / d upsilon = I
            let dp = [
                [0.0, p.z, -p.y, 1.0, 0.0, 0.0],
                [-p.z, 0.0, p.x, 0.0, 1.0, 0.0],
                [p.y, -p.x, 0.0, 0.0, 0.0, 1.0],
            ];
            for (row, jr) in jp.iter().enumerate() {
                let mut g = Vector6::<f64>::zeros();
                for c in 0..6 {
                    g[c] = jr[0] * dp[0][c] + jr[1] * dp[1][c] + jr[2] * dp[2][c];
                }
                jtj += g * g.transpose();
                jtr += g * res[row];
            }
        }
        let Some(step) = jtj.cholesky().map(|c| c.solve(&(-jtr))) else {
            break;
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = retract(&pose, &(step * scale));
            let c = total_cost(&cand, world, pixels, idx, k);
            if c < cost {
                pose = cand;
                cost = c;
                history.push(c);
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || step.norm() * scale < 1e-15 {
            break;
        }
    }
    (pose, history)
}

fn inliers_of(pose: &Pose, world: &[Vec3], pixels: &[[f64; 2]], k: &Intrinsics, thresh_sq: f64) -> (Vec<usize>, f64) {
    let r = pose.rotation_matrix();
    let mut idx = Vec::new();
    let mut err = 0.0;
    for i in 0..world.len() {
        let e = reprojection_sq(&r, &pose.translation, &world[i], &pixels[i], k);
        if e < thresh_sq {
            idx.push(i);
            err += e;
        }
    }
    (idx, err)
}

/// Robust pose from world points and their observed pixels.
pub fn solve_pnp_ransac(world: &[Vec3], pixels: &[[f64; 2]], k: &Intrinsics, cfg: &PnpConfig) -> Result<PnpResult> {
    if world.len() != pixels.len() {
        return Err(Error::InvalidInput("point and pixel counts differ".into()));
    }
    let n = world.len();
    if n < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientCorrespondences {
            found: n,
            needed: MIN_CORRESPONDENCES,
        });
    }
    let bearings: Vec<Vec3> = pixels
        .iter()
        .map(|p| Vec3::new((p[0] - k.cx) / k.fx, (p[1] - k.cy) / k.fy, 1.0).normalize())
        .collect();
    let thresh_sq = cfg.inlier_px * cfg.inlier_px;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Pose, Vec<usize>, f64)> = None;
    let mut needed = cfg.max_iterations;
    let mut iters = 0;
    while iters < needed.min(cfg.max_iterations) {
        iters += 1;
        let s = sample(&mut rng, n, 4).into_vec();
        let cands = p3p([world[s[0]], world[s[1]], world[s[2]]], [bearings[s[0]], bearings[s[1]], bearings[s[2]]]);
        let Some(pose) = cands
            .into_iter()
            .map(|p| {
                let e = reprojection_sq(&p.rotation_matrix(), &p.translation, &world[s[3]], &pixels[s[3]], k);
                (p, e)
            })
            .filter(|(_, e)| e.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(p, _)| p)
        else {
            continue;
        };
        let (idx, err) = inliers_of(&pose, world, pixels, k, thresh_sq);
        let better = match &best {
            None => true,
            Some((_, b, e)) => idx.len() > b.len() || (idx.len() == b.len() && err < *e),
        };
        if better {
            let w = idx.len() as f64 / n as f64;
            let denom = (1.0 - w.powi(4)).ln();
            needed = if w >= 1.0 {
                0
            } else if denom < 0.0 {
                ((1.0 - cfg.confidence).ln() / denom).ceil().max(1.0) as usize
            } else {
                cfg.max_iterations
            };
            best = Some((pose, idx, err));
        }
    }
    let Some((mut pose, mut idx, _)) = best else {
        return Err(Error::UnreliablePose {
            inliers: 0,
            needed: cfg.min_inliers,
        });
    };
    if idx.len() < MIN_CORRESPONDENCES {
        return Err(Error::UnreliablePose {
            inliers: idx.len(),
            needed: cfg.min_inliers,
        });
    }
    let mut history = Vec::new();
    for _ in 0..3 {
        let (p, h) = gauss_newton(&pose, world, pixels, &idx, k, 50);
        pose = p;
        if history.is_empty() {
            history = h;
        } else {
            history.extend(h.into_iter().skip(1));
        }
        let (next, _) = inliers_of(&pose, world, pixels, k, thresh_sq);
        if next == idx || next.len() < MIN_CORRESPONDENCES {
            break;
        }
        idx = next;
    }
    if idx.len() < cfg.min_inliers {
        return Err(Error::UnreliablePose {
            inliers: idx.len(),
            needed: cfg.min_inliers,
        });
    }
    Ok(PnpResult {
        pose,
        inliers: idx,
        ransac_iterations: iters,
        cost_history: history,
    })
}

/// World points behind feature matches: each rendered pixel is lifted with
/// the rendered depth where alpha exceeds one half. Returns the points, the
/// matching query pixels and the index of the match each came from.
pub fn lift_matches(
    matches: &[FeatureMatch],
    render: &RenderedFrame,
    pose_r: &Pose,
    k: &Intrinsics,
) -> (Vec<Vec3>, Vec<[f64; 2]>, Vec<usize>) {
    let c2w = pose_r.inverse();
    let mut world = Vec::new();
    let mut pixels = Vec::new();
    let mut origin = Vec::new();
    for (mi, m) in matches.iter().enumerate() {
        let x = m.pixel_r[0].round();
        let y = m.pixel_r[1].round();
        if !(x >= 0.0 && y >= 0.0 && (x as usize) < render.width && (y as usize) < render.height) {
            continue;
        }
        let Some(z) = render.metric_depth(x as usize, y as usize) else {
            continue;
        };
        if !(z > k.near) {
            continue;
        }
        let pc = k.unproject(m.pixel_r[0], m.pixel_r[1], z);
        world.push(c2w.transform(&pc));
        pixels.push(m.pixel_q);
        origin.push(mi);
    }
    (world, pixels, origin)
}

/// Query pose from matches against a render at `pose_r`. Inlier indices
/// refer to `matches`.
pub fn pnp_ransac(
    matches: &[FeatureMatch],
    render: &RenderedFrame,
    pose_r: &Pose,
    k: &Intrinsics,
    cfg: &PnpConfig,
) -> Result<PnpResult> {
    let (world, pixels, origin) = lift_matches(matches, render, pose_r, k);
    let mut res = solve_pnp_ransac(&world, &pixels, k, cfg)?;
    res.inliers = res.inliers.iter().map(|&i| origin[i]).collect();
    Ok(res)
}
