use crate::geom::{Intrinsics, Mat3, Pose, Vec3};
use crate::map::Gaussian3D;

use super::RenderConfig;

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    /// Pixel coordinates of the projected center.
    pub center: [f64; 2],
    /// Regularized 2D covariance `(xx, xy, yy)`, px^2.
    pub cov: [f64; 3],
    /// Inverse of `cov`, same layout.
    pub conic: [f64; 3],
    /// Camera-space z of the center.
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// 1, or the Jacobian determinant when EWA normalization is on.
    pub kernel_scale: f64,
    pub source_index: usize,
    /// Inclusive pixel bounds `[x0, y0, x1, y1]` outside which the weight is
    /// below the cutoff.
    pub bbox: [usize; 4],
    /// Exponents below this give a weight under the cutoff; slightly
    /// conservative so the exact test still decides borderline cases.
    pub min_power: f64,
}

/// Splats whose projected center lies further outside the image than this
/// fraction of its size are culled.
pub const GUARD_BAND: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible(Splat2D),
    Culled,
    /// 2D covariance not positive definite after regularization.
    Singular,
}

pub fn project_gaussian(g: &Gaussian3D, pose: &Pose, k: &Intrinsics, cfg: &RenderConfig) -> Projection {
    project_with_rotation(g, 0, &pose.rotation_matrix(), pose, k, cfg)
}

/// Shared forward quantities used by both the projection and its gradient.
pub(crate) struct ProjectionTerms {
    pub p_cam: Vec3,
    /// Rows of the 2x3 projection Jacobian.
    pub j: [[f64; 3]; 2],
    /// Covariance in camera space.
    pub sigma_cam: Mat3,
    pub cov: [f64; 3],
}

pub(crate) fn projection_terms(g: &Gaussian3D, r_w: &Mat3, pose: &Pose, k: &Intrinsics, low_pass: f64) -> Option<ProjectionTerms> {
    let p_cam = r_w * Vec3::from(g.mu) + pose.translation;
    if !(p_cam.z > k.near) {
        return None;
    }
    let sigma = g.covariance().ok()?;
    let sigma_cam = r_w * sigma * r_w.transpose();
    let iz = 1.0 / p_cam.z;
    let j = [
        [k.fx * iz, 0.0, -k.fx * p_cam.x * iz * iz],
        [0.0, k.fy * iz, -k.fy * p_cam.y * iz * iz],
    ];
    // cov = J Sigma_cam J^T
    let mut js = [[0.0; 3]; 2];
    for (row, jr) in j.iter().enumerate() {
        for c in 0..3 {
            js[row][c] = jr[0] * sigma_cam[(0, c)] + jr[1] * sigma_cam[(1, c)] + jr[2] * sigma_cam[(2, c)];
        }
    }
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cov = [
        dot(&js[0], &j[0]) + low_pass,
        dot(&js[0], &j[1]),
        dot(&js[1], &j[1]) + low_pass,
    ];
    Some(ProjectionTerms {
        p_cam,
        j,
        sigma_cam,
        cov,
    })
}

pub(crate) fn project_with_rotation(
    g: &Gaussian3D,
    index: usize,
    r_w: &Mat3,
    pose: &Pose,
    k: &Intrinsics,
    cfg: &RenderConfig,
) -> Projection {
    let Some(t) = projection_terms(g, r_w, pose, k, cfg.low_pass) else {
        return if g.quat().norm() == 0.0 {
            Projection::Singular
        } else {
            Projection::Culled
        };
    };
    let [a, b, c] = t.cov;
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() || !(a > 0.0) {
        return Projection::Singular;
    }
    let conic = [c / det, -b / det, a / det];
    let z = t.p_cam.z;
    let center = [k.fx * t.p_cam.x / z + k.cx, k.fy * t.p_cam.y / z + k.cy];
    let (w, h) = (k.width as f64, k.height as f64);
    // centers far outside the view belong to splats grazing the near plane,
    // whose linearized footprint is meaningless
    let (gx, gy) = (GUARD_BAND * w, GUARD_BAND * h);
    if !(center[0] >= -gx && center[0] <= w - 1.0 + gx && center[1] >= -gy && center[1] <= h - 1.0 + gy) {
        return Projection::Culled;
    }
    let opacity = g.opacity();
    let kernel_scale = if cfg.ewa_normalization {
        k.fx * k.fy / (z * z)
    } else {
        1.0
    };
    let peak = opacity * kernel_scale;
    let (x0, y0, x1, y1) = if cfg.min_weight > 0.0 {
        if peak < cfg.min_weight {
            return Projection::Culled;
        }
        // q >= min_weight implies d^T conic d <= m2, hence |dx| <= sqrt(m2 a)
        let m2 = 2.0 * (peak / cfg.min_weight).ln();
        let hx = (m2 * a).sqrt() + 1.0;
        let hy = (m2 * c).sqrt() + 1.0;
        (
            (center[0] - hx).ceil(),
            (center[1] - hy).ceil(),
            (center[0] + hx).floor(),
            (center[1] + hy).floor(),
        )
    } else {
        (0.0, 0.0, w - 1.0, h - 1.0)
    };
    if !(x1 >= 0.0 && y1 >= 0.0 && x0 <= w - 1.0 && y0 <= h - 1.0) {
        return Projection::Culled;
    }
    let bbox = [
        x0.max(0.0) as usize,
        y0.max(0.0) as usize,
        x1.min(w - 1.0) as usize,
        y1.min(h - 1.0) as usize,
    ];
    Projection::Visible(Splat2D {
        center,
        cov: t.cov,
        conic,
        depth: z,
        color: g.color,
        opacity,
        kernel_scale,
        source_index: index,
        bbox,
        min_power: if cfg.min_weight > 0.0 {
            (cfg.min_weight / peak).ln() - 1e-6
        } else {
            f64::NEG_INFINITY
        },
    })
}
