//! Adaptive densification and pruning.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geom::{Quat, Vec3};
use crate::map::Gaussian3D;
use crate::raster::GaussianGrads;

/// Running per-Gaussian statistics of the projected-center gradient,
/// measured against normalized device coordinates so the threshold does
/// not depend on the image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStats {
    pub norm_sum: Vec<f64>,
    pub views: Vec<u32>,
    /// Summed world-space center gradient, used as the clone direction.
    pub mu_sum: Vec<[f64; 3]>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        GradStats {
            norm_sum: vec![0.0; n],
            views: vec![0; n],
            mu_sum: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Records one view's gradients for a `width` x `height` image.
    pub fn add(&mut self, g: &GaussianGrads, width: usize, height: usize) {
        // a pixel spans 2 / width NDC units
        let (sx, sy) = (0.5 * width as f64, 0.5 * height as f64);
        for i in 0..self.len() {
            if g.visible[i] {
                let [x, y] = g.mean2d[i];
                let (x, y) = (x * sx, y * sy);
                self.norm_sum[i] += (x * x + y * y).sqrt();
                self.views[i] += 1;
                for a in 0..3 {
                    self.mu_sum[i][a] += g.params[i][a];
                }
            }
        }
    }

    pub fn mean_norm(&self, i: usize) -> f64 {
        if self.views[i] == 0 {
            0.0
        } else {
            self.norm_sum[i] / self.views[i] as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyParams {
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    /// Gaussians whose largest scale is below this are cloned, others split.
    pub size_threshold: f64,
    pub split_factor: f64,
}

/// Provenance of an output Gaussian, used to carry optimizer state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Kept(usize),
    Child(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyOutcome {
    pub gaussians: Vec<Gaussian3D>,
    pub origins: Vec<Origin>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

fn healthy(g: &Gaussian3D) -> bool {
    g.to_params().iter().all(|v| v.is_finite()) && g.quat().norm() > 0.0
}

pub fn densify_and_prune(
    gaussians: &[Gaussian3D],
    stats: &GradStats,
    p: &DensifyParams,
    rng: &mut impl Rng,
) -> DensifyOutcome {
    let mut out = DensifyOutcome {
        gaussians: Vec::with_capacity(gaussians.len()),
        origins: Vec::with_capacity(gaussians.len()),
        cloned: 0,
        split: 0,
        pruned: 0,
    };
    for (i, g) in gaussians.iter().enumerate() {
        let o = g.opacity();
        if !healthy(g) || !(o < 1.0) || o < p.prune_opacity {
            out.pruned += 1;
            continue;
        }
        if stats.mean_norm(i) < p.grad_threshold {
            out.gaussians.push(*g);
            out.origins.push(Origin::Kept(i));
            continue;
        }
        let scale = g.scale();
        let smax = scale.iter().copied().fold(0.0, f64::max);
        if smax < p.size_threshold {
            let d = Vec3::from(stats.mu_sum[i]);
            let mut copy = *g;
            if d.norm() > 0.0 {
                let step = -d.normalize() * smax;
                for a in 0..3 {
                    copy.mu[a] += step[a];
                }
            }
            out.gaussians.push(*g);
            out.origins.push(Origin::Kept(i));
            out.gaussians.push(copy);
            out.origins.push(Origin::Child(i));
            out.cloned += 1;
        } else {
            let r = g.quat().normalized().unwrap_or(Quat::IDENTITY).to_rotation_unchecked();
            for _ in 0..2 {
                let n = Vec3::new(
                    rng.sample::<f64, _>(StandardNormal) * scale[0],
                    rng.sample::<f64, _>(StandardNormal) * scale[1],
                    rng.sample::<f64, _>(StandardNormal) * scale[2],
                );
                let off = r * n;
                let mut child = *g;
                for a in 0..3 {
                    child.mu[a] += off[a];
                    child.log_scale[a] -= p.split_factor.ln();
                }
                out.gaussians.push(child);
                out.origins.push(Origin::Child(i));
            }
            out.split += 1;
        }
    }
    out
}
