//! Map optimization against posed images.

pub mod densify;
pub mod loss;
pub mod objective;
pub mod optim;
pub mod warp;

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use densify::{densify_and_prune, DensifyOutcome, DensifyParams, GradStats, Origin};
pub use loss::{d_ssim_loss, l1_loss, rgb_loss, rgb_loss_grad, ssim, LossGrad};
pub use objective::{relative_transform, total_loss, total_loss_with_plans, LossParts, TrainFrame};
pub use optim::{GroupRates, Optimizer, OptimizerKind};
pub use warp::{apply_warp, plan_warp, warp_backward, warp_image, WarpPlan, WarpResult};

use crate::error::{Error, Result};
use crate::geom::{Intrinsics, Vec3};
use crate::image::RgbImage;
use crate::map::{Gaussian3D, GaussianMap};
use crate::raster::{render, RenderConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// D-SSIM weight in the image loss.
    pub lambda: f64,
    pub w_photo: f64,
    pub w_reproj: f64,
    /// Center learning rate per unit of scene extent.
    pub lr_mu: f64,
    /// Final center rate as a fraction of the initial one (log-linear decay).
    pub lr_mu_final_fraction: f64,
    pub lr_log_scale: f64,
    pub lr_rot: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub optimizer: OptimizerKind,
    pub iterations: usize,
    pub densify_interval: usize,
    /// Mean projected-center gradient, in NDC units, that triggers densification.
    pub densify_grad_threshold: f64,
    pub prune_opacity_threshold: f64,
    pub densify_until_fraction: f64,
    /// Clone/split boundary as a fraction of the scene extent.
    pub densify_size_fraction: f64,
    pub split_factor: f64,
    pub submap_radius_train: f64,
    /// Overrides the extent derived from the camera positions.
    pub scene_extent: Option<f64>,
    pub render: RenderConfig,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.2,
            w_photo: 1.0,
            w_reproj: 0.1,
            lr_mu: 1.6e-4,
            lr_mu_final_fraction: 0.01,
            lr_log_scale: 5e-3,
            lr_rot: 1e-3,
            lr_color: 2.5e-3,
            lr_opacity: 5e-2,
            optimizer: OptimizerKind::Adam,
            iterations: 500,
            densify_interval: 100,
            densify_grad_threshold: 2e-4,
            prune_opacity_threshold: 0.005,
            densify_until_fraction: 0.5,
            densify_size_fraction: 0.01,
            split_factor: 1.6,
            submap_radius_train: 120.0,
            scene_extent: None,
            render: RenderConfig::default(),
            background: [0.0; 3],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.w_photo >= 0.0 && self.w_reproj >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        let rates = [
            self.lr_mu,
            self.lr_log_scale,
            self.lr_rot,
            self.lr_color,
            self.lr_opacity,
            self.lr_mu_final_fraction,
        ];
        if rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.densify_interval == 0 {
            return Err(Error::Config("densify_interval must be at least 1".into()));
        }
        if !(self.submap_radius_train > 0.0) {
            return Err(Error::Config("submap_radius_train must be positive".into()));
        }
        if !(self.split_factor > 1.0) {
            return Err(Error::Config("split_factor must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub total: f64,
    pub photo: f64,
    pub reproj: f64,
    pub gaussian_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DensifyEvent {
    pub iteration: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub count_after: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub iterations: Vec<IterationRecord>,
    pub events: Vec<DensifyEvent>,
    /// Wall-clock seconds per phase.
    pub phase_seconds: Vec<(String, f64)>,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "iteration,total,photo,reproj,gaussian_count";

    /// Loss trace as CSV rows without header.
    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for r in &self.iterations {
            let _ = writeln!(s, "{},{:e},{:e},{:e},{}", r.iteration, r.total, r.photo, r.reproj, r.gaussian_count);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::CSV_HEADER, self.csv_rows())
    }
}

/// Mean image loss of the current Gaussians over `frames`.
pub fn photo_loss(gaussians: &[Gaussian3D], frames: &[TrainFrame], k: &Intrinsics, cfg: &TrainConfig) -> Result<f64> {
    let mut acc = 0.0;
    for f in frames {
        let img = render(gaussians, &f.pose, k, cfg.background, &cfg.render).into_color_image();
        acc += rgb_loss_grad(&img, &f.image, cfg.lambda, f.mask.as_deref())?.value;
    }
    Ok(acc / frames.len().max(1) as f64)
}

/// Spread of the camera centers: 1.1 times the largest distance from their
/// centroid, at least 1.
pub fn camera_extent(frames: &[TrainFrame]) -> f64 {
    if frames.is_empty() {
        return 1.0;
    }
    let centers: Vec<Vec3> = frames.iter().map(|f| f.pose.camera_center()).collect();
    let mean = centers.iter().sum::<Vec3>() / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    (1.1 * r).max(1.0)
}

/// Optimizes `gaussians` in place against `frames`.
pub fn train_gaussians(
    gaussians: &mut Vec<Gaussian3D>,
    frames: &[TrainFrame],
    k: &Intrinsics,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report = TrainReport::default();
    if cfg.iterations == 0 {
        return Ok(report);
    }
    if frames.is_empty() {
        return Err(Error::Training("no training frames".into()));
    }
    let extent = cfg.scene_extent.unwrap_or_else(|| camera_extent(frames));
    let use_pairs = cfg.w_reproj > 0.0 && frames.len() >= 2;
    let window_cfg;
    let cfg_eff = if cfg.w_reproj > 0.0 && !use_pairs {
        // a single frame has no pair to reproject into
        window_cfg = TrainConfig {
            w_reproj: 0.0,
            ..cfg.clone()
        };
        &window_cfg
    } else {
        cfg
    };
    let windows = if use_pairs { frames.len() - 1 } else { frames.len() };
    let width = if use_pairs { 2 } else { 1 };

    let rates = GroupRates {
        mu: cfg.lr_mu * extent,
        log_scale: cfg.lr_log_scale,
        rot: cfg.lr_rot,
        color: cfg.lr_color,
        opacity: cfg.lr_opacity,
    };
    let mut opt = Optimizer::new(cfg.optimizer, rates, gaussians.len());
    let mut stats = GradStats::new(gaussians.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dparams = DensifyParams {
        grad_threshold: cfg.densify_grad_threshold,
        prune_opacity: cfg.prune_opacity_threshold,
        size_threshold: cfg.densify_size_fraction * extent,
        split_factor: cfg.split_factor,
    };
    let densify_until = (cfg.densify_until_fraction * cfg.iterations as f64) as usize;

    let mut order: Vec<usize> = Vec::new();
    let (mut t_grad, mut t_dens) = (0.0, 0.0);
    let start = Instant::now();
    for it in 0..cfg.iterations {
        if order.is_empty() {
            order = (0..windows).collect();
            order.shuffle(&mut rng);
        }
        let w0 = order.pop().unwrap();
        let window = &frames[w0..w0 + width];

        let frac = it as f64 / cfg.iterations.max(2).saturating_sub(1) as f64;
        opt.set_mu_rate(rates.mu * cfg.lr_mu_final_fraction.powf(frac));

        let t0 = Instant::now();
        let (parts, grads) = total_loss(gaussians, window, k, cfg_eff)?;
        if !parts.total.is_finite() {
            return Err(Error::Training(format!("non-finite loss at iteration {it}")));
        }
        stats.add(&grads, k.width, k.height);
        opt.step(gaussians, &grads);
        t_grad += t0.elapsed().as_secs_f64();
        report.iterations.push(IterationRecord {
            iteration: it,
            total: parts.total,
            photo: parts.photo,
            reproj: parts.reproj,
            gaussian_count: gaussians.len(),
        });

        let done = it + 1;
        if done % cfg.densify_interval == 0 && done <= densify_until {
            let t1 = Instant::now();
            let out = densify_and_prune(gaussians, &stats, &dparams, &mut rng);
            opt.remap(&out.origins);
            *gaussians = out.gaussians;
            stats = GradStats::new(gaussians.len());
            report.events.push(DensifyEvent {
                iteration: it,
                cloned: out.cloned,
                split: out.split,
                pruned: out.pruned,
                count_after: gaussians.len(),
            });
            t_dens += t1.elapsed().as_secs_f64();
            if gaussians.is_empty() {
                return Err(Error::Training("every Gaussian was pruned".into()));
            }
        }
    }
    report.phase_seconds = vec![
        ("gradient".into(), t_grad),
        ("densify".into(), t_dens),
        ("total".into(), start.elapsed().as_secs_f64()),
    ];
    Ok(report)
}

/// Trains the submap around the frames' camera centroid and writes the
/// result back into `map`.
pub fn train_submap(map: &mut GaussianMap, frames: &[TrainFrame], k: &Intrinsics, cfg: &TrainConfig) -> Result<TrainReport> {
    if frames.is_empty() {
        return Err(Error::Training("no training frames".into()));
    }
    let centers: Vec<Vec3> = frames.iter().map(|f| f.pose.camera_center()).collect();
    let anchor = centers.iter().sum::<Vec3>() / centers.len() as f64;
    train_submap_around(map, [anchor.x, anchor.y], frames, k, cfg)
}

/// Trains the submap within `submap_radius_train` of `anchor`. Every frame
/// must lie inside that radius.
pub fn train_submap_around(
    map: &mut GaussianMap,
    anchor: [f64; 2],
    frames: &[TrainFrame],
    k: &Intrinsics,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::Training("no training frames".into()));
    }
    let a = nalgebra::Vector2::new(anchor[0], anchor[1]);
    if frames
        .iter()
        .any(|f| (f.pose.camera_center().xy() - a).norm() > cfg.submap_radius_train)
    {
        return Err(Error::Config(
            "training frames do not fit inside one submap radius".into(),
        ));
    }
    let sub = match map.extract_around(anchor, cfg.submap_radius_train) {
        Ok(s) => s,
        Err(Error::EmptySubmap) => return Err(Error::Training("training submap is empty".into())),
        Err(e) => return Err(e),
    };
    if cfg.iterations == 0 {
        return Ok(TrainReport::default());
    }
    let mut gs = sub.gaussians;
    let report = train_gaussians(&mut gs, frames, k, cfg)?;
    map.replace_cells(&sub.keys, gs)?;
    Ok(report)
}

/// Peak signal-to-noise ratio of the renders at the frames' poses, averaged.
pub fn mean_psnr(gaussians: &[Gaussian3D], frames: &[TrainFrame], k: &Intrinsics, cfg: &TrainConfig) -> Result<f64> {
    let mut acc = 0.0;
    for f in frames {
        let img: RgbImage = render(gaussians, &f.pose, k, cfg.background, &cfg.render).into_color_image();
        acc += crate::image::psnr(&img, &f.image)?;
    }
    Ok(acc / frames.len().max(1) as f64)
}
