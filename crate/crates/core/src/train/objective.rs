//! Weighted photometric plus reprojection objective over a window of frames.

use super::loss::rgb_loss_grad;
use super::warp::{apply_warp, plan_warp, warp_backward, WarpPlan};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::geom::{Intrinsics, Pose};
use crate::image::RgbImage;
use crate::map::Gaussian3D;
use crate::raster::{render, render_backward, GaussianGrads, ImageGrads, RenderedFrame};

/// A ground-truth image with its world-to-camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainFrame {
    pub image: RgbImage,
    pub pose: Pose,
    /// Pixels to keep; `None` keeps all.
    pub mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub photo: f64,
    pub reproj: f64,
}

/// Transform from the camera frame of `a` to the camera frame of `b`.
pub fn relative_transform(a: &Pose, b: &Pose) -> Pose {
    b.compose(&a.inverse())
}

/// Loss and gradients over `frames`: the photometric term averages over all
/// frames, the reprojection term over consecutive pairs.
pub fn total_loss(
    gaussians: &[Gaussian3D],
    frames: &[TrainFrame],
    k: &Intrinsics,
    cfg: &TrainConfig,
) -> Result<(LossParts, GaussianGrads)> {
    let (parts, grads, _) = total_loss_with_plans(gaussians, frames, k, cfg, None)?;
    Ok((parts, grads))
}

/// As [`total_loss`]; warp visibility is taken from `plans` when given and
/// the plans actually used are returned.
pub fn total_loss_with_plans(
    gaussians: &[Gaussian3D],
    frames: &[TrainFrame],
    k: &Intrinsics,
    cfg: &TrainConfig,
    plans: Option<&[WarpPlan]>,
) -> Result<(LossParts, GaussianGrads, Vec<WarpPlan>)> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("at least one frame is required".into()));
    }
    let use_reproj = cfg.w_reproj > 0.0;
    if use_reproj && frames.len() < 2 {
        return Err(Error::Config(
            "reprojection weight is positive but no consecutive frame pair was given".into(),
        ));
    }
    let n_px = k.width * k.height;
    for f in frames {
        if f.image.width != k.width || f.image.height != k.height {
            return Err(Error::InvalidInput("frame size does not match intrinsics".into()));
        }
        if f.mask.as_ref().is_some_and(|m| m.len() != n_px) {
            return Err(Error::InvalidInput("mask size does not match intrinsics".into()));
        }
    }

    let renders: Vec<RenderedFrame> = frames
        .iter()
        .map(|f| render(gaussians, &f.pose, k, cfg.background, &cfg.render))
        .collect();
    let mut ups: Vec<ImageGrads> = (0..frames.len()).map(|_| ImageGrads::zeros(k.width, k.height)).collect();

    let mut parts = LossParts::default();
    let inv_f = 1.0 / frames.len() as f64;
    for (i, (f, r)) in frames.iter().zip(&renders).enumerate() {
        let img = RgbImage {
            width: k.width,
            height: k.height,
            data: r.color.clone(),
        };
        let lg = rgb_loss_grad(&img, &f.image, cfg.lambda, f.mask.as_deref())?;
        parts.photo += lg.value * inv_f;
        let s = cfg.w_photo * inv_f;
        for (d, g) in ups[i].color.iter_mut().zip(&lg.grad) {
            *d += s * g;
        }
    }

    let mut used = Vec::new();
    if use_reproj {
        let pairs = frames.len() - 1;
        let inv_p = 1.0 / pairs as f64;
        for t in 0..pairs {
            let (src, dst) = (&frames[t], &frames[t + 1]);
            let rt = relative_transform(&src.pose, &dst.pose);
            let r = &renders[t];
            let plan = match plans {
                Some(p) => p[t].clone(),
                None => plan_warp(&r.depth, &r.alpha, &rt, k),
            };
            let warped = apply_warp(&plan, &src.image, &r.depth, &r.alpha, &rt, k);
            let mut mask = warped.mask.clone();
            if let Some(m) = &dst.mask {
                for (a, b) in mask.iter_mut().zip(m) {
                    *a &= *b;
                }
            }
            let a = warped.filled_from(&dst.image);
            let lg = rgb_loss_grad(&a, &dst.image, cfg.lambda, Some(&mask))?;
            parts.reproj += lg.value * inv_p;
            let scaled: Vec<f64> = lg.grad.iter().map(|g| g * cfg.w_reproj * inv_p).collect();
            let (gd, ga) = warp_backward(&plan, &src.image, &r.depth, &r.alpha, &rt, k, &scaled);
            let up = &mut ups[t];
            add_into(up.depth.get_or_insert_with(|| vec![0.0; n_px]), &gd);
            add_into(up.alpha.get_or_insert_with(|| vec![0.0; n_px]), &ga);
            used.push(plan);
        }
    }
    parts.total = cfg.w_photo * parts.photo + cfg.w_reproj * parts.reproj;

    let mut grads = GaussianGrads::zeros(gaussians.len());
    for (f, up) in frames.iter().zip(&ups) {
        let g = render_backward(gaussians, &f.pose, k, cfg.background, &cfg.render, up)?;
        grads.accumulate(&g);
    }
    Ok((parts, grads, used))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Quat, Vec3};
    use crate::map::PARAM_COUNT;
    use crate::raster::RenderConfig;

    fn small_scene() -> (Vec<Gaussian3D>, Intrinsics, Vec<TrainFrame>) {
        let k = Intrinsics::new(30.0, 30.0, 15.5, 15.5, 32, 32).unwrap();
        let gs = vec![
            Gaussian3D::isotropic([0.0, 0.0, 3.0], 0.4, [0.8, 0.2, 0.1], 0.6).unwrap(),
            Gaussian3D::new([0.5, 0.3, 3.5], [0.3, 0.5, 0.2], Quat::new(0.9, 0.1, 0.3, 0.0), [0.1, 0.7, 0.4], 0.7).unwrap(),
        ];
        let poses = [
            Pose::identity(),
            Pose::new(Quat::IDENTITY, Vec3::new(-0.1, 0.0, 0.0)).unwrap(),
        ];
        let cfg = RenderConfig::default();
        let frames = poses
            .iter()
            .map(|p| TrainFrame {
                image: render(&gs, p, &k, [0.0; 3], &cfg).into_color_image(),
                pose: *p,
                mask: None,
            })
            .collect();
        (gs, k, frames)
    }

    #[test]
    fn ground_truth_render_has_zero_photo_loss() {
        let (gs, k, frames) = small_scene();
        let cfg = TrainConfig {
            w_reproj: 0.0,
            ..TrainConfig::default()
        };
        let (parts, _) = total_loss(&gs, &frames, &k, &cfg).unwrap();
        assert!(parts.total.abs() < 1e-12);
    }

    #[test]
    fn photo_only_weights_give_photo_loss() {
        let (mut gs, k, frames) = small_scene();
        gs[0].color = [0.3, 0.3, 0.3];
        let cfg = TrainConfig {
            w_photo: 1.0,
            w_reproj: 0.0,
            ..TrainConfig::default()
        };
        let (parts, _) = total_loss(&gs, &frames, &k, &cfg).unwrap();
        assert!(parts.total > 0.0);
        assert_eq!(parts.total, parts.photo);
    }

    #[test]
    fn reprojection_needs_a_pair() {
        let (gs, k, frames) = small_scene();
        let cfg = TrainConfig::default();
        assert!(matches!(total_loss(&gs, &frames[..1], &k, &cfg), Err(Error::Config(_))));
    }

    // Target images whose samples stay at least `gap` away from both the
    // render and the warped previous target, so no L1 residual sits near
    // its kink during finite differencing.
    fn separated_targets(gs: &[Gaussian3D], poses: &[Pose], k: &Intrinsics, cfg: &TrainConfig, gap: f64) -> Vec<TrainFrame> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut frames: Vec<TrainFrame> = Vec::new();
        for (t, pose) in poses.iter().enumerate() {
            let r = render(gs, pose, k, cfg.background, &cfg.render);
            let warped = (t > 0).then(|| {
                let prev = render(gs, &poses[t - 1], k, cfg.background, &cfg.render);
                let rt = relative_transform(&poses[t - 1], pose);
                super::super::warp::warp_image(&frames[t - 1].image, &prev.depth, &prev.alpha, &rt, k)
            });
            let mut image = RgbImage::new(k.width, k.height);
            for i in 0..image.data.len() {
                loop {
                    let v: f64 = rng.random();
                    let far_r = (v - r.color[i]).abs() > gap;
                    let far_w = warped.as_ref().is_none_or(|w| !w.mask[i / 3] || (v - w.image.data[i]).abs() > gap);
                    if far_r && far_w {
                        image.data[i] = v;
                        break;
                    }
                }
            }
            frames.push(TrainFrame { image, pose: *pose, mask: None });
        }
        frames
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (gs, k, frames) = small_scene();
        let poses: Vec<Pose> = frames.iter().map(|f| f.pose).collect();
        for (wr, lam) in [(0.0, 0.2), (0.0, 0.0), (0.5, 0.2), (0.5, 1.0)] {
            let cfg = TrainConfig {
                w_reproj: wr,
                lambda: lam,
                render: RenderConfig::smooth(),
                ..TrainConfig::default()
            };
            let frames = separated_targets(&gs, &poses, &k, &cfg, 0.02);
            let (_, an, plans) = total_loss_with_plans(&gs, &frames, &k, &cfg, None).unwrap();
            let h = 1e-4;
            let mut checked = 0;
            for gi in 0..gs.len() {
                for pi in 0..PARAM_COUNT {
                    let eval = |d: f64| {
                        let mut g2 = gs.clone();
                        let mut p = g2[gi].to_params();
                        p[pi] += d;
                        g2[gi] = Gaussian3D::from_params(&p);
                        total_loss_with_plans(&g2, &frames, &k, &cfg, Some(&plans)).unwrap().0.total
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    let a = an.params[gi][pi];
                    if a.abs().max(fd.abs()) > 1e-6 {
                        checked += 1;
                        assert!((a - fd).abs() / a.abs().max(fd.abs()) < 1e-3, "w {wr} l {lam} g{gi} p{pi}: {a} vs {fd}");
                    }
                }
            }
            assert!(checked > 20);
        }
    }
}
