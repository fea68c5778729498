//! Forward warping of an image into a neighbouring view through rendered
//! depth.
//!
//! Each source pixel with alpha above one half is unprojected at metric depth
//! `D / alpha`, moved by the relative transform and splatted onto the four
//! surrounding target pixels with bilinear tent weights. A target pixel keeps
//! only the samples within a small relative depth band of its nearest sample
//! and takes their weighted mean. The visibility decisions, including which
//! side of each target pixel a sample fell on, form a [`WarpPlan`];
//! evaluating a frozen plan is differentiable in the depth and alpha images.

use crate::geom::{Intrinsics, Pose, Vec3};
use crate::image::RgbImage;

/// Samples lighter than this do not count as reaching a pixel.
pub const MIN_TENT_WEIGHT: f64 = 1e-3;
/// Samples farther than `(1 + DEPTH_BAND)` times the nearest are occluded.
pub const DEPTH_BAND: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    /// Warped image; pixels outside `mask` are zero.
    pub image: RgbImage,
    pub mask: Vec<bool>,
}

impl WarpResult {
    /// Copies `fill` into every pixel that received no sample.
    pub fn filled_from(&self, fill: &RgbImage) -> RgbImage {
        let mut out = self.image.clone();
        for (i, m) in self.mask.iter().enumerate() {
            if !m {
                out.data[3 * i..3 * i + 3].copy_from_slice(&fill.data[3 * i..3 * i + 3]);
            }
        }
        out
    }
}

/// Frozen visibility: for every target pixel, the source pixels that reach
/// it and the side of the pixel each landed on.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpPlan {
    width: usize,
    height: usize,
    offsets: Vec<usize>,
    sources: Vec<u32>,
    // bit 0 set: sample left of the target column; bit 1: above its row
    sides: Vec<u8>,
}

impl WarpPlan {
    pub fn sources_of(&self, target: usize) -> &[u32] {
        &self.sources[self.offsets[target]..self.offsets[target + 1]]
    }

    /// Sources of `target` with the signs of `u - x` and `v - y` at
    /// planning time.
    fn entries(&self, target: usize) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let r = self.offsets[target]..self.offsets[target + 1];
        self.sources[r.clone()].iter().zip(&self.sides[r]).map(|(s, b)| {
            let sx = if b & 1 != 0 { -1.0 } else { 1.0 };
            let sy = if b & 2 != 0 { -1.0 } else { 1.0 };
            (*s as usize, sx, sy)
        })
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.width * self.height)
            .map(|t| self.offsets[t + 1] > self.offsets[t])
            .collect()
    }
}

struct Geometry<'a> {
    k: &'a Intrinsics,
    rot: crate::geom::Mat3,
    trans: Vec3,
}

impl Geometry<'_> {
    fn new<'a>(k: &'a Intrinsics, t: &Pose) -> Geometry<'a> {
        Geometry {
            k,
            rot: t.rotation_matrix(),
            trans: t.translation,
        }
    }

    fn ray(&self, s: usize) -> Vec3 {
        let (x, y) = ((s % self.k.width) as f64, (s / self.k.width) as f64);
        Vec3::new((x - self.k.cx) / self.k.fx, (y - self.k.cy) / self.k.fy, 1.0)
    }

    /// Target camera point of source pixel `s` at metric depth `z`.
    fn point(&self, s: usize, z: f64) -> Vec3 {
        self.rot * (self.ray(s) * z) + self.trans
    }

    fn project(&self, p: &Vec3) -> (f64, f64) {
        (self.k.fx * p.x / p.z + self.k.cx, self.k.fy * p.y / p.z + self.k.cy)
    }
}

/// Tent factors on the linear piece fixed by the plan, so a sample that
/// crosses a pixel center under a frozen plan does not switch slope.
fn tent(u: f64, v: f64, t: usize, width: usize, sx: f64, sy: f64) -> (f64, f64) {
    let tx = 1.0 - sx * (u - (t % width) as f64);
    let ty = 1.0 - sy * (v - (t / width) as f64);
    (tx, ty)
}

/// Decides which source samples land on which target pixels.
pub fn plan_warp(depth: &[f64], alpha: &[f64], t: &Pose, k: &Intrinsics) -> WarpPlan {
    let (w, h) = (k.width, k.height);
    let geo = Geometry::new(k, t);
    let mut cand: Vec<(u32, u32, f64, u8)> = Vec::new();
    for s in 0..w * h {
        if !(alpha[s] > 0.5) {
            continue;
        }
        let p = geo.point(s, depth[s] / alpha[s]);
        if !(p.z > k.near) {
            continue;
        }
        let (u, v) = geo.project(&p);
        if !(u.is_finite() && v.is_finite()) {
            continue;
        }
        let (x0, y0) = (u.floor(), v.floor());
        for (side, dx, dy) in [(0u8, 0.0, 0.0), (1, 1.0, 0.0), (2, 0.0, 1.0), (3, 1.0, 1.0)] {
            let (xt, yt) = (x0 + dx, y0 + dy);
            if xt < 0.0 || yt < 0.0 || xt >= w as f64 || yt >= h as f64 {
                continue;
            }
            let wt = (1.0 - (u - xt).abs()) * (1.0 - (v - yt).abs());
            if wt >= MIN_TENT_WEIGHT {
                cand.push(((yt as usize * w + xt as usize) as u32, s as u32, p.z, side));
            }
        }
    }
    cand.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut sources = Vec::with_capacity(cand.len());
    let mut sides = Vec::with_capacity(cand.len());
    offsets.push(0);
    let mut i = 0;
    for target in 0..(w * h) as u32 {
        let start = i;
        while i < cand.len() && cand[i].0 == target {
            i += 1;
        }
        let group = &cand[start..i];
        let zmin = group.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
        for c in group.iter().filter(|c| c.2 <= zmin * (1.0 + DEPTH_BAND)) {
            sources.push(c.1);
            sides.push(c.3);
        }
        offsets.push(sources.len());
    }
    WarpPlan {
        width: w,
        height: h,
        offsets,
        sources,
        sides,
    }
}

/// Evaluates a frozen plan with the given depth and alpha.
pub fn apply_warp(plan: &WarpPlan, src: &RgbImage, depth: &[f64], alpha: &[f64], t: &Pose, k: &Intrinsics) -> WarpResult {
    let (w, h) = (k.width, k.height);
    let geo = Geometry::new(k, t);
    let mut image = RgbImage::new(w, h);
    for target in 0..w * h {
        let srcs = plan.sources_of(target);
        if let [s] = srcs {
            let s = *s as usize;
            image.data[3 * target..3 * target + 3].copy_from_slice(&src.data[3 * s..3 * s + 3]);
            continue;
        }
        let mut acc = [0.0; 3];
        let mut wsum = 0.0;
        for (s, sx, sy) in plan.entries(target) {
            let (u, v) = geo.project(&geo.point(s, depth[s] / alpha[s]));
            let (tx, ty) = tent(u, v, target, w, sx, sy);
            let wt = tx * ty;
            for ch in 0..3 {
                acc[ch] += wt * src.data[3 * s + ch];
            }
            wsum += wt;
        }
        if !srcs.is_empty() {
            for ch in 0..3 {
                image.data[3 * target + ch] = acc[ch] / wsum;
            }
        }
    }
    WarpResult {
        image,
        mask: plan.mask(),
    }
}

/// Warps `src` (seen from the source pose) into the target view, where `t`
/// maps source camera coordinates to target camera coordinates.
pub fn warp_image(src: &RgbImage, depth: &[f64], alpha: &[f64], t: &Pose, k: &Intrinsics) -> WarpResult {
    let plan = plan_warp(depth, alpha, t, k);
    apply_warp(&plan, src, depth, alpha, t, k)
}

/// Gradients of `sum(grad_out * warped)` with respect to depth and alpha
/// under a frozen plan.
pub fn warp_backward(
    plan: &WarpPlan,
    src: &RgbImage,
    depth: &[f64],
    alpha: &[f64],
    t: &Pose,
    k: &Intrinsics,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (k.width, k.height);
    let geo = Geometry::new(k, t);
    let mut gd = vec![0.0; w * h];
    let mut ga = vec![0.0; w * h];
    let mut terms: Vec<(usize, Vec3, f64, f64, f64)> = Vec::new();
    for target in 0..w * h {
        let srcs = plan.sources_of(target);
        if srcs.len() < 2 {
            continue;
        }
        let g = &grad_out[3 * target..3 * target + 3];
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        terms.clear();
        let mut val = [0.0; 3];
        let mut wsum = 0.0;
        for (s, sx, sy) in plan.entries(target) {
            let p = geo.point(s, depth[s] / alpha[s]);
            let (u, v) = geo.project(&p);
            let (tx, ty) = tent(u, v, target, w, sx, sy);
            let wt = tx * ty;
            for ch in 0..3 {
                val[ch] += wt * src.data[3 * s + ch];
            }
            wsum += wt;
            // derivative of the tent product with respect to (u, v)
            let du = -ty * sx;
            let dv = -tx * sy;
            terms.push((s, p, du, dv, wt));
        }
        for ch in 0..3 {
            val[ch] /= wsum;
        }
        for &(s, p, du, dv, _) in &terms {
            let g_w: f64 = (0..3).map(|ch| g[ch] * (src.data[3 * s + ch] - val[ch]) / wsum).sum();
            let iz = 1.0 / p.z;
            let dp = Vec3::new(
                g_w * du * k.fx * iz,
                g_w * dv * k.fy * iz,
                -g_w * (du * k.fx * p.x + dv * k.fy * p.y) * iz * iz,
            );
            let g_z = dp.dot(&(geo.rot * geo.ray(s)));
            gd[s] += g_z / alpha[s];
            ga[s] -= g_z * depth[s] / (alpha[s] * alpha[s]);
        }
    }
    (gd, ga)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Quat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> Intrinsics {
        Intrinsics::new(40.0, 40.0, 15.5, 11.5, 32, 24).unwrap()
    }

    fn textured(rng: &mut ChaCha8Rng, k: &Intrinsics) -> RgbImage {
        RgbImage {
            width: k.width,
            height: k.height,
            data: (0..k.width * k.height * 3).map(|_| rng.random()).collect(),
        }
    }

    #[test]
    fn identity_transform_is_identity_on_valid_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = cam();
        let src = textured(&mut rng, &k);
        let n = k.width * k.height;
        let alpha: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.8) { rng.random_range(0.6..1.0) } else { 0.2 }).collect();
        let depth: Vec<f64> = alpha.iter().map(|a| a * rng.random_range(2.0..5.0)).collect();
        let r = warp_image(&src, &depth, &alpha, &Pose::identity(), &k);
        for i in 0..n {
            assert_eq!(r.mask[i], alpha[i] > 0.5);
            if r.mask[i] {
                assert_eq!(r.image.data[3 * i..3 * i + 3], src.data[3 * i..3 * i + 3]);
            }
        }
    }

    #[test]
    fn fronto_parallel_shift() {
        // shift of fx * delta / d = 40 * 0.25 / 5 = 2 px
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = cam();
        let src = textured(&mut rng, &k);
        let n = k.width * k.height;
        let depth = vec![5.0; n];
        let alpha = vec![1.0; n];
        // moving the camera +x shifts content by -2 px
        let t = Pose::new(Quat::IDENTITY, Vec3::new(-0.25, 0.0, 0.0)).unwrap();
        let r = warp_image(&src, &depth, &alpha, &t, &k);
        for y in 0..k.height {
            for x in 0..k.width {
                let i = y * k.width + x;
                if x + 2 < k.width {
                    assert!(r.mask[i]);
                    for ch in 0..3 {
                        assert!((r.image.data[3 * i + ch] - src.data[3 * (i + 2) + ch]).abs() < 1e-9);
                    }
                } else {
                    assert!(!r.mask[i]);
                }
            }
        }
    }

    #[test]
    fn forward_motion_scales_about_principal_point() {
        // plane at d = 4, camera moves dz = 2 toward it: magnification 2
        let k = Intrinsics::new(40.0, 40.0, 16.0, 12.0, 33, 25).unwrap();
        let n = k.width * k.height;
        let mut src = RgbImage::new(k.width, k.height);
        for y in 0..k.height {
            for x in 0..k.width {
                // affine intensity so bilinear averaging stays exact
                let v = 0.01 * x as f64 + 0.02 * y as f64;
                src.set_pixel(x, y, [v, 0.5 * v, 0.1]);
            }
        }
        let t = Pose::new(Quat::IDENTITY, Vec3::new(0.0, 0.0, -2.0)).unwrap();
        let r = warp_image(&src, &vec![4.0; n], &vec![1.0; n], &t, &k);
        let s = 4.0 / (4.0 - 2.0);
        for y in 0..k.height {
            for x in 0..k.width {
                let i = y * k.width + x;
                if !r.mask[i] {
                    continue;
                }
                let xs = 16.0 + (x as f64 - 16.0) / s;
                let ys = 12.0 + (y as f64 - 12.0) / s;
                let want = 0.01 * xs + 0.02 * ys;
                assert!((r.image.data[3 * i] - want).abs() < 1e-9, "({x},{y})");
            }
        }
        // the center region is fully covered
        assert!(r.mask[12 * k.width + 16]);
    }

    #[test]
    fn occluded_samples_are_dropped() {
        let k = cam();
        let n = k.width * k.height;
        let mut src = RgbImage::filled(k.width, k.height, [0.0; 3]);
        let mut depth = vec![10.0; n];
        let alpha = vec![1.0; n];
        // a near column at x = 10 that slides onto the far background
        for y in 0..k.height {
            let i = y * k.width + 10;
            depth[i] = 2.0;
            src.data[3 * i] = 1.0;
        }
        let t = Pose::new(Quat::IDENTITY, Vec3::new(-0.1, 0.0, 0.0)).unwrap();
        let r = warp_image(&src, &depth, &alpha, &t, &k);
        // near column moves 2 px, far background 0.4 px
        let i = 5 * k.width + 8;
        assert!(r.mask[i]);
        assert_eq!(r.image.data[3 * i], 1.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = cam();
        let n = k.width * k.height;
        let src = textured(&mut rng, &k);
        let alpha: Vec<f64> = (0..n).map(|_| rng.random_range(0.6..0.95)).collect();
        let depth: Vec<f64> = alpha.iter().map(|a| a * rng.random_range(3.0..3.3)).collect();
        let t = Pose::new(Quat::new(1.0, 0.01, -0.02, 0.01), Vec3::new(0.13, -0.07, 0.2)).unwrap();
        let plan = plan_warp(&depth, &alpha, &t, &k);
        let g: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |d: &[f64], a: &[f64]| -> f64 {
            let r = apply_warp(&plan, &src, d, a, &t, &k);
            r.image.data.iter().zip(&g).map(|(x, y)| x * y).sum()
        };
        let (gd, ga) = warp_backward(&plan, &src, &depth, &alpha, &t, &k, &g);
        let h = 1e-7;
        let mut checked = 0;
        for s in (0..n).step_by(5) {
            for (which, an) in [(0, gd[s]), (1, ga[s])] {
                let (mut dp, mut ap) = (depth.clone(), alpha.clone());
                let (mut dm, mut am) = (depth.clone(), alpha.clone());
                if which == 0 {
                    dp[s] += h;
                    dm[s] -= h;
                } else {
                    ap[s] += h;
                    am[s] -= h;
                }
                let fd = (f(&dp, &ap) - f(&dm, &am)) / (2.0 * h);
                assert!((fd - an).abs() <= 1e-5 * fd.abs().max(1e-2), "{s}/{which}: {fd} vs {an}");
                checked += usize::from(an != 0.0);
            }
        }
        assert!(checked > 20);
    }
}
