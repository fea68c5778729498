//! CPU Gaussian splatting rasterizer.
//!
//! Gaussians are projected to 2D splats, sorted front to back by camera
//! depth and alpha-composited per pixel. The per-pixel weight of a splat is
//! `q = min(o * k * exp(-0.5 d^T cov2d^-1 d), max_weight)` where `k` is 1
//! unless EWA normalization is enabled. Color and depth share the same
//! weights; depth is left unnormalized by the accumulated alpha.
//!
//! [`render`] bins splats into square tiles and composites tiles in
//! parallel. [`render_reference`] walks every pixel over every splat and is
//! the equivalence oracle for the tiled path.

mod backward;
mod project;

pub use backward::{render_backward, GaussianGrads, ImageGrads};
pub use project::{project_gaussian, Projection, Splat2D};

use rayon::prelude::*;

use crate::geom::{Intrinsics, Pose};
use crate::image::{GrayImage, RgbImage};
use crate::map::Gaussian3D;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Multiply the footprint by `det` of the projection Jacobian's 2x2 block.
    pub ewa_normalization: bool,
    /// Added to the diagonal of every 2D covariance, in px^2.
    pub low_pass: f64,
    /// Weights below this are skipped. Zero disables the cutoff.
    pub min_weight: f64,
    pub max_weight: f64,
    /// Compositing stops once transmittance falls below this.
    pub transmittance_stop: f64,
    pub tile_size: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            ewa_normalization: false,
            low_pass: 0.3,
            min_weight: 1.0 / 255.0,
            max_weight: 0.99,
            transmittance_stop: 1e-4,
            tile_size: 16,
        }
    }
}

impl RenderConfig {
    /// No weight cutoff and no early termination: every splat reaches every
    /// pixel, which makes the image a smooth function of the parameters.
    pub fn smooth() -> Self {
        RenderConfig {
            min_weight: 0.0,
            transmittance_stop: 0.0,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderStats {
    pub visible: usize,
    pub culled: usize,
    pub singular: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB.
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
    pub stats: RenderStats,
}

impl RenderedFrame {
    pub fn color_image(&self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.color.clone(),
        }
    }

    pub fn into_color_image(self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.color,
        }
    }

    pub fn gray(&self) -> GrayImage {
        self.color_image().to_gray()
    }

    /// Depth divided by alpha where alpha exceeds one half.
    pub fn metric_depth(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        let a = self.alpha[i];
        (a > 0.5).then(|| self.depth[i] / a)
    }
}

/// Sorted splats plus projection diagnostics for one camera.
pub(crate) struct Prepared {
    pub splats: Vec<Splat2D>,
    pub stats: RenderStats,
}

pub(crate) fn prepare(gaussians: &[Gaussian3D], pose: &Pose, k: &Intrinsics, cfg: &RenderConfig) -> Prepared {
    let r = pose.rotation_matrix();
    let mut stats = RenderStats::default();
    let mut splats = Vec::with_capacity(gaussians.len());
    for (i, g) in gaussians.iter().enumerate() {
        match project::project_with_rotation(g, i, &r, pose, k, cfg) {
            Projection::Visible(s) => splats.push(s),
            Projection::Culled => stats.culled += 1,
            Projection::Singular => stats.singular += 1,
        }
    }
    // ties on depth fall back to input order
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.source_index.cmp(&b.source_index))
    });
    stats.visible = splats.len();
    Prepared { splats, stats }
}

/// Footprint weight of `s` at pixel `(px, py)`, or `None` below the cutoff.
/// Returns `(q, exp_term, clamped)`.
#[inline]
pub(crate) fn splat_weight(s: &Splat2D, px: f64, py: f64, cfg: &RenderConfig) -> Option<(f64, f64, bool)> {
    // outside the bounds the weight is provably below the cutoff
    let [x0, y0, x1, y1] = s.bbox;
    if px < x0 as f64 || px > x1 as f64 || py < y0 as f64 || py > y1 as f64 {
        return None;
    }
    weight_in_bounds(s, px, py, cfg)
}

/// [`splat_weight`] for a pixel already known to lie inside `s.bbox`.
#[inline]
fn weight_in_bounds(s: &Splat2D, px: f64, py: f64, cfg: &RenderConfig) -> Option<(f64, f64, bool)> {
    let dx = px - s.center[0];
    let dy = py - s.center[1];
    let power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
    if power < s.min_power {
        return None;
    }
    let e = power.exp();
    let raw = s.opacity * s.kernel_scale * e;
    if raw < cfg.min_weight || raw <= 0.0 {
        return None;
    }
    if raw > cfg.max_weight {
        Some((cfg.max_weight, e, true))
    } else {
        Some((raw, e, false))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelOut {
    pub color: [f64; 3],
    pub depth: f64,
    pub transmittance: f64,
}

#[inline]
pub(crate) fn composite_pixel<'a>(
    splats: impl Iterator<Item = &'a Splat2D>,
    px: f64,
    py: f64,
    background: [f64; 3],
    cfg: &RenderConfig,
) -> PixelOut {
    let mut t = 1.0;
    let mut c = [0.0; 3];
    let mut d = 0.0;
    for s in splats {
        let Some((q, _, _)) = splat_weight(s, px, py, cfg) else {
            continue;
        };
        let w = q * t;
        c[0] += s.color[0] * w;
        c[1] += s.color[1] * w;
        c[2] += s.color[2] * w;
        d += s.depth * w;
        t *= 1.0 - q;
        if t < cfg.transmittance_stop {
            break;
        }
    }
    for ch in 0..3 {
        c[ch] += background[ch] * t;
    }
    PixelOut {
        color: c,
        depth: d,
        transmittance: t,
    }
}

/// Composites one tile splat by splat, visiting only the pixels inside each
/// splat's bounds. Per pixel this performs exactly the operations of
/// [`composite_pixel`] in the same order.
fn composite_tile(
    list: &[u32],
    splats: &[Splat2D],
    xs: std::ops::Range<usize>,
    ys: std::ops::Range<usize>,
    background: [f64; 3],
    cfg: &RenderConfig,
) -> Vec<PixelOut> {
    let tw = xs.len();
    let mut px = vec![
        PixelOut {
            color: [0.0; 3],
            depth: 0.0,
            transmittance: 1.0,
        };
        tw * ys.len()
    ];
    let mut live = px.len();
    for &si in list {
        if live == 0 {
            break;
        }
        let s = &splats[si as usize];
        let [bx0, by0, bx1, by1] = s.bbox;
        for y in ys.start.max(by0)..ys.end.min(by1 + 1) {
            for x in xs.start.max(bx0)..xs.end.min(bx1 + 1) {
                let p = &mut px[(y - ys.start) * tw + (x - xs.start)];
                if p.transmittance < cfg.transmittance_stop {
                    continue;
                }
                let Some((q, _, _)) = splat_weight(s, x as f64, y as f64, cfg) else {
                    continue;
                };
                let w = q * p.transmittance;
                p.color[0] += s.color[0] * w;
                p.color[1] += s.color[1] * w;
                p.color[2] += s.color[2] * w;
                p.depth += s.depth * w;
                p.transmittance *= 1.0 - q;
                if p.transmittance < cfg.transmittance_stop {
                    live -= 1;
                }
            }
        }
    }
    for p in &mut px {
        for ch in 0..3 {
            p.color[ch] += background[ch] * p.transmittance;
        }
    }
    px
}

fn empty_frame(k: &Intrinsics, stats: RenderStats) -> RenderedFrame {
    let n = k.width * k.height;
    RenderedFrame {
        width: k.width,
        height: k.height,
        color: vec![0.0; n * 3],
        depth: vec![0.0; n],
        alpha: vec![0.0; n],
        stats,
    }
}

fn write_pixel(frame: &mut RenderedFrame, i: usize, p: &PixelOut) {
    frame.color[i * 3..i * 3 + 3].copy_from_slice(&p.color);
    frame.depth[i] = p.depth;
    frame.alpha[i] = 1.0 - p.transmittance;
}

/// Tile grid with per-tile splat lists in depth order.
pub(crate) struct Tiling {
    pub size: usize,
    pub nx: usize,
    pub lists: Vec<Vec<u32>>,
}

impl Tiling {
    pub fn build(splats: &[Splat2D], k: &Intrinsics, size: usize) -> Tiling {
        let size = size.max(1);
        let nx = k.width.div_ceil(size);
        let ny = k.height.div_ceil(size);
        let mut lists = vec![Vec::new(); nx * ny];
        for (i, s) in splats.iter().enumerate() {
            let [x0, y0, x1, y1] = s.bbox;
            for ty in y0 / size..=y1 / size {
                for tx in x0 / size..=x1 / size {
                    lists[ty * nx + tx].push(i as u32);
                }
            }
        }
        Tiling { size, nx, lists }
    }

    pub fn pixel_range(&self, tile: usize, k: &Intrinsics) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let tx = tile % self.nx;
        let ty = tile / self.nx;
        let xs = tx * self.size..((tx + 1) * self.size).min(k.width);
        let ys = ty * self.size..((ty + 1) * self.size).min(k.height);
        (xs, ys)
    }
}

/// Renders color, depth and alpha. Tiles are composited in parallel.
pub fn render(
    gaussians: &[Gaussian3D],
    pose: &Pose,
    k: &Intrinsics,
    background: [f64; 3],
    cfg: &RenderConfig,
) -> RenderedFrame {
    let prep = prepare(gaussians, pose, k, cfg);
    let tiling = Tiling::build(&prep.splats, k, cfg.tile_size);
    let tiles: Vec<Vec<PixelOut>> = (0..tiling.lists.len())
        .into_par_iter()
        .map(|tile| {
            let (xs, ys) = tiling.pixel_range(tile, k);
            composite_tile(&tiling.lists[tile], &prep.splats, xs, ys, background, cfg)
        })
        .collect();
    let mut frame = empty_frame(k, prep.stats);
    for (tile, pixels) in tiles.iter().enumerate() {
        let (xs, ys) = tiling.pixel_range(tile, k);
        let mut it = pixels.iter();
        for y in ys {
            for x in xs.clone() {
                write_pixel(&mut frame, y * k.width + x, it.next().unwrap());
            }
        }
    }
    frame
}

/// Single-threaded per-pixel renderer over the full sorted splat list.
pub fn render_reference(
    gaussians: &[Gaussian3D],
    pose: &Pose,
    k: &Intrinsics,
    background: [f64; 3],
    cfg: &RenderConfig,
) -> RenderedFrame {
    let prep = prepare(gaussians, pose, k, cfg);
    let mut frame = empty_frame(k, prep.stats);
    for y in 0..k.height {
        for x in 0..k.width {
            let p = composite_pixel(prep.splats.iter(), x as f64, y as f64, background, cfg);
            write_pixel(&mut frame, y * k.width + x, &p);
        }
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Quat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam(w: usize, h: usize) -> Intrinsics {
        Intrinsics::new(60.0, 60.0, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h).unwrap()
    }

    pub(crate) fn random_scene(rng: &mut impl Rng, n: usize) -> Vec<Gaussian3D> {
        (0..n)
            .map(|_| {
                Gaussian3D::new(
                    [
                        rng.random_range(-1.5..1.5),
                        rng.random_range(-1.5..1.5),
                        rng.random_range(2.0..6.0),
                    ],
                    [
                        rng.random_range(0.05..0.5),
                        rng.random_range(0.05..0.5),
                        rng.random_range(0.05..0.5),
                    ],
                    Quat::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0.2..1.0),
                    ),
                    [rng.random(), rng.random(), rng.random()],
                    rng.random_range(0.05..0.99),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn empty_scene_is_background() {
        let f = render(&[], &Pose::identity(), &cam(20, 10), [0.0; 3], &RenderConfig::default());
        assert!(f.color.iter().chain(&f.depth).chain(&f.alpha).all(|v| *v == 0.0));
        let f = render(&[], &Pose::identity(), &cam(4, 4), [0.2, 0.3, 0.4], &RenderConfig::default());
        assert_eq!(f.color[..3], [0.2, 0.3, 0.4]);
    }

    #[test]
    fn single_opaque_splat_closed_form() {
        let k = cam(21, 21);
        let c = [0.9, 0.5, 0.1];
        let bg = [0.2, 0.4, 0.6];
        let g = Gaussian3D::isotropic([0.0, 0.0, 3.0], 0.2, c, 1.0 - 1e-9).unwrap();
        let f = render(&[g], &Pose::identity(), &k, bg, &RenderConfig::default());
        let i = 10 * 21 + 10;
        for ch in 0..3 {
            assert!((f.color[i * 3 + ch] - (0.99 * c[ch] + 0.01 * bg[ch])).abs() < 1e-12);
        }
        assert!((f.depth[i] - 0.99 * 3.0).abs() < 1e-12);
        assert!((f.alpha[i] - 0.99).abs() < 1e-12);
    }

    #[test]
    fn two_layer_compositing() {
        let k = cam(11, 11);
        let front = Gaussian3D::isotropic([0.0, 0.0, 2.0], 0.05, [1.0, 0.0, 0.0], 0.5).unwrap();
        let back = Gaussian3D::isotropic([0.0, 0.0, 4.0], 0.05, [0.0, 0.0, 1.0], 0.5).unwrap();
        let cfg = RenderConfig::default();
        let f = render(&[back, front], &Pose::identity(), &k, [0.0; 3], &cfg);
        let i = 5 * 11 + 5;
        // both splats sit exactly on the pixel so exp term is 1
        assert!((f.color[i * 3] - 0.5).abs() < 1e-12);
        assert!((f.color[i * 3 + 2] - 0.25).abs() < 1e-12);
        let f = render(&[back, front], &Pose::identity(), &k, [1.0, 1.0, 1.0], &cfg);
        assert!((f.color[i * 3 + 1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn tiled_equals_reference_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let scene = random_scene(&mut rng, 60);
            let k = cam(64, 48);
            let bg = [rng.random(), rng.random(), rng.random()];
            let cfg = RenderConfig::default();
            let a = render(&scene, &Pose::identity(), &k, bg, &cfg);
            let b = render_reference(&scene, &Pose::identity(), &k, bg, &cfg);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn compositing_weights_telescope() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let scene = random_scene(&mut rng, 80);
        let k = cam(48, 48);
        // white background and white splats: color = sum q T + T_final
        let white: Vec<Gaussian3D> = scene.iter().map(|g| Gaussian3D { color: [1.0; 3], ..*g }).collect();
        let f = render(&white, &Pose::identity(), &k, [1.0; 3], &RenderConfig::default());
        for px in f.color.chunks_exact(3) {
            assert!((px[0] - 1.0).abs() < 1e-6);
        }
        assert!(f.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn depth_is_zero_where_alpha_is_zero() {
        let g = Gaussian3D::isotropic([0.0, 0.0, 3.0], 0.05, [1.0; 3], 0.9).unwrap();
        let f = render(&[g], &Pose::identity(), &cam(64, 64), [0.0; 3], &RenderConfig::default());
        for (a, d) in f.alpha.iter().zip(&f.depth) {
            if *a == 0.0 {
                assert_eq!(*d, 0.0);
            }
        }
        assert!(f.alpha.iter().any(|a| *a == 0.0));
    }

    #[test]
    fn alpha_is_monotone_in_opacity() {
        let k = cam(16, 16);
        let mut prev: Option<Vec<f64>> = None;
        for step in 1..20 {
            let o = step as f64 / 20.0;
            let g = Gaussian3D::isotropic([0.1, -0.05, 2.5], 0.2, [0.3; 3], o).unwrap();
            let f = render(&[g], &Pose::identity(), &k, [0.0; 3], &RenderConfig::default());
            if let Some(p) = &prev {
                assert!(f.alpha.iter().zip(p).all(|(a, b)| a >= b));
            }
            prev = Some(f.alpha);
        }
    }

    #[test]
    fn input_permutation_does_not_change_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let scene = random_scene(&mut rng, 40);
        let k = cam(40, 30);
        let a = render(&scene, &Pose::identity(), &k, [0.1; 3], &RenderConfig::default());
        let mut shuffled = scene.clone();
        shuffled.reverse();
        shuffled.swap(3, 17);
        let b = render(&shuffled, &Pose::identity(), &k, [0.1; 3], &RenderConfig::default());
        assert_eq!(a.color, b.color);
        assert_eq!(a.depth, b.depth);
    }

    #[test]
    fn behind_camera_gaussians_are_culled() {
        let g = Gaussian3D::isotropic([0.0, 0.0, -3.0], 0.2, [1.0; 3], 0.9).unwrap();
        let f = render(&[g], &Pose::identity(), &cam(8, 8), [0.0; 3], &RenderConfig::default());
        assert_eq!(f.stats.culled, 1);
        assert!(f.alpha.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn smooth_config_matches_reference_too() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let scene = random_scene(&mut rng, 12);
        let k = cam(32, 32);
        let cfg = RenderConfig::smooth();
        let a = render(&scene, &Pose::identity(), &k, [0.3; 3], &cfg);
        let b = render_reference(&scene, &Pose::identity(), &k, [0.3; 3], &cfg);
        assert_eq!(a, b);
    }
}
