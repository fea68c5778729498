//! Seeded synthetic scenes: a textured ground plane, striped perimeter walls
//! and checkered boxes, observed along a gently curving forward trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ply::ColoredPointCloud;
use crate::error::Result;
use crate::geom::{Intrinsics, Mat3, Pose, Quat, Vec3};
use crate::image::RgbImage;
use crate::map::Gaussian3D;
use crate::raster::{render_reference, RenderConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Side of the square area holding the scene, centered on the origin.
    pub extent: f64,
    pub ground_spacing: f64,
    /// Spacing of the finely tiled paving inside the corridor. Zero leaves
    /// the corridor on the coarse ground grid.
    pub paving_spacing: f64,
    /// Scale of the per-splat random color variation.
    pub color_jitter: f64,
    pub boxes: usize,
    pub box_spacing: f64,
    /// Perimeter walls are skipped when this is zero.
    pub wall_height: f64,
    pub wall_spacing: f64,
    /// Half-width of the box-free band around the camera path.
    pub corridor: f64,
    pub frames: usize,
    pub frame_step: f64,
    /// Lateral amplitude of the sinusoidal path.
    pub path_amplitude: f64,
    pub camera_height: f64,
    /// Downward pitch in radians.
    pub pitch: f64,
    pub intrinsics: Intrinsics,
    pub background: [f64; 3],
    /// Standard deviation of the init-cloud position noise.
    pub init_noise: f64,
    /// Fraction of Gaussian centers kept in the init cloud.
    pub init_keep: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec::plaza()
    }
}

impl SceneSpec {
    /// Open 40 m plaza for relocalization benchmarks.
    pub fn plaza() -> Self {
        SceneSpec {
            extent: 40.0,
            ground_spacing: 2.0,
            paving_spacing: 0.6,
            color_jitter: 1.0,
            boxes: 14,
            box_spacing: 0.9,
            wall_height: 4.0,
            wall_spacing: 1.4,
            corridor: 3.0,
            frames: 30,
            frame_step: 0.5,
            path_amplitude: 1.5,
            camera_height: 1.6,
            pitch: 0.12,
            intrinsics: default_intrinsics(),
            background: [0.62, 0.74, 0.9],
            init_noise: 0.5,
            init_keep: 0.5,
        }
    }

    /// Small walled courtyard for training benchmarks.
    pub fn courtyard() -> Self {
        SceneSpec {
            extent: 12.0,
            ground_spacing: 0.9,
            paving_spacing: 0.0,
            color_jitter: 0.25,
            boxes: 4,
            box_spacing: 0.5,
            wall_height: 2.5,
            wall_spacing: 0.8,
            corridor: 1.2,
            frames: 24,
            frame_step: 0.15,
            path_amplitude: 0.4,
            camera_height: 1.4,
            pitch: 0.15,
            intrinsics: default_intrinsics(),
            background: [0.62, 0.74, 0.9],
            init_noise: 0.05,
            init_keep: 0.5,
        }
    }
}

fn default_intrinsics() -> Intrinsics {
    Intrinsics::new(100.0, 100.0, 79.5, 59.5, 160, 120).expect("valid intrinsics")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub gaussians: Vec<Gaussian3D>,
    /// World-to-camera poses with frame-index timestamps.
    pub trajectory: Vec<Pose>,
    pub images: Vec<RgbImage>,
    /// Metric depth per pixel, zero where alpha is at most one half.
    pub depths: Vec<Vec<f64>>,
    pub init_cloud: ColoredPointCloud,
}

/// Lateral offset of the camera path at `x`.
fn path_y(spec: &SceneSpec, x: f64) -> f64 {
    let period = (spec.frames as f64 * spec.frame_step).max(1.0) * 1.25;
    spec.path_amplitude * (std::f64::consts::TAU * x / period).sin()
}

pub fn trajectory(spec: &SceneSpec) -> Vec<Pose> {
    let len = spec.frame_step * spec.frames.saturating_sub(1) as f64;
    (0..spec.frames)
        .map(|i| {
            let x = -len / 2.0 + i as f64 * spec.frame_step;
            let y = path_y(spec, x);
            let dy = (path_y(spec, x + 1e-3) - path_y(spec, x - 1e-3)) / 2e-3;
            let yaw = dy.atan() + 0.03 * (i as f64 * 0.7).sin();
            Pose::looking(Vec3::new(x, y, spec.camera_height), yaw, spec.pitch).with_timestamp(Some(i as f64))
        })
        .collect()
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn clamp01(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| v.clamp(0.0, 1.0))
}

/// Disc standard deviation as a fraction of the sample spacing.
const DISC_RADIUS: f64 = 0.45;

/// Gaussian flattened along the third axis of `frame` (columns: two in-plane
/// directions and the normal).
fn disc(center: Vec3, frame: &Mat3, radius: f64, color: [f64; 3], opacity: f64) -> Gaussian3D {
    let q = Quat::from_rotation(frame);
    Gaussian3D::new(center.into(), [radius, radius, 0.03], q, clamp01(color), opacity)
        .expect("generated gaussian is valid")
}

fn ground(spec: &SceneSpec, rng: &mut ChaCha8Rng, out: &mut Vec<Gaussian3D>) {
    let half = spec.extent / 2.0;
    let n = (spec.extent / spec.ground_spacing).floor() as usize + 1;
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.05..0.35),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let dark = [0.25, 0.24, 0.2];
    let light = [0.7, 0.64, 0.52];
    for i in 0..n {
        for j in 0..n {
            let s = spec.ground_spacing;
            let x = -half + i as f64 * s + rng.random_range(-0.25..0.25) * s;
            let y = -half + j as f64 * s + rng.random_range(-0.25..0.25) * s;
            let t: f64 = waves
                .iter()
                .map(|(f, dir, ph)| (f * (x * dir.cos() + y * dir.sin()) + ph).sin())
                .sum::<f64>()
                / 8.0
                + 0.5;
            let noise = spec.color_jitter * rng.random_range(-0.2..0.2);
            let c = mix(dark, light, t).map(|v| v + noise);
            let frame = crate::geom::rot_z(rng.random_range(0.0..std::f64::consts::PI));
            if paved(spec, x, y) {
                continue;
            }
            out.push(disc(Vec3::new(x, y, 0.0), &frame, DISC_RADIUS * s, c, 0.97));
        }
    }
    paving(spec, rng, out);
}

fn paved(spec: &SceneSpec, x: f64, y: f64) -> bool {
    spec.paving_spacing > 0.0 && (y - path_y(spec, x)).abs() < spec.corridor
}

/// Small tiles of strongly varying tone along the camera path.
fn paving(spec: &SceneSpec, rng: &mut ChaCha8Rng, out: &mut Vec<Gaussian3D>) {
    let s = spec.paving_spacing;
    if s <= 0.0 {
        return;
    }
    let half = spec.extent / 2.0;
    let palette = [[0.15, 0.14, 0.13], [0.55, 0.5, 0.45], [0.85, 0.8, 0.7], [0.45, 0.25, 0.18]];
    let nx = (spec.extent / s).floor() as usize + 1;
    let ny = (2.0 * spec.corridor / s).floor() as usize + 1;
    for i in 0..nx {
        let x = -half + i as f64 * s;
        for j in 0..ny {
            let y = path_y(spec, x) - spec.corridor + (j as f64 + 0.5) * s;
            if y.abs() > half {
                continue;
            }
            let base = palette[rng.random_range(0..palette.len())];
            let c = base.map(|v| v + rng.random_range(-0.05..0.05));
            let frame = crate::geom::rot_z(rng.random_range(0.0..std::f64::consts::PI));
            out.push(disc(Vec3::new(x, y, 0.0), &frame, DISC_RADIUS * s, c, 0.97));
        }
    }
}

/// Fills a vertical rectangle spanned by `along` (unit, horizontal) and
/// world z, starting at `origin`.
#[allow(clippy::too_many_arguments)]
fn facade(
    origin: Vec3,
    along: Vec3,
    length: f64,
    height: f64,
    spacing: f64,
    color: impl Fn(usize, usize, &mut ChaCha8Rng) -> [f64; 3],
    rng: &mut ChaCha8Rng,
    out: &mut Vec<Gaussian3D>,
) {
    let nu = (length / spacing).round().max(1.0) as usize;
    let nv = (height / spacing).round().max(1.0) as usize;
    let (du, dv) = (length / nu as f64, height / nv as f64);
    let normal = along.cross(&Vec3::z());
    let frame = Mat3::from_columns(&[along, Vec3::z(), normal]);
    for a in 0..nu {
        for b in 0..nv {
            let p = origin + along * ((a as f64 + 0.5) * du) + Vec3::z() * ((b as f64 + 0.5) * dv);
            let c = color(a, b, rng);
            out.push(disc(p, &frame, DISC_RADIUS * du.max(dv), c, 0.95));
        }
    }
}

fn walls(spec: &SceneSpec, rng: &mut ChaCha8Rng, out: &mut Vec<Gaussian3D>) {
    let jitter = spec.color_jitter;
    if spec.wall_height <= 0.0 {
        return;
    }
    let half = spec.extent / 2.0;
    let corners = [
        Vec3::new(-half, -half, 0.0),
        Vec3::new(half, -half, 0.0),
        Vec3::new(half, half, 0.0),
        Vec3::new(-half, half, 0.0),
    ];
    for w in 0..4 {
        let a = corners[w];
        let b = corners[(w + 1) % 4];
        let along = (b - a).normalize();
        let base = [rng.random_range(0.2..0.9), rng.random_range(0.2..0.9), rng.random_range(0.2..0.9)];
        let nu = (spec.extent / spec.wall_spacing).round().max(1.0) as usize;
        // irregular vertical bands so each wall reads differently along its length
        let bands: Vec<f64> = {
            let mut v = Vec::with_capacity(nu);
            let mut level = rng.random_range(0.4..1.0);
            for _ in 0..nu {
                if rng.random_bool(0.3) {
                    level = rng.random_range(0.35..1.1);
                }
                v.push(level);
            }
            v
        };
        let stripe = rng.random_range(1..4);
        facade(
            a,
            along,
            spec.extent,
            spec.wall_height,
            spec.wall_spacing,
            |i, j, r| {
                let row = if j % (stripe + 1) == stripe { 0.55 } else { 1.0 };
                base.map(|v| v * bands[i] * row + jitter * r.random_range(-0.15..0.15))
            },
            rng,
            out,
        );
    }
}

fn boxes(spec: &SceneSpec, rng: &mut ChaCha8Rng, out: &mut Vec<Gaussian3D>) {
    let jitter = spec.color_jitter;
    let half = spec.extent / 2.0;
    let mut placed = 0;
    let mut tries = 0;
    while placed < spec.boxes && tries < 1000 * (spec.boxes + 1) {
        tries += 1;
        let size = spec.extent / 20.0;
        let w = rng.random_range(0.5..1.5) * size;
        let d = rng.random_range(0.5..1.5) * size;
        let h = rng.random_range(0.8..2.5) * size;
        let cx = rng.random_range(-half + w..half - w);
        let cy = rng.random_range(-half + d..half - d);
        if (cy - path_y(spec, cx)).abs() < spec.corridor + w.max(d) {
            continue;
        }
        let yaw = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
        let r = crate::geom::rot_z(yaw);
        let ex = r * Vec3::x();
        let ey = r * Vec3::y();
        let c = Vec3::new(cx, cy, 0.0);
        let hx = ex * (w / 2.0);
        let hy = ey * (d / 2.0);
        // counter-clockwise faces with outward normals
        let faces = [
            (c - hx - hy, ex, w),
            (c + hx - hy, ey, d),
            (c + hx + hy, -ex, w),
            (c - hx + hy, -ey, d),
        ];
        let base = [rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)];
        for (origin, along, len) in faces {
            facade(
                origin,
                along,
                len,
                h,
                spec.box_spacing,
                |i, j, r| {
                    let k = if (i + j) % 2 == 0 { 1.0 } else { 0.45 };
                    base.map(|v| v * k + jitter * r.random_range(-0.12..0.12))
                },
                rng,
                out,
            );
        }
        placed += 1;
    }
}

/// Ground-truth Gaussians of the scene described by `spec`.
pub fn scene_gaussians(seed: u64, spec: &SceneSpec) -> Vec<Gaussian3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    ground(spec, &mut rng, &mut out);
    walls(spec, &mut rng, &mut out);
    boxes(spec, &mut rng, &mut out);
    out
}

/// Jittered, subsampled Gaussian centers with their colors.
pub fn init_cloud(gaussians: &[Gaussian3D], noise: f64, keep: f64, rng: &mut impl Rng) -> ColoredPointCloud {
    let mut pc = ColoredPointCloud::default();
    for g in gaussians {
        if keep < 1.0 && !rng.random_bool(keep.clamp(0.0, 1.0)) {
            continue;
        }
        let mut p = g.mu;
        if noise > 0.0 {
            for v in &mut p {
                *v += noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        pc.points.push(p);
        pc.colors.push(g.color);
    }
    pc
}

pub fn synth_scene(seed: u64, spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.intrinsics.validate()?;
    let gaussians = scene_gaussians(seed, spec);
    let trajectory = trajectory(spec);
    let cfg = RenderConfig::default();
    let k = &spec.intrinsics;
    let mut images = Vec::with_capacity(trajectory.len());
    let mut depths = Vec::with_capacity(trajectory.len());
    for pose in &trajectory {
        let frame = render_reference(&gaussians, pose, k, spec.background, &cfg);
        let depth = frame
            .depth
            .iter()
            .zip(&frame.alpha)
            .map(|(d, a)| if *a > 0.5 { d / a } else { 0.0 })
            .collect();
        images.push(frame.into_color_image());
        depths.push(depth);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c10d);
    let init_cloud = init_cloud(&gaussians, spec.init_noise, spec.init_keep, &mut rng);
    Ok(SyntheticScene {
        spec: spec.clone(),
        gaussians,
        trajectory,
        images,
        depths,
        init_cloud,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SceneSpec {
        SceneSpec {
            frames: 3,
            intrinsics: Intrinsics::new(40.0, 40.0, 31.5, 23.5, 64, 48).unwrap(),
            ..SceneSpec::plaza()
        }
    }

    #[test]
    fn same_seed_gives_identical_scenes() {
        let a = synth_scene(3, &tiny()).unwrap();
        let b = synth_scene(3, &tiny()).unwrap();
        assert_eq!(a, b);
        let c = synth_scene(4, &tiny()).unwrap();
        assert_ne!(a.gaussians, c.gaussians);
    }

    #[test]
    fn gaussian_counts_are_in_range() {
        for spec in [SceneSpec::plaza(), SceneSpec::courtyard()] {
            let n = scene_gaussians(0, &spec).len();
            assert!((200..=2000).contains(&n), "{n}");
        }
    }

    #[test]
    fn exact_init_cloud_equals_centers() {
        let gs = scene_gaussians(1, &tiny());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pc = init_cloud(&gs, 0.0, 1.0, &mut rng);
        assert_eq!(pc.points, gs.iter().map(|g| g.mu).collect::<Vec<_>>());
    }

    #[test]
    fn depth_is_positive_where_opaque() {
        let s = synth_scene(2, &tiny()).unwrap();
        let k = &s.spec.intrinsics;
        for pose in &s.trajectory {
            let f = render_reference(&s.gaussians, pose, k, s.spec.background, &RenderConfig::default());
            for (d, a) in f.depth.iter().zip(&f.alpha) {
                if *a > 0.5 {
                    assert!(d / a > 0.0);
                }
            }
        }
        for d in &s.depths {
            assert!(d.iter().any(|v| *v > 0.0));
        }
    }
}
