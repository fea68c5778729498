//! Point-cloud colorization and Gaussian initialization.

use std::collections::HashMap;

use rayon::prelude::*;

use super::ply::ColoredPointCloud;
use crate::error::{Error, Result};
use crate::geom::{Intrinsics, Quat, Vec3};
use crate::map::Gaussian3D;
use crate::train::TrainFrame;

pub const INIT_OPACITY: f64 = 0.1;
pub const FALLBACK_SCALE: f64 = 0.1;
pub const MIN_SCALE: f64 = 0.01;
pub const MAX_SCALE: f64 = 2.0;
const NEIGHBORS: usize = 3;

/// Colors each point from the frame where it is nearest in depth among
/// frames that see it in bounds, unmasked and in front of the camera. Ties
/// go to the lower frame index. Points no frame sees are dropped.
pub fn colorize(points: &[[f64; 3]], frames: &[TrainFrame], k: &Intrinsics) -> Result<ColoredPointCloud> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("colorize needs at least one frame".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite point position".into()));
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
    let rotations: Vec<_> = frames.iter().map(|f| f.pose.rotation_matrix()).collect();
    let picked: Vec<Option<[f64; 3]>> = points
        .par_iter()
        .map(|p| {
            let p = Vec3::from(*p);
            let mut best: Option<(f64, [f64; 3])> = None;
            for (f, r) in frames.iter().zip(&rotations) {
                let pc = r * p + f.pose.translation;
                if !(pc.z > k.near) {
                    continue;
                }
                let u = (k.fx * pc.x / pc.z + k.cx).round();
                let v = (k.fy * pc.y / pc.z + k.cy).round();
                if !(u >= 0.0 && v >= 0.0 && u < k.width as f64 && v < k.height as f64) {
                    continue;
                }
                let (x, y) = (u as usize, v as usize);
                if f.mask.as_ref().is_some_and(|m| !m[y * k.width + x]) {
                    continue;
                }
                if best.is_none_or(|(z, _)| pc.z < z) {
                    best = Some((pc.z, f.image.pixel(x, y)));
                }
            }
            best.map(|(_, c)| c)
        })
        .collect();
    let mut pc = ColoredPointCloud::default();
    for (p, c) in points.iter().zip(picked) {
        if let Some(c) = c {
            pc.points.push(*p);
            pc.colors.push(c);
        }
    }
    Ok(pc)
}

/// Mean distance from each point to its `NEIGHBORS` nearest other points,
/// using a uniform hash grid.
pub fn mean_neighbor_distance(points: &[[f64; 3]]) -> Vec<f64> {
    let n = points.len();
    if n <= NEIGHBORS {
        return vec![f64::NAN; n];
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    // cells sized so each holds a few points on average
    let vol: f64 = (0..3).map(|a| (hi[a] - lo[a]).max(1e-6)).product();
    let cell = (vol * 4.0 / n as f64).cbrt().max(1e-6);
    let key = |p: &[f64; 3]| -> [i64; 3] { [0, 1, 2].map(|a| ((p[a] - lo[a]) / cell).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let max_ring = [0, 1, 2].map(|a| ((hi[a] - lo[a]) / cell).ceil() as i64 + 1).into_iter().max().unwrap();
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let c = key(p);
            let mut best = [f64::INFINITY; NEIGHBORS];
            let mut ring = 0i64;
            loop {
                for dx in -ring..=ring {
                    for dy in -ring..=ring {
                        for dz in -ring..=ring {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                                continue;
                            }
                            let Some(list) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                                continue;
                            };
                            for &j in list {
                                if j == i {
                                    continue;
                                }
                                let q = &points[j];
                                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                                if d < best[NEIGHBORS - 1] {
                                    best[NEIGHBORS - 1] = d;
                                    best.sort_by(f64::total_cmp);
                                }
                            }
                        }
                    }
                }
                // every point outside the searched rings is at least ring * cell away
                if best[NEIGHBORS - 1] <= ring as f64 * cell || ring > max_ring {
                    break;
                }
                ring += 1;
            }
            best.iter().sum::<f64>() / NEIGHBORS as f64
        })
        .collect()
}

/// One isotropic Gaussian per point, sized by its neighbor spacing.
pub fn init_gaussians(pc: &ColoredPointCloud) -> Result<Vec<Gaussian3D>> {
    pc.validate()?;
    if pc.is_empty() {
        return Err(Error::InvalidInput("point cloud is empty".into()));
    }
    let dists = mean_neighbor_distance(&pc.points);
    pc.points
        .iter()
        .zip(&pc.colors)
        .zip(dists)
        .map(|((p, c), d)| {
            let s = if pc.len() <= NEIGHBORS { FALLBACK_SCALE } else { d.clamp(MIN_SCALE, MAX_SCALE) };
            Gaussian3D::new(*p, [s; 3], Quat::IDENTITY, *c, INIT_OPACITY)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose;
    use crate::image::RgbImage;

    fn cam() -> Intrinsics {
        Intrinsics::new(10.0, 10.0, 4.5, 4.5, 10, 10).unwrap()
    }

    fn frame(color: [f64; 3], center: Vec3) -> TrainFrame {
        // identity orientation, camera looks along +z
        TrainFrame {
            image: RgbImage::filled(10, 10, color),
            pose: Pose::new(Quat::IDENTITY, -center).unwrap(),
            mask: None,
        }
    }

    #[test]
    fn point_takes_the_pixel_color() {
        let pc = colorize(&[[0.0, 0.0, 2.0]], &[frame([1.0, 0.0, 0.0], Vec3::zeros())], &cam()).unwrap();
        assert_eq!(pc.colors, vec![[1.0, 0.0, 0.0]]);
    }

    #[test]
    fn point_behind_cameras_is_dropped() {
        let pc = colorize(&[[0.0, 0.0, -2.0]], &[frame([1.0, 0.0, 0.0], Vec3::zeros())], &cam()).unwrap();
        assert!(pc.is_empty());
    }

    #[test]
    fn nearer_frame_wins_regardless_of_order() {
        let far = frame([0.0, 0.0, 1.0], Vec3::new(0.0, 0.0, -3.0));
        let near = frame([0.0, 1.0, 0.0], Vec3::new(0.0, 0.0, 1.0));
        let p = [[0.0, 0.0, 2.0]];
        let a = colorize(&p, &[far.clone(), near.clone()], &cam()).unwrap();
        let b = colorize(&p, &[near, far], &cam()).unwrap();
        assert_eq!(a.colors, vec![[0.0, 1.0, 0.0]]);
        assert_eq!(a, b);
    }

    #[test]
    fn masked_pixels_do_not_color() {
        let mut f = frame([1.0, 0.0, 0.0], Vec3::zeros());
        f.mask = Some(vec![false; 100]);
        let pc = colorize(&[[0.0, 0.0, 2.0]], &[f], &cam()).unwrap();
        assert!(pc.is_empty());
        assert!(colorize(&[[0.0; 3]], &[], &cam()).is_err());
    }

    #[test]
    fn single_point_uses_fallback_scale() {
        let pc = ColoredPointCloud::new(vec![[1.0, 2.0, 3.0]], vec![[0.2, 0.4, 0.6]]).unwrap();
        let gs = init_gaussians(&pc).unwrap();
        assert_eq!(gs.len(), 1);
        assert!((gs[0].scale()[0] - 0.1).abs() < 1e-12);
        assert!((gs[0].opacity() - 0.1).abs() < 1e-12);
        assert_eq!(gs[0].color, [0.2, 0.4, 0.6]);
    }

    #[test]
    fn grid_spacing_sets_the_scale() {
        let s = 0.7;
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                for l in 0..3 {
                    pts.push([i as f64 * s, j as f64 * s, l as f64 * s]);
                }
            }
        }
        let pc = ColoredPointCloud::new(pts.clone(), vec![[0.5; 3]; pts.len()]).unwrap();
        for g in init_gaussians(&pc).unwrap() {
            assert!((g.scale()[0] - s).abs() < 0.1 * s, "{}", g.scale()[0]);
        }
    }

    #[test]
    fn neighbor_distance_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<[f64; 3]> = (0..300)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0), rng.random::<f64>().powi(4) * 30.0])
            .collect();
        let fast = mean_neighbor_distance(&pts);
        for (i, p) in pts.iter().enumerate() {
            let mut d: Vec<f64> = pts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            let want = (d[0] + d[1] + d[2]) / 3.0;
            assert!((fast[i] - want).abs() < 1e-12, "{i}: {} vs {want}", fast[i]);
        }
    }
}
