//! Analytic gradients of the rendered images.
//!
//! Per pixel, the forward pass is replayed to recover each contributing
//! splat's weight `q_i` and transmittance `T_i`; walking the list backwards
//! with suffix sums gives `dC/dq_i = c_i T_i - S_i / (1 - q_i)` where `S_i`
//! is everything composited behind splat `i` (background included). The
//! resulting per-splat 2D gradients (center, conic, opacity, kernel scale,
//! color, depth) are chained through the covariance projection to the 3D
//! parameters once per Gaussian.

use rayon::prelude::*;

use super::project::projection_terms;
use super::{prepare, splat_weight, RenderConfig, Tiling};
use crate::error::{Error, Result};
use crate::geom::{Intrinsics, Mat3, Pose, Vec3};
use crate::map::{Gaussian3D, PARAM_COUNT};

/// Upstream gradients of a scalar loss with respect to the rendered images.
#[derive(Debug, Clone, Default)]
pub struct ImageGrads {
    /// Interleaved RGB, `3 * width * height` values.
    pub color: Vec<f64>,
    pub depth: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
}

impl ImageGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        ImageGrads {
            color: vec![0.0; width * height * 3],
            depth: None,
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrads {
    /// Gradient per Gaussian in the `Gaussian3D::to_params` layout.
    pub params: Vec<[f64; PARAM_COUNT]>,
    /// Gradient with respect to the projected center, in pixels.
    pub mean2d: Vec<[f64; 2]>,
    /// Whether the Gaussian produced a splat in this view.
    pub visible: Vec<bool>,
}

impl GaussianGrads {
    pub fn zeros(n: usize) -> Self {
        GaussianGrads {
            params: vec![[0.0; PARAM_COUNT]; n],
            mean2d: vec![[0.0; 2]; n],
            visible: vec![false; n],
        }
    }

    /// Adds `other` element-wise; visibility is or-ed.
    pub fn accumulate(&mut self, other: &GaussianGrads) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.mean2d.iter_mut().zip(&other.mean2d) {
            a[0] += b[0];
            a[1] += b[1];
        }
        for (a, b) in self.visible.iter_mut().zip(&other.visible) {
            *a |= b;
        }
    }
}

// layout of the per-splat 2D gradient record
const G_CX: usize = 0;
const G_CY: usize = 1;
const G_A00: usize = 2;
const G_A01: usize = 3;
const G_A11: usize = 4;
const G_OPACITY: usize = 5;
const G_KERNEL: usize = 6;
const G_COLOR: usize = 7;
const G_DEPTH: usize = 10;
const G2: usize = 11;

struct Hit {
    slot: usize,
    q: f64,
    e: f64,
    clamped: bool,
    t: f64,
}

/// Gradients of `sum(grad_color * C + grad_depth * D + grad_alpha * alpha)`
/// with respect to every Gaussian parameter.
pub fn render_backward(
    gaussians: &[Gaussian3D],
    pose: &Pose,
    k: &Intrinsics,
    background: [f64; 3],
    cfg: &RenderConfig,
    grads: &ImageGrads,
) -> Result<GaussianGrads> {
    let n_px = k.width * k.height;
    if grads.color.len() != 3 * n_px {
        return Err(Error::InvalidInput(format!(
            "color gradient has {} values, expected {}",
            grads.color.len(),
            3 * n_px
        )));
    }
    for (name, g) in [("depth", &grads.depth), ("alpha", &grads.alpha)] {
        if let Some(g) = g {
            if g.len() != n_px {
                return Err(Error::InvalidInput(format!(
                    "{name} gradient has {} values, expected {n_px}",
                    g.len()
                )));
            }
        }
    }

    let prep = prepare(gaussians, pose, k, cfg);
    let splats = &prep.splats;
    let tiling = Tiling::build(splats, k, cfg.tile_size);

    let partials: Vec<Vec<[f64; G2]>> = (0..tiling.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &tiling.lists[tile];
            let mut acc = vec![[0.0; G2]; list.len()];
            if list.is_empty() {
                return acc;
            }
            let (xs, ys) = tiling.pixel_range(tile, k);
            let mut hits: Vec<Hit> = Vec::with_capacity(list.len());
            for y in ys {
                for x in xs.clone() {
                    let i = y * k.width + x;
                    let gc = [grads.color[3 * i], grads.color[3 * i + 1], grads.color[3 * i + 2]];
                    let gd = grads.depth.as_ref().map_or(0.0, |d| d[i]);
                    let ga = grads.alpha.as_ref().map_or(0.0, |a| a[i]);
                    if gc == [0.0; 3] && gd == 0.0 && ga == 0.0 {
                        continue;
                    }
                    let (px, py) = (x as f64, y as f64);
                    hits.clear();
                    let mut t = 1.0;
                    for (slot, &si) in list.iter().enumerate() {
                        let Some((q, e, clamped)) = splat_weight(&splats[si as usize], px, py, cfg) else {
                            continue;
                        };
                        hits.push(Hit { slot, q, e, clamped, t });
                        t *= 1.0 - q;
                        if t < cfg.transmittance_stop {
                            break;
                        }
                    }
                    let t_final = t;
                    // suffix sums of what lies behind the current splat
                    let mut acc_c = [background[0] * t_final, background[1] * t_final, background[2] * t_final];
                    let mut acc_d = 0.0;
                    for h in hits.iter().rev() {
                        let s = &splats[list[h.slot] as usize];
                        let w = h.q * h.t;
                        let a = &mut acc[h.slot];
                        for ch in 0..3 {
                            a[G_COLOR + ch] += gc[ch] * w;
                        }
                        a[G_DEPTH] += gd * w;
                        let inv = 1.0 / (1.0 - h.q);
                        let mut g_q = ga * t_final * inv;
                        for ch in 0..3 {
                            g_q += gc[ch] * (s.color[ch] * h.t - acc_c[ch] * inv);
                        }
                        g_q += gd * (s.depth * h.t - acc_d * inv);
                        for ch in 0..3 {
                            acc_c[ch] += s.color[ch] * w;
                        }
                        acc_d += s.depth * w;
                        if h.clamped {
                            continue;
                        }
                        a[G_OPACITY] += g_q * s.kernel_scale * h.e;
                        a[G_KERNEL] += g_q * s.opacity * h.e;
                        let g_p = g_q * h.q;
                        let dx = px - s.center[0];
                        let dy = py - s.center[1];
                        let [c00, c01, c11] = s.conic;
                        a[G_CX] += g_p * (c00 * dx + c01 * dy);
                        a[G_CY] += g_p * (c01 * dx + c11 * dy);
                        a[G_A00] += g_p * (-0.5 * dx * dx);
                        a[G_A01] += g_p * (-0.5 * dx * dy);
                        a[G_A11] += g_p * (-0.5 * dy * dy);
                    }
                }
            }
            acc
        })
        .collect();

    // reduce in tile order so the sum is independent of scheduling
    let mut per_splat = vec![[0.0; G2]; splats.len()];
    for (tile, part) in partials.iter().enumerate() {
        for (slot, g) in part.iter().enumerate() {
            let dst = &mut per_splat[tiling.lists[tile][slot] as usize];
            for (d, v) in dst.iter_mut().zip(g) {
                *d += v;
            }
        }
    }

    let r_w = pose.rotation_matrix();
    let mut out = GaussianGrads::zeros(gaussians.len());
    for (s, g2) in splats.iter().zip(&per_splat) {
        let gi = s.source_index;
        out.visible[gi] = true;
        out.mean2d[gi] = [g2[G_CX], g2[G_CY]];
        out.params[gi] = chain_to_params(&gaussians[gi], s, g2, &r_w, pose, k, cfg);
    }
    Ok(out)
}

fn chain_to_params(
    g: &Gaussian3D,
    s: &super::Splat2D,
    g2: &[f64; G2],
    r_w: &Mat3,
    pose: &Pose,
    k: &Intrinsics,
    cfg: &RenderConfig,
) -> [f64; PARAM_COUNT] {
    let mut p = [0.0; PARAM_COUNT];
    let t = projection_terms(g, r_w, pose, k, cfg.low_pass).expect("visible splat has valid projection");
    let (x, y, z) = (t.p_cam.x, t.p_cam.y, t.p_cam.z);

    // conic -> 2D covariance: G_cov = -A G_A A
    let a = nalgebra::Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let ga = nalgebra::Matrix2::new(g2[G_A00], g2[G_A01], g2[G_A01], g2[G_A11]);
    let g_cov = -(a * ga * a);

    let j = nalgebra::Matrix2x3::new(t.j[0][0], t.j[0][1], t.j[0][2], t.j[1][0], t.j[1][1], t.j[1][2]);
    let g_j = 2.0 * g_cov * j * t.sigma_cam;
    let g_sigma_cam = j.transpose() * g_cov * j;
    let g_sigma = r_w.transpose() * g_sigma_cam * r_w;

    let q = g.quat();
    let qn = q.norm();
    let qh = [q.w / qn, q.x / qn, q.y / qn, q.z / qn];
    let rot = crate::geom::Quat::new(qh[0], qh[1], qh[2], qh[3]).to_rotation_unchecked();
    let sc = g.scale();
    let m = rot * Mat3::from_diagonal(&Vec3::from(sc));
    let g_m = 2.0 * g_sigma * m;
    // M = R diag(s)
    let mut g_r = g_m;
    for c in 0..3 {
        let mut gs = 0.0;
        for r in 0..3 {
            gs += g_m[(r, c)] * rot[(r, c)];
            g_r[(r, c)] = g_m[(r, c)] * sc[c];
        }
        p[3 + c] = gs * sc[c];
    }
    let g_qh = rotation_quat_grad(&g_r, qh);
    let dot: f64 = (0..4).map(|i| qh[i] * g_qh[i]).sum();
    for i in 0..4 {
        p[6 + i] = (g_qh[i] - qh[i] * dot) / qn;
    }

    // camera-space point
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut gp = Vec3::zeros();
    gp.x += g_j[(0, 2)] * (-k.fx * iz2);
    gp.y += g_j[(1, 2)] * (-k.fy * iz2);
    gp.z += g_j[(0, 0)] * (-k.fx * iz2)
        + g_j[(0, 2)] * (2.0 * k.fx * x * iz3)
        + g_j[(1, 1)] * (-k.fy * iz2)
        + g_j[(1, 2)] * (2.0 * k.fy * y * iz3);
    let (gcx, gcy) = (g2[G_CX], g2[G_CY]);
    gp.x += gcx * k.fx * iz;
    gp.y += gcy * k.fy * iz;
    gp.z += -gcx * k.fx * x * iz2 - gcy * k.fy * y * iz2;
    gp.z += g2[G_DEPTH];
    if cfg.ewa_normalization {
        gp.z += g2[G_KERNEL] * (-2.0 * k.fx * k.fy * iz3);
    }
    let gmu = r_w.transpose() * gp;
    p[0..3].copy_from_slice(gmu.as_slice());

    p[10..13].copy_from_slice(&g2[G_COLOR..G_COLOR + 3]);
    let o = s.opacity;
    p[13] = g2[G_OPACITY] * o * (1.0 - o);
    p
}

/// Gradient of `<G, R(q)>` with respect to the (already normalized)
/// quaternion `(w, x, y, z)`.
fn rotation_quat_grad(g: &Mat3, q: [f64; 4]) -> [f64; 4] {
    let [w, x, y, z] = q;
    let f = |d: [[f64; 3]; 3]| {
        let mut s = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                s += g[(r, c)] * d[r][c];
            }
        }
        s
    };
    [
        f([[0.0, -2.0 * z, 2.0 * y], [2.0 * z, 0.0, -2.0 * x], [-2.0 * y, 2.0 * x, 0.0]]),
        f([[0.0, 2.0 * y, 2.0 * z], [2.0 * y, -4.0 * x, -2.0 * w], [2.0 * z, 2.0 * w, -4.0 * x]]),
        f([[-4.0 * y, 2.0 * x, 2.0 * w], [2.0 * x, 0.0, 2.0 * z], [-2.0 * w, 2.0 * z, -4.0 * y]]),
        f([[-4.0 * z, -2.0 * w, 2.0 * x], [2.0 * w, -4.0 * z, 2.0 * y], [2.0 * x, 2.0 * y, 0.0]]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Quat;
    use crate::raster::render;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> Intrinsics {
        Intrinsics::new(30.0, 30.0, 11.5, 9.5, 24, 20).unwrap()
    }

    fn scene(rng: &mut ChaCha8Rng, n: usize) -> Vec<Gaussian3D> {
        (0..n)
            .map(|_| {
                Gaussian3D::new(
                    [rng.random_range(-0.8..0.8), rng.random_range(-0.6..0.6), rng.random_range(2.0..4.0)],
                    [rng.random_range(0.1..0.4), rng.random_range(0.1..0.4), rng.random_range(0.1..0.4)],
                    Quat::new(
                        rng.random_range(0.3..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ),
                    [rng.random(), rng.random(), rng.random()],
                    rng.random_range(0.1..0.8),
                )
                .unwrap()
            })
            .collect()
    }

    fn objective(gs: &[Gaussian3D], pose: &Pose, k: &Intrinsics, bg: [f64; 3], cfg: &RenderConfig, w: &ImageGrads) -> f64 {
        let f = render(gs, pose, k, bg, cfg);
        let mut s: f64 = f.color.iter().zip(&w.color).map(|(a, b)| a * b).sum();
        if let Some(d) = &w.depth {
            s += f.depth.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
        }
        if let Some(a) = &w.alpha {
            s += f.alpha.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
        }
        s
    }

    fn random_weights(rng: &mut ChaCha8Rng, k: &Intrinsics) -> ImageGrads {
        let n = k.width * k.height;
        ImageGrads {
            color: (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            depth: Some((0..n).map(|_| rng.random_range(-0.3..0.3)).collect()),
            alpha: Some((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()),
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gs = scene(&mut rng, 5);
        let k = cam();
        let g = render_backward(&gs, &Pose::identity(), &k, [0.1; 3], &RenderConfig::default(), &ImageGrads::zeros(24, 20)).unwrap();
        assert!(g.params.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let k = cam();
        let r = render_backward(&[], &Pose::identity(), &k, [0.0; 3], &RenderConfig::default(), &ImageGrads::zeros(3, 3));
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn single_splat_color_gradient_closed_form() {
        let k = Intrinsics::new(30.0, 30.0, 5.0, 5.0, 11, 11).unwrap();
        let g = Gaussian3D::isotropic([0.0, 0.0, 3.0], 0.1, [0.3, 0.6, 0.9], 0.7).unwrap();
        let mut up = ImageGrads::zeros(11, 11);
        up.color[3 * (5 * 11 + 5)] = 1.0;
        let gr = render_backward(&[g], &Pose::identity(), &k, [0.0; 3], &RenderConfig::default(), &up).unwrap();
        // on the center the exponential is 1 and T is 1, so q = opacity
        assert!((gr.params[0][10] - g.opacity()).abs() < 1e-12);
        assert_eq!(gr.params[0][11], 0.0);
        assert_eq!(gr.params[0][12], 0.0);
    }

    #[test]
    fn matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let k = cam();
        for ewa in [false, true] {
            let cfg = RenderConfig {
                ewa_normalization: ewa,
                ..RenderConfig::smooth()
            };
            for _ in 0..4 {
                let mut gs = scene(&mut rng, 5);
                if ewa {
                    // keep the normalized peak weight away from the clamp
                    for g in &mut gs {
                        g.opacity_logit = crate::map::logit(0.002);
                    }
                }
                let pose = Pose::new(
                    Quat::new(1.0, rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)),
                    Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)),
                )
                .unwrap();
                let bg = [rng.random(), rng.random(), rng.random()];
                let w = random_weights(&mut rng, &k);
                let an = render_backward(&gs, &pose, &k, bg, &cfg, &w).unwrap();
                let h = 1e-4;
                for gi in 0..gs.len() {
                    for pi in 0..PARAM_COUNT {
                        let mut plus = gs.clone();
                        let mut pp = plus[gi].to_params();
                        pp[pi] += h;
                        plus[gi] = Gaussian3D::from_params(&pp);
                        let mut minus = gs.clone();
                        let mut pm = minus[gi].to_params();
                        pm[pi] -= h;
                        minus[gi] = Gaussian3D::from_params(&pm);
                        let fd = (objective(&plus, &pose, &k, bg, &cfg, &w) - objective(&minus, &pose, &k, bg, &cfg, &w)) / (2.0 * h);
                        let a = an.params[gi][pi];
                        if a.abs().max(fd.abs()) > 1e-6 {
                            let rel = (a - fd).abs() / a.abs().max(fd.abs());
                            assert!(rel < 1e-4, "ewa {ewa} g{gi} p{pi}: analytic {a} fd {fd}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn gradients_identical_across_thread_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gs = scene(&mut rng, 30);
        let k = Intrinsics::new(40.0, 40.0, 31.5, 23.5, 64, 48).unwrap();
        let w = random_weights(&mut rng, &k);
        let run = |t: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| render_backward(&gs, &Pose::identity(), &k, [0.2; 3], &RenderConfig::default(), &w).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
