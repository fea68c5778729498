//! Image losses with gradients with respect to the first argument.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5) evaluated only where the
//! window fits inside the image, per channel, and averaged. An optional
//! per-pixel mask restricts every loss: L1 averages over masked pixels and
//! SSIM over window positions whose center is masked, with unmasked samples
//! of `a` replaced by those of `b`.

use crate::error::{Error, Result};
use crate::image::RgbImage;

const WIN: usize = 11;
const HALF: usize = WIN / 2;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// A loss value and its gradient with respect to `a.data`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check(a: &RgbImage, b: &RgbImage, mask: Option<&[bool]>) -> Result<()> {
    a.same_size(b)?;
    if let Some(m) = mask {
        if m.len() != a.width * a.height {
            return Err(Error::InvalidInput("mask size does not match image".into()));
        }
    }
    Ok(())
}

pub fn l1_loss(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    Ok(l1_with_grad(a, b, None)?.value)
}

pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    Ok(ssim_with_grad(a, b, None)?.value)
}

/// `(1 - SSIM) / 2`.
pub fn d_ssim_loss(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    Ok((1.0 - ssim(a, b)?) / 2.0)
}

/// `(1 - lambda) * L1 + lambda * D-SSIM`.
pub fn rgb_loss(a: &RgbImage, b: &RgbImage, lambda: f64) -> Result<f64> {
    Ok(rgb_loss_grad(a, b, lambda, None)?.value)
}

pub fn l1_with_grad(a: &RgbImage, b: &RgbImage, mask: Option<&[bool]>) -> Result<LossGrad> {
    check(a, b, mask)?;
    let n_px = mask.map_or(a.width * a.height, |m| m.iter().filter(|v| **v).count());
    let mut grad = vec![0.0; a.data.len()];
    if n_px == 0 {
        return Ok(LossGrad { value: 0.0, grad });
    }
    let scale = 1.0 / (3 * n_px) as f64;
    let mut sum = 0.0;
    for (i, (x, y)) in a.data.iter().zip(&b.data).enumerate() {
        if mask.is_some_and(|m| !m[i / 3]) {
            continue;
        }
        let d = x - y;
        sum += d.abs();
        grad[i] = if d > 0.0 {
            scale
        } else if d < 0.0 {
            -scale
        } else {
            0.0
        };
    }
    Ok(LossGrad { value: sum * scale, grad })
}

fn window() -> [f64; WIN] {
    let mut g = [0.0; WIN];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - HALF as f64;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable correlation keeping only positions where the window fits.
fn filter_valid(p: &[f64], w: usize, h: usize, g: &[f64; WIN]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - WIN, h + 1 - WIN);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &p[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = (0..WIN).map(|i| g[i] * row[x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WIN).map(|j| g[j] * tmp[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of `filter_valid`.
fn filter_transpose(c: &[f64], w: usize, h: usize, g: &[f64; WIN]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - WIN, h + 1 - WIN);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = c[y * ow + x];
            if v != 0.0 {
                for j in 0..WIN {
                    tmp[(y + j) * ow + x] += g[j] * v;
                }
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            if v != 0.0 {
                for i in 0..WIN {
                    out[y * w + x + i] += g[i] * v;
                }
            }
        }
    }
    out
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &RgbImage, b: &RgbImage, mask: Option<&[bool]>) -> Result<LossGrad> {
    check(a, b, mask)?;
    let (w, h) = (a.width, a.height);
    if w < WIN || h < WIN {
        return Err(Error::InvalidInput(format!("SSIM needs images of at least {WIN}x{WIN}")));
    }
    let (ow, oh) = (w + 1 - WIN, h + 1 - WIN);
    let valid: Vec<bool> = (0..ow * oh)
        .map(|i| mask.is_none_or(|m| m[(i / ow + HALF) * w + i % ow + HALF]))
        .collect();
    let count = valid.iter().filter(|v| **v).count();
    let mut grad = vec![0.0; a.data.len()];
    if count == 0 {
        return Ok(LossGrad { value: 1.0, grad });
    }
    let u = 1.0 / (3 * count) as f64;
    let g = window();
    let mut total = 0.0;
    for ch in 0..3 {
        let pa: Vec<f64> = (0..w * h)
            .map(|i| {
                if mask.is_none_or(|m| m[i]) {
                    a.data[3 * i + ch]
                } else {
                    b.data[3 * i + ch]
                }
            })
            .collect();
        let pb: Vec<f64> = (0..w * h).map(|i| b.data[3 * i + ch]).collect();
        let sq = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
        let ma = filter_valid(&pa, w, h, &g);
        let mb = filter_valid(&pb, w, h, &g);
        let maa = filter_valid(&sq(&pa, &pa), w, h, &g);
        let mbb = filter_valid(&sq(&pb, &pb), w, h, &g);
        let mab = filter_valid(&sq(&pa, &pb), w, h, &g);
        let mut ca = vec![0.0; ow * oh];
        let mut caa = vec![0.0; ow * oh];
        let mut cab = vec![0.0; ow * oh];
        for i in 0..ow * oh {
            if !valid[i] {
                continue;
            }
            let (mua, mub) = (ma[i], mb[i]);
            let n1 = 2.0 * mua * mub + C1;
            let n2 = 2.0 * (mab[i] - mua * mub) + C2;
            let d1 = mua * mua + mub * mub + C1;
            let d2 = (maa[i] - mua * mua) + (mbb[i] - mub * mub) + C2;
            let s = n1 * n2 / (d1 * d2);
            total += s * u;
            ca[i] = u * s * (2.0 * mub / n1 - 2.0 * mub / n2 - 2.0 * mua / d1 + 2.0 * mua / d2);
            caa[i] = -u * s / d2;
            cab[i] = 2.0 * u * s / n2;
        }
        let ga = filter_transpose(&ca, w, h, &g);
        let gaa = filter_transpose(&caa, w, h, &g);
        let gab = filter_transpose(&cab, w, h, &g);
        for i in 0..w * h {
            if mask.is_none_or(|m| m[i]) {
                grad[3 * i + ch] = ga[i] + 2.0 * pa[i] * gaa[i] + pb[i] * gab[i];
            }
        }
    }
    Ok(LossGrad { value: total, grad })
}

/// `(1 - lambda) * L1 + lambda * (1 - SSIM) / 2` with its gradient.
pub fn rgb_loss_grad(a: &RgbImage, b: &RgbImage, lambda: f64, mask: Option<&[bool]>) -> Result<LossGrad> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda {lambda} outside [0, 1]")));
    }
    let l1 = l1_with_grad(a, b, mask)?;
    if lambda == 0.0 {
        return Ok(l1);
    }
    let s = ssim_with_grad(a, b, mask)?;
    let grad = l1
        .grad
        .iter()
        .zip(&s.grad)
        .map(|(x, y)| (1.0 - lambda) * x - 0.5 * lambda * y)
        .collect();
    Ok(LossGrad {
        value: (1.0 - lambda) * l1.value + lambda * (1.0 - s.value) / 2.0,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage {
        RgbImage {
            width: w,
            height: h,
            data: (0..w * h * 3).map(|_| rng.random()).collect(),
        }
    }

    // direct 2D sliding window with explicit moments
    fn ssim_oracle(a: &RgbImage, b: &RgbImage) -> f64 {
        let g1: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
        let mut win = [[0.0; 11]; 11];
        let mut tot = 0.0;
        for j in 0..11 {
            for i in 0..11 {
                win[j][i] = g1[i] * g1[j];
                tot += win[j][i];
            }
        }
        let (w, h) = (a.width, a.height);
        let mut acc = 0.0;
        let mut n = 0usize;
        for ch in 0..3 {
            for y in 0..=h - 11 {
                for x in 0..=w - 11 {
                    let (mut sa, mut sb) = (0.0, 0.0);
                    for j in 0..11 {
                        for i in 0..11 {
                            let wt = win[j][i] / tot;
                            let p = ((y + j) * w + x + i) * 3 + ch;
                            sa += wt * a.data[p];
                            sb += wt * b.data[p];
                        }
                    }
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for j in 0..11 {
                        for i in 0..11 {
                            let wt = win[j][i] / tot;
                            let p = ((y + j) * w + x + i) * 3 + ch;
                            va += wt * (a.data[p] - sa).powi(2);
                            vb += wt * (b.data[p] - sb).powi(2);
                            cov += wt * (a.data[p] - sa) * (b.data[p] - sb);
                        }
                    }
                    acc += ((2.0 * sa * sb + 1e-4) * (2.0 * cov + 9e-4))
                        / ((sa * sa + sb * sb + 1e-4) * (va + vb + 9e-4));
                    n += 1;
                }
            }
        }
        acc / n as f64
    }

    #[test]
    fn identical_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 20, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(d_ssim_loss(&a, &a).unwrap().abs() < 1e-12);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        for lambda in [0.0, 0.2, 1.0] {
            assert!(rgb_loss(&a, &a, lambda).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn constant_images_l1() {
        let a = RgbImage::filled(12, 12, [0.5; 3]);
        let b = RgbImage::filled(12, 12, [0.7; 3]);
        assert!((l1_loss(&a, &b).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_sliding_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let a = random_image(&mut rng, 23, 17);
            let b = random_image(&mut rng, 23, 17);
            assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-9);
        }
    }

    #[test]
    fn rgb_loss_is_compositional() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 16, 16);
        let b = random_image(&mut rng, 16, 16);
        assert_eq!(rgb_loss(&a, &b, 0.0).unwrap(), l1_loss(&a, &b).unwrap());
        let want = 0.8 * l1_loss(&a, &b).unwrap() + 0.2 * d_ssim_loss(&a, &b).unwrap();
        assert!((rgb_loss(&a, &b, 0.2).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = RgbImage::new(12, 12);
        let b = RgbImage::new(13, 12);
        assert!(matches!(l1_loss(&a, &b), Err(Error::InvalidInput(_))));
        assert!(ssim(&RgbImage::new(5, 5), &RgbImage::new(5, 5)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_image(&mut rng, 14, 13);
        let b = random_image(&mut rng, 14, 13);
        let mask: Vec<bool> = (0..14 * 13).map(|_| rng.random_bool(0.7)).collect();
        for m in [None, Some(mask.as_slice())] {
            let an = rgb_loss_grad(&a, &b, 0.2, m).unwrap();
            let h = 1e-6;
            for i in (0..a.data.len()).step_by(7) {
                // stay off the L1 kink
                if (a.data[i] - b.data[i]).abs() < 1e-3 {
                    continue;
                }
                let mut p = a.clone();
                p.data[i] += h;
                let mut q = a.clone();
                q.data[i] -= h;
                let fd = (rgb_loss_grad(&p, &b, 0.2, m).unwrap().value - rgb_loss_grad(&q, &b, 0.2, m).unwrap().value) / (2.0 * h);
                assert!((fd - an.grad[i]).abs() < 1e-7 + 1e-5 * fd.abs(), "{i}: {fd} vs {}", an.grad[i]);
            }
        }
    }

    #[test]
    fn masked_pixels_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_image(&mut rng, 12, 12);
        let b = random_image(&mut rng, 12, 12);
        let mask: Vec<bool> = (0..144).map(|i| i % 2 == 0).collect();
        let g = rgb_loss_grad(&a, &b, 0.5, Some(&mask)).unwrap();
        for i in 0..144 {
            if !mask[i] {
                assert_eq!(&g.grad[3 * i..3 * i + 3], &[0.0; 3]);
            }
        }
    }
}
