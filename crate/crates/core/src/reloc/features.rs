//! Classical keypoints: Harris corners with binary intensity-comparison
//! descriptors, matched by mutual nearest neighbor on Hamming distance.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub response: f64,
}

/// 256 comparison bits.
pub type Descriptor = [u64; 4];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Features {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl Features {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureMatch {
    /// Pixel in the query image.
    pub pixel_q: [f64; 2],
    /// Pixel in the rendered image.
    pub pixel_r: [f64; 2],
    /// `1 - hamming / 256`.
    pub score: f64,
    pub index_q: usize,
    pub index_r: usize,
}

/// Detector, descriptor and matcher behind one interface, so another
/// frontend can replace the classical one.
pub trait FeatureFrontend: Sync {
    fn detect(&self, img: &GrayImage) -> Features;
    fn match_features(&self, q: &Features, r: &Features) -> Vec<FeatureMatch>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarrisBrief {
    pub nms_radius: usize,
    pub max_keypoints: usize,
    pub harris_k: f64,
    /// Responses below this fraction of the image maximum are ignored.
    pub relative_threshold: f64,
    /// Best over second-best distance must not exceed this.
    pub ratio: f64,
}

impl Default for HarrisBrief {
    fn default() -> Self {
        HarrisBrief {
            nms_radius: 4,
            max_keypoints: 1024,
            harris_k: 0.04,
            relative_threshold: 0.01,
            ratio: 0.8,
        }
    }
}

const PATCH_HALF: i64 = 15;
const BORDER: usize = 3;
/// Absolute response floor, so flat images yield nothing.
const MIN_RESPONSE: f64 = 1e-10;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur with clamped borders.
fn blur(data: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = (x as i64 + i as i64 - r).clamp(0, w as i64 - 1) as usize;
                acc += kv * data[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = (y as i64 + i as i64 - r).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Harris corner response per pixel.
pub fn harris_response(img: &GrayImage, k: f64) -> Vec<f64> {
    let (w, h) = (img.width, img.height);
    let at = |x: i64, y: i64| img.get(x.clamp(0, w as i64 - 1) as usize, y.clamp(0, h as i64 - 1) as usize);
    let mut ixx = vec![0.0; w * h];
    let mut iyy = vec![0.0; w * h];
    let mut ixy = vec![0.0; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = (at(x + 1, y) - at(x - 1, y)) * 0.5;
            let gy = (at(x, y + 1) - at(x, y - 1)) * 0.5;
            let i = y as usize * w + x as usize;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let sxx = blur(&ixx, w, h, 1.0);
    let syy = blur(&iyy, w, h, 1.0);
    let sxy = blur(&ixy, w, h, 1.0);
    (0..w * h)
        .map(|i| {
            let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
            let tr = sxx[i] + syy[i];
            det - k * tr * tr
        })
        .collect()
}

/// Descriptor sampling pattern: 256 point pairs inside the 31x31 patch,
/// fixed for all images.
fn pattern() -> &'static [[i64; 4]] {
    static PATTERN: OnceLock<Vec<[i64; 4]>> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x00b1_2f5e);
        let sigma = (2 * PATCH_HALF + 1) as f64 / 5.0;
        let draw = |rng: &mut ChaCha8Rng| {
            let v: f64 = rng.sample(StandardNormal);
            ((v * sigma).round() as i64).clamp(-PATCH_HALF, PATCH_HALF)
        };
        (0..256)
            .map(|_| {
                loop {
                    let p = [draw(&mut rng), draw(&mut rng), draw(&mut rng), draw(&mut rng)];
                    if p[0] != p[2] || p[1] != p[3] {
                        return p;
                    }
                }
            })
            .collect()
    })
}

fn describe(smooth: &[f64], w: usize, h: usize, kp: &Keypoint) -> Descriptor {
    let cx = kp.x.round() as i64;
    let cy = kp.y.round() as i64;
    let at = |dx: i64, dy: i64| {
        let x = (cx + dx).clamp(0, w as i64 - 1) as usize;
        let y = (cy + dy).clamp(0, h as i64 - 1) as usize;
        smooth[y * w + x]
    };
    let mut d = [0u64; 4];
    for (bit, p) in pattern().iter().enumerate() {
        if at(p[0], p[1]) < at(p[2], p[3]) {
            d[bit / 64] |= 1 << (bit % 64);
        }
    }
    d
}

pub fn hamming(a: &Descriptor, b: &Descriptor) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// For each row descriptor, the best column, its distance and the
/// second-best distance. Ties go to the lower column.
fn best_two(a: &[Descriptor], b: &[Descriptor]) -> Vec<Option<(usize, u32, u32)>> {
    a.iter()
        .map(|da| {
            let mut best: Option<(usize, u32)> = None;
            let mut second = u32::MAX;
            for (j, db) in b.iter().enumerate() {
                let d = hamming(da, db);
                match best {
                    Some((_, bd)) if d >= bd => second = second.min(d),
                    _ => {
                        if let Some((_, bd)) = best {
                            second = second.min(bd);
                        }
                        best = Some((j, d));
                    }
                }
            }
            best.map(|(j, d)| (j, d, second))
        })
        .collect()
}

impl HarrisBrief {
    fn passes_ratio(&self, best: u32, second: u32) -> bool {
        second == u32::MAX || best as f64 <= self.ratio * second as f64
    }
}

impl FeatureFrontend for HarrisBrief {
    fn detect(&self, img: &GrayImage) -> Features {
        let (w, h) = (img.width, img.height);
        if w <= 2 * BORDER || h <= 2 * BORDER {
            return Features::default();
        }
        let resp = harris_response(img, self.harris_k);
        let max = resp.iter().copied().fold(0.0, f64::max);
        let thresh = (self.relative_threshold * max).max(MIN_RESPONSE);
        let r = self.nms_radius as i64;
        let mut cands: Vec<(f64, usize)> = Vec::new();
        for y in BORDER..h - BORDER {
            'px: for x in BORDER..w - BORDER {
                let i = y * w + x;
                let v = resp[i];
                if !(v > thresh) {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        if (dx == 0 && dy == 0) || dx * dx + dy * dy > r * r {
                            continue;
                        }
                        let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                        if xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
                            continue;
                        }
                        let j = yy as usize * w + xx as usize;
                        if resp[j] > v || (resp[j] == v && j < i) {
                            continue 'px;
                        }
                    }
                }
                cands.push((v, i));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        cands.truncate(self.max_keypoints);
        let keypoints: Vec<Keypoint> = cands
            .iter()
            .map(|&(v, i)| {
                let (x, y) = (i % w, i / w);
                // parabola through the response and its two neighbors per axis
                let offset = |m: f64, c: f64, p: f64| {
                    let den = m - 2.0 * c + p;
                    if den < 0.0 {
                        (0.5 * (m - p) / den).clamp(-0.5, 0.5)
                    } else {
                        0.0
                    }
                };
                let ox = offset(resp[i - 1], v, resp[i + 1]);
                let oy = offset(resp[i - w], v, resp[i + w]);
                Keypoint {
                    x: x as f64 + ox,
                    y: y as f64 + oy,
                    response: v,
                }
            })
            .collect();
        let smooth = blur(&img.data, w, h, 2.0);
        let descriptors = keypoints.iter().map(|kp| describe(&smooth, w, h, kp)).collect();
        Features { keypoints, descriptors }
    }

    /// Mutual nearest neighbors whose ratio test passes in both directions.
    fn match_features(&self, q: &Features, r: &Features) -> Vec<FeatureMatch> {
        let fwd = best_two(&q.descriptors, &r.descriptors);
        let bwd = best_two(&r.descriptors, &q.descriptors);
        let mut out = Vec::new();
        for (i, f) in fwd.iter().enumerate() {
            let Some((j, d, d2)) = *f else { continue };
            let Some((i2, _, e2)) = bwd[j] else { continue };
            if i2 != i || !self.passes_ratio(d, d2) || !self.passes_ratio(d, e2) {
                continue;
            }
            out.push(FeatureMatch {
                pixel_q: [q.keypoints[i].x, q.keypoints[i].y],
                pixel_r: [r.keypoints[j].x, r.keypoints[j].y],
                score: 1.0 - d as f64 / 256.0,
                index_q: i,
                index_r: j,
            });
        }
        out
    }
}

/// Detection with the default classical frontend.
pub fn detect_features(img: &GrayImage) -> Features {
    HarrisBrief::default().detect(img)
}

/// Matching with the default classical frontend.
pub fn match_features(q: &Features, r: &Features) -> Vec<FeatureMatch> {
    HarrisBrief::default().match_features(q, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> GrayImage {
        let mut img = GrayImage::new(64, 64);
        for y in 20..44 {
            for x in 16..40 {
                img.data[y * 64 + x] = 1.0;
            }
        }
        img
    }

    #[test]
    fn constant_image_has_no_keypoints() {
        let img = GrayImage {
            width: 32,
            height: 32,
            data: vec![0.4; 1024],
        };
        assert!(detect_features(&img).is_empty());
    }

    #[test]
    fn square_corners_are_found() {
        let f = detect_features(&square());
        // corners lie between the last dark and first bright pixel
        let truth = [[15.5, 19.5], [39.5, 19.5], [15.5, 43.5], [39.5, 43.5]];
        for t in truth {
            let near = f
                .keypoints
                .iter()
                .any(|k| ((k.x - t[0]).powi(2) + (k.y - t[1]).powi(2)).sqrt() <= 2.0);
            assert!(near, "no keypoint near {t:?}: {:?}", f.keypoints);
        }
        assert!(f.len() <= 8, "{:?}", f.keypoints);
    }

    #[test]
    fn detection_is_deterministic() {
        let img = square();
        assert_eq!(detect_features(&img), detect_features(&img));
    }

    fn random_features(seed: u64, n: usize) -> Features {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Features {
            keypoints: (0..n)
                .map(|i| Keypoint {
                    x: i as f64,
                    y: rng.random_range(0.0..100.0),
                    response: 1.0,
                })
                .collect(),
            descriptors: (0..n).map(|_| [rng.random(), rng.random(), rng.random(), rng.random()]).collect(),
        }
    }

    #[test]
    fn identical_sets_match_themselves() {
        let f = random_features(1, 300);
        let m = match_features(&f, &f);
        assert_eq!(m.len(), 300);
        for x in &m {
            assert_eq!(x.index_q, x.index_r);
            assert_eq!(x.score, 1.0);
        }
    }

    #[test]
    fn unrelated_descriptors_rarely_match() {
        let a = random_features(2, 500);
        let b = random_features(3, 500);
        assert!(match_features(&a, &b).len() < 5);
    }

    #[test]
    fn matching_is_symmetric() {
        let a = random_features(4, 200);
        let mut b = random_features(5, 200);
        // plant near-copies so there is something to match
        for i in 0..80 {
            b.descriptors[i * 2] = a.descriptors[i];
            b.descriptors[i * 2][0] ^= 1 << (i % 64);
        }
        let ab = match_features(&a, &b);
        let ba = match_features(&b, &a);
        assert!(ab.len() >= 80);
        let mut x: Vec<(usize, usize)> = ab.iter().map(|m| (m.index_q, m.index_r)).collect();
        let mut y: Vec<(usize, usize)> = ba.iter().map(|m| (m.index_r, m.index_q)).collect();
        x.sort();
        y.sort();
        assert_eq!(x, y);
    }
}
