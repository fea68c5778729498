//! Coarse initialization: render candidate poses on an (x, y, yaw) grid
//! around a rough prior and keep the one whose image correlates best with
//! the query.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::features::{FeatureFrontend, Features, HarrisBrief};
use super::ncc::Centered;
use super::pnp::{pnp_ransac, PnpConfig};
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Intrinsics, Pose};
use crate::image::{fit_within, GrayImage, RgbImage};
use crate::map::{Gaussian3D, GaussianMap};
use crate::raster::{render, RenderConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    /// Translation grid step, meters.
    pub grid_xy: f64,
    /// Yaw grid step, degrees.
    pub grid_yaw: f64,
    /// Half-width of the translation search, meters.
    pub range_xy: f64,
    /// Half-width of the yaw search, degrees. Anything of 180 or more
    /// covers one full turn.
    pub range_yaw: f64,
    pub random_fraction: f64,
    /// Early stop needs at least this correlation. Values above 1 disable
    /// early stopping.
    pub ncc_early_stop: f64,
    pub min_matches_early_stop: usize,
    pub submap_radius_reloc: f64,
    /// Longest side of the images compared by NCC.
    pub ncc_max_side: usize,
    /// Candidates scored in parallel between early-stop checks.
    pub batch_size: usize,
    pub seed: u64,
    pub record_trace: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            grid_xy: 2.0,
            grid_yaw: 10.0,
            range_xy: 15.0,
            range_yaw: 360.0,
            random_fraction: 0.2,
            ncc_early_stop: 0.55,
            min_matches_early_stop: 30,
            submap_radius_reloc: 150.0,
            ncc_max_side: 160,
            batch_size: 64,
            seed: 0,
            record_trace: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.grid_xy) || !positive(self.grid_yaw) {
            return Err(Error::Config("grid steps must be positive".into()));
        }
        if !(self.range_xy >= 0.0) || !(self.range_yaw >= 0.0) {
            return Err(Error::Config("search ranges must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.random_fraction) {
            return Err(Error::Config("random_fraction must lie in [0, 1]".into()));
        }
        if !positive(self.submap_radius_reloc) {
            return Err(Error::Config("submap radius must be positive".into()));
        }
        if self.ncc_max_side == 0 || self.batch_size == 0 {
            return Err(Error::Config("ncc_max_side and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Translation offsets along one axis, ascending.
    pub fn xy_offsets(&self) -> Vec<f64> {
        let n = (self.range_xy / self.grid_xy + 1e-9).floor() as i64;
        (-n..=n).map(|i| i as f64 * self.grid_xy).collect()
    }

    /// Yaw offsets in degrees, ascending.
    pub fn yaw_offsets(&self) -> Vec<f64> {
        if self.range_yaw >= 180.0 {
            let n = (360.0 / self.grid_yaw - 1e-9).ceil() as i64;
            let lo = -(n / 2);
            (lo..lo + n).map(|j| j as f64 * self.grid_yaw).collect()
        } else {
            let n = (self.range_yaw / self.grid_yaw + 1e-9).floor() as i64;
            (-n..=n).map(|j| j as f64 * self.grid_yaw).collect()
        }
    }
}

/// One scored candidate of the grid search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateScore {
    /// Lexicographic (x, y, yaw) grid index.
    pub index: usize,
    pub pose: Pose,
    pub ncc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    /// World-to-camera pose.
    pub pose: Pose,
    pub ncc_best: f64,
    pub inliers: usize,
    pub matches: usize,
    pub iterations: usize,
    pub success: bool,
    /// Candidates in the order they were scored.
    pub candidate_trace: Option<Vec<CandidateScore>>,
}

impl LocalizationResult {
    pub(crate) fn failed(pose: Pose) -> Self {
        LocalizationResult {
            pose,
            ncc_best: -1.0,
            inliers: 0,
            matches: 0,
            iterations: 0,
            success: false,
            candidate_trace: None,
        }
    }
}

/// Writes `x,y,yaw,ncc` rows: camera center and heading in degrees.
pub fn write_trace_csv(trace: &[CandidateScore], mut out: impl Write) -> Result<()> {
    writeln!(out, "x,y,yaw,ncc")?;
    for c in trace {
        let p = c.pose.camera_center();
        writeln!(out, "{:?},{:?},{:?},{:?}", p.x, p.y, c.pose.yaw().to_degrees(), c.ncc)?;
    }
    Ok(())
}

/// Refinement loop settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub max_iters: usize,
    /// Stop once an update moves the camera less than this, meters.
    pub min_translation: f64,
    /// Stop once an update rotates the camera less than this, degrees.
    pub min_rotation_deg: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            max_iters: 5,
            min_translation: 0.01,
            min_rotation_deg: 0.05,
        }
    }
}

/// Map, camera and every setting the relocalization stages share.
pub struct Relocalizer<'a> {
    pub map: &'a GaussianMap,
    pub k: Intrinsics,
    pub background: [f64; 3],
    pub render: RenderConfig,
    pub search: SearchConfig,
    pub pnp: PnpConfig,
    pub refine: RefineConfig,
    pub frontend: Box<dyn FeatureFrontend + 'a>,
}

/// Query preprocessed once for all stages.
pub(crate) struct Query {
    pub features: Features,
    pub small: Option<Centered>,
    pub full: Option<Centered>,
}

impl<'a> Relocalizer<'a> {
    pub fn new(map: &'a GaussianMap, k: Intrinsics, background: [f64; 3]) -> Self {
        Relocalizer {
            map,
            k,
            background,
            render: RenderConfig::default(),
            search: SearchConfig::default(),
            pnp: PnpConfig::default(),
            refine: RefineConfig::default(),
            frontend: Box::new(HarrisBrief::default()),
        }
    }

    fn ncc_intrinsics(&self) -> Intrinsics {
        let (w, h) = fit_within(self.k.width, self.k.height, self.search.ncc_max_side);
        self.k.scaled_to(w, h)
    }

    pub(crate) fn prepare_query(&self, query: &RgbImage) -> Result<Query> {
        if query.width != self.k.width || query.height != self.k.height {
            return Err(Error::InvalidInput(format!(
                "query is {}x{}, camera is {}x{}",
                query.width, query.height, self.k.width, self.k.height
            )));
        }
        let gray = query.to_gray();
        let ks = self.ncc_intrinsics();
        let small = if ks.width == gray.width && ks.height == gray.height {
            gray.clone()
        } else {
            gray.resize_area(ks.width, ks.height)
        };
        Ok(Query {
            features: self.frontend.detect(&gray),
            small: Centered::new(&small).ok(),
            full: Centered::new(&gray).ok(),
        })
    }

    /// Renders at full resolution, matches against the query and solves
    /// PnP. Returns the PnP pose, match count and inlier count, plus the
    /// gray render.
    pub(crate) fn verify(
        &self,
        gaussians: &[Gaussian3D],
        query: &Query,
        pose: &Pose,
    ) -> (Result<(Pose, usize)>, usize, GrayImage) {
        let frame = render(gaussians, pose, &self.k, self.background, &self.render);
        let gray = frame.gray();
        let feats = self.frontend.detect(&gray);
        let matches = self.frontend.match_features(&query.features, &feats);
        let res = pnp_ransac(&matches, &frame, pose, &self.k, &self.pnp).map(|r| (r.pose, r.inliers.len()));
        (res, matches.len(), gray)
    }

    fn score(&self, gaussians: &[Gaussian3D], query: &Centered, pose: &Pose, ks: &Intrinsics) -> f64 {
        let frame = render(gaussians, pose, ks, self.background, &self.render);
        Centered::new(&frame.gray())
            .and_then(|c| query.correlate(&c))
            .unwrap_or(-1.0)
    }

    /// Grid search around `coarse`. The returned pose is the best-scoring
    /// grid candidate. Success means a final PnP check against it found
    /// enough inliers.
    pub fn initial_localize(&self, query: &RgbImage, coarse: &Pose) -> Result<LocalizationResult> {
        self.search.validate()?;
        let q = self.prepare_query(query)?;
        Ok(self.initial_localize_prepared(&q, coarse))
    }

    pub(crate) fn initial_localize_prepared(&self, query: &Query, coarse: &Pose) -> LocalizationResult {
        let cfg = &self.search;
        let Ok(submap) = self.map.extract_submap(coarse, cfg.submap_radius_reloc) else {
            return LocalizationResult::failed(*coarse);
        };
        let Some(small) = &query.small else {
            return LocalizationResult::failed(*coarse);
        };
        let gaussians = &submap.gaussians;
        let xs = cfg.xy_offsets();
        let yaws = cfg.yaw_offsets();
        let n = xs.len() * xs.len() * yaws.len();
        let candidate = |i: usize| {
            let iyaw = i % yaws.len();
            let iy = (i / yaws.len()) % xs.len();
            let ix = i / (yaws.len() * xs.len());
            coarse.perturbed_xy_yaw(xs[ix], xs[iy], wrap_angle(yaws[iyaw].to_radians()))
        };
        let order = visit_order(n, cfg.random_fraction, cfg.seed);
        let ks = self.ncc_intrinsics();

        let mut best: Option<(usize, f64)> = None;
        let mut trace = Vec::new();
        let mut visited = 0;
        let mut stopped = None;
        'batches: for batch in order.chunks(cfg.batch_size) {
            let scores: Vec<f64> = batch
                .par_iter()
                .map(|&i| self.score(gaussians, small, &candidate(i), &ks))
                .collect();
            for (&i, &s) in batch.iter().zip(&scores) {
                visited += 1;
                if cfg.record_trace {
                    trace.push(CandidateScore {
                        index: i,
                        pose: candidate(i),
                        ncc: s,
                    });
                }
                let improves = match best {
                    None => true,
                    Some((bi, bs)) => s > bs || (s == bs && i < bi),
                };
                if !improves {
                    continue;
                }
                best = Some((i, s));
                if s >= cfg.ncc_early_stop {
                    let (res, matches, _) = self.verify(gaussians, query, &candidate(i));
                    if let Ok((_, inliers)) = res {
                        if matches >= cfg.min_matches_early_stop {
                            stopped = Some((matches, inliers));
                            break 'batches;
                        }
                    }
                }
            }
        }

        let Some((bi, bs)) = best else {
            return LocalizationResult::failed(*coarse);
        };
        let pose = candidate(bi).with_timestamp(coarse.timestamp);
        let (matches, inliers) = match stopped {
            Some(v) => v,
            None if bs > -1.0 => {
                let (res, matches, _) = self.verify(gaussians, query, &pose);
                (matches, res.map(|r| r.1).unwrap_or(0))
            }
            None => (0, 0),
        };
        LocalizationResult {
            pose,
            ncc_best: bs,
            inliers,
            matches,
            iterations: visited,
            success: inliers >= self.pnp.min_inliers,
            candidate_trace: cfg.record_trace.then_some(trace),
        }
    }
}

/// A seeded random `fraction` of the candidates first, then the rest in
/// ascending order.
pub fn visit_order(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    let take = ((n as f64) * fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    let mut first: Vec<usize> = all[..take.min(n)].to_vec();
    let mut seen = vec![false; n];
    for &i in &first {
        seen[i] = true;
    }
    first.extend((0..n).filter(|&i| !seen[i]));
    first
}

/// Grid search with the default settings.
pub fn initial_localize(
    map: &GaussianMap,
    query: &RgbImage,
    coarse: &Pose,
    k: &Intrinsics,
    cfg: &SearchConfig,
    background: [f64; 3],
) -> Result<LocalizationResult> {
    let mut r = Relocalizer::new(map, *k, background);
    r.search = *cfg;
    r.initial_localize(query, coarse)
}
