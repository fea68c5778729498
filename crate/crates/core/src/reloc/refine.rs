//! Iterative refinement: render at the current estimate, match features
//! against the query and re-solve PnP until the update becomes negligible.

use super::ncc::Centered;
use super::search::{LocalizationResult, Query, RefineConfig, Relocalizer};
use crate::error::Result;
use crate::geom::{Intrinsics, Pose};
use crate::image::RgbImage;
use crate::map::GaussianMap;

impl Relocalizer<'_> {
    /// Refines `pose0`. Fails only when the very first PnP solve fails. A
    /// later failure keeps the last good pose.
    pub fn refine_pose(&self, query: &RgbImage, pose0: &Pose) -> Result<LocalizationResult> {
        let q = self.prepare_query(query)?;
        Ok(self.refine_prepared(&q, pose0))
    }

    pub(crate) fn refine_prepared(&self, query: &Query, pose0: &Pose) -> LocalizationResult {
        let cfg = &self.refine;
        let Ok(submap) = self.map.extract_submap(pose0, self.search.submap_radius_reloc) else {
            return LocalizationResult::failed(*pose0);
        };
        let mut out = LocalizationResult::failed(*pose0);
        let mut pose = *pose0;
        for it in 0..cfg.max_iters {
            let (res, matches, gray) = self.verify(&submap.gaussians, query, &pose);
            let Ok((next, inliers)) = res else {
                break;
            };
            let next = next.with_timestamp(pose0.timestamp);
            let dt = (next.camera_center() - pose.camera_center()).norm();
            let dr = next.rotation_angle_to(&pose).to_degrees();
            out.ncc_best = match (&query.full, Centered::new(&gray)) {
                (Some(a), Ok(b)) => a.correlate(&b).unwrap_or(-1.0),
                _ => -1.0,
            };
            out.pose = next;
            out.inliers = inliers;
            out.matches = matches;
            out.iterations = it + 1;
            out.success = true;
            pose = next;
            if dt < cfg.min_translation && dr < cfg.min_rotation_deg {
                break;
            }
        }
        out
    }
}

/// Refinement with the default settings.
pub fn refine_pose(
    map: &GaussianMap,
    query: &RgbImage,
    pose0: &Pose,
    k: &Intrinsics,
    max_iters: usize,
    background: [f64; 3],
) -> Result<LocalizationResult> {
    let mut r = Relocalizer::new(map, *k, background);
    r.refine = RefineConfig {
        max_iters,
        ..RefineConfig::default()
    };
    r.refine_pose(query, pose0)
}
