//! Frame-to-frame tracking with a constant-velocity motion prior.

use super::search::{LocalizationResult, Relocalizer};
use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::image::RgbImage;

/// Replays the motion from `prev` to `curr` once more. Poses are
/// world-to-camera; the motion is composed in the camera-to-world frame.
pub fn predict_constant_velocity(prev: &Pose, curr: &Pose) -> Pose {
    let c_prev = prev.inverse();
    let c_curr = curr.inverse();
    let step = c_prev.inverse().compose(&c_curr);
    let timestamp = match (prev.timestamp, curr.timestamp) {
        (Some(a), Some(b)) => Some(2.0 * b - a),
        _ => None,
    };
    c_curr.compose(&step).inverse().with_timestamp(timestamp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedFrame {
    pub result: LocalizationResult,
    /// Pose the frame started from before refinement.
    pub predicted: Pose,
    /// Refinement failed and the grid search was rerun around the prediction.
    pub reinitialized: bool,
}

impl Relocalizer<'_> {
    /// Localizes the first frame from `first_coarse`, then follows the
    /// stream. Frames listed in `fail_refine_at` have their refinement
    /// forced to fail, which exercises the recovery path.
    pub fn track(&self, frames: &[RgbImage], first_coarse: &Pose, fail_refine_at: &[usize]) -> Result<Vec<TrackedFrame>> {
        self.search.validate()?;
        let mut out: Vec<TrackedFrame> = Vec::with_capacity(frames.len());
        for (i, img) in frames.iter().enumerate() {
            let q = self.prepare_query(img)?;
            let stamp = Some(i as f64);
            let forced = fail_refine_at.contains(&i);
            if i == 0 {
                let coarse = first_coarse.with_timestamp(stamp);
                let init = self.initial_localize_prepared(&q, &coarse);
                if !init.success {
                    return Err(Error::Localization {
                        frame: 0,
                        reason: format!("initialization found {} inliers", init.inliers),
                    });
                }
                let refined = if forced {
                    LocalizationResult::failed(init.pose)
                } else {
                    self.refine_prepared(&q, &init.pose)
                };
                if !refined.success {
                    return Err(Error::Localization {
                        frame: 0,
                        reason: "refinement after initialization failed".into(),
                    });
                }
                out.push(TrackedFrame {
                    result: refined,
                    predicted: coarse,
                    reinitialized: false,
                });
                continue;
            }
            let last = out[i - 1].result.pose;
            let predicted = if i >= 2 {
                predict_constant_velocity(&out[i - 2].result.pose, &last)
            } else {
                last
            }
            .with_timestamp(stamp);
            let refined = if forced {
                LocalizationResult::failed(predicted)
            } else {
                self.refine_prepared(&q, &predicted)
            };
            if refined.success {
                out.push(TrackedFrame {
                    result: refined,
                    predicted,
                    reinitialized: false,
                });
                continue;
            }
            let init = self.initial_localize_prepared(&q, &predicted);
            let result = if init.success {
                let r = self.refine_prepared(&q, &init.pose);
                if r.success {
                    r
                } else {
                    init
                }
            } else {
                init
            };
            out.push(TrackedFrame {
                result,
                predicted,
                reinitialized: true,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;

    #[test]
    fn stationary_prediction() {
        let p = Pose::looking(Vec3::new(1.0, 2.0, 1.5), 0.3, 0.1);
        let q = predict_constant_velocity(&p, &p);
        assert!((q.translation - p.translation).norm() < 1e-12);
        assert!(q.rotation_angle_to(&p) < 1e-12);
    }

    #[test]
    fn translation_is_replayed() {
        let a = Pose::looking(Vec3::new(1.0, 2.0, 1.5), 0.3, 0.1);
        let b = a.perturbed_xy_yaw(0.4, -0.2, 0.0);
        let c = predict_constant_velocity(&a, &b);
        let d = c.camera_center() - a.camera_center();
        assert!((d - Vec3::new(0.8, -0.4, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn yaw_rate_is_replayed() {
        let a = Pose::looking(Vec3::new(0.0, 0.0, 1.5), 0.3, 0.0);
        let b = Pose::looking(Vec3::new(0.0, 0.0, 1.5), 0.35, 0.0);
        let c = predict_constant_velocity(&a, &b);
        assert!((c.yaw() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn inverse_motion_is_identity() {
        let a = Pose::looking(Vec3::new(1.0, -2.0, 1.5), 0.7, 0.2);
        let b = Pose::looking(Vec3::new(1.5, -1.0, 1.4), 0.9, 0.15);
        // predict(b, a) replays a's motion back from b, then predict(a, that)
        // must come back to b
        let back = predict_constant_velocity(&b, &a);
        let fwd = predict_constant_velocity(&back, &a);
        assert!((fwd.translation - b.translation).norm() < 1e-12);
        assert!(fwd.rotation_angle_to(&b) < 1e-12);
    }
}
