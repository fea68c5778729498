//! Trajectory text files: one `timestamp tx ty tz qx qy qz qw` line per
//! frame, camera-to-world.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Pose, Quat, Vec3};

/// Parses camera-to-world poses. Blank lines and lines starting with `#`
/// are ignored. Quaternions already unit length to within 1e-12 are kept
/// bit-exact; others must be normalizable and are normalized.
pub fn parse_poses(text: &str) -> Result<Vec<Pose>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::parse(line_no, format!("expected 8 fields, found {}", fields.len())));
        }
        let mut v = [0.0f64; 8];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|_| Error::parse(line_no, format!("not a number: '{f}'")))?;
            if !slot.is_finite() {
                return Err(Error::parse(line_no, format!("non-finite value '{f}'")));
            }
        }
        let q = Quat::new(v[7], v[4], v[5], v[6]);
        let n = q.norm();
        let rotation = if (n - 1.0).abs() <= 1e-12 {
            q
        } else {
            q.normalized()
                .map_err(|_| Error::parse(line_no, "quaternion has zero length"))?
        };
        out.push(Pose {
            rotation,
            translation: Vec3::new(v[1], v[2], v[3]),
            timestamp: Some(v[0]),
        });
    }
    Ok(out)
}

/// Formats camera-to-world poses with shortest round-trip precision. Poses
/// without a timestamp get their index.
pub fn format_poses(poses: &[Pose]) -> String {
    let mut s = String::new();
    for (i, p) in poses.iter().enumerate() {
        let t = p.timestamp.unwrap_or(i as f64);
        let q = p.rotation;
        let c = p.translation;
        s.push_str(&format!(
            "{t:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}\n",
            c.x, c.y, c.z, q.x, q.y, q.z, q.w
        ));
    }
    s
}

pub fn load_poses(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(path)?;
    parse_poses(&text)
}

pub fn save_poses(poses: &[Pose], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_poses(poses))?;
    Ok(())
}

/// Camera-to-world poses from world-to-camera ones.
pub fn to_camera_to_world(poses: &[Pose]) -> Vec<Pose> {
    poses.iter().map(Pose::inverse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_the_documented_line() {
        let p = parse_poses("0.0 1 2 3 0 0 0 1\n").unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].translation, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(p[0].rotation, Quat::IDENTITY);
        assert_eq!(p[0].timestamp, Some(0.0));
    }

    #[test]
    fn wrong_field_count_names_the_line() {
        let err = parse_poses("# header\n0 1 2 3 0 0 0 1\n1 2 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        assert!(matches!(parse_poses("0 1 2 3 0 0 0 0"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_poses("0 1 2 nan 0 0 0 1"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn roundtrip_is_lossless() {
        let poses: Vec<Pose> = (0..20)
            .map(|i| {
                let a = i as f64 * 0.37;
                Pose::new(Quat::new(a.cos(), 0.1 * a, -0.3, a.sin()), Vec3::new(a / 3.0, -a * 1e-7, 1e9 / (a + 1.0)))
                    .unwrap()
                    .with_timestamp(Some(i as f64 * 0.1))
            })
            .collect();
        let back = parse_poses(&format_poses(&poses)).unwrap();
        assert_eq!(back, poses);
        assert_eq!(format_poses(&back), format_poses(&poses));
    }
}
