//! Posed frame directories.
//!
//! Layout: `intrinsics.txt` (`fx fy cx cy width height`), `poses.txt`,
//! `images/NNNNNN.ppm`, and optionally `masks/NNNNNN.pgm` and
//! `depths/NNNNNN.pgm`, numbered by line order in `poses.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use super::pnm::{load_image, load_mask, save_depth, save_image, save_mask};
use super::poses::{load_poses, save_poses};
use crate::error::{Error, Result};
use crate::geom::{Intrinsics, Pose};
use crate::image::RgbImage;
use crate::train::TrainFrame;

pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const POSES_FILE: &str = "poses.txt";

/// One frame on disk. The pose is camera-to-world, as in the pose file.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub pose: Pose,
    pub timestamp: f64,
}

impl FrameRecord {
    /// Reads the image and mask; the returned frame carries a world-to-camera
    /// pose.
    pub fn load(&self, k: &Intrinsics) -> Result<TrainFrame> {
        let image = load_image(&self.image)?;
        if image.width != k.width || image.height != k.height {
            return Err(Error::InvalidInput(format!(
                "{} is {}x{}, intrinsics say {}x{}",
                self.image.display(),
                image.width,
                image.height,
                k.width,
                k.height
            )));
        }
        let mask = match &self.mask {
            Some(p) => {
                let (w, h, m) = load_mask(p)?;
                if w != k.width || h != k.height {
                    return Err(Error::InvalidInput(format!("mask {} has the wrong size", p.display())));
                }
                Some(m)
            }
            None => None,
        };
        Ok(TrainFrame {
            image,
            pose: self.pose.inverse().with_timestamp(Some(self.timestamp)),
            mask,
        })
    }
}

pub fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:06}.{ext}")
}

pub fn parse_intrinsics(text: &str) -> Result<Intrinsics> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (i, line) = lines.next().ok_or_else(|| Error::parse(1, "empty intrinsics file"))?;
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 6 {
        return Err(Error::parse(i + 1, format!("expected 6 fields, found {}", f.len())));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(i + 1, format!("not a number: '{s}'")));
    let dim = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(i + 1, format!("not an image size: '{s}'")));
    let k = Intrinsics::new(num(f[0])?, num(f[1])?, num(f[2])?, num(f[3])?, dim(f[4])?, dim(f[5])?)
        .map_err(|e| Error::parse(i + 1, e.to_string()))?;
    if let Some((j, _)) = lines.next() {
        return Err(Error::parse(j + 1, "unexpected extra line"));
    }
    Ok(k)
}

pub fn format_intrinsics(k: &Intrinsics) -> String {
    format!("{:?} {:?} {:?} {:?} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height)
}

pub fn load_intrinsics(path: impl AsRef<Path>) -> Result<Intrinsics> {
    parse_intrinsics(&fs::read_to_string(path)?)
}

/// Lists the frames of a directory. Referenced images must exist.
pub fn read_frame_dir(dir: impl AsRef<Path>) -> Result<(Intrinsics, Vec<FrameRecord>)> {
    let dir = dir.as_ref();
    let k = load_intrinsics(dir.join(INTRINSICS_FILE))?;
    let poses = load_poses(dir.join(POSES_FILE))?;
    let mut out = Vec::with_capacity(poses.len());
    for (i, pose) in poses.into_iter().enumerate() {
        let image = dir.join("images").join(frame_name(i, "ppm"));
        if !image.is_file() {
            return Err(Error::InvalidInput(format!("missing frame image {}", image.display())));
        }
        let mask = dir.join("masks").join(frame_name(i, "pgm"));
        out.push(FrameRecord {
            image,
            mask: mask.is_file().then_some(mask),
            timestamp: pose.timestamp.unwrap_or(i as f64),
            pose,
        });
    }
    Ok((k, out))
}

/// Loads every frame of a directory with world-to-camera poses.
pub fn load_frame_dir(dir: impl AsRef<Path>) -> Result<(Intrinsics, Vec<TrainFrame>)> {
    let (k, records) = read_frame_dir(dir)?;
    let frames = records.iter().map(|r| r.load(&k)).collect::<Result<Vec<_>>>()?;
    Ok((k, frames))
}

/// Images and world-to-camera poses to write with [`write_frame_dir`].
pub struct FrameSet<'a> {
    pub intrinsics: &'a Intrinsics,
    pub poses: &'a [Pose],
    pub images: &'a [RgbImage],
    pub masks: Option<&'a [Vec<bool>]>,
    pub depths: Option<&'a [Vec<f64>]>,
}

/// Writes a frame directory; returns the written paths relative to `dir`.
pub fn write_frame_dir(dir: impl AsRef<Path>, set: &FrameSet) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if set.poses.len() != set.images.len() {
        return Err(Error::InvalidInput("pose and image counts differ".into()));
    }
    let k = set.intrinsics;
    fs::create_dir_all(dir.join("images"))?;
    let mut written = vec![PathBuf::from(INTRINSICS_FILE), PathBuf::from(POSES_FILE)];
    fs::write(dir.join(INTRINSICS_FILE), format_intrinsics(k))?;
    let c2w: Vec<Pose> = set
        .poses
        .iter()
        .enumerate()
        .map(|(i, p)| p.inverse().with_timestamp(Some(p.timestamp.unwrap_or(i as f64))))
        .collect();
    save_poses(&c2w, dir.join(POSES_FILE))?;
    for (i, img) in set.images.iter().enumerate() {
        let rel = Path::new("images").join(frame_name(i, "ppm"));
        save_image(img, dir.join(&rel))?;
        written.push(rel);
    }
    if let Some(masks) = set.masks {
        fs::create_dir_all(dir.join("masks"))?;
        for (i, m) in masks.iter().enumerate() {
            let rel = Path::new("masks").join(frame_name(i, "pgm"));
            save_mask(k.width, k.height, m, dir.join(&rel))?;
            written.push(rel);
        }
    }
    if let Some(depths) = set.depths {
        fs::create_dir_all(dir.join("depths"))?;
        for (i, d) in depths.iter().enumerate() {
            let rel = Path::new("depths").join(frame_name(i, "pgm"));
            save_depth(k.width, k.height, d, dir.join(&rel))?;
            written.push(rel);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intrinsics_roundtrip() {
        let k = Intrinsics::new(100.5, 99.25, 79.5, 59.5, 160, 120).unwrap();
        assert_eq!(parse_intrinsics(&format_intrinsics(&k)).unwrap(), k);
        assert!(matches!(parse_intrinsics("1 2 3"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_intrinsics("1 1 0 0 0 4"), Err(Error::Parse { line: 1, .. })));
    }
}
