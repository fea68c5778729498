//! One function per subcommand. Each writes its primary outputs to disk and
//! a short summary to `out`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use gsreloc_core::data::frames::{load_intrinsics, read_frame_dir};
use gsreloc_core::data::{self, load_ply, save_depth, save_image, save_ply, FrameSet, SceneSpec};
use gsreloc_core::eval;
use gsreloc_core::geom::{Intrinsics, Pose};
use gsreloc_core::image::RgbImage;
use gsreloc_core::map::{self, GaussianMap};
use gsreloc_core::raster::render;
use gsreloc_core::reloc::{write_trace_csv, LocalizationResult, Relocalizer};
use gsreloc_core::train::{train_submap_around, TrainFrame, TrainReport};
use gsreloc_core::{Error, Result};

use crate::config::Config;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const FRAMES_DIR: &str = "frames";
pub const POINTS_FILE: &str = "points.ply";
pub const GT_MAP_FILE: &str = "gt.map";

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `<sha256>  <path>` lines, sorted by path, for every file under `dir`
/// except the manifest itself.
pub fn manifest(dir: &Path) -> Result<String> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("walk stays under root").to_path_buf();
                if rel != Path::new(MANIFEST_FILE) {
                    out.push(rel);
                }
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    let mut text = String::new();
    for rel in files {
        let digest = sha256_hex(&fs::read(dir.join(&rel))?);
        let name = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        text.push_str(&format!("{digest}  {name}\n"));
    }
    Ok(text)
}

/// Reads one camera-to-world entry of a pose file as a world-to-camera pose.
pub fn read_pose(path: &Path, index: usize) -> Result<Pose> {
    let poses = data::load_poses(path)?;
    poses.get(index).map(Pose::inverse).ok_or_else(|| {
        Error::InvalidInput(format!("{} has {} poses, index {index} requested", path.display(), poses.len()))
    })
}

fn load_map(path: &Path) -> Result<GaussianMap> {
    map::load(path)
}

fn relocalizer<'a>(map: &'a GaussianMap, k: Intrinsics, cfg: &Config) -> Relocalizer<'a> {
    let mut r = Relocalizer::new(map, k, cfg.background);
    r.render = cfg.render;
    r.search = cfg.search.clone();
    r.pnp = cfg.pnp;
    r.refine = cfg.refine;
    r
}

fn pose_line(pose_w2c: &Pose) -> String {
    data::poses::format_poses(&[pose_w2c.inverse()]).trim_end().to_string()
}

fn scene_spec(cfg: &Config) -> SceneSpec {
    let mut spec = match cfg.scene.as_str() {
        "courtyard" => SceneSpec::courtyard(),
        _ => SceneSpec::plaza(),
    };
    spec.background = cfg.background;
    spec
}

/// Writes a synthetic scene under `out_dir`: posed frames with depths, the
/// jittered point cloud, the ground-truth map and a manifest.
pub fn synth(cfg: &Config, out_dir: &Path, out: &mut dyn Write) -> Result<()> {
    let spec = scene_spec(cfg);
    let scene = data::synth_scene(cfg.seed, &spec)?;
    fs::create_dir_all(out_dir)?;
    data::write_frame_dir(
        out_dir.join(FRAMES_DIR),
        &FrameSet {
            intrinsics: &spec.intrinsics,
            poses: &scene.trajectory,
            images: &scene.images,
            masks: None,
            depths: Some(&scene.depths),
        },
    )?;
    save_ply(&scene.init_cloud, out_dir.join(POINTS_FILE))?;
    let mut gt = GaussianMap::new(cfg.voxel_size)?;
    gt.insert(scene.gaussians.iter().cloned())?;
    map::save(&gt, out_dir.join(GT_MAP_FILE))?;
    let text = manifest(out_dir)?;
    fs::write(out_dir.join(MANIFEST_FILE), &text)?;
    writeln!(
        out,
        "scene {} seed {} frames {} gaussians {} points {}",
        cfg.scene,
        cfg.seed,
        scene.images.len(),
        scene.gaussians.len(),
        scene.init_cloud.len()
    )?;
    writeln!(out, "manifest {}", sha256_hex(text.as_bytes()))?;
    Ok(())
}

fn load_frames(dir: &Path) -> Result<(Intrinsics, Vec<TrainFrame>)> {
    let (k, records) = read_frame_dir(dir)?;
    let frames = records.iter().map(|r| r.load(&k)).collect::<Result<Vec<_>>>()?;
    Ok((k, frames))
}

/// Colorizes the point cloud from the frames, seeds one Gaussian per point
/// and saves the map.
pub fn build_map(cfg: &Config, points: &Path, frames_dir: &Path, out_map: &Path, out: &mut dyn Write) -> Result<()> {
    let pc = load_ply(points)?;
    let (k, frames) = load_frames(frames_dir)?;
    let colored = data::colorize(&pc.points, &frames, &k)?;
    let gaussians = data::init_gaussians(&colored)?;
    let mut m = GaussianMap::new(cfg.voxel_size)?;
    m.insert(gaussians)?;
    map::save(&m, out_map)?;
    writeln!(out, "cells {} gaussians {}", m.cell_count(), m.gaussian_count())?;
    Ok(())
}

/// Anchor positions along the trajectory: the first camera, then one each
/// time the path has covered half the training radius since the last.
pub fn training_anchors(frames: &[TrainFrame], radius: f64) -> Vec<[f64; 2]> {
    let centers: Vec<_> = frames.iter().map(|f| f.pose.camera_center().xy()).collect();
    let Some(first) = centers.first() else {
        return Vec::new();
    };
    let mut anchors = vec![[first.x, first.y]];
    let mut travelled = 0.0;
    for w in centers.windows(2) {
        travelled += (w[1] - w[0]).norm();
        if travelled >= radius / 2.0 {
            anchors.push([w[1].x, w[1].y]);
            travelled = 0.0;
        }
    }
    anchors
}

pub const TRAIN_CSV_HEADER: &str = "anchor,iteration,total,photo,reproj,gaussian_count";

/// Trains the map submap by submap along the trajectory and writes the loss
/// trace of every anchor.
pub fn train(
    cfg: &Config,
    map_path: &Path,
    frames_dir: &Path,
    out_map: &Path,
    report: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let mut m = load_map(map_path)?;
    let (k, frames) = load_frames(frames_dir)?;
    if frames.is_empty() {
        return Err(Error::InvalidInput("no training frames".into()));
    }
    let radius = cfg.train.submap_radius_train;
    let anchors = training_anchors(&frames, radius);
    let mut csv = format!("{TRAIN_CSV_HEADER}\n");
    for (ai, anchor) in anchors.iter().enumerate() {
        let subset: Vec<TrainFrame> = frames
            .iter()
            .filter(|f| {
                let c = f.pose.camera_center();
                (c.x - anchor[0]).hypot(c.y - anchor[1]) <= radius
            })
            .cloned()
            .collect();
        let rep: TrainReport = train_submap_around(&mut m, *anchor, &subset, &k, &cfg.train)?;
        for line in rep.csv_rows().lines() {
            csv.push_str(&format!("{ai},{line}\n"));
        }
        let last = rep.iterations.last();
        writeln!(
            out,
            "anchor {ai} at ({:.3}, {:.3}) frames {} final_loss {} gaussians {}",
            anchor[0],
            anchor[1],
            subset.len(),
            last.map_or("n/a".into(), |r| format!("{:.6e}", r.total)),
            last.map_or(0, |r| r.gaussian_count)
        )?;
    }
    map::save(&m, out_map)?;
    if let Some(p) = report {
        fs::write(p, csv)?;
    }
    writeln!(out, "anchors {} cells {} gaussians {}", anchors.len(), m.cell_count(), m.gaussian_count())?;
    Ok(())
}

/// Renders color to PPM and alpha-normalized depth to 16-bit PGM.
pub fn render_view(
    cfg: &Config,
    map_path: &Path,
    k: &Intrinsics,
    pose: &Pose,
    out_image: &Path,
    out_depth: Option<&Path>,
) -> Result<()> {
    let m = load_map(map_path)?;
    let frame = render(&m.all_gaussians(), pose, k, cfg.background, &cfg.render);
    if let Some(p) = out_depth {
        let depth: Vec<f64> = frame
            .depth
            .iter()
            .zip(&frame.alpha)
            .map(|(d, a)| if *a > 0.5 { d / a } else { 0.0 })
            .collect();
        save_depth(k.width, k.height, &depth, p)?;
    }
    save_image(&frame.into_color_image(), out_image)?;
    Ok(())
}

fn print_result(out: &mut dyn Write, stage: &str, r: &LocalizationResult) -> Result<()> {
    writeln!(
        out,
        "{stage} ncc {:.6} inliers {} matches {} iterations {} success {}",
        r.ncc_best, r.inliers, r.matches, r.iterations, r.success
    )?;
    Ok(())
}

/// Grid-search initialization followed by refinement. Fails with a
/// localization error, after printing, when refinement does not succeed.
#[allow(clippy::too_many_arguments)]
pub fn localize(
    cfg: &Config,
    map_path: &Path,
    k: Intrinsics,
    query: &Path,
    coarse: &Pose,
    trace: Option<&Path>,
    out_pose: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let m = load_map(map_path)?;
    let img: RgbImage = data::load_image(query)?;
    if img.width != k.width || img.height != k.height {
        return Err(Error::InvalidInput("query size does not match intrinsics".into()));
    }
    let mut r = relocalizer(&m, k, cfg);
    r.search.record_trace = trace.is_some();
    let init = r.initial_localize(&img, coarse)?;
    print_result(out, "init", &init)?;
    if let (Some(p), Some(t)) = (trace, &init.candidate_trace) {
        let mut f = std::io::BufWriter::new(fs::File::create(p)?);
        write_trace_csv(t, &mut f)?;
        f.flush()?;
    }
    let refined = r.refine_pose(&img, &init.pose)?;
    print_result(out, "refine", &refined)?;
    let pose = refined.pose.with_timestamp(coarse.timestamp);
    writeln!(out, "pose {}", pose_line(&pose))?;
    if let Some(p) = out_pose {
        data::save_poses(&[pose.inverse()], p)?;
    }
    if !refined.success {
        return Err(Error::Localization {
            frame: 0,
            reason: format!("refinement found {} inliers", refined.inliers),
        });
    }
    Ok(())
}

/// Tracks every image of a frame directory and writes the camera-to-world
/// trajectory.
pub fn track(cfg: &Config, map_path: &Path, frames_dir: &Path, coarse: &Pose, out_traj: &Path, out: &mut dyn Write) -> Result<()> {
    let m = load_map(map_path)?;
    let (k, records) = read_frame_dir(frames_dir)?;
    let images = records.iter().map(|r| data::load_image(&r.image)).collect::<Result<Vec<_>>>()?;
    if images.is_empty() {
        return Err(Error::InvalidInput("no frames to track".into()));
    }
    let r = relocalizer(&m, k, cfg);
    let tracked = r.track(&images, coarse, &[])?;
    let c2w: Vec<Pose> = tracked
        .iter()
        .zip(&records)
        .map(|(t, rec)| t.result.pose.inverse().with_timestamp(Some(rec.timestamp)))
        .collect();
    data::save_poses(&c2w, out_traj)?;
    let reinit = tracked.iter().filter(|t| t.reinitialized).count();
    let failed = tracked.iter().filter(|t| !t.result.success).count();
    writeln!(out, "frames {} reinitialized {reinit} failed {failed}", tracked.len())?;
    Ok(())
}

/// APE and RPE rows plus x, y and yaw error histograms.
pub struct EvalOutputs<'a> {
    pub metrics: Option<&'a Path>,
    pub hist_dir: Option<&'a Path>,
    pub bins: usize,
    pub delta: usize,
}

pub fn evaluate(est_path: &Path, ref_path: &Path, o: &EvalOutputs, out: &mut dyn Write) -> Result<()> {
    let est: Vec<Pose> = data::load_poses(est_path)?.iter().map(Pose::inverse).collect();
    let reference: Vec<Pose> = data::load_poses(ref_path)?.iter().map(Pose::inverse).collect();
    let seq = est_path.file_stem().map_or("est".into(), |s| s.to_string_lossy().into_owned());
    let ape = eval::ape(&est, &reference)?;
    let mut csv = format!("{}\n{}\n", eval::METRIC_CSV_HEADER, eval::metric_csv_row("ape", &seq, &ape));
    // a trajectory shorter than the frame gap has no relative motions
    let rpe = if o.delta > 0 && est.len() <= o.delta {
        eprintln!("note: {} frames, no pairs {} apart; RPE row omitted", est.len(), o.delta);
        None
    } else {
        let r = eval::rpe(&est, &reference, o.delta)?;
        csv.push_str(&eval::metric_csv_row("rpe", &seq, &r));
        csv.push('\n');
        Some(r)
    };
    match o.metrics {
        Some(p) => fs::write(p, &csv)?,
        None => out.write_all(csv.as_bytes())?,
    }
    if let Some(dir) = o.hist_dir {
        fs::create_dir_all(dir)?;
        let errs = eval::xy_yaw_errors(&est, &reference)?;
        for (axis, name) in ["x", "y", "yaw"].iter().enumerate() {
            let v: Vec<f64> = errs.iter().map(|e| e[axis]).collect();
            let h = eval::error_histogram(&v, o.bins)?;
            let mut f = std::io::BufWriter::new(fs::File::create(dir.join(format!("hist_{name}.csv")))?);
            eval::write_histogram_csv(&h, &mut f)?;
            f.flush()?;
        }
    }
    if o.metrics.is_some() {
        let rpe_rmse = rpe.map_or("n/a".into(), |r| format!("{:?}", r.rmse));
        writeln!(out, "ape_rmse {:?} rpe_rmse {rpe_rmse} frames {}", ape.rmse, ape.count)?;
    }
    Ok(())
}

/// Intrinsics from an explicit file, else from the frame directory of a
/// synthetic scene next to the map.
pub fn resolve_intrinsics(explicit: Option<&Path>, map_path: &Path) -> Result<Intrinsics> {
    match explicit {
        Some(p) => load_intrinsics(p),
        None => {
            let guess = map_path
                .parent()
                .unwrap_or(Path::new("."))
                .join(FRAMES_DIR)
                .join(data::frames::INTRINSICS_FILE);
            if guess.is_file() {
                load_intrinsics(guess)
            } else {
                Err(Error::InvalidInput("no intrinsics given; pass --intrinsics".into()))
            }
        }
    }
}
