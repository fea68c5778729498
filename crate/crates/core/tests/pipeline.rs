//! End-to-end runs of the library on a small courtyard: map building from
//! files on disk, submap training, rendering and relocalization.

use gsreloc_core::data::{self, FrameSet, SceneSpec};
use gsreloc_core::eval;
use gsreloc_core::geom::{wrap_angle, Pose};
use gsreloc_core::map::{self, GaussianMap};
use gsreloc_core::raster::{render, RenderConfig};
use gsreloc_core::reloc::Relocalizer;
use gsreloc_core::train::{photo_loss, train_submap, TrainConfig};

fn courtyard() -> (SceneSpec, data::SyntheticScene) {
    let spec = SceneSpec::courtyard();
    let scene = data::synth_scene(3, &spec).unwrap();
    (spec, scene)
}

#[test]
fn files_on_disk_build_a_map_that_trains() {
    let (spec, scene) = courtyard();
    let dir = tempfile::tempdir().unwrap();
    let frames_dir = dir.path().join("frames");
    data::write_frame_dir(
        &frames_dir,
        &FrameSet {
            intrinsics: &spec.intrinsics,
            poses: &scene.trajectory,
            images: &scene.images,
            masks: None,
            depths: Some(&scene.depths),
        },
    )
    .unwrap();
    data::save_ply(&scene.init_cloud, dir.path().join("points.ply")).unwrap();

    let (k, frames) = data::load_frame_dir(&frames_dir).unwrap();
    assert_eq!(k, spec.intrinsics);
    assert_eq!(frames.len(), scene.trajectory.len());
    for (f, p) in frames.iter().zip(&scene.trajectory) {
        assert!((f.pose.camera_center() - p.camera_center()).norm() < 1e-12);
    }
    let pc = data::load_ply(dir.path().join("points.ply")).unwrap();
    let colored = data::colorize(&pc.points, &frames, &k).unwrap();
    let gaussians = data::init_gaussians(&colored).unwrap();
    assert!(!gaussians.is_empty() && gaussians.len() <= pc.len());

    let mut m = GaussianMap::new(1.0).unwrap();
    m.insert(gaussians).unwrap();
    let path = dir.path().join("built.map");
    map::save(&m, &path).unwrap();
    let mut m = map::load(&path).unwrap();

    let cfg = TrainConfig {
        iterations: 60,
        densify_interval: 20,
        background: spec.background,
        ..TrainConfig::default()
    };
    let before = photo_loss(&m.all_gaussians(), &frames, &k, &cfg).unwrap();
    let report = train_submap(&mut m, &frames, &k, &cfg).unwrap();
    let after = photo_loss(&m.all_gaussians(), &frames, &k, &cfg).unwrap();
    assert_eq!(report.iterations.len(), 60);
    assert!(after < 0.7 * before, "{before} -> {after}");
    // the trained map still serializes exactly
    let bytes = map::write_map(&m);
    assert_eq!(map::write_map(&map::read_map(&bytes).unwrap()), bytes);
}

#[test]
fn ground_truth_map_relocalizes_a_perturbed_query() {
    // the plaza has the feature density that refinement needs
    let spec = SceneSpec::plaza();
    let scene = data::synth_scene(0, &spec).unwrap();
    let mut m = GaussianMap::new(map::DEFAULT_VOXEL_SIZE).unwrap();
    m.insert(scene.gaussians.iter().cloned()).unwrap();
    let mut r = Relocalizer::new(&m, spec.intrinsics, spec.background);
    r.search.range_xy = 3.0;
    r.search.grid_xy = 1.0;
    let truth = scene.trajectory[10];
    let coarse = truth.perturbed_xy_yaw(1.2, -0.8, 25f64.to_radians());
    let init = r.initial_localize(&scene.images[10], &coarse).unwrap();
    let d = init.pose.camera_center() - truth.camera_center();
    assert!(d.x.abs() <= 1.0 && d.y.abs() <= 1.0, "{d:?}");
    assert!(wrap_angle(init.pose.yaw() - truth.yaw()).abs() <= 10f64.to_radians());
    let refined = r.refine_pose(&scene.images[10], &init.pose).unwrap();
    assert!(refined.success);
    assert!((refined.pose.camera_center() - truth.camera_center()).norm() < 0.4);
}

#[test]
fn tracking_follows_the_trajectory_within_centimeters() {
    let (spec, scene) = courtyard();
    let mut m = GaussianMap::new(1.0).unwrap();
    m.insert(scene.gaussians.iter().cloned()).unwrap();
    let r = Relocalizer::new(&m, spec.intrinsics, spec.background);
    let n = 8;
    let tracked = r.track(&scene.images[..n], &scene.trajectory[0], &[]).unwrap();
    let est: Vec<Pose> = tracked.iter().map(|t| t.result.pose).collect();
    let ape = eval::ape(&est, &scene.trajectory[..n]).unwrap();
    assert_eq!(ape.count, n);
    assert!(ape.rmse < 0.05, "{ape:?}");
}

#[test]
fn rendering_the_true_scene_reproduces_its_frames() {
    let (spec, scene) = courtyard();
    let mut m = GaussianMap::new(1.0).unwrap();
    m.insert(scene.gaussians.iter().cloned()).unwrap();
    // the map stores f32 parameters, so renders agree to float precision
    for i in [0, 7, 15] {
        let f = render(&m.all_gaussians(), &scene.trajectory[i], &spec.intrinsics, spec.background, &RenderConfig::default());
        let worst = f.color.iter().zip(&scene.images[i].data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-4, "frame {i}: {worst}");
    }
}
