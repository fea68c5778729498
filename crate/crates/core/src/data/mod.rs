//! Ingestion, file formats and synthetic benchmark scenes.

pub mod frames;
pub mod init;
pub mod ply;
pub mod pnm;
pub mod poses;
pub mod synth;

pub use frames::{load_frame_dir, read_frame_dir, write_frame_dir, FrameRecord, FrameSet};
pub use init::{colorize, init_gaussians};
pub use ply::{load_ply, save_ply, ColoredPointCloud};
pub use pnm::{load_depth, load_image, load_mask, save_depth, save_image, save_mask};
pub use poses::{load_poses, save_poses};
pub use synth::{synth_scene, SceneSpec, SyntheticScene};
