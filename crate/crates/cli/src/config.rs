//! Flat `key = value` configuration shared by every subcommand.

use std::fmt::Write as _;
use std::path::Path;

use gsreloc_core::data::SceneSpec;
use gsreloc_core::map::DEFAULT_VOXEL_SIZE;
use gsreloc_core::raster::RenderConfig;
use gsreloc_core::reloc::{PnpConfig, RefineConfig, SearchConfig};
use gsreloc_core::train::{OptimizerKind, TrainConfig};
use gsreloc_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    /// Worker threads; zero picks one per core.
    pub threads: usize,
    pub voxel_size: f64,
    pub background: [f64; 3],
    /// Scene preset written by `synth`.
    pub scene: String,
    pub train: TrainConfig,
    pub render: RenderConfig,
    pub search: SearchConfig,
    pub refine: RefineConfig,
    pub pnp: PnpConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            threads: 0,
            voxel_size: DEFAULT_VOXEL_SIZE,
            background: SceneSpec::plaza().background,
            scene: "plaza".into(),
            train: TrainConfig::default(),
            render: RenderConfig::default(),
            search: SearchConfig::default(),
            refine: RefineConfig::default(),
            pnp: PnpConfig::default(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("bad value {v:?} for {key}"))
}

fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("bad value {v:?} for {key}: expected true or false")),
    }
}

fn rgb(key: &str, v: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(format!("{key} needs three numbers"));
    }
    Ok([num(key, parts[0])?, num(key, parts[1])?, num(key, parts[2])?])
}

impl Config {
    /// Every key with its current value and a short description.
    pub fn entries(&self) -> Vec<(&'static str, String, &'static str)> {
        let t = &self.train;
        let s = &self.search;
        let r = &self.render;
        let opt = match t.optimizer {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        };
        let bg = self.background;
        vec![
            ("seed", self.seed.to_string(), "seed for scenes, sampling and training"),
            ("threads", self.threads.to_string(), "worker threads, 0 = one per core"),
            ("voxel_size", self.voxel_size.to_string(), "map cell size, meters"),
            ("background", format!("{} {} {}", bg[0], bg[1], bg[2]), "render background RGB, also the synthetic sky"),
            ("scene", self.scene.clone(), "synthetic preset: plaza or courtyard"),
            ("ewa_normalization", r.ewa_normalization.to_string(), "scale footprints by the Jacobian determinant"),
            ("low_pass", r.low_pass.to_string(), "2D covariance dilation, px^2"),
            ("min_weight", r.min_weight.to_string(), "smallest composited weight"),
            ("transmittance_stop", r.transmittance_stop.to_string(), "stop compositing below this transmittance"),
            ("tile_size", r.tile_size.to_string(), "raster tile side, px"),
            ("lambda", t.lambda.to_string(), "D-SSIM weight in the image loss"),
            ("w_photo", t.w_photo.to_string(), "photometric loss weight"),
            ("w_reproj", t.w_reproj.to_string(), "reprojection loss weight"),
            ("lr_mu", t.lr_mu.to_string(), "center learning rate per meter of scene extent"),
            ("lr_mu_final_fraction", t.lr_mu_final_fraction.to_string(), "final center rate fraction"),
            ("lr_log_scale", t.lr_log_scale.to_string(), "log-scale learning rate"),
            ("lr_rot", t.lr_rot.to_string(), "rotation learning rate"),
            ("lr_color", t.lr_color.to_string(), "color learning rate"),
            ("lr_opacity", t.lr_opacity.to_string(), "opacity-logit learning rate"),
            ("optimizer", opt.into(), "adam or sgd"),
            ("iterations", t.iterations.to_string(), "training iterations per submap"),
            ("densify_interval", t.densify_interval.to_string(), "iterations between densify passes"),
            ("densify_grad_threshold", t.densify_grad_threshold.to_string(), "densify gradient, NDC units"),
            ("prune_opacity_threshold", t.prune_opacity_threshold.to_string(), "prune below this opacity"),
            ("densify_until_fraction", t.densify_until_fraction.to_string(), "densify during this share of the run"),
            ("densify_size_fraction", t.densify_size_fraction.to_string(), "clone/split size, share of extent"),
            ("split_factor", t.split_factor.to_string(), "scale divisor for split children"),
            ("submap_radius_train", t.submap_radius_train.to_string(), "training submap radius, meters"),
            (
                "scene_extent",
                t.scene_extent.map_or("auto".into(), |v| v.to_string()),
                "extent for learning rates, or auto",
            ),
            ("grid_xy", s.grid_xy.to_string(), "search grid step, meters"),
            ("grid_yaw", s.grid_yaw.to_string(), "search grid step, degrees"),
            ("range_xy", s.range_xy.to_string(), "search half-width, meters"),
            ("range_yaw", s.range_yaw.to_string(), "search half-width, degrees"),
            ("random_fraction", s.random_fraction.to_string(), "share of candidates visited randomly first"),
            ("ncc_early_stop", s.ncc_early_stop.to_string(), "early-stop correlation"),
            ("min_matches_early_stop", s.min_matches_early_stop.to_string(), "early-stop match count"),
            ("submap_radius_reloc", s.submap_radius_reloc.to_string(), "relocalization submap radius, meters"),
            ("ncc_max_side", s.ncc_max_side.to_string(), "longest image side for NCC, px"),
            ("batch_size", s.batch_size.to_string(), "candidates scored between early-stop checks"),
            ("refine_max_iters", self.refine.max_iters.to_string(), "refinement iterations"),
            ("refine_min_translation", self.refine.min_translation.to_string(), "refinement stop, meters"),
            ("refine_min_rotation", self.refine.min_rotation_deg.to_string(), "refinement stop, degrees"),
            ("pnp_inlier_px", self.pnp.inlier_px.to_string(), "RANSAC inlier threshold, px"),
            ("pnp_confidence", self.pnp.confidence.to_string(), "RANSAC confidence"),
            ("pnp_max_iterations", self.pnp.max_iterations.to_string(), "RANSAC iteration cap"),
            ("pnp_min_inliers", self.pnp.min_inliers.to_string(), "inliers for a reliable pose"),
        ]
    }

    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        let s = &mut self.search;
        let r = &mut self.render;
        match key {
            "seed" => self.seed = num(key, v)?,
            "threads" => self.threads = num(key, v)?,
            "voxel_size" => self.voxel_size = num(key, v)?,
            "background" => self.background = rgb(key, v)?,
            "scene" => match v {
                "plaza" | "courtyard" => self.scene = v.into(),
                _ => return Err(format!("unknown scene {v:?}")),
            },
            "ewa_normalization" => r.ewa_normalization = flag(key, v)?,
            "low_pass" => r.low_pass = num(key, v)?,
            "min_weight" => r.min_weight = num(key, v)?,
            "transmittance_stop" => r.transmittance_stop = num(key, v)?,
            "tile_size" => r.tile_size = num(key, v)?,
            "lambda" => t.lambda = num(key, v)?,
            "w_photo" => t.w_photo = num(key, v)?,
            "w_reproj" => t.w_reproj = num(key, v)?,
            "lr_mu" => t.lr_mu = num(key, v)?,
            "lr_mu_final_fraction" => t.lr_mu_final_fraction = num(key, v)?,
            "lr_log_scale" => t.lr_log_scale = num(key, v)?,
            "lr_rot" => t.lr_rot = num(key, v)?,
            "lr_color" => t.lr_color = num(key, v)?,
            "lr_opacity" => t.lr_opacity = num(key, v)?,
            "optimizer" => {
                t.optimizer = match v {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(format!("unknown optimizer {v:?}")),
                }
            }
            "iterations" => t.iterations = num(key, v)?,
            "densify_interval" => t.densify_interval = num(key, v)?,
            "densify_grad_threshold" => t.densify_grad_threshold = num(key, v)?,
            "prune_opacity_threshold" => t.prune_opacity_threshold = num(key, v)?,
            "densify_until_fraction" => t.densify_until_fraction = num(key, v)?,
            "densify_size_fraction" => t.densify_size_fraction = num(key, v)?,
            "split_factor" => t.split_factor = num(key, v)?,
            "submap_radius_train" => t.submap_radius_train = num(key, v)?,
            "scene_extent" => t.scene_extent = if v == "auto" { None } else { Some(num(key, v)?) },
            "grid_xy" => s.grid_xy = num(key, v)?,
            "grid_yaw" => s.grid_yaw = num(key, v)?,
            "range_xy" => s.range_xy = num(key, v)?,
            "range_yaw" => s.range_yaw = num(key, v)?,
            "random_fraction" => s.random_fraction = num(key, v)?,
            "ncc_early_stop" => s.ncc_early_stop = num(key, v)?,
            "min_matches_early_stop" => s.min_matches_early_stop = num(key, v)?,
            "submap_radius_reloc" => s.submap_radius_reloc = num(key, v)?,
            "ncc_max_side" => s.ncc_max_side = num(key, v)?,
            "batch_size" => s.batch_size = num(key, v)?,
            "refine_max_iters" => self.refine.max_iters = num(key, v)?,
            "refine_min_translation" => self.refine.min_translation = num(key, v)?,
            "refine_min_rotation" => self.refine.min_rotation_deg = num(key, v)?,
            "pnp_inlier_px" => self.pnp.inlier_px = num(key, v)?,
            "pnp_confidence" => self.pnp.confidence = num(key, v)?,
            "pnp_max_iterations" => self.pnp.max_iterations = num(key, v)?,
            "pnp_min_inliers" => self.pnp.min_inliers = num(key, v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value: {raw:?}", i + 1)));
            };
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}: {raw:?}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        let mut c = Config::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// Seeds derived from the one configured seed, plus the background,
    /// pushed into every stage config.
    pub fn finalize(&mut self) -> Result<()> {
        self.train.seed = self.seed;
        self.train.background = self.background;
        self.train.render = self.render;
        self.search.seed = self.seed;
        self.pnp.seed = self.seed;
        self.train.validate()?;
        self.search.validate()?;
        if !(self.voxel_size > 0.0) {
            return Err(Error::Config("voxel_size must be positive".into()));
        }
        if self.render.tile_size == 0 {
            return Err(Error::Config("tile_size must be positive".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v, _) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Key reference for `--help`.
    pub fn help_text() -> String {
        let mut out = String::from("Configuration keys (defaults):\n");
        for (k, v, doc) in Config::default().entries() {
            let _ = writeln!(out, "  {k:<24} {v:<16} {doc}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let c = Config::default();
        let mut d = Config::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
        let mut e = Config::default();
        e.apply_text("iterations = 7\nbackground = 0.1 0.2 0.3\nscene_extent = 4\noptimizer = sgd\n")
            .unwrap();
        let mut f = Config::default();
        f.apply_text(&e.to_text()).unwrap();
        assert_eq!(e, f);
    }

    #[test]
    fn unknown_keys_name_the_line() {
        let mut c = Config::default();
        let err = c.apply_text("seed = 1\n\n# note\nbogus = 3\n").unwrap_err().to_string();
        assert!(err.contains("line 4") && err.contains("bogus"), "{err}");
        assert!(c.apply_text("grid_xy 2").is_err());
        assert!(c.apply_text("grid_xy = two").is_err());
    }
}
