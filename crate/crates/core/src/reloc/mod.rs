//! Relocalization against a trained map: coarse rendered search, feature
//! matching with PnP, iterative refinement and frame-to-frame tracking.

pub mod features;
pub mod ncc;
pub mod pnp;
pub mod refine;
pub mod search;
pub mod track;

pub use features::{detect_features, match_features, FeatureFrontend, FeatureMatch, Features, HarrisBrief, Keypoint};
pub use ncc::{ncc, ncc_gray, Centered};
pub use pnp::{gauss_newton, p3p, pnp_ransac, solve_pnp_ransac, PnpConfig, PnpResult};
pub use refine::refine_pose;
pub use search::{
    initial_localize, visit_order, write_trace_csv, CandidateScore, LocalizationResult, RefineConfig, Relocalizer,
    SearchConfig,
};
pub use track::{predict_constant_velocity, TrackedFrame};
