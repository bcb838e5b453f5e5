//! Scene bundles on disk, the synthetic street generator, and the
//! end-to-end view synthesis, Gaussian training and evaluation drivers.

pub mod bundle;
pub mod gs;
pub mod io;
pub mod metrics;
pub mod nvs;
pub mod synth;

pub use bundle::{Edits, Frame, SceneBundle, View, ViewSet};
pub use gs::{render_views, training_views, virtual_views, train_gs, GsConfig, GsOutput};
pub use metrics::{eval_metrics, psnr, MetricsReport, ViewMetrics, PSNR_CAP};
pub use nvs::{
    condition_maps, denoiser_dataset, fuse_bundle, lateral_shift, read_fused, run_feedforward_nvs, write_fused, ClipInfo,
    ConditionEcho, ConditionMaps, NvsConfig, NvsOutput, TrajectoryPose, DEFAULT_SHIFTS,
};
pub use synth::{gen_synthetic_scene, oracle_views, GroundTruth, Hit, MovingBox, SynthBox, SynthSpec, SynthWorld};
