//! Evaluation, interpretability and report rendering.

pub mod interpret;
pub mod metrics;
pub mod report;

pub use interpret::{azimuth_profile, gradcam, latents_csv, AttentionSource, AzimuthProfile, CamTarget, GradCam};
pub use metrics::{evaluate, kagan_between, metrics_csv, parse_metrics_csv, MetricsReport};
pub use report::{beachball_grid, render_gradcam, render_report, ReportInput};
