//! Diagnostics for trained flows: trajectory curvature, BEV-histogram
//! divergences and sample-set distances.

mod bev;
mod curvature;
mod mmd;
mod report;
mod wasserstein;

pub use bev::{jsd, jsd_mass, BevGrid, BevHistogram};
pub use curvature::{curvature, midpoint_grid, CurvatureProfile, CurvedTrajectory, DEFAULT_TOP_K};
pub use mmd::{
    median_bandwidth, mmd2_biased, mmd2_unbiased, mmd_permutation_test, MmdEstimate,
    PermutationTest,
};
pub use report::{bootstrap_se, report_scale, MetricReport, MetricRow};
pub use wasserstein::{projection_directions, sliced_w2, w2_1d};
