//! Dense flow fields, homography-based camera/object flow decomposition and
//! per-chunk motion statistics.

mod homography;
mod profile;

use thiserror::Error;

pub use homography::{
    estimate_homography, matches_from_flow, render_camera_flow, reprojection_error, residual_object_flow, Homography,
    PointMatch, RansacParams,
};
pub(crate) use profile::top_count;
pub use profile::{
    flow_stats, flow_stats_with, motion_profile, resample_profile, FlowStats, MotionProfile, MotionStatsConfig,
};

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("need at least 4 matches, got {0}")]
    TooFewMatches(usize),
    #[error("invalid RANSAC parameter: {0}")]
    BadParams(&'static str),
    #[error("all {0} RANSAC hypotheses were degenerate")]
    Degenerate(usize),
    #[error("homography is singular or has h[2][2] = 0")]
    Singular,
    #[error("pixel ({x}, {y}) projects to infinity")]
    PointAtInfinity { x: usize, y: usize },
    #[error("flow dimensions differ: {0:?} vs {1:?}")]
    DimMismatch((usize, usize), (usize, usize)),
    #[error("frame dimensions must be at least 1x1")]
    EmptyFrame,
    #[error("chunk has no flow fields")]
    MissingFlows,
    #[error("chunk has {0} frames, need at least 2")]
    TooShort(usize),
}

/// Per-pixel displacement in pixels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Self {
        Self { width, height, u, v }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        let n = width * height;
        Self::new(width, height, vec![u; n], vec![v; n])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    #[inline]
    pub fn magnitude_at(&self, i: usize) -> f64 {
        (self.u[i] as f64).hypot(self.v[i] as f64)
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.magnitude_at(i)).collect()
    }

    pub fn mean_magnitude(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..self.len()).map(|i| self.magnitude_at(i)).sum::<f64>() / self.len() as f64
    }

    pub fn max_magnitude(&self) -> f64 {
        (0..self.len()).map(|i| self.magnitude_at(i)).fold(0.0, f64::max)
    }
}
