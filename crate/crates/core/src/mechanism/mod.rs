//! Structural contracts of the world-ego generator and planner: attention
//! masks, query budgets, mask-driven routing, fusion, gating and losses.
//! Everything here is forward-only and deterministic.

mod attention;
mod fusion;
mod intent;
mod loss;
mod routing;
pub mod verify;

use nalgebra::DMatrix;
use thiserror::Error;

pub use attention::{
    allocate_queries, build_rca_mask, build_rca_mask_with, AttentionMask, QueryBudget, RcaOptions, Segment,
    SegmentKind, SequenceLayout,
};
pub use fusion::{flow_to_alpha, gru_step, gru_world_update, sigmoid, soft_fuse, GateParams, GruStep};
pub use intent::sanitize_intent;
pub use loss::{anneal_lambda, anneal_lambda_with, bce_dice_loss, AnnealShape, MaskLoss, LOSS_EPS};
pub use routing::{dispatch, pool_mask_to_tokens, route_tokens, unroute, ExpertBatch, RoutePlan, TokenGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("malformed layout: {0}")]
    MalformedLayout(String),
    #[error("turn window K must be at least 1")]
    BadWindow,
    #[error("query split {world} of {total} leaves an empty budget")]
    BudgetOutOfRange { total: usize, world: usize },
    #[error("token grid is empty or larger than the mask")]
    EmptyGrid,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("{expert} expert output is missing token {token}")]
    MissingToken { expert: &'static str, token: usize },
    #[error("non-finite value")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    BadParam(&'static str),
    #[error("step {step} outside [0, {total}]")]
    StepOutOfRange { step: usize, total: usize },
}

/// Token states: `n` rows of `d` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    values: DMatrix<f64>,
}

impl StateVector {
    pub fn new(values: DMatrix<f64>) -> Result<Self, MechanismError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self { values })
        } else {
            Err(MechanismError::NonFinite)
        }
    }

    pub fn from_rows(n: usize, d: usize, data: &[f64]) -> Result<Self, MechanismError> {
        if data.len() != n * d {
            return Err(MechanismError::DimMismatch(format!("{} values for {n}x{d}", data.len())));
        }
        Self::new(DMatrix::from_row_slice(n, d, data))
    }

    pub fn filled(n: usize, d: usize, value: f64) -> Self {
        Self { values: DMatrix::from_element(n, d, value) }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    pub(crate) fn same_shape(&self, other: &StateVector) -> Result<(), MechanismError> {
        if self.values.shape() == other.values.shape() {
            Ok(())
        } else {
            Err(MechanismError::DimMismatch(format!("{:?} vs {:?}", self.values.shape(), other.values.shape())))
        }
    }
}
