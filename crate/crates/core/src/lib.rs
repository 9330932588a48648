//! Evaluation toolkit for multi-turn world-ego video rollouts.
//!
//! - [`rollout`]: trajectories, validation and on-disk formats
//! - [`flowlab`]: homographies, camera/object flow split, motion profiles
//! - [`featurizer`]: frame embeddings
//! - [`metrics`]: RCBD, LPSA, CISR, PMPA, CPDM and FPHS
//! - [`mechanism`]: attention masks, routing, fusion, gating and losses
//! - [`microsim`]: fixture generator with exact ground truth

pub mod featurizer;
pub mod flowlab;
pub mod mechanism;
pub mod metrics;
pub mod microsim;
pub mod rollout;
