use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{MechanismError, StateVector};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fusion weight `σ((τ − |r|)/δ)` per token: near 1 where the residual
/// motion is small (world), near 0 where it is large (ego).
pub fn flow_to_alpha(magnitudes: &[f64], tau: f64, delta: f64) -> Result<Vec<f64>, MechanismError> {
    if !(delta > 0.0 && delta.is_finite()) || !tau.is_finite() {
        return Err(MechanismError::BadParam("delta must be positive and tau finite"));
    }
    if magnitudes.iter().any(|m| !m.is_finite()) {
        return Err(MechanismError::NonFinite);
    }
    Ok(magnitudes.iter().map(|&m| sigmoid((tau - m) / delta)).collect())
}

fn between(v: f64, a: f64, b: f64) -> f64 {
    v.clamp(a.min(b), a.max(b))
}

/// `α·x_world + (1 − α)·x_ego`, one weight per token row.
pub fn soft_fuse(alpha: &[f64], x_world: &StateVector, x_ego: &StateVector) -> Result<StateVector, MechanismError> {
    x_world.same_shape(x_ego)?;
    if alpha.len() != x_world.n() {
        return Err(MechanismError::DimMismatch(format!("{} weights for {} tokens", alpha.len(), x_world.n())));
    }
    if alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(MechanismError::BadParam("fusion weights must lie in [0, 1]"));
    }
    let (w, e) = (x_world.values(), x_ego.values());
    let out = DMatrix::from_fn(w.nrows(), w.ncols(), |i, c| {
        let a = alpha[i];
        // Rounding can push the blend one ulp outside its endpoints.
        between(a * w[(i, c)] + (1.0 - a) * e[(i, c)], w[(i, c)], e[(i, c)])
    });
    StateVector::new(out)
}

/// Affine gate weights, all `d × d` matrices acting on row vectors, plus
/// `d`-dimensional biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w_r1: DMatrix<f64>,
    pub w_r2: DMatrix<f64>,
    pub w_r3: DMatrix<f64>,
    pub b_r: RowDVector<f64>,
    pub w_c1: DMatrix<f64>,
    pub w_c2: DMatrix<f64>,
    pub b_c: RowDVector<f64>,
    pub w_g1: DMatrix<f64>,
    pub w_g2: DMatrix<f64>,
    pub w_g3: DMatrix<f64>,
    pub b_g: RowDVector<f64>,
}

impl GateParams {
    pub fn zeros(d: usize) -> Self {
        let m = DMatrix::zeros(d, d);
        let b = RowDVector::zeros(d);
        Self {
            w_r1: m.clone(),
            w_r2: m.clone(),
            w_r3: m.clone(),
            b_r: b.clone(),
            w_c1: m.clone(),
            w_c2: m.clone(),
            b_c: b.clone(),
            w_g1: m.clone(),
            w_g2: m.clone(),
            w_g3: m,
            b_g: b,
        }
    }

    /// Entries drawn from `N(0, scale²)`.
    pub fn random(d: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, scale).expect("scale must be finite and non-negative");
        let mut m = || DMatrix::from_fn(d, d, |_, _| normal.sample(rng));
        let (w_r1, w_r2, w_r3, w_c1, w_c2, w_g1, w_g2, w_g3) = (m(), m(), m(), m(), m(), m(), m(), m());
        let mut b = || RowDVector::from_fn(d, |_, _| normal.sample(rng));
        let (b_r, b_c, b_g) = (b(), b(), b());
        Self { w_r1, w_r2, w_r3, b_r, w_c1, w_c2, b_c, w_g1, w_g2, w_g3, b_g }
    }

    pub fn dim(&self) -> usize {
        self.b_r.len()
    }

    fn check(&self, d: usize) -> Result<(), MechanismError> {
        let square = [&self.w_r1, &self.w_r2, &self.w_r3, &self.w_c1, &self.w_c2, &self.w_g1, &self.w_g2, &self.w_g3];
        let biases = [&self.b_r, &self.b_c, &self.b_g];
        if square.iter().all(|m| m.shape() == (d, d)) && biases.iter().all(|b| b.len() == d) {
            Ok(())
        } else {
            Err(MechanismError::DimMismatch(format!("gate parameters are not all {d}-dimensional")))
        }
    }
}

/// Gates and candidate of one world-state update, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    pub reset: DMatrix<f64>,
    pub keep: DMatrix<f64>,
    pub candidate: DMatrix<f64>,
    pub output: StateVector,
}

fn broadcast(row: &RowDVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, row.len(), |_, c| row[c])
}

pub fn gru_step(
    prev: &StateVector,
    proposal: &StateVector,
    ego_summary: &[f64],
    params: &GateParams,
) -> Result<GruStep, MechanismError> {
    prev.same_shape(proposal)?;
    let (n, d) = (prev.n(), prev.d());
    if ego_summary.len() != d {
        return Err(MechanismError::DimMismatch(format!("ego summary has {} channels, state {d}", ego_summary.len())));
    }
    params.check(d)?;
    let (s, p) = (prev.values(), proposal.values());
    let e = DVector::from_column_slice(ego_summary).transpose();

    let reset = (s * &params.w_r1 + p * &params.w_r2 + broadcast(&(&e * &params.w_r3 + &params.b_r), n)).map(sigmoid);
    let candidate =
        (reset.component_mul(s) * &params.w_c1 + p * &params.w_c2 + broadcast(&params.b_c, n)).map(f64::tanh);
    let keep = (s * &params.w_g1 + p * &params.w_g2 + broadcast(&(&e * &params.w_g3 + &params.b_g), n)).map(sigmoid);
    let out = DMatrix::from_fn(n, d, |i, c| {
        let g = keep[(i, c)];
        between(g * s[(i, c)] + (1.0 - g) * candidate[(i, c)], s[(i, c)], candidate[(i, c)])
    });
    Ok(GruStep { reset, keep, candidate, output: StateVector::new(out)? })
}

/// `G ⊙ prev + (1 − G) ⊙ S̃`, gates computed from the previous state, the
/// proposal and the pooled ego state.
pub fn gru_world_update(
    prev: &StateVector,
    proposal: &StateVector,
    ego_summary: &[f64],
    params: &GateParams,
) -> Result<StateVector, MechanismError> {
    Ok(gru_step(prev, proposal, ego_summary, params)?.output)
}
