use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{MechanismError, StateVector};
use crate::rollout::WorldEgoMask;

/// Binary ego assignment over a `t × h × w` token grid, frame-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrid {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub ego: Vec<bool>,
}

impl TokenGrid {
    pub fn new(t: usize, h: usize, w: usize, ego: Vec<bool>) -> Result<Self, MechanismError> {
        if t * h * w == 0 {
            return Err(MechanismError::EmptyGrid);
        }
        if ego.len() != t * h * w {
            return Err(MechanismError::DimMismatch(format!("{} cells for {t}x{h}x{w}", ego.len())));
        }
        Ok(Self { t, h, w, ego })
    }

    pub fn len(&self) -> usize {
        self.ego.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ego.is_empty()
    }

    pub fn index(&self, f: usize, y: usize, x: usize) -> usize {
        (f * self.h + y) * self.w + x
    }

    /// Concatenates single-frame grids along time.
    pub fn stack(frames: &[TokenGrid]) -> Result<Self, MechanismError> {
        let first = frames.first().ok_or(MechanismError::EmptyGrid)?;
        let mut ego = Vec::new();
        let mut t = 0;
        for g in frames {
            if (g.h, g.w) != (first.h, first.w) {
                return Err(MechanismError::DimMismatch(format!("{}x{} vs {}x{}", g.h, g.w, first.h, first.w)));
            }
            ego.extend_from_slice(&g.ego);
            t += g.t;
        }
        Self::new(t, first.h, first.w, ego)
    }
}

/// Pools a pixel mask onto an `h × w` token grid. Each token covers a
/// `⌊H/h⌋ × ⌊W/w⌋` cell (remainder rows and columns are cropped) and is ego
/// when at least half its pixels are.
pub fn pool_mask_to_tokens(mask: &WorldEgoMask, grid: (usize, usize)) -> Result<TokenGrid, MechanismError> {
    let (gh, gw) = grid;
    if gh == 0 || gw == 0 || mask.height < gh || mask.width < gw {
        return Err(MechanismError::EmptyGrid);
    }
    let (ch, cw) = (mask.height / gh, mask.width / gw);
    let cell = ch * cw;
    let mut ego = Vec::with_capacity(gh * gw);
    for ty in 0..gh {
        for tx in 0..gw {
            let mut count = 0;
            for y in ty * ch..(ty + 1) * ch {
                for x in tx * cw..(tx + 1) * cw {
                    count += usize::from(mask.is_ego(x, y));
                }
            }
            ego.push(2 * count >= cell);
        }
    }
    TokenGrid::new(1, gh, gw, ego)
}

/// Base and neighbour-expanded token sets of the two experts. Index sets
/// are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub grid: TokenGrid,
    pub radius: usize,
    pub world_base: Vec<usize>,
    pub ego_base: Vec<usize>,
    pub world_active: Vec<usize>,
    pub ego_active: Vec<usize>,
}

fn dilate(grid: &TokenGrid, set: &[bool], radius: usize) -> Vec<bool> {
    if radius == 0 {
        return set.to_vec();
    }
    let mut out = vec![false; set.len()];
    for f in 0..grid.t {
        for y in 0..grid.h {
            for x in 0..grid.w {
                if !set[grid.index(f, y, x)] {
                    continue;
                }
                for ny in y.saturating_sub(radius)..=(y + radius).min(grid.h - 1) {
                    for nx in x.saturating_sub(radius)..=(x + radius).min(grid.w - 1) {
                        out[grid.index(f, ny, nx)] = true;
                    }
                }
            }
        }
    }
    out
}

fn indices(set: &[bool]) -> Vec<usize> {
    set.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

pub fn route_tokens(grid: &TokenGrid, radius: usize) -> RoutePlan {
    let world: Vec<bool> = grid.ego.iter().map(|&e| !e).collect();
    RoutePlan {
        grid: grid.clone(),
        radius,
        world_base: indices(&world),
        ego_base: indices(&grid.ego),
        world_active: indices(&dilate(grid, &world, radius)),
        ego_active: indices(&dilate(grid, &grid.ego, radius)),
    }
}

/// One expert's input or output rows, with the token index of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertBatch {
    pub tokens: Vec<usize>,
    pub states: StateVector,
}

impl ExpertBatch {
    /// Applies `f` to the states, keeping the token assignment.
    pub fn map(&self, f: impl FnOnce(&StateVector) -> StateVector) -> Self {
        Self { tokens: self.tokens.clone(), states: f(&self.states) }
    }
}

fn gather(x: &StateVector, tokens: &[usize]) -> ExpertBatch {
    let m = x.values();
    let states = DMatrix::from_fn(tokens.len(), x.d(), |r, c| m[(tokens[r], c)]);
    ExpertBatch { tokens: tokens.to_vec(), states: StateVector { values: states } }
}

/// Splits `x` (one row per token) into the world and ego expert inputs over
/// their expanded sets.
pub fn dispatch(plan: &RoutePlan, x: &StateVector) -> Result<(ExpertBatch, ExpertBatch), MechanismError> {
    if x.n() != plan.grid.len() {
        return Err(MechanismError::DimMismatch(format!("{} rows for {} tokens", x.n(), plan.grid.len())));
    }
    Ok((gather(x, &plan.world_active), gather(x, &plan.ego_active)))
}

#[cfg(feature = "fault-injection")]
fn flip_selection() -> bool {
    static FLIP: std::sync::OnceLock<bool> = std::sync::OnceLock::new();
    *FLIP.get_or_init(|| std::env::var_os("WEMEVAL_FAULT_UNROUTE").is_some())
}

#[cfg(not(feature = "fault-injection"))]
fn flip_selection() -> bool {
    false
}

/// Recomposes expert outputs: token `i` comes from the ego expert when its
/// base assignment is ego and from the world expert otherwise.
pub fn unroute(plan: &RoutePlan, world: &ExpertBatch, ego: &ExpertBatch) -> Result<StateVector, MechanismError> {
    let n = plan.grid.len();
    let d = world.states.d();
    if ego.states.d() != d || world.tokens.len() != world.states.n() || ego.tokens.len() != ego.states.n() {
        return Err(MechanismError::DimMismatch("expert batch rows do not match their tokens".into()));
    }
    let lookup = |b: &ExpertBatch, expert: &'static str, active: &[usize]| {
        let mut row = vec![usize::MAX; n];
        for (r, &t) in b.tokens.iter().enumerate() {
            if t < n {
                row[t] = r;
            }
        }
        match active.iter().find(|&&t| row[t] == usize::MAX) {
            Some(&token) => Err(MechanismError::MissingToken { expert, token }),
            None => Ok(row),
        }
    };
    let wrow = lookup(world, "world", &plan.world_active)?;
    let erow = lookup(ego, "ego", &plan.ego_active)?;

    let flip = flip_selection();
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        let take_ego = plan.grid.ego[i] != flip;
        let (src, r) = if take_ego { (&ego.states, erow[i]) } else { (&world.states, wrow[i]) };
        if r == usize::MAX {
            let expert = if take_ego { "ego" } else { "world" };
            return Err(MechanismError::MissingToken { expert, token: i });
        }
        out.row_mut(i).copy_from(&src.values().row(r));
    }
    StateVector::new(out)
}
