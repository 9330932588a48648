use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FlowError, FlowField};

/// Homogeneous coordinates with |w| below this are treated as points at
/// infinity.
const W_EPS: f64 = 1e-12;
const DET_EPS: f64 = 1e-9;

/// Projective 3x3 transform of pixel coordinates, normalized so that
/// `h[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    /// Normalizes `m` by its bottom-right entry. Fails when that entry is
    /// zero or the matrix is singular.
    pub fn new(m: Matrix3<f64>) -> Result<Self, FlowError> {
        let s = m[(2, 2)];
        if !s.is_finite() || s.abs() < W_EPS {
            return Err(FlowError::Singular);
        }
        let m = m / s;
        if !m.iter().all(|v| v.is_finite()) || m.determinant().abs() <= DET_EPS {
            return Err(FlowError::Singular);
        }
        Ok(Self { m })
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, FlowError> {
        Self::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self { m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0) }
    }

    /// Similarity about `center`: rotation by `angle` radians and uniform
    /// scale `zoom`, followed by translation `(tx, ty)`.
    pub fn similarity(center: (f64, f64), angle: f64, zoom: f64, tx: f64, ty: f64) -> Result<Self, FlowError> {
        let (s, c) = angle.sin_cos();
        let (cx, cy) = center;
        let to = Matrix3::new(1.0, 0.0, cx + tx, 0.0, 1.0, cy + ty, 0.0, 0.0, 1.0);
        let rs = Matrix3::new(zoom * c, -zoom * s, 0.0, zoom * s, zoom * c, 0.0, 0.0, 0.0, 1.0);
        let from = Matrix3::new(1.0, 0.0, -cx, 0.0, 1.0, -cy, 0.0, 0.0, 1.0);
        Self::new(to * rs * from)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.m[(r, c)]))
    }

    pub fn determinant(&self) -> f64 {
        self.m.determinant()
    }

    pub fn inverse(&self) -> Result<Self, FlowError> {
        Self::new(self.m.try_inverse().ok_or(FlowError::Singular)?)
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Homography) -> Result<Self, FlowError> {
        Self::new(self.m * first.m)
    }

    /// Maps a point; `None` if it lands at infinity.
    pub fn project(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let p = self.m * Vector3::new(x, y, 1.0);
        (p.z.abs() >= W_EPS).then(|| (p.x / p.z, p.y / p.z))
    }
}

/// A correspondence between a point in the source frame and one in the
/// target frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMatch {
    pub src: (f64, f64),
    pub dst: (f64, f64),
}

impl PointMatch {
    pub fn new(src: (f64, f64), dst: (f64, f64)) -> Self {
        Self { src, dst }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacParams {
    /// Inlier reprojection threshold in pixels.
    pub threshold: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { threshold: 1.0, iterations: 500, seed: 0 }
    }
}

/// Forward reprojection error `|H·src − dst|`; infinite when `src` maps to
/// infinity.
pub fn reprojection_error(h: &Homography, m: &PointMatch) -> f64 {
    match h.project(m.src.0, m.src.1) {
        Some((x, y)) => (x - m.dst.0).hypot(y - m.dst.1),
        None => f64::INFINITY,
    }
}

/// Similarity transform that moves the centroid to the origin and scales the
/// mean distance from it to √2.
fn normalizer(points: impl Iterator<Item = (f64, f64)> + Clone) -> Option<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points.map(|(x, y)| (x - cx).hypot(y - cy)).sum::<f64>() / n;
    if mean_dist <= f64::EPSILON {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn apply(t: &Matrix3<f64>, (x, y): (f64, f64)) -> (f64, f64) {
    (t[(0, 0)] * x + t[(0, 2)], t[(1, 1)] * y + t[(1, 2)])
}

/// Normalized direct linear transform over all given matches (least squares
/// when more than four).
fn fit_dlt(matches: &[PointMatch]) -> Option<Homography> {
    let ts = normalizer(matches.iter().map(|m| m.src))?;
    let td = normalizer(matches.iter().map(|m| m.dst))?;

    let rows = (2 * matches.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, m) in matches.iter().enumerate() {
        let (x, y) = apply(&ts, m.src);
        let (u, v) = apply(&td, m.dst);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (best, _) = svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = v_t.row(best);
    let hn = Matrix3::from_fn(|r, c| h[3 * r + c]);
    let td_inv = td.try_inverse()?;
    Homography::new(td_inv * hn * ts).ok()
}

fn collinear(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (acx, acy) = (c.0 - a.0, c.1 - a.1);
    let cross = (abx * acy - aby * acx).abs();
    let scale = (abx * abx + aby * aby).max(acx * acx + acy * acy);
    cross <= 1e-9 * scale.max(f64::MIN_POSITIVE)
}

fn degenerate_sample(sample: &[PointMatch; 4]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES.iter().any(|&[i, j, k]| {
        collinear(sample[i].src, sample[j].src, sample[k].src) || collinear(sample[i].dst, sample[j].dst, sample[k].dst)
    })
}

fn inlier_mask(h: &Homography, matches: &[PointMatch], threshold: f64) -> Vec<bool> {
    matches.iter().map(|m| reprojection_error(h, m) <= threshold).collect()
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&b| b).count()
}

/// Robustly fits a homography with RANSAC over 4-point samples, then refits
/// on the consensus set by least squares. Deterministic for a given seed.
pub fn estimate_homography(
    matches: &[PointMatch],
    params: &RansacParams,
) -> Result<(Homography, Vec<bool>), FlowError> {
    if matches.len() < 4 {
        return Err(FlowError::TooFewMatches(matches.len()));
    }
    if !(params.threshold > 0.0) {
        return Err(FlowError::BadParams("threshold must be positive"));
    }
    if params.iterations == 0 {
        return Err(FlowError::BadParams("iterations must be at least 1"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Homography, Vec<bool>, usize)> = None;
    for _ in 0..params.iterations {
        let idx = index::sample(&mut rng, matches.len(), 4);
        let sample: [PointMatch; 4] = std::array::from_fn(|i| matches[idx.index(i)]);
        if degenerate_sample(&sample) {
            continue;
        }
        let Some(h) = fit_dlt(&sample) else { continue };
        let mask = inlier_mask(&h, matches, params.threshold);
        let n = count(&mask);
        if best.as_ref().is_none_or(|(_, _, b)| n > *b) {
            best = Some((h, mask, n));
            if n == matches.len() {
                break;
            }
        }
    }
    let (mut h, mut mask, mut n) = best.ok_or(FlowError::Degenerate(params.iterations))?;

    // Refit on the consensus set; keep the refit only if it does not lose
    // support.
    if n >= 4 {
        let inliers: Vec<PointMatch> = matches.iter().zip(&mask).filter(|(_, &k)| k).map(|(m, _)| *m).collect();
        if let Some(refit) = fit_dlt(&inliers) {
            let refit_mask = inlier_mask(&refit, matches, params.threshold);
            let refit_n = count(&refit_mask);
            if refit_n >= n {
                (h, mask, n) = (refit, refit_mask, refit_n);
            }
        }
    }
    debug_assert_eq!(n, count(&mask));
    Ok((h, mask))
}

/// Flow induced by `h` at every integer pixel coordinate.
pub fn render_camera_flow(h: &Homography, width: usize, height: usize) -> Result<FlowField, FlowError> {
    if width == 0 || height == 0 {
        return Err(FlowError::EmptyFrame);
    }
    let n = width * height;
    let (mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for y in 0..height {
        for x in 0..width {
            let (px, py) = h.project(x as f64, y as f64).ok_or(FlowError::PointAtInfinity { x, y })?;
            u.push((px - x as f64) as f32);
            v.push((py - y as f64) as f32);
        }
    }
    Ok(FlowField::new(width, height, u, v))
}

/// `f − f_cam`, per pixel.
pub fn residual_object_flow(f: &FlowField, f_cam: &FlowField) -> Result<FlowField, FlowError> {
    if f.dims() != f_cam.dims() {
        return Err(FlowError::DimMismatch(f.dims(), f_cam.dims()));
    }
    let u = f.u.iter().zip(&f_cam.u).map(|(a, b)| a - b).collect();
    let v = f.v.iter().zip(&f_cam.v).map(|(a, b)| a - b).collect();
    Ok(FlowField::new(f.width, f.height, u, v))
}

/// Correspondences `(x, y) → (x + u, y + v)` on a regular pixel grid.
pub fn matches_from_flow(f: &FlowField, stride: usize) -> Vec<PointMatch> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for y in (0..f.height).step_by(stride) {
        for x in (0..f.width).step_by(stride) {
            let (u, v) = f.at(x, y);
            let (xf, yf) = (x as f64, y as f64);
            out.push(PointMatch::new((xf, yf), (xf + u as f64, yf + v as f64)));
        }
    }
    out
}
