use serde::{Deserialize, Serialize};

use super::{FlowError, FlowField};
use crate::rollout::Chunk;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionStatsConfig {
    /// Fraction of largest magnitudes averaged into the "top" statistic.
    pub top_fraction: f64,
    /// Histogram bins for the normalized entropy.
    pub entropy_bins: usize,
    /// Stand-in for a zero median in the log-ratio component.
    pub eps: f64,
    /// Upper clamp of the log-ratio when the median is zero.
    pub log_ratio_cap: f64,
}

impl Default for MotionStatsConfig {
    fn default() -> Self {
        Self { top_fraction: 0.2, entropy_bins: 16, eps: 1e-6, log_ratio_cap: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowStats {
    pub median: f64,
    pub top_mean: f64,
    /// Shannon entropy of the magnitude histogram divided by `ln(bins)`.
    pub entropy: f64,
}

/// `⌈fraction · n⌉`, at least one and at most `n`. The small offset keeps
/// products like `0.2 · 15` from rounding up past the exact integer.
pub(crate) fn top_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 - 1e-9).ceil().max(1.0) as usize).min(n)
}

pub fn flow_stats(f: &FlowField) -> FlowStats {
    flow_stats_with(f, &MotionStatsConfig::default())
}

pub fn flow_stats_with(f: &FlowField, cfg: &MotionStatsConfig) -> FlowStats {
    let mut mags = f.magnitudes();
    let n = mags.len();
    if n == 0 {
        return FlowStats { median: 0.0, top_mean: 0.0, entropy: 0.0 };
    }
    mags.sort_by(f64::total_cmp);

    let median = if n % 2 == 1 { mags[n / 2] } else { 0.5 * (mags[n / 2 - 1] + mags[n / 2]) };
    let k = top_count(n, cfg.top_fraction);
    let top_mean = mags[n - k..].iter().sum::<f64>() / k as f64;

    let bins = cfg.entropy_bins.max(1);
    let max = mags[n - 1];
    let mut hist = vec![0usize; bins];
    for &m in &mags {
        let b = if max > 0.0 { ((m / max * bins as f64) as usize).min(bins - 1) } else { 0 };
        hist[b] += 1;
    }
    let entropy = if bins > 1 {
        let h: f64 = hist
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n as f64;
                -p * p.ln()
            })
            .sum();
        (h / (bins as f64).ln()).clamp(0.0, 1.0)
    } else {
        0.0
    };
    FlowStats { median, top_mean, entropy }
}

/// Per-frame-pair motion descriptor
/// `[median/L, top/L, ln(1 + top/median), entropy]`, `L` the frame diagonal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotionProfile {
    pub steps: Vec<[f64; 4]>,
}

impl MotionProfile {
    pub fn new(steps: Vec<[f64; 4]>) -> Self {
        Self { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

pub fn motion_profile(chunk: &Chunk, cfg: &MotionStatsConfig) -> Result<MotionProfile, FlowError> {
    if chunk.frames.len() < 2 {
        return Err(FlowError::TooShort(chunk.frames.len()));
    }
    let flows = chunk.flows.as_deref().ok_or(FlowError::MissingFlows)?;
    if flows.is_empty() {
        return Err(FlowError::MissingFlows);
    }
    let steps = flows
        .iter()
        .map(|f| {
            let diag = (f.width as f64).hypot(f.height as f64);
            let s = flow_stats_with(f, cfg);
            let ratio = if s.median > 0.0 {
                (s.top_mean / s.median).ln_1p()
            } else {
                (s.top_mean / cfg.eps).ln_1p().min(cfg.log_ratio_cap)
            };
            [s.median / diag, s.top_mean / diag, ratio, s.entropy]
        })
        .collect();
    Ok(MotionProfile { steps })
}

/// Linear interpolation of each component at `target` equally spaced
/// positions spanning the input. A single step is replicated.
pub fn resample_profile(p: &MotionProfile, target: usize) -> MotionProfile {
    let len = p.steps.len();
    if len == 0 || target == 0 {
        return MotionProfile::default();
    }
    if len == 1 || target == 1 {
        return MotionProfile::new(vec![p.steps[0]; target]);
    }
    let steps = (0..target)
        .map(|i| {
            // Exact rational position i·(len−1)/(target−1).
            let num = i * (len - 1);
            let den = target - 1;
            let j = num / den;
            if j >= len - 1 {
                return p.steps[len - 1];
            }
            let t = (num % den) as f64 / den as f64;
            let (a, b) = (&p.steps[j], &p.steps[j + 1]);
            std::array::from_fn(|c| {
                let v = a[c] + (b[c] - a[c]) * t;
                v.clamp(a[c].min(b[c]), a[c].max(b[c]))
            })
        })
        .collect();
    MotionProfile::new(steps)
}
