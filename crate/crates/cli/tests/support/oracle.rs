//! Brute-force reimplementation of the six rollout metrics. Only the data
//! types are shared with the library; every statistic is recomputed here
//! from its definition, pixel by pixel.

use wemeval_core::flowlab::FlowField;
use wemeval_core::rollout::{Frame, PhaseLabel, Trajectory};

pub struct Oracle {
    pub w: usize,
    pub r: usize,
    pub tau_cpdm: f64,
    pub tau_pmpa: f64,
    pub steps: usize,
    /// Numerator and denominator of the top fraction, kept exact.
    pub top: (usize, usize),
    pub eps: f64,
    pub bins: usize,
    pub grid: usize,
}

impl Default for Oracle {
    fn default() -> Self {
        Oracle { w: 4, r: 4, tau_cpdm: 0.05, tau_pmpa: 0.5, steps: 16, top: (1, 5), eps: 1e-6, bins: 16, grid: 8 }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleScores {
    pub rcbd: Option<f64>,
    pub lpsa: Option<f64>,
    pub cisr: Option<f64>,
    pub pmpa: Option<f64>,
    pub cpdm: Option<f64>,
    pub fphs: Option<f64>,
}

fn luminance(f: &Frame, x: usize, y: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..f.channels {
        s += f.data[(y * f.width + x) * f.channels + c] as f64;
    }
    s / f.channels as f64
}

fn speed(f: &FlowField, i: usize) -> f64 {
    let (u, v) = (f.u[i] as f64, f.v[i] as f64);
    (u * u + v * v).sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Oracle {
    /// Grid cell statistics averaged over frames, then unit length.
    pub fn embed(&self, frames: &[Frame]) -> Vec<f64> {
        let g = self.grid;
        let mut out = vec![0.0; 2 * g * g];
        for f in frames {
            let mut cells: Vec<Vec<f64>> = vec![Vec::new(); g * g];
            for y in 0..f.height {
                let cy = (0..g).find(|&c| y >= c * f.height / g && y < (c + 1) * f.height / g).unwrap();
                for x in 0..f.width {
                    let cx = (0..g).find(|&c| x >= c * f.width / g && x < (c + 1) * f.width / g).unwrap();
                    cells[cy * g + cx].push(luminance(f, x, y));
                }
            }
            for (i, vals) in cells.iter().enumerate() {
                if vals.is_empty() {
                    continue;
                }
                let m = mean(vals);
                let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
                out[i] += m / frames.len() as f64;
                out[g * g + i] += var.sqrt() / frames.len() as f64;
            }
        }
        let n = dot(&out, &out).sqrt();
        if n > 0.0 {
            out.iter_mut().for_each(|v| *v /= n);
        }
        out
    }

    fn embed_slice(&self, frames: &[Frame], start: usize, end: usize) -> Vec<f64> {
        self.embed(&frames[start..end])
    }

    fn distance(&self, a: &Frame, b: &Frame) -> f64 {
        let (ea, eb) = (self.embed(std::slice::from_ref(a)), self.embed(std::slice::from_ref(b)));
        if dot(&ea, &ea) == 0.0 && dot(&eb, &eb) == 0.0 {
            return 0.0;
        }
        (1.0 - cosine(&ea, &eb)).clamp(0.0, 2.0)
    }

    fn mean_speed(f: &FlowField) -> f64 {
        (0..f.u.len()).map(|i| speed(f, i)).sum::<f64>() / f.u.len() as f64
    }

    fn match_score(&self, x: f64, y: f64) -> f64 {
        let (x, y) = (x.max(self.eps), y.max(self.eps));
        (-(x / y).ln().abs()).exp()
    }

    pub fn rcbd(&self, gen: &Trajectory, gt: &Trajectory) -> Option<f64> {
        let k = gt.chunks.len();
        if k < 2 {
            return None;
        }
        let gaps = |t: &Trajectory, b: usize| -> Option<(f64, f64)> {
            let (a, c) = (&t.chunks[b], &t.chunks[b + 1]);
            let app = self.distance(a.frames.last()?, &c.frames[0]);
            let fa = a.flows.as_ref()?.last()?;
            let fc = c.flows.as_ref()?.first()?;
            Some((app, (Self::mean_speed(fa) - Self::mean_speed(fc)).abs()))
        };
        let mut scores = Vec::new();
        for b in 0..k - 1 {
            let (bg, mg) = gaps(gen, b)?;
            let (bt, mt) = gaps(gt, b)?;
            scores.push((self.match_score(bg, bt) * self.match_score(mg, mt)).sqrt());
        }
        Some(mean(&scores))
    }

    pub fn lpsa(&self, gen: &Trajectory, gt: &Trajectory) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, (a, b)) in gen.chunks.iter().zip(&gt.chunks).enumerate() {
            let ea = self.embed_slice(&a.frames, a.frames.len().saturating_sub(self.w), a.frames.len());
            let eb = self.embed_slice(&b.frames, b.frames.len().saturating_sub(self.w), b.frames.len());
            let weight = (i + 1) as f64;
            num += weight * cosine(&ea, &eb);
            den += weight;
        }
        num / den
    }

    fn chunk_embeddings(&self, t: &Trajectory) -> Vec<Vec<f64>> {
        t.chunks.iter().map(|c| self.embed(&c.frames)).collect()
    }

    pub fn cisr(&self, gen: &Trajectory, gt: &Trajectory) -> f64 {
        let (eg, et) = (self.chunk_embeddings(gen), self.chunk_embeddings(gt));
        let mut rr = Vec::new();
        for (k, g) in eg.iter().enumerate() {
            let sims: Vec<f64> = et.iter().map(|t| cosine(g, t)).collect();
            // Sort descending; the correct chunk sits after everything it
            // ties with.
            let mut order: Vec<usize> = (0..sims.len()).collect();
            order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then((a == k).cmp(&(b == k))));
            let rank = order.iter().position(|&j| j == k).unwrap() + 1;
            rr.push(1.0 / rank as f64);
        }
        mean(&rr)
    }

    fn profile(&self, f: &FlowField) -> [f64; 4] {
        let mut m: Vec<f64> = (0..f.u.len()).map(|i| speed(f, i)).collect();
        m.sort_by(f64::total_cmp);
        let n = m.len();
        let median = if n.is_multiple_of(2) { (m[n / 2 - 1] + m[n / 2]) / 2.0 } else { m[n / 2] };
        let count = ((self.top.0 * n).div_ceil(self.top.1)).max(1);
        let top = m[n - count..].iter().sum::<f64>() / count as f64;
        let max = m[n - 1];
        let mut hist = vec![0usize; self.bins];
        for &v in &m {
            let b = if max > 0.0 { ((v / max * self.bins as f64).floor() as usize).min(self.bins - 1) } else { 0 };
            hist[b] += 1;
        }
        let mut h = 0.0;
        for &c in &hist {
            if c > 0 {
                let p = c as f64 / n as f64;
                h -= p * p.ln();
            }
        }
        let entropy = h / (self.bins as f64).ln();
        let ratio = if median > 0.0 { (1.0 + top / median).ln() } else { (1.0 + top / self.eps).ln().min(20.0) };
        let diag = ((f.width * f.width + f.height * f.height) as f64).sqrt();
        [median / diag, top / diag, ratio, entropy]
    }

    fn resample(&self, p: &[[f64; 4]]) -> Vec<[f64; 4]> {
        if p.len() == 1 {
            return vec![p[0]; self.steps];
        }
        (0..self.steps)
            .map(|i| {
                let pos = i as f64 * (p.len() - 1) as f64 / (self.steps - 1) as f64;
                let j = (pos.floor() as usize).min(p.len() - 2);
                let t = pos - j as f64;
                std::array::from_fn(|c| p[j][c] * (1.0 - t) + p[j + 1][c] * t)
            })
            .collect()
    }

    pub fn pmpa(&self, gen: &Trajectory, gt: &Trajectory) -> Option<f64> {
        let mut scores = Vec::new();
        for (a, b) in gen.chunks.iter().zip(&gt.chunks) {
            if a.frames.len() < 2 || b.frames.len() < 2 {
                continue;
            }
            let pa: Vec<_> = a.flows.as_ref()?.iter().map(|f| self.profile(f)).collect();
            let pb: Vec<_> = b.flows.as_ref()?.iter().map(|f| self.profile(f)).collect();
            let (ra, rb) = (self.resample(&pa), self.resample(&pb));
            let d: Vec<f64> =
                ra.iter().zip(&rb).map(|(x, y)| (0..4).map(|c| (x[c] - y[c]).powi(2)).sum::<f64>().sqrt()).collect();
            scores.push((-mean(&d) / self.tau_pmpa).exp());
        }
        (!scores.is_empty()).then(|| mean(&scores))
    }

    pub fn cpdm(&self, gen: &Trajectory, gt: &Trajectory) -> Option<f64> {
        let phases: Vec<PhaseLabel> = gt.chunks.iter().map(|c| c.phase).collect();
        if phases.iter().all(|&p| p == phases[0]) {
            return None;
        }
        let (eg, et) = (self.chunk_embeddings(gen), self.chunk_embeddings(gt));
        let mut s = Vec::new();
        for (k, g) in eg.iter().enumerate() {
            let pos = cosine(g, &et[k]);
            let neg = (0..et.len())
                .filter(|&j| phases[j] != gen.chunks[k].phase)
                .map(|j| cosine(g, &et[j]))
                .fold(f64::NEG_INFINITY, f64::max);
            s.push(sigmoid((pos - neg) / self.tau_cpdm));
        }
        Some(mean(&s))
    }

    fn window(&self, t: &Trajectory, b: usize) -> Vec<Frame> {
        let (a, c) = (&t.chunks[b - 1].frames, &t.chunks[b].frames);
        let na = self.r.min(a.len());
        let nc = self.r.min(c.len());
        a[a.len() - na..].iter().chain(&c[..nc]).cloned().collect()
    }

    pub fn fphs(&self, gen: &Trajectory, gt: &Trajectory) -> Option<f64> {
        let mut scores = Vec::new();
        for b in 1..gt.chunks.len() {
            if gt.chunks[b].phase == gt.chunks[b - 1].phase {
                continue;
            }
            // Ground-truth flows between consecutive frames of the window
            // that lie inside one chunk.
            let (ca, cb) = (&gt.chunks[b - 1], &gt.chunks[b]);
            let na = self.r.min(ca.frames.len());
            let nb = self.r.min(cb.frames.len());
            let fa = ca.flows.as_ref()?;
            let fb = cb.flows.as_ref()?;
            let mut flows: Vec<&FlowField> = Vec::new();
            for i in ca.frames.len() - na..ca.frames.len() - 1 {
                flows.push(&fa[i]);
            }
            for i in 0..nb - 1 {
                flows.push(&fb[i]);
            }
            let first = flows.first()?;
            let (w, h) = (first.width, first.height);
            let acc: Vec<f64> = (0..w * h).map(|i| flows.iter().map(|f| speed(f, i)).sum()).collect();
            let keep = ((self.top.0 * w * h).div_ceil(self.top.1)).max(1);
            let in_region: Vec<bool> = acc.iter().map(|&a| acc.iter().filter(|&&o| o > a).count() < keep).collect();
            let xs: Vec<usize> = (0..w * h).filter(|&i| in_region[i]).map(|i| i % w).collect();
            let ys: Vec<usize> = (0..w * h).filter(|&i| in_region[i]).map(|i| i / w).collect();
            let (x0, x1) = (*xs.iter().min()?, *xs.iter().max()? + 1);
            let (y0, y1) = (*ys.iter().min()?, *ys.iter().max()? + 1);
            let crop = |f: &Frame| {
                let mut data = Vec::new();
                for y in y0..y1 {
                    for x in x0..x1 {
                        for c in 0..f.channels {
                            data.push(f.data[(y * f.width + x) * f.channels + c]);
                        }
                    }
                }
                Frame::new(x1 - x0, y1 - y0, f.channels, data)
            };
            let eg: Vec<Frame> = self.window(gen, b).iter().map(crop).collect();
            let et: Vec<Frame> = self.window(gt, b).iter().map(crop).collect();
            scores.push(cosine(&self.embed(&eg), &self.embed(&et)));
        }
        (!scores.is_empty()).then(|| mean(&scores))
    }

    pub fn all(&self, gen: &Trajectory, gt: &Trajectory) -> OracleScores {
        OracleScores {
            rcbd: self.rcbd(gen, gt),
            lpsa: Some(self.lpsa(gen, gt)),
            cisr: Some(self.cisr(gen, gt)),
            pmpa: self.pmpa(gen, gt),
            cpdm: self.cpdm(gen, gt),
            fphs: self.fphs(gen, gt),
        }
    }
}

impl OracleScores {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "rcbd" => self.rcbd,
            "lpsa" => self.lpsa,
            "cisr" => self.cisr,
            "pmpa" => self.pmpa,
            "cpdm" => self.cpdm,
            "fphs" => self.fphs,
            _ => None,
        }
    }
}
