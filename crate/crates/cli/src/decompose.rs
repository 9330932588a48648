use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use wemeval_core::flowlab::{
    estimate_homography, render_camera_flow, reprojection_error, residual_object_flow, PointMatch, RansacParams,
};
use wemeval_core::rollout::codec::{read_flows, write_flows};

#[derive(Debug, clap::Args)]
pub struct DecomposeArgs {
    /// Flow fields (WEMF).
    #[arg(long)]
    pub flow: PathBuf,
    /// Matches JSON: {"fields": [[[x, y, x2, y2], ...], ...]}, one list per
    /// flow field.
    #[arg(long)]
    pub matches: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// RANSAC inlier threshold in pixels.
    #[arg(long, default_value_t = 1.0)]
    pub threshold: f64,
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchesFile {
    pub fields: Vec<Vec<[f64; 4]>>,
}

impl MatchesFile {
    pub fn from_matches(fields: &[Vec<PointMatch>]) -> Self {
        let fields =
            fields.iter().map(|ms| ms.iter().map(|m| [m.src.0, m.src.1, m.dst.0, m.dst.1]).collect()).collect();
        Self { fields }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHomography {
    pub index: usize,
    pub homography: [[f64; 3]; 3],
    pub matches: usize,
    pub inliers: usize,
    pub mean_inlier_error: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeOutput {
    pub ransac: RansacParams,
    pub fields: Vec<FieldHomography>,
}

pub const HOMOGRAPHY_FILE: &str = "homography.json";
pub const CAMERA_FILE: &str = "camera.wemf";
pub const RESIDUAL_FILE: &str = "residual.wemf";

pub fn run(args: &DecomposeArgs) -> Result<i32> {
    let flows = read_flows(&args.flow).with_context(|| format!("reading flows {}", args.flow.display()))?;
    let text = fs::read_to_string(&args.matches).with_context(|| format!("reading {}", args.matches.display()))?;
    let matches: MatchesFile =
        serde_json::from_str(&text).with_context(|| format!("parsing matches {}", args.matches.display()))?;
    if matches.fields.len() != flows.len() {
        bail!("{} flow fields but matches for {}", flows.len(), matches.fields.len());
    }
    let params = RansacParams { threshold: args.threshold, iterations: args.iterations, seed: args.seed };

    let (mut cams, mut residuals, mut records) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (f, ms)) in flows.iter().zip(&matches.fields).enumerate() {
        let pts: Vec<PointMatch> = ms.iter().map(|m| PointMatch::new((m[0], m[1]), (m[2], m[3]))).collect();
        let (h, inliers) = estimate_homography(&pts, &params).with_context(|| format!("flow field {i}"))?;
        let cam = render_camera_flow(&h, f.width, f.height).with_context(|| format!("flow field {i}"))?;
        let res = residual_object_flow(f, &cam)?;
        let errs: Vec<f64> =
            pts.iter().zip(&inliers).filter(|(_, &k)| k).map(|(m, _)| reprojection_error(&h, m)).collect();
        records.push(FieldHomography {
            index: i,
            homography: h.rows(),
            matches: pts.len(),
            inliers: errs.len(),
            mean_inlier_error: errs.iter().sum::<f64>() / errs.len().max(1) as f64,
            max_residual: res.max_magnitude(),
        });
        cams.push(cam);
        residuals.push(res);
    }

    write_outputs(&args.out_dir, &DecomposeOutput { ransac: params, fields: records }, &cams, &residuals)?;
    Ok(0)
}

fn write_outputs(
    dir: &Path,
    out: &DecomposeOutput,
    cams: &[wemeval_core::flowlab::FlowField],
    residuals: &[wemeval_core::flowlab::FlowField],
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut json = serde_json::to_string_pretty(out)?;
    json.push('\n');
    fs::write(dir.join(HOMOGRAPHY_FILE), json)?;
    write_flows(&dir.join(CAMERA_FILE), cams)?;
    write_flows(&dir.join(RESIDUAL_FILE), residuals)?;
    Ok(())
}
