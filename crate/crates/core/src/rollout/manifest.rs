//! JSON trajectory manifests with binary sidecars.
//!
//! ```json
//! {"id": "traj-0",
//!  "chunks": [{"instruction": "open the drawer", "phase": "Manip",
//!              "frames": "traj-0_chunk0.wemv", "flows": null, "masks": null}]}
//! ```
//!
//! Sidecar paths are resolved relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::codec::{self, CodecError};
use super::{validate_trajectory, Chunk, PhaseLabel, Trajectory, ValidationReport};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Missing { path: PathBuf, source: std::io::Error },
    #[error("schema error in {path} at `{field}`: {message}")]
    Schema { path: PathBuf, field: String, message: String },
    #[error("{path}: asset referenced by `{field}` not found: {asset}")]
    AssetMissing { path: PathBuf, field: String, asset: PathBuf },
    #[error("{path}: cannot decode `{field}` ({asset}): {source}")]
    Asset { path: PathBuf, field: String, asset: PathBuf, source: CodecError },
    #[error("{path}: trajectory fails validation: {report}")]
    Invalid { path: PathBuf, report: ValidationReport },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: CodecError },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    id: String,
    chunks: Vec<ChunkEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChunkEntry {
    instruction: String,
    phase: PhaseLabel,
    frames: String,
    flows: Option<String>,
    masks: Option<String>,
}

/// Loads and validates a trajectory manifest.
pub fn load_manifest(path: &Path) -> Result<Trajectory, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Missing { path: path.to_owned(), source })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let manifest: ManifestFile = serde_path_to_error::deserialize(de).map_err(|e| ManifestError::Schema {
        path: path.to_owned(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    if manifest.chunks.is_empty() {
        return Err(ManifestError::Schema {
            path: path.to_owned(),
            field: "chunks".into(),
            message: "at least one chunk is required".into(),
        });
    }

    let base = path.parent().unwrap_or(Path::new("."));
    let asset = |field: String, rel: &str| -> Result<Vec<u8>, ManifestError> {
        let asset = base.join(rel);
        fs::read(&asset).map_err(|_| ManifestError::AssetMissing { path: path.to_owned(), field, asset })
    };
    let decode_err = |field: String, rel: &str| {
        let asset = base.join(rel);
        let path = path.to_owned();
        move |source| ManifestError::Asset { path, field, asset, source }
    };

    let mut chunks = Vec::with_capacity(manifest.chunks.len());
    for (i, entry) in manifest.chunks.iter().enumerate() {
        let field = format!("chunks[{i}].frames");
        let frames =
            codec::decode_frames(&asset(field.clone(), &entry.frames)?).map_err(decode_err(field, &entry.frames))?;
        let mut chunk = Chunk::new(frames, entry.instruction.clone(), entry.phase);
        if let Some(rel) = &entry.flows {
            let field = format!("chunks[{i}].flows");
            chunk.flows = Some(codec::decode_flows(&asset(field.clone(), rel)?).map_err(decode_err(field, rel))?);
        }
        if let Some(rel) = &entry.masks {
            let field = format!("chunks[{i}].masks");
            chunk.masks = Some(codec::decode_masks(&asset(field.clone(), rel)?).map_err(decode_err(field, rel))?);
        }
        chunks.push(chunk);
    }

    let traj = Trajectory::new(manifest.id, chunks);
    let report = validate_trajectory(&traj);
    if !report.is_empty() {
        return Err(ManifestError::Invalid { path: path.to_owned(), report });
    }
    Ok(traj)
}

/// Writes `traj` as a manifest at `path` with sidecars next to it, named
/// after the manifest's file stem.
pub fn save_manifest(traj: &Trajectory, path: &Path) -> Result<(), ManifestError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
    let write = |name: String, bytes: Result<Vec<u8>, CodecError>| -> Result<String, ManifestError> {
        let target = base.join(&name);
        let bytes = bytes.map_err(|source| ManifestError::Write { path: target.clone(), source })?;
        fs::write(&target, bytes).map_err(|e| ManifestError::Write { path: target, source: e.into() })?;
        Ok(name)
    };

    let mut entries = Vec::with_capacity(traj.chunks.len());
    for (k, chunk) in traj.chunks.iter().enumerate() {
        let frames = write(format!("{stem}_chunk{k}.wemv"), codec::encode_frames(&chunk.frames))?;
        let flows = match &chunk.flows {
            Some(f) => Some(write(format!("{stem}_chunk{k}.wemf"), codec::encode_flows(f))?),
            None => None,
        };
        let masks = match &chunk.masks {
            Some(m) => Some(write(format!("{stem}_chunk{k}.wemm"), codec::encode_masks(m))?),
            None => None,
        };
        entries.push(ChunkEntry { instruction: chunk.instruction.clone(), phase: chunk.phase, frames, flows, masks });
    }
    let manifest = ManifestFile { id: traj.id.clone(), chunks: entries };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(path, json).map_err(|e| ManifestError::Write { path: path.to_owned(), source: e.into() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowlab::FlowField;
    use crate::rollout::{Frame, WorldEgoMask};

    fn sample() -> Trajectory {
        let frames = vec![Frame::filled(3, 2, 3, 0.25), Frame::filled(3, 2, 3, 0.75)];
        let c0 = Chunk::new(frames.clone(), "walk to the table", PhaseLabel::Nav)
            .with_flows(vec![FlowField::new(3, 2, vec![1.0; 6], vec![0.5; 6])])
            .with_masks(vec![WorldEgoMask::world(3, 2); 2]);
        let c1 = Chunk::new(frames, "pick up the cup", PhaseLabel::Manip);
        Trajectory::new("sample", vec![c0, c1])
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let t = sample();
        save_manifest(&t, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), t);
    }

    #[test]
    fn missing_flow_asset_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_manifest(&sample(), &path).unwrap();
        fs::remove_file(dir.path().join("m_chunk0.wemf")).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(err, ManifestError::AssetMissing { .. }));
        let msg = err.to_string();
        assert!(msg.contains("m_chunk0.wemf") && msg.contains("chunks[0].flows"), "{msg}");
    }

    #[test]
    fn unknown_phase_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_manifest(&sample(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"Manip\"", "\"Drive\"");
        fs::write(&path, text).unwrap();
        match load_manifest(&path).unwrap_err() {
            ManifestError::Schema { field, .. } => assert_eq!(field, "chunks[1].phase"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_manifest_is_reported() {
        let err = load_manifest(Path::new("/nonexistent/x.json")).unwrap_err();
        assert!(matches!(err, ManifestError::Missing { .. }));
    }
}
