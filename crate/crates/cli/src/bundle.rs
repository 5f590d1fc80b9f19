//! On-disk field bundles: one directory per image holding three PFT1
//! tensors and a JSON sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use posefield::encoder::EncoderConfig;
use posefield::fields::{read_tensor, write_tensor, FieldSet, FieldTensor};
use posefield::skeleton::{Scene, SkeletonSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const HEATMAPS: &str = "heatmaps.pft";
pub const PAFS: &str = "pafs.pft";
pub const OFFSETS: &str = "offsets.pft";
/// Optional extra tensor in prediction bundles: heatmaps from the PAF branch.
pub const PAF_HEATMAPS: &str = "paf_heatmaps.pft";
pub const SIDECAR: &str = "fieldset.json";
pub const FORMAT: &str = "posefield-fieldset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub image_id: u64,
    pub image_size: (u32, u32),
    pub fd: u32,
    pub heatmap_channels: Vec<String>,
    pub paf_channels: Vec<String>,
    pub offset_channels: Vec<String>,
    pub encoder: EncoderConfig,
    pub scene: Scene,
}

impl Sidecar {
    pub fn new(scene: &Scene, spec: &SkeletonSpec, encoder: &EncoderConfig) -> Self {
        let (heatmap_channels, paf_channels, offset_channels) = channel_names(spec);
        Self {
            format: FORMAT.into(),
            image_id: scene.image_id,
            image_size: scene.image_size,
            fd: encoder.fd,
            heatmap_channels,
            paf_channels,
            offset_channels,
            encoder: *encoder,
            scene: scene.clone(),
        }
    }
}

/// Heatmap, PAF and offset channel labels in storage order.
pub fn channel_names(spec: &SkeletonSpec) -> (Vec<String>, Vec<String>, Vec<String>) {
    let names = spec.joint_names();
    let mut heat: Vec<String> = names.to_vec();
    if spec.background_channel() {
        heat.push("background".into());
    }
    let pafs = spec
        .limbs()
        .iter()
        .flat_map(|&(a, b)| {
            ["m", "n"].map(|axis| format!("{}->{}:{axis}", names[a], names[b]))
        })
        .collect();
    let offsets = names
        .iter()
        .flat_map(|n| ["x", "y"].map(|axis| format!("{n}:{axis}")))
        .collect();
    (heat, pafs, offsets)
}

pub fn dir_name(image_id: u64) -> String {
    format!("image_{image_id:06}")
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| CliError::io(parent, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_tensor_file(path: &Path, t: &FieldTensor) -> Result<(), CliError> {
    let mut buf = Vec::with_capacity(t.encoded_len() as usize);
    let n = write_tensor(t, &mut buf).map_err(|e| CliError::field(path, e))?;
    if n != t.encoded_len() || buf.len() as u64 != n {
        return Err(CliError::Internal(format!(
            "{}: wrote {n} bytes, expected {}",
            path.display(),
            t.encoded_len()
        )));
    }
    write_atomic(path, &buf)
}

pub fn read_tensor_file(path: &Path) -> Result<FieldTensor, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    read_tensor(&mut bytes.as_slice()).map_err(|e| CliError::field(path, e))
}

pub fn write_bundle(dir: &Path, fields: &FieldSet, sidecar: &Sidecar) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_tensor_file(&dir.join(HEATMAPS), &fields.heatmaps)?;
    write_tensor_file(&dir.join(PAFS), &fields.pafs)?;
    write_tensor_file(&dir.join(OFFSETS), &fields.offsets)?;
    let mut json = serde_json::to_string_pretty(sidecar)
        .map_err(|e| CliError::Internal(format!("sidecar serialization: {e}")))?;
    json.push('\n');
    write_atomic(&dir.join(SIDECAR), json.as_bytes())
}

/// Reads the three tensors of a bundle without consulting the sidecar.
pub fn read_fields(dir: &Path) -> Result<FieldSet, CliError> {
    let h = read_tensor_file(&dir.join(HEATMAPS))?;
    let p = read_tensor_file(&dir.join(PAFS))?;
    let o = read_tensor_file(&dir.join(OFFSETS))?;
    FieldSet::new(h, p, o).map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))
}

pub fn read_sidecar(dir: &Path) -> Result<Sidecar, CliError> {
    let path = dir.join(SIDECAR);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let sc: Sidecar = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    if sc.format != FORMAT {
        return Err(CliError::usage(format!(
            "{}: unsupported format {:?}",
            path.display(),
            sc.format
        )));
    }
    Ok(sc)
}

/// Reads a bundle and checks its tensors and sidecar agree with `spec`.
pub fn read_bundle(dir: &Path, spec: &SkeletonSpec) -> Result<(Sidecar, FieldSet), CliError> {
    let sc = read_sidecar(dir)?;
    let fields = read_fields(dir)?;
    let bad = |msg: String| Err(CliError::usage(format!("{}: {msg}", dir.display())));
    let (h, p, o) = channel_names(spec);
    if sc.heatmap_channels != h || sc.paf_channels != p || sc.offset_channels != o {
        return bad("channel layout does not match the skeleton".into());
    }
    let g = fields.grid();
    if (g.fd, g.image_width, g.image_height) != (sc.fd, sc.image_size.0, sc.image_size.1) {
        return bad(format!(
            "tensor grid {g:?} disagrees with sidecar (fd {}, size {:?})",
            sc.fd, sc.image_size
        ));
    }
    if fields.heatmaps.channels() != h.len()
        || fields.pafs.channels() != p.len()
        || fields.offsets.channels() != o.len()
    {
        return bad(format!(
            "channel counts ({}, {}, {}) disagree with sidecar ({}, {}, {})",
            fields.heatmaps.channels(),
            fields.pafs.channels(),
            fields.offsets.channels(),
            h.len(),
            p.len(),
            o.len()
        ));
    }
    Ok((sc, fields))
}

pub fn is_bundle(dir: &Path) -> bool {
    dir.join(SIDECAR).is_file()
}

/// `dir` itself if it is a bundle, otherwise its bundle subdirectories in
/// name order.
pub fn find_bundles(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if is_bundle(dir) {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            if is_bundle(&path) {
                out.push(path);
            } else {
                log::warn!("skipping {}: no {SIDECAR}", path.display());
            }
        }
    }
    out.sort();
    Ok(out)
}
