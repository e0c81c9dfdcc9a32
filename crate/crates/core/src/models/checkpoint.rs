//! Checkpoints: a JSON manifest (tensor names, shapes, dtype, byte offsets,
//! network config) next to a raw little-endian `f32` blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StanError};
use crate::models::params::Parameterized;
use crate::models::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::scalar::Scalar;

const FORMAT: &str = "stan-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest<C> {
    pub format: String,
    pub version: u32,
    pub network: String,
    pub dtype: String,
    pub blob: String,
    pub config: C,
    pub tensors: Vec<TensorEntry>,
}

fn paths(dir: &Path, network: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{network}.json")),
        dir.join(format!("{network}.bin")),
    )
}

pub fn save_network<T: Scalar, C: Serialize>(
    dir: &Path,
    network: &str,
    config: &C,
    net: &impl Parameterized<T>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| StanError::io(dir, e))?;
    let (manifest_path, blob_path) = paths(dir, network);
    let mut blob = Vec::with_capacity(net.param_count() * 4);
    let mut tensors = Vec::new();
    for (name, t) in net.params() {
        let offset = blob.len();
        for &v in t.data() {
            let v = v.to_f32().unwrap_or(f32::NAN);
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
            bytes: blob.len() - offset,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        network: network.into(),
        dtype: "f32".into(),
        blob: blob_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        config,
        tensors,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| StanError::Checkpoint(e.to_string()))?;
    fs::write(&manifest_path, text).map_err(|e| StanError::io(&manifest_path, e))?;
    fs::write(&blob_path, blob).map_err(|e| StanError::io(&blob_path, e))?;
    Ok(())
}

pub fn read_manifest<C: DeserializeOwned>(dir: &Path, network: &str) -> Result<Manifest<C>> {
    let (manifest_path, _) = paths(dir, network);
    if !manifest_path.exists() {
        return Err(StanError::Missing(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| StanError::io(&manifest_path, e))?;
    let m: Manifest<C> =
        serde_json::from_str(&text).map_err(|e| StanError::Checkpoint(e.to_string()))?;
    if m.format != FORMAT || m.dtype != "f32" {
        return Err(StanError::Checkpoint(format!(
            "unsupported checkpoint {}/{}",
            m.format, m.dtype
        )));
    }
    Ok(m)
}

/// Fill `net`'s parameters from the blob described by `manifest`.
pub fn load_into<T: Scalar, C>(
    dir: &Path,
    manifest: &Manifest<C>,
    net: &mut impl Parameterized<T>,
) -> Result<()> {
    let blob_path = dir.join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| StanError::io(&blob_path, e))?;
    let expected: Vec<(String, Vec<usize>)> = net
        .params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(StanError::Checkpoint(format!(
            "manifest lists {} tensors, network has {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    for (t, (entry, (name, shape))) in net
        .params_mut()
        .into_iter()
        .zip(manifest.tensors.iter().zip(expected))
    {
        if entry.name != name || entry.shape != shape {
            return Err(StanError::Checkpoint(format!(
                "tensor {} {:?} does not match {} {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
        let end = entry.offset + entry.bytes;
        if entry.bytes != t.len() * 4 || end > blob.len() {
            return Err(StanError::Checkpoint(format!("bad extent for {}", entry.name)));
        }
        for (v, b) in t
            .data_mut()
            .iter_mut()
            .zip(blob[entry.offset..end].chunks_exact(4))
        {
            *v = T::lit(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        }
    }
    Ok(())
}

pub fn save_generator<T: Scalar>(dir: &Path, g: &Generator<T>) -> Result<()> {
    save_network(dir, "generator", g.config(), g)
}

pub fn save_discriminator<T: Scalar>(dir: &Path, d: &Discriminator<T>) -> Result<()> {
    save_network(dir, "discriminator", d.config(), d)
}

pub fn load_generator<T: Scalar>(dir: &Path) -> Result<Generator<T>> {
    let m: Manifest<GeneratorConfig> = read_manifest(dir, "generator")?;
    let mut g = Generator::zeros(m.config.clone())?;
    load_into(dir, &m, &mut g)?;
    Ok(g)
}

pub fn load_discriminator<T: Scalar>(dir: &Path) -> Result<Discriminator<T>> {
    let m: Manifest<DiscriminatorConfig> = read_manifest(dir, "discriminator")?;
    let mut d = Discriminator::zeros(m.config.clone())?;
    load_into(dir, &m, &mut d)?;
    Ok(d)
}
