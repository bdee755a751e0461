//! Workload description files (TOML).
//!
//! ```toml
//! kind = "matmul"
//! mode = "parallel"        # or "sequential"
//! n = 4                    # dims may be omitted when literals are given
//! m = 3
//! p = 3
//! a = [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0], [1.0, 0.0, 1.0]]
//! b_blob = "b.f32"         # raw little-endian f32, row-major
//! seed = 42                # random fill in [-1, 1) for anything not given
//! ```
//!
//! ```toml
//! kind = "cnn"
//! height = 5
//! width = 5
//! channels = 1
//! filters = 4
//! kernel = 3
//! stride = 1
//! pad = 0
//! relu = true
//! pool = 2                 # window; 0 disables pooling
//! pool_stride = 1
//! dense = [16, 4]          # host-side fully connected layers
//! softmax = true
//! images = 1
//! fill = "ones"            # "ones" or "random" for weights and pixels
//! seed = 42
//! ```
//!
//! Either kind may carry a `[fabric]` table with `FabricConfig` keys.
//! Relative blob paths resolve against the workload file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use super::{CnnSpec, MatMulMode, MatMulSpec};
use crate::fabric::FabricConfig;
use crate::oracle::{CnnWeights, DenseLayer, ShapeError, Tensor};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("workload file: {0}")]
    Parse(String),
    #[error("workload shape: {0}")]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Workload {
    MatMul { spec: MatMulSpec, fabric: Option<FabricConfig> },
    Cnn { spec: CnnSpec, fabric: Option<FabricConfig> },
}

impl Workload {
    pub fn fabric(&self) -> Option<&FabricConfig> {
        match self {
            Workload::MatMul { fabric, .. } | Workload::Cnn { fabric, .. } => fabric.as_ref(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum WorkloadFile {
    Matmul(MatmulFile),
    Cnn(CnnFile),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatmulFile {
    #[serde(default)]
    mode: MatMulMode,
    n: Option<usize>,
    m: Option<usize>,
    p: Option<usize>,
    a: Option<Vec<Vec<f32>>>,
    b: Option<Vec<Vec<f32>>>,
    a_blob: Option<PathBuf>,
    b_blob: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
    fabric: Option<FabricConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Fill {
    Ones,
    #[default]
    Random,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CnnFile {
    height: usize,
    width: usize,
    #[serde(default = "one")]
    channels: usize,
    filters: usize,
    kernel: usize,
    #[serde(default = "one")]
    stride: usize,
    #[serde(default)]
    pad: usize,
    #[serde(default = "yes")]
    relu: bool,
    #[serde(default)]
    pool: usize,
    #[serde(default = "one")]
    pool_stride: usize,
    #[serde(default)]
    dense: Vec<usize>,
    #[serde(default)]
    softmax: bool,
    #[serde(default = "one")]
    images: usize,
    #[serde(default)]
    fill: Fill,
    #[serde(default)]
    seed: u64,
    filters_blob: Option<PathBuf>,
    images_blob: Option<PathBuf>,
    fabric: Option<FabricConfig>,
}

/// Reads `len` little-endian f32 values.
pub fn read_f32_blob(path: &Path, len: usize) -> Result<Vec<f32>, WorkloadError> {
    let bytes = fs::read(path).map_err(|source| WorkloadError::Io { path: path.into(), source })?;
    if bytes.len() != len * 4 {
        return Err(WorkloadError::Parse(format!(
            "{}: expected {} bytes for {len} f32 values, found {}",
            path.display(),
            len * 4,
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn load_workload(path: &Path) -> Result<Workload, WorkloadError> {
    let text = fs::read_to_string(path).map_err(|source| WorkloadError::Io { path: path.into(), source })?;
    parse_workload(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Parses a workload file; `base` resolves relative blob paths.
pub fn parse_workload(text: &str, base: &Path) -> Result<Workload, WorkloadError> {
    let file: WorkloadFile = toml::from_str(text).map_err(|e| WorkloadError::Parse(e.to_string()))?;
    let check = |f: Option<FabricConfig>| -> Result<Option<FabricConfig>, WorkloadError> {
        if let Some(cfg) = &f {
            cfg.validate().map_err(|e| WorkloadError::Parse(e.to_string()))?;
        }
        Ok(f)
    };
    match file {
        WorkloadFile::Matmul(f) => {
            let mut rng = ChaCha8Rng::seed_from_u64(f.seed);
            let n = f.n.or(f.a.as_ref().map(Vec::len));
            let m = f.m.or(f.a.as_ref().and_then(|a| a.first().map(Vec::len))).or(f.b.as_ref().map(Vec::len));
            let p = f.p.or(f.b.as_ref().and_then(|b| b.first().map(Vec::len)));
            let (Some(n), Some(m), Some(p)) = (n, m, p) else {
                return Err(WorkloadError::Parse("matmul needs n, m, p or literal matrices".into()));
            };
            let a = matrix(f.a, f.a_blob.as_deref(), base, [n, m], &mut rng)?;
            let b = matrix(f.b, f.b_blob.as_deref(), base, [m, p], &mut rng)?;
            Ok(Workload::MatMul { spec: MatMulSpec::new(a, b, f.mode)?, fabric: check(f.fabric)? })
        }
        WorkloadFile::Cnn(f) => {
            let mut rng = ChaCha8Rng::seed_from_u64(f.seed);
            let mut values = |n: usize, blob: Option<&Path>| -> Result<Vec<f32>, WorkloadError> {
                match (blob, f.fill) {
                    (Some(p), _) => read_f32_blob(&base.join(p), n),
                    (None, Fill::Ones) => Ok(vec![1.0; n]),
                    (None, Fill::Random) => Ok((0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()),
                }
            };
            let fdims = [f.filters, f.channels, f.kernel, f.kernel];
            let filters = Tensor::new(&fdims, values(fdims.iter().product(), f.filters_blob.as_deref())?)?;
            let idims = [f.channels, f.height, f.width];
            let per_image: usize = idims.iter().product();
            let pixels = values(per_image * f.images, f.images_blob.as_deref())?;
            let images = pixels
                .chunks(per_image.max(1))
                .map(|c| Tensor::new(&idims, c.to_vec()))
                .collect::<Result<Vec<_>, _>>()?;
            let pool = (f.pool > 0).then_some((f.pool, f.pool_stride));
            let conv_h = crate::oracle::conv_output_len(f.height, f.kernel, f.stride, f.pad)?;
            let conv_w = crate::oracle::conv_output_len(f.width, f.kernel, f.stride, f.pad)?;
            let (oh, ow) = match pool {
                Some((k, s)) => (
                    crate::oracle::conv_output_len(conv_h, k, s, 0)?,
                    crate::oracle::conv_output_len(conv_w, k, s, 0)?,
                ),
                None => (conv_h, conv_w),
            };
            let mut fan_in = f.filters * oh * ow;
            let mut dense = Vec::new();
            for (i, &out) in f.dense.iter().enumerate() {
                let weights = Tensor::new(&[out, fan_in], values(out * fan_in, None)?)?;
                let last = i + 1 == f.dense.len();
                dense.push(DenseLayer { weights, bias: vec![0.0; out], relu: !last });
                fan_in = out;
            }
            let net = CnnWeights {
                filters,
                stride: f.stride,
                pad: f.pad,
                relu: f.relu,
                pool,
                dense,
                softmax: f.softmax,
            };
            Ok(Workload::Cnn { spec: CnnSpec { net, images }, fabric: check(f.fabric)? })
        }
    }
}

fn matrix(
    literal: Option<Vec<Vec<f32>>>,
    blob: Option<&Path>,
    base: &Path,
    dims: [usize; 2],
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<f32>, WorkloadError> {
    let data = match (literal, blob) {
        (Some(rows), _) => {
            if rows.len() != dims[0] || rows.iter().any(|r| r.len() != dims[1]) {
                return Err(WorkloadError::Parse(format!("matrix literal is not {}x{}", dims[0], dims[1])));
            }
            rows.concat()
        }
        (None, Some(p)) => read_f32_blob(&base.join(p), dims[0] * dims[1])?,
        (None, None) => (0..dims[0] * dims[1]).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    };
    Ok(Tensor::new(&dims, data)?)
}
