//! Parameter checkpoints.
//!
//! Two encodings of the same content: JSON (human readable) and a versioned
//! little-endian binary container whose round trip is bit-exact.
//!
//! Binary layout:
//!
//! ```text
//! magic   b"DCMP"
//! version u32
//! layers  u32
//! per layer:
//!   activation u8 (0 tanh, 1 relu, 2 identity)
//!   in  u32
//!   out u32
//!   weight f64 × in·out (row-major)
//!   bias   f64 × out
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{DiffError, Result};
use crate::mlp::{Activation, Dense, Mlp};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DCMP";
pub const FORMAT_VERSION: u32 = 1;

/// JSON form: shapes plus flat value arrays per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub version: u32,
    pub layers: Vec<LayerCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub activation: Activation,
    pub weight_shape: Vec<usize>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl MlpCheckpoint {
    pub fn from_mlp(mlp: &Mlp) -> Self {
        Self {
            version: FORMAT_VERSION,
            layers: mlp
                .layers()
                .iter()
                .map(|l| LayerCheckpoint {
                    activation: l.activation,
                    weight_shape: l.weight.shape().to_vec(),
                    weight: l.weight.values().to_vec(),
                    bias: l.bias.values().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        if self.version != FORMAT_VERSION {
            return Err(DiffError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let weight = Tensor::new(l.weight_shape.clone(), l.weight.clone())?;
                let bias = Tensor::matrix(1, l.bias.len(), l.bias.clone())?;
                Dense::new(weight, bias, l.activation)
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers)
    }
}

pub fn to_json(mlp: &Mlp) -> Result<String> {
    serde_json::to_string(&MlpCheckpoint::from_mlp(mlp)).map_err(|e| DiffError::Checkpoint(e.to_string()))
}

pub fn from_json(text: &str) -> Result<Mlp> {
    let ckpt: MlpCheckpoint = serde_json::from_str(text).map_err(|e| DiffError::Checkpoint(e.to_string()))?;
    ckpt.to_mlp()
}

fn io(e: std::io::Error) -> DiffError {
    DiffError::Checkpoint(e.to_string())
}

pub fn write_binary<W: Write>(mlp: &Mlp, mut out: W) -> Result<()> {
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(mlp.layers().len() as u32).to_le_bytes()).map_err(io)?;
    for layer in mlp.layers() {
        out.write_all(&[layer.activation.code()]).map_err(io)?;
        out.write_all(&(layer.input_dim() as u32).to_le_bytes()).map_err(io)?;
        out.write_all(&(layer.output_dim() as u32).to_le_bytes()).map_err(io)?;
        for v in layer.weight.values().iter().chain(layer.bias.values()) {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

pub fn to_binary(mlp: &Mlp) -> Vec<u8> {
    let mut buf = Vec::new();
    write_binary(mlp, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b).map_err(io)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        input.read_exact(&mut b).map_err(io)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

pub fn read_binary<R: Read>(mut input: R) -> Result<Mlp> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(DiffError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != FORMAT_VERSION {
        return Err(DiffError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut input)? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let mut code = [0u8; 1];
        input.read_exact(&mut code).map_err(io)?;
        let activation = Activation::from_code(code[0])
            .ok_or_else(|| DiffError::Checkpoint(format!("unknown activation {}", code[0])))?;
        let fan_in = read_u32(&mut input)? as usize;
        let fan_out = read_u32(&mut input)? as usize;
        let weight = Tensor::matrix(fan_in, fan_out, read_f64s(&mut input, fan_in * fan_out)?)?;
        let bias = Tensor::matrix(1, fan_out, read_f64s(&mut input, fan_out)?)?;
        layers.push(Dense::new(weight, bias, activation)?);
    }
    Mlp::from_layers(layers)
}
