//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "HCLN"  u32 version  u32 tensor_count
//! per tensor: u16 name_len, name bytes, u8 ndim, ndim × u32 dims, f32 data
//! ```

use std::fs;
use std::path::Path;

use super::{BranchHead, ConvLayer, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HCLN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    let tensors: Vec<&Parameter> = params.parameters().collect();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for p in tensors {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("tensor name too long: {}", p.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.value.shape();
        out.push(
            u8::try_from(shape.len())
                .map_err(|_| Error::Checkpoint(format!("too many dims in {}", p.name)))?,
        );
        for &d in shape {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("dim too large in {}", p.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::UnexpectedEof)?;
        let slice = self.bytes.get(self.pos..end).ok_or(Error::UnexpectedEof)?;
        self.pos = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }
}

/// Raw `(name, tensor)` list in file order.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 {
        return Err(if CHECKPOINT_MAGIC.starts_with(bytes) {
            Error::UnexpectedEof
        } else {
            Error::BadMagic
        });
    }
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
        let data = r
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        out.push((name, Tensor::from_parts(shape, data)));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

/// Rebuilds the model from a checkpoint, inferring the layer layout from the
/// tensor names and shapes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let tensors = decode_tensors(bytes)?;
    let backbone_tensors = tensors
        .iter()
        .take_while(|(name, _)| name.starts_with("backbone."))
        .count();
    let mut rest = tensors.into_iter();
    let mut layer = |prefix: String| -> Result<ConvLayer> {
        let mut grab = |suffix: &str| -> Result<Parameter> {
            let want = format!("{prefix}.{suffix}");
            match rest.next() {
                Some((name, t)) if name == want => Ok(Parameter::new(name, t)),
                Some((name, _)) => Err(Error::Checkpoint(format!("expected {want}, found {name}"))),
                None => Err(Error::Checkpoint(format!("missing tensor {want}"))),
            }
        };
        let kernel = grab("kernel")?;
        let bias = grab("bias")?;
        let pad = match kernel.value.shape() {
            [_, _, k, _] => k / 2,
            other => return Err(Error::Checkpoint(format!("{prefix}.kernel has shape {other:?}"))),
        };
        Ok(ConvLayer { kernel, bias, pad })
    };
    let backbone = (0..backbone_tensors / 2)
        .map(|i| layer(format!("backbone.{i}")))
        .collect::<Result<Vec<_>>>()?;
    let mut branch = |name: &str| -> Result<BranchHead> {
        Ok(BranchHead {
            conv1: layer(format!("{name}.conv1"))?,
            conv2: layer(format!("{name}.conv2"))?,
            score: layer(format!("{name}.score"))?,
        })
    };
    let branch_a = branch("branch_a")?;
    let branch_b = branch("branch_b")?;
    if rest.next().is_some() {
        return Err(Error::Checkpoint("unexpected tensors after branch_b".into()));
    }
    Ok(ModelParams {
        backbone,
        branch_a,
        branch_b,
    })
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
