//! Model checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      4 bytes  "CLRM"
//! version    u16      1
//! kind       u8       0 = stance model, 1 = veracity model
//! meta_len   u32      length of the JSON metadata that follows
//! meta       meta_len bytes of UTF-8 JSON (config, scaler, embedding mix)
//! n_tensors  u32
//! per tensor:
//!   ndim     u8
//!   dims     ndim × u32
//!   values   product(dims) × f32
//! ```

use std::io::{Read, Write};

use super::tensor::{Scalar, Tensor};
use super::NnError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CLRM";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Stance,
    Veracity,
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::Stance => 0,
            ModelKind::Veracity => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub meta: serde_json::Value,
    pub tensors: Vec<Tensor<f32>>,
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N], NnError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

impl Checkpoint {
    pub fn from_tensors<F: Scalar>(kind: ModelKind, meta: serde_json::Value, tensors: &[&Tensor<F>]) -> Self {
        Checkpoint {
            kind,
            meta,
            tensors: tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), NnError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&[self.kind.code()])?;
        let meta = serde_json::to_vec(&self.meta).map_err(|e| NnError::Format(e.to_string()))?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&[t.ndim() as u8])?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, NnError> {
        let magic: [u8; 4] = read_exact(&mut r)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NnError::Format("not a model checkpoint (bad magic)".into()));
        }
        let version = u16::from_le_bytes(read_exact(&mut r)?);
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Format(format!("unsupported checkpoint version {version}")));
        }
        let kind = match read_exact::<1>(&mut r)?[0] {
            0 => ModelKind::Stance,
            1 => ModelKind::Veracity,
            k => return Err(NnError::Format(format!("unknown model kind {k}"))),
        };
        let meta_len = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let meta = serde_json::from_slice(&meta).map_err(|e| NnError::Format(format!("metadata: {e}")))?;
        let n = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut tensors = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let ndim = read_exact::<1>(&mut r)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(read_exact(&mut r)?) as usize);
            }
            let len: usize = shape.iter().product();
            let mut bytes = vec![0u8; len * 4];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Tensor::from_vec(&shape, data)?);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(NnError::Format(format!("{} trailing bytes after checkpoint", rest.len())));
        }
        Ok(Checkpoint { kind, meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), NnError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, NnError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Copies stored values into `targets`, which must match in count and shape.
    pub fn restore_into<F: Scalar>(&self, targets: Vec<&mut Tensor<F>>) -> Result<(), NnError> {
        if targets.len() != self.tensors.len() {
            return Err(NnError::Format(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.tensors.len(),
                targets.len()
            )));
        }
        for (i, (dst, src)) in targets.into_iter().zip(&self.tensors).enumerate() {
            if dst.shape() != src.shape() {
                return Err(NnError::Format(format!(
                    "tensor {i}: checkpoint shape {:?}, model shape {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.cast();
        }
        Ok(())
    }
}
