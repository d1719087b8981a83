//! Binary checkpoint format.
//!
//! ```text
//! "ASEGCKPT"  u32 version
//! u64 config length, config text (UTF-8)
//! u64 iteration
//! u64 parameter count, then per parameter:
//!     u32 name length, name, u8 role (0 trainable, 1 buffer),
//!     4 × u64 shape (n, c, h, w), n·c·h·w × f64 values
//! u64 velocity count, then per velocity:
//!     u32 name length, name, u64 length, f64 values
//! u64 FNV-1a hash of every preceding byte
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use atrous_seg::params::ParamRole;
use atrous_seg::{Params, Result, SegError, Sgd, Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"ASEGCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub iteration: u64,
    pub params: Params,
    pub velocities: Vec<(String, Vec<f64>)>,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl Checkpoint {
    pub fn new(config: String, iteration: u64, params: &Params, sgd: Option<&Sgd>) -> Self {
        let velocities = sgd
            .map(|s| s.velocities().map(|(k, v)| (k.to_string(), v.to_vec())).collect())
            .unwrap_or_default();
        Self { config, iteration, params: params.clone(), velocities }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, p) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match p.role {
                ParamRole::Trainable => 0,
                ParamRole::Buffer => 1,
            });
            let s = p.value.shape();
            for d in [s.n, s.c, s.h, s.w] {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.velocities.len() as u64).to_le_bytes());
        for (name, v) in &self.velocities {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(v.len() as u64).to_le_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let sum = fnv1a64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 12 || &bytes[..8] != MAGIC {
            return Err(SegError::Parse { offset: 0, message: "not a checkpoint (bad magic)".into() });
        }
        let body = bytes.len() - 8;
        let stored = u64::from_le_bytes(bytes[body..].try_into().expect("8 bytes"));
        if fnv1a64(&bytes[..body]) != stored {
            return Err(SegError::Parse { offset: body, message: "checkpoint checksum mismatch".into() });
        }
        let mut r = Reader { bytes: &bytes[..body], pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(SegError::Parse { offset: 8, message: format!("unsupported checkpoint version {version}") });
        }
        let n = r.len_u64()?;
        let config = r.string(n)?;
        let iteration = r.u64()?;
        let count = r.len_u64()?;
        let mut params = Params::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = r.string(n)?;
            let at = r.pos;
            let role = match r.take(1)?[0] {
                0 => ParamRole::Trainable,
                1 => ParamRole::Buffer,
                other => return Err(SegError::Parse { offset: at, message: format!("bad parameter role {other}") }),
            };
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.len_u64()?;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let numel = shape.validate().map_err(|e| SegError::Parse { offset: at, message: e.to_string() })?;
            let values = r.f64s(numel)?;
            params.insert(name, role, Tensor::from_vec(shape, values)?)?;
        }
        let count = r.len_u64()?;
        let mut velocities = Vec::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = r.string(n)?;
            let len = r.len_u64()?;
            velocities.push((name, r.f64s(len)?));
        }
        if r.pos != body {
            return Err(SegError::Parse { offset: r.pos, message: "trailing bytes before checksum".into() });
        }
        Ok(Self { config, iteration, params, velocities })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // Write-then-rename keeps the previous checkpoint intact on failure.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Restores SGD velocities into `sgd`.
    pub fn restore_velocities(&self, sgd: &mut Sgd) {
        for (name, v) in &self.velocities {
            sgd.set_velocity(name, v.clone());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(SegError::Parse { offset: self.pos, message: format!("truncated: need {n} more bytes") }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len_u64(&mut self) -> Result<usize> {
        let at = self.pos;
        usize::try_from(self.u64()?).map_err(|_| SegError::Parse { offset: at, message: "length overflows".into() })
    }

    fn string(&mut self, n: usize) -> Result<String> {
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| SegError::Parse { offset: at, message: "invalid UTF-8".into() })
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| SegError::Parse {
            offset: self.pos,
            message: "length overflows".into(),
        })?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}
