//! Binary policy checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            16 bytes  "GRASP-POLICY-CKP"
//! version           1 byte
//! family            1 byte   0 tabular, 1 mlp
//! obs kind          1 byte   0 discrete, 1 features
//! obs size          u32
//! n_agents          u32
//! action_count      u32
//! hidden            u32
//! block count       u32
//! per block:        role u8 (0 backbone, 1 head), agent u32, ndims u32, dims u32...
//! value count       u64
//! values            f64 × value count
//! ```
//!
//! The descriptor is re-derived from the architecture on load and must match
//! byte for byte.

use std::fs;
use std::path::Path;

use super::{BlockRole, PolicyArch, PolicyFamily, PolicyParams};
use crate::envs::ObsSpace;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 16] = b"GRASP-POLICY-CKP";
pub const CHECKPOINT_VERSION: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn descriptor(arch: &PolicyArch) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.push(match arch.family {
        PolicyFamily::Tabular => 0,
        PolicyFamily::Mlp => 1,
    });
    let (kind, size) = match arch.obs_space {
        ObsSpace::Discrete(n) => (0, n),
        ObsSpace::Features(n) => (1, n),
    };
    out.push(kind);
    put_u32(&mut out, size)?;
    put_u32(&mut out, arch.n_agents)?;
    put_u32(&mut out, arch.action_count)?;
    put_u32(&mut out, arch.hidden)?;
    let layout = arch.layout();
    put_u32(&mut out, layout.blocks().len())?;
    for block in layout.blocks() {
        let (role, agent) = match block.role {
            BlockRole::Backbone => (0, 0),
            BlockRole::Head(i) => (1, i),
        };
        out.push(role);
        put_u32(&mut out, agent)?;
        put_u32(&mut out, block.shape.len())?;
        for &d in &block.shape {
            put_u32(&mut out, d)?;
        }
    }
    Ok(out)
}

pub fn encode(params: &PolicyParams) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + 8 * params.flat().len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend(descriptor(params.arch())?);
    out.extend_from_slice(&(params.flat().len() as u64).to_le_bytes());
    for v in params.flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<PolicyParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(16)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(
            "not a policy checkpoint (bad magic)".into(),
        ));
    }
    let version = r.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let start = r.pos;
    let family = match r.u8()? {
        0 => PolicyFamily::Tabular,
        1 => PolicyFamily::Mlp,
        other => {
            return Err(Error::Checkpoint(format!(
                "unknown policy family tag {other}"
            )))
        }
    };
    let obs_space = match (r.u8()?, r.u32()?) {
        (0, n) => ObsSpace::Discrete(n),
        (1, n) => ObsSpace::Features(n),
        (other, _) => {
            return Err(Error::Checkpoint(format!(
                "unknown observation tag {other}"
            )))
        }
    };
    let n_agents = r.u32()?;
    let action_count = r.u32()?;
    let hidden = r.u32()?;
    let arch = PolicyArch::new(family, n_agents, obs_space, action_count, hidden)
        .map_err(|e| Error::Checkpoint(format!("invalid architecture: {e}")))?;
    let expected = descriptor(&arch)?;
    let header_len = 2 + 4 * 4;
    r.pos = start + header_len;
    if r.take(expected.len() - header_len)? != &expected[header_len..] {
        return Err(Error::Checkpoint(
            "block layout does not match the architecture".into(),
        ));
    }
    let count = u64::from_le_bytes(r.take(8)?.try_into().expect("eight bytes"));
    let total = arch.layout().total_len();
    if count != total as u64 {
        return Err(Error::Checkpoint(format!(
            "expected {total} values, header says {count}"
        )));
    }
    let values: Vec<f64> = r
        .take(8 * total)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(
            "trailing bytes after parameter values".into(),
        ));
    }
    PolicyParams::from_flat(arch, values)
}

pub fn write_checkpoint(path: &Path, params: &PolicyParams) -> Result<()> {
    fs::write(path, encode(params)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<PolicyParams> {
    let bytes = fs::read(path).map_err(|source| Error::MissingFile {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
