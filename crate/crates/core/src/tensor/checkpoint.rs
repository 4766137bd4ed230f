//! Binary checkpoint format.
//!
//! Layout (little-endian throughout):
//!   magic "SATCKPT1"
//!   [u32 header_len + header bytes]   -- only when written with a header
//!   u32 entry count
//!   per entry: u32 name_len, UTF-8 name, u32 rank, u32 dims..., f32 data
//!
//! Optimizer state rides in the same table under an "opt/" name prefix.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SATCKPT1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected SATCKPT1")]
    BadMagic,
    #[error("truncated checkpoint file")]
    Truncated,
    #[error("invalid UTF-8 in entry name")]
    BadName,
    #[error("checkpoint written without the expected header")]
    MissingHeader,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl CheckpointEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn save_checkpoint(
    path: &Path,
    header: Option<&str>,
    entries: &[CheckpointEntry],
) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    if let Some(h) = header {
        w.write_all(&(h.len() as u32).to_le_bytes())?;
        w.write_all(h.as_bytes())?;
    }
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        debug_assert_eq!(e.numel(), e.data.len());
        w.write_all(&(e.name.len() as u32).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        for &d in &e.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &e.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| CheckpointError::Truncated)?;
    Ok(u32::from_le_bytes(buf))
}

/// `with_header` must match how the file was written (network checkpoints
/// embed a length-prefixed JSON config header before the parameter table).
pub fn load_checkpoint(
    path: &Path,
    with_header: bool,
) -> Result<(Option<String>, Vec<CheckpointEntry>), CheckpointError> {
    let mut rd = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    rd.read_exact(&mut magic).map_err(|_| CheckpointError::Truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header = if with_header {
        let len = read_u32(&mut rd)? as usize;
        let mut buf = vec![0u8; len];
        rd.read_exact(&mut buf).map_err(|_| CheckpointError::Truncated)?;
        Some(String::from_utf8(buf).map_err(|_| CheckpointError::BadName)?)
    } else {
        None
    };
    let count = read_u32(&mut rd)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut rd)? as usize;
        let mut name = vec![0u8; name_len];
        rd.read_exact(&mut name).map_err(|_| CheckpointError::Truncated)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::BadName)?;
        let rank = read_u32(&mut rd)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut rd)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0f32; numel];
        let mut buf = vec![0u8; numel * 4];
        rd.read_exact(&mut buf).map_err(|_| CheckpointError::Truncated)?;
        for (i, chunk) in buf.chunks_exact(4).enumerate() {
            data[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        entries.push(CheckpointEntry { name, shape, data });
    }
    Ok((header, entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("gsbody-ckpt-{name}-{}", std::process::id()));
        p
    }

    #[test]
    fn round_trip_bit_exact() {
        let entries = vec![
            CheckpointEntry {
                name: "enc.w".into(),
                shape: vec![2, 3],
                data: vec![1.0, -2.5, 0.125, 3.75, -0.0, 9.5e-8],
            },
            CheckpointEntry {
                name: "opt/enc.w/m".into(),
                shape: vec![2, 3],
                data: vec![0.0; 6],
            },
        ];
        let p = tmp("rt");
        save_checkpoint(&p, Some("{\"k\":1}"), &entries).unwrap();
        let (hdr, loaded) = load_checkpoint(&p, true).unwrap();
        assert_eq!(hdr.as_deref(), Some("{\"k\":1}"));
        assert_eq!(loaded, entries);
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn bad_magic_rejected() {
        let p = tmp("magic");
        std::fs::write(&p, b"NOTMAGIC").unwrap();
        assert!(matches!(load_checkpoint(&p, false), Err(CheckpointError::BadMagic)));
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn truncation_rejected() {
        let p = tmp("trunc");
        let entries = vec![CheckpointEntry {
            name: "w".into(),
            shape: vec![4],
            data: vec![1.0; 4],
        }];
        save_checkpoint(&p, None, &entries).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&p, false), Err(CheckpointError::Truncated)));
        std::fs::remove_file(&p).ok();
    }
}
