//! `HTEB` binary embedding files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic   [u8; 4] = b"HTEB"
//! version u16     = 1
//! dim     u32
//! count   u64
//! count × { id_len u16, id [u8; id_len] (UTF-8), values [f32; dim] }
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::DataError;
use crate::embedding::UnitVector;

pub const MAGIC: [u8; 4] = *b"HTEB";
pub const VERSION: u16 = 1;
/// Stored vectors further than this from unit norm are re-normalized on load.
pub const UNIT_TOLERANCE: f64 = 1e-4;

fn eof_as_truncated(e: io::Error) -> DataError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        DataError::TruncatedFile
    } else {
        DataError::Io(e.to_string())
    }
}

pub fn write_embeddings_to<'a, W, I>(mut w: W, dim: usize, entries: I) -> Result<(), DataError>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a UnitVector)>,
    I::IntoIter: ExactSizeIterator,
{
    let entries = entries.into_iter();
    let io_err = |e: io::Error| DataError::Io(e.to_string());
    let dim32 =
        u32::try_from(dim).map_err(|_| DataError::Format(format!("dim {dim} too large")))?;
    w.write_all(&MAGIC).map_err(io_err)?;
    w.write_u16::<LittleEndian>(VERSION).map_err(io_err)?;
    w.write_u32::<LittleEndian>(dim32).map_err(io_err)?;
    w.write_u64::<LittleEndian>(entries.len() as u64)
        .map_err(io_err)?;
    for (id, v) in entries {
        if v.dim() != dim {
            return Err(DataError::DimMismatch {
                id: id.to_string(),
                expected: dim,
                found: v.dim(),
            });
        }
        let len = u16::try_from(id.len()).map_err(|_| {
            DataError::Format(format!("id of {} bytes exceeds u16 length", id.len()))
        })?;
        w.write_u16::<LittleEndian>(len).map_err(io_err)?;
        w.write_all(id.as_bytes()).map_err(io_err)?;
        for &x in v.as_slice() {
            w.write_f32::<LittleEndian>(x).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Reads every record; returns `(dim, records in file order)`.
pub fn read_embeddings_from<R: Read>(
    mut r: R,
) -> Result<(usize, Vec<(String, UnitVector)>), DataError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof_as_truncated)?;
    if magic != MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    let version = r.read_u16::<LittleEndian>().map_err(eof_as_truncated)?;
    if version != VERSION {
        return Err(DataError::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let dim = r.read_u32::<LittleEndian>().map_err(eof_as_truncated)? as usize;
    if dim == 0 {
        return Err(DataError::Format("dim must be positive".into()));
    }
    let count = r.read_u64::<LittleEndian>().map_err(eof_as_truncated)?;

    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let len = r.read_u16::<LittleEndian>().map_err(eof_as_truncated)? as usize;
        let mut id = vec![0u8; len];
        r.read_exact(&mut id).map_err(eof_as_truncated)?;
        let id = String::from_utf8(id)
            .map_err(|_| DataError::Format("record id is not UTF-8".into()))?;
        let mut values = vec![0f32; dim];
        r.read_f32_into::<LittleEndian>(&mut values)
            .map_err(eof_as_truncated)?;
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateId(id));
        }
        let raw_norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if (raw_norm - 1.0).abs() > UNIT_TOLERANCE {
            log::warn!("embedding {id:?} has norm {raw_norm:.6}; re-normalizing");
        }
        let v = UnitVector::from_unit_values(values, UNIT_TOLERANCE).map_err(|e| {
            DataError::Vector {
                id: id.clone(),
                source: e,
            }
        })?;
        out.push((id, v));
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(DataError::Format("trailing bytes after last record".into())),
        Err(e) => return Err(DataError::Io(e.to_string())),
    }
    Ok((dim, out))
}

pub fn write_embeddings(
    path: &Path,
    dim: usize,
    entries: &[(String, UnitVector)],
) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io_at(path, e))?;
    write_embeddings_to(
        BufWriter::new(file),
        dim,
        entries.iter().map(|(id, v)| (id.as_str(), v)),
    )
}

pub fn write_embedding_map(
    path: &Path,
    dim: usize,
    map: &BTreeMap<String, UnitVector>,
) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io_at(path, e))?;
    write_embeddings_to(
        BufWriter::new(file),
        dim,
        map.iter().map(|(id, v)| (id.as_str(), v)),
    )
}

/// Loads an embedding file keyed by id.
pub fn load_embeddings(path: &Path) -> Result<BTreeMap<String, UnitVector>, DataError> {
    load_embeddings_with_dim(path).map(|(_, map)| map)
}

pub fn load_embeddings_with_dim(
    path: &Path,
) -> Result<(usize, BTreeMap<String, UnitVector>), DataError> {
    let file = File::open(path).map_err(|e| DataError::io_at(path, e))?;
    let (dim, records) = read_embeddings_from(BufReader::new(file))?;
    Ok((dim, records.into_iter().collect()))
}
