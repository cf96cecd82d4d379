//! Persistence of chain states: CSV tables and a compact binary checkpoint.
//!
//! Checkpoint layout, all little-endian: the 8-byte magic `HHMCCKPT`, a
//! `u32` format version (currently 1), `u64` dimension `D`, `u64` row count
//! `n`, then `n * D` `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::spectrum::Field;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HHMCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes `step, q0, .., q{D-1}` rows; `steps[k]` labels `states[k]`.
pub fn write_states_csv(path: &Path, steps: &[u64], states: &[Field]) -> Result<()> {
    if steps.len() != states.len() {
        return Err(Error::DimensionMismatch { expected: states.len(), found: steps.len() });
    }
    let dim = states.first().map_or(0, Field::dim);
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["step".to_string()];
    header.extend((0..dim).map(|i| format!("q{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (s, q) in steps.iter().zip(states) {
        if q.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: q.dim() });
        }
        let mut row = vec![s.to_string()];
        row.extend(q.coeffs().iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_states_csv(path: &Path) -> Result<(Vec<u64>, Vec<Field>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut steps = Vec::new();
    let mut states = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let mut it = rec.iter();
        let step = it
            .next()
            .ok_or_else(|| Error::Io("empty row".into()))?
            .parse::<u64>()
            .map_err(|e| Error::Io(e.to_string()))?;
        let q = it.map(|x| x.parse::<f64>().map_err(|e| Error::Io(e.to_string()))).collect::<Result<Vec<_>>>()?;
        steps.push(step);
        states.push(Field::new(q)?);
    }
    Ok((steps, states))
}

pub fn write_checkpoint(path: &Path, states: &[Field]) -> Result<()> {
    let dim = states.first().map_or(0, Field::dim);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(dim as u64).to_le_bytes())?;
    w.write_all(&(states.len() as u64).to_le_bytes())?;
    for q in states {
        if q.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: q.dim() });
        }
        for x in q.coeffs() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<Field>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Io("not a checkpoint file".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Io(format!("unsupported checkpoint version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let dim = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut q = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut b8)?;
            q.push(f64::from_le_bytes(b8));
        }
        out.push(Field::from_vec_unchecked(q));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Io(format!("{} trailing bytes after checkpoint payload", rest.len())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Field> {
        vec![Field::new(vec![0.1, -2.5e-300, 3.0]).unwrap(), Field::new(vec![1.0 / 3.0, 7.0, -0.0]).unwrap()]
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_states_csv(&p, &[1, 2], &sample()).unwrap();
        let (s, q) = read_states_csv(&p).unwrap();
        assert_eq!(s, vec![1, 2]);
        assert_eq!(q, sample());
    }

    #[test]
    fn checkpoint_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        write_checkpoint(&p, &sample()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"HHMCCKPT");
        assert_eq!(bytes.len(), 8 + 4 + 8 + 8 + 6 * 8);
        assert_eq!(read_checkpoint(&p).unwrap(), sample());
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_checkpoint(&p).is_err());
    }
}
