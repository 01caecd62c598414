//! Adapter checkpoint format: magic, `d`, `k`, `r` as little-endian u32,
//! `alpha` as little-endian f64, then row-major little-endian f64 data for
//! `A` followed by `B`. The merge tool writes dense matrices in the same
//! numeric layout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use super::LoraLayer;

const ADAPTER_MAGIC: &[u8; 8] = b"AMLORA1\n";
const DENSE_MAGIC: &[u8; 8] = b"AMDENSE\n";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("inconsistent header: {0}")]
    BadHeader(String),
}

fn write_matrix_row_major(w: &mut impl Write, m: &DMatrix<f64>) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_matrix_row_major(
    r: &mut impl Read,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>, CheckpointError> {
    let mut buf = [0u8; 8];
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            r.read_exact(&mut buf)?;
            m[(i, j)] = f64::from_le_bytes(buf);
        }
    }
    Ok(m)
}

pub fn write_adapter(layer: &LoraLayer, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(ADAPTER_MAGIC)?;
    for v in [
        layer.output_dim() as u32,
        layer.input_dim() as u32,
        layer.rank as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&layer.alpha.to_le_bytes())?;
    write_matrix_row_major(&mut w, &layer.a)?;
    write_matrix_row_major(&mut w, &layer.b)?;
    Ok(())
}

/// Reads the trainable factors back onto the supplied base matrix.
pub fn read_adapter(path: &Path, w0: DMatrix<f64>) -> Result<LoraLayer, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != ADAPTER_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut u32_buf = [0u8; 4];
    let mut next_u32 = |r: &mut BufReader<File>| -> Result<u32, CheckpointError> {
        r.read_exact(&mut u32_buf)?;
        Ok(u32::from_le_bytes(u32_buf))
    };
    let d = next_u32(&mut r)? as usize;
    let k = next_u32(&mut r)? as usize;
    let rank = next_u32(&mut r)? as usize;
    let mut f64_buf = [0u8; 8];
    r.read_exact(&mut f64_buf)?;
    let alpha = f64::from_le_bytes(f64_buf);
    if w0.nrows() != d || w0.ncols() != k {
        return Err(CheckpointError::BadHeader(format!(
            "base is {}x{} but checkpoint expects {d}x{k}",
            w0.nrows(),
            w0.ncols()
        )));
    }
    let a = read_matrix_row_major(&mut r, rank, k)?;
    let b = read_matrix_row_major(&mut r, d, rank)?;
    Ok(LoraLayer { w0, a, b, rank, alpha })
}

pub fn write_dense(m: &DMatrix<f64>, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DENSE_MAGIC)?;
    for v in [m.nrows() as u32, m.ncols() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    write_matrix_row_major(&mut w, m)?;
    Ok(())
}

pub fn read_dense(path: &Path) -> Result<DMatrix<f64>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DENSE_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    let rows = u32::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)?;
    let cols = u32::from_le_bytes(buf) as usize;
    read_matrix_row_major(&mut r, rows, cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora::init_lora;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adapter_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w0 = DMatrix::from_fn(5, 4, |_, _| rng.gen_range(-1.0..1.0));
        let mut layer = init_lora(w0.clone(), 2, 16.0, 0.02, 4).unwrap();
        layer.b = DMatrix::from_fn(5, 2, |_, _| rng.gen_range(-1.0..1.0));

        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("adapter.bin");
        write_adapter(&layer, &path).unwrap();
        let loaded = read_adapter(&path, w0).unwrap();
        assert_eq!(loaded, layer);
    }

    #[test]
    fn dense_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = DMatrix::from_fn(6, 3, |_, _| rng.gen_range(-10.0..10.0));
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("merged.bin");
        write_dense(&m, &path).unwrap();
        assert_eq!(read_dense(&path).unwrap(), m);
    }

    #[test]
    fn mismatched_base_rejected() {
        let layer = init_lora(DMatrix::identity(4, 4), 2, 16.0, 0.02, 0).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("adapter.bin");
        write_adapter(&layer, &path).unwrap();
        assert!(matches!(
            read_adapter(&path, DMatrix::identity(5, 5)),
            Err(CheckpointError::BadHeader(_))
        ));
    }
}
