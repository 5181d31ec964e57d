//! Model file format.
//!
//! Header: magic `CMA1`, version u32, K u32, L u32, n u32, trigramDim u32,
//! gamma f64 — all little-endian — followed by row-major float32 weight
//! blocks in order Wc, bc, Ws, bs. Weights live in f64 in memory and are
//! rounded to f32 on disk.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{CmaError, Result};
use crate::textprep::TRIGRAM_DIM;

use super::{ClsmConfig, ClsmModel};

const MAGIC: &[u8; 4] = b"CMA1";
const VERSION: u32 = 1;

fn write_f32_block<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(64 * 1024);
    for v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
        if buf.len() >= 64 * 1024 {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f32_block<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

impl ClsmModel {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let k = self.config.conv_units;
        let input_dim = self.config.input_dim();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(k as u32).to_le_bytes())?;
        w.write_all(&(self.config.semantic_dim as u32).to_le_bytes())?;
        w.write_all(&(self.config.window_n as u32).to_le_bytes())?;
        w.write_all(&(self.config.trigram_dim as u32).to_le_bytes())?;
        w.write_all(&self.config.gamma.to_le_bytes())?;

        // Wc is column-major in memory; the file wants row-major.
        write_f32_block(
            &mut w,
            (0..k).flat_map(|row| (0..input_dim).map(move |col| (row, col))).map(
                |(row, col)| self.wc[col * k + row],
            ),
        )?;
        write_f32_block(&mut w, self.bc.iter().copied())?;
        write_f32_block(&mut w, self.ws.iter().copied())?;
        write_f32_block(&mut w, self.bs.iter().copied())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CmaError::Format(format!("bad model magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CmaError::Format(format!("unsupported model version {version}")));
        }
        let k = read_u32(&mut r)? as usize;
        let l = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        let trigram_dim = read_u32(&mut r)? as usize;
        if trigram_dim != TRIGRAM_DIM {
            return Err(CmaError::Format(format!(
                "model built for trigram dimension {trigram_dim}, this build uses {TRIGRAM_DIM}"
            )));
        }
        let mut gamma_bytes = [0u8; 8];
        r.read_exact(&mut gamma_bytes)?;
        let gamma = f64::from_le_bytes(gamma_bytes);

        let config = ClsmConfig {
            trigram_dim,
            window_n: n,
            conv_units: k,
            semantic_dim: l,
            gamma,
            ..ClsmConfig::default()
        };
        let input_dim = config.input_dim();
        let wc_row_major = read_f32_block(&mut r, k * input_dim)?;
        let bc = read_f32_block(&mut r, k)?;
        let ws = read_f32_block(&mut r, l * k)?;
        let bs = read_f32_block(&mut r, l)?;

        let mut wc = vec![0.0f64; k * input_dim];
        for row in 0..k {
            for col in 0..input_dim {
                wc[col * k + row] = wc_row_major[row * input_dim + col];
            }
        }
        ClsmModel::from_parts(config, wc, bc, ws, bs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    /// SHA-256 of the serialized model bytes; identical for a model and its
    /// saved file.
    pub fn fingerprint(&self) -> [u8; 32] {
        struct HashWriter(Sha256);
        impl Write for HashWriter {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.update(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let mut hw = HashWriter(Sha256::new());
        self.write_to(&mut hw).expect("hashing writer cannot fail");
        hw.0.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> ClsmModel {
        let config = ClsmConfig {
            conv_units: 5,
            semantic_dim: 3,
            seed: 77,
            ..ClsmConfig::default()
        };
        ClsmModel::init(&config).unwrap()
    }

    #[test]
    fn save_load_round_trip_is_f32_stable() {
        let model = small_model();
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        let loaded = ClsmModel::read_from(bytes.as_slice()).unwrap();
        // A second serialization of the loaded model reproduces the bytes.
        let mut bytes2 = Vec::new();
        loaded.write_to(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
        assert_eq!(loaded.config.conv_units, 5);
        assert_eq!(loaded.config.semantic_dim, 3);
        assert_eq!(loaded.config.gamma, model.config.gamma);
    }

    #[test]
    fn fingerprint_matches_file_hash() {
        let model = small_model();
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        assert_eq!(model.fingerprint(), crate::seeding::sha256(&bytes));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = Vec::new();
        small_model().write_to(&mut bytes).unwrap();
        bytes[0] = b'X';
        assert!(ClsmModel::read_from(bytes.as_slice()).is_err());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut bytes = Vec::new();
        small_model().write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 10);
        assert!(ClsmModel::read_from(bytes.as_slice()).is_err());
    }
}
