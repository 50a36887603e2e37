//! Binary filter-bank format.
//!
//! Layout: magic "SGRF" (4 bytes), format version u32 LE, u32 LE
//! length-prefixed UTF-8 JSON header
//! {n, m_max, n_phi, M, kappas, lambdas, residues, amplitude, grid_convention},
//! then packed float64 LE arrays (per mode m = 0..=m_max: B_eq row-major,
//! then for each north step and each south step: A then B row-major), and
//! a trailing CRC32 (IEEE) of every preceding byte.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::filterbank::{FilterBank, LatitudeGrid, ModeFilters, StepFilters, GRID_CONVENTION};
use crate::spectrum::PowerSpectrum;

const MAGIC: &[u8; 4] = b"SGRF";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BankHeader {
    n: usize,
    m_max: usize,
    n_phi: usize,
    #[serde(rename = "M")]
    order: usize,
    kappas: Vec<[f64; 2]>,
    lambdas: Vec<[f64; 2]>,
    residues: Vec<[f64; 2]>,
    amplitude: f64,
    grid_convention: String,
}

fn push_matrix(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            buf.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

impl FilterBank {
    /// Serializes the bank; the byte stream is a pure function of the bank
    /// contents, so save -> load -> save round-trips bit-exactly.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let grid = self.grid();
        let spec = self.spectrum();
        let header = BankHeader {
            n: grid.n(),
            m_max: grid.m_max(),
            n_phi: grid.n_phi(),
            order: spec.order(),
            kappas: spec.kappas().iter().map(|k| [k.re, k.im]).collect(),
            lambdas: spec.lambdas().iter().map(|l| [l.re, l.im]).collect(),
            residues: spec.residues().iter().map(|b| [b.re, b.im]).collect(),
            amplitude: spec.amplitude(),
            grid_convention: GRID_CONVENTION.to_string(),
        };
        let header_bytes = serde_json::to_vec(&header)?;

        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header_bytes);
        for mode in self.modes() {
            push_matrix(&mut buf, &mode.b_eq);
            for step in mode.north.iter().chain(&mode.south) {
                push_matrix(&mut buf, &step.a);
                push_matrix(&mut buf, &step.b);
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        Ok(buf)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut file = std::fs::File::create(path)?;
        file.write_all(&bytes)?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Format(
                "bank file shorter than the fixed prelude".into(),
            ));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic, not a bank file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported bank format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let crc_stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let crc_actual = crc32fast::hash(&bytes[..bytes.len() - 4]);
        if crc_stored != crc_actual {
            return Err(Error::Format(format!(
                "checksum mismatch: stored {crc_stored:#010x}, computed {crc_actual:#010x}"
            )));
        }

        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len() - 4)
            .ok_or_else(|| Error::Format("bank file truncated in header".into()))?;
        let header: BankHeader = serde_json::from_slice(&bytes[12..header_end])?;
        if header.grid_convention != GRID_CONVENTION {
            return Err(Error::Format(format!(
                "unsupported grid convention {:?}",
                header.grid_convention
            )));
        }

        let kappas: Vec<Complex64> = header
            .kappas
            .iter()
            .map(|k| Complex64::new(k[0], k[1]))
            .collect();
        if kappas.len() != header.order {
            return Err(Error::Format("kappa count disagrees with M".into()));
        }
        let spectrum = PowerSpectrum::with_amplitude(&kappas, header.amplitude)?;
        // The derived quantities are recomputed deterministically; stored
        // values must agree or the file is inconsistent.
        for (stored, computed) in header.lambdas.iter().zip(spectrum.lambdas()) {
            if (Complex64::new(stored[0], stored[1]) - computed).norm() > 1e-12 {
                return Err(Error::Format("stored lambdas disagree with kappas".into()));
            }
        }
        for (stored, computed) in header.residues.iter().zip(spectrum.residues()) {
            if (Complex64::new(stored[0], stored[1]) - computed).norm()
                > 1e-12 * computed.norm().max(1.0)
            {
                return Err(Error::Format("stored residues disagree with kappas".into()));
            }
        }
        let grid = LatitudeGrid::new(header.n, header.m_max, header.n_phi)?;

        let m_dim = header.order;
        let mat_floats = m_dim * m_dim;
        let per_mode = mat_floats * (1 + 4 * header.n);
        let expected_floats = (header.m_max + 1) * per_mode;
        let float_bytes = &bytes[header_end..bytes.len() - 4];
        if float_bytes.len() != expected_floats * 8 {
            return Err(Error::Format(format!(
                "bank file truncated: payload holds {} floats, expected {expected_floats}",
                float_bytes.len() / 8
            )));
        }

        let mut cursor = 0usize;
        let mut next_matrix = || -> DMatrix<f64> {
            let mut m = DMatrix::zeros(m_dim, m_dim);
            for r in 0..m_dim {
                for c in 0..m_dim {
                    let b: [u8; 8] = float_bytes[cursor..cursor + 8].try_into().unwrap();
                    m[(r, c)] = f64::from_le_bytes(b);
                    cursor += 8;
                }
            }
            m
        };

        let mut modes = Vec::with_capacity(header.m_max + 1);
        for _ in 0..=header.m_max {
            let b_eq = next_matrix();
            let mut north = Vec::with_capacity(header.n);
            let mut south = Vec::with_capacity(header.n);
            for _ in 0..header.n {
                let a = next_matrix();
                let b = next_matrix();
                north.push(StepFilters { a, b });
            }
            for _ in 0..header.n {
                let a = next_matrix();
                let b = next_matrix();
                south.push(StepFilters { a, b });
            }
            modes.push(ModeFilters { b_eq, north, south });
        }

        Ok(FilterBank::from_parts(
            Arc::new(grid),
            Arc::new(spectrum),
            modes,
        ))
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}
