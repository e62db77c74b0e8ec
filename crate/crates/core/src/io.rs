//! JSON file formats for states and POVMs.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::device::NoisyBellPovm;
use crate::error::{Error, Result};
use crate::qcore::matrix::{ComplexMatrix, C64};
use crate::qcore::state::DensityMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub re: f64,
    pub im: f64,
}

pub type JsonMatrix = Vec<Vec<Entry>>;

pub fn matrix_to_json(m: &ComplexMatrix) -> JsonMatrix {
    m.to_rows()
        .into_iter()
        .map(|row| row.into_iter().map(|z| Entry { re: z.re, im: z.im }).collect())
        .collect()
}

pub fn matrix_from_json(rows: &JsonMatrix) -> Result<ComplexMatrix> {
    let rows: Vec<Vec<C64>> = rows
        .iter()
        .map(|r| r.iter().map(|e| C64::new(e.re, e.im)).collect())
        .collect();
    ComplexMatrix::from_rows(&rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub n_qubits: usize,
    pub matrix: JsonMatrix,
}

impl From<&DensityMatrix> for StateFile {
    fn from(rho: &DensityMatrix) -> Self {
        Self {
            n_qubits: rho.n_qubits(),
            matrix: matrix_to_json(rho.matrix()),
        }
    }
}

impl StateFile {
    pub fn into_state(self) -> Result<DensityMatrix> {
        DensityMatrix::new(self.n_qubits, matrix_from_json(&self.matrix)?)
    }
}

pub const BELL_LABELS: [&str; 4] = ["00", "01", "10", "11"];

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PovmFile {
    pub labels: Vec<String>,
    pub elements: Vec<JsonMatrix>,
}

impl From<&NoisyBellPovm> for PovmFile {
    fn from(povm: &NoisyBellPovm) -> Self {
        Self {
            labels: BELL_LABELS.iter().map(|s| s.to_string()).collect(),
            elements: povm.elements().iter().map(matrix_to_json).collect(),
        }
    }
}

impl PovmFile {
    pub fn into_povm(self) -> Result<NoisyBellPovm> {
        if self.labels.len() != 4 || self.elements.len() != 4 {
            return Err(Error::InvalidPovm(format!(
                "expected 4 labels and 4 elements, got {} and {}",
                self.labels.len(),
                self.elements.len()
            )));
        }
        let mut slots: [Option<ComplexMatrix>; 4] = Default::default();
        for (label, elem) in self.labels.iter().zip(&self.elements) {
            let idx = BELL_LABELS
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::InvalidPovm(format!("unknown label {label:?}")))?;
            if slots[idx].is_some() {
                return Err(Error::InvalidPovm(format!("duplicate label {label:?}")));
            }
            slots[idx] = Some(matrix_from_json(elem)?);
        }
        let [a, b, c, d] = slots.map(|s| s.expect("all four labels present"));
        NoisyBellPovm::new([a, b, c, d])
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_state(path: &Path) -> Result<DensityMatrix> {
    read_json::<StateFile>(path)?.into_state()
}

pub fn write_state(path: &Path, rho: &DensityMatrix) -> Result<()> {
    write_json(path, &StateFile::from(rho))
}

pub fn read_povm(path: &Path) -> Result<NoisyBellPovm> {
    read_json::<PovmFile>(path)?.into_povm()
}

pub fn write_povm(path: &Path, povm: &NoisyBellPovm) -> Result<()> {
    write_json(path, &PovmFile::from(povm))
}
