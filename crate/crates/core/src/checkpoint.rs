//! Text checkpoint format.
//!
//! A checkpoint is a JSON document holding a list of named arrays. Each array
//! carries its shape and its row-major values as decimal strings written with
//! the shortest representation that parses back to the same `f64`, so
//! save/load is value-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const FORMAT: &str = "vbkt-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<String>,
}

impl NamedArray {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        Self::from_values(name, t.shape().to_vec(), t.data())
    }

    pub fn from_values(name: impl Into<String>, shape: Vec<usize>, values: &[f64]) -> Self {
        Self {
            name: name.into(),
            shape,
            values: values.iter().map(|v| format!("{v:?}")).collect(),
        }
    }

    pub fn parse_values(&self) -> Result<Vec<f64>> {
        self.values
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}: `{s}`: {e}", self.name)))
            })
            .collect()
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.parse_values()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// Free-form metadata (model configuration, prior sizes, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value, arrays: Vec<NamedArray>) -> Self {
        Self {
            format: FORMAT.to_string(),
            meta,
            arrays,
        }
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Parse(format!("checkpoint has no array `{name}`")))
    }

    pub fn to_string_pretty(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(Error::Parse(format!(
                "unsupported checkpoint format `{}`",
                ck.format
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string_pretty()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
