//! Model + memory snapshots as JSON. Floats round-trip bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{DenseLayer, IncrementalModel};
use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::memory::ReplayMemory;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Streams completed when the snapshot was taken.
    pub stream: usize,
    pub model: IncrementalModel,
    pub memory: ReplayMemory,
    /// Output unit of every learned class.
    pub units: BTreeMap<ClassId, usize>,
}

impl Checkpoint {
    pub fn new(
        stream: usize,
        model: IncrementalModel,
        memory: ReplayMemory,
        units: BTreeMap<ClassId, usize>,
    ) -> Self {
        Self { version: CHECKPOINT_VERSION, stream, model, memory, units }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Input {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| Error::Input {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Deserialization trusts nothing: re-run every shape check.
    fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::State(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let m = &self.model;
        let check = |l: &DenseLayer| -> Result<DenseLayer> {
            let (r, c) = l.weights.shape();
            if l.weights.as_slice().len() != r * c {
                return Err(Error::shape("checkpoint", format!("weight buffer does not hold {r}×{c}")));
            }
            DenseLayer::new(l.weights.clone(), l.biases.clone(), l.activation)
        };
        let trunk = m.trunk().iter().map(check).collect::<Result<Vec<_>>>()?;
        let heads = m.heads().iter().map(check).collect::<Result<Vec<_>>>()?;
        if heads.iter().any(|h| h.output_dim() != m.classes_per_head()) {
            return Err(Error::shape("checkpoint", "head width differs from classes_per_head"));
        }
        IncrementalModel::from_parts(m.input_dim(), trunk, heads, m.classes_per_head())?;
        if !m.is_finite() {
            return Err(Error::State("checkpoint holds non-finite parameters".into()));
        }
        if self.units.values().any(|&u| u >= m.output_dim()) {
            return Err(Error::State("class mapped past the model's output width".into()));
        }
        for (class, stored) in self.memory.classes() {
            if !self.units.contains_key(class) {
                return Err(Error::State(format!("stored class {class} has no output unit")));
            }
            if stored.samples.cols() != m.input_dim() {
                return Err(Error::shape(
                    format!("memory class {class}"),
                    format!("{} features, model takes {}", stored.samples.cols(), m.input_dim()),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::default_trunk;

    fn sample() -> Checkpoint {
        let mut model = IncrementalModel::new(4, &default_trunk(), 2, 7).unwrap();
        model.expand_head(2, 8).unwrap();
        model.expand_head(2, 9).unwrap();
        let units = (0..4).map(|c| (ClassId(c), c as usize)).collect();
        Checkpoint::new(2, model, ReplayMemory::new(0.3).unwrap(), units)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let bits = |c: &Checkpoint| -> Vec<u64> {
            c.model.parameters().iter().flat_map(|s| s.iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&back), bits(&ck));
    }

    #[test]
    fn corrupted_snapshots_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json().unwrap()).unwrap();
        v["version"] = 99.into();
        assert!(Checkpoint::from_json(&v.to_string()).is_err());

        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json().unwrap()).unwrap();
        v["model"]["heads"][0]["biases"]["data"] = serde_json::json!([0.0]);
        assert!(Checkpoint::from_json(&v.to_string()).is_err());

        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json().unwrap()).unwrap();
        v["units"]["3"] = 17.into();
        assert!(Checkpoint::from_json(&v.to_string()).is_err());
    }
}
