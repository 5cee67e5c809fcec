use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use super::TrainingError;
use crate::world::{Action, ConditioningState};

/// Labelled source-domain sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceRecord {
    pub y: Vec<f64>,
    pub x: ConditioningState,
    #[serde(rename = "v")]
    pub v_long: f64,
    #[serde(rename = "u", with = "action_pair")]
    pub u_star: Action,
}

/// Unlabelled target-domain sample. There is no action field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRecord {
    pub y: Vec<f64>,
    pub x: ConditioningState,
    #[serde(rename = "v")]
    pub v_long: f64,
}

mod action_pair {
    use crate::world::Action;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(a: &Action, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq([a.u_a, a.u_steer])
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Action, D::Error> {
        let [u_a, u_steer] = <[f64; 2]>::deserialize(d)?;
        if !(-1.0..=1.0).contains(&u_a) || !(-1.0..=1.0).contains(&u_steer) {
            return Err(serde::de::Error::custom("action outside the [-1, 1]² box"));
        }
        Ok(Action { u_a, u_steer })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

/// Append-only record list with an optional capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer<R> {
    records: Vec<R>,
    capacity: Option<usize>,
    provenance: Provenance,
}

impl<R> Buffer<R> {
    pub fn new(capacity: Option<usize>, provenance: Provenance) -> Self {
        Self { records: Vec::new(), capacity, provenance }
    }

    pub fn from_records(records: Vec<R>, provenance: Provenance) -> Self {
        Self { records, capacity: None, provenance }
    }

    pub fn push(&mut self, record: R) -> Result<(), TrainingError> {
        if let Some(cap) = self.capacity {
            if self.records.len() >= cap {
                return Err(TrainingError::Precondition(format!("buffer is full ({cap} records)")));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = R>) -> Result<(), TrainingError> {
        for r in records {
            self.push(r)?;
        }
        Ok(())
    }

    pub fn records(&self) -> &[R] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
}

impl<R: Serialize> Buffer<R> {
    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, out: W) -> Result<(), TrainingError> {
        let mut w = BufWriter::new(out);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

impl<R: DeserializeOwned> Buffer<R> {
    pub fn read_jsonl<In: Read>(input: In, provenance: Provenance) -> Result<Self, TrainingError> {
        let mut records = Vec::new();
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(&line).map_err(|e| {
                TrainingError::Precondition(format!("buffer line {}: {e}", i + 1))
            })?;
            records.push(r);
        }
        Ok(Self::from_records(records, provenance))
    }
}
