use serde::Serialize;
use std::io::Write;

use super::TrainingError;

/// One training round. Adversarial columns are empty for plain DAgger.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    pub round: usize,
    #[serde(rename = "J_s")]
    pub j_s: f64,
    #[serde(rename = "J_adv")]
    pub j_adv: Option<f64>,
    pub kl_hat: Option<f64>,
    pub disc_loss: Option<f64>,
    pub beta: f64,
    pub wall_ms: u64,
}

/// What happened, in order. Used to audit the strict alternation of
/// discriminator and policy updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    WarmStart,
    Discriminator { round: usize, steps: usize },
    Fill { round: usize },
    Policy { round: usize, steps: usize },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
    pub phases: Vec<Phase>,
}

impl History {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TrainingError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Only the columns a plain-DAgger run shares with SCAL.
    pub fn write_policy_csv<W: Write>(&self, out: W) -> Result<(), TrainingError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["round", "J_s", "beta"])?;
        for r in &self.rows {
            w.write_record([r.round.to_string(), r.j_s.to_string(), r.beta.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut v = Vec::new();
        self.write_csv(&mut v).expect("in-memory csv");
        String::from_utf8(v).expect("utf8 csv")
    }

    pub fn last(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }
}
