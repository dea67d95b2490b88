use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Result, TrainingError};

/// One epoch of one stage. Losses are in normalised units, MAEs in years.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Apparent (or single) head against apparent labels.
    pub val_mae_apparent: f64,
    /// Real head, or the single head, against real age.
    pub val_mae_real: f64,
    pub monitored: f64,
    #[serde(skip)]
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if last.stage == record.stage && record.epoch <= last.epoch {
                return Err(TrainingError::InvalidConfig(format!(
                    "epoch {} logged after epoch {} in stage {}",
                    record.epoch, last.epoch, record.stage
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn extend(&mut self, other: TrainLog) -> Result<()> {
        for r in other.records {
            self.push(r)?;
        }
        Ok(())
    }

    pub fn stage(&self, stage: u8) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    pub fn epochs_in_stage(&self, stage: u8) -> usize {
        self.stage(stage).count()
    }

    /// Writes one CSV row per epoch. Wall time is left out so identical
    /// runs produce identical files; see [`TrainLog::write_timing_csv`].
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        if self.records.is_empty() {
            w.write_record(["stage", "epoch", "train_loss", "val_loss", "val_mae_apparent", "val_mae_real", "monitored"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timing_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["stage", "epoch", "wall_secs"])?;
        for r in &self.records {
            w.write_record([r.stage.to_string(), r.epoch.to_string(), format!("{:.3}", r.wall_secs)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let mut log = Self::default();
        for row in reader.deserialize() {
            log.push(row?)?;
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(stage: u8, epoch: usize) -> EpochRecord {
        EpochRecord {
            stage,
            epoch,
            train_loss: 0.1 / 3.0,
            val_loss: 0.2,
            val_mae_apparent: 3.25,
            val_mae_real: 4.0,
            monitored: 0.2,
            wall_secs: 1.5,
        }
    }

    #[test]
    fn epochs_must_increase_within_a_stage() {
        let mut log = TrainLog::default();
        log.push(rec(1, 1)).unwrap();
        log.push(rec(1, 2)).unwrap();
        assert!(log.push(rec(1, 2)).is_err());
        log.push(rec(2, 1)).unwrap();
        assert_eq!(log.epochs_in_stage(1), 2);
    }

    #[test]
    fn csv_round_trip_drops_only_wall_time() {
        let mut log = TrainLog::default();
        log.push(rec(1, 1)).unwrap();
        log.push(rec(2, 1)).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("stage,epoch,train_loss,val_loss,val_mae_apparent,val_mae_real,monitored\n"));
        let back = TrainLog::read_csv(buf.as_slice()).unwrap();
        for (a, b) in back.records.iter().zip(&log.records) {
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.epoch, b.epoch);
            assert_eq!(a.wall_secs, 0.0);
        }
    }
}
