use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update_idx: usize,
    pub l_diff: f64,
    pub l_dt3: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub norm_score: f64,
}

/// Gradient norms of the two parameter groups at one update (not persisted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradProbe {
    pub update_idx: usize,
    pub dt3: f64,
    pub eps: f64,
    pub dt3_action_head: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub updates: Vec<UpdateRecord>,
    pub epochs: Vec<EpochRecord>,
}

fn check_finite(vals: &[f64], what: &str) -> Result<(), TrainError> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TrainError::NonFinite(format!("{what} has a non-finite value: {vals:?}")))
    }
}

impl MetricsLog {
    pub fn push_update(&mut self, rec: UpdateRecord) -> Result<(), TrainError> {
        check_finite(&[rec.l_diff, rec.l_dt3, rec.l_total], "update record")?;
        if let Some(last) = self.updates.last() {
            if rec.update_idx <= last.update_idx {
                return Err(TrainError::Argument(format!(
                    "update index {} does not follow {}",
                    rec.update_idx, last.update_idx
                )));
            }
        }
        self.updates.push(rec);
        Ok(())
    }

    pub fn push_epoch(&mut self, rec: EpochRecord) -> Result<(), TrainError> {
        check_finite(&[rec.mean_return, rec.success_rate, rec.norm_score], "epoch record")?;
        self.epochs.push(rec);
        Ok(())
    }

    pub fn updates_csv(&self) -> String {
        to_csv(&self.updates)
    }

    pub fn epochs_csv(&self) -> String {
        to_csv(&self.epochs)
    }

    pub fn write_csvs(&self, updates: &Path, epochs: &Path) -> Result<(), TrainError> {
        fs::write(updates, self.updates_csv()).map_err(|e| TrainError::io(updates, e))?;
        fs::write(epochs, self.epochs_csv()).map_err(|e| TrainError::io(epochs, e))
    }

    pub fn read_csvs(updates: &Path, epochs: &Path) -> Result<Self, TrainError> {
        Ok(Self {
            updates: from_csv(updates)?,
            epochs: from_csv(epochs)?,
        })
    }
}

trait CsvRecord: Serialize {
    const HEADER: &'static str;
}

impl CsvRecord for UpdateRecord {
    const HEADER: &'static str = "update_idx,l_diff,l_dt3,l_total\n";
}

impl CsvRecord for EpochRecord {
    const HEADER: &'static str = "epoch,mean_return,success_rate,norm_score\n";
}

fn to_csv<T: CsvRecord>(rows: &[T]) -> String {
    if rows.is_empty() {
        return T::HEADER.to_string();
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(true)
        .from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf8")
}

fn from_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, TrainError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| TrainError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| TrainError::Argument(format!("{} row {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_headers_and_round_trip() {
        let mut log = MetricsLog::default();
        assert_eq!(log.updates_csv(), "update_idx,l_diff,l_dt3,l_total\n");
        assert_eq!(log.epochs_csv(), "epoch,mean_return,success_rate,norm_score\n");
        log.push_update(UpdateRecord { update_idx: 1, l_diff: 0.5, l_dt3: 0.25, l_total: 0.55 })
            .unwrap();
        log.push_epoch(EpochRecord { epoch: 1, mean_return: -3.0, success_rate: 0.1, norm_score: 12.5 })
            .unwrap();
        assert!(log.updates_csv().starts_with("update_idx,l_diff,l_dt3,l_total\n1,0.5,0.25,0.55"));
        let dir = tempfile::tempdir().unwrap();
        let (u, e) = (dir.path().join("u.csv"), dir.path().join("e.csv"));
        log.write_csvs(&u, &e).unwrap();
        assert_eq!(MetricsLog::read_csvs(&u, &e).unwrap(), log);
    }

    #[test]
    fn rejects_non_monotone_and_non_finite() {
        let mut log = MetricsLog::default();
        let r = UpdateRecord { update_idx: 3, l_diff: 1.0, l_dt3: 1.0, l_total: 1.2 };
        log.push_update(r).unwrap();
        assert!(log.push_update(r).is_err());
        assert!(log
            .push_update(UpdateRecord { update_idx: 4, l_diff: f64::NAN, ..r })
            .is_err());
    }
}
