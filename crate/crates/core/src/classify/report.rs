//! Experiment report rows: one line per mix parameter, in the column order
//! param, mean lag, identity, age, gender, handedness, PP SMAPE, DU SMAPE.

use serde::{Deserialize, Serialize};

/// One evaluated grid point. Trait accuracies are `None` when the cohort
/// lacks the labels (or a trait is degenerate); CSV renders those as empty
/// fields, JSON as null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Mix parameter: the delay cap in ms, or the interval-mix gain.
    pub param: f64,
    /// Mean per-event lag in ms.
    pub mean_lag: f64,
    pub acc_identity: f64,
    pub acc_age: Option<f64>,
    pub acc_gender: Option<f64>,
    pub acc_handedness: Option<f64>,
    pub smape_pp: f64,
    pub smape_du: f64,
}

impl ReportRow {
    /// Render rows as CSV with a fixed header.
    pub fn to_csv(rows: &[ReportRow]) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in rows {
            writer.serialize(row).expect("in-memory write");
        }
        if rows.is_empty() {
            writer
                .write_record([
                    "param",
                    "mean_lag",
                    "acc_identity",
                    "acc_age",
                    "acc_gender",
                    "acc_handedness",
                    "smape_pp",
                    "smape_du",
                ])
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf8")
    }
}
