//! Per-round diagnostic records and their CSV form.

use crate::error::{FgdroError, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const CSV_HEADER: &str = "round,objective_value,exact_grad_norm_sq,worst_client_loss,avg_client_loss,comm_scalars_cumulative,wall_ms";

/// One row of per-round diagnostics, computed on the post-aggregation
/// averaged model with the exact objective oracles.
///
/// For the KL family `exact_grad_norm_sq` is the exact squared gradient
/// norm of the log-sum-exp objective; for FGDRO_CVAR it is the squared
/// distance to the proximal point (the near-stationarity measure of the
/// non-smooth objective); for the ERM baselines it is the squared norm of
/// the mean client gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: u32,
    pub objective_value: f64,
    pub exact_grad_norm_sq: f64,
    pub worst_client_loss: f64,
    pub avg_client_loss: f64,
    pub comm_scalars_cumulative: u64,
    pub wall_ms: u64,
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.round,
            self.objective_value,
            self.exact_grad_norm_sq,
            self.worst_client_loss,
            self.avg_client_loss,
            self.comm_scalars_cumulative,
            self.wall_ms
        )
    }

    pub fn from_csv_row(line: &str, line_no: usize) -> Result<Self> {
        let parse_err = |message: &str| FgdroError::CsvParse {
            line: line_no,
            message: message.to_string(),
        };
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 7 {
            return Err(parse_err(&format!("expected 7 fields, got {}", fields.len())));
        }
        Ok(MetricsRecord {
            round: fields[0].parse().map_err(|_| parse_err("bad round"))?,
            objective_value: fields[1].parse().map_err(|_| parse_err("bad objective_value"))?,
            exact_grad_norm_sq: fields[2]
                .parse()
                .map_err(|_| parse_err("bad exact_grad_norm_sq"))?,
            worst_client_loss: fields[3]
                .parse()
                .map_err(|_| parse_err("bad worst_client_loss"))?,
            avg_client_loss: fields[4]
                .parse()
                .map_err(|_| parse_err("bad avg_client_loss"))?,
            comm_scalars_cumulative: fields[5]
                .parse()
                .map_err(|_| parse_err("bad comm_scalars_cumulative"))?,
            wall_ms: fields[6].parse().map_err(|_| parse_err("bad wall_ms"))?,
        })
    }
}

/// Serialize a metrics history to CSV bytes (header + one row per round).
pub fn history_to_csv(history: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (history.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for record in history {
        out.push_str(&record.to_csv_row());
        out.push('\n');
    }
    out
}

pub fn write_history_csv(path: &Path, history: &[MetricsRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(history_to_csv(history).as_bytes())?;
    Ok(())
}

pub fn read_history_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_history_csv(&text)
}

pub fn parse_history_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == CSV_HEADER => {}
        _ => {
            return Err(FgdroError::CsvParse {
                line: 1,
                message: format!("missing or wrong header, expected {CSV_HEADER:?}"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(idx, line)| MetricsRecord::from_csv_row(line, idx + 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: u32) -> MetricsRecord {
        MetricsRecord {
            round,
            objective_value: 0.5,
            exact_grad_norm_sq: 0.25,
            worst_client_loss: 1.5,
            avg_client_loss: 0.75,
            comm_scalars_cumulative: 110 * round as u64,
            wall_ms: 0,
        }
    }

    #[test]
    fn csv_round_trip() {
        let history = vec![record(1), record(2)];
        let text = history_to_csv(&history);
        assert!(text.starts_with(CSV_HEADER));
        let parsed = parse_history_csv(&text).unwrap();
        assert_eq!(parsed, history);
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(parse_history_csv("round,foo\n1,2\n").is_err());
    }

    #[test]
    fn comm_scalars_nondecreasing_in_fixture() {
        let history = vec![record(1), record(2), record(3)];
        assert!(history
            .windows(2)
            .all(|w| w[0].comm_scalars_cumulative <= w[1].comm_scalars_cumulative));
    }
}
