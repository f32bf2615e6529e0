//! Rectangular result tables and their CSV form.

use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};
use crate::rng::fnv1a64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub config_hash: u64,
    pub seed: u64,
}

/// Hash of any serializable configuration record.
pub fn config_hash<T: Serialize + ?Sized>(config: &T) -> u64 {
    fnv1a64(serde_json::to_string(config).expect("config serializes").as_bytes())
}

/// 17 significant digits, enough to round-trip every f64.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        // keep the sign-free zero so -0.0 and 0.0 do not split otherwise identical files
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}

impl ExperimentTable {
    pub fn new(name: &str, columns: &[&str], config_hash: u64, seed: u64) -> Self {
        ExperimentTable {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            config_hash,
            seed,
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header of {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| GmcError::BadParams(format!("table {} has no column {name}", self.name)))?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# config_hash={:016x} seed={}\n", self.config_hash, self.seed);
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&x| format_float(x)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    /// Parse the CSV written by [`ExperimentTable::to_csv`].
    pub fn from_csv(name: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let meta = lines.next().ok_or(GmcError::EmptySample)?;
        let mut config_hash = 0;
        let mut seed = 0;
        for part in meta.trim_start_matches('#').split_whitespace() {
            if let Some(v) = part.strip_prefix("config_hash=") {
                config_hash = u64::from_str_radix(v, 16).map_err(|e| GmcError::Io(e.to_string()))?;
            } else if let Some(v) = part.strip_prefix("seed=") {
                seed = v.parse().map_err(|e: std::num::ParseIntError| GmcError::Io(e.to_string()))?;
            }
        }
        let header = lines.next().ok_or(GmcError::EmptySample)?;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for line in lines {
            let row: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            let row = row.map_err(|e| GmcError::Io(e.to_string()))?;
            if row.len() != columns.len() {
                return Err(GmcError::Io(format!("ragged row in {name}")));
            }
            rows.push(row);
        }
        Ok(ExperimentTable { name: name.to_string(), columns, rows, config_hash, seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_is_exact() {
        let mut t = ExperimentTable::new("t", &["a", "b"], 0xabc, 7);
        t.push(vec![0.1 + 0.2, -1e-300]);
        t.push(vec![-0.0, f64::MAX]);
        let csv = t.to_csv();
        assert!(csv.starts_with("# config_hash=0000000000000abc seed=7\na,b\n"));
        let back = ExperimentTable::from_csv("t", &csv).unwrap();
        assert_eq!(back.rows[0], t.rows[0]);
        assert_eq!(back.rows[1][1], f64::MAX);
        assert_eq!(back.config_hash, 0xabc);
        assert_eq!(back.to_csv(), csv);
    }
}
