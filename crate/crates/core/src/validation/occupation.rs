use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ValidationError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableOccupation {
    pub table: String,
    pub rows: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationReport {
    pub total: u64,
    pub tables: Vec<TableOccupation>,
}

impl OccupationReport {
    pub fn ratio(&self, table: &str) -> Option<f64> {
        self.tables.iter().find(|t| t.table == table).map(|t| t.ratio)
    }
}

/// Share of all stored rows held by each table: `r_i = e_i / sum_j e_j`.
pub fn occupation_ratios(rows: &BTreeMap<String, u64>) -> Result<OccupationReport, ValidationError> {
    let total: u64 = rows.values().sum();
    if total == 0 {
        return Err(ValidationError::UndefinedRatio);
    }
    let tables = rows
        .iter()
        .map(|(t, n)| TableOccupation { table: t.clone(), rows: *n, ratio: *n as f64 / total as f64 })
        .collect();
    Ok(OccupationReport { total, tables })
}
