// SPDX-License-Identifier: MIT OR Apache-2.0

//! Recomputes discrepancy columns of published result tables from their
//! cells and flags rows whose printed arithmetic disagrees.

use serde::{Deserialize, Serialize};

use super::report::{fmt1, Cells, Discrepancies};
use crate::error::{LabError, Result};

/// Published exact-match results, one row per dataset and method.
pub const PUBLISHED_TABLES: &str = include_str!("../../data/published_tables.csv");

/// Largest accepted difference between a printed and a recomputed value.
pub const AUDIT_TOLERANCE: f64 = 0.1;

const HEADER: &str = "model,dataset,method,pp,pn,nn,np,pp_pn,pp_np,nn_pn,nn_np,avg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    /// Base model the row was measured on.
    pub model: String,
    pub dataset: String,
    pub method: String,
    pub cells: Cells,
    pub printed: Discrepancies,
    pub printed_avg: f64,
}

pub fn parse_table_rows(text: &str) -> Result<Vec<TableRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let bad = |line: usize, reason: String| LabError::MalformedRecord { index: line, reason };
    match lines.next() {
        Some(h) if h.trim() == HEADER => {}
        other => return Err(bad(0, format!("expected header `{HEADER}`, found {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 12 {
                return Err(bad(i + 1, format!("expected 12 fields, found {}", fields.len())));
            }
            let v = fields[3..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| bad(i + 1, format!("`{f}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            Ok(TableRow {
                model: fields[0].to_string(),
                dataset: fields[1].to_string(),
                method: fields[2].to_string(),
                cells: Cells { pp: v[0], pn: v[1], nn: v[2], np: v[3] },
                printed: Discrepancies { pp_pn: v[4], pp_np: v[5], nn_pn: v[6], nn_np: v[7] },
                printed_avg: v[8],
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowAudit {
    pub row: TableRow,
    pub recomputed: Discrepancies,
    pub recomputed_avg: f64,
    /// Labels of printed values outside tolerance.
    pub mismatches: Vec<String>,
}

impl RowAudit {
    pub fn consistent(&self) -> bool {
        self.mismatches.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableAudit {
    pub tolerance: f64,
    pub rows: Vec<RowAudit>,
}

fn within(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol + 1e-9
}

pub fn audit_tables(rows: &[TableRow], tolerance: f64) -> TableAudit {
    let rows = rows
        .iter()
        .map(|row| {
            let recomputed = row.cells.discrepancies();
            let recomputed_avg = recomputed.mean();
            let mut mismatches: Vec<String> = Discrepancies::LABELS
                .iter()
                .zip(recomputed.values().iter().zip(row.printed.values()))
                .filter(|(_, (r, p))| !within(**r, *p, tolerance))
                .map(|(l, _)| l.to_string())
                .collect();
            if !within(recomputed_avg, row.printed_avg, tolerance) {
                mismatches.push("Avg".to_string());
            }
            RowAudit {
                row: row.clone(),
                recomputed,
                recomputed_avg,
                mismatches,
            }
        })
        .collect();
    TableAudit { tolerance, rows }
}

impl TableAudit {
    pub fn flagged(&self) -> impl Iterator<Item = &RowAudit> {
        self.rows.iter().filter(|r| !r.consistent())
    }

    pub fn n_consistent(&self) -> usize {
        self.rows.iter().filter(|r| r.consistent()).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<7}{:<8}{:<11}{:<7}{:<7}{:<7}{:<7}{:<7}{:<7}{:<7}{:<7}{:<7}{:<8}{}\n",
            "model", "data", "method", "PP", "PN", "NN", "NP", "PP-PN", "PP-NP", "NN-PN", "NN-NP", "Avg", "printed", "status"
        );
        for a in &self.rows {
            let r = &a.row;
            let d = a.recomputed.values();
            let status = if a.consistent() {
                "consistent".to_string()
            } else {
                format!("inconsistent ({})", a.mismatches.join(", "))
            };
            out.push_str(&format!(
                "{:<7}{:<8}{:<11}{:<7}{:<7}{:<7}{:<7}{:<7}{:<7}{:<7}{:<7}{:<7}{:<8}{}\n",
                r.model,
                r.dataset,
                r.method,
                fmt1(r.cells.pp),
                fmt1(r.cells.pn),
                fmt1(r.cells.nn),
                fmt1(r.cells.np),
                fmt1(d[0]),
                fmt1(d[1]),
                fmt1(d[2]),
                fmt1(d[3]),
                fmt1(a.recomputed_avg),
                fmt1(r.printed_avg),
                status
            ));
        }
        out.push_str(&format!(
            "{} of {} rows consistent within {}\n",
            self.n_consistent(),
            self.rows.len(),
            self.tolerance
        ));
        out
    }
}
