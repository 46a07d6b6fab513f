// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::factcheck::FactCheckOutcome;
use super::{MetricKind, Quadrant};

/// Scores of the four settings, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cells {
    pub pp: f64,
    pub pn: f64,
    pub nn: f64,
    pub np: f64,
}

impl Cells {
    pub fn get(&self, q: Quadrant) -> f64 {
        match q {
            Quadrant::PP => self.pp,
            Quadrant::PN => self.pn,
            Quadrant::NN => self.nn,
            Quadrant::NP => self.np,
        }
    }

    pub fn discrepancies(&self) -> Discrepancies {
        Discrepancies {
            pp_pn: self.pp - self.pn,
            pp_np: self.pp - self.np,
            nn_pn: self.nn - self.pn,
            nn_np: self.nn - self.np,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub pp: usize,
    pub pn: usize,
    pub nn: usize,
    pub np: usize,
}

/// Efficacy minus hallucination, the rectified efficacy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discrepancies {
    pub pp_pn: f64,
    pub pp_np: f64,
    pub nn_pn: f64,
    pub nn_np: f64,
}

impl Discrepancies {
    pub const LABELS: [&'static str; 4] = ["PP-PN", "PP-NP", "NN-PN", "NN-NP"];

    pub fn values(&self) -> [f64; 4] {
        [self.pp_pn, self.pp_np, self.nn_pn, self.nn_np]
    }

    pub fn mean(&self) -> f64 {
        self.values().iter().sum::<f64>() / 4.0
    }
}

/// Held-out facts still answered with their old object, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetentionScores {
    pub after_positive_edit: f64,
    pub after_negative_edit: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metric_kind: MetricKind,
    pub cells: Cells,
    pub n: Counts,
    pub discrepancies: Discrepancies,
    pub avg: f64,
    pub retention: Option<RetentionScores>,
    pub fact_check: Option<FactCheckOutcome>,
    pub base_fingerprint: String,
    pub config_hash: Option<String>,
    pub tool_version: String,
}

/// Rounds half away from zero to one decimal, absorbing binary noise.
pub fn round1(x: f64) -> f64 {
    let r = (x * 10.0 + x.signum() * 1e-7).round() / 10.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub(crate) fn fmt1(x: f64) -> String {
    format!("{:.1}", round1(x))
}

impl MetricsReport {
    pub fn new(metric_kind: MetricKind, cells: Cells, n: Counts, base_fingerprint: String) -> Self {
        let discrepancies = cells.discrepancies();
        Self {
            metric_kind,
            cells,
            n,
            avg: discrepancies.mean(),
            discrepancies,
            retention: None,
            fact_check: None,
            base_fingerprint,
            config_hash: None,
            tool_version: crate::VERSION.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned table: efficacy and hallucination cells, then discrepancies.
    pub fn to_text(&self) -> String {
        let c = &self.cells;
        let d = self.discrepancies.values();
        let mut out = format!("metric: {}\n", self.metric_kind.name());
        out.push_str(&format!(
            "{:<7}{:<7}{:<7}{:<7}| {:<7}{:<7}{:<7}{:<7}{}\n",
            "PP", "PN", "NN", "NP", "PP-PN", "PP-NP", "NN-PN", "NN-NP", "Avg"
        ));
        out.push_str(&format!(
            "{:<7}{:<7}{:<7}{:<7}| {:<7}{:<7}{:<7}{:<7}{}\n",
            fmt1(c.pp),
            fmt1(c.pn),
            fmt1(c.nn),
            fmt1(c.np),
            fmt1(d[0]),
            fmt1(d[1]),
            fmt1(d[2]),
            fmt1(d[3]),
            fmt1(self.avg)
        ));
        out.push_str(&format!(
            "n: PP {} PN {} NN {} NP {}\n",
            self.n.pp, self.n.pn, self.n.nn, self.n.np
        ));
        if let Some(r) = &self.retention {
            out.push_str(&format!(
                "retention (n={}): after positive edit {}, after negative edit {}\n",
                r.n,
                fmt1(r.after_positive_edit),
                fmt1(r.after_negative_edit)
            ));
        }
        if let Some(f) = &self.fact_check {
            out.push_str(&format!(
                "fact check: accuracy {} (included {}, excluded {})\n",
                fmt1(f.accuracy),
                f.included,
                f.excluded()
            ));
        }
        out.push_str(&format!("base: {}\n", self.base_fingerprint));
        if let Some(h) = &self.config_hash {
            out.push_str(&format!("config: {h}\n"));
        }
        out.push_str(&format!("version: {}\n", self.tool_version));
        out
    }

    /// One row per cell and per derived value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric_kind,name,kind,value,n\n");
        let kind = self.metric_kind.name();
        let n = [self.n.pp, self.n.pn, self.n.nn, self.n.np];
        for (q, n) in Quadrant::ALL.iter().zip(n) {
            let interp = match q.interpretation() {
                super::Interpretation::Efficacy => "efficacy",
                super::Interpretation::Hallucination => "hallucination",
            };
            out.push_str(&format!("{kind},{},{interp},{},{n}\n", q.label(), self.cells.get(*q)));
        }
        for (label, v) in Discrepancies::LABELS.iter().zip(self.discrepancies.values()) {
            out.push_str(&format!("{kind},{label},discrepancy,{v},\n"));
        }
        out.push_str(&format!("{kind},Avg,discrepancy,{},\n", self.avg));
        if let Some(r) = &self.retention {
            out.push_str(&format!("{kind},retention_positive_edit,retention,{},{}\n", r.after_positive_edit, r.n));
            out.push_str(&format!("{kind},retention_negative_edit,retention,{},{}\n", r.after_negative_edit, r.n));
        }
        if let Some(f) = &self.fact_check {
            out.push_str(&format!("{kind},fact_check,accuracy,{},{}\n", f.accuracy, f.included));
        }
        out
    }
}
