use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::eval::{summarize, EvalRecord, SummaryKind};
use super::oks::OksParams;

/// The six headline metrics in table column order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub apm: f64,
    pub apl: f64,
    pub ar: f64,
}

impl MetricsReport {
    pub fn compute(records: &[EvalRecord], params: &OksParams) -> Self {
        let s = |k| summarize(records, k, params);
        Self {
            ap: s(SummaryKind::Ap),
            ap50: s(SummaryKind::Ap50),
            ap75: s(SummaryKind::Ap75),
            apm: s(SummaryKind::ApMedium),
            apl: s(SummaryKind::ApLarge),
            ar: s(SummaryKind::Ar),
        }
    }

    pub fn values(&self) -> [(&'static str, f64); 6] {
        [
            ("AP", self.ap),
            ("AP50", self.ap50),
            ("AP75", self.ap75),
            ("APM", self.apm),
            ("APL", self.apl),
            ("AR", self.ar),
        ]
    }

    /// Header row plus one row of values.
    pub fn to_table(&self) -> String {
        let mut head = String::new();
        let mut row = String::new();
        for (name, v) in self.values() {
            let _ = write!(head, "{name:>8}");
            let _ = write!(row, "{v:>8.4}");
        }
        format!("{}\n{}\n", head.trim_start(), row.trim_start())
    }

    /// `name value` per line.
    pub fn to_key_values(&self) -> String {
        self.values().iter().map(|(n, v)| format!("{n} {v}\n")).collect()
    }

    pub fn parse_key_values(text: &str) -> Option<Self> {
        let get = |key: &str| {
            text.lines()
                .filter_map(|l| l.split_once(' '))
                .find(|(k, _)| *k == key)
                .and_then(|(_, v)| v.trim().parse::<f64>().ok())
        };
        Some(Self {
            ap: get("AP")?,
            ap50: get("AP50")?,
            ap75: get("AP75")?,
            apm: get("APM")?,
            apl: get("APL")?,
            ar: get("AR")?,
        })
    }
}
