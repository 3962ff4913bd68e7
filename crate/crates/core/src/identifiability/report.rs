//! Serializable analysis reports: a JSON document carrying the config
//! echo, per-d_s nullities and per-sample constraint flags, plus a flat
//! CSV for external plotting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Per-d_s aggregate line of a sweep. `mean_rank_a_l` is absent for
/// lengths where the augmented null space is trivial (nothing to
/// construct: the weights are identifiable there).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub d_s: usize,
    pub measured_rank_t: f64,
    pub nullity_t: f64,
    pub nullity_t1: f64,
    pub mean_rank_a_l: Option<f64>,
    pub d_k: usize,
}

/// One constructed-Ã sample's constraint flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub d_s: usize,
    pub sample: usize,
    pub p1: bool,
    pub p2: bool,
    pub p3: bool,
    pub p4: bool,
    pub nontrivial: bool,
    pub reconstructed_rank: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    /// Verbatim run configuration for provenance.
    pub config: serde_json::Value,
    pub seed: u64,
    pub rows: Vec<AnalysisRow>,
    pub samples: Vec<SampleRecord>,
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat CSV with one line per d_s:
    /// `d_s,measured_rank_T,nullity_T,nullity_T1,mean_rank_A_l,d_k`.
    pub fn to_flat_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("d_s,measured_rank_T,nullity_T,nullity_T1,mean_rank_A_l,d_k\n");
        for r in &self.rows {
            let mean_rank = r
                .mean_rank_a_l
                .map(|x| x.to_string())
                .unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.d_s, r.measured_rank_t, r.nullity_t, r.nullity_t1, mean_rank, r.d_k
            )
            .expect("string write");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_csv_layout() {
        let report = AnalysisReport {
            config: serde_json::json!({"d_k": 4}),
            seed: 3,
            rows: vec![AnalysisRow {
                d_s: 66,
                measured_rank_t: 64.0,
                nullity_t: 2.0,
                nullity_t1: 1.0,
                mean_rank_a_l: Some(65.0),
                d_k: 64,
            }],
            samples: vec![],
        };
        let csv = report.to_flat_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "d_s,measured_rank_T,nullity_T,nullity_T1,mean_rank_A_l,d_k"
        );
        assert_eq!(lines.next().unwrap(), "66,64,2,1,65,64");

        let json = report.to_json();
        let back: AnalysisReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.rows[0].d_s, 66);
    }
}
