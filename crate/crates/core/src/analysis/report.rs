//! Run artifacts: the per-round metrics table and the JSON summary.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{distance_summary, pca2, rho_report, DistanceSummary, Pca2, RhoReport};
use crate::attack::Role;
use crate::error::Result;
use crate::simulator::RunResult;

/// Column order of the metrics table.
pub const METRICS_HEADER: [&str; 6] = [
    "round",
    "accuracy",
    "weighted_loss",
    "delta_w_norm",
    "attacker_rho_mass",
    "max_attacker_rho",
];

/// One row of the metrics table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub accuracy: f64,
    pub weighted_loss: f64,
    pub delta_w_norm: f64,
    pub attacker_rho_mass: f64,
    pub max_attacker_rho: f64,
}

pub fn metrics_rows(result: &RunResult) -> Vec<MetricsRow> {
    result
        .records
        .iter()
        .map(|r| MetricsRow {
            round: r.round,
            accuracy: r.accuracy,
            weighted_loss: r.weighted_loss,
            delta_w_norm: r.delta_w_norm,
            attacker_rho_mass: r.attacker_mass(),
            max_attacker_rho: r.max_attacker_rho(),
        })
        .collect()
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(src: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(src);
    let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
    Ok(rows)
}

/// Last-layer projection of one snapshot round. Row 0 is the global model,
/// row 1 the server model, then the cohort in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSnapshot {
    pub round: usize,
    pub cohort: Vec<usize>,
    pub attacker: Vec<bool>,
    pub pca: Pca2,
}

/// Everything `summary.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: serde_json::Value,
    pub stop_reason: String,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub tail20_accuracy: f64,
    pub final_server_accuracy: f64,
    pub metadata: crate::simulator::RunMetadata,
    pub rho: RhoReport,
    pub distances: DistanceSummary,
    pub zero_weight_counts: Vec<usize>,
    pub mean_bias: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<serde_json::Value>,
    pub pca: Vec<PcaSnapshot>,
}

impl RunSummary {
    pub fn build(
        config: serde_json::Value,
        result: &RunResult,
        roles: &[Role],
        last_layer: std::ops::Range<usize>,
        bounds: Option<&super::BoundParams>,
    ) -> Result<Self> {
        let mut pca = Vec::new();
        for snap in &result.snapshots {
            let mut rows = vec![
                snap.global.as_slice()[last_layer.clone()].to_vec(),
                snap.server.as_slice()[last_layer.clone()].to_vec(),
            ];
            rows.extend(snap.client_models.iter().map(|w| w.as_slice()[last_layer.clone()].to_vec()));
            pca.push(PcaSnapshot {
                round: snap.round,
                attacker: snap.cohort.iter().map(|&c| roles[c] == Role::Attacker).collect(),
                cohort: snap.cohort.clone(),
                pca: pca2(&rows)?,
            });
        }
        let bounds = match bounds {
            Some(p) => Some(serde_json::json!({
                "params": p,
                "lemma2_pure_threshold": super::lemma2_pure_threshold(p)?,
                "lemma2_impure": super::lemma2_impure_terms(p)?,
                "bias_bound_noniid_clean": super::bias_bound(p, super::BiasScenario::NoniidClean)?,
                "bias_bound_impure": super::bias_bound(p, super::BiasScenario::Impure)?,
                "bias_bound_pure": super::bias_bound(p, super::BiasScenario::Pure)?,
            })),
            None => None,
        };
        let n = result.records.len();
        Ok(Self {
            config,
            stop_reason: result.stop_reason.as_str().to_string(),
            rounds: n,
            final_accuracy: result.records.last().map_or(0.0, |r| r.accuracy),
            tail20_accuracy: result.tail_accuracy(20),
            final_server_accuracy: result.records.last().map_or(0.0, |r| r.server_accuracy),
            metadata: result.metadata.clone(),
            rho: rho_report(&result.records, roles)?,
            distances: distance_summary(&result.records),
            zero_weight_counts: result.records.iter().map(|r| r.zero_weight_count).collect(),
            mean_bias: result.records.iter().map(|r| r.bias).sum::<f64>() / n.max(1) as f64,
            bounds,
            pca,
        })
    }
}
