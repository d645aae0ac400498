//! Diagnostics over models and round records: accuracy, weighted loss, the
//! aggregation bias statistic, attacker weight summaries, theoretical
//! thresholds and bounds, and principal-component projections.

mod bounds;
mod pca;
mod report;

pub use bounds::{
    bias_bound, estimate_bound_params, lemma2_impure_terms, lemma2_impure_threshold, lemma2_pure_threshold,
    BiasScenario, BoundParams, ImpureTerms,
};
pub use pca::{pca2, Pca2};
pub use report::{
    metrics_rows, read_metrics_csv, write_metrics_csv, MetricsRow, PcaSnapshot, RunSummary, METRICS_HEADER,
};

use serde::{Deserialize, Serialize};

use crate::aggregation::{check_simplex, SIMPLEX_TOL};
use crate::attack::Role;
use crate::data::Dataset;
use crate::error::{input, Result};
use crate::nn::{param_dist, predict, ModelSpec, ParamVector};
use crate::simulator::RoundRecord;

/// Fraction of test samples whose argmax prediction is correct.
pub fn accuracy(spec: &ModelSpec, w: &ParamVector, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(input("accuracy needs a nonempty test set"));
    }
    let pred = predict(spec, w, test)?;
    let hits = pred.iter().zip(test.labels()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / test.len() as f64)
}

/// `sum_n rho_n loss_n`.
pub fn weighted_train_loss(rho: &crate::aggregation::SimplexWeights, losses: &[f64]) -> Result<f64> {
    weighted_train_loss_raw(rho.as_slice(), losses)
}

/// [`weighted_train_loss`] on an unchecked weight slice.
pub fn weighted_train_loss_raw(rho: &[f64], losses: &[f64]) -> Result<f64> {
    if rho.len() != losses.len() {
        return Err(input(format!("{} weights for {} losses", rho.len(), losses.len())));
    }
    check_simplex(rho, SIMPLEX_TOL)?;
    Ok(rho.iter().zip(losses).map(|(r, l)| r * l).sum())
}

/// `||sum_n rho_n w_n - w0||`.
pub fn bias_statistic(rho: &crate::aggregation::SimplexWeights, client_ws: &[ParamVector], w0: &ParamVector) -> Result<f64> {
    let agg = crate::aggregation::aggregate(rho, client_ws)?;
    param_dist(&agg, w0)
}

/// Upper edges of the attacker weight histogram; the last bucket is open.
pub const RHO_BUCKETS: [f64; 5] = [0.0, 1e-8, 1e-4, 1e-2, 1e-1];

/// Attacker and legitimate weight in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRho {
    pub round: usize,
    pub attacker_mass: f64,
    pub legitimate_mass: f64,
    pub max_attacker_rho: f64,
    pub attackers_in_cohort: usize,
    pub zero_weight_count: usize,
}

/// Weight summaries over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoReport {
    pub rounds: Vec<RoundRho>,
    pub cumulative_attacker_mass: f64,
    pub cumulative_legitimate_mass: f64,
    pub max_attacker_rho: f64,
    /// Counts of individual attacker weights: `== 0`, then `<= edge` for each
    /// later edge of [`RHO_BUCKETS`], then above the last edge.
    pub attacker_histogram: Vec<usize>,
}

/// Summarises how much weight attackers received. `roles` is indexed by client id.
pub fn rho_report(records: &[RoundRecord], roles: &[Role]) -> Result<RhoReport> {
    if records.is_empty() {
        return Err(input("no round records"));
    }
    let mut hist = vec![0; RHO_BUCKETS.len() + 1];
    let mut rounds = Vec::with_capacity(records.len());
    for rec in records {
        let mut att = 0.0;
        let mut legit = 0.0;
        let mut max_att: f64 = 0.0;
        let mut count = 0;
        for (&c, &r) in rec.cohort.iter().zip(rec.rho.as_slice()) {
            let role = roles
                .get(c)
                .ok_or_else(|| input(format!("client {c} has no role")))?;
            if *role == Role::Attacker {
                att += r;
                max_att = max_att.max(r);
                count += 1;
                let b = RHO_BUCKETS.iter().position(|&e| r <= e).unwrap_or(RHO_BUCKETS.len());
                hist[b] += 1;
            } else {
                legit += r;
            }
        }
        rounds.push(RoundRho {
            round: rec.round,
            attacker_mass: att,
            legitimate_mass: legit,
            max_attacker_rho: max_att,
            attackers_in_cohort: count,
            zero_weight_count: rec.zero_weight_count,
        });
    }
    Ok(RhoReport {
        cumulative_attacker_mass: rounds.iter().map(|r| r.attacker_mass).sum(),
        cumulative_legitimate_mass: rounds.iter().map(|r| r.legitimate_mass).sum(),
        max_attacker_rho: rounds.iter().map(|r| r.max_attacker_rho).fold(0.0, f64::max),
        attacker_histogram: hist,
        rounds,
    })
}

/// Mean distance to `w0` of attacker and legitimate submissions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub legitimate_mean: Option<f64>,
    pub attacker_mean: Option<f64>,
    /// Rounds where every attacker was farther from `w0` than every legitimate client.
    pub separated_rounds: usize,
    pub mixed_rounds: usize,
}

pub fn distance_summary(records: &[RoundRecord]) -> DistanceSummary {
    let (mut ls, mut ln, mut as_, mut an) = (0.0, 0usize, 0.0, 0usize);
    let (mut sep, mut mixed) = (0, 0);
    for rec in records {
        let mut max_l = f64::NEG_INFINITY;
        let mut min_a = f64::INFINITY;
        for (&d, &a) in rec.distances.iter().zip(&rec.attacker) {
            if a {
                as_ += d;
                an += 1;
                min_a = min_a.min(d);
            } else {
                ls += d;
                ln += 1;
                max_l = max_l.max(d);
            }
        }
        if max_l.is_finite() && min_a.is_finite() {
            mixed += 1;
            if min_a > max_l {
                sep += 1;
            }
        }
    }
    DistanceSummary {
        legitimate_mean: (ln > 0).then(|| ls / ln as f64),
        attacker_mean: (an > 0).then(|| as_ / an as f64),
        separated_rounds: sep,
        mixed_rounds: mixed,
    }
}
