//! Simplex weights over the round's cohort and the weighted model average.
//!
//! All weightings compare each client model `w_n` with the server's reference
//! model `w0`:
//!
//! - `fedavg`: uniform weights.
//! - `softmax`: `rho_n ∝ exp(<w0, w_n>)`.
//! - `opt_exact`: the exact minimiser of `sum_n rho_n ||w_n - w0||` over the
//!   simplex. The objective is linear, so the optimum is the vertex (or face)
//!   of the nearest models.
//! - `opt_entropic`: the same objective with an entropy term, which gives the
//!   softmin `rho_n ∝ exp(-||w_n - w0|| / tau)`.
//! - `utility`: the exact solution after passing distances through a
//!   monotone utility (identity, `ln`, `exp`).

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::nn::{param_dist, param_dot, ParamVector};

/// Tolerance of the simplex invariant on constructed weights.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Looser tolerance accepted by [`aggregate`].
pub const AGGREGATE_TOL: f64 = 1e-6;
/// Floor applied to costs before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;
/// Default entropic temperature as a fraction of the nearest client's distance.
pub const DEFAULT_TAU_FRACTION: f64 = 0.1;

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        check_simplex(&rho, SIMPLEX_TOL)?;
        Ok(Self(rho))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of clients with exactly zero weight.
    pub fn zero_count(&self) -> usize {
        self.0.iter().filter(|&&r| r == 0.0).count()
    }
}

pub(crate) fn check_simplex(rho: &[f64], tol: f64) -> Result<()> {
    if rho.is_empty() {
        return Err(Error::Contract("empty weight vector".into()));
    }
    if let Some(r) = rho.iter().find(|r| !(-tol..=1.0 + tol).contains(*r)) {
        return Err(Error::Contract(format!("weight {r} outside [0, 1]")));
    }
    let sum: f64 = rho.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::Contract(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Utility {
    Linear,
    Log,
    Exp,
}

impl Utility {
    fn apply(self, d: f64) -> f64 {
        match self {
            Utility::Linear => d,
            Utility::Log => d.max(LOG_FLOOR).ln(),
            Utility::Exp => d.exp(),
        }
    }
}

fn default_tie_tol() -> f64 {
    1e-12
}

/// Which weighting the server applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AggregatorKind {
    Fedavg,
    Softmax,
    OptExact {
        #[serde(default = "default_tie_tol")]
        tie_tol: f64,
    },
    OptEntropic {
        /// Fixed temperature; when absent, `0.1 x` the smallest positive distance of the round.
        #[serde(default)]
        tau: Option<f64>,
    },
    Utility {
        utility: Utility,
        #[serde(default = "default_tie_tol")]
        tie_tol: f64,
    },
}

impl AggregatorKind {
    pub fn opt_exact() -> Self {
        AggregatorKind::OptExact {
            tie_tol: default_tie_tol(),
        }
    }

    pub fn opt_entropic() -> Self {
        AggregatorKind::OptEntropic { tau: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AggregatorKind::Fedavg => "fedavg",
            AggregatorKind::Softmax => "softmax",
            AggregatorKind::OptExact { .. } => "opt_exact",
            AggregatorKind::OptEntropic { .. } => "opt_entropic",
            AggregatorKind::Utility { utility: Utility::Linear, .. } => "utility_linear",
            AggregatorKind::Utility { utility: Utility::Log, .. } => "utility_log",
            AggregatorKind::Utility { utility: Utility::Exp, .. } => "utility_exp",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AggregatorKind::OptExact { tie_tol } | AggregatorKind::Utility { tie_tol, .. } => {
                if !(tie_tol >= 0.0) {
                    return Err(input("tie_tol must be non-negative"));
                }
            }
            AggregatorKind::OptEntropic { tau: Some(tau) } => {
                if !(tau > 0.0 && tau.is_finite()) {
                    return Err(input("tau must be positive"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Weights produced for one round, plus the temperature when one was used.
#[derive(Debug, Clone, PartialEq)]
pub struct Weighting {
    pub rho: SimplexWeights,
    pub distances: Vec<f64>,
    pub tau: Option<f64>,
}

pub fn weights_uniform(n: usize) -> Result<SimplexWeights> {
    if n == 0 {
        return Err(input("cannot weight an empty cohort"));
    }
    Ok(SimplexWeights(vec![1.0 / n as f64; n]))
}

fn check_models(w0: &ParamVector, client_ws: &[ParamVector]) -> Result<()> {
    if client_ws.is_empty() {
        return Err(input("no client models"));
    }
    if let Some(w) = client_ws.iter().find(|w| w.len() != w0.len()) {
        return Err(input(format!(
            "client model has {} parameters, server model {}",
            w.len(),
            w0.len()
        )));
    }
    Ok(())
}

/// `||w_n - w0||` for every client.
pub fn distances(w0: &ParamVector, client_ws: &[ParamVector]) -> Result<Vec<f64>> {
    check_models(w0, client_ws)?;
    client_ws.iter().map(|w| param_dist(w, w0)).collect()
}

/// Normalised `exp(score)` with the maximum subtracted first.
pub fn softmax_scores(scores: &[f64]) -> Result<SimplexWeights> {
    if scores.is_empty() {
        return Err(input("no scores"));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    SimplexWeights::new(exps.into_iter().map(|e| e / total).collect())
}

pub fn weights_softmax(w0: &ParamVector, client_ws: &[ParamVector]) -> Result<SimplexWeights> {
    check_models(w0, client_ws)?;
    let dots = client_ws
        .iter()
        .map(|w| param_dot(w0, w))
        .collect::<Result<Vec<_>>>()?;
    softmax_scores(&dots)
}

/// Equal mass on every cost within `tie_tol` of the minimum.
pub fn exact_from_costs(costs: &[f64], tie_tol: f64) -> Result<SimplexWeights> {
    if costs.is_empty() {
        return Err(input("no costs"));
    }
    if costs.iter().any(|c| c.is_nan()) {
        return Err(input("NaN cost"));
    }
    let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let support: Vec<bool> = costs.iter().map(|&c| c <= min + tie_tol).collect();
    let k = support.iter().filter(|&&s| s).count() as f64;
    SimplexWeights::new(support.iter().map(|&s| if s { 1.0 / k } else { 0.0 }).collect())
}

pub fn weights_opt_exact(w0: &ParamVector, client_ws: &[ParamVector], tie_tol: f64) -> Result<SimplexWeights> {
    if !(tie_tol >= 0.0) {
        return Err(input("tie_tol must be non-negative"));
    }
    exact_from_costs(&distances(w0, client_ws)?, tie_tol)
}

/// Softmin of distances at temperature `tau`.
pub fn entropic_from_distances(dist: &[f64], tau: f64) -> Result<SimplexWeights> {
    if !(tau > 0.0) {
        return Err(input("tau must be positive"));
    }
    let scores: Vec<f64> = dist.iter().map(|d| -d / tau).collect();
    softmax_scores(&scores)
}

/// Temperature used when none is configured.
pub fn default_tau(dist: &[f64]) -> f64 {
    let nearest = dist
        .iter()
        .cloned()
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    if nearest.is_finite() {
        DEFAULT_TAU_FRACTION * nearest
    } else {
        // every model coincides with w0
        1.0
    }
}

pub fn weights_opt_entropic(w0: &ParamVector, client_ws: &[ParamVector], tau: f64) -> Result<SimplexWeights> {
    entropic_from_distances(&distances(w0, client_ws)?, tau)
}

pub fn weights_utility(
    utility: Utility,
    w0: &ParamVector,
    client_ws: &[ParamVector],
    tie_tol: f64,
) -> Result<SimplexWeights> {
    let costs: Vec<f64> = distances(w0, client_ws)?
        .into_iter()
        .map(|d| utility.apply(d))
        .collect();
    exact_from_costs(&costs, tie_tol)
}

/// Dispatches on `kind`.
pub fn compute_weights(kind: &AggregatorKind, w0: &ParamVector, client_ws: &[ParamVector]) -> Result<Weighting> {
    let dist = distances(w0, client_ws)?;
    let (rho, tau) = match *kind {
        AggregatorKind::Fedavg => (weights_uniform(client_ws.len())?, None),
        AggregatorKind::Softmax => (weights_softmax(w0, client_ws)?, None),
        AggregatorKind::OptExact { tie_tol } => (exact_from_costs(&dist, tie_tol)?, None),
        AggregatorKind::OptEntropic { tau } => {
            let tau = tau.unwrap_or_else(|| default_tau(&dist));
            (entropic_from_distances(&dist, tau)?, Some(tau))
        }
        AggregatorKind::Utility { utility, tie_tol } => {
            let costs: Vec<f64> = dist.iter().map(|&d| utility.apply(d)).collect();
            (exact_from_costs(&costs, tie_tol)?, None)
        }
    };
    Ok(Weighting { rho, distances: dist, tau })
}

/// `sum_n rho_n w_n`.
pub fn aggregate(rho: &SimplexWeights, client_ws: &[ParamVector]) -> Result<ParamVector> {
    aggregate_raw(rho.as_slice(), client_ws)
}

/// [`aggregate`] on an unchecked slice; rejects weights off the simplex by more than 1e-6.
pub fn aggregate_raw(rho: &[f64], client_ws: &[ParamVector]) -> Result<ParamVector> {
    if rho.len() != client_ws.len() {
        return Err(input(format!("{} weights for {} models", rho.len(), client_ws.len())));
    }
    check_simplex(rho, AGGREGATE_TOL)?;
    let len = client_ws[0].len();
    if client_ws.iter().any(|w| w.len() != len) {
        return Err(input("client models differ in length"));
    }
    let mut out = vec![0.0; len];
    for (&r, w) in rho.iter().zip(client_ws) {
        if r == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(w.as_slice()) {
            *o += r * v;
        }
    }
    Ok(ParamVector::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec())
    }

    /// Models at the given distances from the origin along the first axis.
    fn at_distances(d: &[f64]) -> (ParamVector, Vec<ParamVector>) {
        (pv(&[0.0, 0.0]), d.iter().map(|&x| pv(&[x, 0.0])).collect())
    }

    #[test]
    fn uniform() {
        assert_eq!(weights_uniform(4).unwrap().as_slice(), &[0.25; 4]);
        assert_eq!(weights_uniform(1).unwrap().as_slice(), &[1.0]);
        let s: f64 = weights_uniform(30).unwrap().as_slice().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(weights_uniform(0).is_err());
    }

    #[test]
    fn softmax_examples() {
        let w0 = pv(&[1.0, 0.0]);
        let r = weights_softmax(&w0, &[pv(&[1.0, 0.0]), pv(&[0.0, 1.0])]).unwrap();
        let e = std::f64::consts::E;
        assert!((r.as_slice()[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((r.as_slice()[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((r.as_slice()[0] - 0.73106).abs() < 1e-5);

        let same = vec![pv(&[0.3, 0.2]); 3];
        for &x in weights_softmax(&w0, &same).unwrap().as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(weights_softmax(&w0, &[pv(&[5.0, 5.0])]).unwrap().as_slice(), &[1.0]);
        assert!(weights_softmax(&w0, &[pv(&[1.0])]).is_err());
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let scores = [0.3, -1.2, 4.0, 2.2];
        let a = softmax_scores(&scores).unwrap();
        let shifted: Vec<f64> = scores.iter().map(|s| s + 123.456).collect();
        let b = softmax_scores(&shifted).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        // huge scores do not overflow
        assert!(softmax_scores(&[1e6, 1e6 - 1.0]).is_ok());
    }

    #[test]
    fn exact_examples() {
        let (w0, ws) = at_distances(&[5.0, 1.0, 7.0]);
        assert_eq!(weights_opt_exact(&w0, &ws, 1e-12).unwrap().as_slice(), &[0.0, 1.0, 0.0]);
        let (w0, ws) = at_distances(&[2.0, 2.0, 9.0]);
        assert_eq!(weights_opt_exact(&w0, &ws, 1e-12).unwrap().as_slice(), &[0.5, 0.5, 0.0]);
        assert!(weights_opt_exact(&w0, &ws, -1.0).is_err());
    }

    #[test]
    fn entropic_examples() {
        let (w0, ws) = at_distances(&[3.0, 3.0, 3.0]);
        for &x in weights_opt_entropic(&w0, &ws, 0.5).unwrap().as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let (w0, ws) = at_distances(&[0.0, 1.0]);
        let r = weights_opt_entropic(&w0, &ws, 1.0).unwrap();
        let em1 = (-1.0f64).exp();
        assert!((r.as_slice()[0] - 1.0 / (1.0 + em1)).abs() < 1e-12);
        assert!((r.as_slice()[1] - em1 / (1.0 + em1)).abs() < 1e-12);

        let (w0, ws) = at_distances(&[0.1, 2.0, 5.0, 9.0]);
        for &x in weights_opt_entropic(&w0, &ws, 1e9).unwrap().as_slice() {
            assert!((x - 0.25).abs() < 1e-6);
        }
        assert!(weights_opt_entropic(&w0, &ws, 0.0).is_err());
    }

    #[test]
    fn default_tau_scales_with_nearest_model() {
        assert!((default_tau(&[0.0, 2.0, 5.0]) - 0.2).abs() < 1e-15);
        assert_eq!(default_tau(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn utility_examples() {
        let (w0, ws) = at_distances(&[3.0, 1.5, 1.5, 4.0]);
        assert_eq!(
            weights_utility(Utility::Linear, &w0, &ws, 1e-12).unwrap(),
            weights_opt_exact(&w0, &ws, 1e-12).unwrap()
        );
        let (w0, ws) = at_distances(&[1.0, 2.0]);
        assert_eq!(weights_utility(Utility::Exp, &w0, &ws, 1e-12).unwrap().as_slice(), &[1.0, 0.0]);
        let (w0, ws) = at_distances(&[0.5, 0.6, 0.5]);
        assert_eq!(weights_utility(Utility::Log, &w0, &ws, 1e-12).unwrap().as_slice(), &[0.5, 0.0, 0.5]);
        // zero distance is floored rather than sent to -inf
        let (w0, ws) = at_distances(&[0.0, 0.0, 1.0]);
        assert_eq!(weights_utility(Utility::Log, &w0, &ws, 0.0).unwrap().as_slice(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn aggregate_examples() {
        let ws = vec![pv(&[1.0, 3.0]), pv(&[3.0, 1.0])];
        assert_eq!(aggregate(&weights_uniform(2).unwrap(), &ws).unwrap().as_slice(), &[2.0, 2.0]);
        let one_hot = SimplexWeights::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(aggregate(&one_hot, &ws).unwrap(), ws[1]);
        let rho = SimplexWeights::new(vec![0.25, 0.75]).unwrap();
        let out = aggregate(&rho, &[pv(&[0.0, 0.0]), pv(&[4.0, 8.0])]).unwrap();
        assert_eq!(out.as_slice(), &[3.0, 6.0]);
        assert!(matches!(aggregate_raw(&[0.5, 0.6], &ws), Err(Error::Contract(_))));
        assert!(matches!(aggregate_raw(&[1.5, -0.5], &ws), Err(Error::Contract(_))));
        assert!(aggregate_raw(&[1.0], &ws).is_err());
    }

    #[test]
    fn dispatch_records_tau() {
        let (w0, ws) = at_distances(&[1.0, 2.0]);
        let w = compute_weights(&AggregatorKind::opt_entropic(), &w0, &ws).unwrap();
        assert!((w.tau.unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(w.distances, vec![1.0, 2.0]);
        let w = compute_weights(&AggregatorKind::Fedavg, &w0, &ws).unwrap();
        assert!(w.tau.is_none());
    }

    #[test]
    fn aggregator_config_parses() {
        let k: AggregatorKind = serde_json::from_str(r#"{"kind":"opt_exact"}"#).unwrap();
        assert_eq!(k, AggregatorKind::opt_exact());
        let k: AggregatorKind = serde_json::from_str(r#"{"kind":"utility","utility":"log"}"#).unwrap();
        assert_eq!(k.name(), "utility_log");
        assert!(serde_json::from_str::<AggregatorKind>(r#"{"kind":"krum"}"#).is_err());
    }
}
