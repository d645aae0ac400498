//! Closed-form detection thresholds and aggregation-bias bounds, plus a rough
//! empirical estimator for their constants.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{input, Result};
use crate::nn::{loss_and_grad, loss_and_grad_indexed, param_dist, ModelSpec, ParamVector};
use crate::rng::Stream;

/// Constants of the convergence analysis. Subscript 1 refers to legitimate
/// clients, 2 to attackers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct BoundParams {
    /// Smoothness constants.
    pub L1: f64,
    pub L2: f64,
    /// Gradient noise.
    pub sigma1: f64,
    pub sigma2: f64,
    /// Heterogeneity.
    pub eta1: f64,
    pub eta2: f64,
    /// Bound on the optimum's norm.
    pub B: f64,
    /// Communication rounds.
    pub R: f64,
    /// Local steps per round.
    pub K: f64,
    pub N: f64,
    pub E: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.L1, self.L2, self.sigma1, self.sigma2, self.eta1, self.eta2, self.B, self.R, self.K, self.N, self.E,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(input("bound parameters must be finite and nonnegative"));
        }
        if self.R < 1.0 || self.K < 1.0 || self.N < 1.0 {
            return Err(input("R, K and N must be at least 1"));
        }
        if !(self.B > 0.0) {
            return Err(input("B must be positive"));
        }
        if self.E > self.N {
            return Err(input("E cannot exceed N"));
        }
        Ok(())
    }

    fn t(&self) -> f64 {
        self.R / (self.B * self.B)
    }
}

/// Optimisation error `L/t + sigma/sqrt(n K t)`.
fn varsigma(l: f64, sigma: f64, n: f64, p: &BoundParams) -> f64 {
    let t = p.t();
    l / t + sigma / (n * p.K * t).sqrt()
}

/// Heterogeneity error `(L eta^2 B^4)^(1/3)/R^(2/3) + (L sigma^2 B^4)^(1/3)/(K^(1/3) R^(2/3))`.
fn nu(l: f64, eta: f64, sigma: f64, p: &BoundParams) -> f64 {
    let b4 = p.B.powi(4);
    let r23 = p.R.powf(2.0 / 3.0);
    (l * eta * eta * b4).cbrt() / r23 + (l * sigma * sigma * b4).cbrt() / (p.K.cbrt() * r23)
}

/// Smallest attacker noise level detectable with a pure server dataset:
/// `2 (varsigma + nu)` with `t = R / B^2`.
pub fn lemma2_pure_threshold(p: &BoundParams) -> Result<f64> {
    p.validate()?;
    let s = varsigma(p.L1, p.sigma1, p.N, p);
    let v = nu(p.L1, p.eta1, p.sigma1, p);
    Ok(2.0 * (s + v))
}

/// The impure threshold split into its parts.
///
/// Reading used: the per-group optimisation errors average with weights
/// `(N-E)/N` and `E/N` into `varsigma`, heterogeneities likewise into `eta`,
/// and the heterogeneity exponent in `nu_1` is a square as in the pure case.
/// A group with zero weight contributes nothing (its `varsigma` would divide
/// by zero).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpureTerms {
    pub varsigma1: f64,
    pub varsigma2: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub varsigma: f64,
    pub eta: f64,
    pub legitimate_mixture: f64,
    pub attacker_mixture: f64,
    pub total: f64,
}

pub fn lemma2_impure_terms(p: &BoundParams) -> Result<ImpureTerms> {
    p.validate()?;
    let n = p.N;
    let legit = n - p.E;
    let (w1, w2) = (legit / n, p.E / n);
    let varsigma1 = if legit > 0.0 { varsigma(p.L1, p.sigma1, legit, p) } else { 0.0 };
    let varsigma2 = if p.E > 0.0 { varsigma(p.L2, p.sigma2, p.E, p) } else { 0.0 };
    let nu1 = nu(p.L1, p.eta1, p.sigma1, p);
    let nu2 = nu(p.L2, p.eta2, p.sigma2, p);
    let vs = w1 * varsigma1 + w2 * varsigma2;
    let eta = w1 * p.eta1 + w2 * p.eta2;
    let legitimate_mixture = w1 * (p.eta1 + nu1);
    let attacker_mixture = w2 * (p.eta2 + nu2);
    Ok(ImpureTerms {
        varsigma1,
        varsigma2,
        nu1,
        nu2,
        varsigma: vs,
        eta,
        legitimate_mixture,
        attacker_mixture,
        total: vs + eta + legitimate_mixture + attacker_mixture,
    })
}

/// Smallest attacker noise level detectable when attackers also fed the server dataset.
pub fn lemma2_impure_threshold(p: &BoundParams) -> Result<f64> {
    Ok(lemma2_impure_terms(p)?.total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasScenario {
    /// Heterogeneous clients, no attackers: `2 N eta + sigma`.
    NoniidClean,
    /// Attackers contributed to the server data: `(N-E)(sigma1+eta1) + E(sigma2+eta2)`.
    Impure,
    /// Server data from legitimate clients only: `(N-E)(sigma1+eta1) + E eta2`.
    Pure,
}

impl std::str::FromStr for BiasScenario {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noniid_clean" => Ok(Self::NoniidClean),
            "impure" => Ok(Self::Impure),
            "pure" => Ok(Self::Pure),
            other => Err(input(format!("unknown bias scenario {other:?}"))),
        }
    }
}

/// Upper bound on the expected aggregation bias.
pub fn bias_bound(p: &BoundParams, scenario: BiasScenario) -> Result<f64> {
    p.validate()?;
    let legit = (p.N - p.E) * (p.sigma1 + p.eta1);
    Ok(match scenario {
        BiasScenario::NoniidClean => 2.0 * p.N * p.eta1 + p.sigma1,
        BiasScenario::Impure => legit + p.E * (p.sigma2 + p.eta2),
        BiasScenario::Pure => legit + p.E * p.eta2,
    })
}

/// Noise, heterogeneity and smoothness of one group of clients.
#[derive(Debug, Clone, Copy, PartialEq)]
struct GroupEstimate {
    l: f64,
    sigma: f64,
    eta: f64,
}

fn estimate_group(
    spec: &ModelSpec,
    w: &ParamVector,
    clients: &[&Dataset],
    batch_size: usize,
    probes: usize,
    rng: &mut Stream,
) -> Result<GroupEstimate> {
    use rand::seq::index;
    use rand_distr::{Distribution, StandardNormal};

    let mut full = Vec::with_capacity(clients.len());
    let mut sigma: f64 = 0.0;
    let mut l: f64 = 0.0;
    for data in clients {
        let (_, g) = loss_and_grad(spec, w, data)?;
        for _ in 0..probes {
            let k = batch_size.clamp(1, data.len());
            let idx = index::sample(rng, data.len(), k).into_vec();
            let (_, gb) = loss_and_grad_indexed(spec, w, data, &idx)?;
            sigma = sigma.max(param_dist(&gb, &g)?);
            let step: Vec<f64> = (0..w.len())
                .map(|_| 1e-3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect();
            let mut w2 = w.clone();
            w2.axpy(1.0, &ParamVector::new(step))?;
            let (_, g2) = loss_and_grad(spec, &w2, data)?;
            l = l.max(param_dist(&g2, &g)? / param_dist(&w2, w)?);
        }
        full.push(g);
    }
    let mut mean = ParamVector::zeros(w.len());
    for g in &full {
        mean.axpy(1.0 / full.len() as f64, g)?;
    }
    let mut eta: f64 = 0.0;
    for g in &full {
        eta = eta.max(param_dist(g, &mean)?);
    }
    Ok(GroupEstimate { l, sigma, eta })
}

/// Rough plug-in values for [`BoundParams`] at model `w`.
///
/// Smoothness comes from secants along small random perturbations, noise from
/// the largest minibatch-versus-full gradient gap, heterogeneity from the
/// largest gap between a client's gradient and the group mean, and `B` from
/// `||w||`. These are heuristics, not certified constants.
#[allow(clippy::too_many_arguments)]
pub fn estimate_bound_params(
    spec: &ModelSpec,
    w: &ParamVector,
    legitimate: &[&Dataset],
    attackers: &[&Dataset],
    batch_size: usize,
    rounds: usize,
    local_steps: usize,
    rng: &mut Stream,
) -> Result<BoundParams> {
    if legitimate.is_empty() {
        return Err(input("estimation needs at least one legitimate client"));
    }
    const PROBES: usize = 3;
    let g1 = estimate_group(spec, w, legitimate, batch_size, PROBES, rng)?;
    let g2 = if attackers.is_empty() {
        GroupEstimate { l: 0.0, sigma: 0.0, eta: 0.0 }
    } else {
        estimate_group(spec, w, attackers, batch_size, PROBES, rng)?
    };
    let norm = param_dist(w, &ParamVector::zeros(w.len()))?;
    let p = BoundParams {
        L1: g1.l,
        L2: g2.l,
        sigma1: g1.sigma,
        sigma2: g2.sigma,
        eta1: g1.eta,
        eta2: g2.eta,
        B: norm.max(f64::MIN_POSITIVE),
        R: rounds.max(1) as f64,
        K: local_steps.max(1) as f64,
        N: (legitimate.len() + attackers.len()) as f64,
        E: attackers.len() as f64,
    };
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> BoundParams {
        BoundParams {
            L1: 1.0,
            L2: 1.0,
            sigma1: 1.0,
            sigma2: 1.0,
            eta1: 1.0,
            eta2: 1.0,
            B: 1.0,
            R: 4.0,
            K: 1.0,
            N: 1.0,
            E: 0.0,
        }
    }

    #[test]
    fn pure_threshold_scalar_example() {
        let oracle = 2.0 * (0.25 + 0.5 + 2.0 * 4f64.powf(-2.0 / 3.0));
        let got = lemma2_pure_threshold(&unit()).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 3.0874).abs() < 1e-4);
    }

    #[test]
    fn pure_threshold_noise_free() {
        let p = BoundParams { sigma1: 0.0, eta1: 0.0, L1: 3.0, B: 2.0, R: 10.0, ..unit() };
        let got = lemma2_pure_threshold(&p).unwrap();
        assert!((got - 2.0 * 3.0 * 4.0 / 10.0).abs() < 1e-12);
        let doubled = lemma2_pure_threshold(&BoundParams { R: 20.0, ..p }).unwrap();
        assert!(doubled < got);
    }

    #[test]
    fn zero_counts_are_rejected() {
        assert!(lemma2_pure_threshold(&BoundParams { R: 0.0, ..unit() }).is_err());
        assert!(lemma2_pure_threshold(&BoundParams { B: 0.0, ..unit() }).is_err());
        assert!(lemma2_pure_threshold(&BoundParams { K: 0.0, ..unit() }).is_err());
        assert!(lemma2_pure_threshold(&BoundParams { N: 0.0, ..unit() }).is_err());
        assert!(bias_bound(&BoundParams { E: 2.0, ..unit() }, BiasScenario::Pure).is_err());
    }

    #[test]
    fn impure_threshold_without_attackers_is_legitimate_only() {
        let p = BoundParams { N: 10.0, E: 0.0, sigma2: 7.0, eta2: 7.0, L2: 7.0, ..unit() };
        let t = lemma2_impure_terms(&p).unwrap();
        assert_eq!(t.attacker_mixture, 0.0);
        assert_eq!(t.varsigma2, 0.0);
        let expect = t.varsigma1 + p.eta1 + p.eta1 + t.nu1;
        assert!((t.total - expect).abs() < 1e-12);
    }

    #[test]
    fn impure_threshold_all_attackers() {
        let p = BoundParams { N: 4.0, E: 4.0, ..unit() };
        let t = lemma2_impure_terms(&p).unwrap();
        assert_eq!(t.legitimate_mixture, 0.0);
        assert_eq!(t.varsigma1, 0.0);
        assert!(t.attacker_mixture > 0.0);
    }

    #[test]
    fn impure_threshold_grows_with_attackers() {
        let base = BoundParams {
            N: 10.0,
            sigma1: 0.1,
            eta1: 0.1,
            sigma2: 1.0,
            eta2: 1.0,
            R: 100.0,
            K: 5.0,
            ..unit()
        };
        let vals: Vec<f64> = (2..=8)
            .map(|e| lemma2_impure_threshold(&BoundParams { E: e as f64, ..base }).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]), "{vals:?}");
    }

    #[test]
    fn bias_bound_examples() {
        let p = BoundParams { N: 10.0, E: 3.0, sigma1: 0.1, eta1: 0.1, sigma2: 1.0, eta2: 1.0, ..unit() };
        assert!((bias_bound(&p, BiasScenario::Impure).unwrap() - 7.4).abs() < 1e-12);
        let gap = bias_bound(&p, BiasScenario::Impure).unwrap() - bias_bound(&p, BiasScenario::Pure).unwrap();
        assert!((gap - 3.0).abs() < 1e-12);
        let clean = BoundParams { E: 0.0, ..p };
        assert_eq!(bias_bound(&clean, BiasScenario::Impure).unwrap(), bias_bound(&clean, BiasScenario::Pure).unwrap());
        assert!((bias_bound(&clean, BiasScenario::NoniidClean).unwrap() - 2.1).abs() < 1e-12);
        assert!("sideways".parse::<BiasScenario>().is_err());
    }
}
