//! The server's reference model `w0` and the curation of its dataset.
//!
//! Three curation mechanisms decide which shared samples the server keeps:
//!
//! - **online**: start from trusted clients, then try untrusted clients one at
//!   a time and reject any client whose data moves `w0` by at least `d0`;
//! - **stochastic**: take random minibatches from the untrusted pool and drop
//!   any minibatch whose update moves `w0` by at least `d0`;
//! - **sorted**: keep everything but train on untrusted data first and on
//!   trusted data last.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{config, input, Result};
use crate::nn::{param_dist, train_local, train_local_esgd, train_schedule, Elastic, ModelSpec, ParamVector, SgdParams};
use crate::rng::Stream;

/// Multiple of the median warm-up movement used as the default `d0`.
pub const D0_CALIBRATION_FACTOR: f64 = 3.0;
/// Number of warm-up updates observed when calibrating `d0`.
pub const D0_WARMUP_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curation {
    None,
    Online,
    Stochastic,
    Sorted,
}

/// A fixed training order over `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub data: Dataset,
    pub batches: Vec<Vec<usize>>,
    /// The last `trusted_batches` batches come from trusted clients.
    pub trusted_batches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub w0: ParamVector,
    pub curated: Dataset,
    /// One flag per client; set when curation rejected that client.
    pub outlier_labels: Vec<bool>,
    pub d0: Option<f64>,
    /// When present, server training follows this order instead of shuffling.
    pub schedule: Option<Vec<Vec<usize>>>,
    /// Elastic anchor of the server when it runs elastic updates.
    pub anchor: Option<ParamVector>,
}

impl ServerState {
    pub fn new(w0: ParamVector, curated: Dataset, population: usize) -> Self {
        Self {
            w0,
            curated,
            outlier_labels: vec![false; population],
            d0: None,
            schedule: None,
            anchor: None,
        }
    }
}

/// Trains `w0` on the curated data, warm-started from the current `w0`.
pub fn train_server(state: &ServerState, spec: &ModelSpec, sgd: SgdParams, rng: &mut Stream) -> Result<ServerState> {
    if state.curated.is_empty() {
        return Err(config("the server dataset is empty"));
    }
    let mut next = state.clone();
    if sgd.epochs == 0 {
        return Ok(next);
    }
    next.w0 = match &state.schedule {
        Some(batches) => {
            let mut w = state.w0.clone();
            for _ in 0..sgd.epochs {
                w = train_schedule(spec, &w, &state.curated, batches, sgd.lr)?;
            }
            w
        }
        None => train_local(spec, &state.w0, &state.curated, sgd, rng)?,
    };
    Ok(next)
}

/// Elastic variant of [`train_server`]; `w_bar` is the last broadcast model.
pub fn train_server_elastic(
    state: &ServerState,
    spec: &ModelSpec,
    sgd: SgdParams,
    elastic: Elastic,
    w_bar: &ParamVector,
    rng: &mut Stream,
) -> Result<ServerState> {
    if state.curated.is_empty() {
        return Err(config("the server dataset is empty"));
    }
    let mut next = state.clone();
    let anchor = state.anchor.clone().unwrap_or_else(|| w_bar.clone());
    let (w, a) = train_local_esgd(spec, &state.w0, &anchor, w_bar, &state.curated, sgd, elastic, rng)?;
    next.w0 = w;
    next.anchor = Some(a);
    Ok(next)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Calibration outcome: the threshold and the warm-up movements it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct D0Calibration {
    pub d0: f64,
    pub warmup_deltas: Vec<f64>,
}

/// `d0` for online curation: warm-up steps are whole epochs on trusted data,
/// the same unit the online test measures.
pub fn calibrate_d0_online(
    spec: &ModelSpec,
    w0: &ParamVector,
    trusted: &Dataset,
    sgd: SgdParams,
    rng: &mut Stream,
) -> Result<D0Calibration> {
    let one_epoch = SgdParams { epochs: 1, ..sgd };
    let mut w = w0.clone();
    let mut deltas = Vec::with_capacity(D0_WARMUP_STEPS);
    for _ in 0..D0_WARMUP_STEPS {
        let next = train_local(spec, &w, trusted, one_epoch, rng)?;
        deltas.push(param_dist(&next, &w)?);
        w = next;
    }
    Ok(calibration(deltas))
}

/// `d0` for stochastic curation: warm-up steps are single minibatch updates.
pub fn calibrate_d0_stochastic(
    spec: &ModelSpec,
    w0: &ParamVector,
    trusted: &Dataset,
    sample_size: usize,
    lr: f64,
    rng: &mut Stream,
) -> Result<D0Calibration> {
    if trusted.is_empty() {
        return Err(config("calibration needs trusted data"));
    }
    let mut w = w0.clone();
    let mut deltas = Vec::with_capacity(D0_WARMUP_STEPS);
    for _ in 0..D0_WARMUP_STEPS {
        let k = sample_size.clamp(1, trusted.len());
        let batch = index::sample(rng, trusted.len(), k).into_vec();
        let next = train_schedule(spec, &w, trusted, &[batch], lr)?;
        deltas.push(param_dist(&next, &w)?);
        w = next;
    }
    Ok(calibration(deltas))
}

fn calibration(mut deltas: Vec<f64>) -> D0Calibration {
    let warmup_deltas = deltas.clone();
    let d0 = D0_CALIBRATION_FACTOR * median(&mut deltas);
    D0Calibration { d0, warmup_deltas }
}

/// Online curation. `untrusted` lists `(client id, shared samples)` in stream order.
pub fn curate_online(
    state: &ServerState,
    spec: &ModelSpec,
    trusted: &Dataset,
    untrusted: &[(usize, Dataset)],
    d0: f64,
    sgd: SgdParams,
    rng: &mut Stream,
) -> Result<ServerState> {
    if trusted.is_empty() {
        return Err(config("online curation needs trusted data"));
    }
    if !(d0 > 0.0) {
        return Err(input("d0 must be positive"));
    }
    let mut current = ServerState {
        curated: trusted.clone(),
        d0: Some(d0),
        ..state.clone()
    };
    current = train_server(&current, spec, sgd, rng)?;
    let one_epoch = SgdParams { epochs: 1, ..sgd };
    for (client, data) in untrusted {
        if data.is_empty() {
            continue;
        }
        let mut tentative = current.curated.clone();
        tentative.extend(data)?;
        let w = train_local(spec, &current.w0, &tentative, one_epoch, rng)?;
        if param_dist(&w, &current.w0)? >= d0 {
            if let Some(flag) = current.outlier_labels.get_mut(*client) {
                *flag = true;
            }
        } else {
            current.curated = tentative;
            current.w0 = w;
        }
    }
    Ok(current)
}

/// Counters from a stochastic curation pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StochasticReport {
    pub accepted: usize,
    pub rejected: usize,
    pub removed_samples: usize,
}

/// Stochastic curation over `pool`. Rejected minibatches leave the pool for good.
/// The curated set becomes the state's current data plus whatever remains in the pool.
#[allow(clippy::too_many_arguments)]
pub fn curate_stochastic(
    state: &ServerState,
    spec: &ModelSpec,
    pool: &Dataset,
    d0: f64,
    iters: usize,
    sample_size: usize,
    lr: f64,
    rng: &mut Stream,
) -> Result<(ServerState, StochasticReport)> {
    if pool.is_empty() {
        return Err(config("stochastic curation needs a nonempty pool"));
    }
    if iters == 0 || sample_size == 0 {
        return Err(input("iterations and sample size must be at least 1"));
    }
    if !(d0 > 0.0) {
        return Err(input("d0 must be positive"));
    }
    let mut active: Vec<usize> = (0..pool.len()).collect();
    let mut w0 = state.w0.clone();
    let mut report = StochasticReport { accepted: 0, rejected: 0, removed_samples: 0 };
    for _ in 0..iters {
        if active.is_empty() {
            break;
        }
        let k = sample_size.min(active.len());
        let mut picked = index::sample(rng, active.len(), k).into_vec();
        let batch: Vec<usize> = picked.iter().map(|&p| active[p]).collect();
        let next = train_schedule(spec, &w0, pool, &[batch], lr)?;
        if param_dist(&next, &w0)? < d0 {
            w0 = next;
            report.accepted += 1;
        } else {
            report.rejected += 1;
            report.removed_samples += k;
            picked.sort_unstable_by(|a, b| b.cmp(a));
            for p in picked {
                active.swap_remove(p);
            }
        }
    }
    active.sort_unstable();
    let mut curated = state.curated.clone();
    curated.extend(&pool.subset(&active))?;
    Ok((
        ServerState {
            w0,
            curated,
            d0: Some(d0),
            ..state.clone()
        },
        report,
    ))
}

/// Untrusted batches first, trusted batches last.
pub fn order_sorted(untrusted: &Dataset, trusted: &Dataset, batch_size: usize) -> Result<Schedule> {
    if untrusted.is_empty() && trusted.is_empty() {
        return Err(config("both untrusted and trusted data are empty"));
    }
    if batch_size == 0 {
        return Err(input("batch size must be at least 1"));
    }
    let dim = if untrusted.is_empty() { trusted.dim() } else { untrusted.dim() };
    let classes = untrusted.class_count().max(trusted.class_count());
    let mut data = Dataset::empty(dim, classes);
    data.extend(untrusted)?;
    data.extend(trusted)?;
    let u = untrusted.len();
    let mut batches: Vec<Vec<usize>> = (0..u).collect::<Vec<_>>().chunks(batch_size).map(<[usize]>::to_vec).collect();
    let trusted_batches: Vec<Vec<usize>> = (u..data.len())
        .collect::<Vec<_>>()
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect();
    let n_trusted = trusted_batches.len();
    batches.extend(trusted_batches);
    Ok(Schedule { data, batches, trusted_batches: n_trusted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticParams};
    use crate::nn::{init_model, loss, Activation};
    use crate::rng::stream_from;

    fn setup() -> (ModelSpec, Dataset) {
        let d = gen_synthetic(SyntheticParams { class_count: 3, dim: 6, per_class: 30, spread: 0.2, seed: 4 }).unwrap();
        (ModelSpec::dense(vec![6, 8, 3], Activation::Relu).unwrap(), d)
    }

    #[test]
    fn zero_epochs_and_empty_data() {
        let (spec, d) = setup();
        let s = ServerState::new(init_model(&spec, 1), d.clone(), 3);
        let sgd = SgdParams { epochs: 0, lr: 0.1, batch_size: 10 };
        assert_eq!(train_server(&s, &spec, sgd, &mut stream_from(0)).unwrap(), s);
        let empty = ServerState::new(init_model(&spec, 1), Dataset::empty(6, 3), 3);
        assert!(train_server(&empty, &spec, sgd, &mut stream_from(0)).is_err());
    }

    #[test]
    fn server_training_reduces_loss_deterministically() {
        let (spec, d) = setup();
        let s = ServerState::new(init_model(&spec, 1), d.clone(), 3);
        let sgd = SgdParams { epochs: 5, lr: 0.1, batch_size: 10 };
        let a = train_server(&s, &spec, sgd, &mut stream_from(2)).unwrap();
        let b = train_server(&s, &spec, sgd, &mut stream_from(2)).unwrap();
        assert_eq!(a, b);
        assert!(loss(&spec, &a.w0, &d).unwrap() < loss(&spec, &s.w0, &d).unwrap());
    }

    #[test]
    fn online_thresholds() {
        let (spec, d) = setup();
        let trusted = d.subset(&(0..30).collect::<Vec<_>>());
        let clients: Vec<(usize, Dataset)> = (0..3).map(|c| (c, d.subset(&(30 + 20 * c..50 + 20 * c).collect::<Vec<_>>()))).collect();
        let s = ServerState::new(init_model(&spec, 1), Dataset::empty(6, 3), 3);
        let sgd = SgdParams { epochs: 2, lr: 0.1, batch_size: 10 };
        let open = curate_online(&s, &spec, &trusted, &clients, 1e18, sgd, &mut stream_from(1)).unwrap();
        assert!(open.outlier_labels.iter().all(|f| !f));
        assert_eq!(open.curated.len(), 90);
        let closed = curate_online(&s, &spec, &trusted, &clients, 1e-18, sgd, &mut stream_from(1)).unwrap();
        assert!(closed.outlier_labels.iter().all(|&f| f));
        assert_eq!(closed.curated, trusted);

        // no untrusted clients == plain server training on trusted data
        let none = curate_online(&s, &spec, &trusted, &[], 1.0, sgd, &mut stream_from(5)).unwrap();
        let base = ServerState { curated: trusted.clone(), ..s.clone() };
        let direct = train_server(&base, &spec, sgd, &mut stream_from(5)).unwrap();
        assert_eq!(none.w0, direct.w0);
    }

    #[test]
    fn stochastic_removal_is_permanent() {
        let (spec, d) = setup();
        let s = ServerState::new(init_model(&spec, 1), Dataset::empty(6, 3), 3);
        let (all, rep) = curate_stochastic(&s, &spec, &d, 1e18, 20, 5, 0.1, &mut stream_from(3)).unwrap();
        assert_eq!(rep.accepted, 20);
        assert_eq!(all.curated.len(), d.len());
        let (none, rep) = curate_stochastic(&s, &spec, &d, 1e-18, 100, 5, 0.1, &mut stream_from(3)).unwrap();
        assert_eq!(rep.rejected, 18);
        assert_eq!(rep.removed_samples, 90);
        assert!(none.curated.is_empty());
        assert_eq!(none.w0, s.w0);
    }

    #[test]
    fn sorted_schedule_layout() {
        let (_, d) = setup();
        let u = d.subset(&(0..50).collect::<Vec<_>>());
        let t = d.subset(&(50..75).collect::<Vec<_>>());
        let s = order_sorted(&u, &t, 5).unwrap();
        assert_eq!(s.batches.len(), 15);
        assert_eq!(s.trusted_batches, 5);
        assert!(s.batches[10..].iter().flatten().all(|&i| i >= 50));
        let only_t = order_sorted(&Dataset::empty(6, 3), &t, 5).unwrap();
        assert_eq!(only_t.data, t);
        assert!(order_sorted(&Dataset::empty(6, 3), &Dataset::empty(6, 3), 5).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
