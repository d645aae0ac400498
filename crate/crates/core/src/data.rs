//! Datasets, client partitioning and the server's shared data.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attack::{pixel_shuffle_sample, Role};
use crate::error::{config, input, Result};
use crate::rng::{stream_from, Stream};

/// Labeled samples with features in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if dim == 0 || class_count == 0 {
            return Err(input("dimension and class count must be positive"));
        }
        if features.len() != dim * labels.len() {
            return Err(input(format!(
                "{} feature values do not form {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= class_count) {
            return Err(input(format!("label {y} outside [0, {class_count})")));
        }
        if features.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(input("features must be finite and lie in [0, 1]"));
        }
        Ok(Self {
            features,
            dim,
            labels,
            class_count,
        })
    }

    /// An empty dataset with the given shape, used as an accumulator.
    pub fn empty(dim: usize, class_count: usize) -> Self {
        Self {
            features: Vec::new(),
            dim,
            labels: Vec::new(),
            class_count,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Copies the rows `idx` (duplicates allowed) into a new dataset.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            dim: self.dim,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Appends every row of `other`.
    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        if other.dim != self.dim {
            return Err(input("cannot concatenate datasets of different dimension"));
        }
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
        self.class_count = self.class_count.max(other.class_count);
        Ok(())
    }

    pub(crate) fn push(&mut self, row: &[f64], label: usize) {
        debug_assert_eq!(row.len(), self.dim);
        self.features.extend_from_slice(row);
        self.labels.push(label);
    }

    pub(crate) fn set_label(&mut self, i: usize, label: usize) {
        self.labels[i] = label;
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Count of each label.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Splits into `(train, test)`, sending every `1/test_fraction`-th shuffled row to test.
    pub fn train_test_split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(input("test fraction must lie in (0, 1)"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut stream_from(seed));
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        let (test, train) = order.split_at(n_test.clamp(1, self.len() - 1));
        Ok((self.subset(train), self.subset(test)))
    }
}

/// Parameters of the Gaussian-blob generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub class_count: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub seed: u64,
}

/// One Gaussian blob per class around a center drawn uniformly on the unit
/// sphere, then min-max scaled (one affine map for all features) into `[0, 1]`.
pub fn gen_synthetic(p: SyntheticParams) -> Result<Dataset> {
    if p.class_count == 0 || p.dim == 0 || p.per_class == 0 {
        return Err(input("class count, dimension and per-class count must be at least 1"));
    }
    if !(p.spread > 0.0 && p.spread.is_finite()) {
        return Err(input("spread must be positive"));
    }
    const CLIP: f64 = 1e6;
    let mut rng = stream_from(p.seed);
    let mut raw = Vec::with_capacity(p.class_count * p.per_class * p.dim);
    let mut labels = Vec::with_capacity(p.class_count * p.per_class);
    for class in 0..p.class_count {
        let mut center: Vec<f64> = (0..p.dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = center.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        center.iter_mut().for_each(|v| *v /= norm);
        for _ in 0..p.per_class {
            for c in &center {
                let noise: f64 = rng.sample(StandardNormal);
                raw.push((c + p.spread * noise).clamp(-CLIP, CLIP));
            }
            labels.push(class);
        }
    }
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let features = raw
        .into_iter()
        .map(|v| if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    Dataset::new(features, p.dim, labels, p.class_count)
}

/// Per-client sample indices and the subset each client shares publicly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientPartition {
    pub client_indices: Vec<Vec<usize>>,
    pub public_indices: Vec<Vec<usize>>,
}

impl ClientPartition {
    pub fn client_count(&self) -> usize {
        self.client_indices.len()
    }

    /// Indices of a client's samples that are not shared.
    pub fn private_indices(&self, client: usize) -> Vec<usize> {
        let public: std::collections::HashSet<_> = self.public_indices[client].iter().collect();
        self.client_indices[client]
            .iter()
            .filter(|i| !public.contains(i))
            .copied()
            .collect()
    }
}

fn shard_layout(n: usize, n_clients: usize, shards: usize) -> Result<usize> {
    if n_clients == 0 || shards == 0 {
        return Err(input("client and shard counts must be positive"));
    }
    if shards % n_clients != 0 {
        return Err(input(format!(
            "{shards} shards cannot be split evenly over {n_clients} clients"
        )));
    }
    if shards > n {
        return Err(input(format!("{shards} shards exceed the {n} available samples")));
    }
    Ok(n / shards)
}

/// Cuts `order` into equal contiguous shards (dropping the remainder) and deals
/// them to clients in shuffled shard order.
fn deal_shards(order: &[usize], n_clients: usize, shards: usize, rng: &mut Stream) -> ClientPartition {
    let shard_size = order.len() / shards;
    let mut shard_ids: Vec<usize> = (0..shards).collect();
    shard_ids.shuffle(rng);
    let per_client = shards / n_clients;
    let client_indices = shard_ids
        .chunks(per_client)
        .map(|ids| {
            ids.iter()
                .flat_map(|&s| order[s * shard_size..(s + 1) * shard_size].iter().copied())
                .collect()
        })
        .collect();
    ClientPartition {
        client_indices,
        public_indices: vec![Vec::new(); n_clients],
    }
}

/// Shuffle, shard, deal.
pub fn partition_iid(dataset: &Dataset, n_clients: usize, shards: usize, seed: u64) -> Result<ClientPartition> {
    shard_layout(dataset.len(), n_clients, shards)?;
    let mut rng = stream_from(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    Ok(deal_shards(&order, n_clients, shards, &mut rng))
}

/// Sort by label, shard, deal. Within a label the order is random.
pub fn partition_noniid(dataset: &Dataset, n_clients: usize, shards: usize, seed: u64) -> Result<ClientPartition> {
    shard_layout(dataset.len(), n_clients, shards)?;
    let mut rng = stream_from(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| dataset.labels()[i]);
    Ok(deal_shards(&order, n_clients, shards, &mut rng))
}

/// Marks `ceil(fraction * |client|)` uniformly chosen samples of each client as public.
pub fn split_public(partition: &ClientPartition, fraction: f64, seed: u64) -> Result<ClientPartition> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(input("public fraction must lie in (0, 1)"));
    }
    let mut rng = stream_from(seed);
    let public_indices = partition
        .client_indices
        .iter()
        .map(|owned| {
            // guard against 0.15 * 40 landing a hair above 6
            let k = ((fraction * owned.len() as f64) - 1e-9).ceil().max(0.0) as usize;
            let k = k.min(owned.len());
            let mut picked: Vec<usize> = index::sample(&mut rng, owned.len(), k).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|p| owned[p]).collect()
        })
        .collect();
    Ok(ClientPartition {
        client_indices: partition.client_indices.clone(),
        public_indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purity {
    /// Only legitimate clients' public samples.
    Pure,
    /// Every client's public samples; attacker samples arrive pixel-shuffled.
    Impure,
}

/// The server's dataset `D_0`, with the client each sample came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerData {
    pub data: Dataset,
    pub origin: Vec<usize>,
    pub purity: Purity,
}

impl ServerData {
    /// Samples contributed by the given clients.
    pub fn from_clients(&self, clients: &[usize]) -> Dataset {
        let idx: Vec<usize> = (0..self.origin.len())
            .filter(|&i| clients.contains(&self.origin[i]))
            .collect();
        self.data.subset(&idx)
    }
}

pub fn build_server_data(
    dataset: &Dataset,
    partition: &ClientPartition,
    roles: &[Role],
    purity: Purity,
    rng: &mut Stream,
) -> Result<ServerData> {
    if roles.len() != partition.client_count() {
        return Err(input(format!(
            "{} roles for {} clients",
            roles.len(),
            partition.client_count()
        )));
    }
    if purity == Purity::Pure && roles.iter().all(|r| *r == Role::Attacker) {
        return Err(config("a pure server dataset needs at least one legitimate client"));
    }
    let mut data = Dataset::empty(dataset.dim(), dataset.class_count());
    let mut origin = Vec::new();
    for (client, public) in partition.public_indices.iter().enumerate() {
        let attacker = roles[client] == Role::Attacker;
        if attacker && purity == Purity::Pure {
            continue;
        }
        for &i in public {
            data.push(dataset.row(i), dataset.labels()[i]);
            if attacker {
                let last = data.len() - 1;
                pixel_shuffle_sample(data.row_mut(last), rng);
            }
            origin.push(client);
        }
    }
    Ok(ServerData { data, origin, purity })
}
