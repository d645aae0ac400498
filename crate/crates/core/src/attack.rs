//! Adversarial client behaviour.
//!
//! Data attacks rewrite a client's samples before honest local training.
//! Model attacks replace or perturb the model a client submits.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{input, Result};
use crate::nn::ParamVector;
use crate::rng::{Seeds, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Legitimate,
    Attacker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Submit a fresh Gaussian vector, ignoring training.
    RandomWeights,
    /// Submit the honestly trained model plus Gaussian noise.
    AdditiveNoise,
    /// Submit the negated last broadcast model.
    NegativeWeight,
    /// Relabel with one derangement drawn once.
    LabelFlipStatic,
    /// Relabel with a fresh derangement every round.
    LabelFlipAdaptive,
    /// Permute each sample's features independently.
    PixelShuffle,
}

impl AttackKind {
    pub fn poisons_data(self) -> bool {
        matches!(
            self,
            AttackKind::LabelFlipStatic | AttackKind::LabelFlipAdaptive | AttackKind::PixelShuffle
        )
    }

    pub fn forges_model(self) -> bool {
        !self.poisons_data()
    }
}

fn default_noise_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
}

impl AttackConfig {
    pub fn new(kind: AttackKind) -> Self {
        Self {
            kind,
            noise_scale: default_noise_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(input("noise_scale must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Uniformly random derangement of `0..n`. For `n < 2` no derangement
/// exists and the identity is returned.
pub fn random_derangement(n: usize, rng: &mut Stream) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    if n < 2 {
        return perm;
    }
    // rejection sampling: about e draws on average
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm;
        }
    }
}

/// Replaces every label `y` by `map[y]`.
pub fn apply_label_map(data: &Dataset, map: &[usize]) -> Result<Dataset> {
    if map.len() != data.class_count() || map.iter().any(|&m| m >= data.class_count()) {
        return Err(input("label map must send classes to classes"));
    }
    let mut out = data.clone();
    for i in 0..out.len() {
        let y = out.labels()[i];
        out.set_label(i, map[y]);
    }
    Ok(out)
}

pub(crate) fn pixel_shuffle_sample(row: &mut [f64], rng: &mut Stream) {
    row.shuffle(rng);
}

/// Applies a data attack. The caller chooses the stream; see [`poison_stream`].
pub fn poison_dataset(data: &Dataset, kind: AttackKind, rng: &mut Stream) -> Result<Dataset> {
    match kind {
        AttackKind::LabelFlipStatic | AttackKind::LabelFlipAdaptive => {
            let map = random_derangement(data.class_count(), rng);
            apply_label_map(data, &map)
        }
        AttackKind::PixelShuffle => {
            let mut out = data.clone();
            for i in 0..out.len() {
                pixel_shuffle_sample(out.row_mut(i), rng);
            }
            Ok(out)
        }
        other => Err(input(format!("{other:?} is not a data attack"))),
    }
}

/// Stream for a data attack: static attacks reuse the round-0 stream, adaptive
/// ones draw a new stream each round.
pub fn poison_stream(seeds: &Seeds, kind: AttackKind, client: usize, round: usize) -> Stream {
    let round = if kind == AttackKind::LabelFlipAdaptive { round } else { 0 };
    seeds.stream("poison", client as u64, round as u64)
}

/// Produces the model an attacker submits.
pub fn forge_model(
    kind: AttackKind,
    honest_w: &ParamVector,
    broadcast_w: &ParamVector,
    noise_scale: f64,
    rng: &mut Stream,
) -> Result<ParamVector> {
    if honest_w.len() != broadcast_w.len() {
        return Err(input("honest and broadcast models differ in length"));
    }
    let normal = || Normal::new(0.0, noise_scale).map_err(|e| input(e.to_string()));
    match kind {
        AttackKind::NegativeWeight => Ok(broadcast_w.negated()),
        AttackKind::AdditiveNoise => {
            let dist = normal()?;
            Ok(ParamVector::new(
                honest_w.as_slice().iter().map(|w| w + dist.sample(rng)).collect(),
            ))
        }
        AttackKind::RandomWeights => {
            let dist = normal()?;
            Ok(ParamVector::new((0..honest_w.len()).map(|_| dist.sample(rng)).collect()))
        }
        other => Err(input(format!("{other:?} does not forge models"))),
    }
}

/// Picks `count` distinct attacker ids out of `population` clients.
pub fn choose_attackers(population: usize, count: usize, rng: &mut Stream) -> Result<Vec<usize>> {
    if count > population {
        return Err(input(format!("{count} attackers exceed population {population}")));
    }
    let mut ids = rand::seq::index::sample(rng, population, count).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Role vector with the given attacker ids.
pub fn roles_from_ids(population: usize, attackers: &[usize]) -> Result<Vec<Role>> {
    let mut roles = vec![Role::Legitimate; population];
    for &a in attackers {
        let slot = roles
            .get_mut(a)
            .ok_or_else(|| input(format!("attacker id {a} outside population {population}")))?;
        *slot = Role::Attacker;
    }
    Ok(roles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from;

    fn toy() -> Dataset {
        Dataset::new(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], 3, vec![0, 1, 2], 3).unwrap()
    }

    #[test]
    fn identity_map_keeps_data() {
        let d = toy();
        assert_eq!(apply_label_map(&d, &[0, 1, 2]).unwrap(), d);
        assert!(apply_label_map(&d, &[0, 1]).is_err());
    }

    #[test]
    fn derangements_move_every_class() {
        let mut rng = stream_from(4);
        for n in 2..8 {
            let p = random_derangement(n, &mut rng);
            assert!(p.iter().enumerate().all(|(i, &v)| i != v));
            let mut sorted = p.clone();
            sorted.sort();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        }
        assert_eq!(random_derangement(1, &mut rng), vec![0]);
    }

    #[test]
    fn pixel_shuffle_keeps_multisets_and_labels() {
        let d = toy();
        let p = poison_dataset(&d, AttackKind::PixelShuffle, &mut stream_from(2)).unwrap();
        assert_eq!(p.len(), d.len());
        assert_eq!(p.labels(), d.labels());
        for i in 0..d.len() {
            let mut a = d.row(i).to_vec();
            let mut b = p.row(i).to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn static_flip_repeats_adaptive_redraws() {
        let labels: Vec<usize> = (0..5).collect();
        let d = Dataset::new(vec![0.5; 5], 1, labels, 5).unwrap();
        let seeds = Seeds::new(10);
        let s1 = poison_dataset(&d, AttackKind::LabelFlipStatic, &mut poison_stream(&seeds, AttackKind::LabelFlipStatic, 3, 1)).unwrap();
        let s2 = poison_dataset(&d, AttackKind::LabelFlipStatic, &mut poison_stream(&seeds, AttackKind::LabelFlipStatic, 3, 2)).unwrap();
        assert_eq!(s1, s2);
        let a1 = poison_dataset(&d, AttackKind::LabelFlipAdaptive, &mut poison_stream(&seeds, AttackKind::LabelFlipAdaptive, 3, 1)).unwrap();
        let a2 = poison_dataset(&d, AttackKind::LabelFlipAdaptive, &mut poison_stream(&seeds, AttackKind::LabelFlipAdaptive, 3, 2)).unwrap();
        assert_ne!(a1.labels(), a2.labels());
        assert!(poison_dataset(&d, AttackKind::NegativeWeight, &mut stream_from(0)).is_err());
    }

    #[test]
    fn negative_weight_negates_broadcast() {
        let b = ParamVector::new(vec![0.5, -2.0]);
        let honest = ParamVector::new(vec![9.0, 9.0]);
        let f = forge_model(AttackKind::NegativeWeight, &honest, &b, 1.0, &mut stream_from(0)).unwrap();
        assert_eq!(f.as_slice(), &[-0.5, 2.0]);
        let mut sum = f.clone();
        sum.axpy(1.0, &b).unwrap();
        assert!(sum.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_noise_is_identity() {
        let h = ParamVector::new(vec![0.1, 0.2, -0.3]);
        let f = forge_model(AttackKind::AdditiveNoise, &h, &h, 0.0, &mut stream_from(1)).unwrap();
        assert_eq!(f, h);
        assert!(forge_model(AttackKind::AdditiveNoise, &h, &ParamVector::zeros(2), 0.0, &mut stream_from(1)).is_err());
    }

    #[test]
    fn random_weights_have_unit_moments() {
        let h = ParamVector::zeros(1000);
        let f = forge_model(AttackKind::RandomWeights, &h, &h, 1.0, &mut stream_from(2024)).unwrap();
        let n = f.len() as f64;
        let mean = f.as_slice().iter().sum::<f64>() / n;
        let var = f.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.15, "mean {mean}");
        assert!((0.9..1.1).contains(&var.sqrt()), "std {}", var.sqrt());
    }

    #[test]
    fn attacker_selection() {
        let ids = choose_attackers(20, 10, &mut stream_from(3)).unwrap();
        assert_eq!(ids.len(), 10);
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert!(choose_attackers(3, 4, &mut stream_from(3)).is_err());
        let roles = roles_from_ids(4, &[1, 3]).unwrap();
        assert_eq!(roles, vec![Role::Legitimate, Role::Attacker, Role::Legitimate, Role::Attacker]);
        assert!(roles_from_ids(4, &[4]).is_err());
    }
}
