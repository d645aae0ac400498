//! Shard-based IID and non-IID splits and the public share.

use moefl::data::{gen_synthetic, partition_iid, partition_noniid, split_public, SyntheticParams};

fn main() -> moefl::Result<()> {
    let data = gen_synthetic(SyntheticParams { class_count: 10, dim: 16, per_class: 50, spread: 0.2, seed: 7 })?;
    let shards = 20;
    for (name, part) in [
        ("iid", partition_iid(&data, 10, shards, 1)?),
        ("noniid", partition_noniid(&data, 10, shards, 1)?),
    ] {
        let part = split_public(&part, 0.15, 2)?;
        println!("{name}:");
        for (c, owned) in part.client_indices.iter().enumerate() {
            let mut hist = vec![0; data.class_count()];
            for &i in owned {
                hist[data.labels()[i]] += 1;
            }
            println!("  client {c}: {} samples, {} public, labels {hist:?}", owned.len(), part.public_indices[c].len());
        }
    }
    Ok(())
}
