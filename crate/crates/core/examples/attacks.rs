//! Each attack kind against FedAvg and the exact MoE weighting.

use moefl::{run, AggregatorKind, AttackConfig, AttackKind, ExperimentConfig};

fn main() -> moefl::Result<()> {
    let mut base = ExperimentConfig::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/desk.json"))?;
    base.run.max_rounds = 40;
    base.attackers.count = 6;
    let kinds = [
        AttackKind::RandomWeights,
        AttackKind::AdditiveNoise,
        AttackKind::NegativeWeight,
        AttackKind::LabelFlipStatic,
        AttackKind::LabelFlipAdaptive,
        AttackKind::PixelShuffle,
    ];
    println!("{:<22} {:>8} {:>8}", "attack", "fedavg", "moe");
    for kind in kinds {
        let mut accs = Vec::new();
        for agg in [AggregatorKind::Fedavg, AggregatorKind::opt_exact()] {
            let mut cfg = base.clone();
            cfg.attackers.attack = AttackConfig::new(kind);
            cfg.aggregator = agg;
            accs.push(run(cfg)?.tail_accuracy(10));
        }
        println!("{:<22} {:>8.3} {:>8.3}", format!("{kind:?}"), accs[0], accs[1]);
    }
    Ok(())
}
