//! Same attacked federation under every weighting rule.

use moefl::{run, AggregatorKind, ExperimentConfig, Utility};

fn main() -> moefl::Result<()> {
    let base = ExperimentConfig::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/desk.json"))?;
    let kinds = [
        AggregatorKind::Fedavg,
        AggregatorKind::Softmax,
        AggregatorKind::opt_exact(),
        AggregatorKind::opt_entropic(),
        AggregatorKind::Utility { utility: Utility::Log, tie_tol: 1e-12 },
    ];
    println!("{:<12} {:>10} {:>16}", "aggregator", "accuracy", "attacker weight");
    for kind in kinds {
        let mut cfg = base.clone();
        cfg.aggregator = kind;
        let r = run(cfg)?;
        let mass: f64 = r.records.iter().map(|rec| rec.attacker_mass()).sum();
        println!("{:<12} {:>10.3} {:>16.3e}", kind.name(), r.tail_accuracy(20), mass);
    }
    Ok(())
}
