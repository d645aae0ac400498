//! Smallest end-to-end run: synthetic blobs, half the clients attacking, MoE weighting.

use moefl::{run, ExperimentConfig};

fn main() -> moefl::Result<()> {
    let cfg = ExperimentConfig::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/desk.json"))?;
    let result = run(cfg)?;
    for rec in result.records.iter().step_by(10) {
        println!(
            "round {:>3}  accuracy {:.3}  attacker weight {:.2e}",
            rec.round,
            rec.accuracy,
            rec.attacker_mass()
        );
    }
    println!(
        "stopped after {} rounds ({}), last-20 accuracy {:.3}",
        result.records.len(),
        result.stop_reason.as_str(),
        result.tail_accuracy(20)
    );
    Ok(())
}
