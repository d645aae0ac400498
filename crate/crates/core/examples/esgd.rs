//! Elastic local updates compared with plain SGD on non-IID clients.

use moefl::config::{LocalUpdate, PartitionMode};
use moefl::{run, ExperimentConfig};

fn main() -> moefl::Result<()> {
    let mut base = ExperimentConfig::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/desk.json"))?;
    base.data.partition = PartitionMode::Noniid;
    base.attackers.count = 0;
    base.run.max_rounds = 150;
    let updates = [
        ("sgd", LocalUpdate::Sgd),
        ("esgd 0.1/0.1", LocalUpdate::Esgd { alpha: 0.1, beta: 0.1, include_server: true }),
        ("esgd 0.3/0.1", LocalUpdate::Esgd { alpha: 0.3, beta: 0.1, include_server: true }),
    ];
    for (name, update) in updates {
        let mut cfg = base.clone();
        cfg.clients.local_update = update;
        let r = run(cfg)?;
        println!("{name:<14} last-20 accuracy {:.3}", r.tail_accuracy(20));
    }
    Ok(())
}
