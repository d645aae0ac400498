//! Projects the last layer of every submitted model onto two principal axes.

use moefl::analysis::pca2;
use moefl::{run, ExperimentConfig, Role, Simulation};

fn main() -> moefl::Result<()> {
    let mut cfg = ExperimentConfig::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/desk.json"))?;
    cfg.run.max_rounds = 30;
    cfg.run.snapshot_every = Some(15);
    let sim = Simulation::new(cfg.clone())?;
    let roles = sim.roles().to_vec();
    let last = sim.spec().last_layer_range();
    let result = run(cfg)?;
    for snap in &result.snapshots {
        let mut rows = vec![snap.global.as_slice()[last.clone()].to_vec(), snap.server.as_slice()[last.clone()].to_vec()];
        rows.extend(snap.client_models.iter().map(|w| w.as_slice()[last.clone()].to_vec()));
        let p = pca2(&rows)?;
        println!("round {} (variances {:.3e}, {:.3e})", snap.round, p.explained_variance[0], p.explained_variance[1]);
        let mut labels = vec!["global".to_string(), "server".to_string()];
        labels.extend(snap.cohort.iter().map(|&c| match roles[c] {
            Role::Attacker => format!("attacker {c}"),
            Role::Legitimate => format!("client {c}"),
        }));
        for (label, q) in labels.iter().zip(&p.projections) {
            println!("  {label:<12} {:>9.4} {:>9.4}", q[0], q[1]);
        }
    }
    Ok(())
}
