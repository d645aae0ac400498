//! Online curation of an impure server dataset: which clients the server rejects.

use moefl::{ExperimentConfig, Role, Simulation};

fn main() -> moefl::Result<()> {
    let cfg = ExperimentConfig::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/curation.json"))?;
    let sim = Simulation::new(cfg)?;
    let meta = sim.metadata().clone();
    println!("attackers: {:?}", meta.attacker_ids);
    println!("server samples before curation: {}", meta.server_samples);
    println!("curated samples: {}", sim.server().curated.len());
    if let Some(cal) = &meta.d0_calibration {
        println!("calibrated d0 = {:.4}", cal.d0);
    }
    let server = sim.server();
    for (c, role) in sim.roles().iter().enumerate() {
        let verdict = if server.outlier_labels[c] { "rejected" } else { "kept" };
        let who = if *role == Role::Attacker { "attacker" } else { "legitimate" };
        println!("client {c:>2} {who:<10} {verdict}");
    }
    let result = sim.run_to_end()?;
    println!("last-20 accuracy {:.3}", result.tail_accuracy(20));
    Ok(())
}
