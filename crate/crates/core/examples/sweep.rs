//! Attacker-count sweep written as run directories, like `moefl sweep`.

use std::path::PathBuf;

use moefl::cli::{cmd_sweep, COMPARISON_FILE};

fn main() {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("moefl-sweep"));
    let config = PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/desk.json"));
    let values: Vec<String> = ["0", "5", "10", "15"].iter().map(|s| s.to_string()).collect();
    if let Err(f) = cmd_sweep(&config, "attackers.count", &values, &out) {
        eprintln!("sweep failed: {f}");
        std::process::exit(f.code);
    }
    println!("comparison table: {}", out.join(COMPARISON_FILE).display());
}
