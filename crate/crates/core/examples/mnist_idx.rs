//! Runs the desk scenario on IDX files, e.g. MNIST.
//!
//! Set `MOEFL_TRAIN_IMAGES`, `MOEFL_TRAIN_LABELS`, `MOEFL_TEST_IMAGES` and
//! `MOEFL_TEST_LABELS`. Without them the example generates a small synthetic
//! IDX set in a temporary directory first.

use std::path::PathBuf;

use moefl::config::DataSource;
use moefl::data::{gen_synthetic, SyntheticParams};
use moefl::idx::{write_idx, Precision};
use moefl::{run, ExperimentConfig};

fn paths() -> moefl::Result<[PathBuf; 4]> {
    let vars = ["MOEFL_TRAIN_IMAGES", "MOEFL_TRAIN_LABELS", "MOEFL_TEST_IMAGES", "MOEFL_TEST_LABELS"];
    if let Ok(found) = vars.iter().map(std::env::var).collect::<Result<Vec<_>, _>>() {
        let found: Vec<PathBuf> = found.into_iter().map(PathBuf::from).collect();
        return Ok(found.try_into().expect("four paths"));
    }
    let dir = std::env::temp_dir().join("moefl-idx-example");
    std::fs::create_dir_all(&dir)?;
    let data = gen_synthetic(SyntheticParams { class_count: 10, dim: 64, per_class: 120, spread: 0.15, seed: 11 })?;
    let (train, test) = data.train_test_split(0.2, 11)?;
    let p = [dir.join("train-images.idx"), dir.join("train-labels.idx"), dir.join("test-images.idx"), dir.join("test-labels.idx")];
    write_idx(&train, &p[0], &p[1], Precision::U8)?;
    write_idx(&test, &p[2], &p[3], Precision::U8)?;
    println!("no IDX paths set; using synthetic files in {}", dir.display());
    Ok(p)
}

fn main() -> moefl::Result<()> {
    let [train_images, train_labels, test_images, test_labels] = paths()?;
    let mut cfg = ExperimentConfig::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/desk.json"))?;
    cfg.data.source = DataSource::Idx { train_images, train_labels, test_images, test_labels };
    cfg.model.hidden = vec![64];
    cfg.run.max_rounds = 30;
    let r = run(cfg)?;
    println!("{} rounds, last-10 accuracy {:.3}", r.records.len(), r.tail_accuracy(10));
    Ok(())
}
