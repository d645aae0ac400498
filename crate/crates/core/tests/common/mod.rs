#![allow(dead_code)]

use moefl::ExperimentConfig;
use serde_json::{json, Value};

/// 10-class blobs in 64 dimensions, 20 clients, cohort of 6.
pub fn desk() -> Value {
    json!({
        "model": { "hidden": [32] },
        "data": {
            "source": { "kind": "synthetic", "class_count": 10, "dim": 64, "per_class": 120, "spread": 0.15 },
            "partition": "iid",
            "public_fraction": 0.15
        },
        "clients": { "population": 20, "cohort": 6, "lr": 0.1, "batch_size": 20 },
        "attackers": { "count": 10, "attack": { "kind": "negative_weight" } },
        "aggregator": { "kind": "opt_exact" },
        "server": { "purity": "pure", "warm_start": true },
        "run": { "max_rounds": 150, "zeta": 1e-9, "master_seed": 1 }
    })
}

/// Small and fast variant for plumbing tests.
pub fn tiny() -> Value {
    json!({
        "model": { "hidden": [8] },
        "data": {
            "source": { "kind": "synthetic", "class_count": 4, "dim": 8, "per_class": 40, "spread": 0.2 },
            "partition": "iid",
            "public_fraction": 0.15
        },
        "clients": { "population": 6, "cohort": 3, "lr": 0.1, "batch_size": 10 },
        "attackers": { "count": 2, "attack": { "kind": "negative_weight" } },
        "aggregator": { "kind": "opt_exact" },
        "run": { "max_rounds": 8, "zeta": 1e-9, "master_seed": 5 }
    })
}

pub fn set(doc: &mut Value, path: &str, value: Value) {
    moefl::config::set_json_path(doc, path, value).unwrap();
}

pub fn with(mut doc: Value, edits: &[(&str, Value)]) -> Value {
    for (path, value) in edits {
        let parts: Vec<&str> = path.split('.').collect();
        let mut node = &mut doc;
        for p in &parts[..parts.len() - 1] {
            node = node.as_object_mut().unwrap().entry(p.to_string()).or_insert(json!({}));
        }
        node.as_object_mut().unwrap().insert(parts[parts.len() - 1].to_string(), value.clone());
    }
    doc
}

pub fn config(doc: &Value) -> ExperimentConfig {
    ExperimentConfig::from_json(&doc.to_string()).unwrap()
}
