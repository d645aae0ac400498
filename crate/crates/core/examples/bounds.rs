//! Detection thresholds and bias bounds for hand-picked constants.

use moefl::analysis::{bias_bound, lemma2_impure_terms, lemma2_pure_threshold, BiasScenario, BoundParams};

fn main() -> moefl::Result<()> {
    let base = BoundParams {
        L1: 1.0,
        L2: 1.0,
        sigma1: 0.1,
        sigma2: 1.0,
        eta1: 0.1,
        eta2: 1.0,
        B: 1.0,
        R: 100.0,
        K: 5.0,
        N: 10.0,
        E: 0.0,
    };
    println!("pure detection threshold: {:.6}", lemma2_pure_threshold(&base)?);
    println!("{:>3} {:>12} {:>10} {:>10} {:>10}", "E", "impure thr", "clean", "impure", "pure");
    for e in 0..10 {
        let p = BoundParams { E: e as f64, ..base };
        println!(
            "{:>3} {:>12.5} {:>10.4} {:>10.4} {:>10.4}",
            e,
            lemma2_impure_terms(&p)?.total,
            bias_bound(&p, BiasScenario::NoniidClean)?,
            bias_bound(&p, BiasScenario::Impure)?,
            bias_bound(&p, BiasScenario::Pure)?,
        );
    }
    Ok(())
}
