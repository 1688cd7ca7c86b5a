//! Full acceptance run: executes every criterion and prints one line per
//! result, then fails if any row is red.
//!
//! `QLSIM_SEED` overrides the default seed.

use qlsim_core::selftest::run_all;

#[test]
fn acceptance_criteria_all_pass() {
    let seed = std::env::var("QLSIM_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(7u64);
    let results = run_all(seed);
    println!("acceptance run, seed {seed}");
    for r in &results {
        let mark = if r.passed { "PASS" } else { "FAIL" };
        println!(
            "[{mark}] {:>2} {:<32} {:>8.2}s  {}",
            r.id, r.name, r.seconds, r.detail
        );
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name)
        .collect();
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
