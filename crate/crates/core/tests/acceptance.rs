//! Acceptance battery. Prints one PASS/FAIL line per criterion, then fails
//! if any criterion failed. The seed can be overridden with `PPOT_SEED`.

use std::io::Write;

use ppot::validation::{run_criterion, CRITERIA};

#[test]
fn acceptance_suite() {
    let seed = std::env::var("PPOT_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(20_240_601u64);
    let only: Option<Vec<u8>> = std::env::var("PPOT_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (id, _, _) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let out = run_criterion(id, seed);
        // straight to the stream so the lines show even when output is captured
        let _ = writeln!(std::io::stderr().lock(), "{}", out.line());
        if !out.pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
