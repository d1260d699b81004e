//! Acceptance battery: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Select a subset with `SCG_CRITERIA=1,7,12`.

use std::process::ExitCode;

use scg_core::verify::{run_all, VerifyContext};

fn main() -> ExitCode {
    let ids: Vec<u8> = std::env::var("SCG_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_default();
    let ctx = VerifyContext::new();
    let reports = run_all(&ids, &ctx, |r| println!("{}", r.line()));
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("acceptance: {} passed, {} failed", reports.len() - failed, failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
