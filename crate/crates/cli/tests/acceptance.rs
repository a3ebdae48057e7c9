//! Acceptance criteria on the reference scenario, one PASS/FAIL line each.
//! Exits non-zero when any criterion fails.

use std::process::ExitCode;

use qpm_cli::{report, Scenario};

fn main() -> ExitCode {
    let scenario = Scenario::default();
    let report = match report::evaluate(&scenario) {
        Ok(r) => r,
        Err(e) => {
            println!("FAIL acceptance suite did not run: {e}");
            return ExitCode::FAILURE;
        }
    };
    for line in report.lines() {
        println!("{line}");
    }
    let failed = report.criteria.iter().filter(|c| !c.passed).count();
    println!("acceptance: {} passed, {failed} failed", report.criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
