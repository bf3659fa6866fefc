//! Runs every acceptance card and prints one PASS/FAIL line per criterion.
//! Exits non-zero when any card fails.

use std::path::PathBuf;
use std::process::ExitCode;

use permapprox::bench::{cards, run_card};

const SEED: u64 = 20_240_917;

fn main() -> ExitCode {
    let results = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let mut failures = 0;
    for card in cards() {
        match run_card(&card, SEED, &results) {
            Ok(outcome) => {
                println!("{}", outcome.line());
                failures += usize::from(!outcome.passed);
            }
            Err(e) => {
                println!("FAIL [{}] {}: {e}", card.criterion, card.name);
                failures += 1;
            }
        }
    }
    println!("evidence under {}", results.display());
    if failures == 0 {
        println!("acceptance: all {} criteria passed", cards().len());
        ExitCode::SUCCESS
    } else {
        println!(
            "acceptance: {failures} of {} criteria failed",
            cards().len()
        );
        ExitCode::FAILURE
    }
}
