//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `NASP_ACCEPTANCE_ONLY=1,2,9` runs a subset. Criteria 9 and 10 share one timed run of the
//! desk pipeline through the `nasp` binary.

mod pipeline;
mod props;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

pub type Outcome = Result<String, Box<dyn std::error::Error>>;

#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*).into());
        }
    };
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "operator adjointness and round trip", props::operator),
        (2, "mask budgets and nesting", props::masks),
        (3, "quantizer oracle and rotation gradient", props::quantizer),
        (4, "EMA limiting case and invariant", props::ema),
        (5, "tokenizer loss plumbing", props::losses),
        (6, "transformer causality and init", props::transformer),
        (7, "decoding", props::decoding),
        (8, "reverse KL", props::reverse_kl),
        (9, "desk end-to-end", pipeline::end_to_end),
        (10, "distillation direction", pipeline::distillation),
        (11, "formats", props::formats),
    ];
    let only: Option<Vec<usize>> = std::env::var("NASP_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (n, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let secs = t.elapsed().as_secs_f64();
        let (status, detail) = match result {
            Ok(Ok(d)) => ("PASS", d),
            Ok(Err(e)) => ("FAIL", e.to_string()),
            Err(p) => (
                "FAIL",
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()),
            ),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {n:>2} [{status}] {name}: {detail} ({secs:.1}s)");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
