//! Convergence suite plus the reproducibility check, one line per criterion.
//!
//! Runs without the libtest harness so the report is always printed.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use proplimit::suite::{acceptance_checks, SuiteConfig};

const SEED: u64 = 20_260_101;

fn run_verify_all(config: &Path, out: &Path, workers: usize) -> Result<Vec<u8>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_proplimit"))
        .arg("verify-all")
        .arg("--config")
        .arg(config)
        .arg("--output")
        .arg(out)
        .env("PROPLIMIT_WORKERS", workers.to_string())
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if status.code() == Some(2) || status.code().is_none() {
        return Err(format!("verify-all exited with {status}"));
    }
    std::fs::read(out.join("verify-all.csv")).map_err(|e| e.to_string())
}

/// verify-all twice with one worker and once with several; the CSV bodies
/// must match byte for byte.
fn reproducibility() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("run.toml");
    std::fs::write(&config, format!("seed = {SEED}\nscale = 0.25\n")).map_err(|e| e.to_string())?;
    let first = run_verify_all(&config, &dir.path().join("a"), 1)?;
    let second = run_verify_all(&config, &dir.path().join("b"), 1)?;
    let parallel = run_verify_all(&config, &dir.path().join("c"), 4)?;
    if first != second {
        return Err("repeated runs differ".into());
    }
    if first != parallel {
        return Err("1 vs 4 workers differ".into());
    }
    Ok(format!("{} bytes identical across 3 runs", first.len()))
}

fn main() -> ExitCode {
    let cfg = SuiteConfig::new(SEED);
    let mut failed = Vec::new();
    println!("acceptance suite (seed {SEED})");

    for (idx, check) in acceptance_checks().iter().enumerate() {
        let number = idx + 1;
        let start = Instant::now();
        match (check.run)(&cfg) {
            Ok(out) => {
                let pass = out.pass();
                println!(
                    "criterion {number:>2} {:<30} {}  ({} rows, {:.1}s)",
                    check.title,
                    if pass { "PASS" } else { "FAIL" },
                    out.rows.len(),
                    start.elapsed().as_secs_f64()
                );
                for row in out.rows.iter().filter(|r| !r.pass) {
                    println!(
                        "    failing row {}: statistic {:.6e} > threshold {:.6e}",
                        row.test, row.statistic, row.threshold
                    );
                }
                for note in &out.notes {
                    println!("    {note}");
                }
                if !pass {
                    failed.push(number);
                }
            }
            Err(e) => {
                println!(
                    "criterion {number:>2} {:<30} FAIL  (error: {e})",
                    check.title
                );
                failed.push(number);
            }
        }
    }

    let start = Instant::now();
    match reproducibility() {
        Ok(msg) => println!(
            "criterion 10 {:<30} PASS  ({msg}, {:.1}s)",
            "reproducibility",
            start.elapsed().as_secs_f64()
        ),
        Err(msg) => {
            println!("criterion 10 {:<30} FAIL  ({msg})", "reproducibility");
            failed.push(10);
        }
    }

    if failed.is_empty() {
        println!("all 10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
