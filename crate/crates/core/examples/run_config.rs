//! Runs a bundled experiment config in-process and prints its checks.
//!
//! `cargo run --release --example run_config -- configs/phase_expansion.json`

use crossprop::config::ExperimentConfig;
use crossprop::study::{run_study, RunOptions};

fn main() -> crossprop::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/phase_expansion.json").into());
    let cfg = ExperimentConfig::from_file(std::path::Path::new(&path))?;
    let opts = RunOptions { out_dir: std::env::temp_dir().join("crossprop_example"), ..Default::default() };
    let summary = run_study(&cfg, &opts)?;
    for c in &summary.checks {
        println!("{} {}: {:.4e} ({})", if c.pass { "pass" } else { "FAIL" }, c.name, c.value, c.threshold);
    }
    for r in &summary.rows {
        println!("eps {:.4e} err {:.4e} order {:?}", r.eps, r.err_total, r.order_est);
    }
    println!("artifacts in {}", opts.out_dir.display());
    Ok(())
}
