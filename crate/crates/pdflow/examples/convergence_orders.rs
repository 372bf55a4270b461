//! Convergence-rate comparison of the two models on the bundled
//! synthetic problems: iteration counts to reach descending residual
//! thresholds, plus the fitted order of each model.
//!
//! The two-phase model reaches every threshold first; its count grows
//! roughly like 1/eps while the single-phase model's count grows closer
//! to 1/eps^2. Runs in well under a minute in release mode.
//!
//!     cargo run --release --example convergence_orders

use pdflow::metrics::{
    bench_convergence, bundled_problems, render_iteration_table, write_reports_csv,
};

fn main() -> pdflow::Result<()> {
    let thresholds = [0.1, 0.05, 0.02, 0.01];
    let problems = bundled_problems();
    eprintln!(
        "running {} problems x 2 models to eps = {} ...",
        problems.len(),
        thresholds.last().unwrap()
    );
    let reports = bench_convergence(&problems, &thresholds)?;
    print!("{}", render_iteration_table(&reports));

    let file = std::fs::File::create("convergence.csv").expect("create convergence.csv");
    write_reports_csv(&reports, std::io::BufWriter::new(file)).expect("write convergence.csv");
    println!("report -> convergence.csv");
    Ok(())
}
