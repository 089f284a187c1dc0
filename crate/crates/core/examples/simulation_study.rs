//! A small simulation study on the headline estimand.
//!
//! `cargo run --release --example simulation_study [out-dir]`

use std::path::PathBuf;

use fedcmp::simlab::{render_summary, write_study_outputs, CellSpec, Scenario, StudyConfig, TruthCache};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("fedcmp-study"));
    let mut config = StudyConfig::new(vec![Scenario::I, Scenario::Ii], 1200, 50, 1);
    config.cells = Some(vec![CellSpec::headline()]);
    let rows = config.run(TruthCache::on_disk(out.join("truth-cache")))?;
    print!("{}", render_summary(&rows));
    for path in write_study_outputs(&out, &config, &rows, true)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
