//! A session exchanged through files in a shared directory.
//!
//! `cargo run --example directory_transport [exchange-dir]`

use std::path::PathBuf;

use fedcmp::fedproto::{run_directory, Mode, SessionConfig};
use fedcmp::outcome::BasisSpec;
use fedcmp::simlab::{gen_scenario, Scenario, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("fedcmp-exchange"));
    let sites = gen_scenario(&ScenarioSpec::new(Scenario::I, 1200), 3)?;
    // Directories are never reused, so pick a fresh session id per run.
    let session = format!("dir-{}", std::process::id());
    let cfg = SessionConfig::new(&session, sites.len(), Mode::DacNonparametric, BasisSpec::Linear);
    let outcome = run_directory(&cfg, &sites, &base)?;

    let dir = base.join(&session);
    let mut files: Vec<_> = walk(&dir)?;
    files.sort();
    for f in files {
        println!("{}", f.strip_prefix(&base)?.display());
    }
    println!("{} estimates", outcome.reports.len());
    Ok(())
}

fn walk(dir: &std::path::Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            out.extend(walk(&path)?);
        } else {
            out.push(path);
        }
    }
    Ok(out)
}
