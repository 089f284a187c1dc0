//! A session over loopback TCP, checked against the in-memory transport.
//!
//! `cargo run --example tcp_session`

use fedcmp::fedproto::{run_local, run_tcp, Mode, SessionConfig};
use fedcmp::outcome::BasisSpec;
use fedcmp::simlab::{gen_scenario, Scenario, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sites = gen_scenario(&ScenarioSpec::new(Scenario::Iii, 1600), 8)?;
    let cfg = SessionConfig::new("tcp-example", sites.len(), Mode::DacBr, BasisSpec::Linear);
    let over_tcp = run_tcp(&cfg, &sites)?;
    let in_memory = run_local(&cfg, &sites)?;
    println!("tcp bytes: {}", over_tcp.log.total_bytes());
    println!("identical reports: {}", over_tcp.report_csv()? == in_memory.report_csv()?);
    Ok(())
}
