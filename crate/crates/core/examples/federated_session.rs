//! A nonparametric two-round session over in-process sites, with a spline
//! outcome model and the full report table.
//!
//! `cargo run --example federated_session`

use fedcmp::data::{SiteId, SiteSet};
use fedcmp::fedproto::{render_table, run_local, Mode, SessionConfig};
use fedcmp::outcome::BasisSpec;
use fedcmp::simlab::{gen_scenario, Scenario, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sites = gen_scenario(&ScenarioSpec::new(Scenario::Ii, 2000), 5)?;
    for (s, d) in sites.iter().enumerate() {
        println!("site {}: {} rows", s + 1, d.n());
    }
    let cfg = SessionConfig::new("example-session", sites.len(), Mode::DacNonparametric, BasisSpec::cubic_spline(3));
    let outcome = run_local(&cfg, &sites)?;

    for s in 0..sites.len() {
        println!("site {} round trips: {}", s + 1, outcome.log.round_trips(SiteId(s)));
    }
    println!("bytes on the wire: {}", outcome.log.total_bytes());

    let all = SiteSet::all(sites.len());
    let headline: Vec<_> =
        outcome.reports.iter().filter(|r| r.subset == all && r.k == SiteId(0) && r.k_prime == SiteId(3)).cloned().collect();
    print!("{}", render_table(&headline));
    Ok(())
}
