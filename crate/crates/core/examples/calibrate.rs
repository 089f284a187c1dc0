//! Entropy-balance one site's rows toward another site's covariate means.
//!
//! `cargo run --example calibrate`

use fedcmp::calib::{balance_residual, entropy_balance, CalibrationProblem};
use fedcmp::data::SiteId;
use fedcmp::numlin::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = Normal::new(0.0, 1.0)?;
    let rows: Vec<Vec<f64>> = (0..500).map(|_| vec![z.sample(&mut rng), 1.0 + 0.5 * z.sample(&mut rng)]).collect();
    let features = Matrix::from_rows(&rows)?;
    let target = [0.4, 0.8];

    let result = entropy_balance(&CalibrationProblem {
        features: &features,
        target_mean: &target,
        source_site: SiteId(0),
        target_site: SiteId(1),
    })?;

    println!("gamma               {:?}", result.gamma);
    println!("newton iterations   {}", result.iterations);
    println!("effective n         {:.1} of {}", result.effective_sample_size, features.rows());
    let check = balance_residual(&result.weights, &features, &target)?;
    let worst = check.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    println!("balance residual    {worst:.2e}");
    Ok(())
}
