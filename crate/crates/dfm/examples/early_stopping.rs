//! Stop the diffusion a margin delta before t = 1 and measure what
//! that costs against a nearly singular target. The terminal law at
//! 1 - delta is the smoothed target; its distance to the true target
//! shrinks linearly in delta while its score stays bounded, which is
//! the whole point of stopping early.
//!
//!     cargo run --example early_stopping

use nalgebra::DVector;

use dfm::drift::DriftModel;
use dfm::metrics::w2_1d;
use dfm::model::{Coupling, GaussianMixture};
use dfm::rng::StreamKey;
use dfm::sampler::{em_generate, TimeGrid};

fn main() -> dfm::Result<()> {
    let sigma2 = 1e-4; // target standard deviation 0.01
    let target = GaussianMixture::isotropic(DVector::zeros(1), sigma2)?;
    let mu = GaussianMixture::standard(1);
    let coupling = Coupling::independent(mu.clone(), target.clone())?;
    let model = DriftModel::Exact {
        coupling: coupling.clone(),
    };
    let key = StreamKey::root(13);
    let n = 20_000;

    let target_draws = target.sample(n, key.label("target"));
    println!("{:>8} {:>12} {:>14}", "delta", "stop time", "w2 to target");
    for (i, delta) in [0.02, 0.05, 0.1, 0.2].into_iter().enumerate() {
        let grid = TimeGrid::with_early_stop(100, delta)?;
        let stopped = em_generate(&model, &mu, &grid, n, key.label("sde").substream(i as u64))?;
        let w2 = w2_1d(&target_draws, &stopped)?;
        println!("{delta:>8} {:>12.2} {w2:>14.4}", grid.stop_time());
    }
    println!("\nhalving delta should roughly halve the squared distance.");
    Ok(())
}
