//! Sweep the integration step and watch the pathwise discretization
//! functional shrink. The functional upper-bounds the KL divergence of
//! the sampler's path law from the reference diffusion, so its decay
//! rate tells you what refining the grid buys.
//!
//!     cargo run --example step_size_sweep

use nalgebra::{DMatrix, DVector};

use dfm::drift::DriftModel;
use dfm::experiment::fit_slope;
use dfm::metrics::girsanov_bound;
use dfm::model::{Coupling, GaussianMixture};
use dfm::rng::StreamKey;
use dfm::sampler::TimeGrid;

fn main() -> dfm::Result<()> {
    let nu = GaussianMixture::new(
        vec![0.5, 0.5],
        vec![DVector::from_vec(vec![-1.0]), DVector::from_vec(vec![1.5])],
        vec![
            DMatrix::from_element(1, 1, 0.4),
            DMatrix::from_element(1, 1, 0.7),
        ],
    )?;
    let coupling = Coupling::independent(GaussianMixture::standard(1), nu)?;
    let model = DriftModel::Exact {
        coupling: coupling.clone(),
    };
    let key = StreamKey::root(17);
    let n = 20_000;

    println!("{:>8} {:>10} {:>14}", "n_steps", "h", "bound");
    let mut points = Vec::new();
    for (i, n_steps) in [8usize, 16, 32, 64].into_iter().enumerate() {
        let grid = TimeGrid::new(n_steps)?;
        let rep = girsanov_bound(&model, &coupling, &grid, 4, n, key.substream(i as u64))?;
        println!(
            "{n_steps:>8} {:>10.5} {:>10.5e} +/- {:.1e}",
            grid.h(),
            rep.value,
            rep.stderr
        );
        points.push((grid.h(), rep.value, rep.stderr));
    }

    let fit = fit_slope(&points)?;
    println!(
        "\nlog-log slope: {:.3} +/- {:.3} (1 = first order in h)",
        fit.slope, fit.half_width
    );
    Ok(())
}
