//! Check, by simulation, that the diffusion with the closed-form drift
//! reproduces the interpolation's marginals: integrate the SDE on a
//! fine grid, then compare means and covariance diagonals at a few
//! times against direct draws from the interpolation law.
//!
//!     cargo run --example verify_marginals

use nalgebra::{DMatrix, DVector};

use dfm::interpolant::InterpolantLaw;
use dfm::model::{Coupling, GaussianMixture};
use dfm::rng::StreamKey;
use dfm::sampler::{reference_markov, TimeGrid};
use dfm::util::MeanVar;

fn coord_stats(samples: &[DVector<f64>], i: usize) -> (f64, f64, f64) {
    let mut mv = MeanVar::new();
    for x in samples {
        mv.push(x[i]);
    }
    (mv.mean(), mv.stderr(), mv.variance())
}

fn main() -> dfm::Result<()> {
    let nu = GaussianMixture::new(
        vec![0.6, 0.4],
        vec![
            DVector::from_vec(vec![1.2, 0.8]),
            DVector::from_vec(vec![-1.0, -0.5]),
        ],
        vec![
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]),
            DMatrix::from_row_slice(2, 2, &[0.4, -0.05, -0.05, 0.6]),
        ],
    )?;
    let coupling = Coupling::independent(GaussianMixture::standard(2), nu)?;
    let law = InterpolantLaw::new(coupling.clone());

    let n = 20_000;
    let key = StreamKey::root(11);
    let grid = TimeGrid::new(1000)?;
    let paths = reference_markov(&coupling, &grid, n, key.label("sde"))?;

    println!("{:>5} {:>5} {:>22} {:>22} {:>6}", "t", "coord", "sde mean", "direct mean", "z");
    for (ti, t) in [0.25, 0.5, 0.75].into_iter().enumerate() {
        let sde: Vec<DVector<f64>> = paths
            .iter()
            .map(|p| p.state_at(t).expect("recorded knot").clone())
            .collect();
        let direct = law.sample_at(t, n, key.label("direct").substream(ti as u64))?;
        for i in 0..2 {
            let (ma, sa, va) = coord_stats(&sde, i);
            let (mb, sb, vb) = coord_stats(&direct, i);
            let z = (ma - mb).abs() / (sa * sa + sb * sb).sqrt();
            println!(
                "{t:>5} {i:>5} {:>13.4} +/- {sa:.4} {:>13.4} +/- {sb:.4} {z:>6.2}",
                ma, mb
            );
            let _ = (va, vb);
        }
    }
    println!("\nz-scores should hover around 1; the SDE used h = {}", grid.h());
    Ok(())
}
