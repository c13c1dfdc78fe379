//! Evaluate the closed-form drift of a mixture coupling next to its
//! self-normalized importance-sampling estimate at a handful of probe
//! points, with the standard errors and the effective sample size of
//! the weights.
//!
//!     cargo run --example exact_vs_mc_drift

use nalgebra::{DMatrix, DVector};

use dfm::drift::{exact_drift, mc_drift};
use dfm::interpolant::InterpolantLaw;
use dfm::model::{Coupling, GaussianMixture};
use dfm::rng::StreamKey;

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
    let law = InterpolantLaw::new(coupling.clone());
    let key = StreamKey::root(23);
    let n_inner = 20_000;

    println!(
        "{:>5} {:>8} {:>12} {:>22} {:>8}",
        "t", "x", "exact", "monte carlo", "ess"
    );
    for (i, t) in [0.2, 0.5, 0.8].into_iter().enumerate() {
        for j in 0..2u64 {
            let mut rng = key.label("probe").substream(i as u64 * 2 + j).rng();
            let x = law.sample_at_one(t, &mut rng);
            let b = exact_drift(&coupling, t, &x)?;
            let mc = mc_drift(&coupling, t, &x, n_inner, key.label("mc").substream(i as u64 * 2 + j))?;
            println!(
                "{t:>5} {:>8.3} {:>12.5} {:>12.5} +/- {:.5} {:>8.0}{}",
                x[0],
                b[0],
                mc.value[0],
                mc.stderr[0],
                mc.ess,
                if mc.reliable() { "" } else { "  (unreliable)" }
            );
        }
    }
    Ok(())
}
