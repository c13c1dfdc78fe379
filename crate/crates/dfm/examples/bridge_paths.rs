//! Simulate a few doubly pinned bridge paths between a coupled pair of
//! endpoints and print them as CSV, then evaluate the start-pinned
//! drift (closed form and Monte Carlo) at one interior point.
//!
//!     cargo run --example bridge_paths > paths.csv

use nalgebra::DVector;

use dfm::interpolant::InterpolantLaw;
use dfm::model::{Coupling, GaussianMixture};
use dfm::rng::StreamKey;

fn main() -> dfm::Result<()> {
    let mu = GaussianMixture::standard(2);
    let nu = GaussianMixture::isotropic(DVector::from_vec(vec![2.0, -1.0]), 0.25)?;
    let coupling = Coupling::independent(mu, nu)?;
    let law = InterpolantLaw::new(coupling.clone());
    let key = StreamKey::root(31);

    let mut rng = key.label("endpoints").rng();
    let (x0, x1) = coupling.sample_pair_one(&mut rng);
    eprintln!("bridging {:?} -> {:?}", x0.as_slice(), x1.as_slice());

    let n_steps = 200;
    println!("path,k,t,x_0,x_1");
    for path in 0..3u64 {
        let mut path_rng = key.label("paths").substream(path).rng();
        let states = law.pinned_simulate(&x0, &x1, n_steps, &mut path_rng)?;
        for (k, y) in states.iter().enumerate() {
            let t = k as f64 / n_steps as f64;
            println!("{path},{k},{t},{},{}", y[0], y[1]);
        }
    }

    // The start-pinned drift at an interior point, both ways.
    let t = 0.5;
    let mut mid_rng = key.label("midpoint").rng();
    let x = law.sample_at_one(t, &mut mid_rng);
    let closed = law.forward_pinned_drift(&x0, t, &x)?;
    let mc = law.forward_pinned_drift_mc(&x0, t, &x, 50_000, key.label("mc"))?;
    eprintln!(
        "start-pinned drift at t = {t}: closed {:?}, monte carlo {:?} (ess {:.0})",
        closed.as_slice(),
        mc.value.as_slice(),
        mc.ess
    );
    Ok(())
}
