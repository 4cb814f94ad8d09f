//! Generate excitation flights with the reference coefficients, corrupt the
//! states with noise, and recover the coefficients from a doubled guess.

use falconwing::dynamics::DynParams;
use falconwing::rng::SeedTree;
use falconwing::sysid::{
    add_state_noise, excitation_flights, fit_params, ExcitationConfig, StateActionDataset,
};

fn main() {
    let truth = DynParams::reference();
    let tree = SeedTree::new(42);
    let flights = excitation_flights(
        &truth,
        &ExcitationConfig::default(),
        &mut tree.stream("excitation"),
    );
    let mut noise = tree.stream("measurement-noise");

    for sigma in [0.0, 0.01] {
        let noisy: Vec<_> = flights
            .iter()
            .map(|f| add_state_noise(f, sigma, &mut noise))
            .collect();
        let ds = StateActionDataset::from_trajectories(&noisy);
        let fit = fit_params(&ds, &truth.scaled(2.0)).expect("fit succeeds on excitation data");
        println!(
            "sigma = {sigma}: {} transitions, {} iterations, sse {:.3e}",
            ds.len(),
            fit.iterations,
            fit.sse
        );
        for ((name, est), (t, se)) in DynParams::NAMES
            .iter()
            .zip(fit.params.to_array())
            .zip(truth.to_array().into_iter().zip(fit.per_param_stderr))
        {
            println!(
                "  {name:<15} {est:>9.5}  (true {t}, stderr {se:.1e}, err {:+.3}%)",
                100.0 * (est - t) / t
            );
        }
    }
}
