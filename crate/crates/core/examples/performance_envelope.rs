//! Stall speed and turn radius for the indoor airframe, checked against a
//! banked-turn rollout of the dynamics model.

use std::f64::consts::PI;

use falconwing::dynamics::{
    check_envelope, min_airspeed, min_turn_radius, step, trim_throttle, AirframeConfig, Arena,
    Control, DynParams, State,
};
use nalgebra::Vector3;

fn main() {
    println!("{:>8} {:>12} {:>16}", "mass kg", "v_min m/s", "R(30 deg) m");
    for mass in [0.10, 0.15, 0.20, 0.30] {
        let cfg = AirframeConfig::umx().with_mass(mass);
        let v = min_airspeed(&cfg);
        println!(
            "{mass:>8.2} {v:>12.3} {:>16.3}",
            min_turn_radius(&cfg, v, PI / 6.0)
        );
    }

    // Hold 25 degrees of bank at 8 m/s and measure how far the turn center sits.
    let params = DynParams::reference();
    let bank = 25f64.to_radians();
    let aileron = bank * params.k_roll_damp / params.k_roll_aileron;
    let mut s = State {
        roll: bank,
        ..State::level(Vector3::new(0.0, 0.0, 2.0), 0.0, 8.0)
    };
    let (mut min_y, mut max_y) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        s = step(
            &params,
            &s,
            &Control::new(trim_throttle(&params, 8.0, 0.0), aileron, 0.0, s.yaw),
            0.01,
        );
        min_y = min_y.min(s.position.y);
        max_y = max_y.max(s.position.y);
    }
    let predicted = min_turn_radius(&AirframeConfig::umx(), s.speed(), s.roll);
    println!(
        "banked rollout diameter/2 = {:.3} m, V^2/(g tan phi) = {predicted:.3} m",
        (max_y - min_y) / 2.0
    );

    let arena = Arena::indoor();
    let slow = State::level(arena.center(), 0.0, 5.0);
    println!(
        "envelope check at 5 m/s: {:?}",
        check_envelope(&AirframeConfig::umx(), &slow, &arena)
    );
}
