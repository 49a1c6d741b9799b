//! Position Verlet against explicit Euler on a unit oscillator, and the
//! rotation-increment clamp.

use anyhow::Result;
use hamsplat::gauss::{quat_angle, quat_from_axis_angle};
use hamsplat::physics::{clamp_rotation, verlet_position};

fn main() -> Result<()> {
    let dt = 0.01;
    let (mut xv, mut vv) = (1.0f64, 0.0f64);
    let (mut xe, mut ve) = (1.0f64, 0.0f64);
    println!("{:>7} {:>12} {:>12}", "steps", "Verlet dE", "Euler dE");
    for step in 1..=10_000 {
        let a0 = -xv;
        xv = verlet_position([xv, 0.0, 0.0], [vv, 0.0, 0.0], [a0, 0.0, 0.0], dt)[0];
        vv += 0.5 * dt * (a0 - xv);
        let a = -xe;
        xe += dt * ve;
        ve += dt * a;
        if step % 2000 == 0 {
            let ev = 0.5 * (xv * xv + vv * vv);
            let ee = 0.5 * (xe * xe + ve * ve);
            println!(
                "{step:>7} {:>11.4}% {:>11.2}%",
                (ev / 0.5 - 1.0) * 100.0,
                (ee / 0.5 - 1.0) * 100.0
            );
        }
    }
    let phi_max = 0.35;
    println!("\nrotation clamp, phi_max = {phi_max}");
    for angle in [0.001, 0.1, 0.35, 1.0, 3.0] {
        let dr = quat_from_axis_angle([0.0, 0.0, 1.0], angle);
        let out = clamp_rotation(dr, phi_max)?;
        println!("{angle:>6.3} rad -> {:.5} rad", quat_angle(out));
    }
    Ok(())
}
