//! How the equilibrium masks respond to distance from the spatial anchor and
//! from the temporal anchor.

use anyhow::Result;
use hamsplat::bed::{
    blend_position, boltzmann_mask, deviations, spatial_temporal_energy, temporal_energy, BedConfig,
};

fn main() -> Result<()> {
    let cfg = BedConfig::for_diagonal(2.4);
    println!("{cfg:?}");
    let mu_eq = [0.0, 0.0, 0.0];
    println!("{:>8} {:>6} {:>10} {:>8}", "dist", "t", "energy", "mask");
    for dist in [0.0, 0.1, 0.3, 0.6] {
        for t in [0.5, 0.7, 1.0] {
            let (dd, dtau) = deviations([dist, 0.0, 0.0], mu_eq, t, 0.5, &cfg);
            let e = spatial_temporal_energy(dd, dtau, &cfg);
            println!(
                "{dist:>8.2} {t:>6.2} {e:>10.4} {:>8.4}",
                boltzmann_mask(e, &cfg)
            );
        }
    }
    let m = boltzmann_mask(temporal_energy(0.9, 0.5, &cfg), &cfg);
    println!("scale mask at t=0.9, t_eq=0.5: {m:.4}");
    let mu = [0.2, 0.0, 0.0];
    let moved = [0.5, 0.1, 0.0];
    for m in [1.0, 0.5, cfg.gamma] {
        println!("blend with M={m:.2}: {:?}", blend_position(mu, moved, m)?);
    }
    Ok(())
}
