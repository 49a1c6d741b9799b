//! Queries a multi-resolution hex-plane encoder and shows how features vary
//! along space and time.

use anyhow::Result;
use hamsplat::hexplane::{HexPlaneConfig, HexPlaneEncoder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let cfg = HexPlaneConfig {
        base_resolution: 16,
        upsampling: vec![2],
        time_resolution: 10,
        channels: 4,
    };
    println!("spatial resolutions {:?}", cfg.spatial_resolutions());
    println!("feature dim {}", cfg.feature_dim());
    let enc = HexPlaneEncoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    let base = enc.encode([0.5, 0.5, 0.5, 0.5]);
    for (label, q) in [
        ("same point", [0.5, 0.5, 0.5, 0.5]),
        ("moved in x", [0.55, 0.5, 0.5, 0.5]),
        ("later in time", [0.5, 0.5, 0.5, 0.9]),
        ("outside (clamped)", [1.4, 0.5, 0.5, 0.5]),
    ] {
        let f = enc.encode(q);
        let d = f
            .iter()
            .zip(&base)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        println!("{label:<18} |f - f0| {d:.5}");
    }
    println!("clamped queries {}", enc.clamp_count());
    println!("total variation {:.5}", enc.tv_loss());
    Ok(())
}
