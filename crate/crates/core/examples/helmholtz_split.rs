//! Splits a random periodic field into conservative, solenoidal and constant
//! parts and checks each part with finite differences.

use anyhow::Result;
use hamsplat::helmholtz::{curl, decompose, divergence, GridField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let n = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let values = (0..n * n * n)
        .map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0)))
        .collect();
    let f = GridField::new([n; 3], values)?;
    let d = decompose(&f);
    let back = d.conservative.add(&d.solenoidal)?.offset(d.mean);
    let max_div = divergence(&d.solenoidal)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    println!("|F|            {:.4}", f.l2_norm());
    println!(
        "|F_c|, |F_s|   {:.4}, {:.4}",
        d.conservative.l2_norm(),
        d.solenoidal.l2_norm()
    );
    println!(
        "mean           {:?}",
        d.mean.map(|m| (m * 1e4).round() / 1e4)
    );
    println!("reconstruction {:.2e}", f.sub(&back)?.max_norm());
    println!("<F_c, F_s>     {:.2e}", d.conservative.inner(&d.solenoidal));
    println!("max div F_s    {max_div:.2e}");
    println!("max curl F_c   {:.2e}", curl(&d.conservative).max_norm());
    Ok(())
}
