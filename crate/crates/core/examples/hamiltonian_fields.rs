//! Builds a deformation decoder and checks its two velocity fields: the
//! conservative one has a symmetric Jacobian, the solenoidal one has zero
//! divergence.

use anyhow::Result;
use hamsplat::autodiff::{Tape, Tensor};
use hamsplat::hnn::{DecoderConfig, DeformDecoder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = DecoderConfig {
        width: 16,
        head_hidden: 16,
        ..Default::default()
    };
    let w = cfg.width;
    let decoder = DeformDecoder::new(cfg, 8, &mut rng)?;
    let fields = |h: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let tape = Tape::new();
        let f = decoder
            .bind(&tape, false)
            .vector_fields(tape.constant(Tensor::new(&[1, w], h.to_vec())?))?;
        Ok((f.v_c.value().into_vec(), f.v_s.value().into_vec()))
    };
    let h: Vec<f64> = (0..w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let eps = 1e-5;
    let mut jac = vec![vec![0.0; w]; w];
    let mut div = 0.0;
    for j in 0..w {
        let (mut a, mut b) = (h.clone(), h.clone());
        a[j] += eps;
        b[j] -= eps;
        let ((ca, sa), (cb, sb)) = (fields(&a)?, fields(&b)?);
        for i in 0..w {
            jac[i][j] = (ca[i] - cb[i]) / (2.0 * eps);
        }
        div += (sa[j] - sb[j]) / (2.0 * eps);
    }
    let asym = (0..w)
        .flat_map(|i| (0..w).map(move |j| (i, j)))
        .map(|(i, j)| (jac[i][j] - jac[j][i]).abs())
        .fold(0.0, f64::max);
    let (vc, vs) = fields(&h)?;
    let dot: f64 = vc.iter().zip(&vs).map(|(a, b)| a * b).sum();
    println!("latent width {w}");
    println!("max |J - J^T| of v_c   {asym:.2e}");
    println!("divergence of v_s      {div:.2e}");
    println!("v_c · v_s at h         {dot:.4} (no pointwise orthogonality is implied)");
    Ok(())
}
