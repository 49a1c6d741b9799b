//! Learns the energy of a harmonic oscillator from sampled transitions and
//! rolls the learned dynamics forward.

use anyhow::Result;
use hamsplat::autodiff::{adam_step, AdamState, Tape, Tensor, Var};
use hamsplat::hnn::{canonical_loss, Activation, Mlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (n, dt) = (500, 0.015);
    let (s, c) = f64::sin_cos(dt);
    let mut cols = [vec![], vec![], vec![], vec![]];
    for _ in 0..n {
        let (q, p): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let (q1, p1) = (c * q + s * p, c * p - s * q);
        for (col, v) in cols.iter_mut().zip([q, p, (q1 - q) / dt, (p1 - p) / dt]) {
            col.push(v);
        }
    }
    let data = cols.map(|c| Tensor::new(&[n, 1], c).expect("column"));

    let mut energy = Mlp::new(&[2, 32, 32, 1], Activation::Tanh, &mut rng);
    let mut states: Vec<AdamState> = energy
        .params()
        .iter()
        .map(|p| AdamState::new(p.shape()))
        .collect();
    for step in 0..=1000 {
        let tape = Tape::unchecked();
        let vars: Vec<Var> = energy
            .params()
            .iter()
            .map(|p| tape.leaf(p.clone()))
            .collect();
        let [q, p, dq, dp] = [0, 1, 2, 3].map(|i| tape.constant(data[i].clone()));
        let loss = canonical_loss(|x| energy.forward(&vars, x), q, p, dq, dp)?;
        if step % 200 == 0 {
            println!("step {step:>4}  canonical loss {:.4e}", loss.item()?);
        }
        let grads = tape.grad(loss, &vars)?.values();
        for ((w, g), st) in energy.params_mut().iter_mut().zip(&grads).zip(&mut states) {
            *w = adam_step(w, g, st, 1e-2)?;
        }
    }

    // Integrate the learned field with RK4 from (1, 0); true energy is 0.5.
    let field = |q: f64, p: f64| -> Result<(f64, f64)> {
        let tape = Tape::unchecked();
        let vars: Vec<Var> = energy
            .params()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let x = tape.leaf(Tensor::new(&[1, 2], vec![q, p])?);
        let g = tape
            .grad(energy.forward(&vars, x)?.sum()?, &[x])?
            .values()
            .remove(0);
        Ok((g.data()[1], -g.data()[0]))
    };
    let (mut q, mut p, h) = (1.0f64, 0.0f64, 0.1);
    for step in 1..=500 {
        let k1 = field(q, p)?;
        let k2 = field(q + 0.5 * h * k1.0, p + 0.5 * h * k1.1)?;
        let k3 = field(q + 0.5 * h * k2.0, p + 0.5 * h * k2.1)?;
        let k4 = field(q + h * k3.0, p + h * k3.1)?;
        q += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        p += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        if step % 100 == 0 {
            println!(
                "t {:>5.1}  energy {:.5}",
                step as f64 * h,
                0.5 * (q * q + p * p)
            );
        }
    }
    Ok(())
}
