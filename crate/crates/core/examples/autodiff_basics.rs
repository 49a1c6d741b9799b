//! Reverse-mode gradients on a tape, then Adam on a small least-squares fit.

use anyhow::Result;
use hamsplat::autodiff::{adam_step, AdamState, Tape, Tensor};

fn main() -> Result<()> {
    // f(x) = sin(x)·x², f'(x) = cos(x)·x² + 2x·sin(x)
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(&[0.3, 1.1, -2.0]));
    let f = x.sin()?.mul(x.square()?)?.sum()?;
    let g = tape.grad(f, &[x])?.values().remove(0);
    for (xi, gi) in [0.3f64, 1.1, -2.0].iter().zip(g.data()) {
        let want = xi.cos() * xi * xi + 2.0 * xi * xi.sin();
        println!("x {xi:>5.2}  tape {gi:>9.6}  analytic {want:>9.6}");
    }

    // Fit y = 2x - 1 with a 1→1 linear map.
    let xs = Tensor::new(&[8, 1], (0..8).map(|i| i as f64 / 4.0).collect())?;
    let ys = xs.map(|v| 2.0 * v - 1.0);
    let mut w = Tensor::new(&[1, 1], vec![0.0])?;
    let mut b = Tensor::vector(&[0.0]);
    let (mut sw, mut sb) = (AdamState::new(w.shape()), AdamState::new(b.shape()));
    for step in 0..=600 {
        let tape = Tape::new();
        let (wv, bv) = (tape.leaf(w.clone()), tape.leaf(b.clone()));
        let pred = tape.constant(xs.clone()).matmul(wv)?.add_row(bv)?;
        let loss = pred.sub(tape.constant(ys.clone()))?.square()?.mean()?;
        if step % 150 == 0 {
            println!("step {step:>3}  loss {:.3e}", loss.item()?);
        }
        let g = tape.grad(loss, &[wv, bv])?.values();
        w = adam_step(&w, &g[0], &mut sw, 0.05)?;
        b = adam_step(&b, &g[1], &mut sb, 0.05)?;
    }
    println!("w {:.4}  b {:.4}", w.data()[0], b.data()[0]);
    Ok(())
}
