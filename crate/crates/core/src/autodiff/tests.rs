use std::rc::Rc;

use super::*;
use crate::testutil::{assert_close, fd_grad, random_tensor, rng};

type UnaryBuilder = for<'t> fn(Var<'t>) -> Result<Var<'t>, AutodiffError>;

#[test]
fn forward_examples() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(&[-1.0, 2.0]));
    assert_eq!(x.relu().unwrap().value().data(), &[0.0, 2.0]);

    let v = tape.leaf(Tensor::new(&[3, 1], vec![4.0, -5.0, 6.0]).unwrap());
    let eye = tape.constant(Tensor::eye(3));
    assert_eq!(eye.matmul(v).unwrap().value(), v.value());

    let z = tape.leaf(Tensor::zeros(&[3]));
    assert_eq!(z.exp().unwrap().sum().unwrap().item().unwrap(), 3.0);
}

#[test]
fn shape_errors_name_the_op() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[2, 3]));
    let b = tape.leaf(Tensor::zeros(&[2, 3]));
    let err = a.matmul(b).unwrap_err();
    assert_eq!(
        err,
        AutodiffError::ShapeMismatch {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    let c = tape.leaf(Tensor::zeros(&[3]));
    assert!(matches!(
        a.add(c),
        Err(AutodiffError::ShapeMismatch { op: "add", .. })
    ));
}

#[test]
fn grad_of_squared_norm() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(&[1.0, 2.0]));
    let f = x.mul(x).unwrap().sum().unwrap();
    let g = tape.grad(f, &[x]).unwrap();
    assert_eq!(g.grads[0].value().data(), &[2.0, 4.0]);
    assert_eq!(g.detached, vec![false]);
}

#[test]
fn constant_output_gives_zero_and_flags_detached() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(&[1.0, 2.0]));
    let c = tape.scalar(7.0);
    let g = tape.grad(c, &[x]).unwrap();
    assert_eq!(g.grads[0].value().data(), &[0.0, 0.0]);
    assert_eq!(g.detached, vec![true]);
}

#[test]
fn non_scalar_output_is_rejected() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(&[1.0, 2.0]));
    let y = x.sin().unwrap();
    assert!(matches!(
        tape.grad(y, &[x]),
        Err(AutodiffError::NotScalar { .. })
    ));
}

#[test]
fn sum_of_sines_matches_finite_differences() {
    let mut r = rng(1);
    let x0 = random_tensor(&mut r, &[7], -3.0, 3.0);
    let tape = Tape::new();
    let x = tape.leaf(x0.clone());
    let f = x.sin().unwrap().sum().unwrap();
    let g = tape.grad(f, &[x]).unwrap().grads[0].value();
    let fd = fd_grad(&mut |t| t.data().iter().map(|v| v.sin()).sum(), &x0, 1e-4);
    assert_close(&g, &fd, 1e-5, 1e-7);
}

/// Each elementwise primitive, checked at 20 random points.
#[test]
fn unary_primitives_match_finite_differences() {
    let cases: &[(&str, UnaryBuilder, f64, f64, fn(f64) -> f64)] = &[
        ("tanh", |v| v.tanh(), -2.0, 2.0, f64::tanh),
        ("sin", |v| v.sin(), -3.0, 3.0, f64::sin),
        ("cos", |v| v.cos(), -3.0, 3.0, f64::cos),
        ("exp", |v| v.exp(), -2.0, 2.0, f64::exp),
        ("log", |v| v.ln(), 0.2, 3.0, f64::ln),
        ("sqrt", |v| v.sqrt(), 0.2, 3.0, f64::sqrt),
        ("relu", |v| v.relu(), -2.0, 2.0, |x| x.max(0.0)),
        ("abs", |v| v.abs(), -2.0, 2.0, f64::abs),
        ("neg", |v| v.neg(), -2.0, 2.0, |x| -x),
        (
            "affine",
            |v| v.affine(-1.5, 0.3),
            -2.0,
            2.0,
            |x| -1.5 * x + 0.3,
        ),
        ("recip", |v| v.safe_recip(), 0.5, 3.0, |x| 1.0 / x),
    ];
    let mut r = rng(2);
    for (name, build, lo, hi, scalar) in cases {
        for _ in 0..20 {
            let x0 = random_tensor(&mut r, &[3], *lo, *hi);
            // Stay away from the relu/abs kink.
            if x0.data().iter().any(|v| v.abs() < 1e-3) {
                continue;
            }
            let w = random_tensor(&mut r, &[3], -1.0, 1.0);
            let tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let wv = tape.constant(w.clone());
            let f = build(x).unwrap().mul(wv).unwrap().sum().unwrap();
            let g = tape.grad(f, &[x]).unwrap().grads[0].value();
            let fd = fd_grad(
                &mut |t| {
                    t.data()
                        .iter()
                        .zip(w.data())
                        .map(|(&v, &wi)| scalar(v) * wi)
                        .sum()
                },
                &x0,
                1e-5,
            );
            for (a, b) in g.data().iter().zip(fd.data()) {
                let err = (a - b).abs();
                assert!(
                    err < 1e-7 || err < 1e-5 * a.abs().max(b.abs()),
                    "{name}: {a} vs {b}"
                );
            }
        }
    }
}

/// Structural ops and binary ops, checked through a random scalar probe.
#[test]
fn structural_primitives_match_finite_differences() {
    type Build = for<'t> fn(&'t Tape, Var<'t>, Var<'t>) -> Var<'t>;
    let cases: &[(&str, [usize; 2], [usize; 2], Build)] = &[
        ("add", [3, 4], [3, 4], |_, a, b| a.add(b).unwrap()),
        ("sub", [3, 4], [3, 4], |_, a, b| a.sub(b).unwrap()),
        ("mul", [3, 4], [3, 4], |_, a, b| a.mul(b).unwrap()),
        ("div", [3, 4], [3, 4], |_, a, b| {
            a.div(b.exp().unwrap()).unwrap()
        }),
        ("matmul", [3, 4], [4, 2], |_, a, b| a.matmul(b).unwrap()),
        ("transpose", [3, 4], [3, 4], |_, a, b| {
            a.transpose().unwrap().matmul(b).unwrap()
        }),
        ("add_row", [3, 4], [1, 4], |_, a, b| {
            a.add_row(b.reshape(&[4]).unwrap()).unwrap()
        }),
        ("mul_col", [3, 4], [3, 1], |_, a, b| a.mul_col(b).unwrap()),
        ("sum_rows", [3, 4], [1, 4], |_, a, b| {
            a.sum_rows().unwrap().mul(b.reshape(&[4]).unwrap()).unwrap()
        }),
        ("sum_cols", [3, 4], [3, 1], |_, a, b| {
            a.sum_cols().unwrap().mul(b).unwrap()
        }),
        ("broadcast_rows", [1, 4], [3, 4], |_, a, b| {
            a.reshape(&[4])
                .unwrap()
                .broadcast_rows(3)
                .unwrap()
                .mul(b)
                .unwrap()
        }),
        ("broadcast_cols", [3, 1], [3, 4], |_, a, b| {
            a.broadcast_cols(4).unwrap().mul(b).unwrap()
        }),
        ("slice", [3, 4], [3, 2], |_, a, b| {
            a.slice_cols(1, 3).unwrap().mul(b).unwrap()
        }),
        ("pad", [3, 2], [3, 5], |_, a, b| {
            a.pad_cols(2, 5).unwrap().mul(b).unwrap()
        }),
        ("concat", [3, 2], [3, 3], |_, a, b| {
            concat_cols(&[a, b, a]).unwrap().tanh().unwrap()
        }),
        ("row_norm", [3, 4], [3, 1], |_, a, b| {
            a.row_norm().unwrap().mul(b).unwrap()
        }),
        ("expand", [1, 1], [3, 4], |_, a, b| {
            a.sum().unwrap().expand(&[3, 4]).unwrap().mul(b).unwrap()
        }),
    ];
    let mut r = rng(3);
    for (name, sa, sb, build) in cases {
        for trial in 0..20 {
            let a0 = random_tensor(&mut r, sa, -1.5, 1.5);
            let b0 = random_tensor(&mut r, sb, -1.5, 1.5);
            let eval = |a: &Tensor, b: &Tensor| -> (f64, Vec<Tensor>) {
                let tape = Tape::new();
                let av = tape.leaf(a.clone());
                let bv = tape.leaf(b.clone());
                let out = build(&tape, av, bv);
                // Random fixed probe weights keep the reduction generic.
                let probe = random_tensor(&mut rng(100 + trial), &out.shape(), -1.0, 1.0);
                let f = out.mul(tape.constant(probe)).unwrap().sum().unwrap();
                let g = tape.grad(f, &[av, bv]).unwrap();
                (f.item().unwrap(), g.values())
            };
            let (_, g) = eval(&a0, &b0);
            let fd_a = fd_grad(&mut |t| eval(t, &b0).0, &a0, 1e-5);
            let fd_b = fd_grad(&mut |t| eval(&a0, t).0, &b0, 1e-5);
            for (got, want) in [(&g[0], &fd_a), (&g[1], &fd_b)] {
                for (x, y) in got.data().iter().zip(want.data()) {
                    let err = (x - y).abs();
                    assert!(
                        err < 1e-7 || err < 1e-5 * x.abs().max(y.abs()),
                        "{name}: {x} vs {y}"
                    );
                }
            }
        }
    }
}

#[test]
fn second_order_gradient_norm() {
    // f = ½|x|², g = |∇f|² = |x|², ∇g = 2x exactly.
    let tape = Tape::new();
    let x0 = [0.5, -1.25, 3.0];
    let x = tape.leaf(Tensor::vector(&x0));
    let f = x.square().unwrap().sum().unwrap().scale(0.5).unwrap();
    let grad_f = tape.grad(f, &[x]).unwrap().grads[0];
    let g = grad_f.square().unwrap().sum().unwrap();
    let grad_g = tape.grad(g, &[x]).unwrap().grads[0].value();
    let want: Vec<f64> = x0.iter().map(|v| 2.0 * v).collect();
    assert_eq!(grad_g.data(), want.as_slice());
}

#[test]
fn second_order_through_tanh_network_matches_fd() {
    // g(x) = |∇_x F(x)|² with F a tanh network; differentiate g w.r.t. weights.
    let mut r = rng(4);
    let w0 = random_tensor(&mut r, &[3, 5], -1.0, 1.0);
    let x0 = random_tensor(&mut r, &[2, 3], -1.0, 1.0);
    let eval = |w: &Tensor| -> (f64, Tensor) {
        let tape = Tape::new();
        let wv = tape.leaf(w.clone());
        let x = tape.leaf(x0.clone());
        let f = x.matmul(wv).unwrap().tanh().unwrap().sum().unwrap();
        let gx = tape.grad(f, &[x]).unwrap().grads[0];
        let g = gx.square().unwrap().sum().unwrap();
        let gw = tape.grad(g, &[wv]).unwrap().grads[0].value();
        (g.item().unwrap(), gw)
    };
    let (_, gw) = eval(&w0);
    let fd = fd_grad(&mut |w| eval(w).0, &w0, 1e-5);
    assert_close(&gw, &fd, 1e-5, 1e-7);
}

#[test]
fn backward_visits_each_node_once() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(&[0.3, 0.7]));
    let a = x.sin().unwrap();
    let b = x.exp().unwrap();
    let c = a.mul(b).unwrap().add(a).unwrap();
    let f = c.sum().unwrap();
    let _ = tape.grad(f, &[x]).unwrap();
    let stats = tape.backward_stats();
    assert_eq!(stats.max_visits_per_node, 1);
    assert_eq!(stats.visited, stats.relevant);
    assert_eq!(stats.relevant, 6);
}

#[test]
fn finite_check_rejects_nan() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(&[-1.0]));
    assert!(matches!(
        x.ln(),
        Err(AutodiffError::NonFinite { op: "log" })
    ));
    let loose = Tape::unchecked();
    let y = loose.leaf(Tensor::vector(&[-1.0]));
    assert!(y.ln().unwrap().value().data()[0].is_nan());
}

struct Doubler;

impl CustomOp for Doubler {
    fn name(&self) -> &'static str {
        "doubler"
    }

    fn backward(
        &self,
        _inputs: &[Tensor],
        _output: &Tensor,
        grad_output: &Tensor,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>, AutodiffError> {
        Ok(vec![Some(grad_output.map(|g| 2.0 * g))])
    }
}

#[test]
fn custom_ops_are_first_order_only() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(&[1.0, 2.0]));
    let y = tape
        .custom(Rc::new(Doubler), &[x], x.value().map(|v| 2.0 * v))
        .unwrap();
    let f = y.square().unwrap().sum().unwrap();
    let gx = tape.grad(f, &[x]).unwrap().grads[0];
    // d/dx (2x)² = 8x
    assert_eq!(gx.value().data(), &[8.0, 16.0]);
    let g2 = gx.sum().unwrap();
    assert!(matches!(
        tape.grad(g2, &[x]),
        Err(AutodiffError::NotTwiceDifferentiable { op: "doubler" })
    ));
}

#[test]
fn foreign_vars_are_rejected() {
    let t1 = Tape::new();
    let t2 = Tape::new();
    let a = t1.leaf(Tensor::vector(&[1.0]));
    let b = t2.leaf(Tensor::vector(&[1.0]));
    assert_eq!(a.add(b).unwrap_err(), AutodiffError::ForeignVar);
}
