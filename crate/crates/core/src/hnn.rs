//! Hamiltonian deformation decoder.
//!
//! Features are mapped by a ReLU MLP to a latent `h = (q, p) ∈ R^{2d}`.
//! Two scalar potentials produce the fields
//!
//! ```text
//! v_c = ∇F₁(h)                 curl-free
//! v_s = (∂F₂/∂p, −∂F₂/∂q)       divergence-free
//! v   = v_c + v_s
//! ```
//!
//! and three bias-free linear adapters turn `v` into attribute offsets.
//! The gradients are recorded on the tape, so a training loss built from
//! `v` backpropagates into `F₁`, `F₂`, the MLP and the encoder.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{concat_cols, AutodiffError, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HnnError {
    #[error("latent width must be even, got {0}")]
    OddWidth(usize),
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("expected {expected} parameter tensors, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("{0} decoders have no potential fields")]
    NoFields(&'static str),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

type Result<T> = std::result::Result<T, HnnError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Fully connected network; the last layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<Tensor>,
}

impl Mlp {
    /// Xavier-uniform weights and zero biases.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        let mut params = Vec::with_capacity(2 * (sizes.len() - 1));
        for w in sizes.windows(2) {
            let a = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let data = (0..w[0] * w[1]).map(|_| rng.gen_range(-a..a)).collect();
            params.push(Tensor::new(&[w[0], w[1]], data).expect("shape"));
            params.push(Tensor::zeros(&[w[1]]));
        }
        Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        }
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        let params = sizes
            .windows(2)
            .flat_map(|w| [Tensor::zeros(&[w[0], w[1]]), Tensor::zeros(&[w[1]])])
            .collect();
        Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least one layer")
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Sets the last layer's weights and bias to zero.
    pub fn zero_output_layer(&mut self) {
        let n = self.params.len();
        for p in &mut self.params[n - 2..] {
            *p = Tensor::zeros(p.shape());
        }
    }

    /// Forward pass on `[n, input_dim]` with parameters bound as `vars`.
    pub fn forward<'t>(&self, vars: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let width = x.shape().last().copied().unwrap_or(0);
        if width != self.input_dim() {
            return Err(HnnError::DimMismatch {
                what: "mlp input",
                expected: self.input_dim(),
                got: width,
            });
        }
        let mut y = x;
        for l in 0..self.layers() {
            y = y.matmul(vars[2 * l])?.add_row(vars[2 * l + 1])?;
            if l + 1 < self.layers() {
                y = match self.activation {
                    Activation::Relu => y.relu()?,
                    Activation::Tanh => y.tanh()?,
                };
            }
        }
        Ok(y)
    }

    /// Plain forward pass for one input row.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for l in 0..self.layers() {
            let (w, b) = (&self.params[2 * l], &self.params[2 * l + 1]);
            let (k, n) = (self.sizes[l], self.sizes[l + 1]);
            let mut out = b.data().to_vec();
            for (i, &yi) in y.iter().enumerate().take(k) {
                for (o, &wv) in out.iter_mut().zip(&w.data()[i * n..(i + 1) * n]) {
                    *o += yi * wv;
                }
            }
            if l + 1 < self.layers() {
                for o in &mut out {
                    *o = match self.activation {
                        Activation::Relu => o.max(0.0),
                        Activation::Tanh => o.tanh(),
                    };
                }
            }
            y = out;
        }
        y
    }
}

/// How the latent becomes a velocity field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    /// `v = ∇F₁ + J∇F₂`, force `A_mu(∇F₁)`.
    Hamiltonian,
    /// `v = h·L` for a learned square matrix `L`; no force.
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub depth: usize,
    pub width: usize,
    pub head_hidden: usize,
    pub field: FieldKind,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            width: 64,
            head_hidden: 64,
            field: FieldKind::Hamiltonian,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.width % 2 != 0 {
            return Err(HnnError::OddWidth(self.width));
        }
        if self.depth == 0 || self.head_hidden == 0 {
            return Err(HnnError::DimMismatch {
                what: "decoder depth/head size",
                expected: 1,
                got: 0,
            });
        }
        Ok(())
    }
}

/// MLP baseline, field heads and attribute adapters.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformDecoder {
    config: DecoderConfig,
    mlp: Mlp,
    f1: Mlp,
    f2: Mlp,
    linear_head: Tensor,
    a_mu: Tensor,
    a_s: Tensor,
    a_r: Tensor,
}

/// Adapter init range, relative to `1/√W`.
const ADAPTER_INIT: f64 = 0.1;

impl DeformDecoder {
    pub fn new(config: DecoderConfig, feature_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let mut sizes = vec![feature_dim];
        sizes.extend(std::iter::repeat(w).take(config.depth));
        let mlp = Mlp::new(&sizes, Activation::Relu, rng);
        let head = [w, config.head_hidden, 1];
        let a = (6.0 / (2 * w) as f64).sqrt();
        let (f1, f2, linear_head) = match config.field {
            FieldKind::Hamiltonian => (
                Mlp::new(&head, Activation::Tanh, rng),
                Mlp::new(&head, Activation::Tanh, rng),
                Tensor::zeros(&[0]),
            ),
            FieldKind::Linear => (
                Mlp::zeros(&[w, 1], Activation::Tanh),
                Mlp::zeros(&[w, 1], Activation::Tanh),
                uniform(rng, &[w, w], a),
            ),
        };
        let s = ADAPTER_INIT / (w as f64).sqrt();
        Ok(Self {
            a_mu: uniform(rng, &[w, 3], s),
            a_s: uniform(rng, &[w, 3], s),
            a_r: uniform(rng, &[w, 4], s),
            config,
            mlp,
            f1,
            f2,
            linear_head,
        })
    }

    /// A decoder whose field heads and adapters are zero: it never moves
    /// anything.
    pub fn inert(config: DecoderConfig, feature_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut d = Self::new(config, feature_dim, rng)?;
        d.f1.zero_output_layer();
        d.f2.zero_output_layer();
        d.linear_head = Tensor::zeros(d.linear_head.shape());
        for a in [&mut d.a_mu, &mut d.a_s, &mut d.a_r] {
            *a = Tensor::zeros(a.shape());
        }
        Ok(d)
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn heads_mut(&mut self) -> (&mut Mlp, &mut Mlp) {
        (&mut self.f1, &mut self.f2)
    }

    pub fn adapters_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.a_mu, &mut self.a_s, &mut self.a_r]
    }

    /// Every parameter tensor in a fixed order.
    pub fn params(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = self.mlp.params().to_vec();
        match self.config.field {
            FieldKind::Hamiltonian => {
                out.extend_from_slice(self.f1.params());
                out.extend_from_slice(self.f2.params());
            }
            FieldKind::Linear => out.push(self.linear_head.clone()),
        }
        out.extend([self.a_mu.clone(), self.a_s.clone(), self.a_r.clone()]);
        out
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        let current = self.params();
        if params.len() != current.len() {
            return Err(HnnError::ParamCount {
                expected: current.len(),
                got: params.len(),
            });
        }
        for (new, old) in params.iter().zip(&current) {
            if new.shape() != old.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "set_params",
                    lhs: old.shape().to_vec(),
                    rhs: new.shape().to_vec(),
                }
                .into());
            }
        }
        let mut it = params.into_iter();
        for p in self.mlp.params_mut() {
            *p = it.next().expect("counted");
        }
        match self.config.field {
            FieldKind::Hamiltonian => {
                for p in self.f1.params_mut().iter_mut().chain(self.f2.params_mut()) {
                    *p = it.next().expect("counted");
                }
            }
            FieldKind::Linear => self.linear_head = it.next().expect("counted"),
        }
        self.a_mu = it.next().expect("counted");
        self.a_s = it.next().expect("counted");
        self.a_r = it.next().expect("counted");
        Ok(())
    }

    /// Places the parameters on `tape`, as leaves or as constants.
    pub fn bind<'d, 't>(&'d self, tape: &'t Tape, trainable: bool) -> BoundDecoder<'d, 't> {
        let vars: Vec<Var<'t>> = self
            .params()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p)
                } else {
                    tape.constant(p)
                }
            })
            .collect();
        BoundDecoder {
            decoder: self,
            vars,
        }
    }
}

fn uniform(rng: &mut impl Rng, shape: &[usize], a: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if a > 0.0 { rng.gen_range(-a..a) } else { 0.0 })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// Output of the three adapters plus the force.
#[derive(Clone, Copy, Debug)]
pub struct Deformation<'t> {
    pub dmu: Var<'t>,
    pub ds: Var<'t>,
    pub dr: Var<'t>,
    /// `[n,3]` acceleration; zero for linear decoders.
    pub force: Var<'t>,
}

/// The three fields of a Hamiltonian decoder.
#[derive(Clone, Copy, Debug)]
pub struct Fields<'t> {
    pub v_c: Var<'t>,
    pub v_s: Var<'t>,
    pub v: Var<'t>,
}

/// A decoder whose parameters live on a tape.
pub struct BoundDecoder<'d, 't> {
    decoder: &'d DeformDecoder,
    vars: Vec<Var<'t>>,
}

impl<'t> BoundDecoder<'_, 't> {
    /// Parameter nodes in [`DeformDecoder::params`] order.
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    fn split(&self) -> (&[Var<'t>], &[Var<'t>], &[Var<'t>], [Var<'t>; 3]) {
        let m = self.decoder.mlp.params().len();
        let h = self.decoder.f1.params().len();
        let n = self.vars.len();
        let adapters = [self.vars[n - 3], self.vars[n - 2], self.vars[n - 1]];
        match self.decoder.config.field {
            FieldKind::Hamiltonian => (
                &self.vars[..m],
                &self.vars[m..m + h],
                &self.vars[m + h..m + 2 * h],
                adapters,
            ),
            FieldKind::Linear => (&self.vars[..m], &self.vars[m..m + 1], &[], adapters),
        }
    }

    /// `h = M(f)` for `f: [n, feature_dim]`.
    pub fn latent(&self, f: Var<'t>) -> Result<Var<'t>> {
        self.decoder.mlp.forward(self.split().0, f)
    }

    /// `(v_c, v_s, v)` at latent `h: [n, W]`.
    pub fn vector_fields(&self, h: Var<'t>) -> Result<Fields<'t>> {
        if self.decoder.config.field != FieldKind::Hamiltonian {
            return Err(HnnError::NoFields("linear"));
        }
        let (_, f1, f2, _) = self.split();
        let tape = h.tape();
        let p1 = self.decoder.f1.forward(f1, h)?.sum()?;
        let v_c = tape.grad(p1, &[h])?.grads[0];
        let p2 = self.decoder.f2.forward(f2, h)?.sum()?;
        let g = tape.grad(p2, &[h])?.grads[0];
        let v_s = symplectic(g)?;
        Ok(Fields {
            v_c,
            v_s,
            v: v_c.add(v_s)?,
        })
    }

    /// Adapter outputs `(Δμ, Δs, Δr)` for a field `v: [n, W]`.
    pub fn deform(&self, v: Var<'t>) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
        let [a_mu, a_s, a_r] = self.split().3;
        Ok((v.matmul(a_mu)?, v.matmul(a_s)?, v.matmul(a_r)?))
    }

    /// `A_mu(v_c)`.
    pub fn force(&self, v_c: Var<'t>) -> Result<Var<'t>> {
        Ok(v_c.matmul(self.split().3[0])?)
    }

    /// Latent, fields, adapters and force in one pass.
    pub fn run(&self, f: Var<'t>) -> Result<Deformation<'t>> {
        let h = self.latent(f)?;
        match self.decoder.config.field {
            FieldKind::Hamiltonian => {
                let fields = self.vector_fields(h)?;
                let (dmu, ds, dr) = self.deform(fields.v)?;
                let force = self.force(fields.v_c)?;
                Ok(Deformation { dmu, ds, dr, force })
            }
            FieldKind::Linear => {
                let v = h.matmul(self.split().1[0])?;
                let (dmu, ds, dr) = self.deform(v)?;
                let n = h.shape()[0];
                let force = h.tape().constant(Tensor::zeros(&[n, 3]));
                Ok(Deformation { dmu, ds, dr, force })
            }
        }
    }
}

/// `g·Mᵀ` with `M = [[0, I], [−I, 0]]`: `(g_q, g_p) ↦ (g_p, −g_q)`.
pub fn symplectic<'t>(g: Var<'t>) -> Result<Var<'t>> {
    let w = g.shape()[1];
    if w % 2 != 0 {
        return Err(HnnError::OddWidth(w));
    }
    let d = w / 2;
    Ok(concat_cols(&[
        g.slice_cols(d, w)?,
        g.slice_cols(0, d)?.neg()?,
    ])?)
}

/// `(∂H/∂p, −∂H/∂q)` at `x = (q, p): [n, 2d]`, where `energy` maps `x` to
/// per-row energies `[n, 1]`.
pub fn hamiltonian_field<'t>(
    energy: impl Fn(Var<'t>) -> Result<Var<'t>>,
    x: Var<'t>,
) -> Result<Var<'t>> {
    let h = energy(x)?.sum()?;
    let g = x.tape().grad(h, &[x])?.grads[0];
    symplectic(g)
}

/// Mean over rows of `‖∂H/∂p − dq/dt‖ + ‖∂H/∂q + dp/dt‖`.
pub fn canonical_loss<'t>(
    energy: impl Fn(Var<'t>) -> Result<Var<'t>>,
    q: Var<'t>,
    p: Var<'t>,
    dq: Var<'t>,
    dp: Var<'t>,
) -> Result<Var<'t>> {
    let d = q.shape()[1];
    for (what, v) in [("p", p), ("dq/dt", dq), ("dp/dt", dp)] {
        let got = v.shape()[1];
        if got != d {
            return Err(HnnError::DimMismatch {
                what,
                expected: d,
                got,
            });
        }
    }
    let x = concat_cols(&[q, p])?;
    let h = energy(x)?.sum()?;
    let g = x.tape().grad(h, &[x])?.grads[0];
    let (dh_dq, dh_dp) = (g.slice_cols(0, d)?, g.slice_cols(d, 2 * d)?);
    let a = dh_dp.sub(dq)?.row_norm()?;
    let b = dh_dq.add(dp)?.row_norm()?;
    Ok(a.add(b)?.mean()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::adam_step;
    use crate::autodiff::AdamState;
    use crate::testutil::{assert_close, fd_grad, random_tensor, rng};

    fn small_config() -> DecoderConfig {
        DecoderConfig {
            depth: 2,
            width: 8,
            head_hidden: 6,
            field: FieldKind::Hamiltonian,
        }
    }

    fn row<'t>(t: &'t Tape, data: &[f64]) -> Var<'t> {
        t.leaf(Tensor::new(&[1, data.len()], data.to_vec()).unwrap())
    }

    #[test]
    fn construction_rejects_odd_width() {
        let cfg = DecoderConfig {
            width: 7,
            ..small_config()
        };
        assert_eq!(
            DeformDecoder::new(cfg, 4, &mut rng(60)).unwrap_err(),
            HnnError::OddWidth(7)
        );
    }

    #[test]
    fn zero_final_layer_returns_bias() {
        let mut d = DeformDecoder::new(small_config(), 5, &mut rng(61)).unwrap();
        let m = d.mlp_mut();
        let n = m.params().len();
        m.params_mut()[n - 2] = Tensor::zeros(&[8, 8]);
        m.params_mut()[n - 1] = Tensor::vector(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let tape = Tape::new();
        let b = d.bind(&tape, true);
        let h = b.latent(row(&tape, &[0.3, -0.2, 0.9, 0.1, 0.5])).unwrap();
        assert_eq!(h.value().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert!(matches!(
            b.latent(row(&tape, &[0.0; 4])),
            Err(HnnError::DimMismatch {
                expected: 5,
                got: 4,
                ..
            })
        ));
    }

    #[test]
    fn latent_gradient_matches_fd() {
        let d = DeformDecoder::new(small_config(), 5, &mut rng(62)).unwrap();
        let f0 = random_tensor(&mut rng(63), &[1, 5], -1.0, 1.0);
        let eval = |f: &Tensor| {
            let tape = Tape::new();
            let x = tape.leaf(f.clone());
            let h = d.bind(&tape, false).latent(x).unwrap();
            let l = h.square().unwrap().sum().unwrap();
            (
                l.item().unwrap(),
                tape.grad(l, &[x]).unwrap().values().remove(0),
            )
        };
        let want = fd_grad(&mut |f| eval(f).0, &f0, 1e-6);
        assert_close(&eval(&f0).1, &want, 1e-5, 1e-8);
    }

    #[test]
    fn linear_and_quadratic_potentials() {
        let mut d = DeformDecoder::new(small_config(), 5, &mut rng(64)).unwrap();
        // F₁(h) = a·h through the generic gradient path.
        let a = [0.5, -1.0, 2.0, 0.25];
        let tape = Tape::new();
        let x = row(&tape, &[0.3, 0.1, -0.7, 0.4]);
        let weights = tape.constant(Tensor::new(&[4, 1], a.to_vec()).unwrap());
        let lin = x.matmul(weights).unwrap();
        let g = tape.grad(lin.sum().unwrap(), &[x]).unwrap().grads[0];
        assert_eq!(g.value().data(), &a);
        // F₂ = ½‖h‖² ⇒ v_s = (p, −q).
        let vs = hamiltonian_field(quad, x).unwrap();
        assert_eq!(vs.value().data(), &[-0.7, 0.4, -0.3, -0.1]);
        // Decoder whose adapters select coordinates.
        let mut sel = vec![0.0; 8 * 3];
        for k in 0..3 {
            sel[k * 3 + k] = 1.0;
        }
        *d.adapters_mut()[0] = Tensor::new(&[8, 3], sel).unwrap();
        let b = d.bind(&tape, false);
        let v = row(&tape, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let (dmu, _, _) = b.deform(v).unwrap();
        assert_eq!(dmu.value().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn deform_is_linear_and_zero_at_zero() {
        let d = DeformDecoder::new(small_config(), 5, &mut rng(65)).unwrap();
        let tape = Tape::new();
        let b = d.bind(&tape, false);
        let (m, s, r) = b.deform(row(&tape, &[0.0; 8])).unwrap();
        for v in [m, s, r] {
            assert!(v.value().data().iter().all(|&x| x == 0.0));
        }
        let v = random_tensor(&mut rng(66), &[1, 8], -1.0, 1.0);
        let (m1, s1, r1) = b.deform(tape.leaf(v.clone())).unwrap();
        let (m2, s2, r2) = b.deform(tape.leaf(v.map(|x| 2.0 * x))).unwrap();
        for (a, b) in [(m1, m2), (s1, s2), (r1, r2)] {
            let twice = a.value().map(|x| 2.0 * x);
            assert_eq!(twice, b.value());
        }
    }

    #[test]
    fn force_is_adapter_of_conservative_field() {
        let d = DeformDecoder::new(small_config(), 5, &mut rng(67)).unwrap();
        let tape = Tape::new();
        let b = d.bind(&tape, false);
        let h = tape.leaf(random_tensor(&mut rng(68), &[3, 8], -1.0, 1.0));
        let fields = b.vector_fields(h).unwrap();
        let force = b.force(fields.v_c).unwrap();
        let direct = fields.v_c.value();
        let a_mu = &d.params()[d.params().len() - 3];
        let want = crate::autodiff::matmul_raw(direct.data(), a_mu.data(), 3, 8, 3);
        assert_eq!(force.value().data(), want.as_slice());
        let sum = fields
            .v_c
            .value()
            .zip_map(&fields.v_s.value(), |a, b| a + b);
        assert_eq!(fields.v.value(), sum);
    }

    #[test]
    fn constant_potential_gives_no_force() {
        let d = DeformDecoder::inert(small_config(), 5, &mut rng(69)).unwrap();
        let tape = Tape::new();
        let b = d.bind(&tape, false);
        let out = b
            .run(tape.leaf(random_tensor(&mut rng(70), &[2, 5], 0.0, 1.0)))
            .unwrap();
        for v in [out.dmu, out.ds, out.dr, out.force] {
            assert!(v.value().data().iter().all(|&x| x == 0.0));
        }
    }

    /// Finite-difference Jacobian of a field `[1,W] -> [1,W]`.
    fn fd_jacobian(field: &dyn Fn(&[f64]) -> Vec<f64>, h: &[f64], eps: f64) -> Vec<Vec<f64>> {
        let w = h.len();
        let mut jac = vec![vec![0.0; w]; w];
        for j in 0..w {
            let (mut a, mut b) = (h.to_vec(), h.to_vec());
            a[j] += eps;
            b[j] -= eps;
            let (fa, fb) = (field(&a), field(&b));
            for i in 0..w {
                jac[i][j] = (fa[i] - fb[i]) / (2.0 * eps);
            }
        }
        jac
    }

    #[test]
    fn field_certificates() {
        let mut r = rng(71);
        for _ in 0..3 {
            let d = DeformDecoder::new(small_config(), 5, &mut r).unwrap();
            let field = |h: &[f64], which: usize| {
                let tape = Tape::new();
                let b = d.bind(&tape, false);
                let f = b.vector_fields(row(&tape, h)).unwrap();
                [f.v_c, f.v_s][which].value().into_vec()
            };
            for _ in 0..3 {
                let h: Vec<f64> = (0..8).map(|_| r.gen_range(-1.0..1.0)).collect();
                let jc = fd_jacobian(&|x| field(x, 0), &h, 1e-5);
                let asym = (0..8)
                    .flat_map(|i| (0..8).map(move |j| (i, j)))
                    .map(|(i, j)| (jc[i][j] - jc[j][i]).abs())
                    .fold(0.0, f64::max);
                assert!(asym < 1e-4, "{asym}");
                let js = fd_jacobian(&|x| field(x, 1), &h, 1e-5);
                let div: f64 = (0..8).map(|i| js[i][i]).sum();
                assert!(div.abs() < 1e-4, "{div}");
            }
        }
    }

    #[test]
    fn deformation_reaches_encoder_inputs() {
        let d = DeformDecoder::new(small_config(), 5, &mut rng(72)).unwrap();
        let tape = Tape::new();
        let f = tape.leaf(random_tensor(&mut rng(73), &[2, 5], 0.5, 1.5));
        let out = d.bind(&tape, true).run(f).unwrap();
        let l = out.dmu.square().unwrap().sum().unwrap();
        let g = tape.grad(l, &[f]).unwrap();
        assert!(!g.detached[0]);
        assert!(g.grads[0].value().max_abs() > 0.0);
    }

    #[test]
    fn params_round_trip() {
        for field in [FieldKind::Hamiltonian, FieldKind::Linear] {
            let cfg = DecoderConfig {
                field,
                ..small_config()
            };
            let a = DeformDecoder::new(cfg.clone(), 5, &mut rng(74)).unwrap();
            let mut b = DeformDecoder::new(cfg, 5, &mut rng(75)).unwrap();
            assert_ne!(a, b);
            b.set_params(a.params()).unwrap();
            assert_eq!(a, b);
            assert!(b.set_params(vec![]).is_err());
        }
    }

    #[test]
    fn linear_decoder_has_no_force() {
        let cfg = DecoderConfig {
            field: FieldKind::Linear,
            ..small_config()
        };
        let d = DeformDecoder::new(cfg, 5, &mut rng(76)).unwrap();
        let tape = Tape::new();
        let b = d.bind(&tape, true);
        let out = b
            .run(tape.leaf(random_tensor(&mut rng(77), &[2, 5], 0.5, 1.5)))
            .unwrap();
        assert_eq!(out.force.value(), Tensor::zeros(&[2, 3]));
        assert!(out.dmu.value().max_abs() > 0.0);
        assert!(b.vector_fields(out.dmu).is_err());
    }

    fn oscillator(q: f64, p: f64) -> (f64, f64) {
        (p, -q)
    }

    fn quad(x: Var<'_>) -> Result<Var<'_>> {
        Ok(x.square()?.sum_cols()?.scale(0.5)?)
    }

    #[test]
    fn canonical_loss_examples() {
        let tape = Tape::new();
        let c = |v: f64| tape.constant(Tensor::new(&[1, 1], vec![v]).unwrap());
        let l = canonical_loss(quad, c(1.0), c(0.0), c(0.0), c(-1.0)).unwrap();
        assert_eq!(l.item().unwrap(), 0.0);
        let l = canonical_loss(quad, c(1.0), c(0.0), c(0.0), c(0.0)).unwrap();
        assert_eq!(l.item().unwrap(), 1.0);
        let wide = tape.constant(Tensor::zeros(&[1, 2]));
        assert!(canonical_loss(quad, c(1.0), wide, c(0.0), c(0.0)).is_err());
    }

    #[test]
    fn canonical_training_fits_small_oscillator_set() {
        let mut r = rng(78);
        let n = 64;
        let mut data = [vec![], vec![], vec![], vec![]];
        for _ in 0..n {
            let (q, p) = (r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
            let (dq, dp) = oscillator(q, p);
            for (col, v) in data.iter_mut().zip([q, p, dq, dp]) {
                col.push(v);
            }
        }
        let cols: Vec<Tensor> = data
            .iter()
            .map(|c| Tensor::new(&[n, 1], c.clone()).unwrap())
            .collect();
        let mut net = Mlp::new(&[2, 16, 16, 1], Activation::Tanh, &mut r);
        let mut states: Vec<AdamState> = net
            .params()
            .iter()
            .map(|p| AdamState::new(p.shape()))
            .collect();
        let mut last = f64::INFINITY;
        for _ in 0..400 {
            let tape = Tape::unchecked();
            let vars: Vec<Var> = net.params().iter().map(|p| tape.leaf(p.clone())).collect();
            let c: Vec<Var> = cols.iter().map(|t| tape.constant(t.clone())).collect();
            let loss = canonical_loss(|x| net.forward(&vars, x), c[0], c[1], c[2], c[3]).unwrap();
            last = loss.item().unwrap();
            let grads = tape.grad(loss, &vars).unwrap().values();
            for ((p, g), s) in net.params_mut().iter_mut().zip(&grads).zip(&mut states) {
                *p = adam_step(p, g, s, 0.01).unwrap();
            }
        }
        assert!(last < 0.05, "{last}");
    }
}
