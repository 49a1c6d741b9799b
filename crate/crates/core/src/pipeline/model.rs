//! Canonical scene to deformed scene at time `t`.

use crate::autodiff::{Tape, Tensor, Var};
use crate::bed::{
    blend_position_graph, blend_scale_graph, boltzmann_mask_graph, deviations_graph,
    spatial_temporal_energy_graph, temporal_energy_graph, BedConfig,
};
use crate::gauss::{Aabb, Scene};
use crate::hexplane::HexPlaneEncoder;
use crate::hnn::{BoundDecoder, DeformDecoder};
use crate::physics::{apply_rotation_graph, clamp_rotation_graph, IntegratorConfig};
use crate::render::{SplatTensors, SplatVars};

use super::PipelineError;

/// Steps of the deformation, in the order they ran.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Encode,
    Decode,
    Verlet,
    Mask,
    Blend,
    Rotate,
}

/// Every per-primitive attribute as a tape value.
#[derive(Clone, Copy, Debug)]
pub struct CanonicalVars<'t> {
    pub splat: SplatVars<'t>,
    /// `[n,3]`
    pub mu_eq: Var<'t>,
    /// `[n,1]`
    pub t_eq_pos: Var<'t>,
    /// `[n,1]`
    pub t_eq_scale: Var<'t>,
}

impl<'t> CanonicalVars<'t> {
    /// Puts a scene on the tape; `trainable` picks leaves over constants.
    pub fn from_scene(tape: &'t Tape, scene: &Scene, trainable: bool) -> Self {
        let n = scene.len();
        let put = |t: Tensor| {
            if trainable {
                tape.leaf(t)
            } else {
                tape.constant(t)
            }
        };
        let splat = SplatTensors::from_primitives(&scene.primitives).to_vars(tape, trainable);
        let p = &scene.primitives;
        let mu_eq = Tensor::new(&[n, 3], p.iter().flat_map(|q| q.mu_eq).collect()).expect("shape");
        let t_pos = Tensor::new(&[n, 1], p.iter().map(|q| q.t_eq_pos).collect()).expect("shape");
        let t_scale =
            Tensor::new(&[n, 1], p.iter().map(|q| q.t_eq_scale).collect()).expect("shape");
        Self {
            splat,
            mu_eq: put(mu_eq),
            t_eq_pos: put(t_pos),
            t_eq_scale: put(t_scale),
        }
    }

    pub fn as_array(&self) -> [Var<'t>; 8] {
        let s = &self.splat;
        [
            s.mu,
            s.log_scale,
            s.rot,
            s.opacity_logit,
            s.color,
            self.mu_eq,
            self.t_eq_pos,
            self.t_eq_scale,
        ]
    }
}

/// Settings that shape the deformation but are not trained.
#[derive(Clone, Copy, Debug)]
pub struct DeformOptions<'a> {
    /// `None` switches the equilibrium masks off: every primitive takes
    /// the full Verlet update.
    pub bed: Option<&'a BedConfig>,
    pub physics: &'a IntegratorConfig,
    pub bounds: &'a Aabb,
}

/// Differentiable deformation of all primitives to time `t`.
pub fn deform_graph<'t>(
    canon: &CanonicalVars<'t>,
    encoder: &HexPlaneEncoder,
    planes: &[Var<'t>],
    decoder: &BoundDecoder<'_, 't>,
    t: f64,
    opts: &DeformOptions<'_>,
    trace: &mut Vec<Stage>,
) -> Result<SplatVars<'t>, PipelineError> {
    let s = canon.splat;
    let tape = s.mu.tape();
    let n = s.mu.shape()[0];

    let features = encoder.encode_graph(s.mu, planes, t, opts.bounds)?;
    trace.push(Stage::Encode);
    let d = decoder.run(features)?;
    trace.push(Stage::Decode);

    let dt = opts.physics.dt;
    let mu_tilde =
        s.mu.add(d.dmu.scale(dt)?)?
            .add(d.force.scale(0.5 * dt * dt)?)?;
    trace.push(Stage::Verlet);

    let (mu, log_scale) = match opts.bed {
        Some(cfg) => {
            let tcol = tape.constant(Tensor::full(&[n, 1], t));
            let sigma_s = tape.constant(Tensor::scalar(cfg.sigma_s));
            let sigma_t = tape.constant(Tensor::scalar(cfg.sigma_t));
            let (dd, dtau) =
                deviations_graph(s.mu, canon.mu_eq, tcol, canon.t_eq_pos, sigma_s, sigma_t)?;
            let m_pos = boltzmann_mask_graph(
                spatial_temporal_energy_graph(dd, dtau, cfg.coupling_lambda)?,
                cfg,
            )?;
            let dtau_s = tcol.sub(canon.t_eq_scale)?.div(sigma_t.expand(&[n, 1])?)?;
            let m_scale = boltzmann_mask_graph(temporal_energy_graph(dtau_s)?, cfg)?;
            trace.push(Stage::Mask);
            let mu = blend_position_graph(s.mu, mu_tilde, m_pos)?;
            let ls = blend_scale_graph(s.log_scale, d.ds, m_scale)?;
            trace.push(Stage::Blend);
            (mu, ls)
        }
        None => (mu_tilde, s.log_scale.add(d.ds)?),
    };

    let identity = tape.constant(identity_rows(n));
    let dr = clamp_rotation_graph(identity.add(d.dr)?, opts.physics.phi_max)?;
    let rot = apply_rotation_graph(s.rot, dr)?;
    trace.push(Stage::Rotate);

    Ok(SplatVars {
        mu,
        log_scale,
        rot,
        opacity_logit: s.opacity_logit,
        color: s.color,
    })
}

fn identity_rows(n: usize) -> Tensor {
    let data = (0..n).flat_map(|_| [1.0, 0.0, 0.0, 0.0]).collect();
    Tensor::new(&[n, 4], data).expect("shape")
}

/// The scene at time `t`, plus the order in which the stages ran.
pub fn deform_scene(
    scene: &Scene,
    t: f64,
    encoder: &HexPlaneEncoder,
    decoder: &DeformDecoder,
    bed: Option<&BedConfig>,
    physics: &IntegratorConfig,
) -> Result<(Scene, Vec<Stage>), PipelineError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(PipelineError::Config(format!("time {t} outside [0, 1]")));
    }
    physics.validate()?;
    if let Some(b) = bed {
        b.validate()?;
    }
    let mut trace = Vec::new();
    if scene.is_empty() {
        return Ok((scene.clone(), trace));
    }
    let tape = Tape::new();
    let canon = CanonicalVars::from_scene(&tape, scene, false);
    let planes: Vec<Var> = encoder
        .planes()
        .iter()
        .map(|p| tape.constant(p.clone()))
        .collect();
    let bound = decoder.bind(&tape, false);
    let opts = DeformOptions {
        bed,
        physics,
        bounds: &scene.bounds,
    };
    let out = deform_graph(&canon, encoder, &planes, &bound, t, &opts, &mut trace)?;
    let tensors = SplatTensors::from_array(out.as_array().map(|v| v.value()));
    for (name, tns) in ["position", "scale", "rotation"]
        .iter()
        .zip(tensors.as_array())
    {
        let width = tns.shape()[1];
        if let Some(k) = tns.data().iter().position(|x| !x.is_finite()) {
            return Err(PipelineError::Primitive {
                index: k / width,
                message: format!("non-finite deformed {name}"),
            });
        }
    }
    let mut deformed = scene.clone();
    tensors.write_to(&mut deformed.primitives);
    Ok((deformed, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::GaussianPrimitive;
    use crate::hexplane::HexPlaneConfig;
    use crate::hnn::DecoderConfig;
    use crate::testutil::rng;
    use rand::Rng;

    fn scene(n: usize, seed: u64) -> Scene {
        let mut r = rng(seed);
        let prims = (0..n)
            .map(|_| {
                let mu = [0; 3].map(|_| r.gen_range(-0.8..0.8));
                let axis = [r.gen_range(-1.0..1.0), 0.5, r.gen_range(-1.0..1.0)];
                let rot = crate::gauss::quat_from_axis_angle(axis, r.gen_range(0.0..3.0));
                let mut p =
                    GaussianPrimitive::new(mu, [0.1, 0.05, 0.07], rot, 0.6, [0.2, 0.5, 0.9])
                        .unwrap();
                p.mu_eq = [0.0; 3];
                p.t_eq_pos = 0.2;
                p
            })
            .collect();
        Scene::new(prims, Aabb::cube(1.0))
    }

    fn model(seed: u64, inert: bool) -> (HexPlaneEncoder, DeformDecoder) {
        let hex = HexPlaneConfig {
            base_resolution: 4,
            upsampling: vec![2],
            time_resolution: 4,
            channels: 4,
        };
        let dec = DecoderConfig {
            depth: 1,
            width: 8,
            head_hidden: 8,
            ..Default::default()
        };
        let mut r = rng(seed);
        let enc = HexPlaneEncoder::new(hex, &mut r).unwrap();
        let d = if inert {
            DeformDecoder::inert(dec, enc.feature_dim(), &mut r).unwrap()
        } else {
            let mut d = DeformDecoder::new(dec, enc.feature_dim(), &mut r).unwrap();
            for a in d.adapters_mut() {
                *a = a.map(|x| 40.0 * x);
            }
            d
        };
        (enc, d)
    }

    fn physics() -> IntegratorConfig {
        IntegratorConfig {
            dt: 0.25,
            phi_max: 0.35,
        }
    }

    #[test]
    fn inert_decoder_is_identity() {
        let s = scene(12, 1);
        let (enc, dec) = model(2, true);
        let bed = BedConfig::for_diagonal(s.bounds.diagonal());
        for bed in [Some(&bed), None] {
            let (out, _) = deform_scene(&s, 0.8, &enc, &dec, bed, &physics()).unwrap();
            for (a, b) in s.primitives.iter().zip(&out.primitives) {
                assert_eq!(a.mu, b.mu);
                assert_eq!(a.log_scale, b.log_scale);
                for k in 0..4 {
                    assert!((a.rot[k] - b.rot[k]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn opacity_and_color_never_change() {
        let s = scene(12, 3);
        let (enc, dec) = model(4, false);
        let bed = BedConfig::for_diagonal(s.bounds.diagonal());
        let (out, _) = deform_scene(&s, 0.9, &enc, &dec, Some(&bed), &physics()).unwrap();
        let mut moved = false;
        for (a, b) in s.primitives.iter().zip(&out.primitives) {
            assert_eq!(a.opacity_logit, b.opacity_logit);
            assert_eq!(a.color, b.color);
            assert_eq!(
                (a.mu_eq, a.t_eq_pos, a.t_eq_scale),
                (b.mu_eq, b.t_eq_pos, b.t_eq_scale)
            );
            moved |= a.mu != b.mu;
        }
        assert!(moved);
    }

    #[test]
    fn equilibrium_primitives_stay_put() {
        let mut s = scene(10, 5);
        let t = 0.7;
        for p in &mut s.primitives {
            p.mu_eq = p.mu;
            p.t_eq_pos = t;
            p.t_eq_scale = t;
        }
        let (enc, dec) = model(6, false);
        let bed = BedConfig {
            gamma: 0.0,
            ..BedConfig::for_diagonal(s.bounds.diagonal())
        };
        let (out, _) = deform_scene(&s, t, &enc, &dec, Some(&bed), &physics()).unwrap();
        for (a, b) in s.primitives.iter().zip(&out.primitives) {
            assert_eq!(a.mu, b.mu);
            assert_eq!(a.log_scale, b.log_scale);
        }
        let (free, _) = deform_scene(&s, t, &enc, &dec, None, &physics()).unwrap();
        assert!(s
            .primitives
            .iter()
            .zip(&free.primitives)
            .any(|(a, b)| a.mu != b.mu));
    }

    #[test]
    fn verlet_runs_before_blend() {
        let s = scene(4, 7);
        let (enc, dec) = model(8, false);
        let bed = BedConfig::for_diagonal(s.bounds.diagonal());
        let (_, trace) = deform_scene(&s, 0.3, &enc, &dec, Some(&bed), &physics()).unwrap();
        assert_eq!(
            trace,
            [
                Stage::Encode,
                Stage::Decode,
                Stage::Verlet,
                Stage::Mask,
                Stage::Blend,
                Stage::Rotate
            ]
        );
        let (_, trace) = deform_scene(&s, 0.3, &enc, &dec, None, &physics()).unwrap();
        assert!(!trace.contains(&Stage::Blend));
    }

    #[test]
    fn rotation_increment_respects_clamp() {
        let s = scene(16, 9);
        let (enc, dec) = model(10, false);
        let phys = IntegratorConfig {
            dt: 0.25,
            phi_max: 0.05,
        };
        let (out, _) = deform_scene(&s, 0.6, &enc, &dec, None, &phys).unwrap();
        for (a, b) in s.primitives.iter().zip(&out.primitives) {
            let rel = crate::gauss::quat_mul([a.rot[0], -a.rot[1], -a.rot[2], -a.rot[3]], b.rot);
            assert!(crate::gauss::quat_angle(rel) < 0.05 + 1e-9);
        }
        assert!(deform_scene(&s, 1.5, &enc, &dec, None, &phys).is_err());
    }
}
