//! MLP backbone, the two projection heads, and the query/key momentum pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// Widths of the rectified hidden layers.
    pub hidden_widths: Vec<usize>,
    /// Width of the (linear) backbone output.
    pub embedding_dim: usize,
    /// Width of each projection head.
    pub proj_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_height: 32,
            input_width: 32,
            hidden_widths: vec![256, 128],
            embedding_dim: 64,
            proj_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn input_dim(&self) -> usize {
        self.input_height * self.input_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim() == 0 {
            return Err(Error::Config("input shape must be non-empty".into()));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) || self.proj_dim == 0 {
            return Err(Error::Config("layer widths must be at least 1".into()));
        }
        if self.embedding_dim < 2 {
            return Err(Error::Config(format!(
                "embedding_dim must be at least 2, got {}",
                self.embedding_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every backbone layer in order.
    fn backbone_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim()];
        widths.extend(&self.hidden_widths);
        widths.push(self.embedding_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Query,
    Key,
}

/// Affine map `x·W + b` with `W` stored as `fan_in×fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
            .collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, data).unwrap(),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }
}

fn affine<T: Scalar>(tape: &mut Tape<T>, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let h = tape.matmul(x, w)?;
    tape.add_row_bias(h, b)
}

/// Backbone weights (θ) tagged with their role.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T = f32> {
    pub role: Role,
    pub layers: Vec<Linear<T>>,
}

/// Separate heads for the intra-video objective and the cycle objective.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHeads<T = f32> {
    pub video: Linear<T>,
    pub cycle: Linear<T>,
}

/// Backbone plus heads: one side of the momentum pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    pub backbone: EncoderParams<T>,
    pub heads: ProjectionHeads<T>,
}

/// Which representation to read out of a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Backbone,
    VideoHead,
    CycleHead,
}

/// Tape handles produced by [`Network::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    /// Parameter leaves in declaration order.
    pub params: Vec<Var>,
    pub backbone: Var,
    pub z_video: Var,
    pub z_cycle: Var,
}

impl<T: Scalar> Network<T> {
    pub fn num_tensors(&self) -> usize {
        2 * self.backbone.layers.len() + 4
    }

    /// Parameters in declaration order: backbone `(W, b)` pairs, then the
    /// video head, then the cycle head.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::with_capacity(self.num_tensors());
        for l in self.linears() {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        let Network { backbone, heads } = self;
        for l in backbone
            .layers
            .iter_mut()
            .chain([&mut heads.video, &mut heads.cycle])
        {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    fn linears(&self) -> impl Iterator<Item = &Linear<T>> {
        self.backbone
            .layers
            .iter()
            .chain([&self.heads.video, &self.heads.cycle])
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.layers[0].weight.rows()
    }

    pub fn dim(&self, space: Space) -> usize {
        match space {
            Space::Backbone => self.backbone.layers.last().unwrap().weight.cols(),
            Space::VideoHead => self.heads.video.weight.cols(),
            Space::CycleHead => self.heads.cycle.weight.cols(),
        }
    }

    /// Records the forward pass of the frames `x` (`n×input_dim`) on `tape`.
    /// Each frame is first standardized to zero mean and unit variance, a
    /// fixed step outside the tape. Both head outputs are unit rows.
    pub fn forward(&self, tape: &mut Tape<T>, x: &Tensor<T>, trainable: bool) -> Result<Forward> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::Dimension {
                op: "encode",
                lhs: x.shape().to_vec(),
                rhs: vec![self.input_dim()],
            });
        }
        let params: Vec<Var> = self
            .params()
            .into_iter()
            .map(|p| tape.leaf(p.clone(), trainable))
            .collect();
        self.forward_with(tape, x, params)
    }

    /// [`Network::forward`] with the parameters supplied as tape variables in
    /// declaration order; only the layer structure of `self` is used.
    pub fn forward_with(&self, tape: &mut Tape<T>, x: &Tensor<T>, params: Vec<Var>) -> Result<Forward> {
        if params.len() != self.num_tensors() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                self.num_tensors(),
                params.len()
            )));
        }
        let mut h = tape.constant(standardize_rows(x));
        let depth = self.backbone.layers.len();
        for i in 0..depth {
            h = affine(tape, h, (params[2 * i], params[2 * i + 1]))?;
            if i + 1 < depth {
                h = tape.relu(h);
            }
        }
        let backbone = h;
        let head = |tape: &mut Tape<T>, k: usize| -> Result<Var> {
            let z = affine(tape, backbone, (params[2 * depth + 2 * k], params[2 * depth + 2 * k + 1]))?;
            tape.l2_normalize(z)
        };
        let z_video = head(tape, 0)?;
        let z_cycle = head(tape, 1)?;
        Ok(Forward {
            params,
            backbone,
            z_video,
            z_cycle,
        })
    }

    /// Gradient-free evaluation returning `(z_video, z_cycle)`.
    pub fn encode(&self, batch: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch, false)?;
        Ok((
            tape.value(fwd.z_video).clone(),
            tape.value(fwd.z_cycle).clone(),
        ))
    }

    /// Gradient-free readout of one representation space (not normalized).
    pub fn embed(&self, batch: &Tensor<T>, space: Space) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch, false)?;
        let v = match space {
            Space::Backbone => fwd.backbone,
            Space::VideoHead => fwd.z_video,
            Space::CycleHead => fwd.z_cycle,
        };
        Ok(tape.value(v).clone())
    }

    fn same_structure(&self, other: &Self) -> bool {
        let a = self.params();
        let b = other.params();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.shape() == y.shape())
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let lin = |l: &Linear<T>| Linear {
            weight: l.weight.cast(),
            bias: l.bias.cast(),
        };
        Network {
            backbone: EncoderParams {
                role: self.backbone.role,
                layers: self.backbone.layers.iter().map(lin).collect(),
            },
            heads: ProjectionHeads {
                video: lin(&self.heads.video),
                cycle: lin(&self.heads.cycle),
            },
        }
    }
}

/// `(x − mean) / sqrt(var + 1e-6)` per row.
pub fn standardize_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    let d = x.cols();
    if d == 0 {
        return out;
    }
    let inv_d = 1.0 / d as f64;
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() * inv_d;
        let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() * inv_d;
        let inv_std = 1.0 / (var + 1e-6).sqrt();
        for v in row.iter_mut() {
            *v = T::from_f64_lossy((v.as_f64() - mean) * inv_std);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentumConfig {
    pub momentum_coefficient: f32,
}

impl Default for MomentumConfig {
    fn default() -> Self {
        Self {
            momentum_coefficient: 0.999,
        }
    }
}

impl MomentumConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.momentum_coefficient;
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::Config(format!(
                "momentum_coefficient must lie in [0, 1], got {m}"
            )));
        }
        Ok(())
    }
}

/// Query network (trained by gradients) and key network (EMA of the query).
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumPair {
    pub query: Network<f32>,
    pub key: Network<f32>,
}

/// Uniform `±1/sqrt(fan_in)` weights, zero biases; the key starts as an exact
/// copy of the query.
pub fn init_params(cfg: &EncoderConfig, seed: u64) -> Result<MomentumPair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = cfg
        .backbone_dims()
        .into_iter()
        .map(|(i, o)| Linear::init(i, o, &mut rng))
        .collect();
    let heads = ProjectionHeads {
        video: Linear::init(cfg.embedding_dim, cfg.proj_dim, &mut rng),
        cycle: Linear::init(cfg.embedding_dim, cfg.proj_dim, &mut rng),
    };
    let query = Network {
        backbone: EncoderParams {
            role: Role::Query,
            layers,
        },
        heads,
    };
    let mut key = query.clone();
    key.backbone.role = Role::Key;
    Ok(MomentumPair { query, key })
}

/// `θ_k ← m·θ_k + (1 − m)·θ_q`, elementwise in 32-bit arithmetic.
pub fn ema_update(key: &mut Network<f32>, query: &Network<f32>, cfg: &MomentumConfig) -> Result<()> {
    cfg.validate()?;
    if !key.same_structure(query) {
        return Err(Error::Config(
            "key and query parameter lists differ in structure".into(),
        ));
    }
    let m = cfg.momentum_coefficient;
    let keep = 1.0 - m;
    for (k, q) in key.params_mut().into_iter().zip(query.params()) {
        for (kv, &qv) in k.data_mut().iter_mut().zip(q.data()) {
            *kv = m * *kv + keep * qv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EncoderConfig {
        EncoderConfig {
            input_height: 4,
            input_width: 4,
            hidden_widths: vec![12],
            embedding_dim: 6,
            proj_dim: 5,
        }
    }

    fn scalar_net(v: f32) -> Network<f32> {
        let lin = |v: f32| Linear {
            weight: Tensor::matrix(1, 1, vec![v]).unwrap(),
            bias: Tensor::new(vec![1], vec![v]).unwrap(),
        };
        Network {
            backbone: EncoderParams {
                role: Role::Query,
                layers: vec![lin(v)],
            },
            heads: ProjectionHeads {
                video: lin(v),
                cycle: lin(v),
            },
        }
    }

    #[test]
    fn empty_batch_yields_empty_outputs() {
        let pair = init_params(&small(), 1).unwrap();
        let (zv, zc) = pair.query.encode(&Tensor::zeros(vec![0, 16])).unwrap();
        assert_eq!(zv.shape(), &[0, 5]);
        assert_eq!(zc.shape(), &[0, 5]);
    }

    #[test]
    fn outputs_are_unit_rows() {
        let pair = init_params(&small(), 2).unwrap();
        let x = Tensor::matrix(3, 16, (0..48).map(|i| (i % 7) as f32 * 0.1).collect()).unwrap();
        let (zv, zc) = pair.query.encode(&x).unwrap();
        assert!(zv.max_unit_deviation() < 1e-6);
        assert!(zc.max_unit_deviation() < 1e-6);
        assert_ne!(zv, zc);
    }

    #[test]
    fn wrong_input_width_is_dimension_error() {
        let pair = init_params(&small(), 2).unwrap();
        let err = pair.query.encode(&Tensor::zeros(vec![2, 15])).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn init_is_deterministic_and_key_copies_query() {
        let a = init_params(&small(), 9).unwrap();
        let b = init_params(&small(), 9).unwrap();
        assert_eq!(a, b);
        for (k, q) in a.key.params().iter().zip(a.query.params()) {
            assert_eq!(k.max_abs_diff(q), 0.0);
        }
        assert_eq!(a.key.backbone.role, Role::Key);
        assert_ne!(init_params(&small(), 10).unwrap().query, a.query);
    }

    #[test]
    fn fan_in_scaling_matches_uniform_std() {
        let cfg = EncoderConfig {
            input_height: 10,
            input_width: 10,
            hidden_widths: vec![100],
            embedding_dim: 100,
            proj_dim: 4,
        };
        let pair = init_params(&cfg, 3).unwrap();
        let w = pair.query.backbone.layers[1].weight.data();
        let n = w.len() as f64;
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let analytic = (1.0 / 100f64.sqrt()) / 3f64.sqrt();
        assert!((var.sqrt() / analytic - 1.0).abs() < 0.2);
        assert!(pair.query.backbone.layers[1].bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn network_gradients_match_finite_differences() {
        use crate::losses::{intra_video_loss, LossConfig};
        use crate::tensor::gradcheck;
        let cfg = EncoderConfig {
            input_height: 2,
            input_width: 3,
            hidden_widths: vec![5],
            embedding_dim: 4,
            proj_dim: 3,
        };
        let net = init_params(&cfg, 5).unwrap().query.cast::<f64>();
        let x = Tensor::matrix(3, 6, (0..18).map(|i| ((i * 7 % 11) as f64) / 11.0).collect()).unwrap();
        let k = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.6, 0.0, 0.8]).unwrap();
        let neg = Tensor::matrix(2, 3, vec![0.0, 0.0, 1.0, 0.0, 0.8, -0.6]).unwrap();
        let inputs: Vec<Tensor<f64>> = net.params().into_iter().cloned().collect();
        let report = gradcheck(
            |tape, vars| {
                let fwd = net.forward_with(tape, &x, vars.to_vec())?;
                let kv = tape.constant(k.clone());
                let nv = tape.constant(neg.clone());
                let cfg = LossConfig { temperature: 0.5, ..LossConfig::default() };
                let a = intra_video_loss(tape, fwd.z_video, kv, nv, &cfg)?;
                let b = intra_video_loss(tape, fwd.z_cycle, kv, nv, &cfg)?;
                tape.add(a, b)
            },
            &inputs,
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn ema_fixed_point_and_copy() {
        let q = scalar_net(0.37);
        let mut k = scalar_net(-1.5);
        ema_update(&mut k, &q, &MomentumConfig { momentum_coefficient: 1.0 }).unwrap();
        assert_eq!(k, scalar_net(-1.5));
        ema_update(&mut k, &q, &MomentumConfig { momentum_coefficient: 0.0 }).unwrap();
        assert_eq!(k.params(), q.params());
    }

    #[test]
    fn ema_single_step_arithmetic() {
        let q = scalar_net(1.0);
        let mut k = scalar_net(0.0);
        ema_update(&mut k, &q, &MomentumConfig::default()).unwrap();
        for p in k.params() {
            assert!((p.data()[0] - 0.001).abs() < 1e-7);
        }
    }

    #[test]
    fn ema_closed_form_over_many_steps() {
        let q = scalar_net(1.0);
        let mut k = scalar_net(0.0);
        let cfg = MomentumConfig::default();
        for t in 1..=2000 {
            ema_update(&mut k, &q, &cfg).unwrap();
            if t % 250 == 0 {
                let want = 1.0 - 0.999f64.powi(t);
                assert!((k.params()[0].data()[0] as f64 - want).abs() < 1e-5, "t={t}");
            }
        }
    }

    #[test]
    fn ema_rejects_structural_mismatch() {
        let q = init_params(&small(), 1).unwrap().query;
        let mut k = scalar_net(0.0);
        assert!(matches!(
            ema_update(&mut k, &q, &MomentumConfig::default()),
            Err(Error::Config(_))
        ));
        assert!(MomentumConfig { momentum_coefficient: 1.5 }.validate().is_err());
    }
}
