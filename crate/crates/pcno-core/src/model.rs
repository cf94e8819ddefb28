//! The operator network: input assembly, lifting, stacked point-cloud neural
//! layers (pointwise affine + Fourier integral + smoothed least-squares
//! gradient, GeLU), and the two-stage pointwise projection.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{self, FourierIntegralParams};
use crate::geometry::{DensityMode, GeometryFeatures, PointCloudSample};
use crate::gradop::GradientEdgeWeights;
use crate::tensor::{DType, GradAdjacency, ModeSet, NuftCtx, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Real64,
    Real32,
}

impl Precision {
    fn dtype(self) -> DType {
        match self {
            Precision::Real64 => DType::Real64,
            Precision::Real32 => DType::Real32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Ambient space dimension d.
    pub d: usize,
    /// Intrinsic dimension d' used by the gradient operator.
    pub d_prime: usize,
    pub d_a: usize,
    pub d_u: usize,
    /// Hidden channel width.
    #[serde(default = "default_width")]
    pub width: usize,
    /// Projection hidden width.
    #[serde(default = "default_width")]
    pub proj_width: usize,
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    pub k_max: usize,
    #[serde(default = "one")]
    pub n_subdomains: usize,
    #[serde(default)]
    pub density_mode: DensityMode,
    #[serde(default)]
    pub precision: Precision,
}

fn default_width() -> usize {
    128
}
fn default_layers() -> usize {
    4
}
fn one() -> usize {
    1
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("d", self.d),
            ("d_prime", self.d_prime),
            ("d_a", self.d_a),
            ("d_u", self.d_u),
            ("width", self.width),
            ("proj_width", self.proj_width),
            ("n_layers", self.n_layers),
            ("n_subdomains", self.n_subdomains),
        ];
        for (field, v) in checks {
            if v == 0 {
                return Err(Error::InvalidConfig {
                    field: field.into(),
                    reason: "must be positive".into(),
                });
            }
        }
        if self.d_prime > self.d {
            return Err(Error::InvalidConfig {
                field: "d_prime".into(),
                reason: format!("{} exceeds d = {}", self.d_prime, self.d),
            });
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.d_a + self.d + 1
    }

    pub fn modes(&self) -> ModeSet {
        ModeSet::half_space(self.d, self.k_max)
    }
}

/// Frozen normalization: input channels as x * scale + shift (coordinates use
/// the training bounding box, other channels their mean/std), output channels
/// denormalized as z * scale + shift.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormStats {
    pub in_scale: Vec<f64>,
    pub in_shift: Vec<f64>,
    pub out_scale: Vec<f64>,
    pub out_shift: Vec<f64>,
    pub bbox_min: Vec<f64>,
    pub bbox_extent: Vec<f64>,
}

impl NormStats {
    pub fn identity(cfg: &ModelConfig) -> Self {
        NormStats {
            in_scale: vec![1.0; cfg.input_width()],
            in_shift: vec![0.0; cfg.input_width()],
            out_scale: vec![1.0; cfg.d_u],
            out_shift: vec![0.0; cfg.d_u],
            bbox_min: vec![0.0; cfg.d],
            bbox_extent: vec![1.0; cfg.d],
        }
    }

    /// Per-channel statistics over unmasked training nodes.
    pub fn from_dataset(
        cfg: &ModelConfig,
        samples: &[(&PointCloudSample, &GeometryFeatures)],
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (d_a, d, d_u) = (cfg.d_a, cfg.d, cfg.d_u);
        let iw = cfg.input_width();
        let mut sum = vec![0.0; iw];
        let mut sum2 = vec![0.0; iw];
        let mut usum = vec![0.0; d_u];
        let mut usum2 = vec![0.0; d_u];
        let mut bbox_min = vec![f64::INFINITY; d];
        let mut bbox_max = vec![f64::NEG_INFINITY; d];
        let mut count = 0usize;
        for (s, f) in samples {
            for i in 0..s.n_nodes {
                if !s.node_mask[i] {
                    continue;
                }
                count += 1;
                for c in 0..d_a {
                    let v = s.fields_a[i * d_a + c];
                    sum[c] += v;
                    sum2[c] += v * v;
                }
                for m in 0..d {
                    let x = s.coords[i * d + m];
                    bbox_min[m] = bbox_min[m].min(x);
                    bbox_max[m] = bbox_max[m].max(x);
                }
                let r = f.rho[i];
                sum[d_a + d] += r;
                sum2[d_a + d] += r * r;
                if let Some(u) = &s.fields_u {
                    for c in 0..d_u {
                        let v = u[i * d_u + c];
                        usum[c] += v;
                        usum2[c] += v * v;
                    }
                }
            }
        }
        if count == 0 {
            return Err(Error::EmptyDataset);
        }
        let n = count as f64;
        let stat = |s: f64, s2: f64| {
            let mean = s / n;
            let var = (s2 / n - mean * mean).max(0.0);
            let std = var.sqrt();
            (mean, if std < 1e-12 { 1.0 } else { std })
        };
        let mut in_scale = vec![1.0; iw];
        let mut in_shift = vec![0.0; iw];
        for c in 0..d_a {
            let (mean, std) = stat(sum[c], sum2[c]);
            in_scale[c] = 1.0 / std;
            in_shift[c] = -mean / std;
        }
        let mut bbox_extent = vec![1.0; d];
        for m in 0..d {
            let ext = bbox_max[m] - bbox_min[m];
            bbox_extent[m] = if ext > 1e-12 { ext } else { 1.0 };
            in_scale[d_a + m] = 1.0 / bbox_extent[m];
            in_shift[d_a + m] = -bbox_min[m] / bbox_extent[m];
        }
        {
            let (mean, std) = stat(sum[d_a + d], sum2[d_a + d]);
            in_scale[d_a + d] = 1.0 / std;
            in_shift[d_a + d] = -mean / std;
        }
        let mut out_scale = vec![1.0; d_u];
        let mut out_shift = vec![0.0; d_u];
        for c in 0..d_u {
            let (mean, std) = stat(usum[c], usum2[c]);
            out_scale[c] = std;
            out_shift[c] = mean;
        }
        Ok(NormStats {
            in_scale,
            in_shift,
            out_scale,
            out_shift,
            bbox_min,
            bbox_extent,
        })
    }
}

/// One point-cloud neural layer. Affine weights are stored transposed,
/// mapping row vectors: out = f W + b.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub w_local: Arc<Tensor>,
    pub bias: Arc<Tensor>,
    pub w_grad: Arc<Tensor>,
    pub fourier_w: Arc<Tensor>,
    pub fourier_log_l: Arc<Tensor>,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub lift_w: Arc<Tensor>,
    pub lift_b: Arc<Tensor>,
    pub layers: Vec<LayerParams>,
    pub proj_w1: Arc<Tensor>,
    pub proj_b1: Arc<Tensor>,
    pub proj_w2: Arc<Tensor>,
    pub proj_b2: Arc<Tensor>,
    pub norm: NormStats,
}

fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, dtype: DType) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(
        vec![rows, cols],
        dtype,
        crate::tensor::Buffer::Real(data),
    )
    .unwrap()
}

impl ModelParams {
    /// Deterministic initialization: affine weights uniform in
    /// +-1/sqrt(d_in), biases zero, Fourier weights complex Gaussian.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dt = config.precision.dtype();
        let c = config.width;
        let iw = config.input_width();
        let modes = config.modes();
        let lift_w = Arc::new(uniform_init(&mut rng, iw, c, dt));
        let lift_b = Arc::new(Tensor::zeros(vec![c], dt));
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let w_local = Arc::new(uniform_init(&mut rng, c, c, dt));
            let bias = Arc::new(Tensor::zeros(vec![c], dt));
            let w_grad = Arc::new(uniform_init(&mut rng, config.d * c, c, dt));
            let fp = FourierIntegralParams::init(&mut rng, &modes, config.n_subdomains, c, c);
            layers.push(LayerParams {
                w_local,
                bias,
                w_grad,
                fourier_w: Arc::new(fp.weights),
                fourier_log_l: Arc::new(fp.log_l),
            });
        }
        let proj_w1 = Arc::new(uniform_init(&mut rng, c, config.proj_width, dt));
        let proj_b1 = Arc::new(Tensor::zeros(vec![config.proj_width], dt));
        let proj_w2 = Arc::new(uniform_init(&mut rng, config.proj_width, config.d_u, dt));
        let proj_b2 = Arc::new(Tensor::zeros(vec![config.d_u], dt));
        Ok(ModelParams {
            norm: NormStats::identity(&config),
            config,
            lift_w,
            lift_b,
            layers,
            proj_w1,
            proj_b1,
            proj_w2,
            proj_b2,
        })
    }

    /// Initialize every layer's length scales from the data bounding box.
    pub fn set_length_scales(&mut self, extent: &[f64]) {
        let vals: Vec<f64> = extent.iter().map(|&x| x.max(1e-12).ln()).collect();
        for layer in &mut self.layers {
            layer.fourier_log_l =
                Arc::new(Tensor::from_vec(vec![vals.len()], vals.clone()).unwrap());
        }
    }

    /// Stable (name, tensor) listing; the optimizer and checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Arc<Tensor>)> {
        let mut out: Vec<(String, &Arc<Tensor>)> = vec![
            ("lift.w".into(), &self.lift_w),
            ("lift.b".into(), &self.lift_b),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.w_local"), &l.w_local));
            out.push((format!("layers.{i}.bias"), &l.bias));
            out.push((format!("layers.{i}.w_grad"), &l.w_grad));
            out.push((format!("layers.{i}.fourier.w"), &l.fourier_w));
            out.push((format!("layers.{i}.fourier.log_l"), &l.fourier_log_l));
        }
        out.push(("proj.w1".into(), &self.proj_w1));
        out.push(("proj.b1".into(), &self.proj_b1));
        out.push(("proj.w2".into(), &self.proj_w2));
        out.push(("proj.b2".into(), &self.proj_b2));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Arc<Tensor>)> {
        let mut out: Vec<(String, &mut Arc<Tensor>)> = vec![
            ("lift.w".into(), &mut self.lift_w),
            ("lift.b".into(), &mut self.lift_b),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layers.{i}.w_local"), &mut l.w_local));
            out.push((format!("layers.{i}.bias"), &mut l.bias));
            out.push((format!("layers.{i}.w_grad"), &mut l.w_grad));
            out.push((format!("layers.{i}.fourier.w"), &mut l.fourier_w));
            out.push((format!("layers.{i}.fourier.log_l"), &mut l.fourier_log_l));
        }
        out.push(("proj.w1".into(), &mut self.proj_w1));
        out.push(("proj.b1".into(), &mut self.proj_b1));
        out.push(("proj.w2".into(), &mut self.proj_w2));
        out.push(("proj.b2".into(), &mut self.proj_b2));
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.real_dof()).sum()
    }
}

/// One sample cooked for the forward pass: raw input stack, transform
/// context, gradient adjacency, and the reference output with its norm.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub n_nodes: usize,
    pub mask: Arc<Vec<bool>>,
    /// Un-normalized [n, d_a + d + 1] stack of [a(x), x, rho].
    pub input_raw: Arc<Tensor>,
    pub reference: Option<Arc<Tensor>>,
    /// L2 norm of the reference over unmasked nodes.
    pub ref_norm: f64,
    pub ctx: Arc<NuftCtx>,
    pub grad_adj: Arc<GradAdjacency>,
    pub label: String,
}

/// Concatenate [a(x), x, rho(x)] per node; padded rows zero.
pub fn build_input(sample: &PointCloudSample, features: &GeometryFeatures) -> Result<Tensor> {
    let n = sample.n_nodes;
    let (d_a, d) = (sample.d_a, sample.dim);
    let iw = d_a + d + 1;
    let mut data = vec![0.0; n * iw];
    for i in 0..n {
        if !sample.node_mask[i] {
            continue;
        }
        let row = &mut data[i * iw..(i + 1) * iw];
        row[..d_a].copy_from_slice(&sample.fields_a[i * d_a..(i + 1) * d_a]);
        row[d_a..d_a + d].copy_from_slice(&sample.coords[i * d..(i + 1) * d]);
        row[d_a + d] = features.rho[i];
    }
    Tensor::from_vec(vec![n, iw], data)
}

/// Assemble everything the model needs for one sample.
pub fn prepare_sample(
    cfg: &ModelConfig,
    sample: &PointCloudSample,
    features: &GeometryFeatures,
    weights: &GradientEdgeWeights,
) -> Result<PreparedSample> {
    if sample.d_a != cfg.d_a || sample.dim != cfg.d {
        return Err(Error::InconsistentSample {
            sample: 0,
            reason: format!(
                "sample (d = {}, d_a = {}) does not match config (d = {}, d_a = {})",
                sample.dim, sample.d_a, cfg.d, cfg.d_a
            ),
        });
    }
    let mut input_raw = build_input(sample, features)?;
    if cfg.precision == Precision::Real32 {
        input_raw = Tensor::new(
            input_raw.shape().to_vec(),
            DType::Real32,
            crate::tensor::Buffer::Real(input_raw.real().to_vec()),
        )?;
    }
    let ctx = fourier::build_ctx(
        &sample.coords,
        sample.n_nodes,
        sample.dim,
        &sample.node_mask,
        &sample.subdomains,
        features,
        cfg.modes(),
    )?;
    let (reference, ref_norm) = match &sample.fields_u {
        Some(u) => {
            let mut norm2 = 0.0;
            for i in 0..sample.n_nodes {
                if sample.node_mask[i] {
                    for c in 0..sample.d_u {
                        let v = u[i * sample.d_u + c];
                        norm2 += v * v;
                    }
                }
            }
            let t = Tensor::from_vec(vec![sample.n_nodes, sample.d_u], u.clone())?;
            (Some(Arc::new(t)), norm2.sqrt())
        }
        None => (None, 0.0),
    };
    Ok(PreparedSample {
        n_nodes: sample.n_nodes,
        mask: Arc::new(sample.node_mask.clone()),
        input_raw: Arc::new(input_raw),
        reference,
        ref_norm,
        ctx,
        grad_adj: Arc::new(weights.adjacency.clone()),
        label: sample.label.clone(),
    })
}

/// Parameter tensors registered on a tape for one pass.
pub struct ParamVars {
    pub lift_w: Var,
    pub lift_b: Var,
    pub layers: Vec<(Var, Var, Var, Var, Var)>, // w_local, bias, w_grad, fourier_w, log_l
    pub proj_w1: Var,
    pub proj_b1: Var,
    pub proj_w2: Var,
    pub proj_b2: Var,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, p: &ModelParams) -> Self {
        ParamVars {
            lift_w: tape.leaf_shared(p.lift_w.clone()),
            lift_b: tape.leaf_shared(p.lift_b.clone()),
            layers: p
                .layers
                .iter()
                .map(|l| {
                    (
                        tape.leaf_shared(l.w_local.clone()),
                        tape.leaf_shared(l.bias.clone()),
                        tape.leaf_shared(l.w_grad.clone()),
                        tape.leaf_shared(l.fourier_w.clone()),
                        tape.leaf_shared(l.fourier_log_l.clone()),
                    )
                })
                .collect(),
            proj_w1: tape.leaf_shared(p.proj_w1.clone()),
            proj_b1: tape.leaf_shared(p.proj_b1.clone()),
            proj_w2: tape.leaf_shared(p.proj_w2.clone()),
            proj_b2: tape.leaf_shared(p.proj_b2.clone()),
        }
    }

    /// Vars in [`ModelParams::named_tensors`] order.
    pub fn ordered(&self) -> Vec<Var> {
        let mut v = vec![self.lift_w, self.lift_b];
        for &(a, b, c, d, e) in &self.layers {
            v.extend_from_slice(&[a, b, c, d, e]);
        }
        v.extend_from_slice(&[self.proj_w1, self.proj_b1, self.proj_w2, self.proj_b2]);
        v
    }
}

/// One point-cloud neural layer:
/// sigma(W_l f + b + IntegralOp(f) + W_g flatten(softsign(grad f))),
/// masked rows forced to zero afterwards.
pub fn layer_forward(
    tape: &mut Tape,
    layer: &(Var, Var, Var, Var, Var),
    prep: &PreparedSample,
    f_in: Var,
) -> Result<Var> {
    let (w_local, bias, w_grad, fourier_w, log_l) = *layer;
    let local = tape.matmul(f_in, w_local)?;
    let local = tape.add_row(local, bias)?;
    let integ = fourier::integral_apply(tape, fourier_w, log_l, &prep.ctx, f_in)?;
    let grad = crate::gradop::apply_gradient(tape, &prep.grad_adj, f_in)?;
    let sg = crate::gradop::softsign_smooth(tape, grad)?;
    let gterm = tape.matmul(sg, w_grad)?;
    let sum = tape.add(local, integ)?;
    let sum = tape.add(sum, gterm)?;
    let act = tape.gelu(sum)?;
    tape.mask_rows(act, prep.mask.clone())
}

/// Full forward pass on a tape: normalize, lift, layers, project,
/// denormalize. Padded rows are zero throughout.
pub fn model_forward(
    tape: &mut Tape,
    vars: &ParamVars,
    params: &ModelParams,
    prep: &PreparedSample,
) -> Result<Var> {
    let norm = &params.norm;
    let x = tape.leaf_shared(prep.input_raw.clone());
    let x = tape.channel_affine(
        x,
        Arc::new(norm.in_scale.clone()),
        Arc::new(norm.in_shift.clone()),
    )?;
    let x = tape.mask_rows(x, prep.mask.clone())?;

    let h = tape.matmul(x, vars.lift_w)?;
    let h = tape.add_row(h, vars.lift_b)?;
    let h = tape.gelu(h)?;
    let mut h = tape.mask_rows(h, prep.mask.clone())?;

    for layer in &vars.layers {
        h = layer_forward(tape, layer, prep, h)?;
    }

    let z = tape.matmul(h, vars.proj_w1)?;
    let z = tape.add_row(z, vars.proj_b1)?;
    let z = tape.gelu(z)?;
    let z = tape.matmul(z, vars.proj_w2)?;
    let z = tape.add_row(z, vars.proj_b2)?;

    let y = tape.channel_affine(
        z,
        Arc::new(norm.out_scale.clone()),
        Arc::new(norm.out_shift.clone()),
    )?;
    tape.mask_rows(y, prep.mask.clone())
}

/// Inference convenience: run the forward pass on a fresh tape and return
/// the prediction values.
pub fn forward_values(params: &ModelParams, prep: &PreparedSample) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let y = model_forward(&mut tape, &vars, params, prep)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::{build_features, permute_sample};
    use crate::gradop::build_pseudoinverse_weights;
    use rand::seq::SliceRandom;

    pub(crate) fn small_cfg(width: usize, k_max: usize) -> ModelConfig {
        ModelConfig {
            d: 1,
            d_prime: 1,
            d_a: 1,
            d_u: 1,
            width,
            proj_width: width,
            n_layers: 4,
            k_max,
            n_subdomains: 1,
            density_mode: DensityMode::Uniform,
            precision: Precision::Real64,
        }
    }

    pub(crate) fn toy_sample(n: usize, seed: u64) -> PointCloudSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut s = crate::geometry::tests::line_sample(&nodes);
        s.fields_a = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        s.fields_u = Some((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        s.d_u = 1;
        s
    }

    pub(crate) fn prepare(
        cfg: &ModelConfig,
        s: &PointCloudSample,
    ) -> (PreparedSample, GeometryFeatures) {
        let feats = build_features(s, cfg.density_mode).unwrap();
        let w = build_pseudoinverse_weights(s, &feats.neighbors, cfg.d_prime, 1e-8).unwrap();
        let prep = prepare_sample(cfg, s, &feats, &w).unwrap();
        (prep, feats)
    }

    #[test]
    fn init_is_deterministic_and_validated() {
        let cfg = small_cfg(8, 2);
        let a = ModelParams::init(cfg.clone(), 7).unwrap();
        let b = ModelParams::init(cfg.clone(), 7).unwrap();
        for ((_, ta), (_, tb)) in a.named_tensors().iter().zip(b.named_tensors().iter()) {
            assert_eq!(ta.to_real_vec(), tb.to_real_vec());
        }
        let c = ModelParams::init(cfg, 8).unwrap();
        assert_ne!(
            a.named_tensors()[0].1.to_real_vec(),
            c.named_tensors()[0].1.to_real_vec()
        );

        let mut bad = small_cfg(8, 2);
        bad.width = 0;
        match ModelParams::init(bad, 0) {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "width"),
            other => panic!("expected invalid config, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn default_depth_and_width_match_the_recipe() {
        let cfg = ModelConfig {
            d: 1,
            d_prime: 1,
            d_a: 1,
            d_u: 1,
            width: default_width(),
            proj_width: default_width(),
            n_layers: default_layers(),
            k_max: 4,
            n_subdomains: 1,
            density_mode: DensityMode::Uniform,
            precision: Precision::Real64,
        };
        assert_eq!(cfg.n_layers, 4);
        assert_eq!(cfg.width, 128);
        assert_eq!(cfg.proj_width, 128);
    }

    #[test]
    fn input_stack_is_a_x_rho() {
        let cfg = small_cfg(4, 1);
        let s = toy_sample(6, 1);
        let feats = build_features(&s, DensityMode::Uniform).unwrap();
        let t = build_input(&s, &feats).unwrap();
        assert_eq!(t.shape(), &[6, 3]);
        let row = &t.real()[0..3];
        assert_eq!(row[0], s.fields_a[0]);
        assert_eq!(row[1], s.coords[0]);
        assert_eq!(row[2], feats.rho[0]);
        // uniform density: constant last column
        for i in 0..6 {
            assert_eq!(t.real()[i * 3 + 2], feats.rho[0]);
        }
        let _ = cfg;
    }

    #[test]
    fn zero_projection_outputs_the_denormalization_offset() {
        let cfg = small_cfg(6, 1);
        let s = toy_sample(8, 2);
        let (prep, _) = prepare(&cfg, &s);
        let mut p = ModelParams::init(cfg, 3).unwrap();
        p.proj_w2 = Arc::new(Tensor::zeros(vec![6, 1], DType::Real64));
        p.proj_b2 = Arc::new(Tensor::zeros(vec![1], DType::Real64));
        p.norm.out_scale = vec![2.0];
        p.norm.out_shift = vec![0.7];
        let y = forward_values(&p, &prep).unwrap();
        for &v in y.real() {
            assert!((v - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_weights_give_gelu_of_zero() {
        let cfg = small_cfg(5, 1);
        let s = toy_sample(7, 3);
        let (prep, _) = prepare(&cfg, &s);
        let mut p = ModelParams::init(cfg.clone(), 1).unwrap();
        // zero every tensor: each layer computes sigma(0) = 0, projection 0
        for (_, t) in p.named_tensors_mut() {
            let z = Tensor::zeros(t.shape().to_vec(), t.dtype());
            *t = Arc::new(z);
        }
        let y = forward_values(&p, &prep).unwrap();
        assert!(y.real().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn isolating_the_pointwise_term() {
        // zero Fourier and gradient weights: layers reduce to pointwise
        // affine + GeLU, so two nodes with identical inputs map identically
        let cfg = small_cfg(5, 2);
        let mut s = toy_sample(9, 4);
        s.fields_a[2] = s.fields_a[6];
        let (prep, _) = prepare(&cfg, &s);
        let mut p = ModelParams::init(cfg, 5).unwrap();
        for l in p.layers.iter_mut() {
            l.w_grad = Arc::new(Tensor::zeros(l.w_grad.shape().to_vec(), DType::Real64));
            l.fourier_w = Arc::new(Tensor::zeros(
                l.fourier_w.shape().to_vec(),
                DType::Complex128,
            ));
        }
        // kill the coordinate and density channels so rows 2 and 6 agree
        p.norm.in_scale[1] = 0.0;
        p.norm.in_scale[2] = 0.0;
        let y = forward_values(&p, &prep).unwrap();
        assert!(
            (y.real()[2] - y.real()[6]).abs() < 1e-14,
            "{} vs {}",
            y.real()[2],
            y.real()[6]
        );
    }

    #[test]
    fn permutation_invariance_of_the_model() {
        let cfg = small_cfg(6, 2);
        let s = toy_sample(12, 5);
        let (prep, _) = prepare(&cfg, &s);
        let mut p = ModelParams::init(cfg.clone(), 9).unwrap();
        p.set_length_scales(&[2.0]);
        let base = forward_values(&p, &prep).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let mut perm: Vec<usize> = (0..12).collect();
            perm.shuffle(&mut rng);
            let sp = permute_sample(&s, &perm);
            let (prep_p, _) = prepare(&cfg, &sp);
            let yp = forward_values(&p, &prep_p).unwrap();
            let scale = base
                .real()
                .iter()
                .fold(0.0f64, |m, x| m.max(x.abs()))
                .max(1e-300);
            for (new, &old) in perm.iter().enumerate() {
                let diff = (yp.real()[new] - base.real()[old]).abs();
                assert!(diff <= 1e-12 * scale, "node {old}: diff {diff:e}");
            }
        }
    }

    #[test]
    fn padded_garbage_cannot_reach_real_nodes() {
        let cfg = small_cfg(5, 2);
        let s = toy_sample(10, 7);
        // pad two extra rows
        let mut padded = s.clone();
        padded.n_nodes += 2;
        padded.coords.extend_from_slice(&[0.0, 0.0]);
        padded.node_mask.extend_from_slice(&[false, false]);
        padded.subdomains.extend_from_slice(&[0, 0]);
        padded.fields_a.extend_from_slice(&[0.0, 0.0]);
        if let Some(u) = padded.fields_u.as_mut() {
            u.extend_from_slice(&[0.0, 0.0]);
        }
        let (prep_pad, _) = prepare(&cfg, &padded);
        let p = {
            let mut p = ModelParams::init(cfg.clone(), 11).unwrap();
            p.set_length_scales(&[2.0]);
            p
        };
        let y_pad = forward_values(&p, &prep_pad).unwrap();

        // mutate padded-row inputs (after preprocessing): garbage in the
        // input stack only
        let mut garbage = prep_pad.clone();
        let mut t = (*garbage.input_raw).clone();
        let iw = cfg.input_width();
        let n = prep_pad.n_nodes;
        t.real_mut()[(n - 2) * iw..].fill(1e9);
        garbage.input_raw = Arc::new(t);
        let y_garbage = forward_values(&p, &garbage).unwrap();
        for i in 0..10 {
            assert_eq!(
                y_pad.real()[i].to_bits(),
                y_garbage.real()[i].to_bits(),
                "unmasked node {i} changed"
            );
        }
        // padded outputs are zero
        assert_eq!(y_garbage.real()[10], 0.0);
        assert_eq!(y_garbage.real()[11], 0.0);

        // and the padded forward agrees bitwise with the unpadded one
        let (prep, _) = prepare(&cfg, &s);
        let y = forward_values(&p, &prep).unwrap();
        for i in 0..10 {
            assert_eq!(y.real()[i].to_bits(), y_pad.real()[i].to_bits());
        }
    }

    #[test]
    fn real32_mode_runs_and_differs_from_real64() {
        let mut cfg = small_cfg(4, 1);
        let s = toy_sample(6, 8);
        let (prep64, _) = prepare(&cfg, &s);
        let p64 = ModelParams::init(cfg.clone(), 2).unwrap();
        let y64 = forward_values(&p64, &prep64).unwrap();

        cfg.precision = Precision::Real32;
        let (prep32, _) = prepare(&cfg, &s);
        let p32 = ModelParams::init(cfg, 2).unwrap();
        let y32 = forward_values(&p32, &prep32).unwrap();
        let max_diff = y64
            .real()
            .iter()
            .zip(y32.real())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 0.0, "rounding must be visible");
        assert!(max_diff < 1e-3, "but small: {max_diff}");
    }
}
