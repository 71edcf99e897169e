//! Fully connected embedding network with a hand-written backward pass.
//!
//! The network maps `input_dim` features through `hidden_dims` to a
//! `embedding_dim`-wide embedding. Hidden layers apply the configured
//! activation; the output layer is linear unless `activate_output` is set.
//! A [`ClassificationHead`] holds one class-center column per identity.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z`; relu uses 0 at the kink.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub activation: Activation,
    /// Apply the activation to the embedding layer as well.
    #[serde(default)]
    pub activate_output: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 64,
            hidden_dims: vec![128],
            embedding_dim: 64,
            activation: Activation::Relu,
            activate_output: false,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embedding_dim == 0 {
            return Err(Error::Config(
                "input_dim and embedding_dim must be at least 1".into(),
            ));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&h| h == 0) {
            return Err(Error::Config(format!("hidden layer {i} has width 0")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer, in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.embedding_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    config: ModelConfig,
    layers: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationHead {
    /// `d x C`; column `j` is the (unnormalized) center of class `j`.
    pub weights: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<Dense>,
    pub head: Option<Matrix>,
}

/// Values kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    fingerprint: u64,
}

impl ForwardCache {
    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre_activations
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

pub fn init_model(cfg: &ModelConfig) -> Result<EmbeddingModel> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.init_seed);
    let gain = match cfg.activation {
        Activation::Relu => 6.0,
        Activation::Tanh => 3.0,
    };
    let layers = cfg
        .layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let bound = (gain / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            Dense {
                weights: Matrix::from_vec(fan_in, fan_out, data).expect("shape by construction"),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(EmbeddingModel {
        config: cfg.clone(),
        layers,
    })
}

impl EmbeddingModel {
    /// Builds a model from explicit layers, checking that shapes chain.
    pub fn from_layers(config: ModelConfig, layers: Vec<Dense>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::Dimension(format!(
                "config describes {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, (layer, &(fan_in, fan_out))) in layers.iter().zip(&shapes).enumerate() {
            if layer.weights.shape() != (fan_in, fan_out) || layer.bias.len() != fan_out {
                return Err(Error::Dimension(format!(
                    "layer {i} should be {fan_in}x{fan_out}, got {:?} with {} biases",
                    layer.weights.shape(),
                    layer.bias.len()
                )));
            }
        }
        let model = EmbeddingModel { config, layers };
        if !model.is_finite() {
            return Err(Error::Input("model parameters must be finite".into()));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// All parameters in layer order: weights row-major, then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                params.len()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weights.as_mut_slice();
            w.copy_from_slice(&params[at..at + w.len()]);
            at += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// FNV-1a over layer shapes and parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::new();
        for l in &self.layers {
            h.write_u64(l.weights.rows() as u64);
            h.write_u64(l.weights.cols() as u64);
            for v in l.weights.as_slice().iter().chain(&l.bias) {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }

    fn activation_for(&self, layer: usize) -> Option<Activation> {
        if layer + 1 < self.layers.len() || self.config.activate_output {
            Some(self.config.activation)
        } else {
            None
        }
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.config.input_dim {
            return Err(Error::Dimension(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.config.input_dim
            )));
        }
        if !batch.is_finite() {
            return Err(Error::Input("batch contains non-finite values".into()));
        }
        Ok(())
    }

    fn affine(layer: &Dense, input: &Matrix) -> Result<Matrix> {
        let mut z = input.matmul(&layer.weights)?;
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        Ok(z)
    }

    /// Embeddings without keeping a cache. Accepts an empty batch.
    pub fn embed(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_batch(batch)?;
        let mut a = batch.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Self::affine(layer, &a)?;
            if let Some(act) = self.activation_for(l) {
                z.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            a = z;
        }
        Ok(a)
    }
}

pub fn forward(model: &EmbeddingModel, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
    model.check_batch(batch)?;
    if batch.rows() == 0 {
        return Err(Error::Input("forward needs at least one sample".into()));
    }
    let mut inputs = Vec::with_capacity(model.layers.len());
    let mut pre = Vec::with_capacity(model.layers.len());
    let mut a = batch.clone();
    for (l, layer) in model.layers.iter().enumerate() {
        let z = EmbeddingModel::affine(layer, &a)?;
        let mut out = z.clone();
        if let Some(act) = model.activation_for(l) {
            out.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = act.apply(*v));
        }
        inputs.push(a);
        pre.push(z);
        a = out;
    }
    if !a.is_finite() {
        return Err(Error::Numeric(
            "forward produced non-finite embeddings".into(),
        ));
    }
    Ok((
        a,
        ForwardCache {
            inputs,
            pre_activations: pre,
            fingerprint: model.checksum(),
        },
    ))
}

pub fn backward(
    model: &EmbeddingModel,
    cache: &ForwardCache,
    upstream: &Matrix,
) -> Result<GradientBundle> {
    if cache.fingerprint != model.checksum() || cache.inputs.len() != model.layers.len() {
        return Err(Error::State(
            "cache was produced by a different model or parameters changed since forward".into(),
        ));
    }
    let n = cache.batch_size();
    if upstream.shape() != (n, model.embedding_dim()) {
        return Err(Error::Dimension(format!(
            "upstream gradient is {:?}, expected {n}x{}",
            upstream.shape(),
            model.embedding_dim()
        )));
    }
    let mut grads: Vec<Option<Dense>> = vec![None; model.layers.len()];
    let mut g = upstream.clone();
    for l in (0..model.layers.len()).rev() {
        if let Some(act) = model.activation_for(l) {
            for (gv, z) in g
                .as_mut_slice()
                .iter_mut()
                .zip(cache.pre_activations[l].as_slice())
            {
                *gv *= act.derivative(*z);
            }
        }
        let dw = cache.inputs[l].t_matmul(&g)?;
        let mut db = vec![0.0; g.cols()];
        for i in 0..g.rows() {
            for (b, v) in db.iter_mut().zip(g.row(i)) {
                *b += v;
            }
        }
        if l > 0 {
            g = g.matmul_t(&model.layers[l].weights)?;
        }
        grads[l] = Some(Dense {
            weights: dw,
            bias: db,
        });
    }
    Ok(GradientBundle {
        layers: grads.into_iter().map(|g| g.expect("filled")).collect(),
        head: None,
    })
}

impl ClassificationHead {
    pub fn new(weights: Matrix) -> Result<Self> {
        if weights.cols() < 2 {
            return Err(Error::Config("a head needs at least 2 classes".into()));
        }
        if weights.rows() == 0 {
            return Err(Error::Config("a head needs embedding_dim >= 1".into()));
        }
        if !weights.is_finite() {
            return Err(Error::Input("head weights must be finite".into()));
        }
        Ok(ClassificationHead { weights })
    }

    /// Gaussian class centers, one column per class.
    pub fn init(embedding_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        let mut rng = seed::rng(seed);
        let std = (1.0 / embedding_dim.max(1) as f64).sqrt();
        let data = seed::gaussian_vec(&mut rng, embedding_dim * num_classes, std);
        Self::new(Matrix::from_vec(embedding_dim, num_classes, data)?)
    }

    pub fn embedding_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::new();
        h.write_u64(self.weights.rows() as u64);
        h.write_u64(self.weights.cols() as u64);
        for v in self.weights.as_slice() {
            h.write_u64(v.to_bits());
        }
        h.finish()
    }
}

impl GradientBundle {
    pub fn zeros_like(model: &EmbeddingModel, head: Option<&ClassificationHead>) -> Self {
        GradientBundle {
            layers: model
                .layers
                .iter()
                .map(|l| Dense {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            head: head.map(|h| Matrix::zeros(h.weights.rows(), h.weights.cols())),
        }
    }

    /// Same ordering as `EmbeddingModel::flatten`, followed by the head.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        if let Some(h) = &self.head {
            out.extend_from_slice(h.as_slice());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Largest relative disagreement between an analytic gradient and central
/// differences, over at most [`GRAD_CHECK_MAX_PARAMS`] evenly spaced parameters.
///
/// Relative error is `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn grad_check_flat<F>(params: &[f64], eps: f64, mut loss: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Config(format!(
            "eps must lie in (0, 1e-2], got {eps}"
        )));
    }
    let (value, analytic) = loss(params)?;
    if !value.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let stride = params.len().div_ceil(GRAD_CHECK_MAX_PARAMS).max(1);
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in (0..params.len()).step_by(stride) {
        probe[i] = params[i] + eps;
        let (plus, _) = loss(&probe)?;
        probe[i] = params[i] - eps;
        let (minus, _) = loss(&probe)?;
        probe[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "loss not finite around parameter {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

pub const GRAD_CHECK_MAX_PARAMS: usize = 512;

/// Below this magnitude a gradient entry is compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

/// [`grad_check_flat`] over a model and optional head.
pub fn grad_check<F>(
    model: &EmbeddingModel,
    head: Option<&ClassificationHead>,
    eps: f64,
    mut loss: F,
) -> Result<f64>
where
    F: FnMut(&EmbeddingModel, Option<&ClassificationHead>) -> Result<(f64, GradientBundle)>,
{
    let mut m = model.clone();
    let mut h = head.cloned();
    let n_model = model.num_parameters();
    let mut params = model.flatten();
    if let Some(h) = head {
        params.extend_from_slice(h.weights.as_slice());
    }
    grad_check_flat(&params, eps, |p| {
        m.set_flat(&p[..n_model])?;
        if let Some(h) = h.as_mut() {
            h.weights.as_mut_slice().copy_from_slice(&p[n_model..]);
        }
        let (value, grads) = loss(&m, h.as_ref())?;
        let mut flat = grads.flatten();
        if h.is_some() && grads.head.is_none() {
            flat.resize(p.len(), 0.0);
        }
        Ok((value, flat))
    })
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

// Model file layout, all integers and floats little-endian:
//
//   magic            8 bytes  "IDKTMDL1"
//   input_dim        u64
//   hidden count     u32, then one u64 per hidden width
//   embedding_dim    u64
//   activation       u8 (0 relu, 1 tanh)
//   activate_output  u8 (0/1)
//   init_seed        u64
//   per layer        fan_in*fan_out f64 weights (row-major), fan_out f64 bias
//   has_head         u8 (0/1); if 1: rows u64, cols u64, rows*cols f64 row-major
pub const MODEL_MAGIC: &[u8; 8] = b"IDKTMDL1";

pub fn model_to_bytes(model: &EmbeddingModel, head: Option<&ClassificationHead>) -> Vec<u8> {
    let cfg = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(cfg.input_dim as u64).to_le_bytes());
    out.extend_from_slice(&(cfg.hidden_dims.len() as u32).to_le_bytes());
    for &h in &cfg.hidden_dims {
        out.extend_from_slice(&(h as u64).to_le_bytes());
    }
    out.extend_from_slice(&(cfg.embedding_dim as u64).to_le_bytes());
    out.push(cfg.activation.code());
    out.push(u8::from(cfg.activate_output));
    out.extend_from_slice(&cfg.init_seed.to_le_bytes());
    for v in model.flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match head {
        Some(h) => {
            out.push(1);
            out.extend_from_slice(&(h.weights.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(h.weights.cols() as u64).to_le_bytes());
            for v in h.weights.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    out
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        if self.at + n > self.bytes.len() {
            return Err(format!("truncated at byte {}", self.at));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> std::result::Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|e| e.to_string())
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("size overflow")?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn model_from_bytes(
    bytes: &[u8],
) -> std::result::Result<(EmbeddingModel, Option<ClassificationHead>), String> {
    let mut r = ByteReader { bytes, at: 0 };
    if r.take(8)? != MODEL_MAGIC {
        return Err("bad magic header".into());
    }
    let input_dim = r.usize()?;
    let n_hidden = r.u32()? as usize;
    let hidden_dims = (0..n_hidden)
        .map(|_| r.usize())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let embedding_dim = r.usize()?;
    let activation = Activation::from_code(r.u8()?).ok_or("unknown activation code")?;
    let activate_output = match r.u8()? {
        0 => false,
        1 => true,
        _ => return Err("bad activate_output flag".into()),
    };
    let init_seed = r.u64()?;
    let config = ModelConfig {
        input_dim,
        hidden_dims,
        embedding_dim,
        activation,
        activate_output,
        init_seed,
    };
    config.validate().map_err(|e| e.to_string())?;
    let mut layers = Vec::new();
    for (fan_in, fan_out) in config.layer_shapes() {
        let w = r.f64s(fan_in * fan_out)?;
        let bias = r.f64s(fan_out)?;
        layers.push(Dense {
            weights: Matrix::from_vec(fan_in, fan_out, w).map_err(|e| e.to_string())?,
            bias,
        });
    }
    let model = EmbeddingModel::from_layers(config, layers).map_err(|e| e.to_string())?;
    let head = match r.u8()? {
        0 => None,
        1 => {
            let rows = r.usize()?;
            let cols = r.usize()?;
            let data = r.f64s(rows * cols)?;
            let m = Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())?;
            Some(ClassificationHead::new(m).map_err(|e| e.to_string())?)
        }
        _ => return Err("bad head flag".into()),
    };
    if r.at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.at));
    }
    Ok((model, head))
}

pub fn save_model(
    path: &Path,
    model: &EmbeddingModel,
    head: Option<&ClassificationHead>,
) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&model_to_bytes(model, head))
        .map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<(EmbeddingModel, Option<ClassificationHead>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes).map_err(|msg| Error::format(path, msg))
}
