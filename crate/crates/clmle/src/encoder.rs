//! A small feed-forward encoder ending in L2 normalization, with manual
//! forward/backward passes and an SGD-with-momentum optimizer. This is the
//! trainable map from raw features onto the unit hypersphere.

use std::io::{Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::hypersphere::{dot, l2_norm, UnitVector, ZERO_NORM_TOL};

const CHECKPOINT_MAGIC: &[u8; 4] = b"CLMR";
const CHECKPOINT_VERSION: u32 = 1;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    /// y = W x
    fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, out) in y.iter_mut().enumerate() {
            *out = dot(&self.data[r * self.cols..(r + 1) * self.cols], x);
        }
    }

    /// y = W^T x
    fn mul_vec_transposed(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        y.fill(0.0);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let xr = x[r];
            for (out, w) in y.iter_mut().zip(row) {
                *out += w * xr;
            }
        }
    }
}

/// One affine layer (`out_dim x in_dim` weights plus bias).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub(crate) weights: Mat,
    pub(crate) bias: Vec<f64>,
}

/// Encoder architecture: input width, hidden widths (rectifier activations),
/// and the embedding dimension.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl EncoderConfig {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            output_dim,
        }
    }
}

/// Trainable encoder parameters. Hidden layers use the rectifier; the output
/// layer is linear and followed by L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    layers: Vec<Layer>,
    input_dim: usize,
}

impl EncoderParams {
    /// Fan-in-scaled normal initialization (std = 1/sqrt(fan_in)), zero biases.
    pub fn init(config: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut in_dim = config.input_dim;
        for &out_dim in config.hidden.iter().chain(std::iter::once(&config.output_dim)) {
            let normal = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).unwrap();
            let mut weights = Mat::zeros(out_dim, in_dim);
            for w in &mut weights.data {
                *w = normal.sample(&mut rng);
            }
            layers.push(Layer {
                weights,
                bias: vec![0.0; out_dim],
            });
            in_dim = out_dim;
        }
        Self {
            layers,
            input_dim: config.input_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weights.rows).unwrap_or(0)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// All parameters flattened in a fixed order (per layer: weights row-major,
    /// then bias). Used by checkpointing and finite-difference probes.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for layer in &self.layers {
            flat.extend_from_slice(&layer.weights.data);
            flat.extend_from_slice(&layer.bias);
        }
        flat
    }

    /// Overwrites parameters from a flat vector produced by [`Self::to_flat`].
    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected: usize = self
            .layers
            .iter()
            .map(|l| l.weights.data.len() + l.bias.len())
            .sum();
        if flat.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter vector has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let w = layer.weights.data.len();
            layer.weights.data.copy_from_slice(&flat[offset..offset + w]);
            offset += w;
            let b = layer.bias.len();
            layer.bias.copy_from_slice(&flat[offset..offset + b]);
            offset += b;
        }
        Ok(())
    }

    /// Writes a versioned binary checkpoint with a shape header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(CHECKPOINT_MAGIC)?;
        file.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        file.write_all(&(self.input_dim as u32).to_le_bytes())?;
        file.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for layer in &self.layers {
            file.write_all(&(layer.weights.rows as u32).to_le_bytes())?;
            file.write_all(&(layer.weights.cols as u32).to_le_bytes())?;
            for w in &layer.weights.data {
                file.write_all(&w.to_le_bytes())?;
            }
            for b in &layer.bias {
                file.write_all(&b.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads a checkpoint written by [`Self::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        file.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::ConfigError("not an encoder checkpoint".into()));
        }
        let version = read_u32(&mut file)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::ConfigError(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let input_dim = read_u32(&mut file)? as usize;
        let num_layers = read_u32(&mut file)? as usize;
        let mut layers = Vec::with_capacity(num_layers);
        let mut expected_in = input_dim;
        for _ in 0..num_layers {
            let rows = read_u32(&mut file)? as usize;
            let cols = read_u32(&mut file)? as usize;
            if cols != expected_in {
                return Err(Error::ShapeMismatch(format!(
                    "checkpoint layer expects input {cols}, previous layer emits {expected_in}"
                )));
            }
            let mut weights = Mat::zeros(rows, cols);
            for w in &mut weights.data {
                *w = read_f64(&mut file)?;
            }
            let mut bias = vec![0.0; rows];
            for b in &mut bias {
                *b = read_f64(&mut file)?;
            }
            layers.push(Layer { weights, bias });
            expected_in = rows;
        }
        Ok(Self { layers, input_dim })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Per-sample activations retained by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// activations[l][sample]: input (l = 0) and post-rectifier hidden output.
    activations: Vec<Vec<Vec<f64>>>,
    /// Pre-normalization output per sample.
    pre_norm: Vec<Vec<f64>>,
    /// Norm of the pre-normalization output per sample.
    norms: Vec<f64>,
    /// Unit outputs per sample.
    outputs: Vec<Vec<f64>>,
}

/// Gradients with the same shapes as [`EncoderParams`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    layers: Vec<Layer>,
}

impl ParamGrads {
    fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Mat::zeros(l.weights.rows, l.weights.cols),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for layer in &self.layers {
            flat.extend_from_slice(&layer.weights.data);
            flat.extend_from_slice(&layer.bias);
        }
        flat
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.data.iter().all(|w| w.is_finite()) && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Adds `other` into `self` entrywise.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.data.iter_mut().zip(&b.weights.data) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

/// Maps a batch of raw inputs to unit-norm embeddings, retaining activations
/// for [`backward`].
pub fn forward(params: &EncoderParams, inputs: &[Vec<f64>]) -> Result<(Vec<UnitVector>, ForwardCache)> {
    let hidden_count = params.layers.len().saturating_sub(1);
    let mut activations: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(inputs.len()); hidden_count + 1];
    let mut pre_norm = Vec::with_capacity(inputs.len());
    let mut norms = Vec::with_capacity(inputs.len());
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut units = Vec::with_capacity(inputs.len());

    for input in inputs {
        if input.len() != params.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input has dimension {}, encoder expects {}",
                input.len(),
                params.input_dim
            )));
        }
        let mut a = input.clone();
        activations[0].push(a.clone());
        for (l, layer) in params.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.weights.rows];
            layer.weights.mul_vec(&a, &mut z);
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi += bi;
            }
            if l + 1 < params.layers.len() {
                for zi in &mut z {
                    if *zi < 0.0 {
                        *zi = 0.0;
                    }
                }
                activations[l + 1].push(z.clone());
            }
            a = z;
        }
        let norm = l2_norm(&a);
        if norm < ZERO_NORM_TOL {
            return Err(Error::ZeroVector { norm });
        }
        let unit: Vec<f64> = a.iter().map(|x| x / norm).collect();
        pre_norm.push(a);
        norms.push(norm);
        outputs.push(unit.clone());
        units.push(UnitVector::new(unit).expect("normalized output"));
    }

    Ok((
        units,
        ForwardCache {
            activations,
            pre_norm,
            norms,
            outputs,
        },
    ))
}

/// Backpropagates gradients on the unit outputs to parameter gradients,
/// applying the normalization Jacobian `(I - f f^T) / ||z||` first.
pub fn backward(
    params: &EncoderParams,
    cache: &ForwardCache,
    output_grads: &[Vec<f64>],
) -> Result<ParamGrads> {
    let batch = cache.pre_norm.len();
    if output_grads.len() != batch {
        return Err(Error::ShapeMismatch(format!(
            "cache holds {batch} samples, received {} output gradients",
            output_grads.len()
        )));
    }
    let mut grads = ParamGrads::zeros_like(params);
    let out_dim = params.output_dim();

    for s in 0..batch {
        let g_out = &output_grads[s];
        if g_out.len() != out_dim {
            return Err(Error::ShapeMismatch(format!(
                "output gradient has dimension {}, embeddings have {out_dim}",
                g_out.len()
            )));
        }
        let f = &cache.outputs[s];
        let radial = dot(g_out, f);
        let mut g: Vec<f64> = g_out
            .iter()
            .zip(f)
            .map(|(gi, fi)| (gi - radial * fi) / cache.norms[s])
            .collect();

        for l in (0..params.layers.len()).rev() {
            let layer = &params.layers[l];
            if l + 1 < params.layers.len() {
                // Rectifier subgradient: zero where the activation was clipped.
                let a = &cache.activations[l + 1][s];
                for (gi, &ai) in g.iter_mut().zip(a) {
                    if ai <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            let layer_input = &cache.activations[l][s];
            let gl = &mut grads.layers[l];
            for (r, &gr) in g.iter().enumerate() {
                if gr != 0.0 {
                    for (c, &xin) in layer_input.iter().enumerate() {
                        *gl.weights.at_mut(r, c) += gr * xin;
                    }
                }
                gl.bias[r] += gr;
            }
            if l > 0 {
                let mut g_prev = vec![0.0; layer.weights.cols];
                layer.weights.mul_vec_transposed(&g, &mut g_prev);
                g = g_prev;
            }
        }
    }
    Ok(grads)
}

/// SGD-with-momentum state. The update is
/// `v <- momentum*v + grad + weight_decay*param; param <- param - lr*v`.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    velocity: Vec<Layer>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(params: &EncoderParams, learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate >= 0.0) {
            return Err(Error::ConfigError(format!(
                "learning rate must be non-negative, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::ConfigError(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::ConfigError(format!(
                "weight decay must be non-negative, got {weight_decay}"
            )));
        }
        Ok(Self {
            velocity: params
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Mat::zeros(l.weights.rows, l.weights.cols),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            learning_rate,
            momentum,
            weight_decay,
        })
    }

    /// Momentum buffers flattened in parameter order.
    pub fn velocity_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for layer in &self.velocity {
            flat.extend_from_slice(&layer.weights.data);
            flat.extend_from_slice(&layer.bias);
        }
        flat
    }
}

/// One deterministic SGD-with-momentum step. Rejects non-finite gradients so
/// a diverging run aborts instead of silently corrupting the parameters.
pub fn sgd_step(
    params: &mut EncoderParams,
    state: &mut OptimizerState,
    grads: &ParamGrads,
) -> Result<()> {
    if grads.layers.len() != params.layers.len() {
        return Err(Error::ShapeMismatch(format!(
            "gradient has {} layers, parameters have {}",
            grads.layers.len(),
            params.layers.len()
        )));
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    for ((layer, vel), grad) in params
        .layers
        .iter_mut()
        .zip(&mut state.velocity)
        .zip(&grads.layers)
    {
        if layer.weights.rows != grad.weights.rows || layer.weights.cols != grad.weights.cols {
            return Err(Error::ShapeMismatch("gradient layer shape mismatch".into()));
        }
        for ((w, v), g) in layer
            .weights
            .data
            .iter_mut()
            .zip(&mut vel.weights.data)
            .zip(&grad.weights.data)
        {
            *v = state.momentum * *v + g + state.weight_decay * *w;
            *w -= state.learning_rate * *v;
        }
        for ((b, v), g) in layer.bias.iter_mut().zip(&mut vel.bias).zip(&grad.bias) {
            *v = state.momentum * *v + g + state.weight_decay * *b;
            *b -= state.learning_rate * *v;
        }
    }
    Ok(())
}

/// Writes embeddings as CSV rows `id,label,e0,...,e{d-1}`.
pub fn export_embeddings_csv(
    path: &Path,
    rows: impl Iterator<Item = (usize, usize, Vec<f64>)>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header_written = false;
    for (id, label, embedding) in rows {
        if !header_written {
            let mut header = vec!["id".to_string(), "label".to_string()];
            header.extend((0..embedding.len()).map(|j| format!("e{j}")));
            writer.write_record(&header)?;
            header_written = true;
        }
        let mut record = vec![id.to_string(), label.to_string()];
        record.extend(embedding.iter().map(|x| format!("{x}")));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
