//! Post-training quantization into an integer-only graph.
//!
//! Quantization is symmetric (zero point 0). Weights get one scale per output
//! channel for convs and a single scale for the final linear layer;
//! activations get one scale per tensor from min-max calibration. Each conv
//! is followed by a requantization step
//!
//! ```text
//! out[c] = clamp((acc[c] * mult[c] + add[c]) >> shift, clip_lo, clip_hi)
//! ```
//!
//! where `mult[c] / 2^shift` approximates `s_in * s_w[c] / s_out`, the conv
//! bias is folded into `add[c]`, and ReLU is the clip to `[0, 127]`. The shift
//! is arithmetic (floor), with no rounding addend. The linear layer keeps its
//! 32-bit accumulators; their real value is `acc * s_in * s_w`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{LayerSpec, ModelGraph, TensorShape};

pub const QMAX: i32 = 127;
pub const QMIN: i32 = -128;
const MULT_MAX: f64 = i32::MAX as f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("calibration needs at least one input")]
    NoCalibrationInputs,
    #[error("layer {layer}: expected {expected} values, got {got}")]
    ShapeMismatch { layer: String, expected: usize, got: usize },
    #[error("ratio {0} outside (0, 2^31)")]
    RatioOutOfRange(f64),
    #[error("non-positive scale {scale} at {at}")]
    NonPositiveScale { at: String, scale: f64 },
    #[error("invalid requant params: {0}")]
    InvalidRequant(String),
    #[error("quantized graph does not match its model graph: {0}")]
    GraphMismatch(String),
}

/// Real units per integer step; the zero point is always 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineScale {
    pub scale: f64,
}

impl AffineScale {
    pub fn new(scale: f64) -> Self {
        Self { scale }
    }

    /// `max|x| / 127`, or 1 for an all-zero range.
    pub fn from_abs_max(abs_max: f64) -> Self {
        if abs_max > 0.0 && abs_max.is_finite() {
            Self { scale: abs_max / QMAX as f64 }
        } else {
            Self { scale: 1.0 }
        }
    }

    pub fn quantize(&self, x: f64) -> i8 {
        (x / self.scale).round().clamp(QMIN as f64, QMAX as f64) as i8
    }
}

/// Largest `shift <= 31` such that `round(ratio * 2^shift)` fits a positive
/// `i32`; returns `(mult, shift)`.
pub fn dyadic_approx(ratio: f64) -> Result<(i32, u32), QuantError> {
    if !(ratio > 0.0 && ratio < 2f64.powi(31)) {
        return Err(QuantError::RatioOutOfRange(ratio));
    }
    for shift in (0..=31u32).rev() {
        let m = (ratio * 2f64.powi(shift as i32)).round();
        if m <= MULT_MAX {
            return Ok((m as i32, shift));
        }
    }
    Err(QuantError::RatioOutOfRange(ratio))
}

/// Integerized affine transform following a conv.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequantParams {
    pub mult: Vec<i32>,
    /// Per-channel addend in the pre-shift domain (bias * mult).
    pub add: Vec<i64>,
    pub shift: u32,
    pub clip_lo: i32,
    pub clip_hi: i32,
}

impl RequantParams {
    pub fn channels(&self) -> usize {
        self.mult.len()
    }

    pub fn validate(&self) -> Result<(), QuantError> {
        let bad = |m: String| Err(QuantError::InvalidRequant(m));
        if self.mult.len() != self.add.len() {
            return bad(format!("{} multipliers vs {} addends", self.mult.len(), self.add.len()));
        }
        if let Some(m) = self.mult.iter().find(|&&m| m <= 0) {
            return bad(format!("multiplier {m} must be positive"));
        }
        if self.shift > 31 {
            return bad(format!("shift {} > 31", self.shift));
        }
        if self.clip_lo >= self.clip_hi || self.clip_lo < QMIN || self.clip_hi > QMAX {
            return bad(format!("clip range [{}, {}]", self.clip_lo, self.clip_hi));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, c: usize, acc: i32) -> i8 {
        let v = (acc as i128 * self.mult[c] as i128 + self.add[c] as i128) >> self.shift;
        v.clamp(self.clip_lo as i128, self.clip_hi as i128) as i8
    }
}

/// `out_ch x in_ch x k x k` int8 kernel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvWeights {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub data: Vec<i8>,
}

impl ConvWeights {
    #[inline]
    pub fn at(&self, o: usize, i: usize, ky: usize, kx: usize) -> i8 {
        self.data[((o * self.in_ch + i) * self.kernel + ky) * self.kernel + kx]
    }

    pub fn filter(&self, o: usize) -> &[i8] {
        let n = self.in_ch * self.kernel * self.kernel;
        &self.data[o * n..(o + 1) * n]
    }
}

/// Row-major `out x in` int8 matrix with int32 bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearWeights {
    pub out_features: usize,
    pub in_features: usize,
    pub data: Vec<i8>,
    pub bias: Vec<i32>,
}

impl LinearWeights {
    pub fn row(&self, o: usize) -> &[i8] {
        &self.data[o * self.in_features..(o + 1) * self.in_features]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuantLayer {
    Conv(ConvWeights),
    Requant(RequantParams),
    MaxPool,
    Flatten,
    Linear(LinearWeights),
}

/// Scales of every tensor in the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Scales {
    pub input: f64,
    /// Scale of each layer's int8 output tensor. Conv outputs are
    /// per-channel accumulators and carry no single scale (`None`); the
    /// linear output scale is `s_in * s_w`.
    pub act: Vec<Option<f64>>,
    /// Per-output-channel weight scales for convs, one entry for linear.
    pub weights: Vec<Option<Vec<f64>>>,
}

impl Scales {
    /// Scale of the tensor feeding layer `i`.
    pub fn input_of(&self, i: usize) -> f64 {
        if i == 0 {
            self.input
        } else {
            self.act[i - 1].unwrap_or(f64::NAN)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedGraph {
    pub graph: ModelGraph,
    pub layers: Vec<QuantLayer>,
    pub scales: Scales,
}

impl QuantizedGraph {
    pub fn input_scale(&self) -> AffineScale {
        AffineScale::new(self.scales.input)
    }

    /// Real units per step of the final int32 output.
    pub fn output_scale(&self) -> AffineScale {
        AffineScale::new(self.scales.act.last().copied().flatten().unwrap_or(1.0))
    }

    pub fn quantize_input(&self, input: &[f64]) -> Vec<i8> {
        let s = self.input_scale();
        input.iter().map(|&x| s.quantize(x)).collect()
    }

    pub fn dequantize_output(&self, out: &[i32]) -> Vec<f64> {
        let s = self.output_scale().scale;
        out.iter().map(|&v| v as f64 * s).collect()
    }

    /// Checks weight ranges, shapes and that each conv feeds one requant.
    pub fn validate(&self) -> Result<(), QuantError> {
        let mismatch = |m: String| Err(QuantError::GraphMismatch(m));
        if self.layers.len() != self.graph.layers.len() {
            return mismatch(format!(
                "{} quantized layers vs {} graph layers",
                self.layers.len(),
                self.graph.layers.len()
            ));
        }
        for (i, (q, l)) in self.layers.iter().zip(&self.graph.layers).enumerate() {
            match (q, &l.spec) {
                (QuantLayer::Conv(w), LayerSpec::Conv { in_ch, out_ch, kernel }) => {
                    if (w.out_ch, w.in_ch, w.kernel) != (*out_ch, *in_ch, *kernel)
                        || w.data.len() != out_ch * in_ch * kernel * kernel
                    {
                        return mismatch(format!("{}: conv weight dims", l.name));
                    }
                    if !matches!(self.layers.get(i + 1), Some(QuantLayer::Requant(_))) {
                        return mismatch(format!("{}: conv not followed by requant", l.name));
                    }
                }
                (QuantLayer::Requant(r), LayerSpec::Requant { .. }) => {
                    r.validate()?;
                    if r.channels() != l.input.channels {
                        return mismatch(format!("{}: requant channel count", l.name));
                    }
                }
                (QuantLayer::MaxPool, LayerSpec::MaxPool) | (QuantLayer::Flatten, LayerSpec::Flatten) => {}
                (QuantLayer::Linear(w), LayerSpec::Linear { in_features, out_features }) => {
                    if (w.out_features, w.in_features) != (*out_features, *in_features)
                        || w.data.len() != in_features * out_features
                        || w.bias.len() != *out_features
                    {
                        return mismatch(format!("{}: linear dims", l.name));
                    }
                }
                _ => return mismatch(format!("{}: layer kind differs", l.name)),
            }
        }
        Ok(())
    }
}

/// Real-valued weights and biases for conv and linear layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatParams {
    /// Same layout as [`ConvWeights`] / [`LinearWeights`].
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// A graph with real-valued parameters (`None` for parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct FloatModel {
    pub graph: ModelGraph,
    pub params: Vec<Option<FloatParams>>,
}

impl FloatModel {
    /// Deterministic He-uniform weights and small uniform biases.
    pub fn random(graph: &ModelGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = graph
            .layers
            .iter()
            .map(|l| {
                let (n_w, fan_in, n_b) = match l.spec {
                    LayerSpec::Conv { in_ch, out_ch, kernel } => {
                        (out_ch * in_ch * kernel * kernel, in_ch * kernel * kernel, out_ch)
                    }
                    LayerSpec::Linear { in_features, out_features } => {
                        (in_features * out_features, in_features, out_features)
                    }
                    _ => return None,
                };
                let bound = (6.0 / fan_in as f64).sqrt() as f32;
                let weights = (0..n_w).map(|_| rng.gen_range(-bound..bound)).collect();
                let bias = (0..n_b).map(|_| rng.gen_range(-0.1f32..0.1)).collect();
                Some(FloatParams { weights, bias })
            })
            .collect();
        Self { graph: graph.clone(), params }
    }

    pub fn check_shapes(&self) -> Result<(), QuantError> {
        if self.params.len() != self.graph.layers.len() {
            return Err(QuantError::ShapeMismatch {
                layer: "<graph>".into(),
                expected: self.graph.layers.len(),
                got: self.params.len(),
            });
        }
        for (p, l) in self.params.iter().zip(&self.graph.layers) {
            let expected = match l.spec {
                LayerSpec::Conv { in_ch, out_ch, kernel } => Some((out_ch * in_ch * kernel * kernel, out_ch)),
                LayerSpec::Linear { in_features, out_features } => Some((in_features * out_features, out_features)),
                _ => None,
            };
            match (expected, p) {
                (None, None) => {}
                (Some((nw, nb)), Some(p)) => {
                    for (exp, got) in [(nw, p.weights.len()), (nb, p.bias.len())] {
                        if exp != got {
                            return Err(QuantError::ShapeMismatch { layer: l.name.clone(), expected: exp, got });
                        }
                    }
                }
                (Some((nw, _)), None) => {
                    return Err(QuantError::ShapeMismatch { layer: l.name.clone(), expected: nw, got: 0 })
                }
                (None, Some(p)) => {
                    return Err(QuantError::ShapeMismatch {
                        layer: l.name.clone(),
                        expected: 0,
                        got: p.weights.len(),
                    })
                }
            }
        }
        Ok(())
    }

    /// Float forward pass returning every layer's output. Requant positions
    /// apply ReLU.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<Vec<f64>>, QuantError> {
        let in_shape = self.graph.input_shape();
        if input.len() != in_shape.len() {
            return Err(QuantError::ShapeMismatch { layer: "input".into(), expected: in_shape.len(), got: input.len() });
        }
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(self.graph.layers.len());
        for (i, layer) in self.graph.layers.iter().enumerate() {
            let x: &[f64] = if i == 0 { input } else { &outs[i - 1] };
            let y = match layer.spec {
                LayerSpec::Conv { out_ch, kernel, .. } => {
                    let p = self.params[i].as_ref().expect("conv params");
                    let w: Vec<f64> = p.weights.iter().map(|&v| v as f64).collect();
                    let b: Vec<f64> = p.bias.iter().map(|&v| v as f64).collect();
                    conv_f64(x, layer.input, &w, &b, out_ch, kernel)
                }
                LayerSpec::Requant { .. } => x.iter().map(|&v| v.max(0.0)).collect(),
                LayerSpec::MaxPool => maxpool_f64(x, layer.input),
                LayerSpec::Flatten => x.to_vec(),
                LayerSpec::Linear { in_features, out_features } => {
                    let p = self.params[i].as_ref().expect("linear params");
                    let w: Vec<f64> = p.weights.iter().map(|&v| v as f64).collect();
                    let b: Vec<f64> = p.bias.iter().map(|&v| v as f64).collect();
                    linear_f64(x, &w, &b, in_features, out_features)
                }
            };
            outs.push(y);
        }
        Ok(outs)
    }
}

/// Same-padded stride-1 convolution over real values, accumulated by kernel
/// tap (shift-and-add), not by output window.
pub(crate) fn conv_f64(
    input: &[f64],
    shape: TensorShape,
    weights: &[f64],
    bias: &[f64],
    out_ch: usize,
    k: usize,
) -> Vec<f64> {
    let (h, w, cin) = (shape.height, shape.width, shape.channels);
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut out = vec![0.0; out_ch * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
        dst.fill(bias[o]);
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let wv = weights[((o * cin + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let row = &src[sy * w..(sy + 1) * w];
                        let drow = &mut dst[y * w..(y + 1) * w];
                        for x in x0..x1 {
                            drow[x] += wv * row[(x as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn maxpool_f64(input: &[f64], shape: TensorShape) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(shape.channels * oh * ow);
    for c in 0..shape.channels {
        let src = &input[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let a = src[2 * y * w + 2 * x];
                let b = src[2 * y * w + 2 * x + 1];
                let d = src[(2 * y + 1) * w + 2 * x];
                let e = src[(2 * y + 1) * w + 2 * x + 1];
                out.push(a.max(b).max(d).max(e));
            }
        }
    }
    out
}

pub(crate) fn linear_f64(x: &[f64], w: &[f64], b: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    (0..n_out)
        .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CalibrationOptions {
    /// Use this input scale instead of the calibrated one (e.g. 1/128 for
    /// images shifted into the signed range).
    pub fixed_input_scale: Option<f64>,
}

/// Min-max calibration over a batch of real-valued inputs.
pub fn calibrate(
    model: &FloatModel,
    inputs: &[Vec<f64>],
    options: CalibrationOptions,
) -> Result<Scales, QuantError> {
    if inputs.is_empty() {
        return Err(QuantError::NoCalibrationInputs);
    }
    model.check_shapes()?;
    let n = model.graph.layers.len();

    let abs_max = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    // Per-input extrema merged with max, so the batch order is irrelevant.
    let per_input: Vec<(f64, Vec<f64>)> = inputs
        .iter()
        .map(|x| {
            let outs = model.forward(x)?;
            Ok((abs_max(x), outs.iter().map(|o| abs_max(o)).collect()))
        })
        .collect::<Result<_, QuantError>>()?;
    let mut in_max = 0.0f64;
    let mut layer_max = vec![0.0f64; n];
    for (im, lm) in &per_input {
        in_max = in_max.max(*im);
        for (a, b) in layer_max.iter_mut().zip(lm) {
            *a = a.max(*b);
        }
    }

    let input = options
        .fixed_input_scale
        .unwrap_or_else(|| AffineScale::from_abs_max(in_max).scale);

    let mut act = vec![None; n];
    let mut weights = vec![None; n];
    let mut current = input;
    for (i, layer) in model.graph.layers.iter().enumerate() {
        match layer.spec {
            LayerSpec::Conv { out_ch, in_ch, kernel } => {
                let p = model.params[i].as_ref().expect("checked");
                let per = in_ch * kernel * kernel;
                let ws: Vec<f64> = (0..out_ch)
                    .map(|o| {
                        let m = p.weights[o * per..(o + 1) * per]
                            .iter()
                            .fold(0.0f64, |m, &w| m.max((w as f64).abs()));
                        AffineScale::from_abs_max(m).scale
                    })
                    .collect();
                weights[i] = Some(ws);
            }
            LayerSpec::Requant { .. } => {
                current = AffineScale::from_abs_max(layer_max[i]).scale;
                act[i] = Some(current);
            }
            LayerSpec::MaxPool | LayerSpec::Flatten => act[i] = Some(current),
            LayerSpec::Linear { .. } => {
                let p = model.params[i].as_ref().expect("checked");
                let m = p.weights.iter().fold(0.0f64, |m, &w| m.max((w as f64).abs()));
                let ws = AffineScale::from_abs_max(m).scale;
                weights[i] = Some(vec![ws]);
                act[i] = Some(current * ws);
            }
        }
    }
    Ok(Scales { input, act, weights })
}

fn round_i32(v: f64) -> i32 {
    v.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32
}

fn positive(at: &str, scale: f64) -> Result<f64, QuantError> {
    if scale > 0.0 && scale.is_finite() {
        Ok(scale)
    } else {
        Err(QuantError::NonPositiveScale { at: at.to_string(), scale })
    }
}

/// Converts a float model into an integer-only graph using `scales`.
pub fn integerize(model: &FloatModel, scales: &Scales) -> Result<QuantizedGraph, QuantError> {
    model.check_shapes()?;
    let graph = &model.graph;
    positive("input", scales.input)?;
    let mut layers = Vec::with_capacity(graph.layers.len());

    for (i, layer) in graph.layers.iter().enumerate() {
        let q = match layer.spec {
            LayerSpec::Conv { in_ch, out_ch, kernel } => {
                let p = model.params[i].as_ref().expect("checked");
                let ws = scales.weights[i].as_ref().ok_or_else(|| QuantError::NonPositiveScale {
                    at: layer.name.clone(),
                    scale: f64::NAN,
                })?;
                let per = in_ch * kernel * kernel;
                let mut data = Vec::with_capacity(p.weights.len());
                for o in 0..out_ch {
                    let s = positive(&layer.name, ws[o])?;
                    data.extend(
                        p.weights[o * per..(o + 1) * per]
                            .iter()
                            .map(|&w| (w as f64 / s).round().clamp(-(QMAX as f64), QMAX as f64) as i8),
                    );
                }
                QuantLayer::Conv(ConvWeights { out_ch, in_ch, kernel, data })
            }
            LayerSpec::Requant { conv } => {
                let s_in = positive(&graph.layers[conv].name, scales.input_of(conv))?;
                let s_out = positive(&layer.name, scales.act[i].unwrap_or(f64::NAN))?;
                let ws = scales.weights[conv].as_ref().expect("conv weight scales");
                let bias = &model.params[conv].as_ref().expect("checked").bias;
                requant_for(s_in, ws, s_out, bias)?
            }
            LayerSpec::MaxPool => QuantLayer::MaxPool,
            LayerSpec::Flatten => QuantLayer::Flatten,
            LayerSpec::Linear { in_features, out_features } => {
                let p = model.params[i].as_ref().expect("checked");
                let s_in = positive(&layer.name, scales.input_of(i))?;
                let s_w = positive(&layer.name, scales.weights[i].as_ref().map_or(f64::NAN, |w| w[0]))?;
                let data = p
                    .weights
                    .iter()
                    .map(|&w| (w as f64 / s_w).round().clamp(-(QMAX as f64), QMAX as f64) as i8)
                    .collect();
                let bias = p.bias.iter().map(|&b| round_i32(b as f64 / (s_in * s_w))).collect();
                QuantLayer::Linear(LinearWeights { out_features, in_features, data, bias })
            }
        };
        layers.push(q);
    }

    let mut scales = scales.clone();
    // Publish the linear output scale from the scales actually used.
    if let Some(i) = graph.layers.iter().position(|l| matches!(l.spec, LayerSpec::Linear { .. })) {
        scales.act[i] = Some(scales.input_of(i) * scales.weights[i].as_ref().expect("linear scale")[0]);
    }
    let q = QuantizedGraph { graph: graph.clone(), layers, scales };
    q.validate()?;
    Ok(q)
}

/// Requant step for one conv: per-channel ratio `s_in * s_w[c] / s_out`
/// with a shared shift, bias folded into the addend, ReLU clip.
fn requant_for(s_in: f64, ws: &[f64], s_out: f64, bias: &[f32]) -> Result<QuantLayer, QuantError> {
    let ratios: Vec<f64> = ws.iter().map(|&w| s_in * w / s_out).collect();
    let mut shift = 31;
    for &r in &ratios {
        shift = shift.min(dyadic_approx(r)?.1);
    }
    let pow = 2f64.powi(shift as i32);
    let mult: Vec<i32> = ratios.iter().map(|r| ((r * pow).round() as i32).max(1)).collect();
    let add = bias
        .iter()
        .zip(ws)
        .zip(&mult)
        .map(|((&b, &w), &m)| round_i32(b as f64 / (s_in * w)) as i64 * m as i64)
        .collect();
    Ok(QuantLayer::Requant(RequantParams { mult, add, shift, clip_lo: 0, clip_hi: QMAX }))
}

/// Real-valued execution where every tensor sits on its quantization
/// lattice: weights are dequantized int8 values, inputs are snapped to the
/// input lattice, and each conv result is snapped to the accumulator lattice
/// `s_in * s_w[c]` before the dyadic rescale and clip. Returns the real
/// value of the final linear layer (not snapped).
pub fn fake_quant_reference(q: &QuantizedGraph, input: &[f64]) -> Result<Vec<f64>, QuantError> {
    let graph = &q.graph;
    let in_shape = graph.input_shape();
    if input.len() != in_shape.len() {
        return Err(QuantError::ShapeMismatch { layer: "input".into(), expected: in_shape.len(), got: input.len() });
    }
    let s0 = q.scales.input;
    let mut x: Vec<f64> = input
        .iter()
        .map(|&v| (v / s0).round().clamp(QMIN as f64, QMAX as f64) * s0)
        .collect();
    // Accumulator lattice steps of the most recent conv.
    let mut acc_steps: Vec<f64> = Vec::new();

    for (i, (layer, ql)) in graph.layers.iter().zip(&q.layers).enumerate() {
        x = match (ql, layer.spec) {
            (QuantLayer::Conv(w), LayerSpec::Conv { out_ch, kernel, in_ch }) => {
                let s_in = q.scales.input_of(i);
                let ws = q.scales.weights[i].as_ref().expect("conv weight scales");
                let per = in_ch * kernel * kernel;
                let real_w: Vec<f64> = w
                    .data
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| v as f64 * ws[j / per])
                    .collect();
                acc_steps = ws.iter().map(|&s| s_in * s).collect();
                let zero_bias = vec![0.0; out_ch];
                conv_f64(&x, layer.input, &real_w, &zero_bias, out_ch, kernel)
            }
            (QuantLayer::Requant(r), LayerSpec::Requant { .. }) => {
                let s_out = q.scales.act[i].expect("requant scale");
                let plane = layer.input.plane();
                x.iter()
                    .enumerate()
                    .map(|(j, &z)| {
                        let c = j / plane;
                        let lattice = (z / acc_steps[c]).round() as i128;
                        let v = (lattice * r.mult[c] as i128 + r.add[c] as i128) >> r.shift;
                        v.clamp(r.clip_lo as i128, r.clip_hi as i128) as f64 * s_out
                    })
                    .collect()
            }
            (QuantLayer::MaxPool, _) => maxpool_f64(&x, layer.input),
            (QuantLayer::Flatten, _) => x,
            (QuantLayer::Linear(w), LayerSpec::Linear { in_features, out_features }) => {
                let s_in = q.scales.input_of(i);
                let s_w = q.scales.weights[i].as_ref().expect("linear scale")[0];
                let real_w: Vec<f64> = w.data.iter().map(|&v| v as f64 * s_w).collect();
                let real_b: Vec<f64> = w.bias.iter().map(|&b| b as f64 * s_in * s_w).collect();
                linear_f64(&x, &real_w, &real_b, in_features, out_features)
            }
            _ => return Err(QuantError::GraphMismatch(layer.name.clone())),
        };
    }
    Ok(x)
}

/// Seeded random model plus uniform calibration inputs in `[-1, 1)`.
pub fn random_calibration_inputs(graph: &ModelGraph, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.input_shape().len();
    (0..count).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_graph, NetworkConfig};

    #[test]
    fn dyadic_examples() {
        assert_eq!(dyadic_approx(0.5).unwrap(), (1 << 30, 31));
        assert_eq!(dyadic_approx(1.0).unwrap(), (1 << 30, 30));
        let (m, s) = dyadic_approx(1.0 / 3.0).unwrap();
        assert_eq!((m, s), (715_827_883, 31));
        assert!((m as f64 / 2f64.powi(31) - 1.0 / 3.0).abs() < 3e-10);
        assert!(dyadic_approx(0.0).is_err());
        assert!(dyadic_approx(-1.0).is_err());
        assert!(dyadic_approx(2f64.powi(31)).is_err());
        assert!(dyadic_approx(f64::NAN).is_err());
    }

    #[test]
    fn scale_rules() {
        assert_eq!(AffineScale::from_abs_max(0.0).scale, 1.0);
        assert!((AffineScale::from_abs_max(1.0).scale - 1.0 / 127.0).abs() < 1e-18);
        assert!((AffineScale::from_abs_max(6.35).scale - 0.05).abs() < 1e-15);
    }

    #[test]
    fn requant_validation() {
        let mut r = RequantParams { mult: vec![1], add: vec![0], shift: 0, clip_lo: 0, clip_hi: 127 };
        assert!(r.validate().is_ok());
        r.mult[0] = 0;
        assert!(r.validate().is_err());
        r.mult[0] = 1;
        r.shift = 32;
        assert!(r.validate().is_err());
        r.shift = 0;
        r.clip_lo = 127;
        assert!(r.validate().is_err());
    }

    fn one_conv(res: usize, k: usize, cin: usize, cout: usize) -> ModelGraph {
        let c = NetworkConfig {
            resolution: res,
            classes: 1,
            first_kernel: k,
            boxes: 1,
            grid: 1,
            backbone_channels: vec![cout],
            pool_after: vec![],
            in_channels: cin,
        };
        build_graph(&c).unwrap()
    }

    fn with_params(graph: &ModelGraph, conv_w: Vec<f32>, conv_b: Vec<f32>) -> FloatModel {
        let mut m = FloatModel::random(graph, 0);
        m.params[0] = Some(FloatParams { weights: conv_w, bias: conv_b });
        m
    }

    #[test]
    fn calibration_rules() {
        let g = one_conv(2, 1, 1, 1);
        let zero = with_params(&g, vec![0.0], vec![0.0]);
        let s = calibrate(&zero, &[vec![0.0; 4]], CalibrationOptions::default()).unwrap();
        assert_eq!(s.input, 1.0);
        assert_eq!(s.act[1], Some(1.0));
        assert_eq!(s.weights[0].as_ref().unwrap()[0], 1.0);

        let ones = with_params(&g, vec![-1.0], vec![0.0]);
        let s = calibrate(&ones, &[vec![-6.35, 1.0, 2.0, 0.5]], CalibrationOptions::default()).unwrap();
        assert!((s.input - 0.05).abs() < 1e-15);
        assert!((s.weights[0].as_ref().unwrap()[0] - 1.0 / 127.0).abs() < 1e-18);

        assert_eq!(calibrate(&ones, &[], CalibrationOptions::default()), Err(QuantError::NoCalibrationInputs));
        let bad = with_params(&g, vec![1.0, 2.0], vec![0.0]);
        assert!(matches!(
            calibrate(&bad, &[vec![0.0; 4]], CalibrationOptions::default()),
            Err(QuantError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn identity_conv_integerizes_to_unit_ratio() {
        let g = one_conv(3, 1, 1, 1);
        let m = with_params(&g, vec![1.0], vec![0.0]);
        let scales = Scales {
            input: 1.0,
            act: vec![None, Some(1.0), Some(1.0), Some(1.0)],
            weights: vec![Some(vec![1.0]), None, None, Some(vec![1.0])],
        };
        let q = integerize(&m, &scales).unwrap();
        let QuantLayer::Requant(r) = &q.layers[1] else { panic!() };
        assert_eq!(r.mult[0] as f64 / 2f64.powi(r.shift as i32), 1.0);
        assert_eq!(r.add[0], 0);
        for acc in [-5, 0, 7, 127, 300] {
            assert_eq!(r.apply(0, acc) as i32, acc.clamp(0, 127));
        }
    }

    #[test]
    fn bias_folds_into_addend() {
        let g = one_conv(3, 1, 1, 1);
        let m = with_params(&g, vec![1.0], vec![1.27]);
        // s_in * s_w = 0.01, so the bias sits 127 steps above zero.
        let scales = Scales {
            input: 0.1,
            act: vec![None, Some(0.01), Some(0.01), Some(0.01)],
            weights: vec![Some(vec![0.1]), None, None, Some(vec![1.0])],
        };
        let q = integerize(&m, &scales).unwrap();
        let QuantLayer::Requant(r) = &q.layers[1] else { panic!() };
        assert_eq!(r.add[0], 127 * r.mult[0] as i64);
    }

    #[test]
    fn integerize_rejects_bad_scales() {
        let g = one_conv(3, 1, 1, 1);
        let m = with_params(&g, vec![1.0], vec![0.0]);
        let scales = Scales {
            input: 0.0,
            act: vec![None, Some(1.0), Some(1.0), Some(1.0)],
            weights: vec![Some(vec![1.0]), None, None, Some(vec![1.0])],
        };
        assert!(matches!(integerize(&m, &scales), Err(QuantError::NonPositiveScale { .. })));
    }

    #[test]
    fn fake_quant_matches_float_on_integer_lattice() {
        // Unit scales and integer weights: fake-quant equals plain float.
        let g = one_conv(4, 3, 2, 2);
        let mut m = FloatModel::random(&g, 3);
        for p in m.params.iter_mut().flatten() {
            for w in p.weights.iter_mut() {
                *w = (*w * 2.0).round();
            }
            p.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let n = g.layers.len();
        let scales = Scales {
            input: 1.0,
            act: (0..n).map(|i| if i == 0 { None } else { Some(1.0) }).collect(),
            weights: g
                .layers
                .iter()
                .map(|l| match l.spec {
                    LayerSpec::Conv { out_ch, .. } => Some(vec![1.0; out_ch]),
                    LayerSpec::Linear { .. } => Some(vec![1.0]),
                    _ => None,
                })
                .collect(),
        };
        let q = integerize(&m, &scales).unwrap();
        let input: Vec<f64> = (0..32).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let fq = fake_quant_reference(&q, &input).unwrap();
        let fl = m.forward(&input).unwrap();
        assert_eq!(&fq, fl.last().unwrap());

        let zero = fake_quant_reference(&q, &vec![0.0; 32]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }
}
