//! Bit-exact integer inference over a [`QuantizedGraph`].
//!
//! Kernels are pure functions. Convolutions split work across output
//! channels with rayon; every channel is written by exactly one worker, so
//! results do not depend on the thread count.

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{LayerSpec, TensorShape};
use crate::quant::{ConvWeights, LinearWeights, QuantLayer, QuantizedGraph, RequantParams};
use crate::tensor::{Activation, Tensor};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    Shape { op: &'static str, expected: String, got: String },
    #[error("layer {layer}: expected {expected} input")]
    Dtype { layer: String, expected: &'static str },
    #[error("unsupported kernel size {0}")]
    Kernel(usize),
}

fn shape_err(op: &'static str, expected: impl ToString, got: impl ToString) -> ExecError {
    ExecError::Shape { op, expected: expected.to_string(), got: got.to_string() }
}

/// Same-padded, stride-1 integer convolution with 32-bit accumulation.
pub fn conv2d_int(
    input: &Tensor<i8>,
    weights: &ConvWeights,
    bias: Option<&[i32]>,
) -> Result<Tensor<i32>, ExecError> {
    let k = weights.kernel;
    if k % 2 == 0 || k > 7 {
        return Err(ExecError::Kernel(k));
    }
    if input.shape.channels != weights.in_ch {
        return Err(shape_err("conv2d", weights.in_ch, input.shape.channels));
    }
    if weights.data.len() != weights.out_ch * weights.in_ch * k * k {
        return Err(shape_err("conv2d weights", weights.out_ch * weights.in_ch * k * k, weights.data.len()));
    }
    if let Some(b) = bias {
        if b.len() != weights.out_ch {
            return Err(shape_err("conv2d bias", weights.out_ch, b.len()));
        }
    }
    let (h, w) = (input.shape.height, input.shape.width);
    let pad = k / 2;
    let out_shape = TensorShape::new(weights.out_ch, h, w);
    let mut out = Tensor::<i32>::zeros(out_shape);
    let plane = h * w;

    out.data.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
        let filter = weights.filter(o);
        let b = bias.map_or(0, |b| b[o]);
        for y in 0..h {
            let ky0 = pad.saturating_sub(y);
            let ky1 = k.min(h + pad - y);
            for x in 0..w {
                let kx0 = pad.saturating_sub(x);
                let kx1 = k.min(w + pad - x);
                let mut acc = b;
                for i in 0..weights.in_ch {
                    let src = input.channel(i);
                    let f = &filter[i * k * k..(i + 1) * k * k];
                    for ky in ky0..ky1 {
                        let sy = y + ky - pad;
                        let row = &src[sy * w..];
                        for kx in kx0..kx1 {
                            acc += f[ky * k + kx] as i32 * row[x + kx - pad] as i32;
                        }
                    }
                }
                dst[y * w + x] = acc;
            }
        }
    });
    Ok(out)
}

/// 2x2 stride-2 max-pool; odd trailing rows/columns are dropped.
pub fn maxpool_int(input: &Tensor<i8>) -> Result<Tensor<i8>, ExecError> {
    let s = input.shape;
    if s.height < 2 || s.width < 2 {
        return Err(shape_err("maxpool", "spatial dims >= 2", s));
    }
    let out_shape = TensorShape::new(s.channels, s.height / 2, s.width / 2);
    let mut out = Vec::with_capacity(out_shape.len());
    for c in 0..s.channels {
        let src = input.channel(c);
        for y in 0..out_shape.height {
            let r0 = &src[2 * y * s.width..];
            let r1 = &src[(2 * y + 1) * s.width..];
            for x in 0..out_shape.width {
                out.push(r0[2 * x].max(r0[2 * x + 1]).max(r1[2 * x]).max(r1[2 * x + 1]));
            }
        }
    }
    Ok(Tensor::from_vec(out_shape, out))
}

/// Per-channel multiply, add, arithmetic right shift and clip.
pub fn requant_apply(acc: &Tensor<i32>, params: &RequantParams) -> Result<Tensor<i8>, ExecError> {
    if params.channels() != acc.shape.channels || params.add.len() != params.mult.len() {
        return Err(shape_err("requant", acc.shape.channels, params.channels()));
    }
    let plane = acc.shape.plane();
    let data = acc
        .data
        .iter()
        .enumerate()
        .map(|(j, &v)| params.apply(j / plane.max(1), v))
        .collect();
    Ok(Tensor::from_vec(acc.shape, data))
}

pub fn linear_int(input: &[i8], weights: &LinearWeights) -> Result<Tensor<i32>, ExecError> {
    if input.len() != weights.in_features {
        return Err(shape_err("linear", weights.in_features, input.len()));
    }
    if weights.bias.len() != weights.out_features || weights.data.len() != weights.in_features * weights.out_features
    {
        return Err(shape_err("linear weights", weights.out_features, weights.bias.len()));
    }
    let data = (0..weights.out_features)
        .into_par_iter()
        .map(|o| {
            weights.bias[o]
                + weights
                    .row(o)
                    .iter()
                    .zip(input)
                    .map(|(&a, &b)| a as i32 * b as i32)
                    .sum::<i32>()
        })
        .collect();
    Ok(Tensor::from_vec(TensorShape::new(weights.out_features, 1, 1), data))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerTrace {
    pub name: String,
    pub kind: &'static str,
    pub output: TensorShape,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    pub output: Tensor<i32>,
    pub trace: Vec<LayerTrace>,
    /// Every layer's output, in graph order, when capture was requested.
    pub snapshots: Option<Vec<Activation>>,
}

/// Executes the graph in layer order on an int8 input image tensor.
pub fn run(q: &QuantizedGraph, input: &Tensor<i8>, capture: bool) -> Result<RunOutput, ExecError> {
    let expected = q.graph.input_shape();
    if input.shape != expected {
        return Err(shape_err("run input", expected, input.shape));
    }
    let mut current = Activation::I8(input.clone());
    let mut trace = Vec::with_capacity(q.layers.len());
    let mut snapshots = capture.then(Vec::new);

    for (layer, ql) in q.graph.layers.iter().zip(&q.layers) {
        let dtype = |expected| ExecError::Dtype { layer: layer.name.clone(), expected };
        current = match ql {
            QuantLayer::Conv(w) => {
                let x = current.as_i8().ok_or_else(|| dtype("int8"))?;
                Activation::I32(conv2d_int(x, w, None)?)
            }
            QuantLayer::Requant(r) => {
                let x = current.as_i32().ok_or_else(|| dtype("int32"))?;
                Activation::I8(requant_apply(x, r)?)
            }
            QuantLayer::MaxPool => Activation::I8(maxpool_int(current.as_i8().ok_or_else(|| dtype("int8"))?)?),
            QuantLayer::Flatten => {
                let Activation::I8(t) = current else { return Err(dtype("int8")) };
                let n = t.shape.len();
                Activation::I8(t.reshaped(TensorShape::new(n, 1, 1)))
            }
            QuantLayer::Linear(w) => {
                let x = current.as_i8().ok_or_else(|| dtype("int8"))?;
                Activation::I32(linear_int(&x.data, w)?)
            }
        };
        if current.shape() != layer.output {
            return Err(shape_err("layer output", layer.output, current.shape()));
        }
        trace.push(LayerTrace { name: layer.name.clone(), kind: layer.spec.kind(), output: layer.output });
        if let Some(s) = snapshots.as_mut() {
            s.push(current.clone());
        }
    }

    match current {
        Activation::I32(output) => Ok(RunOutput { output, trace, snapshots }),
        Activation::I8(_) => Err(ExecError::Dtype { layer: "output".into(), expected: "int32" }),
    }
}

/// Worst-case accumulator magnitude for a conv with the given kernel side
/// and input channels (int8 operands, no bias).
pub fn accumulator_bound(kernel: usize, in_ch: usize) -> i64 {
    (kernel * kernel * in_ch) as i64 * 128 * 128
}

/// True if every conv and linear layer of the graph is overflow-free in
/// 32-bit accumulation (bias excluded).
pub fn accumulators_fit(q: &QuantizedGraph) -> bool {
    q.graph.layers.iter().all(|l| match l.spec {
        LayerSpec::Conv { kernel, in_ch, .. } => accumulator_bound(kernel, in_ch) < i32::MAX as i64,
        LayerSpec::Linear { in_features, .. } => accumulator_bound(1, in_features) < i32::MAX as i64,
        _ => true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t8(c: usize, h: usize, w: usize, data: Vec<i8>) -> Tensor<i8> {
        Tensor::from_vec(TensorShape::new(c, h, w), data)
    }

    #[test]
    fn conv_single_pixel() {
        let w = ConvWeights { out_ch: 1, in_ch: 1, kernel: 1, data: vec![3] };
        let out = conv2d_int(&t8(1, 1, 1, vec![5]), &w, Some(&[2])).unwrap();
        assert_eq!(out.data, vec![17]);
    }

    #[test]
    fn conv_zero_padding_counts() {
        let w = ConvWeights { out_ch: 1, in_ch: 1, kernel: 3, data: vec![1; 9] };
        let out = conv2d_int(&t8(1, 3, 3, vec![1; 9]), &w, None).unwrap();
        assert_eq!(out.data, vec![4, 6, 4, 6, 9, 6, 4, 6, 4]);
    }

    #[test]
    fn conv_rejects_mismatch() {
        let w = ConvWeights { out_ch: 1, in_ch: 2, kernel: 3, data: vec![1; 18] };
        assert!(conv2d_int(&t8(1, 3, 3, vec![1; 9]), &w, None).is_err());
        let w = ConvWeights { out_ch: 1, in_ch: 1, kernel: 2, data: vec![1; 4] };
        assert_eq!(conv2d_int(&t8(1, 3, 3, vec![1; 9]), &w, None), Err(ExecError::Kernel(2)));
    }

    #[test]
    fn pool_floor_and_constant() {
        let x = t8(2, 11, 11, vec![7; 242]);
        let y = maxpool_int(&x).unwrap();
        assert_eq!(y.shape, TensorShape::new(2, 5, 5));
        assert!(y.data.iter().all(|&v| v == 7));
        assert!(maxpool_int(&t8(1, 1, 4, vec![0; 4])).is_err());
    }

    #[test]
    fn requant_examples() {
        let p = RequantParams { mult: vec![3], add: vec![8], shift: 4, clip_lo: 0, clip_hi: 127 };
        let acc = Tensor::from_vec(TensorShape::new(1, 1, 2), vec![100, -1000]);
        assert_eq!(requant_apply(&acc, &p).unwrap().data, vec![19, 0]);
        let bad = RequantParams { mult: vec![1, 1], add: vec![0, 0], ..p };
        assert!(requant_apply(&acc, &bad).is_err());
    }

    #[test]
    fn linear_identity() {
        let n = 4;
        let mut data = vec![0i8; n * n];
        for i in 0..n {
            data[i * n + i] = 1;
        }
        let w = LinearWeights { out_features: n, in_features: n, data, bias: vec![0; n] };
        let out = linear_int(&[1, -2, 3, -4], &w).unwrap();
        assert_eq!(out.data, vec![1, -2, 3, -4]);
        assert!(linear_int(&[1, 2, 3], &w).is_err());
    }

    #[test]
    fn accumulator_bound_fits_supported_shapes() {
        assert!(accumulator_bound(7, 128) < i32::MAX as i64);
        assert!(accumulator_bound(3, 128) < i32::MAX as i64);
    }
}
