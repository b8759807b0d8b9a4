//! `TYQW` binary container for integer weights and activation dumps.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! "TYQW" | version: u16 | record count: u16
//! per record:
//!   name length: u16 | name bytes (UTF-8) | dtype: u8 | dims: u32 x 4 | payload
//! ```
//!
//! The payload holds `dims[0]*dims[1]*dims[2]*dims[3]` elements of the
//! dtype's width. Tensors are channel-major; conv weights use dims
//! `[out, in, k, k]`, linear weights `[out, in, 1, 1]`, activations
//! `[c, h, w, 1]`.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{LayerSpec, ModelGraph, TensorShape};
use crate::quant::{ConvWeights, LinearWeights, QuantLayer, QuantizedGraph, RequantParams, Scales};
use crate::tensor::{Activation, Tensor};

pub const MAGIC: &[u8; 4] = b"TYQW";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    Version(u16),
    #[error("truncated container")]
    Truncated,
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("record name is not UTF-8")]
    BadName,
    #[error("too many records ({0}) for a u16 count")]
    TooManyRecords(usize),
    #[error("missing record {0:?}")]
    Missing(String),
    #[error("record {name:?}: {msg}")]
    Invalid { name: String, msg: String },
    #[error("{0} trailing bytes after last record")]
    Trailing(usize),
}

/// Element type codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    Int8Weights = 0,
    Int32Bias = 1,
    RequantMult = 2,
    /// int64 addends (bias folded in the pre-shift domain).
    RequantAdd = 3,
    /// int32 scalars: `[shift, clip_lo, clip_hi]`.
    Scalar = 4,
    /// float64 scales.
    Scale = 5,
}

impl DType {
    pub fn from_code(code: u8) -> Result<Self, ContainerError> {
        Ok(match code {
            0 => DType::Int8Weights,
            1 => DType::Int32Bias,
            2 => DType::RequantMult,
            3 => DType::RequantAdd,
            4 => DType::Scalar,
            5 => DType::Scale,
            c => return Err(ContainerError::UnknownDtype(c)),
        })
    }

    pub fn width(self) -> usize {
        match self {
            DType::Int8Weights => 1,
            DType::Int32Bias | DType::RequantMult | DType::Scalar => 4,
            DType::RequantAdd | DType::Scale => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    I8(Vec<i8>),
    I32(Vec<i32>),
    I64(Vec<i64>),
    F64(Vec<f64>),
}

impl Data {
    pub fn len(&self) -> usize {
        match self {
            Data::I8(v) => v.len(),
            Data::I32(v) => v.len(),
            Data::I64(v) => v.len(),
            Data::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub dims: [u32; 4],
    pub data: Data,
}

impl Record {
    pub fn new(name: impl Into<String>, dtype: DType, dims: [usize; 4], data: Data) -> Self {
        Self { name: name.into(), dtype, dims: dims.map(|d| d as u32), data }
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    fn invalid(&self, msg: impl Into<String>) -> ContainerError {
        ContainerError::Invalid { name: self.name.clone(), msg: msg.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub records: Vec<Record>,
}

impl Container {
    pub fn get(&self, name: &str) -> Result<&Record, ContainerError> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| ContainerError::Missing(name.to_string()))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), ContainerError> {
        let count = u16::try_from(self.records.len()).map_err(|_| ContainerError::TooManyRecords(self.records.len()))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&count.to_le_bytes())?;
        for r in &self.records {
            if r.element_count() != r.data.len() {
                return Err(r.invalid(format!("dims hold {} elements, data has {}", r.element_count(), r.data.len())));
            }
            let name = r.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| r.invalid("name too long"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[r.dtype as u8])?;
            for d in r.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(r.data.len() * r.dtype.width());
            match (&r.data, r.dtype.width()) {
                (Data::I8(v), 1) => buf.extend(v.iter().map(|&x| x as u8)),
                (Data::I32(v), 4) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
                (Data::I64(v), 8) if r.dtype == DType::RequantAdd => {
                    v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()))
                }
                (Data::F64(v), 8) if r.dtype == DType::Scale => {
                    v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()))
                }
                _ => return Err(r.invalid("data variant does not match dtype")),
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ContainerError> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4)?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(ContainerError::BadMagic(magic));
        }
        let version = cur.u16()?;
        if version != VERSION {
            return Err(ContainerError::Version(version));
        }
        let count = cur.u16()? as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let len = cur.u16()? as usize;
            let name = std::str::from_utf8(cur.take(len)?).map_err(|_| ContainerError::BadName)?.to_string();
            let dtype = DType::from_code(cur.take(1)?[0])?;
            let mut dims = [0u32; 4];
            for d in dims.iter_mut() {
                *d = cur.u32()?;
            }
            let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize)).ok_or(ContainerError::Truncated)?;
            let raw = cur.take(n.checked_mul(dtype.width()).ok_or(ContainerError::Truncated)?)?;
            let data = match dtype {
                DType::Int8Weights => Data::I8(raw.iter().map(|&b| b as i8).collect()),
                DType::Int32Bias | DType::RequantMult | DType::Scalar => {
                    Data::I32(raw.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect())
                }
                DType::RequantAdd => {
                    Data::I64(raw.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect())
                }
                DType::Scale => {
                    Data::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
                }
            };
            records.push(Record { name, dtype, dims, data });
        }
        if cur.pos != bytes.len() {
            return Err(ContainerError::Trailing(bytes.len() - cur.pos));
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(ContainerError::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl QuantizedGraph {
    /// Serializes weights, requant parameters and scales in layer order.
    pub fn to_container(&self) -> Container {
        let mut records = vec![Record::new("input.scale", DType::Scale, [1, 1, 1, 1], Data::F64(vec![self.scales.input]))];
        for (i, (layer, ql)) in self.graph.layers.iter().zip(&self.layers).enumerate() {
            let name = &layer.name;
            match ql {
                QuantLayer::Conv(w) => {
                    records.push(Record::new(
                        format!("{name}.weight"),
                        DType::Int8Weights,
                        [w.out_ch, w.in_ch, w.kernel, w.kernel],
                        Data::I8(w.data.clone()),
                    ));
                    let ws = self.scales.weights[i].clone().unwrap_or_default();
                    records.push(Record::new(format!("{name}.wscale"), DType::Scale, [ws.len(), 1, 1, 1], Data::F64(ws)));
                }
                QuantLayer::Requant(r) => {
                    let c = r.channels();
                    records.push(Record::new(format!("{name}.mult"), DType::RequantMult, [c, 1, 1, 1], Data::I32(r.mult.clone())));
                    records.push(Record::new(format!("{name}.add"), DType::RequantAdd, [c, 1, 1, 1], Data::I64(r.add.clone())));
                    records.push(Record::new(
                        format!("{name}.params"),
                        DType::Scalar,
                        [3, 1, 1, 1],
                        Data::I32(vec![r.shift as i32, r.clip_lo, r.clip_hi]),
                    ));
                    let s = self.scales.act[i].unwrap_or(f64::NAN);
                    records.push(Record::new(format!("{name}.scale"), DType::Scale, [1, 1, 1, 1], Data::F64(vec![s])));
                }
                QuantLayer::MaxPool | QuantLayer::Flatten => {}
                QuantLayer::Linear(w) => {
                    records.push(Record::new(
                        format!("{name}.weight"),
                        DType::Int8Weights,
                        [w.out_features, w.in_features, 1, 1],
                        Data::I8(w.data.clone()),
                    ));
                    records.push(Record::new(
                        format!("{name}.bias"),
                        DType::Int32Bias,
                        [w.out_features, 1, 1, 1],
                        Data::I32(w.bias.clone()),
                    ));
                    let ws = self.scales.weights[i].clone().unwrap_or_default();
                    records.push(Record::new(format!("{name}.wscale"), DType::Scale, [ws.len(), 1, 1, 1], Data::F64(ws)));
                }
            }
        }
        Container { records }
    }

    /// Rebuilds a quantized graph for `graph` from a container.
    pub fn from_container(graph: &ModelGraph, c: &Container) -> Result<Self, ContainerError> {
        fn expect(r: &Record, dims: [usize; 4]) -> Result<&Data, ContainerError> {
            if r.dims.map(|d| d as usize) != dims {
                return Err(r.invalid(format!("dims {:?}, expected {:?}", r.dims, dims)));
            }
            Ok(&r.data)
        }
        let f64s = |name: String, n: usize| -> Result<Vec<f64>, ContainerError> {
            let r = c.get(&name)?;
            match expect(r, [n, 1, 1, 1])? {
                Data::F64(v) => Ok(v.clone()),
                _ => Err(r.invalid("expected f64 scales")),
            }
        };

        let input = f64s("input.scale".into(), 1)?[0];
        let n = graph.layers.len();
        let mut layers = Vec::with_capacity(n);
        let mut act: Vec<Option<f64>> = vec![None; n];
        let mut weights: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut current = input;

        for (i, layer) in graph.layers.iter().enumerate() {
            let name = &layer.name;
            let ql = match layer.spec {
                LayerSpec::Conv { in_ch, out_ch, kernel } => {
                    let r = c.get(&format!("{name}.weight"))?;
                    let Data::I8(data) = expect(r, [out_ch, in_ch, kernel, kernel])? else {
                        return Err(r.invalid("expected int8 weights"));
                    };
                    weights[i] = Some(f64s(format!("{name}.wscale"), out_ch)?);
                    QuantLayer::Conv(ConvWeights { out_ch, in_ch, kernel, data: data.clone() })
                }
                LayerSpec::Requant { .. } => {
                    let ch = layer.input.channels;
                    let rm = c.get(&format!("{name}.mult"))?;
                    let Data::I32(mult) = expect(rm, [ch, 1, 1, 1])? else { return Err(rm.invalid("expected int32")) };
                    let ra = c.get(&format!("{name}.add"))?;
                    let Data::I64(add) = expect(ra, [ch, 1, 1, 1])? else { return Err(ra.invalid("expected int64")) };
                    let rp = c.get(&format!("{name}.params"))?;
                    let Data::I32(p) = expect(rp, [3, 1, 1, 1])? else { return Err(rp.invalid("expected int32")) };
                    current = f64s(format!("{name}.scale"), 1)?[0];
                    act[i] = Some(current);
                    let shift = u32::try_from(p[0]).map_err(|_| rp.invalid("negative shift"))?;
                    let r = RequantParams { mult: mult.clone(), add: add.clone(), shift, clip_lo: p[1], clip_hi: p[2] };
                    r.validate().map_err(|e| rp.invalid(e.to_string()))?;
                    QuantLayer::Requant(r)
                }
                LayerSpec::MaxPool => {
                    act[i] = Some(current);
                    QuantLayer::MaxPool
                }
                LayerSpec::Flatten => {
                    act[i] = Some(current);
                    QuantLayer::Flatten
                }
                LayerSpec::Linear { in_features, out_features } => {
                    let r = c.get(&format!("{name}.weight"))?;
                    let Data::I8(data) = expect(r, [out_features, in_features, 1, 1])? else {
                        return Err(r.invalid("expected int8 weights"));
                    };
                    let rb = c.get(&format!("{name}.bias"))?;
                    let Data::I32(bias) = expect(rb, [out_features, 1, 1, 1])? else {
                        return Err(rb.invalid("expected int32 bias"));
                    };
                    let ws = f64s(format!("{name}.wscale"), 1)?;
                    act[i] = Some(current * ws[0]);
                    weights[i] = Some(ws);
                    QuantLayer::Linear(LinearWeights { out_features, in_features, data: data.clone(), bias: bias.clone() })
                }
            };
            layers.push(ql);
        }
        let q = QuantizedGraph { graph: graph.clone(), layers, scales: Scales { input, act, weights } };
        q.validate().map_err(|e| ContainerError::Invalid { name: "<graph>".into(), msg: e.to_string() })?;
        Ok(q)
    }
}

/// Activation dump: one record per layer output, named `act.<layer>`.
pub fn activation_dump(graph: &ModelGraph, snapshots: &[Activation]) -> Container {
    let records = graph
        .layers
        .iter()
        .zip(snapshots)
        .map(|(l, a)| {
            let s = a.shape();
            let dims = [s.channels, s.height, s.width, 1];
            match a {
                Activation::I8(t) => Record::new(format!("act.{}", l.name), DType::Int8Weights, dims, Data::I8(t.data.clone())),
                Activation::I32(t) => Record::new(format!("act.{}", l.name), DType::Int32Bias, dims, Data::I32(t.data.clone())),
            }
        })
        .collect();
    Container { records }
}

/// Inverse of [`activation_dump`].
pub fn read_activation_dump(c: &Container) -> Result<Vec<(String, Activation)>, ContainerError> {
    c.records
        .iter()
        .map(|r| {
            let name = r.name.strip_prefix("act.").ok_or_else(|| r.invalid("not an activation record"))?;
            let shape = TensorShape::new(r.dims[0] as usize, r.dims[1] as usize, r.dims[2] as usize);
            let act = match &r.data {
                Data::I8(v) => Activation::I8(Tensor::from_vec(shape, v.clone())),
                Data::I32(v) => Activation::I32(Tensor::from_vec(shape, v.clone())),
                _ => return Err(r.invalid("unexpected dtype")),
            };
            Ok((name.to_string(), act))
        })
        .collect()
}
