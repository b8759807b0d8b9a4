//! Tiling for a three-level memory hierarchy (L1 scratchpad, L2, L3) and a
//! tile-by-tile executor that simulates the L1 buffers.
//!
//! Convolutions are tiled over output rows, columns and channels; the input
//! tile always carries every input channel plus the clipped `k - 1` halo.
//! Requantization is applied as each conv output tile is produced, so the
//! requant layer itself moves no data. Two loop orders are considered:
//! weights-stationary (channel tiles outermost) and input-stationary
//! (spatial tiles outermost). The input buffer is reloaded when the spatial
//! tile changes and the weight buffer when the channel tile changes.

use std::cmp::Reverse;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Layer, LayerSpec, ModelGraph, TensorShape};
use crate::quant::{QuantLayer, QuantizedGraph, RequantParams};
use crate::tensor::{Activation, Tensor};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TilerError {
    #[error("invalid memory hierarchy: {0}")]
    Hierarchy(String),
    #[error("layer {layer}: no tiling fits L1 ({l1_bytes} bytes); smallest buffer is {smallest} bytes")]
    Infeasible { layer: String, l1_bytes: usize, smallest: usize },
    #[error("layer {layer}: L2 working set of {needed} bytes exceeds L2 ({l2_bytes} bytes)")]
    L2Capacity { layer: String, needed: usize, l2_bytes: usize },
    #[error("weights exceed L3 ({l3_bytes} bytes) at layer {layer} ({needed} bytes cumulative)")]
    L3Capacity { layer: String, needed: usize, l3_bytes: usize },
    #[error("plan does not match graph: {0}")]
    Mismatch(String),
    #[error("layer {layer}: L1 overflow ({used} > {l1_bytes} bytes)")]
    L1Overflow { layer: String, used: usize, l1_bytes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryHierarchy {
    pub l1_bytes: usize,
    pub l2_bytes: usize,
    pub l3_bytes: usize,
    #[serde(default)]
    pub double_buffering: bool,
}

impl Default for MemoryHierarchy {
    fn default() -> Self {
        Self { l1_bytes: 131_072, l2_bytes: 1_572_864, l3_bytes: 8 * 1024 * 1024, double_buffering: false }
    }
}

impl MemoryHierarchy {
    pub fn validate(&self) -> Result<(), TilerError> {
        if self.l1_bytes == 0 || self.l2_bytes == 0 || self.l3_bytes == 0 {
            return Err(TilerError::Hierarchy("sizes must be positive".into()));
        }
        if self.l1_bytes >= self.l2_bytes || self.l2_bytes > self.l3_bytes {
            return Err(TilerError::Hierarchy(format!(
                "need l1 < l2 <= l3, got {} / {} / {}",
                self.l1_bytes, self.l2_bytes, self.l3_bytes
            )));
        }
        Ok(())
    }

    fn buffer_factor(&self) -> usize {
        if self.double_buffering {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopOrder {
    /// Channel tiles outermost; each weight tile is loaded once.
    WeightsStationary,
    /// Spatial tiles outermost; each input tile is loaded once.
    InputStationary,
}

/// How a layer is tiled and what it costs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTile {
    pub layer: String,
    pub kind: String,
    pub tile_h: usize,
    pub tile_w: usize,
    pub tile_cin: usize,
    pub tile_cout: usize,
    pub order: LoopOrder,
    /// Input + weight + output tile bytes, doubled under double buffering.
    pub buffer_bytes: usize,
    pub tiles: usize,
    /// L2 to L1 loads plus L1 to L2 stores.
    pub transfer_bytes: usize,
}

impl LayerTile {
    fn empty(layer: &Layer) -> Self {
        Self {
            layer: layer.name.clone(),
            kind: layer.spec.kind().to_string(),
            tile_h: 0,
            tile_w: 0,
            tile_cin: 0,
            tile_cout: 0,
            order: LoopOrder::WeightsStationary,
            buffer_bytes: 0,
            tiles: 0,
            transfer_bytes: 0,
        }
    }

    pub fn volume(&self) -> usize {
        self.tile_h * self.tile_w * self.tile_cout
    }

    /// Ordering key: fewer transfer bytes, then larger tiles, then fewer
    /// tiles; remaining fields make the order total.
    fn key(&self) -> impl Ord {
        (
            self.transfer_bytes,
            Reverse(self.volume()),
            self.tiles,
            self.order,
            Reverse(self.tile_h),
            Reverse(self.tile_w),
            Reverse(self.tile_cout),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightHome {
    /// Resident in L2 for the whole inference.
    L2,
    /// Kept in L3 and staged into L2 for the layer.
    L3,
    /// Too large to stage next to the activations; weight tiles go from L3
    /// straight to L1.
    L3Streamed,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Residency {
    pub weight_bytes: usize,
    pub peak_activation_bytes: usize,
    pub all_weights_in_l2: bool,
    pub homes: Vec<WeightHome>,
    /// Weight bytes read from L3 during one inference.
    pub l3_read_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub memory: MemoryHierarchy,
    pub layers: Vec<LayerTile>,
    pub residency: Residency,
}

impl TilePlan {
    pub fn transfer_bytes(&self) -> usize {
        self.layers.iter().map(|l| l.transfer_bytes).sum()
    }

    pub fn max_buffer_bytes(&self) -> usize {
        self.layers.iter().map(|l| l.buffer_bytes).max().unwrap_or(0)
    }
}

/// Tiles `[0, len)` into chunks of `t`; returns `(start, end)` pairs.
pub fn tile_ranges(len: usize, t: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..len.div_ceil(t)).map(move |i| (i * t, ((i + 1) * t).min(len)))
}

/// Total input extent loaded along one axis: each tile widened by `pad`
/// on both sides and clipped to the tensor.
pub fn halo_sum(len: usize, t: usize, pad: usize) -> usize {
    tile_ranges(len, t).map(|(a, b)| (b + pad).min(len) - a.saturating_sub(pad)).sum()
}

/// Channel-tile groups: for each tile count, the smallest and largest
/// tile size producing it.
fn channel_groups(c: usize) -> Vec<(usize, usize, usize)> {
    let mut groups: Vec<(usize, usize, usize)> = Vec::new();
    for t in 1..=c {
        let n = c.div_ceil(t);
        match groups.last_mut() {
            Some(g) if g.0 == n => g.2 = t,
            _ => groups.push((n, t, t)),
        }
    }
    groups
}

/// Geometry of a tileable layer, shared by the planner, the brute-force
/// evaluation and the executor.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    /// Output rows/cols/channels.
    h: usize,
    w: usize,
    c: usize,
    cin: usize,
    kernel: usize,
    /// Bytes per weight-tile channel.
    weight_per_ch: usize,
    out_elem: usize,
    pool: bool,
}

impl Geometry {
    fn of(layer: &Layer) -> Option<Self> {
        let o = layer.output;
        Some(match layer.spec {
            LayerSpec::Conv { in_ch, kernel, .. } => Self {
                h: o.height,
                w: o.width,
                c: o.channels,
                cin: in_ch,
                kernel,
                weight_per_ch: kernel * kernel * in_ch + 12,
                out_elem: 1,
                pool: false,
            },
            LayerSpec::Linear { in_features, .. } => Self {
                h: 1,
                w: 1,
                c: o.channels,
                cin: in_features,
                kernel: 1,
                weight_per_ch: in_features + 4,
                out_elem: 4,
                pool: false,
            },
            LayerSpec::MaxPool => Self {
                h: o.height,
                w: o.width,
                c: o.channels,
                cin: 0,
                kernel: 0,
                weight_per_ch: 0,
                out_elem: 1,
                pool: true,
            },
            _ => return None,
        })
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    fn in_tile_max(&self, th: usize, tw: usize, tc: usize) -> usize {
        if self.pool {
            tc * 2 * th * 2 * tw
        } else {
            let p = self.pad();
            self.cin * (th + 2 * p).min(self.h) * (tw + 2 * p).min(self.w)
        }
    }

    fn buffer(&self, th: usize, tw: usize, tc: usize, factor: usize) -> usize {
        factor * (self.in_tile_max(th, tw, tc) + tc * self.weight_per_ch + tc * th * tw * self.out_elem)
    }

    fn evaluate(&self, layer: &Layer, th: usize, tw: usize, tc: usize, order: LoopOrder, factor: usize) -> LayerTile {
        let (nh, nw, nc) = (self.h.div_ceil(th), self.w.div_ceil(tw), self.c.div_ceil(tc));
        let ns = nh * nw;
        let out_bytes = self.c * self.h * self.w * self.out_elem;
        let transfer_bytes = if self.pool {
            self.c * 4 * self.h * self.w + out_bytes
        } else {
            let p = self.pad();
            let in_sum = self.cin * halo_sum(self.h, th, p) * halo_sum(self.w, tw, p);
            let weights = self.c * self.weight_per_ch;
            match order {
                LoopOrder::WeightsStationary => weights + if ns > 1 { nc * in_sum } else { in_sum } + out_bytes,
                LoopOrder::InputStationary => in_sum + if nc > 1 { ns * weights } else { weights } + out_bytes,
            }
        };
        LayerTile {
            layer: layer.name.clone(),
            kind: layer.spec.kind().to_string(),
            tile_h: th,
            tile_w: tw,
            tile_cin: if self.pool { tc } else { self.cin },
            tile_cout: tc,
            order,
            buffer_bytes: self.buffer(th, tw, tc, factor),
            tiles: ns * nc,
            transfer_bytes,
        }
    }

    fn orders(&self) -> &'static [LoopOrder] {
        if self.pool {
            &[LoopOrder::WeightsStationary]
        } else {
            &[LoopOrder::WeightsStationary, LoopOrder::InputStationary]
        }
    }
}

/// Cost and buffer size of one specific tiling, or `None` for layers that
/// are not tiled (flatten, fused requant).
pub fn evaluate_tiling(
    layer: &Layer,
    mem: &MemoryHierarchy,
    tile_h: usize,
    tile_w: usize,
    tile_cout: usize,
    order: LoopOrder,
) -> Option<LayerTile> {
    let g = Geometry::of(layer)?;
    if tile_h == 0 || tile_w == 0 || tile_cout == 0 || tile_h > g.h || tile_w > g.w || tile_cout > g.c {
        return None;
    }
    Some(g.evaluate(layer, tile_h, tile_w, tile_cout, order, mem.buffer_factor()))
}

/// Best tiling of one layer under the L1 budget.
pub fn plan_layer(layer: &Layer, mem: &MemoryHierarchy) -> Result<LayerTile, TilerError> {
    let Some(g) = Geometry::of(layer) else {
        return Ok(LayerTile::empty(layer));
    };
    let factor = mem.buffer_factor();
    let groups = channel_groups(g.c);
    let mut best: Option<LayerTile> = None;
    for th in 1..=g.h {
        for tw in 1..=g.w {
            let fixed = factor * g.in_tile_max(th, tw, 0);
            let per_ch = factor * (g.weight_per_ch + th * tw * g.out_elem + if g.pool { 4 * th * tw } else { 0 });
            if fixed + per_ch > mem.l1_bytes {
                continue;
            }
            let tc_cap = (mem.l1_bytes - fixed) / per_ch;
            for &(_, lo, hi) in &groups {
                if lo > tc_cap {
                    continue;
                }
                let tc = hi.min(tc_cap);
                for &order in g.orders() {
                    let cand = g.evaluate(layer, th, tw, tc, order, factor);
                    debug_assert!(cand.buffer_bytes <= mem.l1_bytes);
                    if best.as_ref().is_none_or(|b| cand.key() < b.key()) {
                        best = Some(cand);
                    }
                }
            }
        }
    }
    best.ok_or_else(|| TilerError::Infeasible {
        layer: layer.name.clone(),
        l1_bytes: mem.l1_bytes,
        smallest: g.buffer(1, 1, 1, factor),
    })
}

/// Bytes of a layer's input plus output as stored in L2.
fn l2_activation_bytes(layer: &Layer) -> usize {
    match layer.spec {
        LayerSpec::Requant { .. } | LayerSpec::Flatten => layer.output_bytes(),
        _ => layer.input.len() + layer.output_bytes(),
    }
}

pub fn residency(graph: &ModelGraph, mem: &MemoryHierarchy) -> Result<Residency, TilerError> {
    let mut cumulative = 0;
    for l in &graph.layers {
        cumulative += l.weight_bytes();
        if cumulative > mem.l3_bytes {
            return Err(TilerError::L3Capacity { layer: l.name.clone(), needed: cumulative, l3_bytes: mem.l3_bytes });
        }
    }
    let weight_bytes = cumulative;
    let peak_activation_bytes = graph.layers.iter().map(l2_activation_bytes).max().unwrap_or(0);
    let all_weights_in_l2 = weight_bytes + peak_activation_bytes <= mem.l2_bytes;
    let mut homes = Vec::with_capacity(graph.layers.len());
    let mut l3_read_bytes = 0;
    for l in &graph.layers {
        let w = l.weight_bytes();
        let act = l2_activation_bytes(l);
        let home = if w == 0 {
            WeightHome::None
        } else if all_weights_in_l2 {
            WeightHome::L2
        } else if act + w <= mem.l2_bytes {
            WeightHome::L3
        } else {
            WeightHome::L3Streamed
        };
        let needed = act + if all_weights_in_l2 { weight_bytes } else { 0 };
        if needed > mem.l2_bytes {
            return Err(TilerError::L2Capacity { layer: l.name.clone(), needed, l2_bytes: mem.l2_bytes });
        }
        if matches!(home, WeightHome::L3 | WeightHome::L3Streamed) {
            l3_read_bytes += w;
        }
        homes.push(home);
    }
    Ok(Residency { weight_bytes, peak_activation_bytes, all_weights_in_l2, homes, l3_read_bytes })
}

fn check_pairing(graph: &ModelGraph) -> Result<(), TilerError> {
    for (i, l) in graph.layers.iter().enumerate() {
        let next = graph.layers.get(i + 1).map(|n| n.spec);
        match l.spec {
            LayerSpec::Conv { .. } if !matches!(next, Some(LayerSpec::Requant { conv }) if conv == i) => {
                return Err(TilerError::Mismatch(format!("{} is not followed by its requantization", l.name)));
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn plan_network(graph: &ModelGraph, mem: &MemoryHierarchy) -> Result<TilePlan, TilerError> {
    mem.validate()?;
    check_pairing(graph)?;
    let residency = residency(graph, mem)?;
    let layers = graph.layers.par_iter().map(|l| plan_layer(l, mem)).collect::<Result<Vec<_>, _>>()?;
    Ok(TilePlan { memory: *mem, layers, residency })
}

/// Per-layer outcome of a tiled run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TiledRun {
    pub output: Tensor<i32>,
    pub transfer_bytes: Vec<usize>,
    pub peak_l1_bytes: usize,
}

/// L1 scratchpad with fixed input, weight and output buffers.
struct Scratchpad {
    capacity: usize,
    input: Vec<i8>,
    input_tag: Option<(usize, usize, usize)>,
    weight_tag: Option<usize>,
    output: Vec<i32>,
    transferred: usize,
}

impl Scratchpad {
    fn new(layer: &str, capacity: usize, reserved: usize) -> Result<Self, TilerError> {
        if reserved > capacity {
            return Err(TilerError::L1Overflow { layer: layer.to_string(), used: reserved, l1_bytes: capacity });
        }
        Ok(Self { capacity, input: Vec::new(), input_tag: None, weight_tag: None, output: Vec::new(), transferred: 0 })
    }
}

fn requant_of(q: &QuantizedGraph, conv: usize) -> Result<&RequantParams, TilerError> {
    match q.layers.get(conv + 1) {
        Some(QuantLayer::Requant(r)) => Ok(r),
        _ => Err(TilerError::Mismatch(format!("layer {conv} lacks requantization"))),
    }
}

/// Executes `q` tile by tile following `plan`. Every load and store of the
/// simulated L1 buffers is counted.
pub fn tiled_execute(q: &QuantizedGraph, plan: &TilePlan, input: &Tensor<i8>) -> Result<TiledRun, TilerError> {
    let graph = &q.graph;
    if plan.layers.len() != graph.layers.len() {
        return Err(TilerError::Mismatch(format!("{} plan entries for {} layers", plan.layers.len(), graph.layers.len())));
    }
    if input.shape != graph.input_shape() {
        return Err(TilerError::Mismatch(format!("input {} vs {}", input.shape, graph.input_shape())));
    }
    let mem = plan.memory;
    let factor = mem.buffer_factor();
    let mut current = Activation::I8(input.clone());
    let mut transfers = Vec::with_capacity(plan.layers.len());
    let mut peak_l1 = 0;

    for (i, (layer, tile)) in graph.layers.iter().zip(&plan.layers).enumerate() {
        if tile.layer != layer.name {
            return Err(TilerError::Mismatch(format!("plan entry {} is for {}", layer.name, tile.layer)));
        }
        let geometry = Geometry::of(layer);
        if let Some(g) = geometry {
            if tile.tile_h == 0 || tile.tile_w == 0 || tile.tile_cout == 0 || tile.tile_h > g.h || tile.tile_w > g.w || tile.tile_cout > g.c {
                return Err(TilerError::Mismatch(format!("invalid tile for {}", layer.name)));
            }
            peak_l1 = peak_l1.max(g.buffer(tile.tile_h, tile.tile_w, tile.tile_cout, factor));
        }
        let (next, moved) = match (&q.layers[i], geometry) {
            (QuantLayer::Conv(w), Some(g)) => {
                let x = current.as_i8().ok_or_else(|| TilerError::Mismatch(format!("{} expects int8", layer.name)))?;
                let r = requant_of(q, i)?;
                let out = tiled_conv(layer, x, g, tile, factor, mem.l1_bytes, r, |o, i, ky, kx| w.at(o, i, ky, kx))?;
                (Activation::I8(out.0), out.1)
            }
            (QuantLayer::Linear(w), Some(g)) => {
                let x = current.as_i8().ok_or_else(|| TilerError::Mismatch(format!("{} expects int8", layer.name)))?;
                let flat = Tensor::from_vec(TensorShape::new(x.shape.len(), 1, 1), x.data.clone());
                let (out, moved) = tiled_linear(layer, &flat, g, tile, factor, mem.l1_bytes, |o, i| w.row(o)[i], &w.bias)?;
                (Activation::I32(out), moved)
            }
            (QuantLayer::MaxPool, Some(g)) => {
                let x = current.as_i8().ok_or_else(|| TilerError::Mismatch(format!("{} expects int8", layer.name)))?;
                let (out, moved) = tiled_pool(layer, x, g, tile, factor, mem.l1_bytes)?;
                (Activation::I8(out), moved)
            }
            (QuantLayer::Requant(_), None) => (current, 0),
            (QuantLayer::Flatten, None) => {
                let Activation::I8(t) = current else {
                    return Err(TilerError::Mismatch("flatten expects int8".into()));
                };
                let n = t.shape.len();
                (Activation::I8(t.reshaped(TensorShape::new(n, 1, 1))), 0)
            }
            _ => return Err(TilerError::Mismatch(format!("layer {} kind", layer.name))),
        };
        current = next;
        transfers.push(moved);
    }
    match current {
        Activation::I32(output) => Ok(TiledRun { output, transfer_bytes: transfers, peak_l1_bytes: peak_l1 }),
        Activation::I8(_) => Err(TilerError::Mismatch("graph does not end in a linear layer".into())),
    }
}

#[allow(clippy::too_many_arguments)]
fn tiled_conv(
    layer: &Layer,
    x: &Tensor<i8>,
    g: Geometry,
    tile: &LayerTile,
    factor: usize,
    l1: usize,
    requant: &RequantParams,
    weight: impl Fn(usize, usize, usize, usize) -> i8,
) -> Result<(Tensor<i8>, usize), TilerError> {
    let (th, tw, tc) = (tile.tile_h, tile.tile_w, tile.tile_cout);
    let reserved = g.buffer(th, tw, tc, factor);
    let mut l1s = Scratchpad::new(&layer.name, l1, reserved)?;
    let (h, w, k, p) = (g.h, g.w, g.kernel, g.pad());
    let mut out = Tensor::<i8>::zeros(layer.output);
    let rows: Vec<_> = tile_ranges(h, th).collect();
    let cols: Vec<_> = tile_ranges(w, tw).collect();
    let chans: Vec<_> = tile_ranges(g.c, tc).collect();
    let spatial: Vec<(usize, usize)> = (0..rows.len()).flat_map(|r| (0..cols.len()).map(move |c| (r, c))).collect();
    let mut steps = Vec::with_capacity(spatial.len() * chans.len());
    match tile.order {
        LoopOrder::WeightsStationary => {
            for ci in 0..chans.len() {
                steps.extend(spatial.iter().map(|&s| (s, ci)));
            }
        }
        LoopOrder::InputStationary => {
            for &s in &spatial {
                steps.extend((0..chans.len()).map(|ci| (s, ci)));
            }
        }
    }
    let in_cap = g.in_tile_max(th, tw, tc);
    for ((ri, cj), ci) in steps {
        let (y0, y1) = rows[ri];
        let (x0, x1) = cols[cj];
        let (c0, c1) = chans[ci];
        let (iy0, iy1) = (y0.saturating_sub(p), (y1 + p).min(h));
        let (ix0, ix1) = (x0.saturating_sub(p), (x1 + p).min(w));
        let (ih, iw) = (iy1 - iy0, ix1 - ix0);
        if l1s.input_tag != Some((ri, cj, 0)) {
            l1s.input.clear();
            for c in 0..g.cin {
                for y in iy0..iy1 {
                    let row = &x.channel(c)[y * w..];
                    l1s.input.extend_from_slice(&row[ix0..ix1]);
                }
            }
            if l1s.input.len() > in_cap {
                return Err(TilerError::L1Overflow { layer: layer.name.clone(), used: l1s.input.len(), l1_bytes: l1s.capacity });
            }
            l1s.transferred += l1s.input.len();
            l1s.input_tag = Some((ri, cj, 0));
        }
        if l1s.weight_tag != Some(ci) {
            l1s.transferred += (c1 - c0) * g.weight_per_ch;
            l1s.weight_tag = Some(ci);
        }
        l1s.output.clear();
        for o in c0..c1 {
            for y in y0..y1 {
                for xx in x0..x1 {
                    let mut acc = 0i32;
                    for ky in 0..k {
                        let sy = y + ky;
                        if sy < p || sy - p >= h {
                            continue;
                        }
                        let ly = sy - p - iy0;
                        for kx in 0..k {
                            let sx = xx + kx;
                            if sx < p || sx - p >= w {
                                continue;
                            }
                            let lx = sx - p - ix0;
                            for c in 0..g.cin {
                                acc += weight(o, c, ky, kx) as i32 * l1s.input[(c * ih + ly) * iw + lx] as i32;
                            }
                        }
                    }
                    l1s.output.push(acc);
                }
            }
        }
        let mut it = l1s.output.iter();
        for o in c0..c1 {
            for y in y0..y1 {
                for xx in x0..x1 {
                    let idx = out.index(o, y, xx);
                    out.data[idx] = requant.apply(o, *it.next().expect("tile output"));
                }
            }
        }
        l1s.transferred += (c1 - c0) * (y1 - y0) * (x1 - x0);
    }
    Ok((out, l1s.transferred))
}

fn tiled_linear(
    layer: &Layer,
    x: &Tensor<i8>,
    g: Geometry,
    tile: &LayerTile,
    factor: usize,
    l1: usize,
    weight: impl Fn(usize, usize) -> i8,
    bias: &[i32],
) -> Result<(Tensor<i32>, usize), TilerError> {
    let reserved = g.buffer(1, 1, tile.tile_cout, factor);
    let mut l1s = Scratchpad::new(&layer.name, l1, reserved)?;
    let mut out = Tensor::<i32>::zeros(layer.output);
    l1s.input = x.data.clone();
    l1s.transferred += l1s.input.len();
    for (c0, c1) in tile_ranges(g.c, tile.tile_cout) {
        l1s.transferred += (c1 - c0) * g.weight_per_ch;
        for o in c0..c1 {
            let mut acc = bias[o];
            for (i, &v) in l1s.input.iter().enumerate() {
                acc += weight(o, i) as i32 * v as i32;
            }
            out.data[o] = acc;
        }
        l1s.transferred += (c1 - c0) * 4;
    }
    Ok((out, l1s.transferred))
}

fn tiled_pool(
    layer: &Layer,
    x: &Tensor<i8>,
    g: Geometry,
    tile: &LayerTile,
    factor: usize,
    l1: usize,
) -> Result<(Tensor<i8>, usize), TilerError> {
    let (th, tw, tc) = (tile.tile_h, tile.tile_w, tile.tile_cout);
    let mut l1s = Scratchpad::new(&layer.name, l1, g.buffer(th, tw, tc, factor))?;
    let mut out = Tensor::<i8>::zeros(layer.output);
    for (c0, c1) in tile_ranges(g.c, tc) {
        for (y0, y1) in tile_ranges(g.h, th) {
            for (x0, x1) in tile_ranges(g.w, tw) {
                let (ih, iw) = (2 * (y1 - y0), 2 * (x1 - x0));
                l1s.input.clear();
                for c in c0..c1 {
                    for y in 2 * y0..2 * y1 {
                        l1s.input.extend_from_slice(&x.channel(c)[y * x.shape.width + 2 * x0..][..iw]);
                    }
                }
                l1s.transferred += l1s.input.len();
                for c in c0..c1 {
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            let base = ((c - c0) * ih + 2 * (y - y0)) * iw + 2 * (xx - x0);
                            let v = l1s.input[base].max(l1s.input[base + 1]).max(l1s.input[base + iw]).max(l1s.input[base + iw + 1]);
                            let idx = out.index(c, y, xx);
                            out.data[idx] = v;
                        }
                    }
                }
                l1s.transferred += (c1 - c0) * (y1 - y0) * (x1 - x0);
            }
        }
    }
    Ok((out, l1s.transferred))
}
