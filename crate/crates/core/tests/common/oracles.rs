//! Independent reference implementations used by the integration and
//! acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinyissimo::exec::{conv2d_int, linear_int, maxpool_int, requant_apply};
use tinyissimo::model::TensorShape;
use tinyissimo::quant::{ConvWeights, LinearWeights, RequantParams};
use tinyissimo::tensor::Tensor;
use tinyissimo::head::{rank_order, ApMethod, DetectionBox, GroundTruthBox};
use tinyissimo::model::{Layer, LayerSpec};
use tinyissimo::perf::ParetoPoint;
use tinyissimo::tiler::{LoopOrder, MemoryHierarchy};

pub fn oracle_conv(
    x: &[i8],
    cin: usize,
    h: usize,
    w: usize,
    wt: &[i8],
    cout: usize,
    k: usize,
    bias: &[i32],
) -> Vec<i32> {
    let pad = (k / 2) as isize;
    let mut out = vec![0i32; cout * h * w];
    for o in 0..cout {
        for y in 0..h as isize {
            for xx in 0..w as isize {
                let mut acc = bias[o] as i64;
                for i in 0..cin {
                    for ky in 0..k as isize {
                        for kx in 0..k as isize {
                            let sy = y + ky - pad;
                            let sx = xx + kx - pad;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            let a = x[(i * h + sy as usize) * w + sx as usize] as i64;
                            let b = wt[((o * cin + i) * k + ky as usize) * k + kx as usize] as i64;
                            acc += a * b;
                        }
                    }
                }
                out[(o * h + y as usize) * w + xx as usize] = i32::try_from(acc).unwrap();
            }
        }
    }
    out
}

/// Buffer bytes and transfer bytes of a tiling, computed by simulating
/// the tile loop: the input buffer is refilled when the spatial tile
/// changes, the weight buffer when the channel tile changes.
pub fn simulate(layer: &Layer, th: usize, tw: usize, tc: usize, order: LoopOrder, factor: usize) -> Option<(usize, usize)> {
    let (h, w, c) = (layer.output.height, layer.output.width, layer.output.channels);
    let (cin, k, wpc, out_elem, pool) = match layer.spec {
        LayerSpec::Conv { in_ch, kernel, .. } => (in_ch, kernel, kernel * kernel * in_ch + 12, 1, false),
        LayerSpec::Linear { in_features, .. } => (in_features, 1, in_features + 4, 4, false),
        LayerSpec::MaxPool => (0, 0, 0, 1, true),
        _ => return None,
    };
    let p = k / 2;
    let spans = |len: usize, t: usize| -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        let mut a = 0;
        while a < len {
            v.push((a, (a + t).min(len)));
            a += t;
        }
        v
    };
    let rows = spans(h, th);
    let cols = spans(w, tw);
    let chans = spans(c, tc);
    let in_max = if pool { 4 * th * tw * tc } else { cin * (th + 2 * p).min(h) * (tw + 2 * p).min(w) };
    let buffer = factor * (in_max + tc * wpc + tc * th * tw * out_elem);

    let mut moved = 0;
    let mut input_tag = None;
    let mut weight_tag = None;
    let mut visit = |ci: usize, r: (usize, usize), col: (usize, usize)| {
        let (c0, c1) = chans[ci];
        if pool {
            moved += (c1 - c0) * 4 * (r.1 - r.0) * (col.1 - col.0);
        } else {
            let region = (r.0.saturating_sub(p), (r.1 + p).min(h), col.0.saturating_sub(p), (col.1 + p).min(w));
            if input_tag != Some((r, col)) {
                moved += cin * (region.1 - region.0) * (region.3 - region.2);
                input_tag = Some((r, col));
            }
            if weight_tag != Some(ci) {
                moved += (c1 - c0) * wpc;
                weight_tag = Some(ci);
            }
        }
        moved += (c1 - c0) * (r.1 - r.0) * (col.1 - col.0) * out_elem;
    };
    match order {
        LoopOrder::WeightsStationary => {
            for ci in 0..chans.len() {
                for &r in &rows {
                    for &col in &cols {
                        visit(ci, r, col);
                    }
                }
            }
        }
        LoopOrder::InputStationary => {
            for &r in &rows {
                for &col in &cols {
                    for ci in 0..chans.len() {
                        visit(ci, r, col);
                    }
                }
            }
        }
    }
    Some((buffer, moved))
}

pub fn brute_force_min(layer: &Layer, mem: &MemoryHierarchy) -> Option<usize> {
    let factor = if mem.double_buffering { 2 } else { 1 };
    let o = layer.output;
    let orders: &[LoopOrder] = match layer.spec {
        LayerSpec::MaxPool => &[LoopOrder::WeightsStationary],
        _ => &[LoopOrder::WeightsStationary, LoopOrder::InputStationary],
    };
    let mut best: Option<usize> = None;
    for th in 1..=o.height {
        for tw in 1..=o.width {
            for tc in 1..=o.channels {
                for &order in orders {
                    let (buffer, moved) = simulate(layer, th, tw, tc, order, factor)?;
                    if buffer <= mem.l1_bytes && best.is_none_or(|b| moved < b) {
                        best = Some(moved);
                    }
                }
            }
        }
    }
    best
}

pub fn corners(cx: f64, cy: f64, w: f64, h: f64) -> [f64; 4] {
    [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]
}

pub fn oracle_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn det_corners(d: &DetectionBox) -> [f64; 4] {
    corners(d.cx, d.cy, d.w, d.h)
}

pub fn gt_corners(g: &GroundTruthBox) -> [f64; 4] {
    corners(g.cx, g.cy, g.w, g.h)
}

/// Exhaustive AP: rank, match greedily, then integrate the PR curve.
pub fn oracle_ap(dets: &[DetectionBox], gts: &[GroundTruthBox], class: usize, thr: f64, method: ApMethod) -> f64 {
    let class_gts: Vec<&GroundTruthBox> = gts.iter().filter(|g| g.class_id == class).collect();
    let npos = class_gts.len();
    let mut used = vec![false; npos];
    let mut ranked: Vec<&DetectionBox> = dets.iter().filter(|d| d.class_id == class).collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    let mut flags = Vec::new();
    for d in &ranked {
        let mut best = None;
        let mut best_iou = -1.0;
        for (j, g) in class_gts.iter().enumerate() {
            if g.image_id != d.image_id {
                continue;
            }
            let o = oracle_iou(det_corners(d), gt_corners(g));
            if o > best_iou {
                best_iou = o;
                best = Some(j);
            }
        }
        let tp = match best {
            Some(j) if best_iou >= thr && !used[j] => {
                used[j] = true;
                true
            }
            _ => false,
        };
        flags.push(tp);
    }
    let mut points = Vec::new();
    let mut tp = 0;
    for (k, &f) in flags.iter().enumerate() {
        tp += usize::from(f);
        points.push((tp as f64 / (k + 1) as f64, tp as f64 / npos as f64));
    }
    match method {
        ApMethod::ElevenPoint => {
            let mut sum = 0.0;
            for t in 0..=10 {
                let t = t as f64 / 10.0;
                let mut best: f64 = 0.0;
                for &(p, r) in &points {
                    if r >= t {
                        best = best.max(p);
                    }
                }
                sum += best;
            }
            sum / 11.0
        }
        ApMethod::AllPoint => {
            let mut ap = 0.0;
            for (k, &f) in flags.iter().enumerate() {
                if f {
                    let envelope = points[k..].iter().map(|p| p.0).fold(0.0, f64::max);
                    ap += envelope / npos as f64;
                }
            }
            ap
        }
    }
}

pub fn random_box(rng: &mut ChaCha8Rng) -> (f64, f64, f64, f64) {
    (rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.05..0.5), rng.gen_range(0.05..0.5))
}

pub fn synthetic(rng: &mut ChaCha8Rng) -> (Vec<DetectionBox>, Vec<GroundTruthBox>, usize) {
    let classes = rng.gen_range(1..=20);
    let images = rng.gen_range(1..=5);
    let n_gt = rng.gen_range(1..=50);
    let gts: Vec<GroundTruthBox> = (0..n_gt)
        .map(|_| {
            let (cx, cy, w, h) = random_box(rng);
            GroundTruthBox { image_id: format!("img{}", rng.gen_range(0..images)), class_id: rng.gen_range(0..classes), cx, cy, w, h }
        })
        .collect();
    let n_det = rng.gen_range(0..=100 - n_gt);
    let dets = (0..n_det)
        .map(|_| {
            let score = if rng.gen_bool(0.2) { 0.5 } else { rng.gen_range(0.0..1.0) };
            if rng.gen_bool(0.6) {
                let g = &gts[rng.gen_range(0..gts.len())];
                let j = |rng: &mut ChaCha8Rng| rng.gen_range(-0.05..0.05);
                DetectionBox {
                    image_id: g.image_id.clone(),
                    class_id: if rng.gen_bool(0.9) { g.class_id } else { rng.gen_range(0..classes) },
                    cx: g.cx + j(rng),
                    cy: g.cy + j(rng),
                    w: (g.w + j(rng)).max(0.01),
                    h: (g.h + j(rng)).max(0.01),
                    score,
                }
            } else {
                let (cx, cy, w, h) = random_box(rng);
                DetectionBox { image_id: format!("img{}", rng.gen_range(0..images)), class_id: rng.gen_range(0..classes), cx, cy, w, h, score }
            }
        })
        .collect();
    (dets, gts, classes)
}

pub fn oracle_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut front: Vec<ParetoPoint> = points
        .iter()
        .filter(|p| {
            !points.iter().any(|q| {
                q.latency_ms <= p.latency_ms
                    && q.energy_uj <= p.energy_uj
                    && (q.latency_ms < p.latency_ms || q.energy_uj < p.energy_uj)
            })
        })
        .cloned()
        .collect();
    front.sort_by(|a, b| {
        a.latency_ms
            .partial_cmp(&b.latency_ms)
            .unwrap()
            .then(a.energy_uj.partial_cmp(&b.energy_uj).unwrap())
            .then(a.label.cmp(&b.label))
    });
    front
}

fn random_i8(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    (0..n).map(|_| rng.gen::<i8>()).collect()
}

/// Random same-padded convolutions with a `k x k` kernel.
pub fn conv_cases(k: usize, seed: u64, cases: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let cin = rng.gen_range(1..=6);
        let cout = rng.gen_range(1..=6);
        let h = rng.gen_range(1..=10);
        let w = rng.gen_range(1..=10);
        let x = random_i8(&mut rng, cin * h * w);
        let wt = random_i8(&mut rng, cout * cin * k * k);
        let bias: Vec<i32> = (0..cout).map(|_| rng.gen_range(-(1 << 20)..(1 << 20))).collect();
        let use_bias = rng.gen_bool(0.5);
        let input = Tensor::from_vec(TensorShape::new(cin, h, w), x.clone());
        let weights = ConvWeights { out_ch: cout, in_ch: cin, kernel: k, data: wt.clone() };
        let got = conv2d_int(&input, &weights, use_bias.then_some(&bias[..])).map_err(|e| e.to_string())?;
        let zero = vec![0; cout];
        let expected = oracle_conv(&x, cin, h, w, &wt, cout, k, if use_bias { &bias } else { &zero });
        if got.shape != TensorShape::new(cout, h, w) || got.data != expected {
            return Err(format!("conv k={k} case {case}"));
        }
    }
    Ok(())
}

pub fn maxpool_cases(seed: u64, cases: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let c = rng.gen_range(1..=5);
        let h = rng.gen_range(2..=11);
        let w = rng.gen_range(2..=11);
        let x = random_i8(&mut rng, c * h * w);
        let got = maxpool_int(&Tensor::from_vec(TensorShape::new(c, h, w), x.clone())).map_err(|e| e.to_string())?;
        let (oh, ow) = (h / 2, w / 2);
        let mut expected = Vec::new();
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut m = i8::MIN;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x[(ch * h + 2 * y + dy) * w + 2 * xx + dx]);
                        }
                    }
                    expected.push(m);
                }
            }
        }
        if got.shape != TensorShape::new(c, oh, ow) || got.data != expected {
            return Err(format!("maxpool case {case}"));
        }
    }
    Ok(())
}

pub fn linear_cases(seed: u64, cases: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n_in = rng.gen_range(1..=96);
        let n_out = rng.gen_range(1..=16);
        let x = random_i8(&mut rng, n_in);
        let wt = random_i8(&mut rng, n_in * n_out);
        let bias: Vec<i32> = (0..n_out).map(|_| rng.gen_range(-(1 << 24)..(1 << 24))).collect();
        let weights = LinearWeights { out_features: n_out, in_features: n_in, data: wt.clone(), bias: bias.clone() };
        let got = linear_int(&x, &weights).map_err(|e| e.to_string())?;
        let expected: Vec<i32> = (0..n_out)
            .map(|o| {
                let mut acc = bias[o] as i64;
                for i in 0..n_in {
                    acc += wt[o * n_in + i] as i64 * x[i] as i64;
                }
                acc as i32
            })
            .collect();
        if got.data != expected {
            return Err(format!("linear case {case}"));
        }
    }
    Ok(())
}

pub fn requant_cases(seed: u64, cases: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let c = rng.gen_range(1..=6);
        let plane = rng.gen_range(1..=12);
        let shift = rng.gen_range(0..=31u32);
        let mult: Vec<i32> = (0..c).map(|_| rng.gen_range(1..=i32::MAX)).collect();
        let add: Vec<i64> = (0..c).map(|_| rng.gen_range(-(1i64 << 55)..(1i64 << 55))).collect();
        let (clip_lo, clip_hi) = if rng.gen_bool(0.5) { (0, 127) } else { (-128, 127) };
        let acc: Vec<i32> = (0..c * plane)
            .map(|_| if rng.gen_bool(0.2) { rng.gen() } else { rng.gen_range(-4096..4096) })
            .collect();
        let params = RequantParams { mult: mult.clone(), add: add.clone(), shift, clip_lo, clip_hi };
        let got = requant_apply(&Tensor::from_vec(TensorShape::new(c, 1, plane), acc.clone()), &params)
            .map_err(|e| e.to_string())?;
        let expected: Vec<i8> = acc
            .iter()
            .enumerate()
            .map(|(j, &a)| {
                let ch = j / plane;
                let v = (a as i128 * mult[ch] as i128 + add[ch] as i128).div_euclid(1i128 << shift);
                v.max(clip_lo as i128).min(clip_hi as i128) as i8
            })
            .collect();
        if got.data != expected {
            return Err(format!("requant case {case}"));
        }
    }
    Ok(())
}
