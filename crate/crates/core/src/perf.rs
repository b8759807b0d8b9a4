//! Cycle, latency, power and energy models for three GAP9-style backends,
//! DVFS sweeps, Pareto fronts, and comparison against reference
//! measurements.
//!
//! Per layer, `cycles = macs / (base_eff * utilization) + overhead`.
//! Max-pools cost a fixed number of cycles per input element on the cores;
//! the accelerator cannot pool, so its pools run on the 8-core cluster.
//! Requantization is fused into the preceding conv and flatten is a view;
//! both cost nothing.
//!
//! Efficiencies are calibrated from one network's measurements (TY:3-3-88
//! by default) and then used unchanged for every other network.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{build_graph, count_macs, Layer, LayerSpec, ModelError, ModelGraph, NetworkConfig};

pub const MAX_FREQ_HZ: f64 = 370e6;
pub const CALIBRATION_NETWORK: &str = "TY:3-3-88";

const EMBEDDED_DATASET: &str = include_str!("../data/measurements.json");

#[derive(Debug, Error)]
pub enum PerfError {
    #[error("invalid operating point: {0}")]
    OperatingPoint(String),
    #[error("power model fit is degenerate: {0}")]
    DegenerateFit(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("no reference record for {0}")]
    UnknownKey(String),
    #[error("invalid point: {0}")]
    Point(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    SingleCore,
    MultiCore,
    Accelerator,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::SingleCore, Backend::MultiCore, Backend::Accelerator];

    pub fn as_str(&self) -> &'static str {
        match self {
            Backend::SingleCore => "single_core",
            Backend::MultiCore => "multi_core",
            Backend::Accelerator => "accelerator",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = PerfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "single" | "single_core" | "single-core" => Ok(Backend::SingleCore),
            "multi" | "multi_core" | "multi-core" => Ok(Backend::MultiCore),
            "ne" | "ne16" | "accelerator" => Ok(Backend::Accelerator),
            other => Err(PerfError::Dataset(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub freq_hz: f64,
    pub voltage: f64,
}

impl OperatingPoint {
    pub fn new(freq_hz: f64, voltage: f64) -> Result<Self, PerfError> {
        let op = Self { freq_hz, voltage };
        op.validate()?;
        Ok(op)
    }

    /// Operating point at `freq_hz` with the lowest supported voltage.
    pub fn at(freq_hz: f64) -> Result<Self, PerfError> {
        let voltage = dvfs_voltage(freq_hz)
            .ok_or_else(|| PerfError::OperatingPoint(format!("{} MHz is outside the DVFS table", freq_hz / 1e6)))?;
        Self::new(freq_hz, voltage)
    }

    pub fn validate(&self) -> Result<(), PerfError> {
        if !(self.freq_hz > 0.0 && self.freq_hz.is_finite()) {
            return Err(PerfError::OperatingPoint(format!("frequency {} Hz", self.freq_hz)));
        }
        let Some(min_v) = dvfs_voltage(self.freq_hz) else {
            return Err(PerfError::OperatingPoint(format!("{} MHz is outside the DVFS table", self.freq_hz / 1e6)));
        };
        if !(self.voltage >= min_v - 1e-9 && self.voltage.is_finite()) {
            return Err(PerfError::OperatingPoint(format!(
                "{} V cannot sustain {} MHz (needs {min_v} V)",
                self.voltage,
                self.freq_hz / 1e6
            )));
        }
        Ok(())
    }
}

/// Lowest supply voltage (50 mV steps) assumed to sustain `freq_hz`.
pub fn dvfs_voltage(freq_hz: f64) -> Option<f64> {
    const TABLE: [(f64, f64); 4] = [(150e6, 0.65), (240e6, 0.70), (310e6, 0.75), (370e6, 0.80)];
    if !(freq_hz > 0.0) {
        return None;
    }
    TABLE.iter().find(|&&(f, _)| freq_hz <= f + 1.0).map(|&(_, v)| v)
}

/// `P = c_dyn * f * V^2 + leak * V` in watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    /// W / (Hz * V^2).
    pub c_dyn: f64,
    /// W / V.
    pub leak: f64,
}

impl PowerModel {
    pub fn power(&self, op: &OperatingPoint) -> f64 {
        self.c_dyn * op.freq_hz * op.voltage * op.voltage + self.leak * op.voltage
    }
}

/// Least-squares fit of a [`PowerModel`] to `(operating point, watts)`.
pub fn fit_power_model(points: &[(OperatingPoint, f64)]) -> Result<PowerModel, PerfError> {
    if points.len() < 2 {
        return Err(PerfError::DegenerateFit(format!("{} points, need at least 2", points.len())));
    }
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (op, p) in points {
        let x1 = op.freq_hz * op.voltage * op.voltage;
        let x2 = op.voltage;
        s11 += x1 * x1;
        s12 += x1 * x2;
        s22 += x2 * x2;
        b1 += x1 * p;
        b2 += x2 * p;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() <= 1e-12 * s11 * s22 {
        return Err(PerfError::DegenerateFit("operating points are collinear".into()));
    }
    let c_dyn = (b1 * s22 - b2 * s12) / det;
    let leak = (s11 * b2 - s12 * b1) / det;
    if c_dyn < 0.0 || leak < 0.0 {
        return Err(PerfError::DegenerateFit(format!("negative parameters c_dyn={c_dyn:e}, leak={leak:e}")));
    }
    Ok(PowerModel { c_dyn, leak })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelization {
    Columns,
    OutputChannels,
}

/// Ideal load-balanced speedup of `n` work items on `p` workers.
pub fn ideal_speedup(n: usize, p: usize) -> f64 {
    let (n, p) = (n.max(1), p.max(1));
    n as f64 / n.div_ceil(p) as f64
}

pub fn column_speedup(columns: usize, cores: usize, parallel_eff: f64) -> f64 {
    ideal_speedup(columns, cores) * parallel_eff
}

pub fn channel_speedup(out_channels: usize, cores: usize, parallel_eff: f64) -> f64 {
    ideal_speedup(out_channels, cores) * parallel_eff
}

/// Convs take the scheme with the higher ideal speedup, ties go to columns.
/// Pools split columns, linear layers split output features.
pub fn choose_parallelization(layer: &Layer, cores: usize) -> Parallelization {
    match layer.spec {
        LayerSpec::Conv { out_ch, .. } => {
            if ideal_speedup(out_ch, cores) > ideal_speedup(layer.output.width, cores) {
                Parallelization::OutputChannels
            } else {
                Parallelization::Columns
            }
        }
        LayerSpec::Linear { .. } => Parallelization::OutputChannels,
        _ => Parallelization::Columns,
    }
}

fn layer_ideal_speedup(layer: &Layer, cores: usize) -> (Parallelization, f64) {
    let scheme = choose_parallelization(layer, cores);
    let n = match scheme {
        Parallelization::Columns => layer.output.width,
        Parallelization::OutputChannels => layer.output.channels,
    };
    (scheme, ideal_speedup(n, cores))
}

/// Fraction of the accelerator's MAC array a conv can keep busy: input and
/// output channels in groups of 16, kernels in groups of nine taps.
pub fn accelerator_utilization(layer: &Layer, width: usize) -> f64 {
    let (cin, cout, k) = match layer.spec {
        LayerSpec::Conv { in_ch, out_ch, kernel } => (in_ch, out_ch, kernel),
        LayerSpec::Linear { in_features, out_features } => (in_features, out_features, 1),
        _ => return 0.0,
    };
    let align = |c: usize| c as f64 / (width * c.div_ceil(width)) as f64;
    let taps = k * k;
    let kernel = if k <= 3 { 1.0 } else { taps as f64 / (9 * taps.div_ceil(9)) as f64 };
    align(cin) * align(cout) * kernel
}

/// Calibrated backend parameters and power models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfModel {
    /// Single-core MAC/cycle at full utilization.
    pub base_eff: f64,
    /// Cycles per max-pool input element on one core.
    pub pool_cycles_per_element: f64,
    /// Fixed cycles per executed (conv, pool, linear) layer.
    pub overhead_cycles: f64,
    pub cores: usize,
    /// Multiplies every per-layer ideal speedup; at most 1.
    pub parallel_eff: f64,
    /// Accelerator MAC/cycle at full utilization.
    pub accel_peak: f64,
    pub accel_width: usize,
    pub power: BTreeMap<Backend, PowerModel>,
    pub calibrated_on: String,
}

/// Upper bound on the single-core MAC/cycle (two 8-bit SIMD MACs).
pub const SINGLE_CORE_PEAK: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: String,
    pub macs: usize,
    pub cycles: f64,
    pub mac_per_cycle: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Parallelization>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub network: String,
    pub backend: Backend,
    pub op_point: OperatingPoint,
    pub layers: Vec<LayerCost>,
    pub macs: usize,
    pub cycles: f64,
    pub mac_per_cycle: f64,
    pub latency_s: f64,
    pub power_w: f64,
    pub energy_j: f64,
}

impl CostReport {
    pub fn latency_ms(&self) -> f64 {
        self.latency_s * 1e3
    }

    pub fn energy_uj(&self) -> f64 {
        self.energy_j * 1e6
    }

    /// The report as a reference-style record for [`compare`].
    pub fn to_record(&self) -> MeasurementRecord {
        MeasurementRecord {
            network: self.network.clone(),
            device: "GAP9".into(),
            backend: self.backend,
            freq_mhz: self.op_point.freq_hz / 1e6,
            voltage: Some(self.op_point.voltage),
            latency_ms: Some(self.latency_ms()),
            energy_uj: Some(self.energy_uj()),
            power_mw: Some(self.power_w * 1e3),
            cycles: Some(self.cycles),
            mac_per_cycle: Some(self.mac_per_cycle),
            speedup: None,
            uw_per_mhz: None,
            source: "model".into(),
        }
    }
}

impl PerfModel {
    /// Cycles of one layer on a backend, with the chosen parallelization.
    pub fn layer_cycles(&self, layer: &Layer, backend: Backend) -> LayerCost {
        let macs = layer.macs();
        let single_work = match layer.spec {
            LayerSpec::Conv { .. } | LayerSpec::Linear { .. } => macs as f64 / self.base_eff,
            LayerSpec::MaxPool => layer.input.len() as f64 * self.pool_cycles_per_element,
            LayerSpec::Requant { .. } | LayerSpec::Flatten => 0.0,
        };
        let executed = matches!(layer.spec, LayerSpec::Conv { .. } | LayerSpec::Linear { .. } | LayerSpec::MaxPool);
        let overhead = if executed { self.overhead_cycles } else { 0.0 };
        let (cycles, scheme, speedup) = match backend {
            Backend::SingleCore => (single_work + overhead, None, None),
            Backend::MultiCore => self.multi_cycles(layer, single_work, overhead),
            Backend::Accelerator => match layer.spec {
                LayerSpec::Conv { .. } | LayerSpec::Linear { .. } => {
                    let util = accelerator_utilization(layer, self.accel_width);
                    (macs as f64 / (self.accel_peak * util) + overhead, None, None)
                }
                _ => self.multi_cycles(layer, single_work, overhead),
            },
        };
        LayerCost {
            name: layer.name.clone(),
            kind: layer.spec.kind().to_string(),
            macs,
            cycles,
            mac_per_cycle: if cycles > 0.0 { macs as f64 / cycles } else { 0.0 },
            scheme,
            speedup,
        }
    }

    fn multi_cycles(&self, layer: &Layer, single_work: f64, overhead: f64) -> (f64, Option<Parallelization>, Option<f64>) {
        if single_work == 0.0 {
            return (overhead, None, None);
        }
        let (scheme, ideal) = layer_ideal_speedup(layer, self.cores);
        let s = ideal * self.parallel_eff;
        (single_work / s + overhead, Some(scheme), Some(s))
    }

    pub fn predict(&self, graph: &ModelGraph, backend: Backend, op: OperatingPoint) -> Result<CostReport, PerfError> {
        op.validate()?;
        let layers: Vec<LayerCost> = graph.layers.iter().map(|l| self.layer_cycles(l, backend)).collect();
        let cycles: f64 = layers.iter().map(|l| l.cycles).sum();
        let macs = count_macs(graph);
        let latency_s = cycles / op.freq_hz;
        let power_w = self.power_model(backend)?.power(&op);
        Ok(CostReport {
            network: graph.config.preset_name(),
            backend,
            op_point: op,
            layers,
            macs,
            cycles,
            mac_per_cycle: macs as f64 / cycles,
            latency_s,
            power_w,
            energy_j: power_w * latency_s,
        })
    }

    pub fn power_model(&self, backend: Backend) -> Result<&PowerModel, PerfError> {
        self.power.get(&backend).ok_or_else(|| PerfError::Calibration(format!("no power model for {backend}")))
    }

    /// Peak MAC/cycle a layer may reach on a backend.
    pub fn peak_mac_per_cycle(&self, backend: Backend) -> f64 {
        match backend {
            Backend::SingleCore => SINGLE_CORE_PEAK,
            Backend::MultiCore => SINGLE_CORE_PEAK * self.cores as f64,
            Backend::Accelerator => self.accel_peak,
        }
    }

    /// Sum of single-core cycles over sum of multi-core cycles.
    pub fn overall_speedup(&self, graph: &ModelGraph) -> f64 {
        let total = |b| graph.layers.iter().map(|l| self.layer_cycles(l, b).cycles).sum::<f64>();
        total(Backend::SingleCore) / total(Backend::MultiCore)
    }

    /// Calibrates every efficiency on `network` using only its records.
    pub fn calibrate(dataset: &Dataset, network: &str) -> Result<Self, PerfError> {
        let graph = build_graph(&NetworkConfig::preset(network)?)?;
        let find = |backend: Backend, freq: f64| {
            dataset
                .records
                .iter()
                .find(|r| r.network == network && r.device == "GAP9" && r.backend == backend && (r.freq_mhz - freq).abs() < 1e-9)
                .ok_or_else(|| PerfError::Calibration(format!("missing {network} {backend} @ {freq} MHz record")))
        };
        let need = |v: Option<f64>, what: &str| v.ok_or_else(|| PerfError::Calibration(format!("record lacks {what}")));

        let mut model = PerfModel {
            base_eff: 1.0,
            pool_cycles_per_element: 4.0,
            overhead_cycles: 0.0,
            cores: 8,
            parallel_eff: 1.0,
            accel_peak: 1.0,
            accel_width: 16,
            power: BTreeMap::new(),
            calibrated_on: network.to_string(),
        };

        // Single core: measured latency at 370 MHz fixes the total cycles.
        let single = find(Backend::SingleCore, 370.0)?;
        let measured = need(single.latency_ms, "latency")? * 1e-3 * single.freq_mhz * 1e6;
        let fixed: f64 = graph
            .layers
            .iter()
            .map(|l| match l.spec {
                LayerSpec::MaxPool => l.input.len() as f64 * model.pool_cycles_per_element + model.overhead_cycles,
                LayerSpec::Conv { .. } | LayerSpec::Linear { .. } => model.overhead_cycles,
                _ => 0.0,
            })
            .sum();
        if measured <= fixed {
            return Err(PerfError::Calibration("single-core cycles below fixed costs".into()));
        }
        model.base_eff = count_macs(&graph) as f64 / (measured - fixed);

        // Multi core: overall speedup is increasing in the efficiency factor.
        let multi = find(Backend::MultiCore, 370.0)?;
        let target = need(multi.speedup, "speedup")?;
        model.parallel_eff = bisect(1e-3, 1.0, |e| {
            let m = PerfModel { parallel_eff: e, ..model.clone() };
            m.overall_speedup(&graph) - target
        })
        .ok_or_else(|| PerfError::Calibration(format!("speedup {target} unreachable with {} cores", model.cores)))?;

        // Accelerator: network-average MAC/cycle fixes the peak.
        let accel = find(Backend::Accelerator, 370.0)?;
        let avg = need(accel.mac_per_cycle, "MAC/cycle")?;
        let target_cycles = count_macs(&graph) as f64 / avg;
        let mut scaled = 0.0;
        let mut other = 0.0;
        for l in &graph.layers {
            match l.spec {
                LayerSpec::Conv { .. } | LayerSpec::Linear { .. } => {
                    scaled += l.macs() as f64 / accelerator_utilization(l, model.accel_width);
                    other += model.overhead_cycles;
                }
                _ => other += model.layer_cycles(l, Backend::MultiCore).cycles,
            }
        }
        if target_cycles <= other {
            return Err(PerfError::Calibration("accelerator average unreachable".into()));
        }
        model.accel_peak = scaled / (target_cycles - other);

        // Power: two operating points each for cluster and accelerator; the
        // single core shares the cluster's leakage.
        let power_points = |backend: Backend| -> Result<Vec<(OperatingPoint, f64)>, PerfError> {
            dataset
                .records
                .iter()
                .filter(|r| r.network == network && r.device == "GAP9" && r.backend == backend)
                .filter_map(|r| Some((OperatingPoint::new(r.freq_mhz * 1e6, r.voltage?).ok()?, r.power_mw? * 1e-3)))
                .map(Ok)
                .collect()
        };
        let multi_power = fit_power_model(&power_points(Backend::MultiCore)?)?;
        let accel_power = fit_power_model(&power_points(Backend::Accelerator)?)?;
        let op = OperatingPoint::new(single.freq_mhz * 1e6, need(single.voltage, "voltage")?)?;
        let p = need(single.power_mw, "power")? * 1e-3;
        let c_dyn = (p - multi_power.leak * op.voltage) / (op.freq_hz * op.voltage * op.voltage);
        if c_dyn <= 0.0 {
            return Err(PerfError::Calibration("single-core power below cluster leakage".into()));
        }
        model.power.insert(Backend::SingleCore, PowerModel { c_dyn, leak: multi_power.leak });
        model.power.insert(Backend::MultiCore, multi_power);
        model.power.insert(Backend::Accelerator, accel_power);
        Ok(model)
    }

    /// Model calibrated on the default network from the active dataset.
    pub fn default_calibrated() -> Result<Self, PerfError> {
        Self::calibrate(&Dataset::load()?, CALIBRATION_NETWORK)
    }
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> Option<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    if flo > 0.0 || fhi < 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Sweeps `freqs_hz` at their DVFS voltages.
pub fn dvfs_sweep(
    model: &PerfModel,
    graph: &ModelGraph,
    backend: Backend,
    freqs_hz: &[f64],
) -> Result<Vec<CostReport>, PerfError> {
    freqs_hz.iter().map(|&f| model.predict(graph, backend, OperatingPoint::at(f)?)).collect()
}

/// The default sweep grid: 50 to 370 MHz in 10 MHz steps.
pub fn default_frequencies() -> Vec<f64> {
    (5..=37).map(|i| i as f64 * 10e6).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub label: String,
    pub latency_ms: f64,
    pub energy_uj: f64,
}

/// True if `a` is at least as good in both coordinates and strictly better
/// in one.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    a.latency_ms <= b.latency_ms
        && a.energy_uj <= b.energy_uj
        && (a.latency_ms < b.latency_ms || a.energy_uj < b.energy_uj)
}

/// Non-dominated subset, ordered by latency, then energy, then label.
/// Exact duplicates of a front point are all kept.
pub fn pareto(points: &[ParetoPoint]) -> Result<Vec<ParetoPoint>, PerfError> {
    if let Some(p) = points.iter().find(|p| !p.latency_ms.is_finite() || !p.energy_uj.is_finite()) {
        return Err(PerfError::Point(format!("{} has non-finite coordinates", p.label)));
    }
    let mut sorted: Vec<&ParetoPoint> = points.iter().collect();
    sorted.sort_by(|a, b| {
        a.latency_ms.total_cmp(&b.latency_ms).then(a.energy_uj.total_cmp(&b.energy_uj)).then(a.label.cmp(&b.label))
    });
    let mut front: Vec<ParetoPoint> = Vec::new();
    let mut best = f64::INFINITY;
    for p in sorted {
        let duplicate = front.last().is_some_and(|q| q.latency_ms == p.latency_ms && q.energy_uj == p.energy_uj);
        if p.energy_uj < best || duplicate {
            best = best.min(p.energy_uj);
            front.push(p.clone());
        }
    }
    Ok(front)
}

pub fn read_points_csv(text: &str) -> Result<Vec<ParetoPoint>, PerfError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<ParetoPoint>, _>>()
        .map_err(|e| PerfError::Point(e.to_string()))
}

pub fn write_points_csv(points: &[ParetoPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
}

/// One measured or modeled configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub network: String,
    pub device: String,
    pub backend: Backend,
    pub freq_mhz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_uj: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_mw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mac_per_cycle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uw_per_mhz: Option<f64>,
    pub source: String,
}

impl MeasurementRecord {
    pub fn key(&self) -> String {
        format!("{}/{}/{}@{}MHz", self.network, self.device, self.backend, self.freq_mhz)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "latency_ms" => self.latency_ms,
            "energy_uj" => self.energy_uj,
            "power_mw" => self.power_mw,
            "cycles" => self.cycles,
            "mac_per_cycle" => self.mac_per_cycle,
            "speedup" => self.speedup,
            "uw_per_mhz" => self.uw_per_mhz,
            _ => None,
        }
    }

    fn matches(&self, other: &MeasurementRecord) -> bool {
        self.network == other.network
            && self.device == other.device
            && self.backend == other.backend
            && (self.freq_mhz - other.freq_mhz).abs() < 1e-6
    }
}

pub const METRICS: [&str; 5] = ["latency_ms", "energy_uj", "power_mw", "cycles", "mac_per_cycle"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRef {
    pub network: String,
    pub device: String,
    pub backend: Backend,
    pub freq_mhz: f64,
    pub metric: String,
}

/// A ratio stated between two reference records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub name: String,
    pub ratio: f64,
    pub numerator: MetricRef,
    pub denominator: MetricRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub network: String,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRecord {
    pub network: String,
    pub map_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub version: u32,
    pub records: Vec<MeasurementRecord>,
    #[serde(default)]
    pub claims: Vec<Claim>,
    #[serde(default)]
    pub parameters: Vec<ParamRecord>,
    #[serde(default)]
    pub map: Vec<MapRecord>,
}

impl Dataset {
    pub fn embedded() -> Self {
        serde_json::from_str(EMBEDDED_DATASET).expect("embedded dataset is valid")
    }

    /// The embedded dataset, or `$TY_DATA_DIR/measurements.json` when the
    /// variable is set.
    pub fn load() -> Result<Self, PerfError> {
        match std::env::var_os("TY_DATA_DIR") {
            Some(dir) => {
                let path = std::path::Path::new(&dir).join("measurements.json");
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| PerfError::Dataset(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| PerfError::Dataset(format!("{}: {e}", path.display())))
            }
            None => Ok(Self::embedded()),
        }
    }

    pub fn find(&self, r: &MetricRef) -> Option<f64> {
        self.records
            .iter()
            .find(|m| {
                m.network == r.network && m.device == r.device && m.backend == r.backend && (m.freq_mhz - r.freq_mhz).abs() < 1e-6
            })
            .and_then(|m| m.metric(&r.metric))
    }

    pub fn record(&self, network: &str, device: &str, backend: Backend, freq_mhz: f64) -> Option<&MeasurementRecord> {
        self.records.iter().find(|m| {
            m.network == network && m.device == device && m.backend == backend && (m.freq_mhz - freq_mhz).abs() < 1e-6
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub key: String,
    pub metric: String,
    pub predicted: f64,
    pub reference: f64,
    pub rel_error: f64,
    pub within: bool,
}

/// Relative error of every metric present in both a predicted record and
/// its matching reference. A predicted record with no reference is an
/// error.
pub fn compare(
    predicted: &[MeasurementRecord],
    reference: &[MeasurementRecord],
    tolerance: f64,
) -> Result<Vec<Deviation>, PerfError> {
    let mut rows = Vec::new();
    for p in predicted {
        let r = reference.iter().find(|r| r.matches(p)).ok_or_else(|| PerfError::UnknownKey(p.key()))?;
        for metric in METRICS {
            if let (Some(a), Some(b)) = (p.metric(metric), r.metric(metric)) {
                let rel_error = if b == 0.0 { if a == 0.0 { 0.0 } else { f64::INFINITY } } else { (a - b) / b };
                rows.push(Deviation {
                    key: p.key(),
                    metric: metric.to_string(),
                    predicted: a,
                    reference: b,
                    rel_error,
                    within: rel_error.abs() <= tolerance,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimCheck {
    pub name: String,
    pub stated: f64,
    pub computed: f64,
    pub rel_error: f64,
    pub within: bool,
}

/// Recomputes every stated ratio from the records it refers to.
pub fn check_claims(dataset: &Dataset, tolerance: f64) -> Result<Vec<ClaimCheck>, PerfError> {
    dataset
        .claims
        .iter()
        .map(|c| {
            let num = dataset.find(&c.numerator).ok_or_else(|| PerfError::UnknownKey(format!("{:?}", c.numerator)))?;
            let den = dataset.find(&c.denominator).ok_or_else(|| PerfError::UnknownKey(format!("{:?}", c.denominator)))?;
            let computed = num / den;
            let rel_error = (computed - c.ratio) / c.ratio;
            Ok(ClaimCheck { name: c.name.clone(), stated: c.ratio, computed, rel_error, within: rel_error.abs() <= tolerance })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub network: String,
    pub reference: usize,
    pub computed: usize,
    pub residual: i64,
    pub rel_error: f64,
    /// Set when the reference's 7x7-minus-3x3 delta disagrees with the
    /// architecture (reference data inconsistency, not a model failure).
    pub anomaly: bool,
}

/// Parameter counts of every reference preset against the model.
pub fn check_parameters(dataset: &Dataset) -> Result<Vec<ParamCheck>, PerfError> {
    let computed = |name: &str| -> Result<usize, PerfError> {
        let g = build_graph(&NetworkConfig::preset(name)?)?;
        Ok(crate::model::count_params(&g))
    };
    dataset
        .parameters
        .iter()
        .map(|p| {
            let config = NetworkConfig::preset(&p.network)?;
            let c = computed(&p.network)?;
            let anomaly = if config.first_kernel != 3 {
                let twin = NetworkConfig { first_kernel: 3, ..config.clone() }.preset_name();
                match dataset.parameters.iter().find(|q| q.network == twin) {
                    Some(t) => {
                        let ref_delta = p.params as i64 - t.params as i64;
                        ref_delta != c as i64 - computed(&twin)? as i64
                    }
                    None => false,
                }
            } else {
                false
            };
            Ok(ParamCheck {
                network: p.network.clone(),
                reference: p.params,
                computed: c,
                residual: c as i64 - p.params as i64,
                rel_error: (c as f64 - p.params as f64) / p.params as f64,
                anomaly,
            })
        })
        .collect()
}
