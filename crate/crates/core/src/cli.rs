//! The `ty` command-line front end.
//!
//! Machine-readable output (JSON or CSV) goes to stdout or `--out`; human
//! summaries go to stderr. Exit codes: 0 success, 1 tolerance failure
//! (`compare`), 2 usage or input error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::container::{activation_dump, Container};
use crate::exec;
use crate::head::{self, ApMethod, DetectionBox, GroundTruthBox, HeadConfig};
use crate::image::Image;
use crate::model::{activation_memory, build_graph, count_macs, count_params, ModelGraph, NetworkConfig};
use crate::perf::{self, Backend, CostReport, Dataset, MeasurementRecord, OperatingPoint, ParetoPoint, PerfModel};
use crate::quant::{calibrate, integerize, random_calibration_inputs, CalibrationOptions, FloatModel, QuantizedGraph};
use crate::tensor::Tensor;
use crate::tiler::{plan_network, MemoryHierarchy};

/// Input scale of images shifted into the signed range.
pub const IMAGE_INPUT_SCALE: f64 = 1.0 / 128.0;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Tolerance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Tolerance(_) => 1,
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "ty", version, about = "TinyissimoYOLO deployment toolchain and performance model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Graph, parameter, MAC and memory tables.
    Model {
        #[command(subcommand)]
        action: ModelAction,
    },
    /// Calibrate seeded float weights and write an integer weights container.
    Quantize(QuantizeArgs),
    /// Integer inference on a PGM/PPM image; prints JSON-lines boxes.
    Infer(InferArgs),
    /// Tiling plan for the L1/L2/L3 hierarchy.
    Tile(TileArgs),
    /// Cost-model predictions.
    Perf {
        #[command(subcommand)]
        action: PerfAction,
    },
    /// Pareto front of latency/energy points (CSV in, CSV out) or of a DVFS sweep.
    Pareto(ParetoArgs),
    /// Deviation of a report from reference measurements.
    Compare(CompareArgs),
    /// Mean average precision of JSON-lines detections.
    Eval(EvalArgs),
}

#[derive(Debug, Subcommand)]
pub enum ModelAction {
    /// Totals plus the per-layer table.
    Info(ModelOpts),
    /// The full shape-checked graph as JSON.
    Build(ModelOpts),
}

#[derive(Debug, Subcommand)]
pub enum PerfAction {
    /// Predict cycles, latency, power and energy.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Single,
    Multi,
    Ne,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Single => Backend::SingleCore,
            BackendArg::Multi => Backend::MultiCore,
            BackendArg::Ne => Backend::Accelerator,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    /// Preset name `TY:<classes>-<kernel>-<resolution>`.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Model description JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl NetArgs {
    pub fn config(&self) -> Result<NetworkConfig, CliError> {
        match (&self.preset, &self.config) {
            (_, Some(path)) => {
                let text = std::fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))
            }
            (Some(p), None) => NetworkConfig::preset(p).map_err(input_err),
            (None, None) => NetworkConfig::preset(perf::CALIBRATION_NETWORK).map_err(input_err),
        }
    }

    pub fn graph(&self) -> Result<ModelGraph, CliError> {
        build_graph(&self.config()?).map_err(input_err)
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct ModelOpts {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct QuantizeArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Seed for the float weights.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Calibration images (PGM/PPM files or directories of them).
    #[arg(long, num_args = 1..)]
    pub calib: Vec<PathBuf>,
    /// Use this many seeded random inputs instead of images.
    #[arg(long, conflicts_with = "calib")]
    pub calib_random: Option<usize>,
    /// Output container path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Keep boxes whose score is strictly above this.
    #[arg(long, default_value_t = 0.25)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Write every layer's output to this container.
    #[arg(long)]
    pub dump_activations: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MemArgs {
    #[arg(long)]
    pub l1: Option<usize>,
    #[arg(long)]
    pub l2: Option<usize>,
    #[arg(long)]
    pub l3: Option<usize>,
    #[arg(long)]
    pub double_buffer: bool,
}

impl MemArgs {
    pub fn hierarchy(&self) -> MemoryHierarchy {
        let d = MemoryHierarchy::default();
        MemoryHierarchy {
            l1_bytes: self.l1.unwrap_or(d.l1_bytes),
            l2_bytes: self.l2.unwrap_or(d.l2_bytes),
            l3_bytes: self.l3.unwrap_or(d.l3_bytes),
            double_buffering: self.double_buffer,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TileArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub mem: MemArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct OpArgs {
    #[arg(long, value_enum, default_value_t = BackendArg::Multi)]
    pub backend: BackendArg,
    /// Clock frequency in Hz.
    #[arg(long, default_value_t = 370e6)]
    pub freq: f64,
    /// Supply voltage; defaults to the lowest voltage for the frequency.
    #[arg(long)]
    pub voltage: Option<f64>,
}

impl OpArgs {
    pub fn op_point(&self) -> Result<OperatingPoint, CliError> {
        match self.voltage {
            Some(v) => OperatingPoint::new(self.freq, v),
            None => OperatingPoint::at(self.freq),
        }
        .map_err(input_err)
    }
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub op: OpArgs,
    /// Network whose measurements calibrate the model.
    #[arg(long, default_value = perf::CALIBRATION_NETWORK)]
    pub calibrate_on: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ParetoArgs {
    /// CSV with columns label,latency_ms,energy_uj.
    #[arg(long = "in", conflicts_with_all = ["preset", "config"])]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long, value_enum, default_value_t = BackendArg::Multi)]
    pub backend: BackendArg,
    /// Emit every swept point, not only the front.
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Report JSON (one report, a list, or a dataset).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Reference JSON; defaults to the embedded measurements.
    #[arg(long)]
    pub against: Option<PathBuf>,
    /// Allowed relative error.
    #[arg(long, default_value_t = 0.2)]
    pub tolerance: f64,
    /// Also check parameter counts against the reference table.
    #[arg(long)]
    pub params: bool,
    /// Also recompute stated cross-device ratios.
    #[arg(long)]
    pub claims: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dets: PathBuf,
    #[arg(long)]
    pub gts: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// All-point interpolation instead of 11-point.
    #[arg(long)]
    pub all_point: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_from<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return 2;
            }
            let _ = write!(stdout, "{}", e.render());
            return 0;
        }
    };
    match run(cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn emit(out: Option<&Path>, stdout: &mut dyn Write, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| input_err(format!("{}: {e}", p.display()))),
        None => stdout.write_all(text.as_bytes()).map_err(input_err),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(input_err)?;
    }
    String::from_utf8(w.into_inner().map_err(input_err)?).map_err(input_err)
}

#[derive(Debug, Serialize)]
struct ModelInfo {
    network: String,
    params: usize,
    macs: usize,
    weight_bytes: usize,
    activation_peak_bytes: usize,
    output_len: usize,
    layers: Vec<crate::model::LayerRow>,
}

pub fn run(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Model { action: ModelAction::Info(o) } => {
            let g = o.net.graph()?;
            let info = ModelInfo {
                network: g.config.preset_name(),
                params: count_params(&g),
                macs: count_macs(&g),
                weight_bytes: g.weight_bytes(),
                activation_peak_bytes: activation_memory(&g).peak,
                output_len: g.output_shape().len(),
                layers: g.rows(),
            };
            let _ = writeln!(
                stderr,
                "{}: {} params, {} MACs, {} weight bytes, activation peak {} bytes, output {}",
                info.network, info.params, info.macs, info.weight_bytes, info.activation_peak_bytes, info.output_len
            );
            let text = match o.out.format {
                Format::Json => to_json(&info),
                Format::Csv => to_csv(&info.layers)?,
            };
            emit(o.out.out.as_deref(), stdout, &text)
        }
        Command::Model { action: ModelAction::Build(o) } => {
            let g = o.net.graph()?;
            let text = match o.out.format {
                Format::Json => to_json(&g),
                Format::Csv => to_csv(&g.rows())?,
            };
            emit(o.out.out.as_deref(), stdout, &text)
        }
        Command::Quantize(a) => cmd_quantize(&a, stderr),
        Command::Infer(a) => cmd_infer(&a, stdout, stderr),
        Command::Tile(a) => {
            let g = a.net.graph()?;
            let plan = plan_network(&g, &a.mem.hierarchy()).map_err(input_err)?;
            let _ = writeln!(stderr, "{:<10} {:>5} {:>5} {:>5} {:>5} {:>8} {:>6} {:>10}", "layer", "th", "tw", "tcin", "tcout", "buffer", "tiles", "transfer");
            for l in &plan.layers {
                let _ = writeln!(
                    stderr,
                    "{:<10} {:>5} {:>5} {:>5} {:>5} {:>8} {:>6} {:>10}",
                    l.layer, l.tile_h, l.tile_w, l.tile_cin, l.tile_cout, l.buffer_bytes, l.tiles, l.transfer_bytes
                );
            }
            let _ = writeln!(
                stderr,
                "feasible: max buffer {} <= L1 {}; weights {} in {}; transfers {} bytes",
                plan.max_buffer_bytes(),
                plan.memory.l1_bytes,
                plan.residency.weight_bytes,
                if plan.residency.all_weights_in_l2 { "L2" } else { "L3" },
                plan.transfer_bytes()
            );
            let text = match a.out.format {
                Format::Json => to_json(&plan),
                Format::Csv => to_csv(&plan.layers)?,
            };
            emit(a.out.out.as_deref(), stdout, &text)
        }
        Command::Perf { action: PerfAction::Predict(a) } => {
            let g = a.net.graph()?;
            let dataset = Dataset::load().map_err(input_err)?;
            let model = PerfModel::calibrate(&dataset, &a.calibrate_on).map_err(input_err)?;
            let report = model.predict(&g, a.op.backend.into(), a.op.op_point()?).map_err(input_err)?;
            let _ = writeln!(
                stderr,
                "{} on {} @ {:.0} MHz / {:.2} V: {:.0} cycles, {:.3} ms, {:.2} mW, {:.1} uJ, {:.2} MAC/cycle",
                report.network,
                report.backend,
                report.op_point.freq_hz / 1e6,
                report.op_point.voltage,
                report.cycles,
                report.latency_ms(),
                report.power_w * 1e3,
                report.energy_uj(),
                report.mac_per_cycle
            );
            let text = match a.out.format {
                Format::Json => to_json(&report),
                Format::Csv => to_csv(&report.layers)?,
            };
            emit(a.out.out.as_deref(), stdout, &text)
        }
        Command::Pareto(a) => {
            let points = match &a.input {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
                    perf::read_points_csv(&text).map_err(input_err)?
                }
                None => {
                    let g = a.net.graph()?;
                    let model = PerfModel::default_calibrated().map_err(input_err)?;
                    perf::dvfs_sweep(&model, &g, a.backend.into(), &perf::default_frequencies())
                        .map_err(input_err)?
                        .iter()
                        .map(|r| ParetoPoint {
                            label: format!("{}MHz@{:.2}V", r.op_point.freq_hz / 1e6, r.op_point.voltage),
                            latency_ms: r.latency_ms(),
                            energy_uj: r.energy_uj(),
                        })
                        .collect()
                }
            };
            let selected = if a.all { points } else { perf::pareto(&points).map_err(input_err)? };
            emit(a.out.as_deref(), stdout, &perf::write_points_csv(&selected))
        }
        Command::Compare(a) => cmd_compare(&a, stdout, stderr),
        Command::Eval(a) => {
            let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| input_err(format!("{}: {e}", p.display())));
            let dets: Vec<DetectionBox> = head::read_jsonl(&read(&a.dets)?).map_err(input_err)?;
            let gts: Vec<GroundTruthBox> = head::read_jsonl(&read(&a.gts)?).map_err(input_err)?;
            let method = if a.all_point { ApMethod::AllPoint } else { ApMethod::ElevenPoint };
            let report = head::mean_ap(&dets, &gts, a.iou, method).map_err(input_err)?;
            let _ = writeln!(stderr, "mAP {:.4} over {} classes", report.map, report.per_class.len());
            emit(a.out.as_deref(), stdout, &to_json(&report))
        }
    }
}

fn collect_images(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| input_err(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| matches!(f.extension().and_then(|x| x.to_str()), Some("pgm" | "ppm")))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

/// Image tensor as real values in `[-1, 1)`.
fn image_input(path: &Path, graph: &ModelGraph) -> Result<Tensor<i8>, CliError> {
    let img = Image::load(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    let s = graph.input_shape();
    img.to_input(s.height, s.channels).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

pub fn quantize_model(
    graph: &ModelGraph,
    seed: u64,
    inputs: &[Vec<f64>],
) -> Result<QuantizedGraph, CliError> {
    let model = FloatModel::random(graph, seed);
    let options = CalibrationOptions { fixed_input_scale: Some(IMAGE_INPUT_SCALE) };
    let scales = calibrate(&model, inputs, options).map_err(input_err)?;
    integerize(&model, &scales).map_err(input_err)
}

fn cmd_quantize(a: &QuantizeArgs, stderr: &mut dyn Write) -> Result<(), CliError> {
    let graph = a.net.graph()?;
    let inputs: Vec<Vec<f64>> = match a.calib_random {
        Some(n) if n > 0 => random_calibration_inputs(&graph, n, a.seed),
        Some(_) => return Err(input_err("--calib-random needs at least one input")),
        None => {
            let files = collect_images(&a.calib)?;
            if files.is_empty() {
                return Err(input_err("no calibration images given (--calib or --calib-random)"));
            }
            files
                .iter()
                .map(|f| Ok(image_input(f, &graph)?.data.iter().map(|&v| v as f64 * IMAGE_INPUT_SCALE).collect()))
                .collect::<Result<_, CliError>>()?
        }
    };
    let q = quantize_model(&graph, a.seed, &inputs)?;
    q.to_container().save(&a.out).map_err(input_err)?;
    let _ = writeln!(stderr, "wrote {} ({} calibration inputs)", a.out.display(), inputs.len());
    Ok(())
}

fn cmd_infer(a: &InferArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let graph = a.net.graph()?;
    let container = Container::load(&a.weights).map_err(|e| input_err(format!("{}: {e}", a.weights.display())))?;
    let q = QuantizedGraph::from_container(&graph, &container).map_err(input_err)?;
    let pixels = image_input(&a.image, &graph)?;
    let input = if (q.scales.input - IMAGE_INPUT_SCALE).abs() < f64::EPSILON {
        pixels
    } else {
        let real: Vec<f64> = pixels.data.iter().map(|&v| v as f64 * IMAGE_INPUT_SCALE).collect();
        Tensor::from_vec(pixels.shape, q.quantize_input(&real))
    };
    let run = exec::run(&q, &input, a.dump_activations.is_some()).map_err(input_err)?;
    if let (Some(path), Some(snaps)) = (&a.dump_activations, &run.snapshots) {
        activation_dump(&graph, snaps).save(path).map_err(input_err)?;
    }
    let cfg = HeadConfig { grid: graph.config.grid, boxes: graph.config.boxes, classes: graph.config.classes };
    let real = q.dequantize_output(&run.output.data);
    let image_id = a.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut boxes = head::decode(&real, &cfg, a.threshold).map_err(input_err)?;
    for b in &mut boxes {
        b.image_id = image_id.clone();
    }
    let kept = head::nms(&boxes, a.iou);
    let _ = writeln!(stderr, "{}: {} boxes ({} before suppression)", image_id, kept.len(), boxes.len());
    emit(a.out.as_deref(), stdout, &head::write_jsonl(&kept))
}

/// Reads records from a dataset, a list of reports, or a single report.
pub fn load_records(path: &Path) -> Result<Vec<MeasurementRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    if let Ok(d) = serde_json::from_str::<Dataset>(&text) {
        return Ok(d.records);
    }
    if let Ok(r) = serde_json::from_str::<Vec<CostReport>>(&text) {
        return Ok(r.iter().map(CostReport::to_record).collect());
    }
    if let Ok(r) = serde_json::from_str::<CostReport>(&text) {
        return Ok(vec![r.to_record()]);
    }
    serde_json::from_str::<Vec<MeasurementRecord>>(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
struct CompareOutput {
    deviations: Vec<perf::Deviation>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    parameters: Vec<perf::ParamCheck>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    claims: Vec<perf::ClaimCheck>,
}

fn cmd_compare(a: &CompareArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let dataset = match &a.against {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| input_err(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<Dataset>(&text).or_else(|_| {
                load_records(p).map(|records| Dataset { version: 1, records, claims: vec![], parameters: vec![], map: vec![] })
            })?
        }
        None => Dataset::load().map_err(input_err)?,
    };
    let deviations = match &a.report {
        Some(p) => perf::compare(&load_records(p)?, &dataset.records, a.tolerance).map_err(input_err)?,
        None => Vec::new(),
    };
    let parameters = if a.params { perf::check_parameters(&dataset).map_err(input_err)? } else { Vec::new() };
    let claims = if a.claims { perf::check_claims(&dataset, a.tolerance).map_err(input_err)? } else { Vec::new() };
    if a.report.is_none() && !a.params && !a.claims {
        return Err(input_err("nothing to compare: pass --report, --params or --claims"));
    }

    let mut failures = 0;
    for d in &deviations {
        failures += usize::from(!d.within);
        let _ = writeln!(
            stderr,
            "{:<40} {:<14} {:>14.4} {:>14.4} {:>+8.2}% {}",
            d.key,
            d.metric,
            d.predicted,
            d.reference,
            d.rel_error * 100.0,
            if d.within { "ok" } else { "FAIL" }
        );
    }
    for p in &parameters {
        let status = if p.anomaly {
            "reference anomaly"
        } else if p.rel_error.abs() <= 0.01 {
            "ok"
        } else {
            failures += 1;
            "FAIL"
        };
        let _ = writeln!(stderr, "{:<14} {:>9} {:>9} {:>+7} {}", p.network, p.reference, p.computed, p.residual, status);
    }
    for c in &claims {
        failures += usize::from(!c.within);
        let _ = writeln!(
            stderr,
            "{:<32} stated {:>6.2} computed {:>7.3} {:>+7.2}% {}",
            c.name,
            c.stated,
            c.computed,
            c.rel_error * 100.0,
            if c.within { "ok" } else { "FAIL" }
        );
    }
    let out = CompareOutput { deviations, parameters, claims };
    let text = match a.out.format {
        Format::Json => to_json(&out),
        Format::Csv => to_csv(&out.deviations)?,
    };
    emit(a.out.out.as_deref(), stdout, &text)?;
    if failures > 0 {
        return Err(CliError::Tolerance(format!("{failures} rows outside tolerance")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = main_from(std::iter::once("ty").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn model_info_examples() {
        let (code, out, _) = run_args(&["model", "info", "--preset", "TY:3-3-88"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["params"], 437_152);
        assert_eq!(v["output_len"], 208);
        let (code, _, _) = run_args(&["model", "info", "--preset", "TY:3-3"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_args(&["bogus"]).0, 2);
        assert_eq!(run_args(&["perf", "predict", "--backend", "gpu"]).0, 2);
        assert_eq!(run_args(&["--help"]).0, 0);
    }
}
