//! Calibrate the cost model on TY:3-3-88 and predict every backend for
//! TY:3-3-88 and TY:10-3-112 at the two measured operating points.

use tinyissimo::model::{build_graph, NetworkConfig};
use tinyissimo::perf::{Backend, Dataset, OperatingPoint, PerfModel, CALIBRATION_NETWORK};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = Dataset::load()?;
    let model = PerfModel::calibrate(&dataset, CALIBRATION_NETWORK)?;
    println!(
        "calibrated on {}: single-core {:.3} MAC/cycle, parallel efficiency {:.3}, accelerator peak {:.1} MAC/cycle",
        model.calibrated_on, model.base_eff, model.parallel_eff, model.accel_peak
    );

    for preset in ["TY:3-3-88", "TY:10-3-112"] {
        let graph = build_graph(&NetworkConfig::preset(preset)?)?;
        println!("\n{preset} ({} MMAC, modeled 8-core speedup {:.2})", graph.layers.iter().map(|l| l.macs()).sum::<usize>() as f64 / 1e6, model.overall_speedup(&graph));
        println!("{:<12} {:>5} {:>12} {:>11} {:>10} {:>11} {:>10}", "backend", "MHz", "cycles", "latency ms", "power mW", "energy uJ", "measured ms");
        for backend in Backend::ALL {
            for (freq, volt) in [(370e6, 0.8), (150e6, 0.65)] {
                let report = model.predict(&graph, backend, OperatingPoint::new(freq, volt)?)?;
                let measured = dataset
                    .record(preset, "GAP9", backend, freq / 1e6)
                    .and_then(|r| r.latency_ms)
                    .map_or("-".to_string(), |v| format!("{v:.2}"));
                println!(
                    "{:<12} {:>5.0} {:>12.0} {:>11.2} {:>10.2} {:>11.1} {:>10}",
                    backend.as_str(),
                    freq / 1e6,
                    report.cycles,
                    report.latency_ms(),
                    report.power_w * 1e3,
                    report.energy_uj(),
                    measured
                );
            }
        }
    }
    Ok(())
}
