//! Sweep the DVFS table for each backend and print the latency/energy
//! Pareto front across all of them.

use tinyissimo::model::{build_graph, NetworkConfig};
use tinyissimo::perf::{default_frequencies, dvfs_sweep, pareto, write_points_csv, Backend, ParetoPoint, PerfModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = PerfModel::default_calibrated()?;
    let graph = build_graph(&NetworkConfig::preset("TY:3-3-88")?)?;
    let mut points = Vec::new();
    for backend in Backend::ALL {
        for r in dvfs_sweep(&model, &graph, backend, &default_frequencies())? {
            points.push(ParetoPoint {
                label: format!("{}@{:.0}MHz/{:.2}V", backend.as_str(), r.op_point.freq_hz / 1e6, r.op_point.voltage),
                latency_ms: r.latency_ms(),
                energy_uj: r.energy_uj(),
            });
        }
    }
    let front = pareto(&points)?;
    println!("{} operating points, {} on the front:\n", points.len(), front.len());
    print!("{}", write_points_csv(&front));
    Ok(())
}
