//! Compare model predictions, parameter counts and stated ratios against the
//! embedded reference measurements.

use tinyissimo::model::{build_graph, NetworkConfig};
use tinyissimo::perf::{check_claims, check_parameters, compare, Backend, Dataset, OperatingPoint, PerfModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = Dataset::load()?;
    let model = PerfModel::default_calibrated()?;

    let mut reports = Vec::new();
    for preset in ["TY:3-3-88", "TY:10-3-112"] {
        let graph = build_graph(&NetworkConfig::preset(preset)?)?;
        for backend in Backend::ALL {
            for freq in [370e6, 150e6] {
                let r = model.predict(&graph, backend, OperatingPoint::at(freq)?)?;
                if dataset.record(preset, "GAP9", backend, freq / 1e6).is_some() {
                    reports.push(r.to_record());
                }
            }
        }
    }
    println!("{:<40} {:<14} {:>11} {:>11} {:>8}", "record", "metric", "predicted", "reference", "error");
    for d in compare(&reports, &dataset.records, 0.2)? {
        println!("{:<40} {:<14} {:>11.2} {:>11.2} {:>+7.1}%{}", d.key, d.metric, d.predicted, d.reference, d.rel_error * 100.0, if d.within { "" } else { " !" });
    }

    println!("\nparameters");
    for p in check_parameters(&dataset)? {
        println!("{:<12} {:>9} {:>9} {:>+7}{}", p.network, p.computed, p.reference, p.residual, if p.anomaly { "  reference inconsistent" } else { "" });
    }

    println!("\nstated ratios");
    for c in check_claims(&dataset, 0.2)? {
        println!("{:<26} stated {:>6.2} computed {:>6.3} ({:+.1}%)", c.name, c.stated, c.computed, c.rel_error * 100.0);
    }
    Ok(())
}
