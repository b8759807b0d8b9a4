//! Layer table, parameter and MAC counts for every preset, plus a custom
//! configuration.

use tinyissimo::model::{activation_memory, build_graph, count_macs, count_params, NetworkConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let graph = build_graph(&NetworkConfig::preset("TY:3-3-88")?)?;
    println!("{:<10} {:<8} {:>10} {:>10} {:>8} {:>10}", "layer", "kind", "input", "output", "params", "MACs");
    for row in graph.rows() {
        println!("{:<10} {:<8} {:>10} {:>10} {:>8} {:>10}", row.name, row.kind, row.input, row.output, row.params, row.macs);
    }
    println!("peak activation memory {} B", activation_memory(&graph).peak);

    println!("\n{:<12} {:>10} {:>12}", "preset", "params", "MACs");
    for classes in [3, 10, 20] {
        for kernel in [3, 7] {
            for resolution in [88, 112, 224] {
                let g = build_graph(&NetworkConfig::new(classes, kernel, resolution))?;
                println!("{:<12} {:>10} {:>12}", g.config.preset_name(), count_params(&g), count_macs(&g));
            }
        }
    }

    let custom = NetworkConfig {
        grid: 2,
        backbone_channels: vec![8, 16, 32, 64],
        pool_after: vec![1, 2, 3, 4],
        ..NetworkConfig::new(5, 5, 64)
    };
    let g = build_graph(&custom)?;
    println!("\ncustom 4-conv net: {} layers, {} params, output {:?}", g.layers.len(), count_params(&g), g.output_shape());
    Ok(())
}
