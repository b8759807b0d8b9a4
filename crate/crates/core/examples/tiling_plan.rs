//! Plan L1 tiles for TY:10-3-112 under the default hierarchy and a small L1,
//! then run the tiled executor and check it against the untiled one.

use tinyissimo::exec;
use tinyissimo::model::{build_graph, NetworkConfig};
use tinyissimo::quant::{calibrate, integerize, random_calibration_inputs, CalibrationOptions, FloatModel};
use tinyissimo::tensor::Tensor;
use tinyissimo::tiler::{plan_network, tiled_execute, MemoryHierarchy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let graph = build_graph(&NetworkConfig::preset("TY:10-3-112")?)?;
    let model = FloatModel::random(&graph, 3);
    let calib = random_calibration_inputs(&graph, 2, 3);
    let q = integerize(&model, &calibrate(&model, &calib, CalibrationOptions::default())?)?;
    let input = Tensor::from_vec(graph.input_shape(), q.quantize_input(&calib[0]));
    let reference = exec::run(&q, &input, false)?.output;

    for mem in [MemoryHierarchy::default(), MemoryHierarchy { l1_bytes: 16 * 1024, double_buffering: true, ..Default::default() }] {
        let plan = plan_network(&graph, &mem)?;
        println!("\nL1 {} B, double buffering {}", mem.l1_bytes, mem.double_buffering);
        println!("{:<10} {:>4}x{:<4} {:>5} {:>6} {:>8} {:>10}", "layer", "th", "tw", "tcout", "tiles", "buffer", "transfer");
        for t in plan.layers.iter().filter(|t| t.tiles > 0) {
            println!("{:<10} {:>4}x{:<4} {:>5} {:>6} {:>8} {:>10}", t.layer, t.tile_h, t.tile_w, t.tile_cout, t.tiles, t.buffer_bytes, t.transfer_bytes);
        }
        let run = tiled_execute(&q, &plan, &input)?;
        println!(
            "total transfer {} B, peak L1 {} B, weights in L2: {}, output matches untiled: {}",
            plan.transfer_bytes(),
            run.peak_l1_bytes,
            plan.residency.all_weights_in_l2,
            run.output == reference
        );
    }
    Ok(())
}
