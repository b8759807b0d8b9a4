//! Calibrate a randomly initialized TY:3-3-88, convert it to integers, save
//! the weight container and compare the integer run with the float model.

use tinyissimo::exec;
use tinyissimo::model::{build_graph, NetworkConfig};
use tinyissimo::quant::{
    calibrate, fake_quant_reference, integerize, random_calibration_inputs, CalibrationOptions, FloatModel, QuantizedGraph,
};
use tinyissimo::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let graph = build_graph(&NetworkConfig::preset("TY:3-3-88")?)?;
    let model = FloatModel::random(&graph, 7);
    let calib = random_calibration_inputs(&graph, 8, 1);
    let scales = calibrate(&model, &calib, CalibrationOptions::default())?;
    let q = integerize(&model, &scales)?;
    println!("input scale {:.3e}, output scale {:.3e}", q.input_scale().scale, q.output_scale().scale);

    let path = std::env::temp_dir().join("ty-3-3-88.tyw");
    q.to_container().save(&path)?;
    let reloaded = QuantizedGraph::from_container(&graph, &tinyissimo::container::Container::load(&path)?)?;
    println!("saved {} ({} bytes), reload identical: {}", path.display(), std::fs::metadata(&path)?.len(), reloaded == q);

    let real = &random_calibration_inputs(&graph, 1, 99)[0];
    let input = Tensor::from_vec(graph.input_shape(), q.quantize_input(real));
    let run = exec::run(&q, &input, true)?;
    let out = q.dequantize_output(&run.output.data);
    let fq = fake_quant_reference(&q, real)?;
    let float = model.forward(real)?.pop().unwrap_or_default();
    let max_fq = out.iter().zip(&fq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let max_float = out.iter().zip(&float).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("{} outputs; max |int - fake-quant| {max_fq:.2e}, max |int - float| {max_float:.4}", out.len());
    println!("captured {} intermediate activations", run.snapshots.map_or(0, |s| s.len()));
    Ok(())
}
