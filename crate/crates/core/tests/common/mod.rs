#![allow(dead_code)]

pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinyissimo::model::{build_graph, ModelGraph, NetworkConfig};
use tinyissimo::quant::{calibrate, integerize, random_calibration_inputs, CalibrationOptions, FloatModel, QuantizedGraph};
use tinyissimo::tensor::Tensor;

pub fn quantized(graph: &ModelGraph, seed: u64, calib: usize) -> QuantizedGraph {
    let model = FloatModel::random(graph, seed);
    let inputs = random_calibration_inputs(graph, calib, seed ^ 0x5eed);
    let scales = calibrate(&model, &inputs, CalibrationOptions::default()).unwrap();
    integerize(&model, &scales).unwrap()
}

pub fn random_input(graph: &ModelGraph, rng: &mut ChaCha8Rng) -> Tensor<i8> {
    let shape = graph.input_shape();
    Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.gen()).collect())
}

/// Small random network with a valid shape chain.
pub fn random_config(rng: &mut ChaCha8Rng) -> NetworkConfig {
    let convs = rng.gen_range(1..=5);
    let resolution = rng.gen_range(4..=40);
    let mut pool_after: Vec<usize> = (1..=convs).filter(|_| rng.gen_bool(0.5)).collect();
    while resolution >> pool_after.len() == 0 {
        pool_after.pop();
    }
    NetworkConfig {
        resolution,
        classes: rng.gen_range(1..=5),
        first_kernel: [1, 3, 5, 7][rng.gen_range(0..4)],
        boxes: rng.gen_range(1..=2),
        grid: rng.gen_range(1..=4),
        backbone_channels: (0..convs).map(|_| rng.gen_range(1..=24)).collect(),
        pool_after,
        in_channels: rng.gen_range(1..=3),
    }
}

pub fn random_graph(rng: &mut ChaCha8Rng) -> ModelGraph {
    build_graph(&random_config(rng)).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
