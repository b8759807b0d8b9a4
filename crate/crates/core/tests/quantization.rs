mod common;

use rand::Rng;
use rayon::prelude::*;
use tinyissimo::exec::{self, accumulators_fit};
use tinyissimo::model::{build_graph, NetworkConfig};
use tinyissimo::quant::{
    calibrate, dyadic_approx, fake_quant_reference, integerize, random_calibration_inputs, CalibrationOptions,
    FloatModel,
};
use tinyissimo::tensor::Tensor;

#[test]
fn integer_run_equals_fake_quant_on_ty_3_3_88() {
    let graph = build_graph(&NetworkConfig::preset("TY:3-3-88").unwrap()).unwrap();
    let mismatches: Vec<String> = (0..100u64)
        .into_par_iter()
        .filter_map(|seed| {
            let q = common::quantized(&graph, seed, 1);
            assert!(accumulators_fit(&q));
            let real = &random_calibration_inputs(&graph, 1, seed + 1000)[0];
            let input = Tensor::from_vec(graph.input_shape(), q.quantize_input(real));
            let int_out = exec::run(&q, &input, false).unwrap().output.data;
            let fq = fake_quant_reference(&q, real).unwrap();
            let s = q.output_scale().scale;
            let expected: Vec<i32> = fq.iter().map(|v| (v / s).round() as i32).collect();
            (int_out != expected).then(|| format!("seed {seed}"))
        })
        .collect();
    assert!(mismatches.is_empty(), "{mismatches:?}");
}

#[test]
fn integer_run_equals_fake_quant_on_random_graphs() {
    let mut rng = common::rng(77);
    for _ in 0..200 {
        let graph = common::random_graph(&mut rng);
        let seed = rng.gen();
        let q = common::quantized(&graph, seed, 3);
        let real = &random_calibration_inputs(&graph, 1, seed.wrapping_add(1))[0];
        let input = Tensor::from_vec(graph.input_shape(), q.quantize_input(real));
        let int_out = exec::run(&q, &input, false).unwrap().output.data;
        let fq = fake_quant_reference(&q, real).unwrap();
        let s = q.output_scale().scale;
        for (a, b) in int_out.iter().zip(&fq) {
            assert_eq!(*a, (b / s).round() as i32, "{:?}", graph.config);
        }
    }
}

#[test]
fn quantized_output_tracks_float_model() {
    let graph = build_graph(&NetworkConfig::preset("TY:3-3-88").unwrap()).unwrap();
    let model = FloatModel::random(&graph, 3);
    let inputs = random_calibration_inputs(&graph, 4, 3);
    let scales = calibrate(&model, &inputs, CalibrationOptions::default()).unwrap();
    let q = integerize(&model, &scales).unwrap();
    let float_out = model.forward(&inputs[0]).unwrap().pop().unwrap();
    let input = Tensor::from_vec(graph.input_shape(), q.quantize_input(&inputs[0]));
    let deq = q.dequantize_output(&exec::run(&q, &input, false).unwrap().output.data);
    let range = float_out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = float_out.iter().zip(&deq).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err < 0.25 * range, "max error {err} vs range {range}");
}

#[test]
fn calibration_is_deterministic_and_order_independent() {
    let graph = build_graph(&NetworkConfig::preset("TY:3-3-88").unwrap()).unwrap();
    let model = FloatModel::random(&graph, 9);
    let mut inputs = random_calibration_inputs(&graph, 3, 9);
    let a = calibrate(&model, &inputs, CalibrationOptions::default()).unwrap();
    inputs.reverse();
    let b = calibrate(&model, &inputs, CalibrationOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(integerize(&model, &a).unwrap(), integerize(&model, &b).unwrap());
    assert!(calibrate(&model, &[], CalibrationOptions::default()).is_err());
}

#[test]
fn dyadic_approximation_is_tight() {
    let mut rng = common::rng(4);
    for _ in 0..10_000 {
        let ratio = 2f64.powf(rng.gen_range(-9.0..0.99));
        let (m, s) = dyadic_approx(ratio).unwrap();
        assert!(m > 0 && s <= 31);
        let rel = (m as f64 / 2f64.powi(s as i32) - ratio).abs() / ratio;
        assert!(rel <= 2f64.powi(-23), "ratio {ratio}: {rel}");
    }
}
