//! Integer kernels against straightforward nested-loop oracles.

mod common;

use common::oracles::{conv_cases, linear_cases, maxpool_cases, requant_cases};
use tinyissimo::exec::{conv2d_int, linear_int, maxpool_int};
use tinyissimo::model::TensorShape;
use tinyissimo::quant::{ConvWeights, LinearWeights};
use tinyissimo::tensor::Tensor;

const CASES: usize = 1000;

#[test]
fn conv3x3_matches_oracle() {
    conv_cases(3, 3, CASES).unwrap();
}

#[test]
fn conv7x7_matches_oracle() {
    conv_cases(7, 7, CASES).unwrap();
}

#[test]
fn conv1x1_and_5x5_match_oracle() {
    conv_cases(1, 1, CASES).unwrap();
    conv_cases(5, 5, CASES).unwrap();
}

#[test]
fn maxpool_matches_oracle() {
    maxpool_cases(11, CASES).unwrap();
}

#[test]
fn linear_matches_oracle() {
    linear_cases(13, CASES).unwrap();
}

#[test]
fn requant_matches_oracle() {
    requant_cases(17, CASES).unwrap();
}

#[test]
fn kernels_reject_mismatched_shapes() {
    let input = Tensor::from_vec(TensorShape::new(2, 3, 3), vec![0i8; 18]);
    let weights = ConvWeights { out_ch: 1, in_ch: 3, kernel: 3, data: vec![0; 27] };
    assert!(conv2d_int(&input, &weights, None).is_err());
    let even = ConvWeights { out_ch: 1, in_ch: 2, kernel: 2, data: vec![0; 8] };
    assert!(conv2d_int(&input, &even, None).is_err());
    assert!(maxpool_int(&Tensor::from_vec(TensorShape::new(1, 1, 4), vec![0; 4])).is_err());
    let lin = LinearWeights { out_features: 2, in_features: 3, data: vec![0; 6], bias: vec![0; 2] };
    assert!(linear_int(&[0; 4], &lin).is_err());
}
