//! Finite-difference verification of reverse-mode gradients.

use rand::seq::SliceRandom;
use rand::Rng;

use super::layers::{backward, forward, init_stack_params, stack_output_shape, Layer, LayerSpec, Mode};
use super::ops::{Padding, PoolMode};
use super::params::{GradBuffer, ParamStore};
use crate::error::Result;
use crate::rng::seeded;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor on the denominator so exact zeros compare sanely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Distinct, shuffled values in ±[0.1, 1.1] so that neither ReLU kinks nor
/// pooling ties sit within a finite-difference step of any input.
pub fn spread_input<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n)
        .map(|i| {
            let mag = 0.1 + i as f64 / n as f64;
            if i % 2 == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect();
    vals.shuffle(rng);
    Tensor::new(shape.to_vec(), vals).expect("length matches shape")
}

/// Compares reverse-mode gradients of `Σ r·stack(x)` for a random
/// projection `r` against central differences, over every input element
/// and every parameter. Returns the largest relative error.
pub fn grad_check(layers: &[Layer], input_shape: &[usize], seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let mut params = ParamStore::new();
    init_stack_params(layers, input_shape, &mut params, &mut rng)?;
    // non-zero biases so their gradients are exercised away from symmetry
    for (_, p) in params.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let input = spread_input(input_shape, &mut rng);
    let out_shape = stack_output_shape(layers, input_shape)?;
    let n_out: usize = out_shape.iter().product();
    let proj = Tensor::new(out_shape, (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect())?;

    let objective = |params: &ParamStore, x: &Tensor| -> Result<f64> {
        let (y, _) = forward(layers, params, x.clone(), &mut Mode::inference())?;
        Ok(y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum())
    };

    let (_, tape) = forward(layers, &params, input.clone(), &mut Mode::inference())?;
    let mut grads = GradBuffer::zeros_like(&params);
    let input_grad = backward(&tape, &params, proj.clone(), &mut grads)?;

    let mut worst: f64 = 0.0;
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = input.clone();
        minus.data_mut()[i] -= FD_STEP;
        let numeric = (objective(&params, &plus)? - objective(&params, &minus)?) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(input_grad.data()[i], numeric));
    }

    let names: Vec<String> = params.names().to_vec();
    for name in names {
        let slot = params.slot(&name)?;
        for i in 0..params.value(slot).len() {
            let orig = params.value(slot).data()[i];
            params.get_mut(&name)?.value.data_mut()[i] = orig + FD_STEP;
            let up = objective(&params, &input)?;
            params.get_mut(&name)?.value.data_mut()[i] = orig - FD_STEP;
            let down = objective(&params, &input)?;
            params.get_mut(&name)?.value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grads.get(slot).data()[i], numeric));
        }
    }
    Ok(worst)
}

/// A named single-op gradient check.
pub struct OpCheck {
    pub name: &'static str,
    pub layers: Vec<Layer>,
    pub input_shape: Vec<usize>,
}

/// One check per differentiable op kind.
pub fn standard_op_checks() -> Vec<OpCheck> {
    let one = |name: &'static str, spec: LayerSpec, input_shape: Vec<usize>| OpCheck {
        name,
        layers: vec![Layer::new("op", spec)],
        input_shape,
    };
    vec![
        one("dense 4x3", LayerSpec::Dense { units: 3 }, vec![4]),
        one(
            "conv2d same 6x6x2 * 3x3x2x2",
            LayerSpec::Conv2d {
                filters: 2,
                height: 3,
                width: 3,
                padding: Padding::Same,
            },
            vec![6, 6, 2],
        ),
        one(
            "conv2d valid 6x6x2 * 3x3x2x2",
            LayerSpec::Conv2d {
                filters: 2,
                height: 3,
                width: 3,
                padding: Padding::Valid,
            },
            vec![6, 6, 2],
        ),
        one(
            "maxpool 2x2 standard",
            LayerSpec::Maxpool2d {
                height: 2,
                width: 2,
                mode: PoolMode::Standard,
            },
            vec![6, 5, 2],
        ),
        one(
            "maxpool 3x3 quirk",
            LayerSpec::Maxpool2d {
                height: 3,
                width: 3,
                mode: PoolMode::TflearnQuirk,
            },
            vec![7, 10, 2],
        ),
        one("relu", LayerSpec::Relu, vec![3, 3, 2]),
        one("softmax", LayerSpec::Softmax, vec![5]),
        one("dropout (inference)", LayerSpec::Dropout { keep: 0.98 }, vec![6]),
        OpCheck {
            name: "flatten+dense",
            layers: vec![
                Layer::new("f", LayerSpec::Flatten),
                Layer::new("d", LayerSpec::Dense { units: 2 }),
            ],
            input_shape: vec![2, 2, 3],
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_on_five_seeds() {
        for check in standard_op_checks() {
            for seed in 0..5 {
                let err = grad_check(&check.layers, &check.input_shape, seed).unwrap();
                assert!(err < 1e-4, "{} seed {seed}: {err:e}", check.name);
            }
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relative_error is what the harness reports; a sign flip must be loud
        assert!(relative_error(1.0, -1.0) > 1.0);
        assert!(relative_error(0.0, 0.0) == 0.0);
    }
}
