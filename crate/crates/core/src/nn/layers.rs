//! Sequential layer stacks with a recorded tape for reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, Padding, PoolMode};
use super::params::{glorot_uniform, GradBuffer, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        height: usize,
        width: usize,
        padding: Padding,
    },
    Maxpool2d {
        height: usize,
        width: usize,
        mode: PoolMode,
    },
    Dense {
        units: usize,
    },
    Relu,
    Softmax,
    Dropout {
        keep: f64,
    },
    Flatten,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Conv2d {
                filters,
                height,
                width,
                ..
            } => filters >= 1 && height >= 1 && width >= 1,
            LayerSpec::Maxpool2d { height, width, .. } => height >= 1 && width >= 1,
            LayerSpec::Dense { units } => units >= 1,
            LayerSpec::Dropout { keep } => keep > 0.0 && keep <= 1.0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("invalid layer {self:?}")))
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        match *self {
            LayerSpec::Conv2d {
                filters,
                height,
                width,
                padding,
            } => {
                let [h, w, _] = dims3(input)?;
                match padding {
                    Padding::Same => Ok(vec![h, w, filters]),
                    Padding::Valid if height <= h && width <= w => {
                        Ok(vec![h - height + 1, w - width + 1, filters])
                    }
                    Padding::Valid => Err(Error::Shape(format!(
                        "valid {height}×{width} conv larger than input {input:?}"
                    ))),
                }
            }
            LayerSpec::Maxpool2d {
                height,
                width,
                mode,
            } => {
                let [h, w, c] = dims3(input)?;
                let (oh, ow) = ops::pool_output_dims(h, w, height, width, mode)?;
                Ok(vec![oh, ow, c])
            }
            LayerSpec::Dense { units } => Ok(vec![units]),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Relu | LayerSpec::Softmax | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
        }
    }

    /// Weight and bias shapes, with fan-in / fan-out for the weight.
    fn param_shapes(&self, input: &[usize]) -> Result<Option<(Vec<usize>, usize, usize, Vec<usize>)>> {
        Ok(match *self {
            LayerSpec::Conv2d {
                filters,
                height,
                width,
                ..
            } => {
                let [_, _, c] = dims3(input)?;
                Some((
                    vec![height, width, c, filters],
                    height * width * c,
                    height * width * filters,
                    vec![filters],
                ))
            }
            LayerSpec::Dense { units } => {
                let n: usize = input.iter().product();
                Some((vec![n, units], n, units, vec![units]))
            }
            _ => None,
        })
    }
}

fn dims3(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        &[h, w, c] => Ok([h, w, c]),
        _ => Err(Error::Shape(format!("expected H×W×C, got {shape:?}"))),
    }
}

/// A layer with a name; parameterised layers own `<name>.w` and `<name>.b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub spec: LayerSpec,
}

impl Layer {
    pub fn new(name: impl Into<String>, spec: LayerSpec) -> Self {
        Layer {
            name: name.into(),
            spec,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }
}

/// Output shape of a whole stack, failing on the first inconsistent layer.
pub fn stack_output_shape(layers: &[Layer], input: &[usize]) -> Result<Vec<usize>> {
    let mut shape = input.to_vec();
    for l in layers {
        shape = l
            .spec
            .output_shape(&shape)
            .map_err(|e| Error::Shape(format!("layer {}: {e}", l.name)))?;
    }
    Ok(shape)
}

/// Expected `(name, shape)` for every parameter of a stack.
pub fn stack_param_shapes(layers: &[Layer], input: &[usize]) -> Result<Vec<(String, Vec<usize>)>> {
    let mut shape = input.to_vec();
    let mut out = Vec::new();
    for l in layers {
        if let Some((w, _, _, b)) = l.spec.param_shapes(&shape)? {
            out.push((l.weight_name(), w));
            out.push((l.bias_name(), b));
        }
        shape = l.spec.output_shape(&shape)?;
    }
    Ok(out)
}

/// Adds freshly initialised parameters for a stack. Names already present
/// are left alone, which is how stacks share weights.
pub fn init_stack_params<R: Rng + ?Sized>(
    layers: &[Layer],
    input: &[usize],
    store: &mut ParamStore,
    rng: &mut R,
) -> Result<()> {
    let mut shape = input.to_vec();
    for l in layers {
        if let Some((w, fan_in, fan_out, b)) = l.spec.param_shapes(&shape)? {
            if store.slot(&l.weight_name()).is_err() {
                store.insert(l.weight_name(), glorot_uniform(&w, fan_in, fan_out, rng));
                store.insert(l.bias_name(), Tensor::zeros(&b));
            }
        }
        shape = l.spec.output_shape(&shape)?;
    }
    Ok(())
}

/// Whether dropout is active and where its randomness comes from.
pub struct Mode<'a> {
    pub training: bool,
    pub rng: Option<&'a mut Rng64>,
}

impl Mode<'_> {
    pub fn inference() -> Self {
        Mode {
            training: false,
            rng: None,
        }
    }
}

enum Saved {
    Conv { input: Tensor, w: usize, b: usize, padding: Padding },
    Pool { input_shape: Vec<usize>, argmax: Vec<usize> },
    Dense { input: Tensor, w: usize, b: usize },
    Relu { output: Tensor },
    Softmax { output: Tensor },
    Dropout { mask: Option<Vec<f64>> },
    Flatten { input_shape: Vec<usize> },
}

/// Values saved by a forward pass, one entry per layer.
pub struct Tape {
    entries: Vec<Saved>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn forward(layers: &[Layer], params: &ParamStore, input: Tensor, mode: &mut Mode<'_>) -> Result<(Tensor, Tape)> {
    let mut x = input;
    let mut entries = Vec::with_capacity(layers.len());
    for l in layers {
        let (y, saved) = match l.spec {
            LayerSpec::Conv2d { padding, .. } => {
                let w = params.slot(&l.weight_name())?;
                let b = params.slot(&l.bias_name())?;
                let y = ops::conv2d(&x, params.value(w), Some(params.value(b)), padding)?;
                (y, Saved::Conv { input: x, w, b, padding })
            }
            LayerSpec::Maxpool2d { height, width, mode } => {
                let p = ops::maxpool2d(&x, height, width, mode)?;
                let input_shape = x.shape().to_vec();
                (p.output, Saved::Pool { input_shape, argmax: p.argmax })
            }
            LayerSpec::Dense { .. } => {
                let w = params.slot(&l.weight_name())?;
                let b = params.slot(&l.bias_name())?;
                let y = ops::dense(&x, params.value(w), params.value(b))?;
                (y, Saved::Dense { input: x, w, b })
            }
            LayerSpec::Relu => {
                let y = ops::relu(&x);
                (y.clone(), Saved::Relu { output: y })
            }
            LayerSpec::Softmax => {
                let y = ops::softmax(&x)?;
                (y.clone(), Saved::Softmax { output: y })
            }
            LayerSpec::Dropout { keep } => {
                let (y, mask) = match mode.rng.as_deref_mut() {
                    Some(rng) => ops::dropout(&x, keep, mode.training, rng)?,
                    None if !mode.training => (x.clone(), None),
                    None => {
                        return Err(Error::Argument(format!(
                            "layer {} needs a random generator in training mode",
                            l.name
                        )))
                    }
                };
                (y, Saved::Dropout { mask })
            }
            LayerSpec::Flatten => {
                let input_shape = x.shape().to_vec();
                (ops::flatten(&x), Saved::Flatten { input_shape })
            }
        };
        entries.push(saved);
        x = y;
    }
    Ok((x, Tape { entries }))
}

/// Backpropagates `grad_out` through the first `tape.len()` layers, adding
/// parameter gradients into `grads`. Returns the gradient at the stack input.
///
/// Passing a tape truncated with [`truncate_tape`] lets a caller start from
/// logits rather than from a trailing softmax.
pub fn backward(tape: &Tape, params: &ParamStore, grad_out: Tensor, grads: &mut GradBuffer) -> Result<Tensor> {
    let mut g = grad_out;
    for saved in tape.entries.iter().rev() {
        g = match saved {
            Saved::Conv { input, w, b, padding } => {
                let cg = ops::conv2d_backward(input, params.value(*w), *padding, &g)?;
                grads.add(*w, &cg.filters);
                grads.add(*b, &cg.bias);
                cg.input
            }
            Saved::Pool { input_shape, argmax } => ops::maxpool2d_backward(input_shape, argmax, &g),
            Saved::Dense { input, w, b } => {
                let dg = ops::dense_backward(input, params.value(*w), &g)?;
                grads.add(*w, &dg.weights);
                grads.add(*b, &dg.bias);
                dg.input
            }
            Saved::Relu { output } => ops::relu_backward(output, &g),
            Saved::Softmax { output } => ops::softmax_backward(output, &g),
            Saved::Dropout { mask } => ops::dropout_backward(mask.as_deref(), &g),
            Saved::Flatten { input_shape } => g.reshape(input_shape)?,
        };
    }
    Ok(g)
}

/// Drops the last `n` entries of a tape.
pub fn truncate_tape(mut tape: Tape, n: usize) -> Tape {
    let keep = tape.entries.len().saturating_sub(n);
    tape.entries.truncate(keep);
    tape
}
