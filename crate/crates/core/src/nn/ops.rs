//! Forward and backward kernels for the layer set used by the affect model.
//!
//! Spatial tensors are `H×W×C`, row-major, channel fastest. Convolution
//! filters are `Fh×Fw×Cin×Cout`. All strides are 1 for convolution and equal
//! to the window size for pooling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Added inside the log of the cross-entropy loss.
pub const LOG_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Standard,
    /// Drops the trailing partial window on the second (width) axis and one
    /// more pooled cell besides, so a 37×10 input pooled 3×3 comes out 12×2.
    TflearnQuirk,
}

struct ConvGeometry {
    h: usize,
    w: usize,
    cin: usize,
    fh: usize,
    fw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

fn conv_geometry(input: &Tensor, filters: &Tensor, padding: Padding) -> Result<ConvGeometry> {
    let (h, w, cin) = input.dims3()?;
    let (fh, fw, fcin, cout) = match filters.shape()[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(Error::Shape(format!(
                "conv2d filters must be Fh×Fw×Cin×Cout, got {:?}",
                filters.shape()
            )))
        }
    };
    if fcin != cin {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input {:?} vs filters {:?}",
            input.shape(),
            filters.shape()
        )));
    }
    let (oh, ow, pad_top, pad_left) = match padding {
        Padding::Same => (h, w, (fh - 1) / 2, (fw - 1) / 2),
        Padding::Valid => {
            if fh > h || fw > w {
                return Err(Error::Shape(format!(
                    "valid conv2d filter {:?} larger than input {:?}",
                    filters.shape(),
                    input.shape()
                )));
            }
            (h - fh + 1, w - fw + 1, 0, 0)
        }
    };
    Ok(ConvGeometry {
        h,
        w,
        cin,
        fh,
        fw,
        cout,
        oh,
        ow,
        pad_top,
        pad_left,
    })
}

/// Stride-1 2-D convolution with an optional per-output-channel bias.
pub fn conv2d(
    input: &Tensor,
    filters: &Tensor,
    bias: Option<&Tensor>,
    padding: Padding,
) -> Result<Tensor> {
    let g = conv_geometry(input, filters, padding)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(Error::Shape(format!(
                "conv2d bias {:?} does not match {} filters",
                b.shape(),
                g.cout
            )));
        }
    }
    let x = input.data();
    let f = filters.data();
    let mut out = vec![0.0; g.oh * g.ow * g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let o = &mut out[(oy * g.ow + ox) * g.cout..][..g.cout];
            if let Some(b) = bias {
                o.copy_from_slice(b.data());
            }
            for ky in 0..g.fh {
                let iy = (oy + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.fw {
                    let ix = (ox + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let xin = &x[(iy as usize * g.w + ix as usize) * g.cin..][..g.cin];
                    let fbase = (ky * g.fw + kx) * g.cin * g.cout;
                    for (ci, &v) in xin.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let frow = &f[fbase + ci * g.cout..][..g.cout];
                        for (acc, &wv) in o.iter_mut().zip(frow) {
                            *acc += v * wv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.oh, g.ow, g.cout], out)
}

pub struct ConvGrads {
    pub input: Tensor,
    pub filters: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    filters: &Tensor,
    padding: Padding,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let g = conv_geometry(input, filters, padding)?;
    if grad_out.shape() != [g.oh, g.ow, g.cout] {
        return Err(Error::Shape(format!(
            "conv2d upstream gradient {:?} does not match output [{}, {}, {}]",
            grad_out.shape(),
            g.oh,
            g.ow,
            g.cout
        )));
    }
    let x = input.data();
    let f = filters.data();
    let go = grad_out.data();
    let mut gi = vec![0.0; x.len()];
    let mut gf = vec![0.0; f.len()];
    let mut gb = vec![0.0; g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let gout = &go[(oy * g.ow + ox) * g.cout..][..g.cout];
            for (b, &d) in gb.iter_mut().zip(gout) {
                *b += d;
            }
            for ky in 0..g.fh {
                let iy = (oy + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.fw {
                    let ix = (ox + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let ibase = (iy as usize * g.w + ix as usize) * g.cin;
                    let fbase = (ky * g.fw + kx) * g.cin * g.cout;
                    for ci in 0..g.cin {
                        let v = x[ibase + ci];
                        let frow = &f[fbase + ci * g.cout..][..g.cout];
                        let mut acc = 0.0;
                        for (&wv, &d) in frow.iter().zip(gout) {
                            acc += wv * d;
                        }
                        gi[ibase + ci] += acc;
                        if v != 0.0 {
                            let gfrow = &mut gf[fbase + ci * g.cout..][..g.cout];
                            for (gw, &d) in gfrow.iter_mut().zip(gout) {
                                *gw += v * d;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gi)?,
        filters: Tensor::new(filters.shape().to_vec(), gf)?,
        bias: Tensor::from_vec(gb),
    })
}

/// Output of a max-pool: pooled values plus the flat input index each came from.
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

pub fn pool_output_dims(
    h: usize,
    w: usize,
    pool_h: usize,
    pool_w: usize,
    mode: PoolMode,
) -> Result<(usize, usize)> {
    if pool_h == 0 || pool_w == 0 {
        return Err(Error::Shape("pool dimensions must be at least 1".into()));
    }
    if pool_h > h || pool_w > w {
        return Err(Error::Shape(format!(
            "pool {pool_h}×{pool_w} larger than input {h}×{w}"
        )));
    }
    let oh = h / pool_h;
    let mut ow = w / pool_w;
    if mode == PoolMode::TflearnQuirk && !w.is_multiple_of(pool_w) {
        ow -= 1;
    }
    if ow == 0 {
        return Err(Error::Shape(format!(
            "quirk-mode pool {pool_h}×{pool_w} leaves no output columns for input {h}×{w}"
        )));
    }
    Ok((oh, ow))
}

pub fn maxpool2d(input: &Tensor, pool_h: usize, pool_w: usize, mode: PoolMode) -> Result<Pooled> {
    let (h, w, c) = input.dims3()?;
    let (oh, ow) = pool_output_dims(h, w, pool_h, pool_w, mode)?;
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best_idx = ((oy * pool_h) * w + ox * pool_w) * c + ch;
                for py in 0..pool_h {
                    for px in 0..pool_w {
                        let idx = ((oy * pool_h + py) * w + ox * pool_w + px) * c + ch;
                        if x[idx] > x[best_idx] {
                            best_idx = idx;
                        }
                    }
                }
                out.push(x[best_idx]);
                argmax.push(best_idx);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(vec![oh, ow, c], out)?,
        argmax,
    })
}

/// Routes each pooled gradient to the input position that won the max.
pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut gi = Tensor::zeros(input_shape);
    let d = gi.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    gi
}

/// `out[j] = Σ_i input[i]·W[i][j] + b[j]`; the input is read flat.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, m) = dense_dims(input, weights, bias)?;
    let x = input.data();
    let wd = weights.data();
    let mut out = bias.data().to_vec();
    for (i, &v) in x.iter().enumerate().take(n) {
        if v == 0.0 {
            continue;
        }
        let row = &wd[i * m..][..m];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += v * wv;
        }
    }
    Ok(Tensor::from_vec(out))
}

fn dense_dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let (n, m) = match weights.shape()[..] {
        [n, m] => (n, m),
        _ => {
            return Err(Error::Shape(format!(
                "dense weights must be N×M, got {:?}",
                weights.shape()
            )))
        }
    };
    if input.len() != n {
        return Err(Error::Shape(format!(
            "dense input of length {} does not match weights {:?}",
            input.len(),
            weights.shape()
        )));
    }
    if bias.len() != m {
        return Err(Error::Shape(format!(
            "dense bias {:?} does not match weights {:?}",
            bias.shape(),
            weights.shape()
        )));
    }
    Ok((n, m))
}

pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
    let (n, m) = dense_dims(input, weights, grad_out)?;
    let x = input.data();
    let wd = weights.data();
    let go = grad_out.data();
    let mut gi = vec![0.0; n];
    let mut gw = vec![0.0; n * m];
    for i in 0..n {
        let row = &wd[i * m..][..m];
        gi[i] = row.iter().zip(go).map(|(a, b)| a * b).sum();
        let v = x[i];
        if v != 0.0 {
            for (g, &d) in gw[i * m..][..m].iter_mut().zip(go) {
                *g = v * d;
            }
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(input.shape().to_vec(), gi)?,
        weights: Tensor::new(vec![n, m], gw)?,
        bias: grad_out.clone(),
    })
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient of ReLU given the forward *output*.
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (d, &y) in g.data_mut().iter_mut().zip(output.data()) {
        if y <= 0.0 {
            *d = 0.0;
        }
    }
    g
}

pub fn softmax(input: &Tensor) -> Result<Tensor> {
    if input.is_empty() {
        return Err(Error::Shape("softmax of an empty tensor".into()));
    }
    let max = input.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = input.data().iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Tensor::new(
        input.shape().to_vec(),
        exps.into_iter().map(|e| e / sum).collect(),
    )
}

/// Jacobian-vector product of softmax given its output.
pub fn softmax_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let dot: f64 = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(p, g)| p * g)
        .sum();
    let mut g = output.clone();
    for (d, &go) in g.data_mut().iter_mut().zip(grad_out.data()) {
        *d *= go - dot;
    }
    g
}

/// Inverted dropout. Returns the output and the per-element scale that was
/// applied, or `None` when the layer acted as the identity.
pub fn dropout<R: Rng + ?Sized>(
    input: &Tensor,
    keep_p: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(keep_p > 0.0 && keep_p <= 1.0) {
        return Err(Error::Argument(format!(
            "dropout keep probability {keep_p} outside (0, 1]"
        )));
    }
    if !training || keep_p == 1.0 {
        return Ok((input.clone(), None));
    }
    let scale = 1.0 / keep_p;
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.gen::<f64>() < keep_p { scale } else { 0.0 })
        .collect();
    let mut out = input.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((out, Some(mask)))
}

pub fn dropout_backward(mask: Option<&[f64]>, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    if let Some(mask) = mask {
        for (d, &m) in g.data_mut().iter_mut().zip(mask) {
            *d *= m;
        }
    }
    g
}

pub fn flatten(input: &Tensor) -> Tensor {
    Tensor::from_vec(input.data().to_vec())
}

/// Flat concatenation of any number of tensors.
pub fn concat(parts: &[&Tensor]) -> Tensor {
    Tensor::from_vec(parts.iter().flat_map(|t| t.data().iter().copied()).collect())
}

/// Splits a flat gradient back into pieces of the given lengths.
pub fn concat_backward(grad_out: &Tensor, lengths: &[usize]) -> Vec<Tensor> {
    let mut off = 0;
    lengths
        .iter()
        .map(|&n| {
            let t = Tensor::from_vec(grad_out.data()[off..off + n].to_vec());
            off += n;
            t
        })
        .collect()
}

pub fn cross_entropy_loss(probs: &Tensor, label: usize) -> Result<f64> {
    check_label(probs, label)?;
    Ok(-(probs.data()[label] + LOG_EPSILON).ln())
}

/// Gradient of softmax + cross-entropy with respect to the pre-softmax logits.
pub fn cross_entropy_logit_grad(probs: &Tensor, label: usize) -> Result<Tensor> {
    check_label(probs, label)?;
    let mut g = probs.clone();
    g.data_mut()[label] -= 1.0;
    Ok(g)
}

fn check_label(probs: &Tensor, label: usize) -> Result<()> {
    if label >= probs.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(())
}
