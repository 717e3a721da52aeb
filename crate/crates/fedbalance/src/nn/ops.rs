//! Forward pass, softmax cross-entropy, and hand-written backward passes
//! for the fixed layer menu. Double precision throughout.

use crate::error::{Error, Result};
use crate::nn::arch::{ArchDescriptor, LayerSpec, Shape};
use crate::nn::model::{Batch, ModelParams};

/// Row-major dense matrix of `f64`, used for logits and their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Activations retained by a forward pass for the matching backward pass.
///
/// `acts[i]` is the tensor entering layer `i`; the tape is only valid for the
/// `(arch, batch)` pair it was produced with, which `backward` re-checks.
#[derive(Debug, Clone)]
pub struct Tape {
    arch: ArchDescriptor,
    batch: usize,
    acts: Vec<Vec<f64>>,
}

/// Logits plus the activation tape of the forward pass that produced them.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Mat,
    pub tape: Tape,
}

/// Runs the model on a batch, producing pre-softmax logits and retaining the
/// per-layer activations for `backward`.
pub fn forward(params: &ModelParams, batch: &Batch) -> Result<Forward> {
    let (logits, acts) = forward_impl(params, batch, true)?;
    Ok(Forward {
        logits,
        tape: Tape {
            arch: params.arch().clone(),
            batch: batch.len(),
            acts: acts.expect("retained"),
        },
    })
}

/// Forward pass without activation retention, for evaluation.
pub fn infer_logits(params: &ModelParams, batch: &Batch) -> Result<Mat> {
    Ok(forward_impl(params, batch, false)?.0)
}

fn forward_impl(
    params: &ModelParams,
    batch: &Batch,
    retain: bool,
) -> Result<(Mat, Option<Vec<Vec<f64>>>)> {
    let arch = params.arch();
    if Shape::from(batch.shape()) != arch.boundary(0) {
        return Err(Error::ShapeMismatch(format!(
            "batch input shape {:?} does not match architecture input {:?}",
            batch.shape(),
            arch.boundary(0)
        )));
    }
    let b = batch.len();
    let mut acts: Vec<Vec<f64>> = Vec::new();
    let mut current = batch.inputs().to_vec();
    for (i, layer) in arch.layers().iter().enumerate() {
        let out = apply_layer(params, i, *layer, &current, arch, b);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation {
                layer: i,
                kind: layer_name(*layer).to_string(),
            });
        }
        if retain {
            acts.push(current);
        }
        current = out;
    }
    let c = arch.num_classes();
    let logits = Mat::from_vec(b, c, current)?;
    if retain {
        Ok((logits, Some(acts)))
    } else {
        Ok((logits, None))
    }
}

fn layer_name(layer: LayerSpec) -> &'static str {
    match layer {
        LayerSpec::Dense { .. } => "dense",
        LayerSpec::Relu => "relu",
        LayerSpec::Conv2d { .. } => "conv2d",
        LayerSpec::MaxPool2x2 => "maxpool2x2",
        LayerSpec::Flatten => "flatten",
    }
}

fn apply_layer(
    params: &ModelParams,
    idx: usize,
    layer: LayerSpec,
    input: &[f64],
    arch: &ArchDescriptor,
    b: usize,
) -> Vec<f64> {
    match layer {
        LayerSpec::Dense { in_dim, out_dim } => {
            let (w, bias) = params.layer_params(idx);
            let mut out = vec![0.0; b * out_dim];
            for s in 0..b {
                let x = &input[s * in_dim..(s + 1) * in_dim];
                let y = &mut out[s * out_dim..(s + 1) * out_dim];
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    let mut acc = bias[o];
                    for (wi, xi) in row.iter().zip(x) {
                        acc += wi * xi;
                    }
                    *yo = acc;
                }
            }
            out
        }
        LayerSpec::Relu => input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
        } => {
            let (w, bias) = params.layer_params(idx);
            let geo = ConvGeometry::of(arch, idx, in_ch, out_ch, kernel, stride);
            geo.forward(w, bias, input, b)
        }
        LayerSpec::MaxPool2x2 => {
            let (c, h, wd) = image_dims(arch.boundary(idx));
            let (oh, ow) = (h / 2, wd / 2);
            let mut out = vec![0.0; b * c * oh * ow];
            for plane in 0..b * c {
                let src = &input[plane * h * wd..(plane + 1) * h * wd];
                let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (iy, ix) = (oy * 2, ox * 2);
                        let mut best = src[iy * wd + ix];
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let v = src[(iy + dy) * wd + ix + dx];
                            if v > best {
                                best = v;
                            }
                        }
                        dst[oy * ow + ox] = best;
                    }
                }
            }
            out
        }
        LayerSpec::Flatten => input.to_vec(),
    }
}

fn image_dims(shape: Shape) -> (usize, usize, usize) {
    match shape {
        Shape::Image {
            channels,
            height,
            width,
        } => (channels, height, width),
        Shape::Flat { .. } => unreachable!("layer requires image input; arch was validated"),
    }
}

/// Same-padding geometry for one convolution layer.
struct ConvGeometry {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

impl ConvGeometry {
    fn of(
        arch: &ArchDescriptor,
        idx: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    ) -> ConvGeometry {
        let (_, h, w) = image_dims(arch.boundary(idx));
        let (_, oh, ow) = image_dims(arch.boundary(idx + 1));
        let pad_h = ((oh - 1) * stride + kernel).saturating_sub(h);
        let pad_w = ((ow - 1) * stride + kernel).saturating_sub(w);
        ConvGeometry {
            in_ch,
            out_ch,
            kernel,
            stride,
            h,
            w,
            oh,
            ow,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        }
    }

    /// Valid output-column range for kernel column `kx`:
    /// those `ox` with `ox*stride + kx - pad_left` inside `[0, w)`.
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad_left.saturating_sub(kx).div_ceil(self.stride);
        let hi_incl = (self.w - 1 + self.pad_left).saturating_sub(kx) / self.stride;
        (lo.min(self.ow), (hi_incl + 1).min(self.ow))
    }

    #[allow(clippy::needless_range_loop)]
    fn forward(&self, w: &[f64], bias: &[f64], x: &[f64], b: usize) -> Vec<f64> {
        let (ic_n, oc_n, k) = (self.in_ch, self.out_ch, self.kernel);
        let mut out = vec![0.0; b * oc_n * self.oh * self.ow];
        for s in 0..b {
            for oc in 0..oc_n {
                let out_plane =
                    &mut out[(s * oc_n + oc) * self.oh * self.ow..][..self.oh * self.ow];
                out_plane.fill(bias[oc]);
                for ic in 0..ic_n {
                    let x_plane = &x[(s * ic_n + ic) * self.h * self.w..][..self.h * self.w];
                    let w_block = &w[(oc * ic_n + ic) * k * k..][..k * k];
                    for oy in 0..self.oh {
                        let out_row = &mut out_plane[oy * self.ow..(oy + 1) * self.ow];
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let x_row = &x_plane[iy as usize * self.w..][..self.w];
                            for kx in 0..k {
                                let wv = w_block[ky * k + kx];
                                let (lo, hi) = self.ox_range(kx);
                                for ox in lo..hi {
                                    let ix = ox * self.stride + kx - self.pad_left;
                                    out_row[ox] += wv * x_row[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
    fn backward(
        &self,
        w: &[f64],
        x: &[f64],
        dy: &[f64],
        b: usize,
        dw: &mut [f64],
        db: &mut [f64],
        dx: Option<&mut Vec<f64>>,
    ) {
        let (ic_n, oc_n, k) = (self.in_ch, self.out_ch, self.kernel);
        let mut dx_buf = dx;
        for s in 0..b {
            for oc in 0..oc_n {
                let dy_plane = &dy[(s * oc_n + oc) * self.oh * self.ow..][..self.oh * self.ow];
                db[oc] += dy_plane.iter().sum::<f64>();
                for ic in 0..ic_n {
                    let x_plane = &x[(s * ic_n + ic) * self.h * self.w..][..self.h * self.w];
                    let w_block = &w[(oc * ic_n + ic) * k * k..][..k * k];
                    let dw_block = &mut dw[(oc * ic_n + ic) * k * k..][..k * k];
                    for oy in 0..self.oh {
                        let dy_row = &dy_plane[oy * self.ow..(oy + 1) * self.ow];
                        for ky in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let row_off = (s * ic_n + ic) * self.h * self.w + iy as usize * self.w;
                            let x_row = &x_plane[iy as usize * self.w..][..self.w];
                            for kx in 0..k {
                                let (lo, hi) = self.ox_range(kx);
                                let mut acc = 0.0;
                                if let Some(dx_vec) = dx_buf.as_deref_mut() {
                                    let wv = w_block[ky * k + kx];
                                    let dx_row = &mut dx_vec[row_off..row_off + self.w];
                                    for ox in lo..hi {
                                        let ix = ox * self.stride + kx - self.pad_left;
                                        let d = dy_row[ox];
                                        acc += d * x_row[ix];
                                        dx_row[ix] += wv * d;
                                    }
                                } else {
                                    for ox in lo..hi {
                                        let ix = ox * self.stride + kx - self.pad_left;
                                        acc += dy_row[ox] * x_row[ix];
                                    }
                                }
                                dw_block[ky * k + kx] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Mean softmax cross-entropy over the batch plus its gradient w.r.t. the
/// logits: `dlogits = (softmax(logits) - onehot(label)) / batch`.
/// Stabilized by per-row max subtraction.
pub fn softmax_cross_entropy(logits: &Mat, labels: &[usize]) -> Result<(f64, Mat)> {
    if labels.len() != logits.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    let (b, c) = (logits.rows(), logits.cols());
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let inv_b = 1.0 / b as f64;
    let mut dlogits = Mat::zeros(b, c);
    let mut loss = 0.0;
    for r in 0..b {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let drow = dlogits.row_mut(r);
        for (d, &v) in drow.iter_mut().zip(row) {
            let e = (v - max).exp();
            *d = e;
            sum += e;
        }
        loss += max + sum.ln() - row[labels[r]];
        let inv_sum = 1.0 / sum;
        for d in drow.iter_mut() {
            *d *= inv_sum * inv_b;
        }
        drow[labels[r]] -= inv_b;
    }
    Ok((loss * inv_b, dlogits))
}

/// Row-wise softmax probabilities (max-subtraction stabilized).
pub fn softmax(logits: &Mat) -> Mat {
    let (b, c) = (logits.rows(), logits.cols());
    let mut probs = Mat::zeros(b, c);
    for r in 0..b {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let prow = probs.row_mut(r);
        let mut sum = 0.0;
        for (p, &v) in prow.iter_mut().zip(row) {
            let e = (v - max).exp();
            *p = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for p in prow.iter_mut() {
            *p *= inv;
        }
    }
    probs
}

/// Backpropagates `dlogits` through the retained activations, returning the
/// gradient of the scalar loss w.r.t. the flat parameter vector.
pub fn backward(params: &ModelParams, tape: &Tape, dlogits: &Mat) -> Result<Vec<f64>> {
    let arch = params.arch();
    if tape.arch != *arch {
        return Err(Error::StaleTape(
            "tape was recorded for a different architecture".into(),
        ));
    }
    if tape.acts.len() != arch.layers().len() {
        return Err(Error::StaleTape(format!(
            "tape has {} layer activations, architecture has {} layers",
            tape.acts.len(),
            arch.layers().len()
        )));
    }
    if dlogits.rows() != tape.batch || dlogits.cols() != arch.num_classes() {
        return Err(Error::StaleTape(format!(
            "dlogits is {}x{}, expected {}x{}",
            dlogits.rows(),
            dlogits.cols(),
            tape.batch,
            arch.num_classes()
        )));
    }
    let b = tape.batch;
    let mut grad = vec![0.0; arch.param_count()];
    let mut d = dlogits.data().to_vec();
    for (i, layer) in arch.layers().iter().enumerate().rev() {
        let input = &tape.acts[i];
        let want_dx = i > 0;
        d = match *layer {
            LayerSpec::Dense { in_dim, out_dim } => {
                let (w, _) = params.layer_params(i);
                let off = arch.param_offset(i);
                let (dw, dbias) = grad[off..off + layer.param_count()]
                    .split_at_mut(in_dim * out_dim);
                let mut dx = vec![0.0; want_dx as usize * b * in_dim];
                for s in 0..b {
                    let x = &input[s * in_dim..(s + 1) * in_dim];
                    let dy = &d[s * out_dim..(s + 1) * out_dim];
                    for (o, &dyo) in dy.iter().enumerate() {
                        dbias[o] += dyo;
                        let dw_row = &mut dw[o * in_dim..(o + 1) * in_dim];
                        for (dwi, xi) in dw_row.iter_mut().zip(x) {
                            *dwi += dyo * xi;
                        }
                    }
                    if want_dx {
                        let dx_row = &mut dx[s * in_dim..(s + 1) * in_dim];
                        for (o, &dyo) in dy.iter().enumerate() {
                            let w_row = &w[o * in_dim..(o + 1) * in_dim];
                            for (dxi, wi) in dx_row.iter_mut().zip(w_row) {
                                *dxi += dyo * wi;
                            }
                        }
                    }
                }
                dx
            }
            LayerSpec::Relu => {
                if want_dx {
                    input
                        .iter()
                        .zip(&d)
                        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                        .collect()
                } else {
                    Vec::new()
                }
            }
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => {
                let (w, _) = params.layer_params(i);
                let off = arch.param_offset(i);
                let (dw, dbias) = grad[off..off + layer.param_count()]
                    .split_at_mut(out_ch * in_ch * kernel * kernel);
                let geo = ConvGeometry::of(arch, i, in_ch, out_ch, kernel, stride);
                let mut dx = vec![0.0; want_dx as usize * input.len()];
                geo.backward(
                    w,
                    input,
                    &d,
                    b,
                    dw,
                    dbias,
                    want_dx.then_some(&mut dx),
                );
                dx
            }
            LayerSpec::MaxPool2x2 => {
                if want_dx {
                    let (c, h, wd) = image_dims(arch.boundary(i));
                    let (oh, ow) = (h / 2, wd / 2);
                    let mut dx = vec![0.0; input.len()];
                    for plane in 0..b * c {
                        let src = &input[plane * h * wd..(plane + 1) * h * wd];
                        let dsrc = &mut dx[plane * h * wd..(plane + 1) * h * wd];
                        let dyp = &d[plane * oh * ow..(plane + 1) * oh * ow];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let (iy, ix) = (oy * 2, ox * 2);
                                // First-scanned max wins, same order as forward.
                                let mut best = (iy * wd + ix, src[iy * wd + ix]);
                                for (dyo, dxo) in [(0, 1), (1, 0), (1, 1)] {
                                    let idx = (iy + dyo) * wd + ix + dxo;
                                    if src[idx] > best.1 {
                                        best = (idx, src[idx]);
                                    }
                                }
                                dsrc[best.0] += dyp[oy * ow + ox];
                            }
                        }
                    }
                    dx
                } else {
                    Vec::new()
                }
            }
            LayerSpec::Flatten => {
                if want_dx {
                    d.clone()
                } else {
                    Vec::new()
                }
            }
        };
    }
    Ok(grad)
}
