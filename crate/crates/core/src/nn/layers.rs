//! Layer stack with hand-written reverse-mode passes.
//!
//! Activations are `(channels, length)` tensors for the convolutional trunk and flat
//! vectors after the first dense layer. Every forward pass can optionally record a
//! [`Trace`] that the matching backward pass consumes.

use rand::Rng;

use super::tensor::RealTensor;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `(out_ch, in_ch, kernel)`
    pub weight: RealTensor<T>,
    pub bias: RealTensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `(outputs, inputs)`
    pub weight: RealTensor<T>,
    pub bias: RealTensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv1d(Conv1d<T>),
    /// Non-overlapping average pooling along the length axis; a ragged tail is dropped.
    AvgPool1d(usize),
    /// `x * sigmoid(x)`
    Silu,
    Dense(Dense<T>),
    /// `x + body(x)`
    Residual(Vec<Layer<T>>),
}

/// Values saved by a forward pass for the backward pass.
#[derive(Debug)]
pub enum Trace<T> {
    /// Zero-padded input of a convolution.
    Padded(RealTensor<T>),
    Input(RealTensor<T>),
    Shape(Vec<usize>),
    Nested(Vec<Trace<T>>),
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            weight: RealTensor::zeros(&[out_ch, in_ch, kernel]),
            bias: RealTensor::zeros(&[out_ch]),
        }
    }

    pub fn output_len(&self, input_len: usize) -> Option<usize> {
        let padded = input_len + 2 * self.pad;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    fn pad_input(&self, x: &RealTensor<T>) -> RealTensor<T> {
        let len = x.shape()[1];
        let lp = len + 2 * self.pad;
        let mut xp = vec![T::zero(); self.in_ch * lp];
        for c in 0..self.in_ch {
            xp[c * lp + self.pad..c * lp + self.pad + len].copy_from_slice(&x.values()[c * len..(c + 1) * len]);
        }
        RealTensor::new(vec![self.in_ch, lp], xp).expect("padded shape")
    }

    fn forward_padded(&self, xp: &RealTensor<T>) -> RealTensor<T> {
        let lp = xp.shape()[1];
        let lout = (lp - self.kernel) / self.stride + 1;
        let (k, s) = (self.kernel, self.stride);
        let w = self.weight.values();
        let mut y = vec![T::zero(); self.out_ch * lout];
        for o in 0..self.out_ch {
            let yo = &mut y[o * lout..(o + 1) * lout];
            yo.fill(self.bias.values()[o]);
            for i in 0..self.in_ch {
                let xi = &xp.values()[i * lp..(i + 1) * lp];
                for j in 0..k {
                    let wv = w[(o * self.in_ch + i) * k + j];
                    if s == 1 {
                        for (yv, &xv) in yo.iter_mut().zip(&xi[j..j + lout]) {
                            *yv += wv * xv;
                        }
                    } else {
                        for (t, yv) in yo.iter_mut().enumerate() {
                            *yv += wv * xi[t * s + j];
                        }
                    }
                }
            }
        }
        RealTensor::new(vec![self.out_ch, lout], y).expect("conv output shape")
    }

    fn backward(
        &self,
        xp: &RealTensor<T>,
        dy: &RealTensor<T>,
        grads: Option<&mut Conv1d<T>>,
        need_dx: bool,
    ) -> Option<RealTensor<T>> {
        let lp = xp.shape()[1];
        let lout = dy.shape()[1];
        let (k, s) = (self.kernel, self.stride);
        let w = self.weight.values();
        if let Some(g) = grads {
            for o in 0..self.out_ch {
                let dyo = &dy.values()[o * lout..(o + 1) * lout];
                g.bias.values_mut()[o] += dyo.iter().copied().sum::<T>();
                for i in 0..self.in_ch {
                    let xi = &xp.values()[i * lp..(i + 1) * lp];
                    for j in 0..k {
                        let acc: T = if s == 1 {
                            dyo.iter().zip(&xi[j..j + lout]).map(|(&a, &b)| a * b).sum()
                        } else {
                            dyo.iter().enumerate().map(|(t, &a)| a * xi[t * s + j]).sum()
                        };
                        g.weight.values_mut()[(o * self.in_ch + i) * k + j] += acc;
                    }
                }
            }
        }
        if !need_dx {
            return None;
        }
        let len = lp - 2 * self.pad;
        let mut dxp = vec![T::zero(); self.in_ch * lp];
        for o in 0..self.out_ch {
            let dyo = &dy.values()[o * lout..(o + 1) * lout];
            for i in 0..self.in_ch {
                let dxi = &mut dxp[i * lp..(i + 1) * lp];
                for j in 0..k {
                    let wv = w[(o * self.in_ch + i) * k + j];
                    if s == 1 {
                        for (dx, &d) in dxi[j..j + lout].iter_mut().zip(dyo) {
                            *dx += wv * d;
                        }
                    } else {
                        for (t, &d) in dyo.iter().enumerate() {
                            dxi[t * s + j] += wv * d;
                        }
                    }
                }
            }
        }
        let mut dx = Vec::with_capacity(self.in_ch * len);
        for c in 0..self.in_ch {
            dx.extend_from_slice(&dxp[c * lp + self.pad..c * lp + self.pad + len]);
        }
        Some(RealTensor::new(vec![self.in_ch, len], dx).expect("conv grad shape"))
    }
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: RealTensor::zeros(&[outputs, inputs]),
            bias: RealTensor::zeros(&[outputs]),
        }
    }

    fn forward(&self, x: &RealTensor<T>) -> RealTensor<T> {
        let xv = x.values();
        let w = self.weight.values();
        let y = (0..self.outputs)
            .map(|o| {
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                self.bias.values()[o] + row.iter().zip(xv).map(|(&a, &b)| a * b).sum::<T>()
            })
            .collect();
        RealTensor::new(vec![self.outputs], y).expect("dense output shape")
    }

    fn backward(
        &self,
        x: &RealTensor<T>,
        dy: &RealTensor<T>,
        grads: Option<&mut Dense<T>>,
        need_dx: bool,
    ) -> Option<RealTensor<T>> {
        let xv = x.values();
        let w = self.weight.values();
        if let Some(g) = grads {
            for (o, &d) in dy.values().iter().enumerate() {
                g.bias.values_mut()[o] += d;
                if d.is_zero() {
                    continue;
                }
                let row = &mut g.weight.values_mut()[o * self.inputs..(o + 1) * self.inputs];
                for (gw, &xv) in row.iter_mut().zip(xv) {
                    *gw += d * xv;
                }
            }
        }
        if !need_dx {
            return None;
        }
        let mut dx = vec![T::zero(); self.inputs];
        for (o, &d) in dy.values().iter().enumerate() {
            if d.is_zero() {
                continue;
            }
            for (dxv, &wv) in dx.iter_mut().zip(&w[o * self.inputs..(o + 1) * self.inputs]) {
                *dxv += d * wv;
            }
        }
        Some(RealTensor::new(x.shape().to_vec(), dx).expect("dense grad shape"))
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn pool_forward<T: Scalar>(x: &RealTensor<T>, size: usize) -> RealTensor<T> {
    let (ch, len) = (x.shape()[0], x.shape()[1]);
    let lout = len / size;
    let inv = T::one() / T::from_usize_lossy(size);
    let mut y = Vec::with_capacity(ch * lout);
    for c in 0..ch {
        let row = &x.values()[c * len..(c + 1) * len];
        y.extend(
            row.chunks_exact(size)
                .take(lout)
                .map(|w| w.iter().copied().sum::<T>() * inv),
        );
    }
    RealTensor::new(vec![ch, lout], y).expect("pool output shape")
}

fn pool_backward<T: Scalar>(shape: &[usize], dy: &RealTensor<T>, size: usize) -> RealTensor<T> {
    let (ch, len) = (shape[0], shape[1]);
    let lout = dy.shape()[1];
    let inv = T::one() / T::from_usize_lossy(size);
    let mut dx = vec![T::zero(); ch * len];
    for c in 0..ch {
        for t in 0..lout {
            let d = dy.values()[c * lout + t] * inv;
            dx[c * len + t * size..c * len + (t + 1) * size].fill(d);
        }
    }
    RealTensor::new(shape.to_vec(), dx).expect("pool grad shape")
}

impl<T: Scalar> Layer<T> {
    /// Forward pass; records what the backward pass needs when `record` is set.
    pub fn forward(&self, x: RealTensor<T>, record: bool) -> (RealTensor<T>, Option<Trace<T>>) {
        match self {
            Layer::Conv1d(conv) => {
                let xp = conv.pad_input(&x);
                let y = conv.forward_padded(&xp);
                (y, record.then_some(Trace::Padded(xp)))
            }
            Layer::AvgPool1d(size) => {
                let y = pool_forward(&x, *size);
                (y, record.then(|| Trace::Shape(x.shape().to_vec())))
            }
            Layer::Silu => {
                let y = RealTensor::new(x.shape().to_vec(), x.values().iter().map(|&v| v * sigmoid(v)).collect())
                    .expect("silu shape");
                (y, record.then_some(Trace::Input(x)))
            }
            Layer::Dense(d) => {
                let y = d.forward(&x);
                (y, record.then_some(Trace::Input(x)))
            }
            Layer::Residual(body) => {
                let mut h = x.clone();
                let mut traces = Vec::new();
                for layer in body {
                    let (next, tr) = layer.forward(h, record);
                    h = next;
                    traces.extend(tr);
                }
                let mut y = x;
                y.axpy(T::one(), &h);
                (y, record.then_some(Trace::Nested(traces)))
            }
        }
    }

    /// Backward pass. Parameter gradients are accumulated into `grads` (a layer of the
    /// same structure) when given; the input gradient is returned when `need_dx`.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        dy: RealTensor<T>,
        grads: Option<&mut Layer<T>>,
        need_dx: bool,
    ) -> Option<RealTensor<T>> {
        match (self, trace) {
            (Layer::Conv1d(conv), Trace::Padded(xp)) => {
                let g = grads.map(|g| match g {
                    Layer::Conv1d(c) => c,
                    _ => panic!("gradient buffer structure mismatch"),
                });
                conv.backward(xp, &dy, g, need_dx)
            }
            (Layer::AvgPool1d(size), Trace::Shape(shape)) => need_dx.then(|| pool_backward(shape, &dy, *size)),
            (Layer::Silu, Trace::Input(x)) => need_dx.then(|| {
                let dx = x
                    .values()
                    .iter()
                    .zip(dy.values())
                    .map(|(&v, &d)| {
                        let s = sigmoid(v);
                        d * s * (T::one() + v * (T::one() - s))
                    })
                    .collect();
                RealTensor::new(x.shape().to_vec(), dx).expect("silu grad shape")
            }),
            (Layer::Dense(d), Trace::Input(x)) => {
                let g = grads.map(|g| match g {
                    Layer::Dense(d) => d,
                    _ => panic!("gradient buffer structure mismatch"),
                });
                d.backward(x, &dy, g, need_dx)
            }
            (Layer::Residual(body), Trace::Nested(traces)) => {
                let mut gbody = grads.map(|g| match g {
                    Layer::Residual(b) => b,
                    _ => panic!("gradient buffer structure mismatch"),
                });
                // Inner layers always need dx to reach the skip junction.
                let mut h = dy.clone();
                for (idx, (layer, tr)) in body.iter().zip(traces).enumerate().rev() {
                    let g = gbody.as_deref_mut().map(|b| &mut b[idx]);
                    h = layer.backward(tr, h, g, true).expect("inner dx");
                }
                need_dx.then(|| {
                    let mut dx = dy;
                    dx.axpy(T::one(), &h);
                    dx
                })
            }
            _ => panic!("trace does not match layer kind"),
        }
    }

    /// Output shape for a given input shape, validating the stack along the way.
    pub fn output_shape(&self, shape: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv1d(c) => {
                if shape.len() != 2 || shape[0] != c.in_ch {
                    return Err(invalid(format!("conv expects ({}, L) input, got {shape:?}", c.in_ch)));
                }
                let lout = c
                    .output_len(shape[1])
                    .ok_or_else(|| invalid("conv kernel longer than padded input"))?;
                Ok(vec![c.out_ch, lout])
            }
            Layer::AvgPool1d(size) => {
                if shape.len() != 2 || *size == 0 || shape[1] < *size {
                    return Err(invalid(format!("pool of size {size} cannot apply to {shape:?}")));
                }
                Ok(vec![shape[0], shape[1] / size])
            }
            Layer::Silu => Ok(shape.to_vec()),
            Layer::Dense(d) => {
                let n: usize = shape.iter().product();
                if n != d.inputs {
                    return Err(invalid(format!("dense expects {} inputs, got {shape:?}", d.inputs)));
                }
                Ok(vec![d.outputs])
            }
            Layer::Residual(body) => {
                let mut s = shape.to_vec();
                for l in body {
                    s = l.output_shape(&s)?;
                }
                if s != shape {
                    return Err(invalid(format!("residual body maps {shape:?} to {s:?}")));
                }
                Ok(s)
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Layer::Conv1d(c) => Layer::Conv1d(Conv1d {
                weight: c.weight.zeros_like(),
                bias: c.bias.zeros_like(),
                ..c.clone()
            }),
            Layer::Dense(d) => Layer::Dense(Dense {
                weight: d.weight.zeros_like(),
                bias: d.bias.zeros_like(),
                ..d.clone()
            }),
            Layer::Residual(body) => Layer::Residual(body.iter().map(Layer::zeros_like).collect()),
            other => other.clone(),
        }
    }

    /// Visits parameter tensors in canonical order with their dotted names.
    pub fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a RealTensor<T>)) {
        match self {
            Layer::Conv1d(c) => {
                f(format!("{prefix}.weight"), &c.weight);
                f(format!("{prefix}.bias"), &c.bias);
            }
            Layer::Dense(d) => {
                f(format!("{prefix}.weight"), &d.weight);
                f(format!("{prefix}.bias"), &d.bias);
            }
            Layer::Residual(body) => {
                for (i, l) in body.iter().enumerate() {
                    l.visit_params(&format!("{prefix}.body.{i}"), f);
                }
            }
            Layer::AvgPool1d(_) | Layer::Silu => {}
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut RealTensor<T>> {
        match self {
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Residual(body) => body.iter_mut().flat_map(Layer::params_mut).collect(),
            Layer::AvgPool1d(_) | Layer::Silu => Vec::new(),
        }
    }

    /// Fan-in scaled uniform initialization; biases start at zero.
    pub fn init_params<R: Rng + ?Sized>(&mut self, rng: &mut R, gain: f64) {
        let fill = |w: &mut RealTensor<T>, fan_in: usize, rng: &mut R| {
            let bound = (gain / fan_in as f64).sqrt();
            for v in w.values_mut() {
                *v = T::from_f64_lossy(rng.gen_range(-bound..bound));
            }
        };
        match self {
            Layer::Conv1d(c) => {
                let fan_in = c.in_ch * c.kernel;
                fill(&mut c.weight, fan_in, rng);
                c.bias.values_mut().fill(T::zero());
            }
            Layer::Dense(d) => {
                fill(&mut d.weight, d.inputs, rng);
                d.bias.values_mut().fill(T::zero());
            }
            Layer::Residual(body) => {
                // The branch's last layer starts small so each block begins near identity.
                let last = body
                    .iter()
                    .rposition(|l| matches!(l, Layer::Conv1d(_) | Layer::Dense(_)));
                for (idx, l) in body.iter_mut().enumerate() {
                    l.init_params(rng, if Some(idx) == last { gain / 16.0 } else { gain });
                }
            }
            Layer::AvgPool1d(_) | Layer::Silu => {}
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv1d(c) => Layer::Conv1d(Conv1d {
                in_ch: c.in_ch,
                out_ch: c.out_ch,
                kernel: c.kernel,
                stride: c.stride,
                pad: c.pad,
                weight: c.weight.cast(),
                bias: c.bias.cast(),
            }),
            Layer::Dense(d) => Layer::Dense(Dense {
                inputs: d.inputs,
                outputs: d.outputs,
                weight: d.weight.cast(),
                bias: d.bias.cast(),
            }),
            Layer::Residual(body) => Layer::Residual(body.iter().map(Layer::cast).collect()),
            Layer::AvgPool1d(s) => Layer::AvgPool1d(*s),
            Layer::Silu => Layer::Silu,
        }
    }

    /// Compact textual layout, e.g. `conv(2,8,8,4,2)` or `res[conv(8,8,3,1,1);silu]`.
    pub fn layout(&self) -> String {
        match self {
            Layer::Conv1d(c) => format!("conv({},{},{},{},{})", c.in_ch, c.out_ch, c.kernel, c.stride, c.pad),
            Layer::AvgPool1d(s) => format!("pool({s})"),
            Layer::Silu => "silu".into(),
            Layer::Dense(d) => format!("dense({},{})", d.inputs, d.outputs),
            Layer::Residual(body) => format!("res[{}]", layout_string(body)),
        }
    }
}

pub fn layout_string<T: Scalar>(layers: &[Layer<T>]) -> String {
    layers.iter().map(Layer::layout).collect::<Vec<_>>().join(";")
}

/// Parses the output of [`layout_string`] back into zero-initialized layers.
pub fn parse_layout<T: Scalar>(text: &str) -> Result<Vec<Layer<T>>> {
    let mut layers = Vec::new();
    for item in split_top_level(text)? {
        layers.push(parse_item(item)?);
    }
    Ok(layers)
}

fn split_top_level(text: &str) -> Result<Vec<&str>> {
    let mut items = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in text.char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            ';' if depth == 0 => {
                items.push(&text[start..i]);
                start = i + 1;
            }
            _ => {}
        }
        if depth < 0 {
            return Err(Error::Parse(format!("unbalanced layout: {text}")));
        }
    }
    if depth != 0 {
        return Err(Error::Parse(format!("unbalanced layout: {text}")));
    }
    if !text.is_empty() {
        items.push(&text[start..]);
    }
    Ok(items)
}

fn parse_args(item: &str, name: &str, count: usize) -> Result<Vec<usize>> {
    let inner = item
        .strip_prefix(name)
        .and_then(|r| r.strip_prefix('('))
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| Error::Parse(format!("malformed layer `{item}`")))?;
    let args = inner
        .split(',')
        .map(|a| {
            a.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad number in `{item}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if args.len() != count {
        return Err(Error::Parse(format!("`{item}` needs {count} arguments")));
    }
    Ok(args)
}

fn parse_item<T: Scalar>(item: &str) -> Result<Layer<T>> {
    if item == "silu" {
        Ok(Layer::Silu)
    } else if item.starts_with("conv(") {
        let a = parse_args(item, "conv", 5)?;
        if a[1] == 0 || a[2] == 0 || a[3] == 0 {
            return Err(Error::Parse(format!("degenerate conv `{item}`")));
        }
        Ok(Layer::Conv1d(Conv1d::new(a[0], a[1], a[2], a[3], a[4])))
    } else if item.starts_with("pool(") {
        Ok(Layer::AvgPool1d(parse_args(item, "pool", 1)?[0]))
    } else if item.starts_with("dense(") {
        let a = parse_args(item, "dense", 2)?;
        Ok(Layer::Dense(Dense::new(a[0], a[1])))
    } else if let Some(body) = item.strip_prefix("res[").and_then(|r| r.strip_suffix(']')) {
        Ok(Layer::Residual(parse_layout(body)?))
    } else {
        Err(Error::Parse(format!("unknown layer `{item}`")))
    }
}
