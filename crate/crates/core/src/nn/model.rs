//! Multi-head receiver network: `(2, N)` IQ input, `M` two-way softmax heads.

use std::fmt;
use std::str::FromStr;

use super::layers::{layout_string, Conv1d, Dense, Layer};
use super::tensor::RealTensor;
use crate::error::{invalid, Error, Result};
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::signal::{BitStream, IqSignal, FRAME_SAMPLES, INFO_BITS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    CompactConv,
    ResnetLike,
    Vgg16Like,
    Vgg19Like,
    /// Hand-assembled stack (tests, experiments); only loadable from its checkpoint layout.
    Custom,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::CompactConv,
        Architecture::ResnetLike,
        Architecture::Vgg16Like,
        Architecture::Vgg19Like,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Architecture::CompactConv => "compact-conv",
            Architecture::ResnetLike => "resnet-like",
            Architecture::Vgg16Like => "vgg16-like",
            Architecture::Vgg19Like => "vgg19-like",
            Architecture::Custom => "custom",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compact-conv" => Ok(Architecture::CompactConv),
            "resnet-like" => Ok(Architecture::ResnetLike),
            "vgg16-like" => Ok(Architecture::Vgg16Like),
            "vgg19-like" => Ok(Architecture::Vgg19Like),
            "custom" => Ok(Architecture::Custom),
            other => Err(invalid(format!("unknown architecture `{other}`"))),
        }
    }
}

fn conv<T: Scalar>(i: usize, o: usize, k: usize, s: usize, p: usize) -> Layer<T> {
    Layer::Conv1d(Conv1d::new(i, o, k, s, p))
}

fn dense<T: Scalar>(i: usize, o: usize) -> Layer<T> {
    Layer::Dense(Dense::new(i, o))
}

/// Uninitialized layer stack for a named architecture (input `(2, 448)`).
pub fn architecture_layers<T: Scalar>(arch: Architecture, m_bits: usize) -> Result<Vec<Layer<T>>> {
    use Layer::{AvgPool1d as Pool, Silu};
    let heads = 2 * m_bits;
    let front = || vec![conv(2, 4, 3, 1, 1), Silu];
    let layers = match arch {
        Architecture::CompactConv => {
            let mut l = front();
            l.extend([
                conv(4, 4, 3, 1, 1),
                Silu,
                Pool(2),
                dense(896, 128),
                Silu,
                dense(128, 128),
                Silu,
                dense(128, heads),
            ]);
            l
        }
        Architecture::ResnetLike => {
            let mut l = front();
            let block = Layer::Residual(vec![dense(128, 128), Silu, dense(128, 128)]);
            l.extend([Pool(2), dense(896, 128), Silu, block, Silu, dense(128, heads)]);
            l
        }
        Architecture::Vgg16Like | Architecture::Vgg19Like => {
            let mut l = vec![conv(2, 8, 8, 4, 2), Silu, conv(8, 8, 3, 1, 1), Silu, Pool(2)];
            l.extend([conv(8, 16, 3, 1, 1), Silu, conv(16, 16, 3, 1, 1), Silu, Pool(2)]);
            l.extend([conv(16, 16, 3, 1, 1), Silu]);
            if arch == Architecture::Vgg19Like {
                l.extend([conv(16, 16, 3, 1, 1), Silu, conv(16, 16, 3, 1, 1), Silu]);
            }
            l.extend([dense(448, 64), Silu, dense(64, heads)]);
            l
        }
        Architecture::Custom => return Err(invalid("custom architectures have no built-in layout")),
    };
    Ok(layers)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverModel<T> {
    architecture: Architecture,
    m_bits: usize,
    input_len: usize,
    layers: Vec<Layer<T>>,
}

/// One forward/backward evaluation of the per-sample loss.
#[derive(Clone, Debug)]
pub struct SampleGradient<T> {
    pub loss: T,
    pub probs: Vec<[T; 2]>,
    /// `(2, N)` gradient, present when requested.
    pub input_grad: Option<RealTensor<T>>,
}

/// Builds and initializes a named architecture; deterministic in `seed`.
pub fn build_receiver<T: Scalar>(arch: Architecture, seed: u64) -> Result<ReceiverModel<T>> {
    let layers = architecture_layers(arch, INFO_BITS)?;
    let mut model = ReceiverModel::from_layers(arch, INFO_BITS, FRAME_SAMPLES, layers)?;
    model.init(seed);
    Ok(model)
}

impl<T: Scalar> ReceiverModel<T> {
    /// Assembles a model from explicit layers, checking that they map `(2, input_len)`
    /// to `2 * m_bits` logits. Parameters are left as given.
    pub fn from_layers(
        architecture: Architecture,
        m_bits: usize,
        input_len: usize,
        layers: Vec<Layer<T>>,
    ) -> Result<Self> {
        if m_bits == 0 || input_len == 0 {
            return Err(invalid("model needs at least one head and one input sample"));
        }
        let mut shape = vec![2, input_len];
        for l in &layers {
            shape = l.output_shape(&shape)?;
        }
        if shape != [2 * m_bits] {
            return Err(invalid(format!(
                "layer stack ends in {shape:?}, expected [{}]",
                2 * m_bits
            )));
        }
        Ok(Self {
            architecture,
            m_bits,
            input_len,
            layers,
        })
    }

    /// Re-initializes every parameter from `seed`.
    pub fn init(&mut self, seed: u64) {
        let mut rng = stream_rng(seed, 0);
        let last = self.layers.len().saturating_sub(1);
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            // He-uniform in the trunk, a gentler scale on the logit layer.
            let gain = if idx == last { 3.0 } else { 6.0 };
            layer.init_params(&mut rng, gain);
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn m_bits(&self) -> usize {
        self.m_bits
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layout(&self) -> String {
        layout_string(&self.layers)
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.len());
        n
    }

    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a RealTensor<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit_params(&format!("layers.{i}"), f);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut RealTensor<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn params(&self) -> Vec<&RealTensor<T>> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, t| out.push(t));
        out
    }

    /// Same structure with all parameters zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
            ..self.clone()
        }
    }

    pub fn cast<U: Scalar>(&self) -> ReceiverModel<U> {
        ReceiverModel {
            architecture: self.architecture,
            m_bits: self.m_bits,
            input_len: self.input_len,
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    fn check_input(&self, signal: &IqSignal<T>) -> Result<RealTensor<T>> {
        if signal.len() != self.input_len {
            return Err(invalid(format!(
                "receiver expects {} samples, got {}",
                self.input_len,
                signal.len()
            )));
        }
        RealTensor::new(vec![2, self.input_len], signal.to_stacked())
    }

    /// Raw head logits, `2 * m_bits` values laid out as `(m, k)`.
    pub fn logits(&self, signal: &IqSignal<T>) -> Result<Vec<T>> {
        let mut h = self.check_input(signal)?;
        for l in &self.layers {
            h = l.forward(h, false).0;
        }
        Ok(h.into_values())
    }

    /// Per-head class probabilities `[P(bit = 0), P(bit = 1)]`.
    pub fn forward(&self, signal: &IqSignal<T>) -> Result<Vec<[T; 2]>> {
        Ok(head_probs(&self.logits(signal)?))
    }

    /// Per-head argmax; ties go to bit 0.
    pub fn predict_bits(&self, signal: &IqSignal<T>) -> Result<BitStream> {
        Ok(bits_from_probs(&self.forward(signal)?))
    }

    /// Summed cross-entropy over the heads for a single frame.
    pub fn sample_loss(&self, signal: &IqSignal<T>, labels: &BitStream) -> Result<T> {
        self.check_labels(labels)?;
        Ok(head_loss(&self.forward(signal)?, labels))
    }

    /// Mean over the batch of the summed per-head cross-entropy.
    pub fn batch_loss(&self, batch: &[(&IqSignal<T>, &BitStream)]) -> Result<T> {
        if batch.is_empty() {
            return Err(invalid("loss of an empty batch"));
        }
        let mut total = T::zero();
        for (s, b) in batch {
            total += self.sample_loss(s, b)?;
        }
        Ok(total / T::from_usize_lossy(batch.len()))
    }

    fn check_labels(&self, labels: &BitStream) -> Result<()> {
        if labels.len() != self.m_bits {
            return Err(invalid(format!(
                "expected {} label bits, got {}",
                self.m_bits,
                labels.len()
            )));
        }
        Ok(())
    }

    /// Reverse-mode pass of the per-sample loss. Parameter gradients are added into
    /// `param_grads` (from [`Self::zeros_like`]) when given.
    pub fn backprop(
        &self,
        signal: &IqSignal<T>,
        labels: &BitStream,
        param_grads: Option<&mut ReceiverModel<T>>,
        need_input_grad: bool,
    ) -> Result<SampleGradient<T>> {
        self.check_labels(labels)?;
        let mut h = self.check_input(signal)?;
        let mut traces = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (next, tr) = l.forward(h, true);
            h = next;
            traces.push(tr.expect("recorded trace"));
        }
        let probs = head_probs(h.values());
        let loss = head_loss(&probs, labels);
        let dlogits: Vec<T> = probs
            .iter()
            .zip(labels.as_slice())
            .flat_map(|(p, &bit)| {
                let y = bit as usize;
                if p[y] < T::LOG_FLOOR {
                    // clamped region: the loss is locally constant
                    [T::zero(), T::zero()]
                } else {
                    let mut d = *p;
                    d[y] -= T::one();
                    d
                }
            })
            .collect();
        let mut dy = RealTensor::new(vec![dlogits.len()], dlogits)?;
        let mut grads = param_grads.map(|g| &mut g.layers);
        let last = self.layers.len();
        for idx in (0..last).rev() {
            let need_dx = idx > 0 || need_input_grad;
            let g = grads.as_deref_mut().map(|gl| &mut gl[idx]);
            match self.layers[idx].backward(&traces[idx], dy, g, need_dx) {
                Some(dx) => dy = dx,
                None => {
                    return Ok(SampleGradient {
                        loss,
                        probs,
                        input_grad: None,
                    });
                }
            }
        }
        Ok(SampleGradient {
            loss,
            probs,
            input_grad: need_input_grad.then_some(dy),
        })
    }

    /// Gradient of the per-sample loss with respect to the stacked `(2, N)` input.
    pub fn input_gradient(&self, signal: &IqSignal<T>, labels: &BitStream) -> Result<RealTensor<T>> {
        Ok(self
            .backprop(signal, labels, None, true)?
            .input_grad
            .expect("input gradient requested"))
    }
}

/// Two-way softmax per head.
pub fn head_probs<T: Scalar>(logits: &[T]) -> Vec<[T; 2]> {
    logits
        .chunks_exact(2)
        .map(|z| {
            let m = z[0].max(z[1]);
            let e0 = (z[0] - m).exp();
            let e1 = (z[1] - m).exp();
            let s = e0 + e1;
            [e0 / s, e1 / s]
        })
        .collect()
}

pub fn head_loss<T: Scalar>(probs: &[[T; 2]], labels: &BitStream) -> T {
    probs
        .iter()
        .zip(labels.as_slice())
        .map(|(p, &bit)| -p[bit as usize].max(T::LOG_FLOOR).ln())
        .sum()
}

pub fn bits_from_probs<T: Scalar>(probs: &[[T; 2]]) -> BitStream {
    BitStream::new(probs.iter().map(|p| u8::from(p[1] > p[0])).collect()).expect("binary decisions")
}
