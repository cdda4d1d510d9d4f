//! Randomly initialized encoders and their reverse-mode gradients.
//!
//! `convnet3` is three blocks of
//! `conv 3×3 (pad 1) → instance norm → ReLU → avg-pool 2×2`, and the
//! representation is the flattened final feature map. `mlp2` is two
//! `linear → ReLU` layers on the flattened input. Either may carry a linear
//! classification head for evaluation training.
//!
//! Condensation never updates encoder weights; it only needs gradients with
//! respect to the input images. Weight gradients exist for the evaluation
//! harness.

mod layers;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{Purpose, RngState, Scalar, Tensor};

use layers::ConvDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    ConvNet3,
    Mlp2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        InputShape { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Encoder architecture. `width` is channels per conv block for `convnet3`
/// and hidden units for `mlp2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderArch {
    pub kind: ArchKind,
    pub input: InputShape,
    pub width: usize,
}

impl EncoderArch {
    pub fn convnet3(input: InputShape, width: usize) -> Self {
        EncoderArch { kind: ArchKind::ConvNet3, input, width }
    }

    pub fn mlp2(input: InputShape, width: usize) -> Self {
        EncoderArch { kind: ArchKind::Mlp2, input, width }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.input.is_empty() {
            return Err(Error::invalid(format!("degenerate architecture {self}")));
        }
        if self.kind == ArchKind::ConvNet3 {
            let (h, w) = self.final_spatial();
            if h == 0 || w == 0 {
                return Err(Error::invalid(format!(
                    "convnet3 needs inputs of at least 8×8, got {}×{}",
                    self.input.height, self.input.width
                )));
            }
        }
        Ok(())
    }

    fn final_spatial(&self) -> (usize, usize) {
        (self.input.height / 8, self.input.width / 8)
    }

    /// Length of one representation vector.
    pub fn rep_dim(&self) -> usize {
        match self.kind {
            ArchKind::ConvNet3 => {
                let (h, w) = self.final_spatial();
                self.width * h * w
            }
            ArchKind::Mlp2 => self.width,
        }
    }

    fn layer_shapes(&self) -> Vec<(Vec<usize>, usize)> {
        match self.kind {
            ArchKind::ConvNet3 => {
                let mut cin = self.input.channels;
                (0..3)
                    .map(|_| {
                        let s = (vec![self.width, cin, 3, 3], cin * 9);
                        cin = self.width;
                        s
                    })
                    .collect()
            }
            ArchKind::Mlp2 => vec![
                (vec![self.width, self.input.len()], self.input.len()),
                (vec![self.width, self.width], self.width),
            ],
        }
    }
}

impl fmt::Display for EncoderArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ArchKind::ConvNet3 => "convnet3",
            ArchKind::Mlp2 => "mlp2",
        };
        write!(
            f,
            "{kind}:w{}:{}x{}x{}",
            self.width, self.input.channels, self.input.height, self.input.width
        )
    }
}

impl FromStr for EncoderArch {
    type Err = Error;

    /// Parses the `kind:wN:CxHxW` form produced by `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("cannot parse architecture {s:?}"));
        let mut parts = s.split(':');
        let kind = match parts.next() {
            Some("convnet3") => ArchKind::ConvNet3,
            Some("mlp2") => ArchKind::Mlp2,
            _ => return Err(bad()),
        };
        let width = parts
            .next()
            .and_then(|w| w.strip_prefix('w'))
            .and_then(|w| w.parse().ok())
            .ok_or_else(bad)?;
        let dims: Vec<usize> = parts
            .next()
            .ok_or_else(bad)?
            .split('x')
            .map(|d| d.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if parts.next().is_some() || dims.len() != 3 {
            return Err(bad());
        }
        let arch = EncoderArch { kind, input: InputShape::new(dims[0], dims[1], dims[2]), width };
        arch.validate()?;
        Ok(arch)
    }
}

/// One weight/bias pair. Conv weights are `out × in × 3 × 3`, linear
/// weights `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T = f64> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Layer<T> {
    fn init(shape: Vec<usize>, fan_in: usize, rng: &mut RngState) -> Result<Layer<T>> {
        let out = shape[0];
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = rng.gaussian(shape, 0.0, std)?.cast();
        Ok(Layer { weight, bias: Tensor::zeros([out]) })
    }

    fn cast<U: Scalar>(&self) -> Layer<U> {
        Layer { weight: self.weight.cast(), bias: self.bias.cast() }
    }

    fn zeros_like(&self) -> Layer<T> {
        Layer {
            weight: Tensor::zeros(self.weight.shape().to_vec()),
            bias: Tensor::zeros(self.bias.shape().to_vec()),
        }
    }
}

/// Encoder weights, optionally with a classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T = f64> {
    arch: EncoderArch,
    pub layers: Vec<Layer<T>>,
    pub head: Option<Layer<T>>,
    seed: u64,
}

/// Gradients with the same layout as [`EncoderParams`].
pub type ParamGrads<T = f64> = EncoderParams<T>;

/// Weights ~ N(0, 2 / fan_in), biases zero.
pub fn init_encoder(arch: &EncoderArch, rng: &RngState) -> Result<EncoderParams> {
    arch.validate()?;
    let mut stream = rng.split(Purpose::Encoder, &[]);
    let layers = arch
        .layer_shapes()
        .into_iter()
        .map(|(shape, fan_in)| Layer::init(shape, fan_in, &mut stream))
        .collect::<Result<_>>()?;
    Ok(EncoderParams { arch: *arch, layers, head: None, seed: rng.seed() })
}

/// Encoder plus a `rep_dim → num_classes` head.
pub fn init_classifier(arch: &EncoderArch, num_classes: usize, rng: &RngState) -> Result<EncoderParams> {
    if num_classes == 0 {
        return Err(Error::invalid("classifier needs at least one class"));
    }
    let mut params = init_encoder(arch, rng)?;
    let mut stream = rng.split(Purpose::Encoder, &[1]);
    params.head = Some(Layer::init(vec![num_classes, arch.rep_dim()], arch.rep_dim(), &mut stream)?);
    Ok(params)
}

impl<T: Scalar> EncoderParams<T> {
    pub fn arch(&self) -> &EncoderArch {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.head.as_ref().map(|h| h.weight.shape()[0])
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        EncoderParams {
            arch: self.arch,
            layers: self.layers.iter().map(Layer::cast).collect(),
            head: self.head.as_ref().map(Layer::cast),
            seed: self.seed,
        }
    }

    pub fn zeros_like(&self) -> EncoderParams<T> {
        EncoderParams {
            arch: self.arch,
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
            head: self.head.as_ref().map(Layer::zeros_like),
            seed: self.seed,
        }
    }

    /// Every parameter tensor in a fixed order (layer weights and biases,
    /// then the head).
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .chain(self.head.iter())
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .chain(self.head.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize> {
        let inp = self.arch.input;
        match batch.shape() {
            [n, c, h, w] if *c == inp.channels && *h == inp.height && *w == inp.width => Ok(*n),
            s => Err(Error::shape(format!(
                "encoder {} expects n×{}×{}×{}, got {:?}",
                self.arch, inp.channels, inp.height, inp.width, s
            ))),
        }
    }

    /// Forward pass recording what backward needs.
    ///
    /// The output is the `n × rep_dim` representation, or `n × classes`
    /// logits when `with_head` is set.
    pub fn forward(&self, batch: &Tensor<T>, with_head: bool) -> Result<(Tensor<T>, Tape<'_, T>)> {
        let (out, tape) = self.run(batch, with_head, true)?;
        Ok((out, tape.expect("recording run returns a tape")))
    }

    /// Representations only, without recording a tape.
    pub fn represent(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(batch, false, false)?.0)
    }

    /// Logits only, without recording a tape.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(batch, true, false)?.0)
    }

    fn run(&self, batch: &Tensor<T>, with_head: bool, record: bool) -> Result<(Tensor<T>, Option<Tape<'_, T>>)> {
        let n = self.check_batch(batch)?;
        if with_head && self.head.is_none() {
            return Err(Error::MissingHead);
        }
        let mut records = Vec::with_capacity(self.layers.len());
        let rep = match self.arch.kind {
            ArchKind::ConvNet3 => {
                let (mut c, mut h, mut w) = (self.arch.input.channels, self.arch.input.height, self.arch.input.width);
                let mut x = batch.data().to_vec();
                for layer in &self.layers {
                    let d = ConvDims { n, cin: c, cout: self.arch.width, h, w };
                    let mut y = layers::conv_forward(&x, layer.weight.data(), layer.bias.data(), &d);
                    let inv_std = layers::instance_norm_forward(&mut y, n * d.cout, h * w);
                    let pooled = layers::relu_pool_forward(&y, n * d.cout, h, w);
                    if record {
                        records.push(Record::Conv { input: x, normalized: y, inv_std, dims: d });
                    }
                    x = pooled;
                    c = d.cout;
                    h /= 2;
                    w /= 2;
                }
                x
            }
            ArchKind::Mlp2 => {
                let mut x = batch.data().to_vec();
                let mut din = self.arch.input.len();
                for layer in &self.layers {
                    let dout = layer.weight.shape()[0];
                    let pre = layers::linear_forward(&x, layer.weight.data(), layer.bias.data(), n, din, dout);
                    let mut act = pre.clone();
                    layers::relu_in_place(&mut act);
                    if record {
                        records.push(Record::Dense { input: x, pre, n, din, dout });
                    }
                    x = act;
                    din = dout;
                }
                x
            }
        };
        let rep_dim = self.arch.rep_dim();
        let (out, head_input) = match (&self.head, with_head) {
            (Some(head), true) => {
                let classes = head.weight.shape()[0];
                let logits = layers::linear_forward(&rep, head.weight.data(), head.bias.data(), n, rep_dim, classes);
                (Tensor::from_parts_unchecked(vec![n, classes], logits), Some(rep))
            }
            _ => (Tensor::from_parts_unchecked(vec![n, rep_dim], rep), None),
        };
        out.ensure_finite("encoder forward")?;
        let tape = record.then(|| Tape {
            params: self,
            records,
            head_input,
            out_shape: out.shape().to_vec(),
            in_shape: batch.shape().to_vec(),
        });
        Ok((out, tape))
    }
}

#[derive(Debug)]
enum Record<T> {
    Conv { input: Vec<T>, normalized: Vec<T>, inv_std: Vec<T>, dims: ConvDims },
    Dense { input: Vec<T>, pre: Vec<T>, n: usize, din: usize, dout: usize },
}

/// Activations of one forward call.
///
/// Backward consumes the tape, so a tape can be replayed at most once:
///
/// ```compile_fail
/// # use m3d_core::encoder::*;
/// # use m3d_core::numerics::*;
/// let arch = EncoderArch::mlp2(InputShape::new(1, 1, 1), 2);
/// let params = init_encoder(&arch, &RngState::new(0)).unwrap();
/// let x = Tensor::zeros([1, 1, 1, 1]);
/// let (out, tape) = params.forward(&x, false).unwrap();
/// let _ = tape.backward_inputs(&out);
/// let _ = tape.backward_inputs(&out);
/// ```
#[derive(Debug)]
pub struct Tape<'p, T: Scalar = f64> {
    params: &'p EncoderParams<T>,
    records: Vec<Record<T>>,
    head_input: Option<Vec<T>>,
    out_shape: Vec<usize>,
    in_shape: Vec<usize>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    /// Gradient of `sum(grad_out ⊙ output)` w.r.t. the input batch.
    pub fn backward_inputs(self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (gin, _) = self.backward(grad_out, true, false)?;
        Ok(gin.expect("input gradient requested"))
    }

    /// Gradient w.r.t. every parameter tensor.
    pub fn backward_weights(self, grad_out: &Tensor<T>) -> Result<ParamGrads<T>> {
        let (_, grads) = self.backward(grad_out, false, true)?;
        Ok(grads.expect("parameter gradients requested"))
    }

    /// Both gradients from one replay.
    pub fn backward_all(self, grad_out: &Tensor<T>) -> Result<(Tensor<T>, ParamGrads<T>)> {
        let (gin, grads) = self.backward(grad_out, true, true)?;
        Ok((gin.expect("requested"), grads.expect("requested")))
    }

    fn backward(
        self,
        grad_out: &Tensor<T>,
        want_input: bool,
        want_params: bool,
    ) -> Result<(Option<Tensor<T>>, Option<ParamGrads<T>>)> {
        if grad_out.shape() != self.out_shape.as_slice() {
            return Err(Error::shape(format!(
                "gradient shape {:?} does not match forward output {:?}",
                grad_out.shape(),
                self.out_shape
            )));
        }
        let params = self.params;
        let n = self.in_shape[0];
        let mut grads = want_params.then(|| params.zeros_like());
        let rep_dim = params.arch.rep_dim();

        let mut g: Vec<T> = match (&self.head_input, &params.head) {
            (Some(rep), Some(head)) => {
                let classes = head.weight.shape()[0];
                let (gx, gw, gb) = layers::linear_backward(
                    rep,
                    head.weight.data(),
                    grad_out.data(),
                    n,
                    rep_dim,
                    classes,
                    true,
                    want_params,
                );
                if let Some(gr) = grads.as_mut() {
                    let h = gr.head.as_mut().expect("head present");
                    h.weight.data_mut().copy_from_slice(&gw);
                    h.bias.data_mut().copy_from_slice(&gb);
                }
                gx
            }
            _ => grad_out.data().to_vec(),
        };

        for (idx, rec) in self.records.into_iter().enumerate().rev() {
            let need_input = want_input || idx > 0;
            let layer = &params.layers[idx];
            match rec {
                Record::Conv { input, normalized, inv_std, dims } => {
                    let planes = dims.n * dims.cout;
                    let hw = dims.h * dims.w;
                    let mut gy = layers::relu_pool_backward(&g, &normalized, planes, dims.h, dims.w);
                    layers::instance_norm_backward(&mut gy, &normalized, &inv_std, hw);
                    let (gx, gw, gb) = layers::conv_backward(
                        &input,
                        layer.weight.data(),
                        &gy,
                        &dims,
                        need_input,
                        want_params,
                    );
                    store(&mut grads, idx, gw, gb);
                    g = gx;
                }
                Record::Dense { input, pre, n, din, dout } => {
                    layers::relu_mask(&mut g, &pre);
                    let (gx, gw, gb) = layers::linear_backward(
                        &input,
                        layer.weight.data(),
                        &g,
                        n,
                        din,
                        dout,
                        need_input,
                        want_params,
                    );
                    store(&mut grads, idx, gw, gb);
                    g = gx;
                }
            }
        }
        let gin = if want_input {
            let t = Tensor::from_parts_unchecked(self.in_shape, g);
            t.ensure_finite("encoder backward")?;
            Some(t)
        } else {
            None
        };
        Ok((gin, grads))
    }
}

fn store<T: Scalar>(grads: &mut Option<ParamGrads<T>>, idx: usize, gw: Vec<T>, gb: Vec<T>) {
    if let Some(gr) = grads.as_mut() {
        gr.layers[idx].weight.data_mut().copy_from_slice(&gw);
        gr.layers[idx].bias.data_mut().copy_from_slice(&gb);
    }
}
