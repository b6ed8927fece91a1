//! Encoder / projector / classifier network with exact gradients.
//!
//! The encoder maps an input row to the latent `z`; the projector maps `z`
//! to the embedding used by the cross-correlation loss; the classifier is a
//! single linear layer on the latent of the undistorted input. The encoder
//! weights are shared by all three passes of a joint step.

pub mod checkpoint;
pub mod layers;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use layers::{Cache, Conv2d, Dense, Layer, MaxPool2d, Shape};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense { units: usize },
    Conv { filters: usize, kernel: usize },
    MaxPool { size: usize },
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    /// `(height, width, channels)` of input images.
    pub input: (usize, usize, usize),
    pub encoder: Vec<LayerSpec>,
    pub projector: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl ArchSpec {
    /// `[D → hidden → latent]` ReLU encoder with a `[latent → proj_hidden → proj_dim]`
    /// projector. `proj_dim == 0` makes the projector the identity.
    pub fn mlp(
        input: (usize, usize, usize),
        hidden: usize,
        latent: usize,
        proj_hidden: usize,
        proj_dim: usize,
        num_classes: usize,
    ) -> Self {
        ArchSpec {
            input,
            encoder: vec![
                LayerSpec::Dense { units: hidden },
                LayerSpec::Relu,
                LayerSpec::Dense { units: latent },
            ],
            projector: projector_spec(proj_hidden, proj_dim),
            num_classes,
        }
    }

    /// Two conv + ReLU + 2×2 max-pool blocks followed by a dense layer to the latent.
    pub fn small_conv(
        input: (usize, usize, usize),
        latent: usize,
        proj_hidden: usize,
        proj_dim: usize,
        num_classes: usize,
    ) -> Self {
        ArchSpec {
            input,
            encoder: vec![
                LayerSpec::Conv { filters: 8, kernel: 5 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv { filters: 16, kernel: 5 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Dense { units: latent },
            ],
            projector: projector_spec(proj_hidden, proj_dim),
            num_classes,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }
}

fn projector_spec(hidden: usize, out: usize) -> Vec<LayerSpec> {
    match (hidden, out) {
        (_, 0) => Vec::new(),
        (0, out) => vec![LayerSpec::Dense { units: out }],
        (hidden, out) => vec![
            LayerSpec::Dense { units: hidden },
            LayerSpec::Relu,
            LayerSpec::Dense { units: out },
        ],
    }
}

fn uniform(rows: usize, cols: usize, limit: f64, r: &mut rng::Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-limit..limit))
}

/// He-uniform when the next layer is a ReLU, Glorot-uniform otherwise.
fn init_limit(fan_in: usize, fan_out: usize, relu_next: bool) -> f64 {
    if relu_next {
        (6.0 / fan_in as f64).sqrt()
    } else {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
    pub input: Shape,
    pub output: Shape,
}

/// Per-layer caches recorded by [`Sequential::forward`].
#[derive(Debug, Clone)]
pub struct Tape(Vec<Cache>);

impl Sequential {
    fn build(specs: &[LayerSpec], input: Shape, r: &mut rng::Rng, part: &str) -> Result<Self> {
        let mut shape = input;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let relu_next = matches!(specs.get(i + 1), Some(LayerSpec::Relu));
            let bad = |msg: String| Error::config(format!("arch.{part}[{i}]"), msg);
            let layer = match *spec {
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(bad("dense layer needs units > 0".into()));
                    }
                    let fan_in = shape.size();
                    let mut d = Dense::zeros(fan_in, units);
                    d.weight = uniform(units, fan_in, init_limit(fan_in, units, relu_next), r);
                    shape = Shape::Flat(units);
                    Layer::Dense(d)
                }
                LayerSpec::Conv { filters, kernel } => {
                    let Shape::Volume { c, h, w } = shape else {
                        return Err(bad("convolution needs a spatial input".into()));
                    };
                    if filters == 0 || kernel == 0 || kernel > h || kernel > w {
                        return Err(bad(format!("kernel {kernel} / filters {filters} invalid for {h}x{w} input")));
                    }
                    let mut conv = Conv2d::zeros((c, h, w), filters, kernel);
                    let fan_in = c * kernel * kernel;
                    let fan_out = filters * kernel * kernel;
                    conv.weight = uniform(filters, fan_in, init_limit(fan_in, fan_out, relu_next), r);
                    let (oh, ow) = conv.out_hw();
                    shape = Shape::Volume { c: filters, h: oh, w: ow };
                    Layer::Conv2d(conv)
                }
                LayerSpec::MaxPool { size } => {
                    let Shape::Volume { c, h, w } = shape else {
                        return Err(bad("pooling needs a spatial input".into()));
                    };
                    if size == 0 || size > h || size > w {
                        return Err(bad(format!("pool size {size} invalid for {h}x{w} input")));
                    }
                    let pool = MaxPool2d { channels: c, in_h: h, in_w: w, size };
                    let (oh, ow) = pool.out_hw();
                    shape = Shape::Volume { c, h: oh, w: ow };
                    Layer::MaxPool2d(pool)
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Tanh => Layer::Tanh,
            };
            layers.push(layer);
        }
        Ok(Sequential { layers, input, output: shape })
    }

    pub fn out_dim(&self) -> usize {
        self.output.size()
    }

    fn check_input(&self, x: &Array2<f64>, part: &str) -> Result<()> {
        if x.ncols() != self.input.size() {
            return Err(Error::Consistency(format!(
                "{part} expects {} features per row, got {}",
                self.input.size(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn check_finite(y: &Array2<f64>, part: &str, index: usize, layer: &Layer) -> Result<()> {
        if y.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!(
                "{part} layer {index} ({}) produced non-finite activations",
                layer.kind()
            )))
        }
    }

    pub fn forward(&self, x: &Array2<f64>, part: &str) -> Result<(Array2<f64>, Tape)> {
        self.check_input(x, part)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = layer.forward(&h);
            Self::check_finite(&y, part, i, layer)?;
            caches.push(cache);
            h = y;
        }
        Ok((h, Tape(caches)))
    }

    pub fn infer(&self, x: &Array2<f64>, part: &str) -> Result<Array2<f64>> {
        self.check_input(x, part)?;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.infer(&h);
            Self::check_finite(&h, part, i, layer)?;
        }
        Ok(h)
    }

    pub fn backward(&self, tape: &Tape, dy: &Array2<f64>, grads: &mut Sequential) -> Result<Array2<f64>> {
        if tape.0.len() != self.layers.len() {
            return Err(Error::Usage("tape does not belong to this network".into()));
        }
        let mut g = dy.clone();
        for ((layer, cache), grad) in self.layers.iter().zip(&tape.0).zip(&mut grads.layers).rev() {
            g = layer.backward(cache, &g, grad)?;
        }
        Ok(g)
    }

    fn zeros_like(&self) -> Sequential {
        Sequential {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
            input: self.input,
            output: self.output,
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: ArchSpec,
    pub encoder: Sequential,
    pub projector: Sequential,
    pub classifier: Dense,
}

/// A flat, named view of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Network {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn init(arch: &ArchSpec, seed: u64) -> Result<Self> {
        let (h, w, c) = arch.input;
        if h * w * c == 0 {
            return Err(Error::config("arch.input", "input dimensions must be positive"));
        }
        if arch.num_classes < 2 {
            return Err(Error::config("arch.num_classes", "need at least 2 classes"));
        }
        if arch.encoder.is_empty() {
            return Err(Error::config("arch.encoder", "encoder needs at least one layer"));
        }
        let mut r = rng::stream(seed, "init", &[]);
        let input = if h == 1 && w == 1 {
            Shape::Flat(c)
        } else {
            Shape::Volume { c, h, w }
        };
        let encoder = Sequential::build(&arch.encoder, input, &mut r, "encoder")?;
        let latent = encoder.out_dim();
        let projector = Sequential::build(&arch.projector, Shape::Flat(latent), &mut r, "projector")?;
        let mut classifier = Dense::zeros(latent, arch.num_classes);
        classifier.weight = uniform(
            arch.num_classes,
            latent,
            init_limit(latent, arch.num_classes, false),
            &mut r,
        );
        Ok(Network {
            arch: arch.clone(),
            encoder,
            projector,
            classifier,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn projection_dim(&self) -> usize {
        self.projector.out_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.outputs()
    }

    pub fn encode(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.encoder.infer(x, "encoder")
    }

    pub fn project(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        self.projector.infer(z, "projector")
    }

    pub fn logits(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.latent_dim() {
            return Err(Error::Consistency(format!(
                "classifier expects latent of size {}, got {}",
                self.latent_dim(),
                z.ncols()
            )));
        }
        let y = self.classifier.forward(z);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("classifier produced non-finite logits".into()));
        }
        Ok(y)
    }

    pub fn classify(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(softmax(&self.logits(z)?))
    }

    /// All parameters with the same shapes, set to zero.
    pub fn zeros_like(&self) -> Network {
        Network {
            arch: self.arch.clone(),
            encoder: self.encoder.zeros_like(),
            projector: self.projector.zeros_like(),
            classifier: Dense::zeros(self.classifier.inputs(), self.classifier.outputs()),
        }
    }

    fn param_arrays(&self) -> Vec<(String, &Array2<f64>, &ndarray::Array1<f64>)> {
        let mut out = Vec::new();
        for (part, seq) in [("encoder", &self.encoder), ("projector", &self.projector)] {
            for (i, layer) in seq.layers.iter().enumerate() {
                match layer {
                    Layer::Dense(d) => out.push((format!("{part}.{i}"), &d.weight, &d.bias)),
                    Layer::Conv2d(c) => out.push((format!("{part}.{i}"), &c.weight, &c.bias)),
                    _ => {}
                }
            }
        }
        out.push(("classifier".to_string(), &self.classifier.weight, &self.classifier.bias));
        out
    }

    fn param_arrays_mut(&mut self) -> Vec<(&mut Array2<f64>, &mut ndarray::Array1<f64>)> {
        let mut out = Vec::new();
        for seq in [&mut self.encoder, &mut self.projector] {
            for layer in seq.layers.iter_mut() {
                match layer {
                    Layer::Dense(d) => out.push((&mut d.weight, &mut d.bias)),
                    Layer::Conv2d(c) => out.push((&mut c.weight, &mut c.bias)),
                    _ => {}
                }
            }
        }
        out.push((&mut self.classifier.weight, &mut self.classifier.bias));
        out
    }

    /// Named parameter tensors in a fixed order. Convolution weights are
    /// reported as `filters × in_channels × k × k`.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        let conv_shapes: Vec<Option<Vec<usize>>> = [&self.encoder, &self.projector]
            .iter()
            .flat_map(|s| s.layers.iter())
            .filter_map(|l| match l {
                Layer::Conv2d(c) => Some(Some(vec![c.filters(), c.in_channels, c.kernel, c.kernel])),
                Layer::Dense(_) => Some(None),
                _ => None,
            })
            .chain(std::iter::once(None))
            .collect();
        for ((prefix, w, b), conv) in self.param_arrays().into_iter().zip(conv_shapes) {
            out.push(NamedTensor {
                name: format!("{prefix}.weight"),
                shape: conv.unwrap_or_else(|| w.shape().to_vec()),
                data: w.iter().copied().collect(),
            });
            out.push(NamedTensor {
                name: format!("{prefix}.bias"),
                shape: b.shape().to_vec(),
                data: b.to_vec(),
            });
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_arrays().iter().map(|(_, w, b)| w.len() + b.len()).sum()
    }

    /// Every parameter concatenated in [`Network::named_tensors`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, w, b) in self.param_arrays() {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Consistency(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for (w, b) in self.param_arrays_mut() {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.param_arrays()
            .iter()
            .all(|(_, w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }
}

/// Outputs of a joint forward pass.
#[derive(Debug, Clone)]
pub struct JointOutput {
    pub latent: Array2<f64>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    /// Projector embeddings of the two views, absent when no views were given.
    pub embeddings: Option<(Array2<f64>, Array2<f64>)>,
}

struct ViewTape {
    encoder: Tape,
    projector: Tape,
}

struct JointTape {
    encoder: Tape,
    latent: Array2<f64>,
    views: Option<(ViewTape, ViewTape)>,
}

/// One forward/backward round trip over the joint model.
pub struct JointSession<'a> {
    net: &'a Network,
    tape: Option<JointTape>,
}

impl<'a> JointSession<'a> {
    pub fn new(net: &'a Network) -> Self {
        JointSession { net, tape: None }
    }

    fn view_pass(&self, x: &Array2<f64>) -> Result<(Array2<f64>, ViewTape)> {
        let (z, encoder) = self.net.encoder.forward(x, "encoder")?;
        let (p, projector) = self.net.projector.forward(&z, "projector")?;
        Ok((p, ViewTape { encoder, projector }))
    }

    /// Classifies `x` and, when `views` is given, embeds both distorted views.
    pub fn forward(&mut self, x: &Array2<f64>, views: Option<(&Array2<f64>, &Array2<f64>)>) -> Result<JointOutput> {
        let (latent, encoder) = self.net.encoder.forward(x, "encoder")?;
        let logits = self.net.logits(&latent)?;
        let probs = softmax(&logits);
        let (embeddings, view_tapes) = match views {
            Some((v1, v2)) => {
                if v1.nrows() != x.nrows() || v2.nrows() != x.nrows() {
                    return Err(Error::Consistency("view batches must align with the input batch".into()));
                }
                let (p1, t1) = self.view_pass(v1)?;
                let (p2, t2) = self.view_pass(v2)?;
                (Some((p1, p2)), Some((t1, t2)))
            }
            None => (None, None),
        };
        self.tape = Some(JointTape {
            encoder,
            latent: latent.clone(),
            views: view_tapes,
        });
        Ok(JointOutput {
            latent,
            logits,
            probs,
            embeddings,
        })
    }

    /// Gradients of the scalar loss given its partials with respect to the
    /// logits and (optionally) the two view embeddings. Consumes the tape.
    pub fn backward(
        &mut self,
        dlogits: &Array2<f64>,
        dembeddings: Option<(&Array2<f64>, &Array2<f64>)>,
    ) -> Result<Network> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::Usage("backward called before forward".into()))?;
        let net = self.net;
        let mut grads = net.zeros_like();
        let dz = net.classifier.backward(&tape.latent, dlogits, &mut grads.classifier);
        net.encoder.backward(&tape.encoder, &dz, &mut grads.encoder)?;
        match (tape.views, dembeddings) {
            (Some((t1, t2)), Some((d1, d2))) => {
                for (t, d) in [(t1, d1), (t2, d2)] {
                    let dz = net.projector.backward(&t.projector, d, &mut grads.projector)?;
                    net.encoder.backward(&t.encoder, &dz, &mut grads.encoder)?;
                }
            }
            (None, None) | (Some(_), None) => {}
            (None, Some(_)) => {
                return Err(Error::Usage("view gradients given but views were not forwarded".into()))
            }
        }
        Ok(grads)
    }
}
