//! Layers with explicit forward caches and reverse-mode backward passes.
//!
//! Activations are always `B × features` matrices; convolution and pooling
//! interpret each row as a channel-major `C × H × W` volume.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Feature layout of a layer's input or output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Volume { c: usize, h: usize, w: usize },
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Volume { c, h, w } => c * h * w,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

/// Valid (unpadded) stride-1 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    /// `filters × (in_channels · kernel · kernel)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Conv2d {
    pub fn zeros(input: (usize, usize, usize), filters: usize, kernel: usize) -> Self {
        let (in_channels, in_h, in_w) = input;
        Conv2d {
            in_channels,
            in_h,
            in_w,
            kernel,
            weight: Array2::zeros((filters, in_channels * kernel * kernel)),
            bias: Array1::zeros(filters),
        }
    }

    pub fn filters(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_hw(&self) -> (usize, usize) {
        (self.in_h + 1 - self.kernel, self.in_w + 1 - self.kernel)
    }

    fn im2col(&self, x: &Array2<f64>) -> Array2<f64> {
        let batch = x.nrows();
        let (oh, ow) = self.out_hw();
        let k = self.kernel;
        let plane = oh * ow;
        let mut cols = Array2::zeros((self.in_channels * k * k, batch * plane));
        for (b, row) in x.outer_iter().enumerate() {
            for ci in 0..self.in_channels {
                let src = ci * self.in_h * self.in_w;
                for ky in 0..k {
                    for kx in 0..k {
                        let r = (ci * k + ky) * k + kx;
                        let mut dst = cols.row_mut(r);
                        for oy in 0..oh {
                            let base = src + (oy + ky) * self.in_w + kx;
                            for ox in 0..ow {
                                dst[b * plane + oy * ow + ox] = row[base + ox];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let cols = self.im2col(x);
        let batch = x.nrows();
        let (oh, ow) = self.out_hw();
        let plane = oh * ow;
        let out = self.weight.dot(&cols);
        let filters = self.filters();
        let mut y = Array2::zeros((batch, filters * plane));
        for f in 0..filters {
            let bias = self.bias[f];
            let src = out.row(f);
            for b in 0..batch {
                let mut dst = y.row_mut(b);
                for p in 0..plane {
                    dst[f * plane + p] = src[b * plane + p] + bias;
                }
            }
        }
        (y, cols)
    }

    pub fn backward(&self, cols: &Array2<f64>, dy: &Array2<f64>, grad: &mut Conv2d) -> Array2<f64> {
        let batch = dy.nrows();
        let (oh, ow) = self.out_hw();
        let plane = oh * ow;
        let filters = self.filters();
        let mut dout = Array2::zeros((filters, batch * plane));
        for f in 0..filters {
            let mut dst = dout.row_mut(f);
            for b in 0..batch {
                let src = dy.row(b);
                for p in 0..plane {
                    dst[b * plane + p] = src[f * plane + p];
                }
            }
        }
        grad.weight += &dout.dot(&cols.t());
        grad.bias += &dout.sum_axis(Axis(1));
        let dcols = self.weight.t().dot(&dout);

        let k = self.kernel;
        let mut dx = Array2::zeros((batch, self.in_channels * self.in_h * self.in_w));
        for (b, mut row) in dx.outer_iter_mut().enumerate() {
            for ci in 0..self.in_channels {
                let dst = ci * self.in_h * self.in_w;
                for ky in 0..k {
                    for kx in 0..k {
                        let src = dcols.row((ci * k + ky) * k + kx);
                        for oy in 0..oh {
                            let base = dst + (oy + ky) * self.in_w + kx;
                            for ox in 0..ow {
                                row[base + ox] += src[b * plane + oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Non-overlapping max pooling; trailing rows/columns that do not fill a
/// window are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub size: usize,
}

impl MaxPool2d {
    pub fn out_hw(&self) -> (usize, usize) {
        (self.in_h / self.size, self.in_w / self.size)
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Vec<usize>) {
        let (oh, ow) = self.out_hw();
        let s = self.size;
        let batch = x.nrows();
        let out_len = self.channels * oh * ow;
        let mut y = Array2::zeros((batch, out_len));
        let mut argmax = Vec::with_capacity(batch * out_len);
        for (b, row) in x.outer_iter().enumerate() {
            for c in 0..self.channels {
                let base = c * self.in_h * self.in_w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = base + oy * s * self.in_w + ox * s;
                        for dy in 0..s {
                            for dx in 0..s {
                                let idx = base + (oy * s + dy) * self.in_w + ox * s + dx;
                                if row[idx] > row[best] {
                                    best = idx;
                                }
                            }
                        }
                        y[[b, (c * oh + oy) * ow + ox]] = row[best];
                        argmax.push(best);
                    }
                }
            }
        }
        (y, argmax)
    }

    pub fn backward(&self, argmax: &[usize], dy: &Array2<f64>) -> Array2<f64> {
        let batch = dy.nrows();
        let out_len = dy.ncols();
        let mut dx = Array2::zeros((batch, self.channels * self.in_h * self.in_w));
        for b in 0..batch {
            for j in 0..out_len {
                dx[[b, argmax[b * out_len + j]]] += dy[[b, j]];
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    MaxPool2d(MaxPool2d),
    Relu,
    Tanh,
}

/// Intermediates a layer needs for its backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Array2<f64>),
    Columns(Array2<f64>),
    Argmax(Vec<usize>),
    Output(Array2<f64>),
}

impl Layer {
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Cache) {
        match self {
            Layer::Dense(d) => (d.forward(x), Cache::Input(x.clone())),
            Layer::Conv2d(c) => {
                let (y, cols) = c.forward(x);
                (y, Cache::Columns(cols))
            }
            Layer::MaxPool2d(p) => {
                let (y, idx) = p.forward(x);
                (y, Cache::Argmax(idx))
            }
            Layer::Relu => (x.mapv(|v| v.max(0.0)), Cache::Input(x.clone())),
            Layer::Tanh => {
                let y = x.mapv(f64::tanh);
                (y.clone(), Cache::Output(y))
            }
        }
    }

    /// Forward pass without recording intermediates.
    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Conv2d(c) => c.forward(x).0,
            Layer::MaxPool2d(p) => p.forward(x).0,
            Layer::Relu => x.mapv(|v| v.max(0.0)),
            Layer::Tanh => x.mapv(f64::tanh),
        }
    }

    pub fn backward(&self, cache: &Cache, dy: &Array2<f64>, grad: &mut Layer) -> Result<Array2<f64>> {
        let mismatch = || Error::Usage("layer cache does not match layer kind".into());
        Ok(match (self, cache, grad) {
            (Layer::Dense(d), Cache::Input(x), Layer::Dense(g)) => d.backward(x, dy, g),
            (Layer::Conv2d(c), Cache::Columns(cols), Layer::Conv2d(g)) => c.backward(cols, dy, g),
            (Layer::MaxPool2d(p), Cache::Argmax(idx), _) => p.backward(idx, dy),
            (Layer::Relu, Cache::Input(x), _) => {
                let mut dx = dy.clone();
                dx.zip_mut_with(x, |g, &v| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                });
                dx
            }
            (Layer::Tanh, Cache::Output(y), _) => {
                let mut dx = dy.clone();
                dx.zip_mut_with(y, |g, &t| *g *= 1.0 - t * t);
                dx
            }
            _ => return Err(mismatch()),
        })
    }

    /// The same layer with every parameter set to zero.
    pub fn zeros_like(&self) -> Layer {
        match self {
            Layer::Dense(d) => Layer::Dense(Dense::zeros(d.inputs(), d.outputs())),
            Layer::Conv2d(c) => {
                Layer::Conv2d(Conv2d::zeros((c.in_channels, c.in_h, c.in_w), c.filters(), c.kernel))
            }
            other => other.clone(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv",
            Layer::MaxPool2d(_) => "maxpool",
            Layer::Relu => "relu",
            Layer::Tanh => "tanh",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dense_square_gradient() {
        // y = w·x with x = 1, L = y² / 1 → dL/dw = 2·w = 6 at w = 3
        let mut d = Dense::zeros(1, 1);
        d.weight[[0, 0]] = 3.0;
        let x = array![[1.0]];
        let y = d.forward(&x);
        let dy = y.mapv(|v| 2.0 * v);
        let mut g = Dense::zeros(1, 1);
        d.backward(&x, &dy, &mut g);
        assert_eq!(g.weight[[0, 0]], 6.0);
        assert_eq!(g.bias[0], 6.0);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut c = Conv2d::zeros((2, 4, 5), 3, 2);
        for (i, w) in c.weight.iter_mut().enumerate() {
            *w = (i as f64 * 0.37).sin();
        }
        c.bias = array![0.1, -0.2, 0.3];
        let x = Array2::from_shape_fn((2, 40), |(b, i)| ((b * 40 + i) as f64 * 0.11).cos());
        let (y, _) = c.forward(&x);
        let (oh, ow) = c.out_hw();
        for b in 0..2 {
            for f in 0..3 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = c.bias[f];
                        for ci in 0..2 {
                            for ky in 0..2 {
                                for kx in 0..2 {
                                    acc += c.weight[[f, (ci * 2 + ky) * 2 + kx]]
                                        * x[[b, ci * 20 + (oy + ky) * 5 + ox + kx]];
                                }
                            }
                        }
                        assert!((y[[b, (f * oh + oy) * ow + ox]] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_max() {
        let p = MaxPool2d { channels: 1, in_h: 2, in_w: 3, size: 2 };
        let x = array![[1.0, 5.0, 9.0, 2.0, 3.0, 9.0]];
        let (y, idx) = p.forward(&x);
        assert_eq!(y, array![[5.0]]);
        let dx = p.backward(&idx, &array![[2.0]]);
        assert_eq!(dx, array![[0.0, 2.0, 0.0, 0.0, 0.0, 0.0]]);
    }
}
