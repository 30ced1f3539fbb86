//! Differentiable layers with explicit forward and backward passes.
//!
//! Image tensors are `[N, C, H, W]`; dense tensors are `[N, features]`.

use ndarray::{Array2, ArrayView2, Axis, ShapeBuilder};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{describe, Tensor};
use crate::Scalar;

/// Per-parameter gradients, aligned with [`Layer::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape<T> {
    pub grads: Vec<Tensor<T>>,
}

impl<T: Scalar> GradientTape<T> {
    pub fn empty() -> Self {
        GradientTape { grads: Vec::new() }
    }

    pub fn zeroed_like(layer: &Layer<T>) -> Self {
        GradientTape {
            grads: layer.params().iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(Tensor::fill_zero);
    }
}

/// Sliding-window geometry shared by convolution and its transpose.
#[derive(Debug, Clone, Copy)]
struct Window {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Window {
    fn new(channels: usize, height: usize, width: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<Self> {
        if height + 2 * pad < kh || width + 2 * pad < kw || stride == 0 {
            return None;
        }
        Some(Window {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            pad,
            out_h: (height + 2 * pad - kh) / stride + 1,
            out_w: (width + 2 * pad - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source pixel for patch row `(c, dy, dx)` at output position `(oy, ox)`.
    #[inline]
    fn source(&self, dy: usize, dx: usize, oy: usize, ox: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + dy) as isize - self.pad as isize;
        let x = (ox * self.stride + dx) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }

    fn im2col<T: Scalar>(&self, image: &[T]) -> Array2<T> {
        let mut cols = Array2::zeros((self.patch_len(), self.positions()));
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for dy in 0..self.kh {
                for dx in 0..self.kw {
                    let row = (c * self.kh + dy) * self.kw + dx;
                    let mut dst = cols.row_mut(row);
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            if let Some((y, x)) = self.source(dy, dx, oy, ox) {
                                dst[oy * self.out_w + ox] = plane[y * self.width + x];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-adds columns back onto an image (adjoint of `im2col`).
    fn col2im<T: Scalar>(&self, cols: ArrayView2<'_, T>, image: &mut [T]) {
        for c in 0..self.channels {
            let base = c * self.height * self.width;
            for dy in 0..self.kh {
                for dx in 0..self.kw {
                    let row = (c * self.kh + dy) * self.kw + dx;
                    let src = cols.row(row);
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            if let Some((y, x)) = self.source(dy, dx, oy, ox) {
                                image[base + y * self.width + x] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn fan_in_bound(fan_in: usize) -> f64 {
    (3.0 / fan_in.max(1) as f64).sqrt()
}

/// 2-D convolution. Weight `[out, in, kh, kw]`, bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, rng: &mut R) -> Self {
        let bound = fan_in_bound(in_ch * kernel * kernel);
        Conv2d {
            weight: Tensor::uniform(&[out_ch, in_ch, kernel, kernel], bound, rng),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            padding,
        }
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.weight.shape();
        (s[0], s[1], s[2], s[3])
    }

    fn window(&self, input: &Tensor<T>) -> Result<Window> {
        let (_, in_ch, kh, kw) = self.dims();
        let s = input.shape();
        if s.len() != 4 || s[1] != in_ch {
            return Err(Error::shape("conv layer input", format!("[N, {in_ch}, H, W]"), describe(s)));
        }
        Window::new(in_ch, s[2], s[3], kh, kw, self.stride, self.padding)
            .ok_or_else(|| Error::shape("conv layer input", format!("spatial size >= kernel {kh}x{kw}"), describe(s)))
    }

    fn weight_matrix(&self) -> ArrayView2<'_, T> {
        let (out_ch, in_ch, kh, kw) = self.dims();
        let k = in_ch * kh * kw;
        ArrayView2::from_shape((out_ch, k).strides((k, 1)), self.weight.data()).expect("weight layout")
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (out_ch, in_ch, kh, kw) = self.dims();
        if input.len() != 4 || input[1] != in_ch {
            return Err(Error::shape("conv layer input", format!("[N, {in_ch}, H, W]"), describe(input)));
        }
        let w = Window::new(in_ch, input[2], input[3], kh, kw, self.stride, self.padding)
            .ok_or_else(|| Error::shape("conv layer input", "spatial size >= kernel", describe(input)))?;
        Ok(vec![input[0], out_ch, w.out_h, w.out_w])
    }

    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let win = self.window(input)?;
        let (out_ch, ..) = self.dims();
        let n = input.batch();
        let wm = self.weight_matrix();
        let per = out_ch * win.positions();
        let mut out = Vec::with_capacity(n * per);
        for i in 0..n {
            let cols = win.im2col(input.sample(i));
            let mut y = wm.dot(&cols);
            for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(self.bias.data()) {
                row.mapv_inplace(|v| v + b);
            }
            out.extend(y.iter().copied());
        }
        Tensor::new(vec![n, out_ch, win.out_h, win.out_w], out)
    }

    fn backward(&self, input: &Tensor<T>, upstream: &Tensor<T>) -> Result<(Tensor<T>, GradientTape<T>)> {
        let win = self.window(input)?;
        let (out_ch, in_ch, kh, kw) = self.dims();
        let n = input.batch();
        upstream.expect_shape("conv layer upstream gradient", &[n, out_ch, win.out_h, win.out_w])?;
        let wm = self.weight_matrix();
        let mut dw = Array2::<T>::zeros((out_ch, in_ch * kh * kw));
        let mut db = vec![T::zero(); out_ch];
        let mut dx = Tensor::zeros(input.shape());
        let in_len = input.sample_len();
        for i in 0..n {
            let cols = win.im2col(input.sample(i));
            let g = ArrayView2::from_shape((out_ch, win.positions()).strides((win.positions(), 1)), upstream.sample(i))
                .expect("upstream layout");
            dw += &g.dot(&cols.t());
            for (o, row) in g.axis_iter(Axis(0)).enumerate() {
                db[o] += row.sum();
            }
            let dcols = wm.t().dot(&g);
            win.col2im(dcols.view(), &mut dx.data_mut()[i * in_len..(i + 1) * in_len]);
        }
        let tape = GradientTape {
            grads: vec![
                Tensor::new(self.weight.shape().to_vec(), dw.iter().copied().collect())?,
                Tensor::new(vec![out_ch], db)?,
            ],
        };
        Ok((dx, tape))
    }
}

/// Transposed convolution, the adjoint of [`Conv2d`] with the same window.
/// Weight `[in, out, kh, kw]`, bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        rng: &mut R,
    ) -> Self {
        let bound = fan_in_bound(in_ch * kernel * kernel);
        ConvTranspose2d {
            weight: Tensor::uniform(&[in_ch, out_ch, kernel, kernel], bound, rng),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            padding,
            output_padding,
        }
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.weight.shape();
        (s[0], s[1], s[2], s[3])
    }

    /// Window over the *output* image; its `out_h x out_w` equals the input size.
    fn window(&self, input: &[usize]) -> Result<Window> {
        let (in_ch, out_ch, kh, kw) = self.dims();
        if input.len() != 4 || input[1] != in_ch {
            return Err(Error::shape("deconv layer input", format!("[N, {in_ch}, H, W]"), describe(input)));
        }
        let (h, w) = (input[2], input[3]);
        if h == 0 || w == 0 {
            return Err(Error::shape("deconv layer input", "non-empty spatial size", describe(input)));
        }
        let full_h = (h - 1) * self.stride + kh + self.output_padding;
        let full_w = (w - 1) * self.stride + kw + self.output_padding;
        if full_h < 2 * self.padding + 1 || full_w < 2 * self.padding + 1 {
            return Err(Error::shape("deconv layer input", "output larger than padding", describe(input)));
        }
        let win = Window::new(out_ch, full_h - 2 * self.padding, full_w - 2 * self.padding, kh, kw, self.stride, self.padding)
            .ok_or_else(|| Error::shape("deconv layer input", "consistent window", describe(input)))?;
        if (win.out_h, win.out_w) != (h, w) {
            return Err(Error::invalid(format!(
                "deconv output_padding {} must be smaller than stride {}",
                self.output_padding, self.stride
            )));
        }
        Ok(win)
    }

    fn weight_matrix(&self) -> ArrayView2<'_, T> {
        let (in_ch, out_ch, kh, kw) = self.dims();
        let k = out_ch * kh * kw;
        ArrayView2::from_shape((in_ch, k).strides((k, 1)), self.weight.data()).expect("weight layout")
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let win = self.window(input)?;
        Ok(vec![input[0], win.channels, win.height, win.width])
    }

    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let win = self.window(input.shape())?;
        let (in_ch, out_ch, ..) = self.dims();
        let n = input.batch();
        let wm = self.weight_matrix();
        let plane = win.height * win.width;
        let mut out = Tensor::zeros(&[n, out_ch, win.height, win.width]);
        let out_len = out_ch * plane;
        for i in 0..n {
            let x = ArrayView2::from_shape((in_ch, win.positions()).strides((win.positions(), 1)), input.sample(i))
                .expect("input layout");
            let cols = wm.t().dot(&x);
            let dst = &mut out.data_mut()[i * out_len..(i + 1) * out_len];
            win.col2im(cols.view(), dst);
            for (c, &b) in self.bias.data().iter().enumerate() {
                dst[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += b);
            }
        }
        Ok(out)
    }

    fn backward(&self, input: &Tensor<T>, upstream: &Tensor<T>) -> Result<(Tensor<T>, GradientTape<T>)> {
        let win = self.window(input.shape())?;
        let (in_ch, out_ch, kh, kw) = self.dims();
        let n = input.batch();
        upstream.expect_shape("deconv layer upstream gradient", &[n, out_ch, win.height, win.width])?;
        let wm = self.weight_matrix();
        let plane = win.height * win.width;
        let mut dw = Array2::<T>::zeros((in_ch, out_ch * kh * kw));
        let mut db = vec![T::zero(); out_ch];
        let mut dx = Vec::with_capacity(input.len());
        for i in 0..n {
            let g = upstream.sample(i);
            let gcols = win.im2col(g);
            let x = ArrayView2::from_shape((in_ch, win.positions()).strides((win.positions(), 1)), input.sample(i))
                .expect("input layout");
            dw += &x.dot(&gcols.t());
            for (c, d) in db.iter_mut().enumerate() {
                *d += g[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
            }
            dx.extend(wm.dot(&gcols).iter().copied());
        }
        let tape = GradientTape {
            grads: vec![
                Tensor::new(self.weight.shape().to_vec(), dw.iter().copied().collect())?,
                Tensor::new(vec![out_ch], db)?,
            ],
        };
        Ok((Tensor::new(input.shape().to_vec(), dx)?, tape))
    }
}

/// Fully-connected layer. Weight `[in, out]`, bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Dense {
            weight: Tensor::uniform(&[inputs, outputs], fan_in_bound(inputs), rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    /// `(inputs, outputs)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.weight.shape()[0], self.weight.shape()[1])
    }

    fn weight_matrix(&self) -> ArrayView2<'_, T> {
        let (i, o) = self.dims();
        ArrayView2::from_shape((i, o).strides((o, 1)), self.weight.data()).expect("weight layout")
    }

    fn check(&self, input: &[usize]) -> Result<()> {
        let (i, _) = self.dims();
        if input.len() != 2 || input[1] != i {
            return Err(Error::shape("dense layer input", format!("[N, {i}]"), describe(input)));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(input.shape())?;
        let mut y = input.as_rows().dot(&self.weight_matrix());
        let b = ndarray::ArrayView1::from(self.bias.data());
        y += &b;
        Ok(Tensor::from_matrix(&y))
    }

    pub fn backward(&self, input: &Tensor<T>, upstream: &Tensor<T>) -> Result<(Tensor<T>, GradientTape<T>)> {
        self.check(input.shape())?;
        let (_, o) = self.dims();
        upstream.expect_shape("dense layer upstream gradient", &[input.batch(), o])?;
        let g = upstream.as_rows();
        let dw = input.as_rows().t().dot(&g);
        let db = g.sum_axis(Axis(0));
        let dx = g.dot(&self.weight_matrix().t());
        let tape = GradientTape {
            grads: vec![Tensor::from_matrix(&dw), Tensor::new(vec![o], db.to_vec())?],
        };
        Ok((Tensor::from_matrix(&dx), tape))
    }
}

/// Row-wise softmax of `[N, k]` logits.
pub fn softmax_rows<T: Scalar>(logits: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Deconv(ConvTranspose2d<T>),
    Relu,
    /// `[N, ...] -> [N, prod(...)]`
    Flatten,
    /// `[N, C*H*W] -> [N, C, H, W]`
    Unflatten { channels: usize, height: usize, width: usize },
    Dense(Dense<T>),
    Softmax,
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Deconv(_) => "deconv",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
            Layer::Unflatten { .. } => "unflatten",
            Layer::Dense(_) => "dense",
            Layer::Softmax => "softmax",
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::Deconv(l) => vec![&l.weight, &l.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Deconv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv(l) => l.output_shape(input),
            Layer::Deconv(l) => l.output_shape(input),
            Layer::Dense(l) => {
                l.check(input)?;
                Ok(vec![input[0], l.dims().1])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Softmax => {
                if input.len() != 2 {
                    return Err(Error::shape("softmax layer input", "[N, k]", describe(input)));
                }
                Ok(input.to_vec())
            }
            Layer::Flatten => {
                if input.is_empty() {
                    return Err(Error::shape("flatten layer input", "[N, ...]", describe(input)));
                }
                Ok(vec![input[0], input[1..].iter().product()])
            }
            Layer::Unflatten { channels, height, width } => {
                let d = channels * height * width;
                if input.len() != 2 || input[1] != d {
                    return Err(Error::shape("unflatten layer input", format!("[N, {d}]"), describe(input)));
                }
                Ok(vec![input[0], *channels, *height, *width])
            }
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.forward(input),
            Layer::Deconv(l) => l.forward(input),
            Layer::Dense(l) => l.forward(input),
            Layer::Relu => Ok(input.map(|v| if v > T::zero() { v } else { T::zero() })),
            Layer::Softmax => {
                self.output_shape(input.shape())?;
                Ok(Tensor::from_matrix(&softmax_rows(input.as_rows())))
            }
            Layer::Flatten | Layer::Unflatten { .. } => {
                let shape = self.output_shape(input.shape())?;
                input.clone().reshape(shape)
            }
        }
    }

    /// Returns the gradient with respect to `input` and the parameter tape.
    pub fn backward(&self, input: &Tensor<T>, upstream: &Tensor<T>) -> Result<(Tensor<T>, GradientTape<T>)> {
        match self {
            Layer::Conv(l) => l.backward(input, upstream),
            Layer::Deconv(l) => l.backward(input, upstream),
            Layer::Dense(l) => l.backward(input, upstream),
            Layer::Relu => {
                upstream.expect_shape("relu layer upstream gradient", input.shape())?;
                let data = input
                    .data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                Ok((Tensor::new(input.shape().to_vec(), data)?, GradientTape::empty()))
            }
            Layer::Softmax => {
                self.output_shape(input.shape())?;
                upstream.expect_shape("softmax layer upstream gradient", input.shape())?;
                let y = softmax_rows(input.as_rows());
                let g = upstream.as_rows();
                let mut dx = &y * &g;
                for (mut row, yrow) in dx.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))) {
                    let dot = row.sum();
                    row.zip_mut_with(&yrow, |d, &yv| *d -= yv * dot);
                }
                Ok((Tensor::from_matrix(&dx), GradientTape::empty()))
            }
            Layer::Flatten | Layer::Unflatten { .. } => {
                let out = self.output_shape(input.shape())?;
                upstream.expect_shape(&format!("{} layer upstream gradient", self.kind()), &out)?;
                Ok((upstream.clone().reshape(input.shape().to_vec())?, GradientTape::empty()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_1x1_conv_passes_image_through() {
        let conv = Conv2d {
            weight: t(&[1, 1, 1, 1], &[1.0]),
            bias: t(&[1], &[0.0]),
            stride: 1,
            padding: 0,
        };
        let img = t(&[1, 1, 2, 3], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(Layer::Conv(conv).forward(&img).unwrap(), img);
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = t(&[1, 3], &[-1., 0., 2.]);
        assert_eq!(Layer::Relu.forward(&x).unwrap().data(), &[0., 0., 2.]);
    }

    #[test]
    fn ones_kernel_computes_window_sums() {
        // 1 2 3 / 4 5 6 / 7 8 9 with a 2x2 ones kernel
        let conv = Conv2d {
            weight: t(&[1, 1, 2, 2], &[1.; 4]),
            bias: t(&[1], &[0.0]),
            stride: 1,
            padding: 0,
        };
        let img = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let out = Layer::Conv(conv).forward(&img).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), &[12., 16., 24., 28.]);
    }

    #[test]
    fn relu_backward_masks() {
        let x = t(&[1, 2], &[-1., 2.]);
        let g = t(&[1, 2], &[5., 5.]);
        let (dx, tape) = Layer::Relu.backward(&x, &g).unwrap();
        assert_eq!(dx.data(), &[0., 5.]);
        assert!(tape.grads.is_empty());
    }

    #[test]
    fn identity_dense_passes_gradient() {
        let dense = Dense {
            weight: t(&[2, 2], &[1., 0., 0., 1.]),
            bias: t(&[2], &[0., 0.]),
        };
        let x = t(&[1, 2], &[0.3, -0.7]);
        let g = t(&[1, 2], &[1.5, 2.5]);
        let (dx, _) = Layer::Dense(dense).backward(&x, &g).unwrap();
        assert_eq!(dx, g);
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Layer::Conv(Conv2d::<f64>::new(3, 2, 3, 1, 1, &mut rng));
        let err = conv.forward(&Tensor::zeros(&[1, 1, 4, 4])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("conv") && msg.contains("[N, 3, H, W]"), "{msg}");
    }

    #[test]
    fn deconv_mirrors_strided_same_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Layer::Conv(Conv2d::<f64>::new(1, 4, 3, 2, 1, &mut rng));
        let deconv = Layer::Deconv(ConvTranspose2d::<f64>::new(4, 1, 3, 2, 1, 1, &mut rng));
        let x = Tensor::zeros(&[2, 1, 16, 16]);
        let h = conv.forward(&x).unwrap();
        assert_eq!(h.shape(), &[2, 4, 8, 8]);
        assert_eq!(deconv.forward(&h).unwrap().shape(), x.shape());
    }

    #[test]
    fn deconv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, deconv(y)> with shared weights and no bias
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::<f64>::new(2, 3, 3, 2, 1, &mut rng);
        let deconv = ConvTranspose2d {
            // [out, in, kh, kw] and [in', out', kh, kw] share one memory layout
            weight: Tensor::new(vec![3, 2, 3, 3], conv.weight.data().to_vec()).unwrap(),
            bias: Tensor::zeros(&[2]),
            stride: 2,
            padding: 1,
            output_padding: 0,
        };
        let x = Tensor::<f64>::uniform(&[1, 2, 7, 7], 1.0, &mut rng);
        let cx = Layer::Conv(conv).forward(&x).unwrap();
        let y = Tensor::<f64>::uniform(cx.shape(), 1.0, &mut rng);
        let dy = Layer::Deconv(deconv).forward(&y).unwrap();
        assert_eq!(dy.shape(), x.shape());
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = t(&[2, 3], &[1., 2., 3., -5., 0., 5.]);
        let y = Layer::Softmax.forward(&x).unwrap();
        for r in y.as_rows().axis_iter(Axis(0)) {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }
}
