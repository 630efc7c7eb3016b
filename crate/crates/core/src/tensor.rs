//! Dense `C×H×W` tensors and the numerical kernels the blender is built from.
//!
//! Storage is channel-major, then row, then column. Every operation returns a
//! new tensor; nothing mutates its inputs.

use std::fmt;
use std::iter::Sum;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating point element type. Implemented for `f32` and `f64`.
pub trait Real: Float + Default + Sum + fmt::Debug + fmt::Display + Send + Sync + 'static {
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    #[default]
    Double,
}

impl Precision {
    /// Dtype code used in the TFB1 header.
    pub fn code(self) -> u32 {
        match self {
            Precision::Single => 0,
            Precision::Double => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Precision::Single),
            1 => Some(Precision::Double),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial locations (`H·W`).
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Shape { channels, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::EmptyShape(shape));
        }
        if data.len() != shape.len() {
            return Err(Error::DataLength {
                shape,
                expected: shape.len(),
                actual: data.len(),
            });
        }
        Ok(Tensor3 { shape, data })
    }

    /// Panics on an empty shape; use [`Tensor3::from_vec`] for fallible construction.
    pub fn full(shape: Shape, value: T) -> Self {
        assert!(!shape.is_empty(), "empty shape {shape}");
        Tensor3 {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        assert!(!shape.is_empty(), "empty shape {shape}");
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for h in 0..shape.height {
                for w in 0..shape.width {
                    data.push(f(c, h, w));
                }
            }
        }
        Tensor3 { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, h: usize, w: usize) -> usize {
        (c * self.shape.height + h) * self.shape.width + w
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(c, h, w)]
    }

    /// Returns a copy with one element replaced.
    pub fn with_value(&self, flat: usize, value: T) -> Self {
        let mut out = self.clone();
        out.data[flat] = value;
        out
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor3 {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|x| x * factor)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.data.len() as f64)
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        ensure_same_shape(self.shape, other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor3<U> {
        Tensor3 {
            shape: self.shape,
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        elementwise(BinaryOp::Add, self, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        elementwise(BinaryOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        elementwise(BinaryOp::Mul, self, other)
    }
}

pub(crate) fn ensure_same_shape(a: Shape, b: Shape) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { left: a, right: b })
    }
}

pub fn elementwise<T: Real>(op: BinaryOp, a: &Tensor3<T>, b: &Tensor3<T>) -> Result<Tensor3<T>> {
    ensure_same_shape(a.shape, b.shape)?;
    let f: fn(T, T) -> T = match op {
        BinaryOp::Add => |x, y| x + y,
        BinaryOp::Sub => |x, y| x - y,
        BinaryOp::Mul => |x, y| x * y,
    };
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor3 {
        shape: a.shape,
        data,
    })
}

pub fn relu<T: Real>(a: &Tensor3<T>) -> Tensor3<T> {
    a.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Softmax across channels, independently at every spatial location.
pub fn channel_softmax<T: Real>(a: &Tensor3<T>) -> Tensor3<T> {
    let plane = a.shape.plane();
    let mut max = a.channel(0).to_vec();
    for c in 1..a.channels() {
        for (m, &x) in max.iter_mut().zip(a.channel(c)) {
            *m = m.max(x);
        }
    }
    let mut data: Vec<T> = Vec::with_capacity(a.data.len());
    let mut sum = vec![T::zero(); plane];
    for c in 0..a.channels() {
        for ((&x, &m), s) in a.channel(c).iter().zip(&max).zip(sum.iter_mut()) {
            let e = (x - m).exp();
            *s = *s + e;
            data.push(e);
        }
    }
    for chunk in data.chunks_exact_mut(plane) {
        for (v, &s) in chunk.iter_mut().zip(&sum) {
            *v = *v / s;
        }
    }
    Tensor3 {
        shape: a.shape,
        data,
    }
}

/// Stacks tensors along the channel axis.
pub fn concat_channels<T: Real>(parts: &[&Tensor3<T>]) -> Result<Tensor3<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Invalid("concat of zero tensors".into()))?;
    let mut channels = 0;
    for p in parts {
        if p.height() != first.height() || p.width() != first.width() {
            return Err(Error::ShapeMismatch {
                left: first.shape,
                right: p.shape,
            });
        }
        channels += p.channels();
    }
    let mut data = Vec::with_capacity(channels * first.shape.plane());
    for p in parts {
        data.extend_from_slice(&p.data);
    }
    Ok(Tensor3 {
        shape: first.shape.with_channels(channels),
        data,
    })
}

/// Cosine similarity of the two tensors flattened to vectors.
pub fn cosine_similarity<T: Real>(a: &Tensor3<T>, b: &Tensor3<T>) -> Result<T> {
    ensure_same_shape(a.shape, b.shape)?;
    let mut dot = T::zero();
    let mut aa = T::zero();
    let mut bb = T::zero();
    for (&x, &y) in a.data.iter().zip(&b.data) {
        dot = dot + x * y;
        aa = aa + x * x;
        bb = bb + y * y;
    }
    if aa == T::zero() || bb == T::zero() {
        return Err(Error::UndefinedSimilarity);
    }
    let cos = dot / (aa.sqrt() * bb.sqrt());
    // rounding can push |cos| a hair past 1
    Ok(cos.max(-T::one()).min(T::one()))
}

/// Square, odd-sized, stride-1 convolution layer.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer<T> {
    out_channels: usize,
    in_channels: usize,
    kernel: usize,
    /// `[out, in, k, k]`, row-major.
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T> fmt::Debug for ConvLayer<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ConvLayer({}->{}, {}x{})",
            self.in_channels, self.out_channels, self.kernel, self.kernel
        )
    }
}

impl<T: Real> ConvLayer<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if kernel != 1 && kernel != 3 {
            return Err(Error::Kernel(kernel));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Invalid("conv layer needs at least one channel".into()));
        }
        let expected = out_channels * in_channels * kernel * kernel;
        if weights.len() != expected {
            return Err(Error::DataLength {
                shape: Shape::new(out_channels, in_channels, kernel * kernel),
                expected,
                actual: weights.len(),
            });
        }
        if bias.len() != out_channels {
            return Err(Error::DataLength {
                shape: Shape::new(out_channels, 1, 1),
                expected: out_channels,
                actual: bias.len(),
            });
        }
        Ok(ConvLayer {
            out_channels,
            in_channels,
            kernel,
            weights,
            bias,
        })
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        Self::new(
            in_channels,
            out_channels,
            kernel,
            vec![T::zero(); out_channels * in_channels * kernel * kernel],
            vec![T::zero(); out_channels],
        )
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    /// Weights as a `[out, in, k·k]` tensor, the layout used on disk and on the tape.
    pub fn weight_tensor(&self) -> Tensor3<T> {
        Tensor3 {
            shape: Shape::new(self.out_channels, self.in_channels, self.kernel * self.kernel),
            data: self.weights.clone(),
        }
    }

    pub fn bias_tensor(&self) -> Tensor3<T> {
        Tensor3 {
            shape: Shape::new(self.out_channels, 1, 1),
            data: self.bias.clone(),
        }
    }

    pub fn from_tensors(weight: &Tensor3<T>, bias: &Tensor3<T>) -> Result<Self> {
        let kernel = kernel_from_taps(weight.width())?;
        Self::new(
            weight.height(),
            weight.channels(),
            kernel,
            weight.data.clone(),
            bias.data.clone(),
        )
    }

    pub fn cast<U: Real>(&self) -> ConvLayer<U> {
        ConvLayer {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            kernel: self.kernel,
            weights: self.weights.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
            bias: self.bias.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

pub(crate) fn kernel_from_taps(taps: usize) -> Result<usize> {
    match taps {
        1 => Ok(1),
        9 => Ok(3),
        other => Err(Error::Format(format!("{other} kernel taps is not 1x1 or 3x3"))),
    }
}

/// Stride-1 zero-padded convolution; spatial size is preserved.
pub fn conv2d_same<T: Real>(input: &Tensor3<T>, layer: &ConvLayer<T>) -> Result<Tensor3<T>> {
    if input.channels() != layer.in_channels {
        return Err(Error::ChannelMismatch {
            expected: layer.in_channels,
            actual: input.channels(),
        });
    }
    let shape = input.shape.with_channels(layer.out_channels);
    let mut out = vec![T::zero(); shape.len()];
    kernels::conv_forward(
        &input.data,
        input.shape,
        &layer.weights,
        &layer.bias,
        layer.out_channels,
        layer.kernel,
        &mut out,
    );
    Ok(Tensor3 { shape, data: out })
}

/// Raw loops shared by the forward pass and the tape's backward rules.
pub(crate) mod kernels {
    use super::{Real, Shape};

    /// Valid `(start, end)` output range along one axis for tap offset `d`.
    #[inline]
    fn span(len: usize, d: isize) -> (usize, usize) {
        let start = (-d).max(0) as usize;
        let end = (len as isize - d).clamp(0, len as isize) as usize;
        (start, end.max(start))
    }

    pub fn conv_forward<T: Real>(
        input: &[T],
        shape: Shape,
        weights: &[T],
        bias: &[T],
        out_channels: usize,
        k: usize,
        out: &mut [T],
    ) {
        let (c_in, h, w) = (shape.channels, shape.height, shape.width);
        let plane = h * w;
        let r = (k / 2) as isize;
        for o in 0..out_channels {
            let out_o = &mut out[o * plane..(o + 1) * plane];
            out_o.iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..c_in {
                let in_c = &input[c * plane..(c + 1) * plane];
                for ky in 0..k {
                    let dy = ky as isize - r;
                    let (y0, y1) = span(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - r;
                        let (x0, x1) = span(w, dx);
                        let wv = weights[((o * c_in + c) * k + ky) * k + kx];
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx = (x0 as isize + dx) as usize;
                            let dst = &mut out_o[y * w + x0..y * w + x1];
                            let src = &in_c[sy * w + sx..sy * w + sx + (x1 - x0)];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + wv * s;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates gradients of a same-padded convolution given the output cotangent.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_backward<T: Real>(
        input: &[T],
        shape: Shape,
        weights: &[T],
        out_channels: usize,
        k: usize,
        grad_out: &[T],
        grad_input: &mut [T],
        grad_weights: &mut [T],
        grad_bias: &mut [T],
    ) {
        let (c_in, h, w) = (shape.channels, shape.height, shape.width);
        let plane = h * w;
        let r = (k / 2) as isize;
        for o in 0..out_channels {
            let g_o = &grad_out[o * plane..(o + 1) * plane];
            grad_bias[o] = grad_bias[o] + g_o.iter().copied().sum::<T>();
            for c in 0..c_in {
                let in_c = &input[c * plane..(c + 1) * plane];
                let gin_c = &mut grad_input[c * plane..(c + 1) * plane];
                for ky in 0..k {
                    let dy = ky as isize - r;
                    let (y0, y1) = span(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - r;
                        let (x0, x1) = span(w, dx);
                        let widx = ((o * c_in + c) * k + ky) * k + kx;
                        let wv = weights[widx];
                        let mut gw = T::zero();
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx = (x0 as isize + dx) as usize;
                            let g = &g_o[y * w + x0..y * w + x1];
                            let src = &in_c[sy * w + sx..sy * w + sx + (x1 - x0)];
                            let gsrc = &mut gin_c[sy * w + sx..sy * w + sx + (x1 - x0)];
                            for ((&gv, &s), gs) in g.iter().zip(src).zip(gsrc.iter_mut()) {
                                gw = gw + gv * s;
                                *gs = *gs + wv * gv;
                            }
                        }
                        grad_weights[widx] = grad_weights[widx] + gw;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: Shape, data: &[f64]) -> Tensor3<f64> {
        Tensor3::from_vec(shape, data.to_vec()).unwrap()
    }

    fn random(shape: Shape, rng: &mut impl Rng) -> Tensor3<f64> {
        Tensor3::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
    }

    /// Quadruple-loop reference with explicit bounds checks.
    fn naive_conv(input: &Tensor3<f64>, layer: &ConvLayer<f64>) -> Tensor3<f64> {
        let k = layer.kernel() as isize;
        let r = k / 2;
        let (h, w) = (input.height() as isize, input.width() as isize);
        Tensor3::from_fn(input.shape().with_channels(layer.out_channels()), |o, y, x| {
            let mut acc = layer.bias()[o];
            for c in 0..layer.in_channels() {
                for ky in 0..k {
                    for kx in 0..k {
                        let (sy, sx) = (y as isize + ky - r, x as isize + kx - r);
                        if sy < 0 || sx < 0 || sy >= h || sx >= w {
                            continue;
                        }
                        let widx = ((o * layer.in_channels() + c) * k as usize + ky as usize)
                            * k as usize
                            + kx as usize;
                        acc += layer.weights()[widx] * input.get(c, sy as usize, sx as usize);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn elementwise_examples() {
        let s = Shape::new(1, 2, 2);
        let a = t(s, &[1.0, 2.0, 3.0, 4.0]);
        let two = Tensor3::full(s, 2.0);
        assert_eq!(a.mul(&two).unwrap().data(), &[2.0, 4.0, 6.0, 8.0]);
        assert_eq!(a.sub(&a).unwrap(), Tensor3::zeros(s));
        assert_eq!(a.add(&Tensor3::zeros(s)).unwrap(), a);
    }

    #[test]
    fn elementwise_shape_mismatch_names_both_shapes() {
        let a = Tensor3::<f64>::zeros(Shape::new(1, 2, 2));
        let b = Tensor3::<f64>::zeros(Shape::new(2, 2, 2));
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("1x2x2") && err.contains("2x2x2"), "{err}");
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor3::<f32>::from_vec(Shape::new(1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor3::<f32>::from_vec(Shape::new(0, 2, 2), vec![]).is_err());
    }

    #[test]
    fn relu_examples() {
        let s = Shape::new(1, 1, 3);
        assert_eq!(relu(&t(s, &[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let pos = t(s, &[0.0, 1.0, 5.0]);
        assert_eq!(relu(&pos), pos);
        assert_eq!(relu(&t(s, &[-1.0, -2.0, -0.5])), Tensor3::zeros(s));
    }

    #[test]
    fn softmax_examples() {
        let single = t(Shape::new(1, 1, 3), &[-5.0, 0.0, 30.0]);
        assert_eq!(channel_softmax(&single).data(), &[1.0, 1.0, 1.0]);

        let equal = Tensor3::full(Shape::new(2, 2, 2), 3.5);
        assert!(channel_softmax(&equal).data().iter().all(|&v| v == 0.5));

        let s = channel_softmax(&t(Shape::new(2, 1, 1), &[0.0, 2f64.ln()]));
        assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let s = channel_softmax(&t(Shape::new(2, 1, 1), &[1000.0, 999.0]));
        assert!(s.is_finite());
        assert!((s.data()[0] + s.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conv_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(Shape::new(3, 4, 5), &mut rng);
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let id = ConvLayer::new(3, 3, 1, w, vec![0.0; 3]).unwrap();
        assert_eq!(conv2d_same(&x, &id).unwrap(), x);

        let zero = ConvLayer::<f64>::zeros(3, 2, 3).unwrap();
        assert_eq!(conv2d_same(&x, &zero).unwrap(), Tensor3::zeros(Shape::new(2, 4, 5)));
    }

    #[test]
    fn conv_delta_counts_in_bounds_taps() {
        // Delta at the centre of a 3x3 plane, all-ones 3x3 kernel: every output
        // position sees the delta exactly once.
        let mut x = Tensor3::zeros(Shape::new(1, 3, 3));
        x = x.with_value(4, 1.0);
        let ones = ConvLayer::new(1, 1, 3, vec![1.0; 9], vec![0.0]).unwrap();
        let y = conv2d_same(&x, &ones).unwrap();
        assert_eq!(y.data(), &[1.0; 9]);

        // All-ones input: each output counts the taps that land inside the plane.
        let y = conv2d_same(&Tensor3::ones(Shape::new(1, 3, 3)), &ones).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let layer = ConvLayer::<f64>::zeros(2, 1, 1).unwrap();
        assert!(matches!(
            conv2d_same(&Tensor3::zeros(Shape::new(3, 2, 2)), &layer),
            Err(Error::ChannelMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn conv_layer_validates_kernel() {
        assert!(matches!(ConvLayer::<f64>::zeros(1, 1, 2), Err(Error::Kernel(2))));
        assert!(ConvLayer::<f64>::new(1, 1, 3, vec![0.0; 8], vec![0.0]).is_err());
    }

    #[test]
    fn conv_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in [1, 3] {
            for _ in 0..5 {
                let x = random(Shape::new(4, 8, 8), &mut rng);
                let n = 5 * 4 * k * k;
                let layer = ConvLayer::new(
                    4,
                    5,
                    k,
                    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap();
                let fast = conv2d_same(&x, &layer).unwrap();
                let slow = naive_conv(&x, &layer);
                assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_examples() {
        let a = t(Shape::new(1, 1, 3), &[1.0, -2.0, 0.5]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&a, &a.scale(-1.0)).unwrap() + 1.0).abs() < 1e-15);
        let e1 = t(Shape::new(1, 1, 2), &[1.0, 0.0]);
        let e2 = t(Shape::new(1, 1, 2), &[0.0, 1.0]);
        assert_eq!(cosine_similarity(&e1, &e2).unwrap(), 0.0);
        let z = Tensor3::zeros(Shape::new(1, 1, 2));
        assert!(matches!(cosine_similarity(&e1, &z), Err(Error::UndefinedSimilarity)));
    }

    #[test]
    fn concat_stacks_channels() {
        let a = t(Shape::new(1, 1, 2), &[1.0, 2.0]);
        let b = t(Shape::new(2, 1, 2), &[3.0, 4.0, 5.0, 6.0]);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), Shape::new(3, 1, 2));
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(concat_channels(&[&a, &Tensor3::zeros(Shape::new(1, 2, 2))]).is_err());
    }

    fn tensor_strategy() -> impl Strategy<Value = Tensor3<f64>> {
        (1usize..5, 1usize..6, 1usize..6).prop_flat_map(|(c, h, w)| {
            proptest::collection::vec(-10.0f64..10.0, c * h * w)
                .prop_map(move |d| Tensor3::from_vec(Shape::new(c, h, w), d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn softmax_is_normalized(a in tensor_strategy()) {
            let s = channel_softmax(&a);
            prop_assert_eq!(s.shape(), a.shape());
            for p in 0..a.shape().plane() {
                let mut total = 0.0;
                for c in 0..a.channels() {
                    let v = s.data()[c * a.shape().plane() + p];
                    prop_assert!(v > 0.0 && v <= 1.0);
                    total += v;
                }
                prop_assert!((total - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn shape_is_preserved(a in tensor_strategy()) {
            prop_assert_eq!(relu(&a).shape(), a.shape());
            prop_assert_eq!(a.mul(&a).unwrap().shape(), a.shape());
            let layer = ConvLayer::<f64>::zeros(a.channels(), 3, 3).unwrap();
            prop_assert_eq!(conv2d_same(&a, &layer).unwrap().shape(), a.shape().with_channels(3));
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in tensor_strategy(),
            seed in any::<u64>(),
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random(a.shape(), &mut rng);
            prop_assume!(a.norm() > 1e-6 && b.norm() > 1e-6);
            let ab = cosine_similarity(&a, &b).unwrap();
            prop_assert!((ab - cosine_similarity(&b, &a).unwrap()).abs() < 1e-12);
            let scaled = cosine_similarity(&a.scale(alpha), &b.scale(beta)).unwrap();
            prop_assert!((ab - scaled).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
