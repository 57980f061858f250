use serde::{Deserialize, Serialize};

use crate::tensor::{gemm, Mat};
use crate::{Float, NnError, Tensor};

/// Architecture description of one layer.
///
/// Shapes exclude the batch axis: dense layers take `[features]`, conv1d
/// layers `[channels, length]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Conv1d { in_channels: usize, out_channels: usize, kernel: usize },
    Relu,
    Sigmoid,
    Tanh,
    Flatten,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Output shape for a given input shape (both without the batch axis).
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let mismatch = |want: Vec<usize>| NnError::Dimension { op: self.name(), left: input.to_vec(), right: want };
        match *self {
            LayerSpec::Dense { input: n, output } => match input {
                [f] if *f == n => Ok(vec![output]),
                _ => Err(mismatch(vec![n])),
            },
            LayerSpec::Conv1d { in_channels, out_channels, kernel } => {
                if kernel % 2 == 0 {
                    return Err(NnError::State(format!("conv1d kernel {kernel} must be odd for same padding")));
                }
                match input {
                    [c, l] if *c == in_channels => Ok(vec![out_channels, *l]),
                    _ => Err(mismatch(vec![in_channels, 0])),
                }
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Tanh => Ok(input.to_vec()),
        }
    }

    /// `(fan_in, fan_out)` for Glorot initialization, if the layer has weights.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Dense { input, output } => Some((input, output)),
            LayerSpec::Conv1d { in_channels, out_channels, kernel } => Some((in_channels * kernel, out_channels * kernel)),
            _ => None,
        }
    }

    /// Shapes of `[weight, bias]`, empty for parameter-free layers.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense { input, output } => vec![vec![output, input], vec![output]],
            LayerSpec::Conv1d { in_channels, out_channels, kernel } => {
                vec![vec![out_channels, in_channels, kernel], vec![out_channels]]
            }
            _ => vec![],
        }
    }
}

/// Weight, bias and their gradient accumulators.
#[derive(Debug, Clone)]
pub struct Params<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

impl<T: Float> Params<T> {
    fn new(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        let grad_weight = Tensor::zeros(weight.shape());
        let grad_bias = Tensor::zeros(bias.shape());
        Self { weight, bias, grad_weight, grad_bias }
    }
}

/// A layer with its parameters and the cache of its last training forward.
#[derive(Debug, Clone)]
pub struct Layer<T> {
    spec: LayerSpec,
    params: Option<Params<T>>,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone)]
enum Cache<T> {
    Tensor(Tensor<T>),
    Shape(Vec<usize>),
}

impl<T: Float> Layer<T> {
    /// `params` must be `[weight, bias]` for dense/conv1d and empty otherwise.
    pub fn new(spec: LayerSpec, params: Vec<Tensor<T>>) -> Result<Self, NnError> {
        let shapes = spec.param_shapes();
        if params.len() != shapes.len() {
            return Err(NnError::State(format!("{} expects {} parameter tensors, got {}", spec.name(), shapes.len(), params.len())));
        }
        for (p, s) in params.iter().zip(&shapes) {
            if p.shape() != s.as_slice() {
                return Err(NnError::Dimension { op: spec.name(), left: p.shape().to_vec(), right: s.clone() });
            }
        }
        let mut it = params.into_iter();
        let params = match (it.next(), it.next()) {
            (Some(w), Some(b)) => Some(Params::new(w, b)),
            _ => None,
        };
        Ok(Self { spec, params, cache: None })
    }

    pub fn spec(&self) -> LayerSpec {
        self.spec
    }

    pub fn params(&self) -> Option<&Params<T>> {
        self.params.as_ref()
    }

    pub fn params_mut(&mut self) -> Option<&mut Params<T>> {
        self.params.as_mut()
    }

    /// Inference forward pass; leaves the training cache untouched.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let out_dims = self.spec.output_dims(&x.shape()[1..])?;
        let batch = x.batch();
        let mut shape = vec![batch];
        shape.extend_from_slice(&out_dims);
        match self.spec {
            LayerSpec::Dense { input, output } => {
                let p = self.params.as_ref().expect("dense params");
                let mut y = Tensor::zeros(&shape);
                for row in y.data_mut().chunks_exact_mut(output) {
                    row.copy_from_slice(p.bias.data());
                }
                gemm(
                    Mat::row_major(x.data(), batch, input),
                    Mat::row_major(p.weight.data(), output, input).t(),
                    T::one(),
                    y.data_mut(),
                );
                Ok(y)
            }
            LayerSpec::Conv1d { in_channels, out_channels, kernel } => {
                let p = self.params.as_ref().expect("conv params");
                let len = x.shape()[2];
                let mut y = Tensor::zeros(&shape);
                let mut cols = vec![T::zero(); in_channels * kernel * len];
                let w = Mat::row_major(p.weight.data(), out_channels, in_channels * kernel);
                for (xb, yb) in x.data().chunks_exact(in_channels * len).zip(y.data_mut().chunks_exact_mut(out_channels * len)) {
                    im2col(xb, in_channels, len, kernel, &mut cols);
                    for (o, row) in yb.chunks_exact_mut(len).enumerate() {
                        row.iter_mut().for_each(|v| *v = p.bias.data()[o]);
                    }
                    gemm(w, Mat::row_major(&cols, in_channels * kernel, len), T::one(), yb);
                }
                Ok(y)
            }
            LayerSpec::Relu => Ok(x.map(|v| if v > T::zero() { v } else { T::zero() })),
            LayerSpec::Sigmoid => Ok(x.map(|v| T::one() / (T::one() + (-v).exp()))),
            LayerSpec::Tanh => Ok(x.map(|v| v.tanh())),
            LayerSpec::Flatten => x.clone().reshape(&shape),
        }
    }

    /// Forward pass that records what [`Layer::backward`] needs.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let y = self.forward(x)?;
        self.cache = Some(match self.spec {
            // activations that are cheaper to differentiate through their output
            LayerSpec::Sigmoid | LayerSpec::Tanh => Cache::Tensor(y.clone()),
            LayerSpec::Flatten => Cache::Shape(x.shape().to_vec()),
            _ => Cache::Tensor(x.clone()),
        });
        Ok(y)
    }

    /// Back-propagates `dy`, accumulating parameter gradients and returning
    /// the gradient with respect to the input of the last training forward.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| NnError::State(format!("{} backward called without a recorded forward pass", self.spec.name())))?;
        let cache = match cache {
            Cache::Shape(shape) => return dy.clone().reshape(&shape),
            Cache::Tensor(t) => t,
        };
        match self.spec {
            LayerSpec::Dense { input, output } => {
                let x = cache;
                let batch = x.batch();
                if dy.shape() != [batch, output] {
                    return Err(NnError::Dimension { op: "dense backward", left: dy.shape().to_vec(), right: vec![batch, output] });
                }
                let p = self.params.as_mut().expect("dense params");
                let dyt = Mat::row_major(dy.data(), batch, output);
                gemm(dyt.t(), Mat::row_major(x.data(), batch, input), T::one(), p.grad_weight.data_mut());
                accumulate_bias(p.grad_bias.data_mut(), dy.data(), output, 1);
                let mut dx = Tensor::zeros(x.shape());
                gemm(dyt, Mat::row_major(p.weight.data(), output, input), T::zero(), dx.data_mut());
                Ok(dx)
            }
            LayerSpec::Conv1d { in_channels, out_channels, kernel } => {
                let x = cache;
                let len = x.shape()[2];
                if dy.shape() != [x.batch(), out_channels, len] {
                    return Err(NnError::Dimension {
                        op: "conv1d backward",
                        left: dy.shape().to_vec(),
                        right: vec![x.batch(), out_channels, len],
                    });
                }
                let p = self.params.as_mut().expect("conv params");
                let ck = in_channels * kernel;
                let mut cols = vec![T::zero(); ck * len];
                let mut dcols = vec![T::zero(); ck * len];
                let mut dx = Tensor::zeros(x.shape());
                let w = Mat::row_major(p.weight.data(), out_channels, ck);
                for ((xb, dyb), dxb) in x
                    .data()
                    .chunks_exact(in_channels * len)
                    .zip(dy.data().chunks_exact(out_channels * len))
                    .zip(dx.data_mut().chunks_exact_mut(in_channels * len))
                {
                    im2col(xb, in_channels, len, kernel, &mut cols);
                    let dym = Mat::row_major(dyb, out_channels, len);
                    gemm(dym, Mat::row_major(&cols, ck, len).t(), T::one(), p.grad_weight.data_mut());
                    gemm(w.t(), dym, T::zero(), &mut dcols);
                    col2im(&dcols, in_channels, len, kernel, dxb);
                }
                accumulate_bias(p.grad_bias.data_mut(), dy.data(), out_channels, len);
                Ok(dx)
            }
            LayerSpec::Relu => {
                check_same(dy, &cache, "relu backward")?;
                let mut dx = dy.clone();
                for (g, &x) in dx.data_mut().iter_mut().zip(cache.data()) {
                    if x <= T::zero() {
                        *g = T::zero();
                    }
                }
                Ok(dx)
            }
            LayerSpec::Sigmoid => {
                check_same(dy, &cache, "sigmoid backward")?;
                let mut dx = dy.clone();
                for (g, &y) in dx.data_mut().iter_mut().zip(cache.data()) {
                    *g *= y * (T::one() - y);
                }
                Ok(dx)
            }
            LayerSpec::Tanh => {
                check_same(dy, &cache, "tanh backward")?;
                let mut dx = dy.clone();
                for (g, &y) in dx.data_mut().iter_mut().zip(cache.data()) {
                    *g *= T::one() - y * y;
                }
                Ok(dx)
            }
            LayerSpec::Flatten => unreachable!("flatten caches its input shape"),
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(p) = &mut self.params {
            p.grad_weight.fill(T::zero());
            p.grad_bias.fill(T::zero());
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

fn check_same<T: Float>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<(), NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::Dimension { op, left: a.shape().to_vec(), right: b.shape().to_vec() });
    }
    Ok(())
}

/// Sums `dy` laid out as `[batch, channels, inner]` over batch and inner axes.
fn accumulate_bias<T: Float>(grad: &mut [T], dy: &[T], channels: usize, inner: usize) {
    let mut acc = vec![0.0f64; channels];
    for sample in dy.chunks_exact(channels * inner) {
        for (c, row) in sample.chunks_exact(inner).enumerate() {
            acc[c] += row.iter().map(|v| v.f64()).sum::<f64>();
        }
    }
    for (g, a) in grad.iter_mut().zip(acc) {
        *g += T::of(a);
    }
}

/// `cols[(c * kernel + k) * len + t] = x[c, t + k - kernel / 2]`, zero outside.
fn im2col<T: Float>(x: &[T], channels: usize, len: usize, kernel: usize, cols: &mut [T]) {
    let pad = kernel / 2;
    for c in 0..channels {
        let xc = &x[c * len..(c + 1) * len];
        for k in 0..kernel {
            let r = (c * kernel + k) * len;
            let row = &mut cols[r..r + len];
            for (t, v) in row.iter_mut().enumerate() {
                let s = t + k;
                *v = if s >= pad && s - pad < len { xc[s - pad] } else { T::zero() };
            }
        }
    }
}

fn col2im<T: Float>(cols: &[T], channels: usize, len: usize, kernel: usize, dx: &mut [T]) {
    let pad = kernel / 2;
    for c in 0..channels {
        let dxc = &mut dx[c * len..(c + 1) * len];
        for k in 0..kernel {
            let r = (c * kernel + k) * len;
            let row = &cols[r..r + len];
            for (t, &v) in row.iter().enumerate() {
                let s = t + k;
                if s >= pad && s - pad < len {
                    dxc[s - pad] += v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    fn conv(cin: usize, cout: usize, k: usize, w: Vec<f64>, b: Vec<f64>) -> Layer<f64> {
        let spec = LayerSpec::Conv1d { in_channels: cin, out_channels: cout, kernel: k };
        Layer::new(spec, vec![t(&[cout, cin, k], w), t(&[cout], b)]).unwrap()
    }

    /// Direct sliding-window cross-correlation with zero "same" padding.
    fn brute_conv(x: &[f64], cin: usize, len: usize, w: &[f64], b: &[f64], cout: usize, k: usize) -> Vec<f64> {
        let pad = (k / 2) as isize;
        let mut y = vec![0.0; cout * len];
        for o in 0..cout {
            for i in 0..len {
                let mut acc = b[o];
                for c in 0..cin {
                    for kk in 0..k {
                        let s = i as isize + kk as isize - pad;
                        if s >= 0 && (s as usize) < len {
                            acc += w[(o * cin + c) * k + kk] * x[c * len + s as usize];
                        }
                    }
                }
                y[o * len + i] = acc;
            }
        }
        y
    }

    #[test]
    fn dense_identity() {
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 4] = 1.0;
        }
        let layer = Layer::new(LayerSpec::Dense { input: 3, output: 3 }, vec![t(&[3, 3], w), t(&[3], vec![0.0; 3])]).unwrap();
        let x = t(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]);
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn conv_identity_kernel() {
        let layer = conv(1, 1, 3, vec![0.0, 1.0, 0.0], vec![0.0]);
        let x = t(&[2, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0, -1.0, 0.5, 0.0, 9.0, 2.0]);
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn conv_difference_kernel_matches_sliding_window() {
        let layer = conv(1, 1, 3, vec![1.0, -1.0, 0.0], vec![0.0]);
        let y = layer.forward(&t(&[1, 1, 3], vec![1.0, 2.0, 4.0])).unwrap();
        // y[i] = x[i-1] - x[i]
        assert_eq!(y.data(), &[-1.0, -1.0, -2.0]);
        assert_eq!(y.data(), brute_conv(&[1.0, 2.0, 4.0], 1, 3, &[1.0, -1.0, 0.0], &[0.0], 1, 3).as_slice());
    }

    proptest! {
        #[test]
        fn conv_matches_brute_force(
            cin in 1usize..4, cout in 1usize..4, half in 0usize..3, len in 1usize..12, batch in 1usize..3,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let k = 2 * half + 1;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut r = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
            let (w, b, x) = (r(cout * cin * k), r(cout), r(batch * cin * len));
            let layer = conv(cin, cout, k, w.clone(), b.clone());
            let y = layer.forward(&t(&[batch, cin, len], x.clone())).unwrap();
            for s in 0..batch {
                let want = brute_conv(&x[s * cin * len..(s + 1) * cin * len], cin, len, &w, &b, cout, k);
                for (a, e) in y.data()[s * cout * len..(s + 1) * cout * len].iter().zip(&want) {
                    prop_assert!((a - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn half_squared_norm_gradient_is_outer_product() {
        let w = vec![0.5, -1.0, 2.0, 0.25, 1.5, -0.5];
        let mut layer = Layer::new(LayerSpec::Dense { input: 3, output: 2 }, vec![t(&[2, 3], w), t(&[2], vec![0.1, -0.2])]).unwrap();
        let x = t(&[1, 3], vec![1.0, 2.0, -3.0]);
        let y = layer.forward_train(&x).unwrap();
        // L = |y|^2 / 2  =>  dL/dy = y, dL/dW = y x^T
        layer.backward(&y).unwrap();
        let gw = &layer.params().unwrap().grad_weight;
        for o in 0..2 {
            for i in 0..3 {
                assert!((gw.data()[o * 3 + i] - y.data()[o] * x.data()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let mut layer: Layer<f64> = Layer::new(LayerSpec::Relu, vec![]).unwrap();
        assert!(matches!(layer.backward(&t(&[1, 1], vec![1.0])), Err(NnError::State(_))));
        let mut d = Layer::new(LayerSpec::Dense { input: 1, output: 1 }, vec![t(&[1, 1], vec![1.0]), t(&[1], vec![0.0])]).unwrap();
        assert!(matches!(d.backward(&t(&[1, 1], vec![1.0])), Err(NnError::State(_))));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let d = Layer::new(LayerSpec::Dense { input: 4, output: 2 }, vec![t(&[2, 4], vec![0.0; 8]), t(&[2], vec![0.0; 2])]).unwrap();
        let err = d.forward(&t(&[1, 3], vec![0.0; 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[3]") && msg.contains("[4]"), "{msg}");
    }

    #[test]
    fn even_kernel_is_rejected() {
        let spec = LayerSpec::Conv1d { in_channels: 1, out_channels: 1, kernel: 2 };
        assert!(spec.output_dims(&[1, 8]).is_err());
    }
}
