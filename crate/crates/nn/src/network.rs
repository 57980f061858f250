use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Float, Layer, LayerSpec, NnError, Tensor};

/// A feed-forward stack of layers.
#[derive(Debug, Clone)]
pub struct Network<T> {
    input_dims: Vec<usize>,
    layers: Vec<Layer<T>>,
}

impl<T: Float> Network<T> {
    /// Builds the stack with uniform Glorot weights and zero biases drawn from
    /// a ChaCha8 stream seeded with `seed`.
    pub fn new(input_dims: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .iter()
            .map(|spec| {
                let shapes = spec.param_shapes();
                let Some((fan_in, fan_out)) = spec.fans() else { return vec![] };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n: usize = shapes[0].iter().product();
                let w = (0..n).map(|_| T::of(rng.gen_range(-limit..limit))).collect();
                vec![
                    Tensor::from_vec(&shapes[0], w).expect("weight shape"),
                    Tensor::zeros(&shapes[1]),
                ]
            })
            .collect();
        Self::from_params(input_dims, specs, params)
    }

    /// Assembles a network from explicit parameters (one `[weight, bias]`
    /// list per layer, empty for parameter-free layers).
    pub fn from_params(input_dims: &[usize], specs: &[LayerSpec], params: Vec<Vec<Tensor<T>>>) -> Result<Self, NnError> {
        if params.len() != specs.len() {
            return Err(NnError::State(format!("{} layer specs but {} parameter groups", specs.len(), params.len())));
        }
        let mut dims = input_dims.to_vec();
        for spec in specs {
            dims = spec.output_dims(&dims)?;
        }
        let layers = specs
            .iter()
            .zip(params)
            .map(|(spec, p)| Layer::new(*spec, p))
            .collect::<Result<_, _>>()?;
        Ok(Self { input_dims: input_dims.to_vec(), layers })
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn output_dims(&self) -> Vec<usize> {
        self.layers
            .iter()
            .try_fold(self.input_dims.clone(), |d, l| l.spec().output_dims(&d))
            .expect("validated at construction")
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NnError> {
        if x.shape().len() != self.input_dims.len() + 1 || x.shape()[1..] != self.input_dims[..] {
            let mut want = vec![x.shape().first().copied().unwrap_or(0)];
            want.extend_from_slice(&self.input_dims);
            return Err(NnError::Dimension { op: "network input", left: x.shape().to_vec(), right: want });
        }
        Ok(())
    }

    /// Inference pass. Pure in `(params, x)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if !h.all_finite() {
                return Err(NnError::NonFinite { layer: k, kind: layer.spec().name() });
            }
        }
        Ok(h)
    }

    /// Training pass that records per-layer caches for [`Network::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (k, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward_train(&h)?;
            if !h.all_finite() {
                return Err(NnError::NonFinite { layer: k, kind: layer.spec().name() });
            }
        }
        Ok(h)
    }

    /// Accumulates parameter gradients for `dL/dy = dy` and returns `dL/dx`.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut g = dy.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grad);
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// Parameter tensors in layer order, weight before bias.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().filter_map(Layer::params).flat_map(|p| [&p.weight, &p.bias]).collect()
    }

    /// `(parameter, gradient)` pairs in the order of [`Network::params`].
    pub fn params_and_grads(&mut self) -> Vec<(&mut Tensor<T>, &Tensor<T>)> {
        self.layers
            .iter_mut()
            .filter_map(Layer::params_mut)
            .flat_map(|p| [(&mut p.weight, &p.grad_weight), (&mut p.bias, &p.grad_bias)])
            .collect()
    }

    /// Gradient tensors in the order of [`Network::params`].
    pub fn grads(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().filter_map(Layer::params).flat_map(|p| [&p.grad_weight, &p.grad_bias]).collect()
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Float>(&self) -> Network<U> {
        let params = self
            .layers
            .iter()
            .map(|l| match l.params() {
                Some(p) => [&p.weight, &p.bias]
                    .iter()
                    .map(|t| Tensor::from_vec(t.shape(), t.data().iter().map(|v| U::of(v.f64())).collect()).expect("shape"))
                    .collect(),
                None => vec![],
            })
            .collect();
        Network::from_params(&self.input_dims, &self.specs(), params).expect("same architecture")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_bounds_and_determinism() {
        let specs = [LayerSpec::Dense { input: 30, output: 20 }, LayerSpec::Relu];
        let a: Network<f32> = Network::new(&[30], &specs, 5).unwrap();
        let b: Network<f32> = Network::new(&[30], &specs, 5).unwrap();
        let c: Network<f32> = Network::new(&[30], &specs, 6).unwrap();
        assert_eq!(a.params()[0].data(), b.params()[0].data());
        assert_ne!(a.params()[0].data(), c.params()[0].data());
        let limit = (6.0f32 / 50.0).sqrt();
        assert!(a.params()[0].data().iter().all(|w| w.abs() <= limit));
        assert!(a.params()[1].data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn incompatible_stack_is_rejected() {
        let specs = [LayerSpec::Dense { input: 4, output: 3 }, LayerSpec::Dense { input: 4, output: 1 }];
        assert!(matches!(Network::<f32>::new(&[4], &specs, 0), Err(NnError::Dimension { .. })));
    }

    #[test]
    fn constant_output_model_has_zero_gradients() {
        // all-zero weights feeding a ReLU: output is constant in the input
        let specs = [LayerSpec::Dense { input: 3, output: 2 }, LayerSpec::Relu, LayerSpec::Dense { input: 2, output: 1 }];
        let params = vec![
            vec![Tensor::zeros(&[2, 3]), Tensor::from_vec(&[2], vec![-1.0, -2.0]).unwrap()],
            vec![],
            vec![Tensor::from_vec(&[1, 2], vec![0.3, 0.7]).unwrap(), Tensor::from_vec(&[1], vec![0.5]).unwrap()],
        ];
        let mut net: Network<f64> = Network::from_params(&[3], &specs, params).unwrap();
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
        let y = net.forward_train(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
        let dx = net.backward(&Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap()).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        let grads = net.grads();
        assert!(grads[0].data().iter().chain(grads[1].data()).chain(grads[2].data()).all(|&v| v == 0.0));
    }
}
