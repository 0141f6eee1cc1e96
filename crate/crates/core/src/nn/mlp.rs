//! Fully connected networks with hand-written reverse mode.
//!
//! Layer `i` of an MLP with prefix `p` owns `p.w{i}` (out × in) and
//! `p.b{i}` (out × 1).

use rand::Rng;

use super::params::ParamSet;
use super::tensor::Tensor2D;
use crate::error::{Error, Result};

/// Pre-activation bound applied before a sigmoid output.
pub const SIGMOID_CLAMP: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
    Softplus,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(
        layer_widths: Vec<usize>,
        hidden_activation: Activation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::Argument("an MLP needs at least two widths".into()));
        }
        if layer_widths.contains(&0) {
            return Err(Error::Argument("MLP widths must be positive".into()));
        }
        Ok(MlpSpec {
            layer_widths,
            hidden_activation,
            output_activation,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }
}

/// An MLP bound to a parameter-name prefix.
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    prefix: String,
}

/// Activations recorded by [`Mlp::forward`].
#[derive(Clone, Debug)]
pub struct MlpCache {
    prefix: String,
    // layer inputs, one per layer
    inputs: Vec<Vec<f64>>,
    // pre-activations, one per layer
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid_fn(x: f64) -> f64 {
    sigmoid(x)
}

pub(crate) fn softplus_fn(x: f64) -> f64 {
    softplus(x)
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, spec: MlpSpec) -> Self {
        Mlp {
            spec,
            prefix: prefix.into(),
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.w{layer}", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.b{layer}", self.prefix)
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.spec.num_layers())
            .flat_map(|l| [self.weight_name(l), self.bias_name(l)])
            .collect()
    }

    pub fn init_params<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        for l in 0..self.spec.num_layers() {
            let (fan_in, fan_out) = (self.spec.layer_widths[l], self.spec.layer_widths[l + 1]);
            params.insert_glorot(self.weight_name(l), fan_out, fan_in, rng)?;
            params.insert(self.bias_name(l), Tensor2D::zeros(fan_out, 1))?;
        }
        Ok(())
    }

    pub fn forward(&self, params: &ParamSet, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if input.len() != self.spec.input_width() {
            return Err(Error::Dimension(format!(
                "{}: input length {} != {}",
                self.prefix,
                input.len(),
                self.spec.input_width()
            )));
        }
        let n = self.spec.num_layers();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut x = input.to_vec();
        for l in 0..n {
            let w = params.value(&self.weight_name(l))?;
            let b = params.value(&self.bias_name(l))?;
            if w.cols() != x.len() || w.rows() != b.rows() || b.cols() != 1 {
                return Err(Error::Dimension(format!(
                    "{}: layer {l} has weight {:?} and bias {:?} for input {}",
                    self.prefix,
                    w.shape(),
                    b.shape(),
                    x.len()
                )));
            }
            let mut z = w.matvec(&x);
            for (zi, bi) in z.iter_mut().zip(b.data()) {
                *zi += bi;
            }
            let last = l + 1 == n;
            let a: Vec<f64> = if last {
                match self.spec.output_activation {
                    OutputActivation::Identity => z.clone(),
                    OutputActivation::Sigmoid => z
                        .iter()
                        .map(|&v| sigmoid(v.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP)))
                        .collect(),
                    OutputActivation::Softplus => z.iter().map(|&v| softplus(v)).collect(),
                }
            } else {
                match self.spec.hidden_activation {
                    Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
                    Activation::Tanh => z.iter().map(|&v| v.tanh()).collect(),
                }
            };
            inputs.push(std::mem::replace(&mut x, a));
            pre.push(z);
        }
        let cache = MlpCache {
            prefix: self.prefix.clone(),
            inputs,
            pre,
            output: x.clone(),
        };
        Ok((x, cache))
    }

    /// Accumulates parameter gradients for `upstream = ∂L/∂output` and
    /// returns `∂L/∂input`.
    pub fn backward(
        &self,
        params: &mut ParamSet,
        cache: &MlpCache,
        upstream: &[f64],
    ) -> Result<Vec<f64>> {
        let n = self.spec.num_layers();
        if cache.prefix != self.prefix || cache.pre.len() != n {
            return Err(Error::Usage(format!(
                "cache from `{}` used with `{}`",
                cache.prefix, self.prefix
            )));
        }
        if upstream.len() != cache.output.len() {
            return Err(Error::Usage(format!(
                "{}: upstream gradient length {} != output length {}",
                self.prefix,
                upstream.len(),
                cache.output.len()
            )));
        }
        let mut delta: Vec<f64> = upstream.to_vec();
        for l in (0..n).rev() {
            let z = &cache.pre[l];
            let last = l + 1 == n;
            if last {
                match self.spec.output_activation {
                    OutputActivation::Identity => {}
                    OutputActivation::Sigmoid => {
                        for (d, &v) in delta.iter_mut().zip(z) {
                            if v.abs() > SIGMOID_CLAMP {
                                *d = 0.0;
                            } else {
                                let s = sigmoid(v);
                                *d *= s * (1.0 - s);
                            }
                        }
                    }
                    OutputActivation::Softplus => {
                        for (d, &v) in delta.iter_mut().zip(z) {
                            *d *= sigmoid(v);
                        }
                    }
                }
            } else {
                match self.spec.hidden_activation {
                    Activation::Relu => {
                        for (d, &v) in delta.iter_mut().zip(z) {
                            if v <= 0.0 {
                                *d = 0.0;
                            }
                        }
                    }
                    Activation::Tanh => {
                        for (d, &v) in delta.iter_mut().zip(z) {
                            let t = v.tanh();
                            *d *= 1.0 - t * t;
                        }
                    }
                }
            }
            let x = &cache.inputs[l];
            let wname = self.weight_name(l);
            let w = params.get_mut(&wname)?;
            if w.value.shape() != (z.len(), x.len()) {
                return Err(Error::Usage(format!(
                    "{wname}: stale cache, weight is {:?} but cache is {}x{}",
                    w.value.shape(),
                    z.len(),
                    x.len()
                )));
            }
            w.grad.add_outer(&delta, x, 1.0);
            let next_delta = w.value.matvec_t(&delta);
            let b = params.get_mut(&self.bias_name(l))?;
            for (g, d) in b.grad.data_mut().iter_mut().zip(&delta) {
                *g += d;
            }
            delta = next_delta;
        }
        Ok(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(params: &mut ParamSet, name: &str, t: Tensor2D) {
        params.get_mut(name).unwrap().value = t;
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3], Activation::Relu, OutputActivation::Identity).is_err());
        assert!(MlpSpec::new(vec![3, 0], Activation::Relu, OutputActivation::Identity).is_err());
    }

    #[test]
    fn zero_weights_give_activation_of_bias() {
        let spec = MlpSpec::new(vec![3, 2], Activation::Tanh, OutputActivation::Sigmoid).unwrap();
        let mlp = Mlp::new("m", spec);
        let mut p = ParamSet::new();
        mlp.init_params(&mut p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        set(&mut p, "m.w0", Tensor2D::zeros(2, 3));
        set(&mut p, "m.b0", Tensor2D::column(&[0.0, 2.0]));
        let (out, _) = mlp.forward(&p, &[5.0, -1.0, 7.0]).unwrap();
        assert_eq!(out[0], 0.5);
        assert_eq!(out[1], sigmoid(2.0));
    }

    #[test]
    fn identity_relu_layer() {
        // a one-layer network whose "output" activation is realised by a
        // relu hidden layer followed by an identity layer
        let spec = MlpSpec::new(vec![2, 2, 2], Activation::Relu, OutputActivation::Identity).unwrap();
        let mlp = Mlp::new("m", spec);
        let mut p = ParamSet::new();
        mlp.init_params(&mut p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let eye = Tensor2D::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        set(&mut p, "m.w0", eye.clone());
        set(&mut p, "m.w1", eye);
        let (out, _) = mlp.forward(&p, &[-1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.0, 2.0]);
    }

    #[test]
    fn output_shape_and_input_check() {
        let spec = MlpSpec::new(vec![2, 3, 1], Activation::Tanh, OutputActivation::Identity).unwrap();
        let mlp = Mlp::new("m", spec);
        let mut p = ParamSet::new();
        mlp.init_params(&mut p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(mlp.forward(&p, &[0.1, 0.2]).unwrap().0.len(), 1);
        assert!(matches!(mlp.forward(&p, &[0.1]), Err(Error::Dimension(_))));
    }

    #[test]
    fn sum_of_linear_outputs_gradient_is_outer_product() {
        // f(x) = Σᵢ (W x)ᵢ  ⇒  ∂f/∂W = 1 xᵀ
        let spec = MlpSpec::new(vec![3, 2], Activation::Tanh, OutputActivation::Identity).unwrap();
        let mlp = Mlp::new("m", spec);
        let mut p = ParamSet::new();
        mlp.init_params(&mut p, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = [0.5, -2.0, 3.0];
        let (_, cache) = mlp.forward(&p, &x).unwrap();
        mlp.backward(&mut p, &cache, &[1.0, 1.0]).unwrap();
        assert_eq!(p.grad("m.w0").unwrap().data(), &[0.5, -2.0, 3.0, 0.5, -2.0, 3.0]);
        assert_eq!(p.grad("m.b0").unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Tanh, OutputActivation::Softplus).unwrap();
        let mlp = Mlp::new("m", spec);
        let mut p = ParamSet::new();
        mlp.init_params(&mut p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (_, cache) = mlp.forward(&p, &[1.0, 2.0, 3.0]).unwrap();
        mlp.backward(&mut p, &cache, &[0.0, 0.0]).unwrap();
        assert!(p.iter().all(|(_, q)| q.grad.data().iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn mismatched_cache_is_a_usage_error() {
        let spec = MlpSpec::new(vec![2, 2], Activation::Tanh, OutputActivation::Identity).unwrap();
        let a = Mlp::new("a", spec.clone());
        let b = Mlp::new("b", spec);
        let mut p = ParamSet::new();
        a.init_params(&mut p, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        b.init_params(&mut p, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let (_, cache) = a.forward(&p, &[1.0, 1.0]).unwrap();
        assert!(matches!(b.backward(&mut p, &cache, &[1.0, 1.0]), Err(Error::Usage(_))));
        assert!(matches!(a.backward(&mut p, &cache, &[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn sigmoid_output_clamped() {
        let spec = MlpSpec::new(vec![1, 1], Activation::Tanh, OutputActivation::Sigmoid).unwrap();
        let mlp = Mlp::new("m", spec);
        let mut p = ParamSet::new();
        mlp.init_params(&mut p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        set(&mut p, "m.w0", Tensor2D::column(&[1.0]));
        let (lo, _) = mlp.forward(&p, &[-1e6]).unwrap();
        let (hi, _) = mlp.forward(&p, &[1e6]).unwrap();
        assert_eq!(lo[0], sigmoid(-SIGMOID_CLAMP));
        assert!(lo[0] > 0.0 && lo[0].ln().is_finite());
        assert!(hi[0] < 1.0);
    }
}
