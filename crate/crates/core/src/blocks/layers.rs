//! Parameter-owning layer wrappers around the raw tensor ops.

use super::{join, Params, StateEntry};
use crate::tensor::{batch_norm, Elem, Initializer, Rng, Tensor};
use crate::{Error, Result};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

fn fan_in_tensor<E: Elem>(rng: &Rng, name: &str, shape: &[usize], fan_in: usize) -> Tensor<E> {
    Tensor::init(shape, Initializer::FanInScaled { fan_in }, rng.seed_for(name), true)
}

fn load_one<E: Elem>(
    t: &mut Tensor<E>,
    name: &str,
    src: &HashMap<String, (Vec<usize>, Vec<E>)>,
) -> Result<()> {
    let (shape, data) = src
        .get(name)
        .ok_or_else(|| Error::invalid("load_state", format!("missing tensor {name}")))?;
    if shape.as_slice() != t.shape() {
        return Err(Error::invalid(
            "load_state",
            format!("{name}: checkpoint shape {shape:?} != model shape {:?}", t.shape()),
        ));
    }
    *t = Tensor::leaf(shape, data.clone(), true)?;
    Ok(())
}

pub struct Conv2dLayer<E: Elem> {
    pub weight: Tensor<E>,
    pub bias: Option<Tensor<E>>,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl<E: Elem> Conv2dLayer<E> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rng: &Rng,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        bias: bool,
    ) -> Self {
        let fan_in = (in_c / groups) * k * k;
        let weight = fan_in_tensor(rng, &join(name, "w"), &[out_c, in_c / groups, k, k], fan_in);
        let bias = bias.then(|| fan_in_tensor(rng, &join(name, "b"), &[out_c], fan_in));
        Conv2dLayer { weight, bias, stride, pad, groups }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.conv2d(&self.weight, self.bias.as_ref(), self.stride, self.pad, self.groups)
    }
}

impl<E: Elem> Params<E> for Conv2dLayer<E> {
    fn visit_learnable(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        f(&join(prefix, "w"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "b"), b);
        }
    }

    fn state(&self, prefix: &str, out: &mut Vec<StateEntry<E>>) {
        out.push((join(prefix, "w"), self.weight.shape().to_vec(), self.weight.to_vec()));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "b"), b.shape().to_vec(), b.to_vec()));
        }
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, (Vec<usize>, Vec<E>)>) -> Result<()> {
        load_one(&mut self.weight, &join(prefix, "w"), src)?;
        if let Some(b) = &mut self.bias {
            load_one(b, &join(prefix, "b"), src)?;
        }
        Ok(())
    }
}

pub struct BatchNormLayer<E: Elem> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    running_mean: Arc<Mutex<Vec<E>>>,
    running_var: Arc<Mutex<Vec<E>>>,
    pub momentum: E,
    pub eps: E,
}

impl<E: Elem> BatchNormLayer<E> {
    pub fn new(channels: usize) -> Self {
        BatchNormLayer {
            gamma: Tensor::init(&[channels], Initializer::Ones, 0, true),
            beta: Tensor::init(&[channels], Initializer::Zeros, 0, true),
            running_mean: Arc::new(Mutex::new(vec![E::ZERO; channels])),
            running_var: Arc::new(Mutex::new(vec![E::ONE; channels])),
            momentum: E::from_f64(0.1),
            eps: E::from_f64(1e-5),
        }
    }

    pub fn forward(&self, x: &Tensor<E>, train: bool) -> Result<Tensor<E>> {
        batch_norm(
            x,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            train,
            self.momentum,
            self.eps,
        )
    }

    pub fn set_running_stats(&self, mean: Vec<E>, var: Vec<E>) {
        *self.running_mean.lock().unwrap() = mean;
        *self.running_var.lock().unwrap() = var;
    }
}

impl<E: Elem> Params<E> for BatchNormLayer<E> {
    fn visit_learnable(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn state(&self, prefix: &str, out: &mut Vec<StateEntry<E>>) {
        let c = self.gamma.numel();
        out.push((join(prefix, "gamma"), vec![c], self.gamma.to_vec()));
        out.push((join(prefix, "beta"), vec![c], self.beta.to_vec()));
        out.push((join(prefix, "running_mean"), vec![c], self.running_mean.lock().unwrap().clone()));
        out.push((join(prefix, "running_var"), vec![c], self.running_var.lock().unwrap().clone()));
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, (Vec<usize>, Vec<E>)>) -> Result<()> {
        load_one(&mut self.gamma, &join(prefix, "gamma"), src)?;
        load_one(&mut self.beta, &join(prefix, "beta"), src)?;
        for (name, buf) in [
            (join(prefix, "running_mean"), &self.running_mean),
            (join(prefix, "running_var"), &self.running_var),
        ] {
            let (shape, data) = src
                .get(&name)
                .ok_or_else(|| Error::invalid("load_state", format!("missing tensor {name}")))?;
            if shape != &[self.gamma.numel()] {
                return Err(Error::invalid("load_state", format!("{name}: bad shape {shape:?}")));
            }
            *buf.lock().unwrap() = data.clone();
        }
        Ok(())
    }
}

/// Dense projection on the last axis: `x [.., in] -> [.., out]`.
pub struct Linear<E: Elem> {
    pub weight: Tensor<E>, // [in, out]
    pub bias: Option<Tensor<E>>,
}

impl<E: Elem> Linear<E> {
    pub fn new(rng: &Rng, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Linear {
            weight: fan_in_tensor(rng, &join(name, "w"), &[in_dim, out_dim], in_dim),
            bias: bias.then(|| fan_in_tensor(rng, &join(name, "b"), &[out_dim], in_dim)),
        }
    }

    pub fn zeroed(in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Linear {
            weight: Tensor::init(&[in_dim, out_dim], Initializer::Zeros, 0, true),
            bias: bias.then(|| Tensor::init(&[out_dim], Initializer::Zeros, 0, true)),
        }
    }

    /// Fan-in uniform shrunk by `scale`, with a zero bias.
    pub fn scaled_uniform(rng: &Rng, name: &str, in_dim: usize, out_dim: usize, scale: f64) -> Self {
        let bound = scale / (in_dim.max(1) as f64).sqrt();
        Linear {
            weight: Tensor::init(
                &[in_dim, out_dim],
                Initializer::Uniform { a: -bound, b: bound },
                rng.seed_for(&join(name, "w")),
                true,
            ),
            bias: Some(Tensor::init(&[out_dim], Initializer::Zeros, 0, true)),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

impl<E: Elem> Params<E> for Linear<E> {
    fn visit_learnable(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        f(&join(prefix, "w"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "b"), b);
        }
    }

    fn state(&self, prefix: &str, out: &mut Vec<StateEntry<E>>) {
        out.push((join(prefix, "w"), self.weight.shape().to_vec(), self.weight.to_vec()));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "b"), b.shape().to_vec(), b.to_vec()));
        }
    }

    fn load_state(&mut self, prefix: &str, src: &HashMap<String, (Vec<usize>, Vec<E>)>) -> Result<()> {
        load_one(&mut self.weight, &join(prefix, "w"), src)?;
        if let Some(b) = &mut self.bias {
            load_one(b, &join(prefix, "b"), src)?;
        }
        Ok(())
    }
}
