use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub use_batchnorm: bool,
    pub final_activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, use_batchnorm: bool, final_activation: Activation) -> Self {
        MlpSpec {
            widths,
            use_batchnorm,
            final_activation,
        }
    }

    /// Linear map only (no normalization, no activation).
    pub fn linear(width: usize) -> Self {
        MlpSpec::new(vec![width], false, Activation::None)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "mlp widths must be non-empty and ≥ 1, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    pub fn out_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    fn layer_has_relu(&self, l: usize) -> bool {
        l + 1 < self.widths.len() || self.final_activation == Activation::Relu
    }

    fn layer_has_bn(&self, l: usize) -> bool {
        self.use_batchnorm && self.layer_has_relu(l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub bn: Option<BatchNorm>,
    pub relu: bool,
}

/// Parameters of one shared MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub in_width: usize,
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub scale: Option<Array1<f64>>,
    pub shift: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<DenseGrad>,
}

#[derive(Debug, Clone)]
struct DenseTape {
    input: Array2<f64>,
    /// Normalized pre-activations (BN layers only).
    xhat: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    batch_mean: Option<Array1<f64>>,
    batch_var: Option<Array1<f64>>,
    /// Post-activation output; its sign gives the ReLU mask.
    output: Array2<f64>,
}

/// Values recorded by [`Mlp::forward`], consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpTape {
    mode: Mode,
    layers: Vec<DenseTape>,
}

impl MlpTape {
    pub fn rows(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input.nrows())
    }

    /// Per BN layer: the batch mean and variance seen in train mode.
    pub fn batch_stats(&self) -> impl Iterator<Item = Option<(&Array1<f64>, &Array1<f64>)>> {
        self.layers
            .iter()
            .map(|l| l.batch_mean.as_ref().zip(l.batch_var.as_ref()))
    }

    /// Discrete structure (ReLU activity pattern); used to detect kinks.
    pub fn hash_structure(&self, h: &mut impl std::hash::Hasher) {
        for l in &self.layers {
            let mut word = 0u64;
            for (k, v) in l.output.iter().enumerate() {
                word = word.rotate_left(1) ^ u64::from(*v > 0.0);
                if k % 64 == 63 {
                    h.write_u64(word);
                }
            }
            h.write_u64(word);
        }
    }
}

impl Mlp {
    /// Uniform `±sqrt(6/(in+out))` weights, zero bias, unit BN scale.
    pub fn init(spec: &MlpSpec, in_width: usize, seed: Seed) -> Result<Mlp> {
        spec.validate()?;
        let mut rng = seed.rng();
        let mut layers = Vec::with_capacity(spec.widths.len());
        let mut fan_in = in_width;
        for (l, &out) in spec.widths.iter().enumerate() {
            let bound = (6.0 / (fan_in + out) as f64).sqrt();
            let weight = Array2::from_shape_fn((out, fan_in), |_| rng.random_range(-bound..=bound));
            let bn = spec.layer_has_bn(l).then(|| BatchNorm {
                scale: Array1::ones(out),
                shift: Array1::zeros(out),
                running_mean: Array1::zeros(out),
                running_var: Array1::ones(out),
            });
            layers.push(Dense {
                weight,
                bias: Array1::zeros(out),
                bn,
                relu: spec.layer_has_relu(l),
            });
            fan_in = out;
        }
        Ok(Mlp { in_width, layers })
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().map_or(self.in_width, |l| l.weight.nrows())
    }

    pub fn forward(
        &self,
        input: ArrayView2<f64>,
        mode: Mode,
        bn: &BatchNormConfig,
    ) -> Result<(Array2<f64>, MlpTape)> {
        if input.ncols() != self.in_width {
            return Err(Error::ShapeMismatch(format!(
                "mlp expects {} input columns, got {}",
                self.in_width,
                input.ncols()
            )));
        }
        if input.nrows() == 0 {
            return Err(Error::ShapeMismatch("mlp input has no rows".into()));
        }
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        for layer in &self.layers {
            let mut y = x.dot(&layer.weight.t());
            y += &layer.bias;
            let (mut xhat, mut inv_std, mut bmean, mut bvar) = (None, None, None, None);
            if let Some(norm) = &layer.bn {
                let (mean, var) = match mode {
                    Mode::Train => {
                        let mean = y.mean_axis(Axis(0)).expect("rows > 0");
                        let var = y.var_axis(Axis(0), 0.0);
                        bmean = Some(mean.clone());
                        bvar = Some(var.clone());
                        (mean, var)
                    }
                    Mode::Infer => (norm.running_mean.clone(), norm.running_var.clone()),
                };
                let istd = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                let xh = (&y - &mean) * &istd;
                y = &xh * &norm.scale + &norm.shift;
                xhat = Some(xh);
                inv_std = Some(istd);
            }
            if layer.relu {
                y.mapv_inplace(|v| v.max(0.0));
            }
            tapes.push(DenseTape {
                input: x,
                xhat,
                inv_std,
                batch_mean: bmean,
                batch_var: bvar,
                output: y.clone(),
            });
            x = y;
        }
        Ok((x, MlpTape { mode, layers: tapes }))
    }

    /// Exact gradients of the forward map: returns `(grad_input, grad_params)`.
    pub fn backward(&self, tape: &MlpTape, grad_out: ArrayView2<f64>) -> Result<(Array2<f64>, MlpGrad)> {
        let last = tape
            .layers
            .last()
            .ok_or_else(|| Error::ShapeMismatch("empty tape".into()))?;
        if grad_out.dim() != last.output.dim() {
            return Err(Error::ShapeMismatch(format!(
                "grad_out {:?} vs forward output {:?}",
                grad_out.dim(),
                last.output.dim()
            )));
        }
        let mut g = grad_out.to_owned();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (layer, t) in self.layers.iter().zip(&tape.layers).rev() {
            if layer.relu {
                ndarray::Zip::from(&mut g)
                    .and(&t.output)
                    .for_each(|gv, &o| {
                        if o <= 0.0 {
                            *gv = 0.0;
                        }
                    });
            }
            let (mut scale_g, mut shift_g) = (None, None);
            if let Some(norm) = &layer.bn {
                let xhat = t.xhat.as_ref().expect("bn tape");
                let istd = t.inv_std.as_ref().expect("bn tape");
                shift_g = Some(g.sum_axis(Axis(0)));
                scale_g = Some((&g * xhat).sum_axis(Axis(0)));
                let dxhat = &g * &norm.scale;
                g = match tape.mode {
                    Mode::Infer => dxhat * istd,
                    Mode::Train => {
                        let b = g.nrows() as f64;
                        let sum_d = dxhat.sum_axis(Axis(0));
                        let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                        let mut dy = dxhat * b;
                        dy -= &sum_d;
                        dy -= &(xhat * &sum_dx);
                        dy * &(istd / b)
                    }
                };
            }
            let weight_g = g.t().dot(&t.input);
            let bias_g = g.sum_axis(Axis(0));
            let gin = g.dot(&layer.weight);
            grads.push(DenseGrad {
                weight: weight_g,
                bias: bias_g,
                scale: scale_g,
                shift: shift_g,
            });
            g = gin;
        }
        grads.reverse();
        Ok((g, MlpGrad { layers: grads }))
    }

    /// Exponential moving average of BN running statistics from a
    /// train-mode tape: `running = m·running + (1 − m)·batch`.
    pub fn update_running_stats(&mut self, tape: &MlpTape, momentum: f64) {
        for (layer, stats) in self.layers.iter_mut().zip(tape.batch_stats()) {
            if let (Some(norm), Some((mean, var))) = (layer.bn.as_mut(), stats) {
                norm.running_mean
                    .zip_mut_with(mean, |r, &b| *r = momentum * *r + (1.0 - momentum) * b);
                norm.running_var.zip_mut_with(var, |r, &b| {
                    *r = (momentum * *r + (1.0 - momentum) * b).max(1e-12)
                });
            }
        }
    }

    /// Trainable tensors in a fixed order, with stable names.
    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        for (l, d) in self.layers.iter().enumerate() {
            let (o, i) = d.weight.dim();
            f(format!("{prefix}.{l}.weight"), &[o, i], d.weight.as_slice().expect("contiguous"));
            f(format!("{prefix}.{l}.bias"), &[o], d.bias.as_slice().expect("contiguous"));
            if let Some(bn) = &d.bn {
                f(format!("{prefix}.{l}.bn_scale"), &[o], bn.scale.as_slice().expect("contiguous"));
                f(format!("{prefix}.{l}.bn_shift"), &[o], bn.shift.as_slice().expect("contiguous"));
            }
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        for (l, d) in self.layers.iter_mut().enumerate() {
            f(format!("{prefix}.{l}.weight"), d.weight.as_slice_mut().expect("contiguous"));
            f(format!("{prefix}.{l}.bias"), d.bias.as_slice_mut().expect("contiguous"));
            if let Some(bn) = &mut d.bn {
                f(format!("{prefix}.{l}.bn_scale"), bn.scale.as_slice_mut().expect("contiguous"));
                f(format!("{prefix}.{l}.bn_shift"), bn.shift.as_slice_mut().expect("contiguous"));
            }
        }
    }

    /// Running statistics (not trainable), same naming scheme.
    pub fn visit_stats_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        for (l, d) in self.layers.iter_mut().enumerate() {
            if let Some(bn) = &mut d.bn {
                f(format!("{prefix}.{l}.bn_running_mean"), bn.running_mean.as_slice_mut().expect("contiguous"));
                f(format!("{prefix}.{l}.bn_running_var"), bn.running_var.as_slice_mut().expect("contiguous"));
            }
        }
    }

    pub fn zero_grad(&self) -> MlpGrad {
        MlpGrad {
            layers: self
                .layers
                .iter()
                .map(|d| DenseGrad {
                    weight: Array2::zeros(d.weight.dim()),
                    bias: Array1::zeros(d.bias.len()),
                    scale: d.bn.as_ref().map(|b| Array1::zeros(b.scale.len())),
                    shift: d.bn.as_ref().map(|b| Array1::zeros(b.shift.len())),
                })
                .collect(),
        }
    }
}

impl MlpGrad {
    pub fn add_assign(&mut self, other: &MlpGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
            if let (Some(x), Some(y)) = (a.scale.as_mut(), b.scale.as_ref()) {
                *x += y;
            }
            if let (Some(x), Some(y)) = (a.shift.as_mut(), b.shift.as_ref()) {
                *x += y;
            }
        }
    }

    /// Same order as [`Mlp::visit`].
    pub fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        for d in &self.layers {
            f(d.weight.as_slice().expect("contiguous"));
            f(d.bias.as_slice().expect("contiguous"));
            if let Some(s) = &d.scale {
                f(s.as_slice().expect("contiguous"));
            }
            if let Some(s) = &d.shift {
                f(s.as_slice().expect("contiguous"));
            }
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for d in &mut self.layers {
            f(d.weight.as_slice_mut().expect("contiguous"));
            f(d.bias.as_slice_mut().expect("contiguous"));
            if let Some(s) = &mut d.scale {
                f(s.as_slice_mut().expect("contiguous"));
            }
            if let Some(s) = &mut d.shift {
                f(s.as_slice_mut().expect("contiguous"));
            }
        }
    }
}
