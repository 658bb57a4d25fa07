//! Minimal dense feed-forward network with backpropagation. Used for the
//! world model regressors/classifier, the NFQ Q-function and the PSONN
//! policy body.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Rectifier,
    Identity,
    Tanh,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    SquaredError,
    CrossEntropy,
}

/// Dense multi-layer perceptron. Weight matrices are row-major,
/// `weights[l][out * in_width + in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activations: Vec<Activation>,
}

impl Mlp {
    /// Fan-in scaled uniform initialization, deterministic per seed.
    pub fn init(layer_sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArgument(
                "an MLP needs at least an input and an output layer".into(),
            ));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::Dimension {
                expected: layer_sizes.len() - 1,
                got: activations.len(),
                context: "one activation per non-input layer",
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_sizes.len() - 1 {
            let fan_in = layer_sizes[l];
            let fan_out = layer_sizes[l + 1];
            let bound = (3.0 / fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activations: activations.to_vec(),
        })
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.pop().unwrap())
    }

    /// Post-activation outputs of every layer, input first.
    fn forward_cached(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_width() {
            return Err(Error::Dimension {
                expected: self.input_width(),
                got: x.len(),
                context: "forward input",
            });
        }
        let mut acts = Vec::with_capacity(self.layer_sizes.len());
        acts.push(x.to_vec());
        for l in 0..self.weights.len() {
            let inp = &acts[l];
            let out_w = self.layer_sizes[l + 1];
            let in_w = self.layer_sizes[l];
            let mut z = self.biases[l].clone();
            for o in 0..out_w {
                let row = &self.weights[l][o * in_w..(o + 1) * in_w];
                let mut acc = 0.0;
                for (w, v) in row.iter().zip(inp) {
                    acc += w * v;
                }
                z[o] += acc;
            }
            apply_activation(self.activations[l], &mut z);
            acts.push(z);
        }
        Ok(acts)
    }

    /// Exact backpropagation gradients of the configured loss at one sample.
    pub fn gradient(&self, x: &[f64], target: &[f64], loss: Loss) -> Result<Gradients> {
        let mut grads = Gradients::zeros(self);
        self.accumulate_gradient(x, target, loss, &mut grads)?;
        Ok(grads)
    }

    fn accumulate_gradient(
        &self,
        x: &[f64],
        target: &[f64],
        loss: Loss,
        grads: &mut Gradients,
    ) -> Result<f64> {
        if target.len() != self.output_width() {
            return Err(Error::Dimension {
                expected: self.output_width(),
                got: target.len(),
                context: "gradient target",
            });
        }
        let acts = self.forward_cached(x)?;
        let y = acts.last().unwrap();
        let out_act = *self.activations.last().unwrap();
        let sample_loss = match loss {
            Loss::SquaredError => {
                0.5 * y.iter().zip(target).map(|(a, t)| (a - t) * (a - t)).sum::<f64>()
            }
            Loss::CrossEntropy => -y
                .iter()
                .zip(target)
                .map(|(a, t)| t * a.max(1e-300).ln())
                .sum::<f64>(),
        };
        // Output-layer delta (d loss / d pre-activation).
        let mut delta: Vec<f64> = match (loss, out_act) {
            (Loss::CrossEntropy, Activation::Softmax) | (Loss::SquaredError, Activation::Identity) => {
                y.iter().zip(target).map(|(a, t)| a - t).collect()
            }
            (Loss::SquaredError, act) => {
                let mut d: Vec<f64> = y.iter().zip(target).map(|(a, t)| a - t).collect();
                mul_activation_jacobian(act, y, &mut d);
                d
            }
            (Loss::CrossEntropy, _) => {
                return Err(Error::InvalidArgument(
                    "cross-entropy requires a softmax output layer".into(),
                ))
            }
        };
        for l in (0..self.weights.len()).rev() {
            let inp = &acts[l];
            let in_w = self.layer_sizes[l];
            let out_w = self.layer_sizes[l + 1];
            for o in 0..out_w {
                grads.biases[l][o] += delta[o];
                let row = &mut grads.weights[l][o * in_w..(o + 1) * in_w];
                for (g, v) in row.iter_mut().zip(inp) {
                    *g += delta[o] * v;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; in_w];
                for o in 0..out_w {
                    let row = &self.weights[l][o * in_w..(o + 1) * in_w];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += delta[o] * w;
                    }
                }
                mul_activation_jacobian(self.activations[l - 1], &acts[l], &mut prev);
                delta = prev;
            }
        }
        Ok(sample_loss)
    }

    pub fn mean_loss(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>], loss: Loss) -> Result<f64> {
        let mut total = 0.0;
        for (x, t) in inputs.iter().zip(targets) {
            let y = self.forward(x)?;
            total += match loss {
                Loss::SquaredError => {
                    0.5 * y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                }
                Loss::CrossEntropy => {
                    -y.iter().zip(t).map(|(a, b)| b * a.max(1e-300).ln()).sum::<f64>()
                }
            };
        }
        Ok(total / inputs.len() as f64)
    }

    /// Flat parameter view (weights then biases, layer by layer), used by
    /// PSO weight optimization.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                got: flat.len(),
                context: "flat parameter vector",
            });
        }
        let mut it = flat.iter();
        for l in 0..self.weights.len() {
            for w in self.weights[l].iter_mut() {
                *w = *it.next().unwrap();
            }
            for b in self.biases[l].iter_mut() {
                *b = *it.next().unwrap();
            }
        }
        Ok(())
    }
}

fn apply_activation(act: Activation, z: &mut [f64]) {
    match act {
        Activation::Identity => {}
        Activation::Rectifier => {
            for v in z.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Tanh => {
            for v in z.iter_mut() {
                *v = v.tanh();
            }
        }
        Activation::Softmax => {
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in z.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in z.iter_mut() {
                *v /= sum;
            }
        }
    }
}

/// Multiply a vector elementwise by the activation derivative expressed in
/// terms of the post-activation output. Softmax is only supported fused with
/// cross-entropy and must not reach this path.
fn mul_activation_jacobian(act: Activation, out: &[f64], d: &mut [f64]) {
    match act {
        Activation::Identity => {}
        Activation::Rectifier => {
            for (v, o) in d.iter_mut().zip(out) {
                if *o <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Tanh => {
            for (v, o) in d.iter_mut().zip(out) {
                *v *= 1.0 - o * o;
            }
        }
        Activation::Softmax => unreachable!("softmax gradient is fused with cross-entropy"),
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(m: &Mlp) -> Self {
        Self {
            weights: m.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: m.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn scale(&mut self, f: f64) {
        for w in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v *= f;
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier applied every `decay_every` epochs.
    pub decay_factor: f64,
    pub decay_every: usize,
    pub momentum: f64,
    pub loss: Loss,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of the data held out for validation.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            minibatch: 32,
            learning_rate: 0.05,
            decay_factor: 0.5,
            decay_every: 50,
            momentum: 0.9,
            loss: Loss::SquaredError,
            seed: 0,
            patience: 30,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::InvalidArgument(
                "epochs and minibatch must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidArgument(
                "validation fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Mini-batch gradient descent with momentum and step-decay learning rate.
/// Returns the best-validation checkpoint and the per-epoch validation loss
/// history. Deterministic per seed.
pub fn train(
    model: &Mlp,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<(Mlp, Vec<f64>)> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyData("training set"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::Dimension {
            expected: inputs.len(),
            got: targets.len(),
            context: "inputs vs targets",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    shuffle(&mut order, &mut rng);
    let n_val = ((inputs.len() as f64) * cfg.validation_fraction).round() as usize;
    let n_val = n_val.min(inputs.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();

    let mut m = model.clone();
    let mut velocity = Gradients::zeros(&m);
    let val_in: Vec<Vec<f64>> = val_idx.iter().map(|&i| inputs[i].clone()).collect();
    let val_tg: Vec<Vec<f64>> = val_idx.iter().map(|&i| targets[i].clone()).collect();
    let eval_set = |m: &Mlp, tin: &[Vec<f64>], ttg: &[Vec<f64>]| -> Result<f64> {
        m.mean_loss(tin, ttg, cfg.loss)
    };

    let mut best = m.clone();
    let mut best_val = if val_idx.is_empty() {
        f64::INFINITY
    } else {
        eval_set(&m, &val_in, &val_tg)?
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut since_improve = 0usize;
    let mut lr = cfg.learning_rate;

    for epoch in 0..cfg.epochs {
        if epoch > 0 && cfg.decay_every > 0 && epoch % cfg.decay_every == 0 {
            lr *= cfg.decay_factor;
        }
        shuffle(&mut train_idx, &mut rng);
        for chunk in train_idx.chunks(cfg.minibatch) {
            let mut grads = Gradients::zeros(&m);
            let mut batch_loss = 0.0;
            for &i in chunk {
                batch_loss += m.accumulate_gradient(&inputs[i], &targets[i], cfg.loss, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged(format!("epoch {epoch}")));
            }
            grads.scale(1.0 / chunk.len() as f64);
            for l in 0..m.weights.len() {
                for (v, g) in velocity.weights[l].iter_mut().zip(&grads.weights[l]) {
                    *v = cfg.momentum * *v - lr * g;
                }
                for (w, v) in m.weights[l].iter_mut().zip(&velocity.weights[l]) {
                    *w += v;
                }
                for (v, g) in velocity.biases[l].iter_mut().zip(&grads.biases[l]) {
                    *v = cfg.momentum * *v - lr * g;
                }
                for (b, v) in m.biases[l].iter_mut().zip(&velocity.biases[l]) {
                    *b += v;
                }
            }
        }
        let val_loss = if val_idx.is_empty() {
            eval_set(&m, inputs, targets)?
        } else {
            eval_set(&m, &val_in, &val_tg)?
        };
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged(format!("epoch {epoch}")));
        }
        history.push(val_loss);
        if val_loss < best_val {
            best_val = val_loss;
            best = m.clone();
            since_improve = 0;
        } else {
            since_improve += 1;
            if since_improve > cfg.patience {
                break;
            }
        }
    }
    Ok((best, history))
}

/// Fisher-Yates with an explicit RNG, kept local for seed stability.
fn shuffle(v: &mut [usize], rng: &mut impl Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let sizes = [5usize, 10, 10, 10, 1];
        let acts = [
            Activation::Rectifier,
            Activation::Rectifier,
            Activation::Rectifier,
            Activation::Identity,
        ];
        let a = Mlp::init(&sizes, &acts, 7).unwrap();
        let b = Mlp::init(&sizes, &acts, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.weights[0].len(), 50);
        assert_eq!(a.weights[3].len(), 10);
        let c = Mlp::init(&[2, 3], &[Activation::Identity], 1).unwrap();
        let d = Mlp::init(&[2, 3], &[Activation::Identity], 2).unwrap();
        assert_ne!(c.weights, d.weights);
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let mut m = Mlp::init(&[1, 1], &[Activation::Identity], 3).unwrap();
        m.weights[0][0] = 2.5;
        m.biases[0][0] = -1.0;
        assert_abs_diff_eq!(m.forward(&[2.0]).unwrap()[0], 4.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_weights_rectifier_outputs_zero() {
        let mut m = Mlp::init(
            &[3, 4, 2],
            &[Activation::Rectifier, Activation::Identity],
            0,
        )
        .unwrap();
        for w in m.weights.iter_mut() {
            w.iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn softmax_normalizes() {
        let m = Mlp::init(&[4, 3], &[Activation::Softmax], 11).unwrap();
        let y = m.forward(&[0.3, -1.0, 2.0, 0.1]).unwrap();
        assert!(y.iter().all(|v| *v > 0.0));
        assert_abs_diff_eq!(y.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    // Independent forward oracle: plain nested loops, no shared code path.
    fn forward_oracle(m: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in 0..m.weights.len() {
            let in_w = m.layer_sizes[l];
            let out_w = m.layer_sizes[l + 1];
            let mut next = vec![0.0; out_w];
            for o in 0..out_w {
                let mut z = m.biases[l][o];
                for i in 0..in_w {
                    z += m.weights[l][o * in_w + i] * cur[i];
                }
                next[o] = z;
            }
            match m.activations[l] {
                Activation::Identity => {}
                Activation::Rectifier => next.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Tanh => next.iter_mut().for_each(|v| *v = v.tanh()),
                Activation::Softmax => {
                    let mx = next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = next.iter().map(|v| (v - mx).exp()).sum();
                    next.iter_mut().for_each(|v| *v = (*v - mx).exp() / s);
                }
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn forward_matches_matrix_oracle() {
        let m = Mlp::init(
            &[4, 6, 5, 2],
            &[Activation::Tanh, Activation::Rectifier, Activation::Identity],
            99,
        )
        .unwrap();
        let x = [0.3, -0.7, 1.2, 0.05];
        let a = m.forward(&x).unwrap();
        let b = forward_oracle(&m, &x);
        for (u, v) in a.iter().zip(&b) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_zero_at_exact_fit() {
        let mut m = Mlp::init(&[1, 1], &[Activation::Identity], 5).unwrap();
        m.weights[0][0] = 1.0;
        m.biases[0][0] = 0.0;
        let g = m.gradient(&[0.5], &[0.5], Loss::SquaredError).unwrap();
        assert_eq!(g.weights[0][0], 0.0);
        assert_eq!(g.biases[0][0], 0.0);
    }

    /// Central finite differences over every parameter.
    fn fd_check(m: &Mlp, x: &[f64], t: &[f64], loss: Loss) {
        let h = 1e-5;
        let analytic = m.gradient(x, t, loss).unwrap();
        let loss_at = |m: &Mlp| m.mean_loss(&[x.to_vec()], &[t.to_vec()], loss).unwrap();
        for l in 0..m.weights.len() {
            for i in 0..m.weights[l].len() {
                let mut p = m.clone();
                p.weights[l][i] += h;
                let mut q = m.clone();
                q.weights[l][i] -= h;
                let num = (loss_at(&p) - loss_at(&q)) / (2.0 * h);
                let a = analytic.weights[l][i];
                let denom = num.abs().max(a.abs()).max(1e-6);
                assert!(
                    ((a - num) / denom).abs() <= 1e-4,
                    "layer {l} w[{i}]: analytic {a} vs fd {num}"
                );
            }
            for i in 0..m.biases[l].len() {
                let mut p = m.clone();
                p.biases[l][i] += h;
                let mut q = m.clone();
                q.biases[l][i] -= h;
                let num = (loss_at(&p) - loss_at(&q)) / (2.0 * h);
                let a = analytic.biases[l][i];
                let denom = num.abs().max(a.abs()).max(1e-6);
                assert!(
                    ((a - num) / denom).abs() <= 1e-4,
                    "layer {l} b[{i}]: analytic {a} vs fd {num}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = Mlp::init(
            &[3, 5, 4, 2],
            &[Activation::Tanh, Activation::Rectifier, Activation::Identity],
            21,
        )
        .unwrap();
        fd_check(&m, &[0.4, -0.2, 0.9], &[0.3, -0.1], Loss::SquaredError);
        let c = Mlp::init(
            &[3, 5, 3],
            &[Activation::Rectifier, Activation::Softmax],
            22,
        )
        .unwrap();
        fd_check(&c, &[0.4, -0.2, 0.9], &[0.0, 1.0, 0.0], Loss::CrossEntropy);
    }

    #[test]
    fn softmax_cross_entropy_delta_is_probs_minus_target() {
        let m = Mlp::init(&[2, 3], &[Activation::Softmax], 8).unwrap();
        let x = [0.7, -0.3];
        let t = [0.0, 0.0, 1.0];
        let y = m.forward(&x).unwrap();
        let g = m.gradient(&x, &t, Loss::CrossEntropy).unwrap();
        // bias gradient of the output layer equals the output delta
        for k in 0..3 {
            assert_abs_diff_eq!(g.biases[0][k], y[k] - t[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn train_fits_linear_target() {
        let m = Mlp::init(&[1, 8, 1], &[Activation::Tanh, Activation::Identity], 4).unwrap();
        let inputs: Vec<Vec<f64>> = (0..100).map(|i| vec![(i as f64) / 50.0 - 1.0]).collect();
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| vec![2.0 * x[0]]).collect();
        let cfg = TrainConfig {
            epochs: 400,
            minibatch: 10,
            learning_rate: 0.05,
            seed: 1,
            ..TrainConfig::default()
        };
        let (fit, history) = train(&m, &inputs, &targets, &cfg).unwrap();
        let val = fit.mean_loss(&inputs, &targets, Loss::SquaredError).unwrap();
        assert!(val <= 1e-3, "validation MSE {val}");
        assert!(!history.is_empty());
    }

    #[test]
    fn one_epoch_changes_weights_and_zero_epochs_rejected() {
        let m = Mlp::init(&[1, 2, 1], &[Activation::Tanh, Activation::Identity], 4).unwrap();
        let inputs = vec![vec![0.5]; 10];
        let targets = vec![vec![1.0]; 10];
        let mut cfg = TrainConfig {
            epochs: 1,
            patience: 10,
            ..TrainConfig::default()
        };
        let (fit, _) = train(&m, &inputs, &targets, &cfg).unwrap();
        assert_ne!(fit.weights, m.weights);
        cfg.epochs = 0;
        assert!(train(&m, &inputs, &targets, &cfg).is_err());
    }

    #[test]
    fn training_is_bit_reproducible() {
        let m = Mlp::init(&[2, 4, 1], &[Activation::Tanh, Activation::Identity], 9).unwrap();
        let inputs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 20.0, 1.0 - i as f64 / 40.0]).collect();
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| vec![x[0] - x[1]]).collect();
        let cfg = TrainConfig {
            epochs: 20,
            seed: 3,
            ..TrainConfig::default()
        };
        let (a, ha) = train(&m, &inputs, &targets, &cfg).unwrap();
        let (b, hb) = train(&m, &inputs, &targets, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }
}
