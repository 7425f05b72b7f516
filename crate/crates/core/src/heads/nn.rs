//! Minimal dense-network kernel shared by all trainable heads.
//!
//! Everything is `f64` and batch-first: inputs are `[batch, features]`
//! matrices. The only network shape needed here is an optional pair of
//! per-modality projection layers followed by a linear stack (the "trunk"),
//! with rectifier nonlinearities and inverted dropout between layers and a
//! bare linear output. That one shape covers the single-modality heads, the
//! early-fusion head, and the late-fusion combiner.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A fully-connected layer; `w` is `[in, out]` so a batch maps as `x·w + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    /// Fan-in-scaled uniform initialization, `U(±1/√in_dim)`.
    pub fn seeded(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Linear {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = Array2::from_shape_fn((in_dim, out_dim), |_| rng.random_range(-bound..=bound));
        let b = Array1::from_shape_fn(out_dim, |_| rng.random_range(-bound..=bound));
        Linear { w, b }
    }

    /// All-zero layer. Output layers start here so an untrained head emits
    /// zero logits and predicts the documented tie-break class.
    pub fn zeros(in_dim: usize, out_dim: usize) -> Linear {
        Linear {
            w: Array2::zeros((in_dim, out_dim)),
            b: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }
}

#[derive(Debug, Clone)]
pub struct LinearGrad {
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
}

/// Network input: one feature matrix, or one per modality (audio first).
#[derive(Debug, Clone, Copy)]
pub enum NetInput<'a> {
    Single(&'a Array2<f64>),
    Dual {
        audio: &'a Array2<f64>,
        text: &'a Array2<f64>,
    },
}

impl NetInput<'_> {
    pub fn batch_len(&self) -> usize {
        match self {
            NetInput::Single(x) => x.nrows(),
            NetInput::Dual { audio, .. } => audio.nrows(),
        }
    }
}

/// Inverted-dropout masks for one batch: entries are `0` or `1/(1-p)`, so
/// inference needs no rescaling. One mask per dropout site, sampled in a
/// fixed order for determinism.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub projections: Option<(Array2<f64>, Array2<f64>)>,
    pub trunk: Vec<Array2<f64>>,
}

/// The shared trainable shape: optional per-modality projections feeding a
/// concatenation, then a linear stack ending in logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    /// `(audio, text)` projection layers; present only for early fusion.
    pub projections: Option<(Linear, Linear)>,
    pub trunk: Vec<Linear>,
    /// Dropout probability applied after every rectifier during training.
    pub dropout: f64,
}

/// Intermediate activations retained for the backward pass.
pub struct NetCache {
    proj_pre: Option<(Array2<f64>, Array2<f64>)>,
    /// Input to each trunk layer (so `trunk_inputs[0]` is the concatenated
    /// projection output, or the raw input when there are no projections).
    trunk_inputs: Vec<Array2<f64>>,
    trunk_pre: Vec<Array2<f64>>,
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

fn relu_grad_inplace(d: &mut Array2<f64>, pre: &Array2<f64>) {
    d.zip_mut_with(pre, |g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
}

fn apply_mask(h: &mut Array2<f64>, mask: Option<&Array2<f64>>) {
    if let Some(m) = mask {
        *h *= m;
    }
}

impl Net {
    pub fn layers(&self) -> Vec<&Linear> {
        let mut v = Vec::new();
        if let Some((a, t)) = &self.projections {
            v.push(a);
            v.push(t);
        }
        v.extend(self.trunk.iter());
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Linear> {
        let mut v = Vec::new();
        if let Some((a, t)) = &mut self.projections {
            v.push(a);
            v.push(t);
        }
        v.extend(self.trunk.iter_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// Sample one batch's dropout masks. Draw order is fixed (audio
    /// projection, text projection, trunk sites in depth order).
    pub fn sample_masks(&self, batch: usize, rng: &mut ChaCha8Rng) -> DropoutMasks {
        let keep = 1.0 - self.dropout;
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
        };
        let projections = self
            .projections
            .as_ref()
            .map(|(a, t)| (draw(batch, a.out_dim()), draw(batch, t.out_dim())));
        let trunk = self
            .trunk
            .iter()
            .take(self.trunk.len().saturating_sub(1))
            .map(|l| draw(batch, l.out_dim()))
            .collect();
        DropoutMasks { projections, trunk }
    }

    /// Forward pass. Passing `masks: None` is inference mode; training mode
    /// passes the masks that the backward pass will reuse.
    pub fn forward(&self, input: NetInput<'_>, masks: Option<&DropoutMasks>) -> Array2<f64> {
        self.forward_cached(input, masks).0
    }

    pub fn forward_cached(
        &self,
        input: NetInput<'_>,
        masks: Option<&DropoutMasks>,
    ) -> (Array2<f64>, NetCache) {
        let (first, proj_pre) = match (&self.projections, input) {
            (Some((proj_a, proj_t)), NetInput::Dual { audio, text }) => {
                let pre_a = proj_a.forward(audio);
                let pre_t = proj_t.forward(text);
                let mut h_a = relu(&pre_a);
                let mut h_t = relu(&pre_t);
                let (mask_a, mask_t) = match masks.and_then(|m| m.projections.as_ref()) {
                    Some((a, t)) => (Some(a), Some(t)),
                    None => (None, None),
                };
                apply_mask(&mut h_a, mask_a);
                apply_mask(&mut h_t, mask_t);
                let concat =
                    ndarray::concatenate(Axis(1), &[h_a.view(), h_t.view()]).expect("same batch");
                (concat, Some((pre_a, pre_t)))
            }
            (None, NetInput::Single(x)) => (x.to_owned(), None),
            (Some(_), NetInput::Single(_)) => {
                panic!("dual-projection net requires both modalities")
            }
            (None, NetInput::Dual { .. }) => panic!("single-input net got two modalities"),
        };

        let mut trunk_inputs = Vec::with_capacity(self.trunk.len());
        let mut trunk_pre = Vec::with_capacity(self.trunk.len());
        let mut h = first;
        for (i, layer) in self.trunk.iter().enumerate() {
            trunk_inputs.push(h.clone());
            let pre = layer.forward(&h);
            if i + 1 < self.trunk.len() {
                let mut act = relu(&pre);
                apply_mask(&mut act, masks.map(|m| &m.trunk[i]));
                h = act;
            } else {
                h = pre.clone();
            }
            trunk_pre.push(pre);
        }
        let logits = h;
        (
            logits,
            NetCache {
                proj_pre,
                trunk_inputs,
                trunk_pre,
            },
        )
    }

    /// Backward pass for `d(loss)/d(logits)`; returns gradients in
    /// `layers()` order. `input` and `masks` must match the forward call.
    pub fn backward(
        &self,
        input: NetInput<'_>,
        cache: &NetCache,
        masks: Option<&DropoutMasks>,
        dlogits: &Array2<f64>,
    ) -> Vec<LinearGrad> {
        let mut trunk_grads: Vec<LinearGrad> = Vec::with_capacity(self.trunk.len());
        let mut d = dlogits.clone();
        for i in (0..self.trunk.len()).rev() {
            let x = &cache.trunk_inputs[i];
            trunk_grads.push(LinearGrad {
                dw: x.t().dot(&d),
                db: d.sum_axis(Axis(0)),
            });
            let mut dx = d.dot(&self.trunk[i].w.t());
            if i > 0 {
                if let Some(m) = masks {
                    dx *= &m.trunk[i - 1];
                }
                relu_grad_inplace(&mut dx, &cache.trunk_pre[i - 1]);
            }
            d = dx;
        }
        trunk_grads.reverse();

        let mut grads = Vec::with_capacity(self.trunk.len() + 2);
        if let Some((proj_a, _proj_t)) = &self.projections {
            let (audio, text) = match input {
                NetInput::Dual { audio, text } => (audio, text),
                NetInput::Single(_) => unreachable!("checked in forward"),
            };
            let (pre_a, pre_t) = cache.proj_pre.as_ref().expect("projection cache");
            let split = proj_a.out_dim();
            let mut d_a = d.slice(ndarray::s![.., ..split]).to_owned();
            let mut d_t = d.slice(ndarray::s![.., split..]).to_owned();
            if let Some((mask_a, mask_t)) = masks.and_then(|m| m.projections.as_ref()) {
                d_a *= mask_a;
                d_t *= mask_t;
            }
            relu_grad_inplace(&mut d_a, pre_a);
            relu_grad_inplace(&mut d_t, pre_t);
            grads.push(LinearGrad {
                dw: audio.t().dot(&d_a),
                db: d_a.sum_axis(Axis(0)),
            });
            grads.push(LinearGrad {
                dw: text.t().dot(&d_t),
                db: d_t.sum_axis(Axis(0)),
            });
        }
        grads.extend(trunk_grads);
        grads
    }

    /// Flattened parameter vector, in `layers()` order, `w` then `b` per
    /// layer. Used by the finite-difference gradient check.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for layer in self.layers() {
            v.extend(layer.w.iter());
            v.extend(layer.b.iter());
        }
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for layer in self.layers_mut() {
            for w in layer.w.iter_mut() {
                *w = *it.next().expect("enough parameters");
            }
            for b in layer.b.iter_mut() {
                *b = *it.next().expect("enough parameters");
            }
        }
        assert!(it.next().is_none(), "parameter vector too long");
    }
}

/// Mean softmax cross-entropy over a batch; returns the loss and
/// `d(loss)/d(logits)` (already divided by the batch size).
pub fn softmax_cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    let batch = logits.nrows();
    assert_eq!(batch, targets.len(), "one target per row");
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, row) in logits.outer_iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        loss -= (row[targets[i]] - max) - sum.ln();
        for (j, &e) in exp.iter().enumerate() {
            let p = e / sum;
            dlogits[[i, j]] = (p - if j == targets[i] { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    (loss / batch as f64, dlogits)
}

/// Adam optimizer with per-layer first/second moment state.
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: u64,
    moments: Vec<(Array2<f64>, Array1<f64>, Array2<f64>, Array1<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64, layers: &[&Linear]) -> Adam {
        let moments = layers
            .iter()
            .map(|l| {
                (
                    Array2::zeros(l.w.raw_dim()),
                    Array1::zeros(l.b.raw_dim()),
                    Array2::zeros(l.w.raw_dim()),
                    Array1::zeros(l.b.raw_dim()),
                )
            })
            .collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            moments,
        }
    }

    pub fn step(&mut self, layers: Vec<&mut Linear>, grads: &[LinearGrad]) {
        assert_eq!(layers.len(), grads.len());
        assert_eq!(layers.len(), self.moments.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let lr = self.learning_rate;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for ((layer, grad), (m_w, m_b, v_w, v_b)) in
            layers.into_iter().zip(grads).zip(self.moments.iter_mut())
        {
            ndarray::Zip::from(&mut layer.w)
                .and(&grad.dw)
                .and(m_w)
                .and(v_w)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
            ndarray::Zip::from(&mut layer.b)
                .and(&grad.db)
                .and(m_b)
                .and(v_b)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn single_net(dims: &[usize], dropout: f64, rng: &mut ChaCha8Rng) -> Net {
        let trunk = dims
            .windows(2)
            .map(|w| Linear::seeded(w[0], w[1], rng))
            .collect();
        Net {
            projections: None,
            trunk,
            dropout,
        }
    }

    /// Central finite differences against the analytic gradient.
    fn check_gradients(net: &mut Net, input: NetInput<'_>, targets: &[usize], masks: &DropoutMasks) {
        let (logits, cache) = net.forward_cached(input, Some(masks));
        let (_, dlogits) = softmax_cross_entropy(&logits, targets);
        let grads = net.backward(input, &cache, Some(masks), &dlogits);
        let mut analytic: Vec<f64> = Vec::new();
        for g in &grads {
            analytic.extend(g.dw.iter());
            analytic.extend(g.db.iter());
        }

        let base = net.flat_params();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..base.len() {
            let mut plus = base.clone();
            plus[k] += h;
            net.set_flat_params(&plus);
            let (loss_p, _) = softmax_cross_entropy(&net.forward(input, Some(masks)), targets);
            let mut minus = base.clone();
            minus[k] -= h;
            net.set_flat_params(&minus);
            let (loss_m, _) = softmax_cross_entropy(&net.forward(input, Some(masks)), targets);
            let fd = (loss_p - loss_m) / (2.0 * h);
            let denom = analytic[k].abs().max(fd.abs()).max(1e-6);
            worst = worst.max((analytic[k] - fd).abs() / denom);
        }
        net.set_flat_params(&base);
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = single_net(&[9, 6, 2], 0.3, &mut rng);
        let x = random_matrix(5, 9, &mut rng);
        let targets = [0usize, 1, 1, 0, 1];
        let masks = net.sample_masks(5, &mut rng);
        check_gradients(&mut net, NetInput::Single(&x), &targets, &masks);
    }

    #[test]
    fn gradients_match_finite_differences_dual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let proj_a = Linear::seeded(8, 4, &mut rng);
        let proj_t = Linear::seeded(8, 4, &mut rng);
        let trunk = vec![Linear::seeded(8, 5, &mut rng), Linear::seeded(5, 2, &mut rng)];
        let mut net = Net {
            projections: Some((proj_a, proj_t)),
            trunk,
            dropout: 0.3,
        };
        let audio = random_matrix(4, 8, &mut rng);
        let text = random_matrix(4, 8, &mut rng);
        let targets = [1usize, 0, 1, 0];
        let masks = net.sample_masks(4, &mut rng);
        check_gradients(&mut net, NetInput::Dual { audio: &audio, text: &text }, &targets, &masks);
    }

    #[test]
    fn gradients_match_finite_differences_combiner() {
        // The late-fusion combiner shape: a single 4→2 layer, no dropout sites.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = single_net(&[4, 2], 0.3, &mut rng);
        let x = random_matrix(6, 4, &mut rng);
        let targets = [0usize, 0, 1, 1, 0, 1];
        let masks = net.sample_masks(6, &mut rng);
        assert!(masks.trunk.is_empty());
        check_gradients(&mut net, NetInput::Single(&x), &targets, &masks);
    }

    #[test]
    fn softmax_cross_entropy_matches_hand_computation() {
        let logits = Array2::from_shape_vec((1, 2), vec![2.0, 0.0]).unwrap();
        let (loss, d) = softmax_cross_entropy(&logits, &[0]);
        // -ln(e^2 / (e^2 + 1))
        let expected = -(2.0f64.exp() / (2.0f64.exp() + 1.0)).ln();
        assert!((loss - expected).abs() < 1e-12);
        // Gradient rows sum to zero.
        assert!((d[[0, 0]] + d[[0, 1]]).abs() < 1e-12);
        assert!(d[[0, 0]] < 0.0, "true-class gradient must be negative");
    }

    #[test]
    fn softmax_is_shift_invariant_and_stable() {
        let a = Array2::from_shape_vec((2, 2), vec![1.0, -1.0, 700.0, 710.0]).unwrap();
        let b = &a + 100.0;
        let (la, da) = softmax_cross_entropy(&a, &[0, 1]);
        let (lb, db) = softmax_cross_entropy(&b, &[0, 1]);
        assert!((la - lb).abs() < 1e-9);
        assert!(da.iter().zip(db.iter()).all(|(x, y)| (x - y).abs() < 1e-9));
        assert!(la.is_finite());
    }

    #[test]
    fn inference_forward_is_deterministic_and_mask_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = single_net(&[6, 4, 2], 0.3, &mut rng);
        let x = random_matrix(3, 6, &mut rng);
        let a = net.forward(NetInput::Single(&x), None);
        let b = net.forward(NetInput::Single(&x), None);
        assert_eq!(a, b);
        // Dropout masks change the training-mode output.
        let masks = net.sample_masks(3, &mut rng);
        let c = net.forward(NetInput::Single(&x), Some(&masks));
        assert_ne!(a, c);
    }

    #[test]
    fn dropout_masks_are_inverted_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = single_net(&[4, 50, 2], 0.3, &mut rng);
        let masks = net.sample_masks(10, &mut rng);
        let m = &masks.trunk[0];
        let keep = 1.0 / 0.7;
        assert!(m.iter().all(|&v| v == 0.0 || (v - keep).abs() < 1e-12));
        let kept = m.iter().filter(|&&v| v > 0.0).count();
        // Roughly 70% kept (loose band; 500 draws).
        assert!((0.55..0.85).contains(&(kept as f64 / m.len() as f64)));
    }

    #[test]
    fn adam_reduces_loss_on_a_separable_toy_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = single_net(&[2, 8, 2], 0.0, &mut rng);
        let x = Array2::from_shape_vec(
            (4, 2),
            vec![1.0, 0.2, 0.8, -0.1, -1.0, 0.1, -0.7, -0.2],
        )
        .unwrap();
        let targets = [0usize, 0, 1, 1];
        let layers: Vec<&Linear> = net.layers();
        let mut adam = Adam::new(0.05, &layers);
        drop(layers);
        let (first_loss, _) =
            softmax_cross_entropy(&net.forward(NetInput::Single(&x), None), &targets);
        for _ in 0..200 {
            let (logits, cache) = net.forward_cached(NetInput::Single(&x), None);
            let (_, dlogits) = softmax_cross_entropy(&logits, &targets);
            let grads = net.backward(NetInput::Single(&x), &cache, None, &dlogits);
            adam.step(net.layers_mut(), &grads);
        }
        let (final_loss, _) =
            softmax_cross_entropy(&net.forward(NetInput::Single(&x), None), &targets);
        assert!(final_loss < first_loss * 0.2, "{first_loss} -> {final_loss}");
    }
}
