//! Compact deterministic actor-critic trainer.
//!
//! Everything is hand-rolled on dense matrices: small multilayer
//! perceptrons with explicit backpropagation, a FIFO replay buffer with
//! uniform sampling, target networks with soft updates, and seeded Gaussian
//! exploration noise with linear decay. Networks run in f32 by default;
//! the f64 mode exists for gradient verification against finite
//! differences.
//!
//! Determinism contract: given (seed, config), initialisation, exploration,
//! replay sampling and episode seeds all derive from one master generator,
//! so training curves reproduce exactly.

use crate::controller::RevisionFactors;
use crate::env::{AssemblyEnv, EnvError, MdpState, StateScaling, ACTION_DIM, STATE_DIM};
use ndarray::{concatenate, Array1, Array2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("non-finite loss (actor {actor}, critic {critic}); aborting update")]
    NonFiniteLoss { actor: f64, critic: f64 },
    #[error("invalid hyperparameter: {0}")]
    InvalidConfig(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint decode: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("checkpoint version {found} not supported (expected {expected})")]
    Version { expected: String, found: String },
}

/// Numeric precision of the network parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

/// Scalar type the networks are parameterised over.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Serialize
    + DeserializeOwned
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    const PRECISION: Precision;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Linear,
}

/// One dense layer: `y = act(x W^T + b)`, weights shaped (out, in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<S> {
    pub weights: Array2<S>,
    pub bias: Array1<S>,
    pub activation: Activation,
}

/// Fully connected network. The final layer's activation saturates actor
/// outputs into the action bounds; critics end linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<S> {
    pub layers: Vec<Dense<S>>,
}

/// Forward-pass cache for backpropagation.
pub struct MlpCache<S> {
    inputs: Vec<Array2<S>>,
    outputs: Vec<Array2<S>>,
}

impl<S> MlpCache<S> {
    pub fn output(&self) -> &Array2<S> {
        self.outputs.last().expect("cache has layers")
    }
}

/// Per-layer parameter gradients.
#[derive(Debug, Clone)]
pub struct MlpGrads<S> {
    pub weights: Vec<Array2<S>>,
    pub bias: Vec<Array1<S>>,
}

fn apply_activation<S: Real>(z: &mut Array2<S>, act: Activation) {
    if act == Activation::Tanh {
        z.mapv_inplace(|v| v.tanh());
    }
}

impl<S: Real> Mlp<S> {
    /// Xavier-uniform initialisation over the given layer sizes. With
    /// `zero_final` the last layer starts at zero so the initial policy is
    /// exactly neutral.
    pub fn new(
        sizes: &[usize],
        output_activation: Activation,
        zero_final: bool,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for i in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[i], sizes[i + 1]);
            let last = i == sizes.len() - 2;
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let weights = if last && zero_final {
                Array2::zeros((n_out, n_in))
            } else {
                Array2::from_shape_fn((n_out, n_in), |_| {
                    S::from_f64(rng.gen_range(-limit..limit))
                })
            };
            layers.push(Dense {
                weights,
                bias: Array1::zeros(n_out),
                activation: if last { output_activation } else { Activation::Tanh },
            });
        }
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    pub fn forward_batch(&self, x: &Array2<S>) -> Array2<S> {
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = h.dot(&layer.weights.t()) + &layer.bias;
            apply_activation(&mut z, layer.activation);
            h = z;
        }
        h
    }

    /// Single-sample forward as a one-row batch, so batched and per-sample
    /// evaluation share the exact arithmetic.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let row = Array2::from_shape_fn((1, x.len()), |(_, j)| S::from_f64(x[j]));
        self.forward_batch(&row)
            .row(0)
            .iter()
            .map(|v| Real::to_f64(*v))
            .collect()
    }

    pub fn forward_cached(&self, x: &Array2<S>) -> MlpCache<S> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            inputs.push(h.clone());
            let mut z = h.dot(&layer.weights.t()) + &layer.bias;
            apply_activation(&mut z, layer.activation);
            outputs.push(z.clone());
            h = z;
        }
        MlpCache { inputs, outputs }
    }

    /// Backpropagate `grad_out` (dL/d output, shape (B, out)) through the
    /// cached pass; returns parameter gradients and dL/d input.
    pub fn backward(&self, cache: &MlpCache<S>, grad_out: Array2<S>) -> (MlpGrads<S>, Array2<S>) {
        let n = self.layers.len();
        let mut dw = vec![Array2::zeros((0, 0)); n];
        let mut db = vec![Array1::zeros(0); n];
        let mut grad = grad_out;
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let dz = match layer.activation {
                Activation::Tanh => {
                    let a = &cache.outputs[l];
                    let one = S::one();
                    let mut dz = grad;
                    ndarray::Zip::from(&mut dz).and(a).for_each(|g, &av| {
                        *g = *g * (one - av * av);
                    });
                    dz
                }
                Activation::Linear => grad,
            };
            dw[l] = dz.t().dot(&cache.inputs[l]);
            db[l] = dz.sum_axis(Axis(0));
            grad = dz.dot(&layer.weights);
        }
        (MlpGrads { weights: dw, bias: db }, grad)
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn flat_params(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[S]) {
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = params[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = params[k];
                k += 1;
            }
        }
        assert_eq!(k, params.len());
    }

    pub fn convert<T: Real>(&self) -> Mlp<T> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weights: l.weights.mapv(|v| T::from_f64(v.to_f64())),
                    bias: l.bias.mapv(|v| T::from_f64(v.to_f64())),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

/// Blend `main` into `target`: `t = tau * main + (1 - tau) * t`.
pub fn soft_update<S: Real>(target: &mut Mlp<S>, main: &Mlp<S>, tau: f64) {
    let tau = S::from_f64(tau);
    let keep = S::one() - tau;
    for (t, m) in target.layers.iter_mut().zip(&main.layers) {
        ndarray::Zip::from(&mut t.weights)
            .and(&m.weights)
            .for_each(|t, &m| *t = tau * m + keep * *t);
        ndarray::Zip::from(&mut t.bias)
            .and(&m.bias)
            .for_each(|t, &m| *t = tau * m + keep * *t);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer over one network's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer<S> {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Option<Vec<(Array2<S>, Array1<S>)>>,
    v: Option<Vec<(Array2<S>, Array1<S>)>>,
}

impl<S: Real> Optimizer<S> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: None,
            v: None,
        }
    }

    pub fn step(&mut self, net: &mut Mlp<S>, grads: &MlpGrads<S>) {
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = S::from_f64(self.lr);
                for (layer, (gw, gb)) in net
                    .layers
                    .iter_mut()
                    .zip(grads.weights.iter().zip(&grads.bias))
                {
                    ndarray::Zip::from(&mut layer.weights)
                        .and(gw)
                        .for_each(|p, &g| *p = *p - lr * g);
                    ndarray::Zip::from(&mut layer.bias)
                        .and(gb)
                        .for_each(|p, &g| *p = *p - lr * g);
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_none() {
                    let zeros = |n: &Mlp<S>| {
                        n.layers
                            .iter()
                            .map(|l| {
                                (
                                    Array2::zeros(l.weights.raw_dim()),
                                    Array1::zeros(l.bias.raw_dim()),
                                )
                            })
                            .collect::<Vec<_>>()
                    };
                    self.m = Some(zeros(net));
                    self.v = Some(zeros(net));
                }
                self.t += 1;
                let b1 = S::from_f64(self.beta1);
                let b2 = S::from_f64(self.beta2);
                let one = S::one();
                let bc1 = S::from_f64(1.0 - self.beta1.powi(self.t as i32));
                let bc2 = S::from_f64(1.0 - self.beta2.powi(self.t as i32));
                let lr = S::from_f64(self.lr);
                let eps = S::from_f64(self.eps);
                let ms = self.m.as_mut().unwrap();
                let vs = self.v.as_mut().unwrap();
                for (((layer, (gw, gb)), mlay), vlay) in net
                    .layers
                    .iter_mut()
                    .zip(grads.weights.iter().zip(&grads.bias))
                    .zip(ms.iter_mut())
                    .zip(vs.iter_mut())
                {
                    let update = |p: &mut S, g: S, m: &mut S, v: &mut S| {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *p = *p - lr * mhat / (vhat.sqrt() + eps);
                    };
                    ndarray::Zip::from(&mut layer.weights)
                        .and(gw)
                        .and(&mut mlay.0)
                        .and(&mut vlay.0)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                    ndarray::Zip::from(&mut layer.bias)
                        .and(gb)
                        .and(&mut mlay.1)
                        .and(&mut vlay.1)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                }
            }
        }
    }
}

// ----- replay buffer ------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: [f64; STATE_DIM],
    pub action: [f64; ACTION_DIM],
    pub reward: f64,
    pub next_state: [f64; STATE_DIM],
    pub done: bool,
}

/// FIFO ring buffer with uniform random sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            items: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            head: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample(&self, batch_size: usize, rng: &mut ChaCha12Rng) -> Batch {
        assert!(!self.is_empty());
        let mut batch = Batch::with_capacity(batch_size);
        for _ in 0..batch_size {
            let idx = rng.gen_range(0..self.items.len());
            batch.push(&self.items[idx]);
        }
        batch
    }
}

/// Column-major staging of a sampled minibatch.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub states: Vec<[f64; STATE_DIM]>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<[f64; STATE_DIM]>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn with_capacity(n: usize) -> Self {
        Batch {
            states: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            next_states: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, t: &Transition) {
        self.states.push(t.state);
        self.actions.push(t.action);
        self.rewards.push(t.reward);
        self.next_states.push(t.next_state);
        self.dones.push(t.done);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states_array<S: Real>(&self) -> Array2<S> {
        to_array(&self.states)
    }

    pub fn actions_array<S: Real>(&self) -> Array2<S> {
        to_array(&self.actions)
    }

    pub fn next_states_array<S: Real>(&self) -> Array2<S> {
        to_array(&self.next_states)
    }
}

fn to_array<S: Real, const N: usize>(rows: &[[f64; N]]) -> Array2<S> {
    Array2::from_shape_fn((rows.len(), N), |(i, j)| S::from_f64(rows[i][j]))
}

// ----- actor-critic -------------------------------------------------------

/// Actor, critic and their target copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Networks<S> {
    pub actor: Mlp<S>,
    pub critic: Mlp<S>,
    pub actor_target: Mlp<S>,
    pub critic_target: Mlp<S>,
}

impl<S: Real> Networks<S> {
    pub fn new(hidden: &[usize], zero_init_final: bool, rng: &mut ChaCha12Rng) -> Self {
        let mut actor_sizes = vec![STATE_DIM];
        actor_sizes.extend_from_slice(hidden);
        actor_sizes.push(ACTION_DIM);
        let mut critic_sizes = vec![STATE_DIM + ACTION_DIM];
        critic_sizes.extend_from_slice(hidden);
        critic_sizes.push(1);
        let actor = Mlp::new(&actor_sizes, Activation::Tanh, zero_init_final, rng);
        let critic = Mlp::new(&critic_sizes, Activation::Linear, false, rng);
        Networks {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
        }
    }

    pub fn convert<T: Real>(&self) -> Networks<T> {
        Networks {
            actor: self.actor.convert(),
            critic: self.critic.convert(),
            actor_target: self.actor_target.convert(),
            critic_target: self.critic_target.convert(),
        }
    }
}

/// Deterministic policy evaluation: bounded revision factors from the
/// normalized state. The tanh head already saturates into [-1, 1]; the
/// clamp stays as the boundary guarantee.
pub fn actor_forward<S: Real>(actor: &Mlp<S>, state: &MdpState) -> RevisionFactors {
    let out = actor.forward(&state.0);
    let mut a = [0.0; ACTION_DIM];
    a.copy_from_slice(&out);
    RevisionFactors::clamped(a)
}

/// Q value of a state-action pair.
pub fn critic_forward<S: Real>(critic: &Mlp<S>, state: &MdpState, action: &[f64; ACTION_DIM]) -> f64 {
    let mut input = [0.0; STATE_DIM + ACTION_DIM];
    input[..STATE_DIM].copy_from_slice(&state.0);
    input[STATE_DIM..].copy_from_slice(action);
    critic.forward(&input)[0]
}

/// Bootstrapped regression targets `r + gamma * (1 - done) * Q'(s', pi'(s'))`.
pub fn td_targets<S: Real>(nets: &Networks<S>, batch: &Batch, gamma: f64) -> Array1<S> {
    let next = batch.next_states_array::<S>();
    let a2 = nets.actor_target.forward_batch(&next);
    let q2 = nets
        .critic_target
        .forward_batch(&concatenate![Axis(1), next, a2]);
    let g = S::from_f64(gamma);
    Array1::from_shape_fn(batch.len(), |i| {
        let bootstrap = if batch.dones[i] { S::zero() } else { g * q2[(i, 0)] };
        S::from_f64(batch.rewards[i]) + bootstrap
    })
}

/// Plain critic loss: mean squared TD error on the batch.
pub fn ddpg_critic_loss<S: Real>(nets: &Networks<S>, batch: &Batch, gamma: f64) -> f64 {
    let y = td_targets(nets, batch, gamma);
    let q = nets.critic.forward_batch(&concatenate![
        Axis(1),
        batch.states_array::<S>(),
        batch.actions_array::<S>()
    ]);
    let n = S::from_f64(batch.len() as f64);
    let mut acc = S::zero();
    for i in 0..batch.len() {
        let e = q[(i, 0)] - y[i];
        acc += e * e;
    }
    (acc / n).to_f64()
}

/// Plain actor objective: negated mean Q under the current policy.
pub fn ddpg_actor_loss<S: Real>(nets: &Networks<S>, batch: &Batch) -> f64 {
    let s = batch.states_array::<S>();
    let a = nets.actor.forward_batch(&s);
    let q = nets.critic.forward_batch(&concatenate![Axis(1), s, a]);
    let n = S::from_f64(batch.len() as f64);
    let mut acc = S::zero();
    for i in 0..batch.len() {
        acc += q[(i, 0)];
    }
    -(acc / n).to_f64()
}

/// Per-dimension distillation sources for one update: converted source
/// networks, the (source x action-dimension) weight matrix, and the two
/// balance coefficients.
pub struct DistillTerms<S> {
    pub actors: Vec<Mlp<S>>,
    pub critics: Vec<Mlp<S>>,
    /// Weight per (source, action dimension); nonnegative.
    pub weights: Vec<[f64; ACTION_DIM]>,
    pub omega_actor: f64,
    pub omega_critic: f64,
}

impl<S: Real> DistillTerms<S> {
    pub fn is_active(&self) -> bool {
        !self.actors.is_empty()
            && self
                .weights
                .iter()
                .any(|row| row.iter().any(|w| *w != 0.0))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct UpdateParams {
    pub gamma: f64,
    pub tau_target: f64,
}

/// One gradient update of critic then actor, with optional weighted
/// per-dimension distillation toward source networks, followed by the soft
/// target blend. With no active distillation the arithmetic is exactly the
/// plain deterministic actor-critic update.
pub fn update_step<S: Real>(
    nets: &mut Networks<S>,
    opt_actor: &mut Optimizer<S>,
    opt_critic: &mut Optimizer<S>,
    batch: &Batch,
    params: UpdateParams,
    distill: Option<&DistillTerms<S>>,
) -> Result<UpdateStats, RlError> {
    if batch.is_empty() {
        return Err(RlError::InvalidConfig("empty batch".into()));
    }
    let b = batch.len();
    let n = S::from_f64(b as f64);
    let distill = distill.filter(|d| d.is_active());

    // Critic regression toward the TD targets.
    let y = td_targets(nets, batch, params.gamma);
    let states = batch.states_array::<S>();
    let sa = concatenate![Axis(1), states.clone(), batch.actions_array::<S>()];
    let cache = nets.critic.forward_cached(&sa);
    let two = S::from_f64(2.0);
    let mut critic_loss = S::zero();
    let mut grad_q = Array2::<S>::zeros((b, 1));
    {
        let q = cache.output();
        for i in 0..b {
            let e = q[(i, 0)] - y[i];
            critic_loss += e * e;
            grad_q[(i, 0)] = two * e / n;
        }
        critic_loss /= n;
    }
    if let Some(d) = distill {
        // Source-critic imitation, weighted by each source's total
        // dimensional weight.
        let q = cache.output().clone();
        for (src, wrow) in d.critics.iter().zip(&d.weights) {
            let w_total: f64 = wrow.iter().sum();
            if w_total == 0.0 {
                continue;
            }
            let scale = S::from_f64(d.omega_critic * w_total);
            let q_src = src.forward_batch(&sa);
            for i in 0..b {
                let e = q[(i, 0)] - q_src[(i, 0)];
                critic_loss += scale * e * e / n;
                grad_q[(i, 0)] += scale * two * e / n;
            }
        }
    }
    let (cgrads, _) = nets.critic.backward(&cache, grad_q);
    opt_critic.step(&mut nets.critic, &cgrads);

    // Actor ascends Q through the refreshed critic, plus weighted
    // per-dimension pull toward the source actors.
    let a_cache = nets.actor.forward_cached(&states);
    let a_pred = a_cache.output().clone();
    let c_cache = nets
        .critic
        .forward_cached(&concatenate![Axis(1), states.clone(), a_pred.clone()]);
    let mut actor_loss = S::zero();
    for i in 0..b {
        actor_loss += c_cache.output()[(i, 0)];
    }
    actor_loss = -(actor_loss / n);
    let grad_neg = Array2::from_elem((b, 1), -(S::one() / n));
    let (_, grad_sa) = nets.critic.backward(&c_cache, grad_neg);
    let mut grad_a = grad_sa.slice(ndarray::s![.., STATE_DIM..]).to_owned();
    if let Some(d) = distill {
        for (src, wrow) in d.actors.iter().zip(&d.weights) {
            if wrow.iter().all(|w| *w == 0.0) {
                continue;
            }
            let a_src = src.forward_batch(&states);
            for (j, w) in wrow.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                let scale = S::from_f64(d.omega_actor * w);
                for i in 0..b {
                    let e = a_pred[(i, j)] - a_src[(i, j)];
                    actor_loss += scale * e * e / n;
                    grad_a[(i, j)] += scale * two * e / n;
                }
            }
        }
    }
    let (agrads, _) = nets.actor.backward(&a_cache, grad_a);
    opt_actor.step(&mut nets.actor, &agrads);

    let stats = UpdateStats {
        critic_loss: critic_loss.to_f64(),
        actor_loss: actor_loss.to_f64(),
    };
    if !stats.critic_loss.is_finite() || !stats.actor_loss.is_finite() {
        return Err(RlError::NonFiniteLoss {
            actor: stats.actor_loss,
            critic: stats.critic_loss,
        });
    }
    soft_update(&mut nets.actor_target, &nets.actor, params.tau_target);
    soft_update(&mut nets.critic_target, &nets.critic, params.tau_target);
    Ok(stats)
}

// ----- training loop ------------------------------------------------------

/// Trainer hyperparameters with desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpgHyper {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau_target: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Episodes that only collect data before updates begin.
    pub warmup_episodes: usize,
    pub updates_per_step: usize,
    /// Initial exploration noise (action units).
    pub noise_sigma: f64,
    pub noise_sigma_min: f64,
    /// Episodes over which the noise decays linearly to the minimum.
    pub noise_decay_episodes: usize,
    pub optimizer: OptimizerKind,
    /// Start the actor at the neutral policy (zero final layer).
    pub zero_init_final: bool,
    pub precision: Precision,
}

impl Default for DdpgHyper {
    fn default() -> Self {
        DdpgHyper {
            hidden: vec![64, 64],
            gamma: 0.95,
            tau_target: 0.01,
            actor_lr: 1e-3,
            critic_lr: 2e-3,
            batch_size: 64,
            buffer_capacity: 100_000,
            warmup_episodes: 100,
            updates_per_step: 1,
            noise_sigma: 0.4,
            noise_sigma_min: 0.05,
            noise_decay_episodes: 150,
            optimizer: OptimizerKind::Adam,
            zero_init_final: false,
            precision: Precision::F32,
        }
    }
}

impl DdpgHyper {
    pub fn validate(&self) -> Result<(), RlError> {
        if self.hidden.is_empty() {
            return Err(RlError::InvalidConfig("need at least one hidden layer".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(RlError::InvalidConfig("gamma must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.tau_target) {
            return Err(RlError::InvalidConfig("tau_target must be in [0, 1]".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(RlError::InvalidConfig("batch and buffer must be nonzero".into()));
        }
        Ok(())
    }

    pub fn noise_sigma_at(&self, episode: usize) -> f64 {
        if self.noise_decay_episodes == 0 {
            return self.noise_sigma_min;
        }
        let frac = (episode as f64 / self.noise_decay_episodes as f64).min(1.0);
        self.noise_sigma_min.max(self.noise_sigma * (1.0 - frac))
    }
}

/// Derived sub-seeds so each randomness consumer has its own stream.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeedLedger {
    pub master: u64,
    pub nets: u64,
    pub noise: u64,
    pub replay: u64,
    pub env_base: u64,
    pub similarity: u64,
}

impl SeedLedger {
    pub fn derive(master: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(master);
        SeedLedger {
            master,
            nets: rng.next_u64(),
            noise: rng.next_u64(),
            replay: rng.next_u64(),
            env_base: rng.next_u64(),
            similarity: rng.next_u64(),
        }
    }

    pub fn episode_seed(&self, episode: usize) -> u64 {
        self.env_base ^ (episode as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStat {
    pub episode: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub avg_reward: f64,
    pub success: bool,
    pub jammed: bool,
}

/// Render a reward curve as CSV.
pub fn curve_csv(curve: &[EpisodeStat]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("episode,steps,total_reward,avg_reward,success,jammed\n");
    for e in curve {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            e.episode, e.steps, e.total_reward, e.avg_reward, e.success, e.jammed
        );
    }
    out
}

/// Typed agent: networks plus optimizer state, the serialisable core of a
/// checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedAgent<S> {
    pub nets: Networks<S>,
    pub opt_actor: Optimizer<S>,
    pub opt_critic: Optimizer<S>,
}

impl<S: Real> TypedAgent<S> {
    pub fn new(hyper: &DdpgHyper, rng: &mut ChaCha12Rng) -> Self {
        TypedAgent {
            nets: Networks::new(&hyper.hidden, hyper.zero_init_final, rng),
            opt_actor: Optimizer::new(hyper.optimizer, hyper.actor_lr),
            opt_critic: Optimizer::new(hyper.optimizer, hyper.critic_lr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "precision", rename_all = "snake_case")]
pub enum AgentData {
    F32(TypedAgent<f32>),
    F64(TypedAgent<f64>),
}

pub const CHECKPOINT_VERSION: &str = "1";

/// Saved agent: everything needed to resume or evaluate -- parameters,
/// target networks, optimizer state, the observation scaling it was trained
/// with, and the hash of the experiment configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub version: String,
    pub config_hash: String,
    pub task_label: String,
    pub scaling: StateScaling,
    pub hyper: DdpgHyper,
    pub trained_episodes: usize,
    pub agent: AgentData,
}

impl AgentCheckpoint {
    pub fn precision(&self) -> Precision {
        match self.agent {
            AgentData::F32(_) => Precision::F32,
            AgentData::F64(_) => Precision::F64,
        }
    }

    /// Actor parameters widened to f64 for evaluation and similarity
    /// rollouts (exact for f32 storage).
    pub fn actor_f64(&self) -> Mlp<f64> {
        match &self.agent {
            AgentData::F32(a) => a.nets.actor.convert(),
            AgentData::F64(a) => a.nets.actor.clone(),
        }
    }

    pub fn critic_f64(&self) -> Mlp<f64> {
        match &self.agent {
            AgentData::F32(a) => a.nets.critic.convert(),
            AgentData::F64(a) => a.nets.critic.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        let data = serde_json::to_string(self)?;
        std::fs::write(path, data)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RlError> {
        let text = std::fs::read_to_string(path)?;
        let ck: AgentCheckpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(RlError::Version {
                expected: CHECKPOINT_VERSION.into(),
                found: ck.version,
            });
        }
        Ok(ck)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: AgentCheckpoint,
    pub curve: Vec<EpisodeStat>,
}

/// Train an agent on the environment for `episodes` episodes.
///
/// The first `warmup_episodes` only fill the replay buffer with
/// noise-perturbed rollouts of the current (initial) policy; afterwards
/// every step performs `updates_per_step` gradient updates. A zero budget
/// returns the untouched initial agent.
pub fn train(
    env: &mut AssemblyEnv,
    episodes: usize,
    hyper: &DdpgHyper,
    seed: u64,
) -> Result<TrainOutcome, RlError> {
    transfer_hooked_train(env, episodes, hyper, seed, None, "task")
}

/// Training loop shared by direct training and transfer training; the
/// distillation hook supplies source networks and weights when present.
pub fn transfer_hooked_train(
    env: &mut AssemblyEnv,
    episodes: usize,
    hyper: &DdpgHyper,
    seed: u64,
    distill: Option<DistillHook>,
    task_label: &str,
) -> Result<TrainOutcome, RlError> {
    hyper.validate()?;
    match hyper.precision {
        Precision::F32 => train_typed::<f32>(env, episodes, hyper, seed, distill, task_label),
        Precision::F64 => train_typed::<f64>(env, episodes, hyper, seed, distill, task_label),
    }
}

/// Precision-independent distillation payload: source parameters are stored
/// in f64 and converted to the training precision at loop start.
pub struct DistillHook {
    pub actors: Vec<Mlp<f64>>,
    pub critics: Vec<Mlp<f64>>,
    pub weights: Vec<[f64; ACTION_DIM]>,
    pub omega_actor: f64,
    pub omega_critic: f64,
    /// Transitions gathered during similarity evaluation, replayed into the
    /// buffer before training starts.
    pub seed_transitions: Vec<Transition>,
}

fn train_typed<S: Real>(
    env: &mut AssemblyEnv,
    episodes: usize,
    hyper: &DdpgHyper,
    seed: u64,
    distill: Option<DistillHook>,
    task_label: &str,
) -> Result<TrainOutcome, RlError> {
    let seeds = SeedLedger::derive(seed);
    let mut net_rng = ChaCha12Rng::seed_from_u64(seeds.nets);
    let mut noise_rng = ChaCha12Rng::seed_from_u64(seeds.noise);
    let mut replay_rng = ChaCha12Rng::seed_from_u64(seeds.replay);
    let mut agent = TypedAgent::<S>::new(hyper, &mut net_rng);
    let mut buffer = ReplayBuffer::new(hyper.buffer_capacity);
    let params = UpdateParams {
        gamma: hyper.gamma,
        tau_target: hyper.tau_target,
    };
    let distill_terms: Option<DistillTerms<S>> = distill.as_ref().map(|d| DistillTerms {
        actors: d.actors.iter().map(|a| a.convert()).collect(),
        critics: d.critics.iter().map(|c| c.convert()).collect(),
        weights: d.weights.clone(),
        omega_actor: d.omega_actor,
        omega_critic: d.omega_critic,
    });
    if let Some(d) = &distill {
        for t in &d.seed_transitions {
            buffer.push(*t);
        }
    }

    let mut curve = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut state = env.reset(seeds.episode_seed(ep))?;
        let sigma = hyper.noise_sigma_at(ep);
        let normal = Normal::new(0.0, sigma.max(1e-12)).unwrap();
        let mut total = 0.0;
        let mut steps = 0;
        let (success, jammed) = loop {
            let mut a = actor_forward(&agent.nets.actor, &state).0;
            for v in a.iter_mut() {
                *v += normal.sample(&mut noise_rng);
            }
            let action = RevisionFactors::clamped(a);
            let result = env.step(&action)?;
            buffer.push(Transition {
                state: state.0,
                action: action.0,
                reward: result.reward,
                next_state: result.state.0,
                done: result.done && !result.info.truncated,
            });
            total += result.reward;
            steps += 1;
            state = result.state;
            if ep >= hyper.warmup_episodes && buffer.len() >= hyper.batch_size {
                for _ in 0..hyper.updates_per_step {
                    let batch = buffer.sample(hyper.batch_size, &mut replay_rng);
                    update_step(
                        &mut agent.nets,
                        &mut agent.opt_actor,
                        &mut agent.opt_critic,
                        &batch,
                        params,
                        distill_terms.as_ref(),
                    )?;
                }
            }
            if result.done {
                break (result.info.success, result.info.jammed);
            }
        };
        curve.push(EpisodeStat {
            episode: ep,
            steps,
            total_reward: total,
            avg_reward: total / steps as f64,
            success,
            jammed,
        });
    }

    let agent_data = pack_agent(agent);
    Ok(TrainOutcome {
        checkpoint: AgentCheckpoint {
            version: CHECKPOINT_VERSION.into(),
            config_hash: String::new(),
            task_label: task_label.into(),
            scaling: *env.scaling(),
            hyper: hyper.clone(),
            trained_episodes: episodes,
            agent: agent_data,
        },
        curve,
    })
}

fn pack_agent<S: Real>(agent: TypedAgent<S>) -> AgentData {
    // The two Real impls are exactly f32 and f64; convert() is the identity
    // for the matching type.
    match S::PRECISION {
        Precision::F32 => AgentData::F32(TypedAgent {
            nets: agent.nets.convert(),
            opt_actor: convert_optimizer(&agent.opt_actor),
            opt_critic: convert_optimizer(&agent.opt_critic),
        }),
        Precision::F64 => AgentData::F64(TypedAgent {
            nets: agent.nets.convert(),
            opt_actor: convert_optimizer(&agent.opt_actor),
            opt_critic: convert_optimizer(&agent.opt_critic),
        }),
    }
}

fn convert_optimizer<S: Real, T: Real>(opt: &Optimizer<S>) -> Optimizer<T> {
    let conv = |blocks: &Option<Vec<(Array2<S>, Array1<S>)>>| {
        blocks.as_ref().map(|bs| {
            bs.iter()
                .map(|(w, b)| {
                    (
                        w.mapv(|v| T::from_f64(v.to_f64())),
                        b.mapv(|v| T::from_f64(v.to_f64())),
                    )
                })
                .collect()
        })
    };
    Optimizer {
        kind: opt.kind,
        lr: opt.lr,
        beta1: opt.beta1,
        beta2: opt.beta2,
        eps: opt.eps,
        t: opt.t,
        m: conv(&opt.m),
        v: conv(&opt.v),
    }
}
