//! Agent transfer between assembly tasks: per-dimension similarity
//! evaluation and similarity-weighted dimensional policy distillation on
//! top of the actor-critic trainer.
//!
//! Similarity of one source sub-policy (a single action dimension of a
//! trained source actor) to the target task combines two signals: the
//! short-horizon return the sub-policy collects in the target environment,
//! and the alignment between the action dimension's influence patterns on
//! the state in the source-trained policy versus the target's own probing.
//! Influence is measured by paired rollouts: from each visited state the
//! environment is branched, one branch takes the single-dimension action
//! and the other the zero action, and the mean absolute next-state
//! deviation per state component is the attribution value.

use crate::controller::RevisionFactors;
use crate::env::{AssemblyEnv, EnvError, MdpState, ACTION_DIM, STATE_DIM};
use crate::rl::{
    actor_forward, ddpg_actor_loss, ddpg_critic_loss, transfer_hooked_train, AgentCheckpoint,
    Batch, DdpgHyper, DistillHook, Mlp, Networks, Real, RlError, SeedLedger, TrainOutcome,
    Transition, TypedAgent,
};
use ndarray::{concatenate, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum TransferError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error("trajectory length mismatch: active {active} vs baseline {baseline}")]
    LengthMismatch { active: usize, baseline: usize },
    #[error("source {index} action dimension {found} does not match the target's {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("transfer method {0:?} needs at least one source checkpoint")]
    NoSources(TransferMethod),
}

/// One source sub-policy: dimension `dimension` of source `source`, applied
/// with every other action slot zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubPolicyActivation {
    pub source: usize,
    pub dimension: usize,
}

impl SubPolicyActivation {
    /// The masked action: the actor's output in the activated slot, zero
    /// elsewhere.
    pub fn action(&self, actor: &Mlp<f64>, state: &MdpState) -> RevisionFactors {
        let full = actor_forward(actor, state);
        let mut a = [0.0; ACTION_DIM];
        a[self.dimension] = full.0[self.dimension];
        RevisionFactors::clamped(a)
    }
}

/// Similarity-evaluation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    /// Rollouts per (source, dimension) pair.
    pub sampling_times: usize,
    /// Steps per rollout; defaults to the state dimension.
    pub horizon: usize,
    /// Balance between the return term and the graph-alignment term.
    pub nu: f64,
    /// Normalisation axis for the weights.
    pub weight_axis: WeightAxis,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            sampling_times: 20,
            horizon: STATE_DIM,
            nu: 100.0,
            weight_axis: WeightAxis::OverSources,
        }
    }
}

/// Axis along which the min-shifted similarity weights normalise.
///
/// `OverSources` makes the weights of one action dimension sum to one
/// across sources, which is the mixture the distillation losses consume.
/// `OverDimensions` normalises within one source across its six
/// sub-policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightAxis {
    OverSources,
    OverDimensions,
}

/// Attribution of one activated action dimension: mean absolute deviation
/// of each state component between the active trajectory and its paired
/// zero-action baseline (normalized state units).
pub fn state_deviation(
    active: &[MdpState],
    baseline: &[MdpState],
) -> Result<[f64; STATE_DIM], TransferError> {
    if active.len() != baseline.len() {
        return Err(TransferError::LengthMismatch {
            active: active.len(),
            baseline: baseline.len(),
        });
    }
    let mut phi = [0.0; STATE_DIM];
    if active.is_empty() {
        return Ok(phi);
    }
    for (a, b) in active.iter().zip(baseline) {
        for v in 0..STATE_DIM {
            phi[v] += (a.0[v] - b.0[v]).abs();
        }
    }
    for v in phi.iter_mut() {
        *v /= active.len() as f64;
    }
    Ok(phi)
}

/// Action-to-state influence matrix with unit-norm columns. Columns whose
/// attribution is identically zero stay zero and are flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionGraph {
    /// (action dim x state dim), column-normalised.
    pub g: Array2<f64>,
    pub zero_columns: Vec<usize>,
}

pub fn connection_graph(phi: &Array2<f64>) -> ConnectionGraph {
    assert_eq!(phi.nrows(), ACTION_DIM);
    assert_eq!(phi.ncols(), STATE_DIM);
    let mut g = phi.clone();
    let mut zero_columns = Vec::new();
    for v in 0..STATE_DIM {
        let norm: f64 = (0..ACTION_DIM).map(|u| phi[(u, v)] * phi[(u, v)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            zero_columns.push(v);
            continue;
        }
        for u in 0..ACTION_DIM {
            g[(u, v)] /= norm;
        }
    }
    ConnectionGraph { g, zero_columns }
}

impl ConnectionGraph {
    /// Cosine alignment between row `j` of this graph and row `j` of
    /// `other`; equals one for identical rows regardless of their norms, so
    /// evaluating a domain against itself scores one up to sampling noise.
    /// Zero rows align to zero.
    pub fn row_alignment(&self, other: &ConnectionGraph, j: usize) -> f64 {
        let a = self.g.row(j);
        let b = other.g.row(j);
        let na = a.dot(&a).sqrt();
        let nb = b.dot(&b).sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        a.dot(&b) / (na * nb)
    }
}

/// Similarity of each source sub-policy to the target domain: the
/// short-horizon return plus `nu` times the graph-row alignment.
pub fn similarity(
    n_step: &[[f64; ACTION_DIM]],
    graphs: &[ConnectionGraph],
    target: &ConnectionGraph,
    nu: f64,
) -> Vec<[f64; ACTION_DIM]> {
    n_step
        .iter()
        .zip(graphs)
        .map(|(n, g)| {
            let mut row = [0.0; ACTION_DIM];
            for j in 0..ACTION_DIM {
                row[j] = n[j] + nu * g.row_alignment(target, j);
            }
            row
        })
        .collect()
}

/// Min-shifted, axis-normalised similarity weights. The axis minimum gets
/// weight zero; an all-equal axis degenerates to uniform weights.
pub fn similarity_weights(
    sim: &[[f64; ACTION_DIM]],
    axis: WeightAxis,
) -> Vec<[f64; ACTION_DIM]> {
    let k = sim.len();
    let mut w = vec![[0.0; ACTION_DIM]; k];
    match axis {
        WeightAxis::OverSources => {
            for j in 0..ACTION_DIM {
                let col: Vec<f64> = (0..k).map(|i| sim[i][j]).collect();
                let shifted = min_shift(&col);
                for i in 0..k {
                    w[i][j] = shifted[i];
                }
            }
        }
        WeightAxis::OverDimensions => {
            for (i, row) in sim.iter().enumerate() {
                let shifted = min_shift(row);
                w[i].copy_from_slice(&shifted);
            }
        }
    }
    w
}

fn min_shift(values: &[f64]) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = values.iter().map(|v| v - min).collect();
    let total: f64 = shifted.iter().sum();
    if total == 0.0 {
        // Degenerate all-equal case: uniform.
        return vec![1.0 / values.len() as f64; values.len()];
    }
    shifted.iter().map(|v| v / total).collect()
}

/// Outcome of the similarity-evaluation phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    /// Mean short-horizon return per (source, dimension).
    pub n_step: Vec<[f64; ACTION_DIM]>,
    pub sim: Vec<[f64; ACTION_DIM]>,
    pub weights: Vec<[f64; ACTION_DIM]>,
    pub graph_target: ConnectionGraph,
    pub graph_sources: Vec<ConnectionGraph>,
    pub nu: f64,
    pub sampling_times: usize,
    pub horizon: usize,
    /// Rollouts that ended before the full horizon.
    pub truncated_rollouts: usize,
}

impl SimilarityReport {
    /// CSV with one matrix per block (values indexed source x dimension).
    pub fn matrices_csv(&self) -> String {
        let mut out = String::new();
        for (name, m) in [
            ("n_step", &self.n_step),
            ("similarity", &self.sim),
            ("weight", &self.weights),
        ] {
            let _ = writeln!(out, "# {name} (rows: sources, cols: action dims)");
            let _ = writeln!(out, "source,a_x,a_y,a_z,a_alpha,a_beta,a_gamma");
            for (i, row) in m.iter().enumerate() {
                let _ = write!(out, "{i}");
                for v in row {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }

    /// Long format: source, dimension, n_step, similarity, weight.
    pub fn long_csv(&self) -> String {
        let mut out = String::from("source,dimension,n_step,similarity,weight\n");
        for i in 0..self.n_step.len() {
            for j in 0..ACTION_DIM {
                let _ = writeln!(
                    out,
                    "{i},{j},{},{},{}",
                    self.n_step[i][j], self.sim[i][j], self.weights[i][j]
                );
            }
        }
        out
    }
}

fn rollout_seed(base: u64, dimension: usize, st: usize) -> u64 {
    base ^ ((dimension as u64 + 1).wrapping_mul(0xA247_1C5F_99B7_12E3))
        ^ ((st as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Result of probing one policy's sub-policies in the target environment.
struct PolicyProbe {
    n_step: [f64; ACTION_DIM],
    phi: Array2<f64>,
    truncated: usize,
    transitions: Vec<Transition>,
}

/// Run Algorithm-style paired rollouts for every action dimension of
/// `actor` in the target environment: each visited state branches into the
/// single-dimension action (followed) and the zero action (baseline).
fn probe_policy(
    env_proto: &AssemblyEnv,
    actor: &Mlp<f64>,
    cfg: &SimilarityConfig,
    seed_base: u64,
) -> Result<PolicyProbe, TransferError> {
    let mut n_step = [0.0; ACTION_DIM];
    let mut phi = Array2::<f64>::zeros((ACTION_DIM, STATE_DIM));
    let mut truncated = 0;
    let mut transitions = Vec::new();
    for j in 0..ACTION_DIM {
        let activation = SubPolicyActivation {
            source: 0,
            dimension: j,
        };
        let mut phi_j = [0.0; STATE_DIM];
        let mut ret = 0.0;
        for st in 0..cfg.sampling_times {
            let mut env = env_proto.clone();
            let mut state = env.reset(rollout_seed(seed_base, j, st))?;
            let mut active = Vec::with_capacity(cfg.horizon);
            let mut baseline = Vec::with_capacity(cfg.horizon);
            for _ in 0..cfg.horizon {
                if env.is_done() {
                    truncated += 1;
                    break;
                }
                let action = activation.action(actor, &state);
                let mut branch = env.clone();
                let zero_next = branch.step(&RevisionFactors::ZERO)?;
                baseline.push(zero_next.state);
                let step = env.step(&action)?;
                transitions.push(Transition {
                    state: state.0,
                    action: action.0,
                    reward: step.reward,
                    next_state: step.state.0,
                    done: step.done && !step.info.truncated,
                });
                active.push(step.state);
                ret += step.reward;
                state = step.state;
                if step.done {
                    break;
                }
            }
            let dev = state_deviation(&active, &baseline)?;
            for v in 0..STATE_DIM {
                phi_j[v] += dev[v];
            }
        }
        let inv = 1.0 / cfg.sampling_times as f64;
        n_step[j] = ret * inv;
        for v in 0..STATE_DIM {
            phi[(j, v)] = phi_j[v] * inv;
        }
    }
    Ok(PolicyProbe {
        n_step,
        phi,
        truncated,
        transitions,
    })
}

/// Short-horizon return of one source sub-policy in the target domain:
/// the mean over `sampling_times` seeded rollouts of the summed rewards,
/// plus a flag when any rollout ended before the horizon.
pub fn n_step_reward(
    env_proto: &AssemblyEnv,
    actor: &Mlp<f64>,
    dimension: usize,
    cfg: &SimilarityConfig,
    seed_base: u64,
) -> Result<(f64, bool), TransferError> {
    let activation = SubPolicyActivation {
        source: 0,
        dimension,
    };
    let mut total = 0.0;
    let mut flagged = false;
    for st in 0..cfg.sampling_times {
        let mut env = env_proto.clone();
        let mut state = env.reset(rollout_seed(seed_base, dimension, st))?;
        let mut steps = 0;
        for _ in 0..cfg.horizon {
            let action = activation.action(actor, &state);
            let step = env.step(&action)?;
            total += step.reward;
            steps += 1;
            state = step.state;
            if step.done {
                break;
            }
        }
        if steps < cfg.horizon {
            flagged = true;
        }
    }
    Ok((total / cfg.sampling_times as f64, flagged))
}

/// Full similarity evaluation: probe every source actor and the target's
/// own actor in the target environment, build the connection graphs, and
/// derive the weights. Read-only with respect to all networks.
pub fn evaluate_similarity(
    env_proto: &AssemblyEnv,
    source_actors: &[Mlp<f64>],
    target_actor: &Mlp<f64>,
    cfg: &SimilarityConfig,
    seed: u64,
) -> Result<(SimilarityReport, Vec<Transition>), TransferError> {
    let mut seeder = ChaCha12Rng::seed_from_u64(seed);
    use rand::RngCore;
    let target_seed = seeder.next_u64();
    let target_probe = probe_policy(env_proto, target_actor, cfg, target_seed)?;
    let graph_target = connection_graph(&target_probe.phi);
    let mut n_step = Vec::with_capacity(source_actors.len());
    let mut graphs = Vec::with_capacity(source_actors.len());
    let mut truncated = target_probe.truncated;
    let mut transitions = target_probe.transitions;
    for actor in source_actors {
        let probe = probe_policy(env_proto, actor, cfg, seeder.next_u64())?;
        n_step.push(probe.n_step);
        graphs.push(connection_graph(&probe.phi));
        truncated += probe.truncated;
        transitions.extend(probe.transitions);
    }
    let sim = similarity(&n_step, &graphs, &graph_target, cfg.nu);
    let weights = similarity_weights(&sim, cfg.weight_axis);
    Ok((
        SimilarityReport {
            n_step,
            sim,
            weights,
            graph_target,
            graph_sources: graphs,
            nu: cfg.nu,
            sampling_times: cfg.sampling_times,
            horizon: cfg.horizon,
            truncated_rollouts: truncated,
        },
        transitions,
    ))
}

// ----- weighted losses ----------------------------------------------------

/// Actor objective with weighted per-dimension distillation: the plain
/// deterministic actor loss plus, per source and dimension, the weighted
/// mean squared deviation from that source actor's output. All-zero
/// weights reduce it to the plain loss bit for bit.
pub fn wdpd_actor_loss<S: Real>(
    nets: &Networks<S>,
    batch: &Batch,
    source_actors: &[Mlp<S>],
    weights: &[[f64; ACTION_DIM]],
    omega_actor: f64,
) -> f64 {
    let base = ddpg_actor_loss(nets, batch);
    if weights.iter().all(|row| row.iter().all(|w| *w == 0.0)) {
        return base;
    }
    let states = batch.states_array::<S>();
    let a_pred = nets.actor.forward_batch(&states);
    let n = batch.len() as f64;
    let mut distill = 0.0;
    for (src, wrow) in source_actors.iter().zip(weights) {
        let a_src = src.forward_batch(&states);
        for (j, w) in wrow.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let mut mse = 0.0;
            for i in 0..batch.len() {
                let e = (a_pred[(i, j)] - a_src[(i, j)]).to_f64();
                mse += e * e;
            }
            distill += w * mse / n;
        }
    }
    base + omega_actor * distill
}

/// Critic objective with per-source imitation: the TD regression loss plus
/// each source critic's weighted mean squared deviation, the weight being
/// that source's summed dimensional weight.
pub fn wdpd_critic_loss<S: Real>(
    nets: &Networks<S>,
    batch: &Batch,
    source_critics: &[Mlp<S>],
    weights: &[[f64; ACTION_DIM]],
    omega_critic: f64,
    gamma: f64,
) -> f64 {
    let base = ddpg_critic_loss(nets, batch, gamma);
    if weights.iter().all(|row| row.iter().all(|w| *w == 0.0)) {
        return base;
    }
    let sa = concatenate![
        Axis(1),
        batch.states_array::<S>(),
        batch.actions_array::<S>()
    ];
    let q = nets.critic.forward_batch(&sa);
    let n = batch.len() as f64;
    let mut distill = 0.0;
    for (src, wrow) in source_critics.iter().zip(weights) {
        let w_total: f64 = wrow.iter().sum();
        if w_total == 0.0 {
            continue;
        }
        let q_src = src.forward_batch(&sa);
        let mut mse = 0.0;
        for i in 0..batch.len() {
            let e = (q[(i, 0)] - q_src[(i, 0)]).to_f64();
            mse += e * e;
        }
        distill += w_total * mse / n;
    }
    base + omega_critic * distill
}

// ----- transfer training ---------------------------------------------------

/// How source knowledge enters the target training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMethod {
    /// Similarity-weighted per-dimension distillation.
    Wdpd,
    /// Uniform weights over all sources and dimensions.
    Equal,
    /// All dimensions from the single most similar source.
    MostSimilarOnly,
    /// All dimensions from the single least similar source.
    LeastSimilarOnly,
    /// Ignore sources entirely.
    Direct,
}

/// Derive the weight matrix a method uses from the similarity report.
pub fn method_weights(
    method: TransferMethod,
    report: &SimilarityReport,
) -> Vec<[f64; ACTION_DIM]> {
    let k = report.sim.len();
    match method {
        TransferMethod::Wdpd => report.weights.clone(),
        TransferMethod::Equal => vec![[1.0 / k as f64; ACTION_DIM]; k],
        TransferMethod::MostSimilarOnly | TransferMethod::LeastSimilarOnly => {
            let totals: Vec<f64> = report.sim.iter().map(|row| row.iter().sum()).collect();
            let pick = if method == TransferMethod::MostSimilarOnly {
                totals
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            } else {
                totals
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            };
            let mut w = vec![[0.0; ACTION_DIM]; k];
            w[pick] = [1.0; ACTION_DIM];
            w
        }
        TransferMethod::Direct => vec![[0.0; ACTION_DIM]; k],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub similarity: SimilarityConfig,
    pub method: TransferMethod,
    /// Balance of the actor distillation term.
    pub omega_actor: f64,
    /// Balance of the critic imitation term.
    pub omega_critic: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            similarity: SimilarityConfig::default(),
            method: TransferMethod::Wdpd,
            omega_actor: 2.0,
            omega_critic: 5.0,
        }
    }
}

/// Train a target agent with knowledge transferred from source checkpoints.
///
/// Phase one evaluates dimensional similarity with paired seeded rollouts
/// (networks untouched); its transitions seed the replay buffer. Phase two
/// trains with the weighted distillation losses. With no sources, or the
/// direct method, this is exactly the plain training run for the same seed.
pub fn transfer_train(
    env: &mut AssemblyEnv,
    sources: &[AgentCheckpoint],
    episodes: usize,
    hyper: &DdpgHyper,
    cfg: &TransferConfig,
    seed: u64,
    task_label: &str,
) -> Result<(TrainOutcome, Option<SimilarityReport>), TransferError> {
    if sources.is_empty() || cfg.method == TransferMethod::Direct {
        let outcome = transfer_hooked_train(env, episodes, hyper, seed, None, task_label)?;
        return Ok((outcome, None));
    }
    for (i, s) in sources.iter().enumerate() {
        let dim = s.actor_f64().output_dim();
        if dim != ACTION_DIM {
            return Err(TransferError::DimensionMismatch {
                index: i,
                expected: ACTION_DIM,
                found: dim,
            });
        }
    }
    let seeds = SeedLedger::derive(seed);
    // The target's probing actor is the same freshly initialised actor the
    // training loop will start from: initialisation draws f64 values from
    // the net stream before converting, so this f64 copy matches the
    // training-precision agent parameter for parameter.
    let mut net_rng = ChaCha12Rng::seed_from_u64(seeds.nets);
    let probe_agent = TypedAgent::<f64>::new(hyper, &mut net_rng);
    let source_actors: Vec<Mlp<f64>> = sources.iter().map(|s| s.actor_f64()).collect();
    let source_critics: Vec<Mlp<f64>> = sources.iter().map(|s| s.critic_f64()).collect();
    let (report, transitions) = evaluate_similarity(
        env,
        &source_actors,
        &probe_agent.nets.actor,
        &cfg.similarity,
        seeds.similarity,
    )?;
    let weights = method_weights(cfg.method, &report);
    let hook = DistillHook {
        actors: source_actors,
        critics: source_critics,
        weights,
        omega_actor: cfg.omega_actor,
        omega_critic: cfg.omega_critic,
        seed_transitions: transitions,
    };
    let outcome = transfer_hooked_train(env, episodes, hyper, seed, Some(hook), task_label)?;
    Ok((outcome, Some(report)))
}
