use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::{PolicyConfig, SequencePolicy};
use super::reward::{RewardConfig, RewardSource, RolloutRecord};
use super::sequence::{sample_categorical, BitWidthSequence, NUM_ACTIONS};
use crate::error::{Error, Result};

/// How [`mc_return`] completes a prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McMode {
    /// Average over `n` sampled completions.
    Sample(usize),
    /// Exact expectation over every completion, weighted by its policy
    /// probability. Limited to at most three missing steps.
    Enumerate,
}

pub const MAX_ENUMERATED_STEPS: usize = 3;

/// Completes `prefix` to a full sequence by sampling from the policy.
pub fn complete(policy: &dyn SequencePolicy, prefix: &[usize], rng: &mut impl Rng) -> Vec<usize> {
    let mut actions = prefix.to_vec();
    while actions.len() < policy.steps() {
        let p = policy.step_distribution(&actions);
        actions.push(sample_categorical(&p, rng));
    }
    actions
}

/// A sampled sequence with its per-step log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSequence {
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
}

pub fn sample_sequence(policy: &dyn SequencePolicy, rng: &mut impl Rng) -> SampledSequence {
    let mut actions = Vec::with_capacity(policy.steps());
    let mut log_probs = Vec::with_capacity(policy.steps());
    while actions.len() < policy.steps() {
        let p = policy.step_distribution(&actions);
        let a = sample_categorical(&p, rng);
        log_probs.push(p[a].ln());
        actions.push(a);
    }
    SampledSequence { actions, log_probs }
}

/// Most probable action at every step, feeding back each choice.
pub fn greedy_sequence(policy: &dyn SequencePolicy) -> Vec<usize> {
    let mut actions = Vec::with_capacity(policy.steps());
    while actions.len() < policy.steps() {
        let p = policy.step_distribution(&actions);
        let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        actions.push(best);
    }
    actions
}

fn reward_of(source: &dyn RewardSource, actions: &[usize]) -> Result<f64> {
    Ok(source.evaluate(&BitWidthSequence::from_actions(actions)?)?.reward)
}

fn enumerate_completions(policy: &dyn SequencePolicy, prefix: &mut Vec<usize>, prob: f64, out: &mut Vec<(Vec<usize>, f64)>) {
    if prefix.len() == policy.steps() {
        out.push((prefix.clone(), prob));
        return;
    }
    let p = policy.step_distribution(prefix);
    for a in 0..NUM_ACTIONS {
        prefix.push(a);
        enumerate_completions(policy, prefix, prob * p[a], out);
        prefix.pop();
    }
}

/// Expected reward after taking the actions in `prefix` and following the
/// policy for the remaining steps.
pub fn mc_return(
    policy: &dyn SequencePolicy,
    source: &dyn RewardSource,
    prefix: &[usize],
    mode: McMode,
    rng: &mut impl Rng,
) -> Result<f64> {
    let steps = policy.steps();
    if prefix.is_empty() || prefix.len() > steps {
        return Err(Error::invalid(format!("prefix length {} outside 1..={steps}", prefix.len())));
    }
    if prefix.len() == steps {
        return reward_of(source, prefix);
    }
    match mode {
        McMode::Sample(0) => Err(Error::invalid("need at least one Monte Carlo sample")),
        McMode::Sample(n) => {
            let seqs: Vec<Vec<usize>> = (0..n).map(|_| complete(policy, prefix, rng)).collect();
            let rewards = seqs
                .par_iter()
                .map(|s| reward_of(source, s))
                .collect::<Result<Vec<_>>>()?;
            Ok(rewards.iter().sum::<f64>() / n as f64)
        }
        McMode::Enumerate => {
            if steps - prefix.len() > MAX_ENUMERATED_STEPS {
                return Err(Error::invalid(format!(
                    "enumeration limited to {MAX_ENUMERATED_STEPS} missing steps"
                )));
            }
            let mut all = Vec::new();
            enumerate_completions(policy, &mut prefix.to_vec(), 1.0, &mut all);
            let rewards = all
                .par_iter()
                .map(|(s, p)| reward_of(source, s).map(|r| r * p))
                .collect::<Result<Vec<_>>>()?;
            Ok(rewards.iter().sum())
        }
    }
}

/// A sampled sequence with its per-step returns.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub actions: Vec<usize>,
    /// Return of each step: the Monte Carlo estimate for `actions[..=l]`.
    pub returns: Vec<f64>,
    /// Record of the sampled sequence itself.
    pub record: RolloutRecord,
}

/// Samples `batch` sequences and their per-step returns. All random draws
/// happen first on one generator; reward evaluation then runs in parallel.
pub fn collect_rollouts(
    policy: &dyn SequencePolicy,
    source: &dyn RewardSource,
    batch: usize,
    mc_samples: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Rollout>> {
    if mc_samples == 0 {
        return Err(Error::invalid("need at least one Monte Carlo sample"));
    }
    let steps = policy.steps();
    // (sequence, completions for every non-final step)
    let mut plans: Vec<(Vec<usize>, Vec<Vec<Vec<usize>>>)> = Vec::with_capacity(batch);
    for _ in 0..batch {
        let actions = sample_sequence(policy, rng).actions;
        let completions = (1..steps)
            .map(|t| (0..mc_samples).map(|_| complete(policy, &actions[..t], rng)).collect())
            .collect();
        plans.push((actions, completions));
    }
    let mut unique: Vec<BitWidthSequence> = Vec::new();
    for (a, comps) in &plans {
        unique.push(BitWidthSequence::from_actions(a)?);
        for c in comps.iter().flatten() {
            unique.push(BitWidthSequence::from_actions(c)?);
        }
    }
    unique.sort();
    unique.dedup();
    let records = unique
        .par_iter()
        .map(|s| source.evaluate(s))
        .collect::<Result<Vec<_>>>()?;
    let lookup = |a: &[usize]| -> Result<&RolloutRecord> {
        let s = BitWidthSequence::from_actions(a)?;
        Ok(&records[unique.binary_search(&s).expect("every sequence was evaluated")])
    };
    plans
        .iter()
        .map(|(actions, comps)| {
            let record = lookup(actions)?.clone();
            let mut returns = Vec::with_capacity(steps);
            for c in comps {
                let sum: f64 = c.iter().map(|s| lookup(s).map(|r| r.reward)).sum::<Result<f64>>()?;
                returns.push(sum / c.len() as f64);
            }
            returns.push(record.reward);
            Ok(Rollout {
                actions: actions.clone(),
                returns,
                record,
            })
        })
        .collect()
}

/// Score-function gradient of one rollout:
/// `Σ_l ∇θ log P(a_l | a_1..a_{l-1}) · (R_l - baseline)`.
pub fn score_function_gradient(policy: &dyn SequencePolicy, actions: &[usize], returns: &[f64], baseline: f64) -> Vec<f64> {
    let w: Vec<f64> = returns.iter().map(|r| r - baseline).collect();
    policy.weighted_score_grad(actions, &w)
}

/// Gradient ascent on expected reward: `θ += lr · mean over the batch of the
/// score-function gradient`. Returns the averaged gradient.
pub fn policy_gradient_step(
    policy: &mut dyn SequencePolicy,
    batch: &[Rollout],
    lr: f64,
    baseline: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty rollout batch"));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    let steps = policy.steps();
    for (i, r) in batch.iter().enumerate() {
        if r.actions.len() != steps || r.returns.len() != steps {
            return Err(Error::invalid(format!(
                "rollout {i}: {} actions and {} returns for a {steps}-step policy",
                r.actions.len(),
                r.returns.len()
            )));
        }
        if r.actions.iter().any(|&a| a >= NUM_ACTIONS) {
            return Err(Error::invalid(format!("rollout {i}: action outside the action space")));
        }
    }
    let mut grad = vec![0.0; policy.params().len()];
    for r in batch {
        for (g, v) in grad.iter_mut().zip(score_function_gradient(&*policy, &r.actions, &r.returns, baseline)) {
            *g += v;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
        *p += lr * g;
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub reward: RewardConfig,
    /// Bit-width of dense layers, which are then left out of the search.
    pub fc_fixed_bits: Option<u8>,
    /// Subtract a moving average of the batch reward from the returns.
    pub baseline: bool,
    pub baseline_decay: f64,
    pub policy: PolicyConfig,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch: 5,
            lr: 0.01,
            reward: RewardConfig::default(),
            fc_fixed_bits: Some(3),
            baseline: false,
            baseline_decay: 0.9,
            policy: PolicyConfig::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        if self.batch == 0 {
            return Err(Error::Config("controller batch must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("controller lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::Config("baseline_decay must lie in [0, 1)".into()));
        }
        if self.policy.hidden == 0 || self.policy.projection == 0 {
            return Err(Error::Config("policy sizes must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the search log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub iteration: usize,
    pub mean_reward: f64,
    pub best_reward: f64,
    pub best_sequence: BitWidthSequence,
}

pub const SEARCH_LOG_HEADER: &str = "iteration,mean_reward,best_reward,best_sequence";

pub fn search_log_csv(rows: &[SearchRecord]) -> String {
    let mut out = String::from(SEARCH_LOG_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.9},{:.9},{}",
            r.iteration, r.mean_reward, r.best_reward, r.best_sequence
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerOutcome {
    /// Highest-reward sequence sampled during training.
    pub best: RolloutRecord,
    pub history: Vec<SearchRecord>,
}

/// Trains the policy with REINFORCE for `cfg.iterations` batches.
pub fn train_controller(
    policy: &mut dyn SequencePolicy,
    source: &dyn RewardSource,
    cfg: &ControllerConfig,
    seed: u64,
) -> Result<ControllerOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<RolloutRecord> = None;
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut baseline: Option<f64> = None;
    for iteration in 0..cfg.iterations {
        let batch = collect_rollouts(&*policy, source, cfg.batch, cfg.reward.mc_samples, &mut rng)?;
        let mean = batch.iter().map(|r| r.record.reward).sum::<f64>() / batch.len() as f64;
        for r in &batch {
            // strict improvement keeps the earliest of equal rewards
            if best.as_ref().is_none_or(|b| r.record.reward > b.reward) {
                best = Some(r.record.clone());
            }
        }
        let b = if cfg.baseline {
            let v = match baseline {
                None => mean,
                Some(prev) => cfg.baseline_decay * prev + (1.0 - cfg.baseline_decay) * mean,
            };
            let used = baseline.unwrap_or(mean);
            baseline = Some(v);
            used
        } else {
            0.0
        };
        policy_gradient_step(policy, &batch, cfg.lr, b)?;
        let best_ref = best.as_ref().unwrap();
        history.push(SearchRecord {
            iteration,
            mean_reward: mean,
            best_reward: best_ref.reward,
            best_sequence: best_ref.sequence.clone(),
        });
    }
    let best = best.ok_or_else(|| Error::Config("controller ran zero iterations".into()))?;
    Ok(ControllerOutcome { best, history })
}
