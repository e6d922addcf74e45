use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cell::{matvec_add, matvec_t_add, outer_add, Cell, CellKind, StepCache};
use super::embedding::{LayerEmbedding, EMBED_DIM};
use super::sequence::{softmax, NUM_ACTIONS};

/// A parametric distribution over action sequences, factorised as
/// `P(a_l | a_1..a_{l-1})` per step.
pub trait SequencePolicy: Send + Sync {
    /// Number of steps in a sequence.
    fn steps(&self) -> usize;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Action distribution at step `prefix.len()` given the earlier actions.
    fn step_distribution(&self, prefix: &[usize]) -> Vec<f64>;

    /// Distributions at every step for a complete action sequence.
    fn distributions(&self, actions: &[usize]) -> Vec<Vec<f64>> {
        (0..actions.len()).map(|l| self.step_distribution(&actions[..l])).collect()
    }

    /// `Σ_l weights[l] · ∇θ log P(actions[l] | actions[..l])`.
    fn weighted_score_grad(&self, actions: &[usize], weights: &[f64]) -> Vec<f64>;

    /// `log P(actions)` of a complete sequence.
    fn log_prob(&self, actions: &[usize]) -> f64 {
        self.distributions(actions)
            .iter()
            .zip(actions)
            .map(|(p, &a)| p[a].ln())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub cell: CellKind,
    pub hidden: usize,
    /// Width of the projected layer embedding.
    pub projection: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Gru,
            hidden: 32,
            projection: 16,
        }
    }
}

/// Bidirectional recurrent policy.
///
/// Embeddings are projected (`x_l = tanh(W_e e_l + b_e)`); a backward cell
/// reads `x_L..x_1`, a forward cell reads `[x_l; onehot(a_{l-1})]`, and the
/// head maps `[h_f; h_b]` to the action logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    config: PolicyConfig,
    embeddings: Vec<LayerEmbedding>,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    proj_w: usize,
    proj_b: usize,
    bwd: usize,
    fwd: usize,
    head_w: usize,
    head_b: usize,
    end: usize,
}

struct Trace {
    x: Vec<Vec<f64>>,
    hb: Vec<Vec<f64>>,
    bwd_cache: Vec<StepCache>,
    hf: Vec<Vec<f64>>,
    fwd_cache: Vec<StepCache>,
    probs: Vec<Vec<f64>>,
}

impl PolicyModel {
    pub fn new(config: PolicyConfig, embeddings: Vec<LayerEmbedding>, seed: u64) -> Self {
        let mut m = Self {
            config,
            embeddings,
            params: Vec::new(),
        };
        let lay = m.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (config.hidden as f64).sqrt();
        m.params = (0..lay.end).map(|_| rng.random_range(-scale..scale)).collect();
        for v in &mut m.params[lay.head_b..lay.end] {
            *v = 0.0;
        }
        m
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn embeddings(&self) -> &[LayerEmbedding] {
        &self.embeddings
    }

    /// Head bias, one entry per action.
    pub fn head_bias_mut(&mut self) -> &mut [f64] {
        let lay = self.layout();
        &mut self.params[lay.head_b..lay.end]
    }

    fn bwd_cell(&self) -> Cell {
        Cell {
            kind: self.config.cell,
            input: self.config.projection,
            hidden: self.config.hidden,
        }
    }

    fn fwd_cell(&self) -> Cell {
        Cell {
            kind: self.config.cell,
            input: self.config.projection + NUM_ACTIONS,
            hidden: self.config.hidden,
        }
    }

    fn layout(&self) -> Layout {
        let p = self.config.projection;
        let h = self.config.hidden;
        let proj_w = 0;
        let proj_b = proj_w + p * EMBED_DIM;
        let bwd = proj_b + p;
        let fwd = bwd + self.bwd_cell().num_params();
        let head_w = fwd + self.fwd_cell().num_params();
        let head_b = head_w + NUM_ACTIONS * 2 * h;
        Layout {
            proj_w,
            proj_b,
            bwd,
            fwd,
            head_w,
            head_b,
            end: head_b + NUM_ACTIONS,
        }
    }

    /// Runs the network for the first `steps` steps; `actions` must hold at
    /// least `steps - 1` entries.
    fn trace(&self, actions: &[usize], steps: usize) -> Trace {
        let lay = self.layout();
        let p = &self.params;
        let pd = self.config.projection;
        let hsz = self.config.hidden;
        let n = self.embeddings.len();
        let x: Vec<Vec<f64>> = self
            .embeddings
            .iter()
            .map(|e| {
                let mut v = p[lay.proj_b..lay.bwd].to_vec();
                matvec_add(&p[lay.proj_w..lay.proj_b], &e.0, &mut v);
                v.iter_mut().for_each(|a| *a = a.tanh());
                v
            })
            .collect();
        let bc = self.bwd_cell();
        let bp = &p[lay.bwd..lay.fwd];
        let mut hb = vec![Vec::new(); n];
        let mut bwd_cache: Vec<Option<StepCache>> = vec![None; n];
        let mut state = vec![0.0; bc.state_len()];
        for l in (0..n).rev() {
            let (s, c) = bc.forward(bp, &x[l], &state);
            hb[l] = s[..hsz].to_vec();
            bwd_cache[l] = Some(c);
            state = s;
        }
        let fc = self.fwd_cell();
        let fp = &p[lay.fwd..lay.head_w];
        let mut state = vec![0.0; fc.state_len()];
        let mut hf = Vec::with_capacity(steps);
        let mut fwd_cache = Vec::with_capacity(steps);
        let mut probs = Vec::with_capacity(steps);
        for l in 0..steps {
            let mut input = vec![0.0; pd + NUM_ACTIONS];
            input[..pd].copy_from_slice(&x[l]);
            if l > 0 {
                input[pd + actions[l - 1]] = 1.0;
            }
            let (s, c) = fc.forward(fp, &input, &state);
            let h: Vec<f64> = s[..hsz].iter().chain(&hb[l]).copied().collect();
            let mut logits = p[lay.head_b..lay.end].to_vec();
            matvec_add(&p[lay.head_w..lay.head_b], &h, &mut logits);
            probs.push(softmax(&logits));
            hf.push(s[..hsz].to_vec());
            fwd_cache.push(c);
            state = s;
        }
        Trace {
            x,
            hb,
            bwd_cache: bwd_cache.into_iter().map(Option::unwrap).collect(),
            hf,
            fwd_cache,
            probs,
        }
    }
}

impl SequencePolicy for PolicyModel {
    fn steps(&self) -> usize {
        self.embeddings.len()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn step_distribution(&self, prefix: &[usize]) -> Vec<f64> {
        self.trace(prefix, prefix.len() + 1).probs.pop().unwrap()
    }

    fn distributions(&self, actions: &[usize]) -> Vec<Vec<f64>> {
        self.trace(actions, actions.len()).probs
    }

    fn weighted_score_grad(&self, actions: &[usize], weights: &[f64]) -> Vec<f64> {
        let lay = self.layout();
        let p = &self.params;
        let hsz = self.config.hidden;
        let pd = self.config.projection;
        let n = actions.len();
        let t = self.trace(actions, n);
        let mut grad = vec![0.0; lay.end];
        let mut d_hf = vec![vec![0.0; hsz]; n];
        let mut d_hb = vec![vec![0.0; hsz]; self.embeddings.len()];
        for l in 0..n {
            // d/dlogits of w · log p[a] is w · (onehot(a) - p)
            let dl: Vec<f64> = (0..NUM_ACTIONS)
                .map(|i| weights[l] * ((i == actions[l]) as u8 as f64 - t.probs[l][i]))
                .collect();
            let h: Vec<f64> = t.hf[l].iter().chain(&t.hb[l]).copied().collect();
            outer_add(&mut grad[lay.head_w..lay.head_b], &dl, &h);
            for (g, d) in grad[lay.head_b..lay.end].iter_mut().zip(&dl) {
                *g += d;
            }
            let mut dh = vec![0.0; 2 * hsz];
            matvec_t_add(&p[lay.head_w..lay.head_b], &dl, &mut dh);
            d_hf[l] = dh[..hsz].to_vec();
            d_hb[l] = dh[hsz..].to_vec();
        }

        let mut dx = vec![vec![0.0; pd]; self.embeddings.len()];
        let fc = self.fwd_cell();
        let mut d_state = vec![0.0; fc.state_len()];
        {
            let (_, rest) = grad.split_at_mut(lay.fwd);
            let (gf, _) = rest.split_at_mut(lay.head_w - lay.fwd);
            for l in (0..n).rev() {
                for j in 0..hsz {
                    d_state[j] += d_hf[l][j];
                }
                let mut dinput = vec![0.0; pd + NUM_ACTIONS];
                d_state = fc.backward(&p[lay.fwd..lay.head_w], &t.fwd_cache[l], &d_state, gf, &mut dinput);
                for j in 0..pd {
                    dx[l][j] += dinput[j];
                }
            }
        }
        let bc = self.bwd_cell();
        let mut d_state = vec![0.0; bc.state_len()];
        {
            let (_, rest) = grad.split_at_mut(lay.bwd);
            let (gb, _) = rest.split_at_mut(lay.fwd - lay.bwd);
            // the backward cell ran from the last layer to the first
            for l in 0..self.embeddings.len() {
                for j in 0..hsz {
                    d_state[j] += d_hb[l][j];
                }
                d_state = bc.backward(&p[lay.bwd..lay.fwd], &t.bwd_cache[l], &d_state, gb, &mut dx[l]);
            }
        }
        for (l, e) in self.embeddings.iter().enumerate() {
            let da: Vec<f64> = dx[l].iter().zip(&t.x[l]).map(|(d, x)| d * (1.0 - x * x)).collect();
            outer_add(&mut grad[lay.proj_w..lay.proj_b], &da, &e.0);
            for (g, d) in grad[lay.proj_b..lay.bwd].iter_mut().zip(&da) {
                *g += d;
            }
        }
        grad
    }
}

/// Independent logits for every (step, previous action) pair: 7 logits for
/// the first step and 7×7 for each later step.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    steps: usize,
    params: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(steps: usize, params: Vec<f64>) -> Self {
        assert!(steps >= 1, "a policy needs at least one step");
        assert_eq!(params.len(), Self::num_params(steps), "tabular parameter count");
        Self { steps, params }
    }

    pub fn uniform(steps: usize) -> Self {
        Self::new(steps, vec![0.0; Self::num_params(steps)])
    }

    pub fn num_params(steps: usize) -> usize {
        NUM_ACTIONS + (steps - 1) * NUM_ACTIONS * NUM_ACTIONS
    }

    /// Offset of the logits used at step `l` after previous action `prev`.
    pub fn offset(l: usize, prev: Option<usize>) -> usize {
        match (l, prev) {
            (0, _) => 0,
            (_, Some(a)) => NUM_ACTIONS + ((l - 1) * NUM_ACTIONS + a) * NUM_ACTIONS,
            (_, None) => panic!("later steps need the previous action"),
        }
    }
}

impl SequencePolicy for TabularPolicy {
    fn steps(&self) -> usize {
        self.steps
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn step_distribution(&self, prefix: &[usize]) -> Vec<f64> {
        let o = Self::offset(prefix.len(), prefix.last().copied());
        softmax(&self.params[o..o + NUM_ACTIONS])
    }

    fn weighted_score_grad(&self, actions: &[usize], weights: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.params.len()];
        for l in 0..actions.len() {
            let o = Self::offset(l, if l == 0 { None } else { Some(actions[l - 1]) });
            let p = softmax(&self.params[o..o + NUM_ACTIONS]);
            for i in 0..NUM_ACTIONS {
                g[o + i] += weights[l] * ((i == actions[l]) as u8 as f64 - p[i]);
            }
        }
        g
    }
}
