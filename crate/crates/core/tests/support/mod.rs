//! Fixtures and oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use dnq::controller::{
    collect_rollouts, embed_model, greedy_sequence, mc_return, score_function_gradient, train_controller,
    BitWidthSequence, ControllerConfig, McMode, ModelReward, PolicyModel, RewardConfig, RewardSource,
    RolloutRecord, SequencePolicy, TabularPolicy, NUM_ACTIONS,
};
use dnq::codec::{compression_ratio, compression_spec, encodings_from_codebooks, pack, read_layout};
use dnq::net::{
    backward, forward, logits, make_synthetic_dataset, train_sgd, DataSplits, Dataset, LayerDef, NetworkModel, SgdConfig, Split,
    SyntheticSpec,
};
use dnq::quant::{
    quantize_network_observed, snap_quantize, weight_cluster_traced, BitWidth, Codebook, QuantEvent, QuantizeOutcome, QuantizerConfig,
    MAX_LLOYD_ITERS,
};
use dnq::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn bw(b: u8) -> BitWidth {
    BitWidth::new(b).unwrap()
}

// ---------------------------------------------------------------- quantizer

/// Small trained conv net (2 conv + 2 dense) with its data.
pub fn quant_fixture() -> (NetworkModel, DataSplits) {
    let mut spec = SyntheticSpec::new(4, 240, 120, vec![2, 6, 6]);
    spec.separation = 0.6;
    let data = make_synthetic_dataset(31, &spec).unwrap();
    let mut model = NetworkModel::build(
        &[2, 6, 6],
        &[
            LayerDef::Conv2d { out_channels: 6, kernel: 3, stride: 1, padding: 1 },
            LayerDef::Conv2d { out_channels: 8, kernel: 3, stride: 2, padding: 1 },
            LayerDef::Dense { units: 16 },
            LayerDef::Dense { units: 4 },
        ],
        32,
    )
    .unwrap();
    let cfg = SgdConfig { steps: 300, lr: 0.05, batch_size: 24 };
    train_sgd(&mut model, &data.train, &cfg, 33, None).unwrap();
    (model, data)
}

/// SSE traces of `instances` random k-means problems; returns the first
/// violation of monotonicity or of the iteration cap.
pub fn kmeans_monotonicity(instances: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traced = 0;
    for inst in 0..instances {
        let n = rng.random_range(10..400);
        let bits = bw(rng.random_range(2..=8));
        let modes = rng.random_range(1..6);
        let centres: Vec<f64> = (0..modes).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spread: f64 = rng.random_range(0.01..0.5);
        let w: Vec<f64> = (0..n)
            .map(|_| centres[rng.random_range(0..modes)] + spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (_, _, trace) = weight_cluster_traced(&w, bits, None).map_err(|e| e.to_string())?;
        if trace.sse.len() > MAX_LLOYD_ITERS + 1 {
            return Err(format!("instance {inst}: {} Lloyd iterations", trace.sse.len() - 1));
        }
        if let Some(i) = (1..trace.sse.len()).find(|&i| trace.sse[i] > trace.sse[i - 1]) {
            return Err(format!(
                "instance {inst} (n={n}, b={bits}): SSE rose from {} to {} at iteration {i}",
                trace.sse[i - 1],
                trace.sse[i]
            ));
        }
        traced += trace.sse.len();
    }
    Ok(traced)
}

/// What [`audit_quantizer`] observed.
#[derive(Debug, Default)]
pub struct QuantAudit {
    pub iterations: usize,
    pub retrain_steps: usize,
    /// Weights quantized per iteration, per layer.
    pub counts: Vec<Vec<usize>>,
    pub violations: Vec<String>,
}

/// Runs the quantizer and checks, at every event: codebook freeze after the
/// first iteration, bit-exact mask/value coherence, quantized weights
/// untouched by retraining, and per-snapshot preference order. At the end:
/// descending per-layer counts summing to the layer size, all masks zero
/// and at most `2^(b-1)+1` distinct values per layer.
pub fn audit_quantizer(
    model: &NetworkModel,
    bits: &[BitWidth],
    data: &DataSplits,
    cfg: &QuantizerConfig,
    seed: u64,
) -> (QuantizeOutcome, QuantAudit) {
    let mut audit = QuantAudit {
        counts: vec![Vec::new(); bits.len()],
        ..QuantAudit::default()
    };
    let mut frozen: Vec<Vec<u64>> = Vec::new();
    let mut snapshot: Vec<Vec<u64>> = Vec::new();
    let quantized_bits = |states: &[dnq::quant::LayerQuantState], m: &NetworkModel| -> Vec<Vec<u64>> {
        states
            .iter()
            .map(|s| {
                let w = m.layers()[s.layer].weight.data();
                (0..w.len()).filter(|&i| s.quantized[i]).map(|i| w[i].to_bits()).collect()
            })
            .collect()
    };
    let outcome = {
        let v = &mut audit;
        quantize_network_observed(model, bits, data, cfg, seed, |ev| match ev {
            QuantEvent::Quantized { iteration, reports, states, model } => {
                v.iterations = iteration + 1;
                let books: Vec<Vec<u64>> = states
                    .iter()
                    .map(|s| s.codebook.as_ref().unwrap().centroids().iter().map(|c| c.to_bits()).collect())
                    .collect();
                if iteration == 0 {
                    frozen = books;
                } else if books != frozen {
                    v.violations.push(format!("iteration {iteration}: codebook changed after freezing"));
                }
                for (li, s) in states.iter().enumerate() {
                    if !s.frozen_centroids {
                        v.violations.push(format!("iteration {iteration}: layer {} not frozen", s.layer));
                    }
                    let w = model.layers()[s.layer].weight.data();
                    let cb = s.codebook.as_ref().unwrap();
                    for i in 0..w.len() {
                        let exact = w[i].to_bits() == cb.centroids()[s.assignment[i]].to_bits();
                        if s.quantized[i] && !exact {
                            v.violations.push(format!("layer {li} weight {i}: masked but not its centroid"));
                        }
                    }
                }
                for r in reports {
                    let li = states.iter().position(|s| s.layer == r.layer).unwrap();
                    v.counts[li].push(r.selected.len());
                    let per_cluster = states[li].per_weight_cluster;
                    let group = |i: usize| if per_cluster { r.assignment[i] } else { 0 };
                    let groups = if per_cluster { states[li].codebook.as_ref().unwrap().k() } else { 1 };
                    for g in 0..groups {
                        let min_sel = r.selected.iter().filter(|&&i| group(i) == g).map(|&i| r.distances[i]).fold(f64::INFINITY, f64::min);
                        let max_def = r.deferred.iter().filter(|&&i| group(i) == g).map(|&i| r.distances[i]).fold(f64::NEG_INFINITY, f64::max);
                        if min_sel < max_def {
                            v.violations.push(format!(
                                "iteration {iteration} layer {}: quantized distance {min_sel} below deferred {max_def}",
                                r.layer
                            ));
                        }
                    }
                }
                snapshot = quantized_bits(states, model);
            }
            QuantEvent::Retrained { iteration, states, model, report } => {
                v.retrain_steps += report.losses.len();
                if quantized_bits(states, model) != snapshot {
                    v.violations.push(format!("iteration {iteration}: retraining moved a quantized weight"));
                }
                for s in states {
                    if let Err(e) = s.check_coherent(model.layers()[s.layer].weight.data()) {
                        v.violations.push(e.to_string());
                    }
                }
            }
        })
        .unwrap()
    };
    for (li, s) in outcome.states.iter().enumerate() {
        let c = &audit.counts[li];
        if c.windows(2).any(|w| w[1] > w[0]) {
            audit.violations.push(format!("layer {}: counts {c:?} not descending", s.layer));
        }
        if c.iter().sum::<usize>() != s.quantized.len() {
            audit.violations.push(format!("layer {}: counts {c:?} do not sum to {}", s.layer, s.quantized.len()));
        }
        if s.schedule.as_ref().map(|q| &q.counts) != Some(c) {
            audit.violations.push(format!("layer {}: schedule differs from observed counts", s.layer));
        }
        if !s.is_complete() || s.mask(&[s.quantized.len()]).data().iter().any(|&m| m != 0.0) {
            audit.violations.push(format!("layer {}: mask not all zero", s.layer));
        }
        let mut distinct = outcome.model.layers()[s.layer].weight.data().to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let k = (1usize << (s.bits.get() - 1)) + 1;
        if distinct.len() > k {
            audit.violations.push(format!("layer {}: {} distinct values > {k}", s.layer, distinct.len()));
        }
    }
    (outcome, audit)
}

// --------------------------------------------------------------- controller

/// Frozen reward: a fixed function of the action indices.
pub struct Frozen<F>(pub F);

impl<F: Fn(&[usize]) -> f64 + Sync> RewardSource for Frozen<F> {
    fn evaluate(&self, s: &BitWidthSequence) -> dnq::Result<RolloutRecord> {
        Ok(RolloutRecord::new(s.clone(), (self.0)(&s.actions()), 0.0, 0.0))
    }
}

/// Fixed, irregular 2-step × 7-action reward table.
pub fn mdp_reward(a: &[usize]) -> f64 {
    let (x, y) = (a[0] as f64, a[1] as f64);
    (1.7 * x + 0.3).sin() + 0.5 * (x * y * 0.9 + 1.1).cos() + 0.1 * y
}

/// A 2-step tabular policy with irregular, seeded logits.
pub fn mdp_policy(seed: u64) -> TabularPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = TabularPolicy::num_params(2);
    TabularPolicy::new(2, (0..n).map(|_| 0.8 * rng.sample::<f64, _>(StandardNormal)).collect())
}

fn all_sequences(steps: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..steps {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..NUM_ACTIONS).map(move |a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

/// J(θ) = Σ_B P_θ(B) R(B) by enumeration.
pub fn expected_reward(policy: &dyn SequencePolicy, r: &dyn Fn(&[usize]) -> f64) -> f64 {
    all_sequences(policy.steps()).iter().map(|s| policy.log_prob(s).exp() * r(s)).sum()
}

/// ∇J by enumeration: Σ_B P(B) Σ_l ∇ log P(b_l | b_<l) R(B).
pub fn exact_gradient(policy: &dyn SequencePolicy, r: &dyn Fn(&[usize]) -> f64) -> Vec<f64> {
    let mut g = vec![0.0; policy.params().len()];
    for s in all_sequences(policy.steps()) {
        let p = policy.log_prob(&s).exp();
        let w = vec![r(&s); s.len()];
        for (gi, v) in g.iter_mut().zip(policy.weighted_score_grad(&s, &w)) {
            *gi += p * v;
        }
    }
    g
}

/// Central differences of J, an oracle independent of the score function.
pub fn fd_gradient(policy: &TabularPolicy, r: &dyn Fn(&[usize]) -> f64, h: f64) -> Vec<f64> {
    (0..policy.params().len())
        .map(|i| {
            let (mut plus, mut minus) = (policy.clone(), policy.clone());
            plus.params_mut()[i] += h;
            minus.params_mut()[i] -= h;
            (expected_reward(&plus, r) - expected_reward(&minus, r)) / (2.0 * h)
        })
        .collect()
}

/// Per-coordinate mean and standard error of a sample of vectors.
pub fn mean_and_se(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let dim = samples[0].len();
    let mean: Vec<f64> = (0..dim).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n).collect();
    let se = (0..dim)
        .map(|j| {
            let var = samples.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    (mean, se)
}

/// `n` single-rollout REINFORCE gradient estimates (returns from `mc`
/// sampled completions per step, no baseline).
pub fn reinforce_samples(
    policy: &dyn SequencePolicy,
    source: &dyn RewardSource,
    n: usize,
    mc: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let r = collect_rollouts(policy, source, 1, mc, &mut rng).unwrap().remove(0);
            score_function_gradient(policy, &r.actions, &r.returns, 0.0)
        })
        .collect()
}

/// Coordinates where the estimator mean is more than `k` standard errors
/// from `exact`.
pub fn outside_se(mean: &[f64], se: &[f64], exact: &[f64], k: f64) -> Vec<(usize, f64, f64, f64)> {
    (0..mean.len())
        .filter(|&j| (mean[j] - exact[j]).abs() > k * se[j])
        .map(|j| (j, mean[j], exact[j], se[j]))
        .collect()
}

/// Sample variance of `reps` step-1 Monte Carlo returns for each first action.
pub fn step_return_variance(policy: &dyn SequencePolicy, source: &dyn RewardSource, n: usize, reps: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..NUM_ACTIONS)
        .map(|a| {
            let xs: Vec<f64> = (0..reps)
                .map(|_| mc_return(policy, source, &[a], McMode::Sample(n), &mut rng).unwrap())
                .collect();
            let m = xs.iter().sum::<f64>() / reps as f64;
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0)
        })
        .collect()
}

/// Dense toy model whose eval labels are its own float predictions, with
/// logit margins spread log-uniformly over several decades: coarser
/// quantization flips more of them, so snap accuracy rises with bits.
pub fn margin_fixture() -> (NetworkModel, Dataset) {
    let model = NetworkModel::build(
        &[12],
        &[LayerDef::Dense { units: 16 }, LayerDef::Dense { units: 12 }, LayerDef::Dense { units: 4 }],
        71,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let candidates = 60_000;
    let x: Vec<f64> = (0..candidates * 12).map(|_| rng.sample(StandardNormal)).collect();
    let inputs = Tensor::new(vec![candidates, 12], x).unwrap();
    let out = logits(&model, &inputs).unwrap();
    let (bins, per_bin, lo, hi) = (20usize, 50usize, -2.7f64, -0.2f64);
    let mut taken = vec![0usize; bins];
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..candidates {
        let z = out.row(i);
        let mut order: Vec<usize> = (0..z.len()).collect();
        order.sort_by(|&a, &b| z[b].total_cmp(&z[a]));
        let margin = z[order[0]] - z[order[1]];
        let bin = ((margin.log10() - lo) / (hi - lo) * bins as f64).floor();
        if !(0.0..bins as f64).contains(&bin) || taken[bin as usize] == per_bin {
            continue;
        }
        taken[bin as usize] += 1;
        rows.extend_from_slice(inputs.row(i));
        labels.push(order[0]);
    }
    let n = labels.len();
    let eval = Dataset::new(Tensor::new(vec![n, 12], rows).unwrap(), labels, 4, Split::Eval).unwrap();
    (model, eval)
}

/// Trains a GRU policy on the margin fixture at `lambda` and returns the
/// greedy bits after training and the best sampled sequence.
pub fn rigged_search_with(cfg: &ControllerConfig, seed: u64) -> (Vec<u8>, RolloutRecord) {
    let (model, eval) = margin_fixture();
    let source = ModelReward::new(model.clone(), eval, cfg.reward.lambda, None).unwrap();
    let mut policy = PolicyModel::new(cfg.policy, embed_model(&model, false).unwrap(), seed);
    let out = train_controller(&mut policy, &source, cfg, seed + 1).unwrap();
    let greedy = BitWidthSequence::from_actions(&greedy_sequence(&policy)).unwrap();
    (greedy.0.iter().map(|b| b.get()).collect(), out.best)
}

pub fn rigged_search(lambda: f64, iterations: usize, seed: u64) -> (Vec<u8>, RolloutRecord) {
    rigged_search_with(&rigged_config(lambda, iterations), seed)
}

pub fn rigged_config(lambda: f64, iterations: usize) -> ControllerConfig {
    ControllerConfig {
        iterations,
        batch: 5,
        lr: 0.1,
        reward: RewardConfig { lambda, mc_samples: 4, eval_samples: 1000 },
        fc_fixed_bits: None,
        baseline: true,
        ..ControllerConfig::default()
    }
}

// ----------------------------------------------------------- gradient oracles

/// Central differences (h = 1e-5) of the batch loss against the analytic
/// gradient of every weight and bias; returns the number of checked entries.
pub fn engine_gradient_check(model: &NetworkModel, batch: &Dataset) -> Result<usize, String> {
    let h = 1e-5;
    let loss = |m: &NetworkModel| forward(m, batch).unwrap().loss;
    let grads = backward(model, batch).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for li in 0..model.layers().len() {
        for (is_bias, analytic) in [(false, &grads.weights[li]), (true, &grads.biases[li])] {
            for k in 0..analytic.len() {
                let (mut plus, mut minus) = (model.clone(), model.clone());
                let nudge = |m: &mut NetworkModel, d: f64| {
                    let l = &mut m.layers_mut()[li];
                    let t = if is_bias { &mut l.bias } else { &mut l.weight };
                    t.data_mut()[k] += d;
                };
                nudge(&mut plus, h);
                nudge(&mut minus, -h);
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = analytic.data()[k];
                if (a - fd).abs() > 1e-6 * a.abs().max(fd.abs()) + 1e-9 {
                    let what = if is_bias { "bias" } else { "weight" };
                    return Err(format!("layer {li} {what} {k}: analytic {a} vs finite difference {fd}"));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Same check for `Σ_l w_l log P(a_l | a_<l)` of a sequence policy.
pub fn policy_gradient_check(policy: &mut dyn SequencePolicy, actions: &[usize], weights: &[f64]) -> Result<usize, String> {
    let g = policy.weighted_score_grad(actions, weights);
    let objective = |p: &dyn SequencePolicy| -> f64 {
        p.distributions(actions)
            .iter()
            .zip(actions)
            .zip(weights)
            .map(|((d, &a), w)| w * d[a].ln())
            .sum()
    };
    let h = 1e-5;
    for k in 0..g.len() {
        let orig = policy.params()[k];
        policy.params_mut()[k] = orig + h;
        let up = objective(policy);
        policy.params_mut()[k] = orig - h;
        let down = objective(policy);
        policy.params_mut()[k] = orig;
        let fd = (up - down) / (2.0 * h);
        if (g[k] - fd).abs() > 1e-6 * g[k].abs().max(fd.abs()) + 1e-9 {
            return Err(format!("policy param {k}: analytic {} vs finite difference {fd}", g[k]));
        }
    }
    Ok(g.len())
}

// ------------------------------------------------------------------- codec

/// Builds a random small conv/dense model, snaps it to random bit-widths and
/// compares the float/payload byte ratio of its packed file with the ratio
/// formula. Returns (measured, predicted).
pub fn size_audit(seed: u64) -> Result<(f64, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..4);
    let hw = rng.random_range(6..12);
    let mut defs = Vec::new();
    for _ in 0..rng.random_range(1..4) {
        defs.push(LayerDef::Conv2d {
            out_channels: rng.random_range(4..24),
            kernel: 3,
            stride: rng.random_range(1..3),
            padding: 1,
        });
    }
    for _ in 0..rng.random_range(1..3) {
        defs.push(LayerDef::Dense { units: rng.random_range(8..64) });
    }
    defs.push(LayerDef::Dense { units: 10 });
    let model = NetworkModel::build(&[c, hw, hw], &defs, seed).map_err(|e| e.to_string())?;
    let bits: Vec<BitWidth> = model.quantizable_layers().iter().map(|_| bw(rng.random_range(2..=8))).collect();
    let (snapped, books) = snap_quantize(&model, &bits).map_err(|e| e.to_string())?;
    let pairs: Vec<(BitWidth, Codebook)> = bits.into_iter().zip(books).collect();
    let enc = encodings_from_codebooks(&snapped, &pairs).map_err(|e| e.to_string())?;
    let bytes = pack(&snapped, &enc).map_err(|e| e.to_string())?;
    let layout = read_layout(&bytes).map_err(|e| e.to_string())?;
    let measured = layout.float_bytes() as f64 / layout.payload_bytes() as f64;
    let predicted = compression_ratio(&compression_spec(&snapped, &enc).map_err(|e| e.to_string())?);
    Ok((measured, predicted))
}
