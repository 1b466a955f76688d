//! The architecture controller: an autoregressive LSTM policy over the
//! decision slots of a search space, trained by policy gradient.
//!
//! Slot order is the genotype order: one slot per layer's node aggregator,
//! one per skip bit, and one for the layer aggregator when the space includes
//! them. Each slot has a softmax head over its actions and an embedding table
//! whose chosen row feeds the next step; a learned start embedding feeds the
//! first.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::space::{Genotype, SearchSpaceConfig};
use crate::tensor::adam::AdamState;
use crate::tensor::lstm::{self, LstmParams, LstmVars};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

use super::SearchError;

/// One sampled candidate: the genotype plus everything the policy-gradient
/// update needs to reproduce the decision sequence.
#[derive(Debug, Clone)]
pub struct Sample {
    pub genotype: Genotype,
    /// Chosen action index per slot.
    pub actions: Vec<usize>,
    /// Natural-log probability of each chosen action.
    pub log_probs: Vec<f64>,
    /// Total policy entropy across slots, in nats.
    pub entropy: f64,
    /// Full action distribution per slot at sampling time.
    pub slot_probs: Vec<Vec<f64>>,
}

/// A finished candidate evaluation fed back to the controller.
#[derive(Debug, Clone)]
pub struct Episode {
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub entropy: f64,
    /// Validation metric in [0, 1].
    pub reward: f64,
}

/// Controller parameters, reward baseline, and optimizer state.
#[derive(Debug, Clone)]
pub struct ControllerState {
    space: SearchSpaceConfig,
    hidden: usize,
    embed: usize,
    cell: LstmParams,
    start: Tensor,
    /// Embedding tables for slots `0..S-1`; the last slot's choice feeds
    /// nothing, so it has no table.
    embeddings: Vec<Tensor>,
    /// Per-slot `(weight [hidden, actions], bias [1, actions])`, zero
    /// initialized so the starting policy is uniform.
    heads: Vec<(Tensor, Tensor)>,
    baseline: f64,
    gamma: f64,
    beta: f64,
    opt: AdamState,
    updates: usize,
}

/// Tape handles for the controller parameters, in [`ControllerState::parameters`] order.
pub struct BoundController {
    cell: LstmVars,
    start: Var,
    embeddings: Vec<Var>,
    heads: Vec<(Var, Var)>,
}

/// Action counts per decision slot, in genotype order. The ablated space
/// pins skips to zero and drops the layer aggregator, so only the node
/// choices remain as slots there.
pub fn slot_action_counts(space: &SearchSpaceConfig) -> Vec<usize> {
    let mut v = vec![space.node_aggregators.len(); space.depth];
    if space.include_layer_aggregators {
        v.extend(std::iter::repeat(2).take(space.depth - 1));
        v.push(space.layer_aggregators.len());
    }
    v
}

/// Maps a genotype to its action indices under `space`'s orderings.
pub fn genotype_to_actions(space: &SearchSpaceConfig, g: &Genotype) -> Result<Vec<usize>, SearchError> {
    if !space.contains(g) {
        return Err(SearchError::Invalid(format!("genotype {g} lies outside the configured space")));
    }
    let mut actions = Vec::with_capacity(2 * space.depth);
    for kind in g.node_aggs() {
        actions.push(space.node_aggregators.iter().position(|k| k == kind).unwrap());
    }
    if space.include_layer_aggregators {
        for &bit in g.skips() {
            actions.push(usize::from(bit));
        }
        let agg = g.layer_agg().expect("contains() guarantees a layer aggregator here");
        actions.push(space.layer_aggregators.iter().position(|k| *k == agg).unwrap());
    }
    Ok(actions)
}

/// Inverse of [`genotype_to_actions`].
pub fn actions_to_genotype(space: &SearchSpaceConfig, actions: &[usize]) -> Result<Genotype, SearchError> {
    let counts = slot_action_counts(space);
    if actions.len() != counts.len() {
        return Err(SearchError::Invalid(format!(
            "expected {} actions, got {}",
            counts.len(),
            actions.len()
        )));
    }
    if let Some(t) = (0..counts.len()).find(|&t| actions[t] >= counts[t]) {
        return Err(SearchError::Invalid(format!(
            "action {} out of range for slot {t} ({} choices)",
            actions[t], counts[t]
        )));
    }
    let k = space.depth;
    let node_aggs = actions[..k].iter().map(|&a| space.node_aggregators[a]).collect();
    let (skips, layer_agg) = if space.include_layer_aggregators {
        (
            actions[k..2 * k - 1].iter().map(|&a| a == 1).collect(),
            Some(space.layer_aggregators[actions[2 * k - 1]]),
        )
    } else {
        (vec![false; k - 1], None)
    };
    Ok(Genotype::new(node_aggs, skips, layer_agg)?)
}

impl ControllerState {
    /// Fresh controller for `space`. Heads start at zero (uniform policy);
    /// the recurrent cell, embeddings, and start token are Glorot draws.
    pub fn new(
        space: &SearchSpaceConfig,
        hidden: usize,
        embed: usize,
        learning_rate: f64,
        gamma: f64,
        beta: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, SearchError> {
        space.validate()?;
        if hidden == 0 || embed == 0 {
            return Err(SearchError::Invalid("controller dims must be positive".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(SearchError::Invalid(format!("baseline decay must be in [0, 1), got {gamma}")));
        }
        let counts = slot_action_counts(space);
        let cell = LstmParams::new(embed, hidden, rng)?;
        let start = Tensor::glorot(1, embed, rng);
        let embeddings: Vec<Tensor> = counts[..counts.len() - 1]
            .iter()
            .map(|&n| Tensor::glorot(n, embed, rng))
            .collect();
        let heads: Vec<(Tensor, Tensor)> = counts
            .iter()
            .map(|&n| Ok((Tensor::zero_param(vec![hidden, n])?, Tensor::zero_param(vec![1, n])?)))
            .collect::<Result<_, TensorError>>()?;
        let mut state = ControllerState {
            space: space.clone(),
            hidden,
            embed,
            cell,
            start,
            embeddings,
            heads,
            baseline: 0.0,
            gamma,
            beta,
            opt: AdamState::new(&[], learning_rate),
            updates: 0,
        };
        state.opt = AdamState::new(&state.parameters(), learning_rate);
        Ok(state)
    }

    pub fn space(&self) -> &SearchSpaceConfig {
        &self.space
    }

    pub fn num_slots(&self) -> usize {
        self.heads.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn embed_dim(&self) -> usize {
        self.embed
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    /// Overrides the reward baseline (for resuming or analysis).
    pub fn set_baseline(&mut self, b: f64) {
        self.baseline = b;
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Every parameter in a stable order: cell (wx, wh, b gates), start
    /// embedding, slot embedding tables, then per-slot head weight and bias.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut v = self.cell.tensors();
        v.push(&self.start);
        v.extend(self.embeddings.iter());
        for (w, b) in &self.heads {
            v.push(w);
            v.push(b);
        }
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.cell.tensors_mut();
        v.push(&mut self.start);
        v.extend(self.embeddings.iter_mut());
        for (w, b) in &mut self.heads {
            v.push(w);
            v.push(b);
        }
        v
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundController {
        let slots: Vec<Var> = self.parameters().iter().map(|t| tape.leaf(t)).collect();
        self.bind_slots(&slots).expect("slot count matches parameters() by construction")
    }

    /// Rebuilds structured handles from slots in [`Self::parameters`] order.
    pub fn bind_slots(&self, slots: &[Var]) -> Result<BoundController, SearchError> {
        let want = 12 + 1 + self.embeddings.len() + 2 * self.heads.len();
        if slots.len() != want {
            return Err(SearchError::Invalid(format!(
                "controller has {want} parameter slots, got {}",
                slots.len()
            )));
        }
        let cell = lstm::bind_vars(&slots[0..12]);
        let start = slots[12];
        let emb_end = 13 + self.embeddings.len();
        let embeddings = slots[13..emb_end].to_vec();
        let heads = slots[emb_end..].chunks(2).map(|c| (c[0], c[1])).collect();
        Ok(BoundController { cell, start, embeddings, heads })
    }

    /// Runs the recurrence once, either sampling an action per slot or
    /// teacher-forcing `forced`. Returns per-slot log-prob vars of the chosen
    /// actions and the total entropy var, both differentiable through `tape`.
    fn unroll(
        &self,
        tape: &mut Tape,
        bound: &BoundController,
        mut drive: Drive<'_>,
    ) -> Result<Unrolled, SearchError> {
        let counts = slot_action_counts(&self.space);
        let mut h = tape.constant(vec![1, self.hidden], vec![0.0; self.hidden])?;
        let mut c = h;
        let mut x = bound.start;
        let mut actions = Vec::with_capacity(counts.len());
        let mut log_prob_vars = Vec::with_capacity(counts.len());
        let mut slot_probs = Vec::with_capacity(counts.len());
        let mut entropy_var: Option<Var> = None;
        for (t, &n) in counts.iter().enumerate() {
            let (hn, cn) = lstm::lstm_step(tape, &bound.cell, x, h, c)?;
            h = hn;
            c = cn;
            let (w, b) = bound.heads[t];
            let scores = tape.matmul(h, w)?;
            let logits = tape.add_bias(scores, b)?;
            let logp = tape.row_log_softmax(logits)?;
            let probs: Vec<f64> = tape.value(logp).iter().map(|v| v.exp()).collect();
            let action = match &mut drive {
                Drive::Sample(rng) => sample_index(&probs, rng),
                Drive::Forced(actions) => {
                    let a = actions[t];
                    if a >= n {
                        return Err(SearchError::Invalid(format!(
                            "forced action {a} out of range for slot {t} ({n} choices)"
                        )));
                    }
                    a
                }
            };
            let mut onehot = vec![0.0; n];
            onehot[action] = 1.0;
            let pick = tape.constant(vec![1, n], onehot)?;
            let picked = tape.mul(logp, pick)?;
            log_prob_vars.push(tape.sum_all(picked)?);
            // H = -sum p log p, with p recovered differentiably from log p.
            let p = tape.exp(logp)?;
            let plogp = tape.mul(p, logp)?;
            let sum = tape.sum_all(plogp)?;
            let ent = tape.scale(sum, -1.0)?;
            entropy_var = Some(match entropy_var {
                None => ent,
                Some(acc) => tape.add(acc, ent)?,
            });
            actions.push(action);
            slot_probs.push(probs);
            if t + 1 < counts.len() {
                let row = std::sync::Arc::new(vec![action]);
                x = tape.gather_rows(bound.embeddings[t], &row)?;
            }
        }
        Ok(Unrolled {
            actions,
            log_prob_vars,
            entropy_var: entropy_var.expect("at least one slot"),
            slot_probs,
        })
    }

    /// Samples one candidate architecture from the current policy.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Sample, SearchError> {
        let mut tape = Tape::new(false);
        let bound = self.bind(&mut tape);
        let run = self.unroll(&mut tape, &bound, Drive::Sample(rng))?;
        let log_probs: Vec<f64> = run.log_prob_vars.iter().map(|&v| tape.value(v)[0]).collect();
        let entropy = tape.value(run.entropy_var)[0];
        let genotype = actions_to_genotype(&self.space, &run.actions)?;
        Ok(Sample {
            genotype,
            actions: run.actions,
            log_probs,
            entropy,
            slot_probs: run.slot_probs,
        })
    }

    /// Log-probability of drawing `genotype` from the current policy.
    pub fn genotype_log_prob(&self, genotype: &Genotype) -> Result<f64, SearchError> {
        let actions = genotype_to_actions(&self.space, genotype)?;
        let mut tape = Tape::new(false);
        let bound = self.bind(&mut tape);
        let run = self.unroll(&mut tape, &bound, Drive::Forced(&actions))?;
        Ok(run.log_prob_vars.iter().map(|&v| tape.value(v)[0]).sum())
    }

    /// Full action distributions per slot under teacher forcing of `actions`
    /// (the distribution at slot `t` conditions on the forced prefix).
    pub fn slot_distributions(&self, actions: &[usize]) -> Result<Vec<Vec<f64>>, SearchError> {
        let mut tape = Tape::new(false);
        let bound = self.bind(&mut tape);
        let run = self.unroll(&mut tape, &bound, Drive::Forced(actions))?;
        Ok(run.slot_probs)
    }

    /// The policy-gradient surrogate on `tape`: the mean over episodes of
    /// `sum_slots log p(a) * (reward - baseline) + beta * entropy`. Ascending
    /// this raises the probability of above-baseline candidates.
    pub fn surrogate(
        &self,
        tape: &mut Tape,
        bound: &BoundController,
        episodes: &[Episode],
    ) -> Result<Var, SearchError> {
        let mut total: Option<Var> = None;
        for ep in episodes {
            let run = self.unroll(tape, bound, Drive::Forced(&ep.actions))?;
            let mut logp_sum = run.log_prob_vars[0];
            for &lp in &run.log_prob_vars[1..] {
                logp_sum = tape.add(logp_sum, lp)?;
            }
            let advantage = ep.reward - self.baseline;
            let weighted = tape.scale(logp_sum, advantage)?;
            let bonus = tape.scale(run.entropy_var, self.beta)?;
            let term = tape.add(weighted, bonus)?;
            total = Some(match total {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        let total = total.expect("validated non-empty");
        Ok(tape.scale(total, 1.0 / episodes.len() as f64)?)
    }

    /// One REINFORCE step: gradient ascent on [`Self::surrogate`] over the
    /// episode batch, then the baseline moves toward the batch's mean reward
    /// (`b <- gamma b + (1-gamma) mean(R)`). The advantage uses the baseline
    /// from before this update.
    pub fn reinforce_update(&mut self, episodes: &[Episode]) -> Result<(), SearchError> {
        if episodes.is_empty() {
            return Err(SearchError::Invalid("reinforce update needs at least one episode".into()));
        }
        let counts = slot_action_counts(&self.space);
        for ep in episodes {
            if ep.actions.len() != counts.len() {
                return Err(SearchError::Invalid(format!(
                    "episode has {} actions, the space has {} slots",
                    ep.actions.len(),
                    counts.len()
                )));
            }
            if !(0.0..=1.0).contains(&ep.reward) {
                return Err(SearchError::Invalid(format!("reward {} outside [0, 1]", ep.reward)));
            }
        }
        let mut tape = Tape::new(true);
        let slots: Vec<Var> = self.parameters().iter().map(|t| tape.leaf(t)).collect();
        let bound = self.bind_slots(&slots)?;
        let surr = self.surrogate(&mut tape, &bound, episodes)?;
        let loss = tape.scale(surr, -1.0)?;
        tape.backward(loss)?;
        let grads: Vec<Vec<f64>> = slots.iter().map(|&v| tape.harvest_grad(v)).collect();
        // The optimizer and the parameters both live on self; step needs them
        // apart, so the optimizer moves out for the call.
        let mut opt = std::mem::replace(&mut self.opt, AdamState::new(&[], 0.0));
        let result = (|| {
            let mut params = self.parameters_mut();
            for (p, g) in params.iter_mut().zip(grads) {
                p.set_grad(g)?;
            }
            opt.step(&mut params)
        })();
        self.opt = opt;
        result?;
        let mean_r = episodes.iter().map(|e| e.reward).sum::<f64>() / episodes.len() as f64;
        self.baseline = self.gamma * self.baseline + (1.0 - self.gamma) * mean_r;
        self.updates += 1;
        Ok(())
    }
}

enum Drive<'a> {
    Sample(&'a mut ChaCha8Rng),
    Forced(&'a [usize]),
}

struct Unrolled {
    actions: Vec<usize>,
    log_prob_vars: Vec<Var>,
    entropy_var: Var,
    slot_probs: Vec<Vec<f64>>,
}

/// Inverse-CDF draw; probabilities sum to 1 up to rounding, and any residual
/// mass falls to the last action.
fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let r: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if r < cum {
            return i;
        }
    }
    probs.len() - 1
}
