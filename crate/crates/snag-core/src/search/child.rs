//! Training and evaluating one candidate architecture (a "child" of the
//! controller): full-batch Adam with early stopping on the validation
//! metric, optional parameter sharing across candidates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gnn::metrics::{self, MetricKind};
use crate::gnn::model::GnnModel;
use crate::graph::{Dataset, Graph, Labels, SplitRole};
use crate::space::Genotype;
use crate::tensor::adam::AdamState;
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;

use super::params::ParamDict;
use super::{is_divergence, SearchError};

/// Child-training knobs, kept apart from search-level settings so the
/// derivation grid can vary them per run.
#[derive(Debug, Clone)]
pub struct ChildConfig {
    pub hidden_dim: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
}

impl Default for ChildConfig {
    fn default() -> Self {
        ChildConfig {
            hidden_dim: 64,
            dropout: 0.5,
            learning_rate: 0.005,
            max_epochs: 300,
            patience: 30,
        }
    }
}

/// Result of one child run. The model carries the parameters of the best
/// validation epoch, not the last one.
#[derive(Debug, Clone)]
pub struct ChildOutcome {
    pub genotype: Genotype,
    pub val_metric: f64,
    pub test_metric: f64,
    /// Training epochs actually executed (early stopping may cut this short).
    pub epochs_run: usize,
    /// Numeric blowup during training; metrics are reported as 0.
    pub diverged: bool,
    pub model: GnnModel,
}

fn mask_for(g: &Graph, role: SplitRole) -> &[bool] {
    match role {
        SplitRole::Train => &g.train_mask,
        SplitRole::Val => &g.val_mask,
        SplitRole::Test => &g.test_mask,
    }
}

/// The metric a dataset is scored with.
pub fn metric_kind_for(data: &Dataset) -> MetricKind {
    if data.is_multilabel() {
        MetricKind::MicroF1
    } else {
        MetricKind::Accuracy
    }
}

/// Pooled metric over every graph of a role: hit/count pooling for accuracy,
/// global confusion pooling for micro-F1.
pub fn evaluate(model: &GnnModel, data: &Dataset, role: SplitRole) -> Result<f64, SearchError> {
    let graphs = data.graphs_for(role);
    let mut rng = ChaCha8Rng::seed_from_u64(0); // eval passes consume no draws
    if data.is_multilabel() {
        let (mut tp, mut fp, mut fnn) = (0u64, 0u64, 0u64);
        for g in graphs {
            let logits = eval_logits(model, g, &mut rng)?;
            let Labels::Multilabel { values, .. } = g.labels() else {
                return Err(SearchError::Invalid("mixed label kinds across graphs".into()));
            };
            let (a, b, c) = metrics::micro_f1_counts(&logits, values, mask_for(g, role))?;
            tp += a;
            fp += b;
            fnn += c;
        }
        Ok(metrics::micro_f1(tp, fp, fnn))
    } else {
        let (mut hits, mut total) = (0.0, 0usize);
        for g in graphs {
            let logits = eval_logits(model, g, &mut rng)?;
            let mask = mask_for(g, role);
            let n = mask.iter().filter(|&&b| b).count();
            hits += metrics::metric(&logits, g.labels(), mask, MetricKind::Accuracy)? * n as f64;
            total += n;
        }
        Ok(hits / total as f64)
    }
}

fn eval_logits(model: &GnnModel, g: &Graph, rng: &mut ChaCha8Rng) -> Result<Tensor, SearchError> {
    let mut tape = Tape::new(false);
    let bound = model.bind(&mut tape);
    let logits = model.forward(&mut tape, &bound, g, rng)?;
    Ok(tape.to_tensor(logits))
}

/// One full-batch training epoch: mean loss over the training graphs,
/// backward, Adam step.
fn train_epoch(
    model: &mut GnnModel,
    opt: &mut AdamState,
    data: &Dataset,
    rng: &mut ChaCha8Rng,
) -> Result<(), SearchError> {
    let graphs = data.graphs_for(SplitRole::Train);
    let mut tape = Tape::new(true);
    let slots: Vec<_> = model.parameters().iter().map(|t| tape.leaf(t)).collect();
    let bound = model.bind_slots(&slots)?;
    let mut total = None;
    for g in graphs {
        let logits = model.forward(&mut tape, &bound, g, rng)?;
        let l = metrics::loss(&mut tape, logits, g.labels(), mask_for(g, SplitRole::Train))?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    let total = total.ok_or_else(|| SearchError::Invalid("no training graphs".into()))?;
    let loss = tape.scale(total, 1.0 / graphs.len() as f64)?;
    tape.backward(loss)?;
    let grads: Vec<Vec<f64>> = slots.iter().map(|&v| tape.harvest_grad(v)).collect();
    let mut params = model.parameters_mut();
    for (p, g) in params.iter_mut().zip(grads) {
        p.set_grad(g)?;
    }
    opt.step(&mut params)?;
    Ok(())
}

/// Weight-sharing keys for a model: node aggregators at their layer index,
/// then reserved rows past the layers for the layer-aggregator cell and the
/// classifier. The classifier key carries its input width, which varies by
/// genotype under CONCAT.
fn shared_keys(model: &GnnModel) -> Vec<(usize, String)> {
    let k = model.genotype().depth();
    let mut keys: Vec<(usize, String)> = model
        .genotype()
        .node_aggs()
        .iter()
        .enumerate()
        .map(|(l, kind)| (l, kind.id().to_string()))
        .collect();
    if !model.layer_agg_tensors().is_empty() {
        keys.push((k, "layer-lstm".to_string()));
    }
    keys.push((k + 1, format!("classifier-in{}", model.representation_dim())));
    keys
}

fn load_shared(model: &mut GnnModel, dict: &ParamDict) -> Result<(), SearchError> {
    let keys = shared_keys(model);
    let k = model.genotype().depth();
    for (layer, op) in keys {
        let Some(stored) = dict.get(layer, &op) else { continue };
        let dst: &mut [Tensor] = if layer < k {
            model.layer_tensors_mut(layer)
        } else if layer == k {
            model.layer_agg_tensors_mut()
        } else {
            model.classifier_tensors_mut()
        };
        if stored.len() != dst.len() || stored.iter().zip(dst.iter()).any(|(a, b)| a.shape() != b.shape()) {
            return Err(SearchError::Invalid(format!(
                "shared entry ({layer}, {op}) does not match the model's schema"
            )));
        }
        for (d, s) in dst.iter_mut().zip(stored.iter()) {
            *d = s.clone();
        }
    }
    Ok(())
}

fn save_shared(model: &GnnModel, dict: &mut ParamDict) -> Result<(), SearchError> {
    let k = model.genotype().depth();
    for (layer, op) in shared_keys(model) {
        let src: &[Tensor] = if layer < k {
            model.layer_tensors(layer)
        } else if layer == k {
            model.layer_agg_tensors()
        } else {
            model.classifier_tensors()
        };
        dict.put(layer, &op, src)?;
    }
    Ok(())
}

/// Trains one candidate to convergence and reports its best validation
/// metric along with the test metric at that same epoch.
///
/// With `shared`, parameters present in the dictionary seed the model before
/// training and the best-epoch parameters are written back afterwards
/// (read-modify-write). A numeric blowup mid-training is absorbed: the
/// candidate comes back flagged with zero metrics instead of an error, and
/// nothing is written back. `max_epochs = 0` evaluates the untrained model.
pub fn train_child(
    genotype: &Genotype,
    data: &Dataset,
    cfg: &ChildConfig,
    mut shared: Option<&mut ParamDict>,
    seed: u64,
) -> Result<ChildOutcome, SearchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = GnnModel::new(
        genotype,
        data.num_features(),
        cfg.hidden_dim,
        data.num_classes(),
        cfg.dropout,
        &mut rng,
    )?;
    if let Some(dict) = shared.as_deref() {
        load_shared(&mut model, dict)?;
    }
    let mut opt = AdamState::new(&model.parameters(), cfg.learning_rate);
    let outcome = run_training(genotype, data, cfg, model, &mut opt, &mut rng)?;
    if !outcome.diverged {
        if let Some(dict) = shared.as_deref_mut() {
            save_shared(&outcome.model, dict)?;
        }
    }
    Ok(outcome)
}

fn run_training(
    genotype: &Genotype,
    data: &Dataset,
    cfg: &ChildConfig,
    mut model: GnnModel,
    opt: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<ChildOutcome, SearchError> {
    let mut epochs_run = 0;
    // Any numeric blowup from here on flags the candidate instead of failing.
    let diverged = |e: SearchError, epochs_run: usize, model: GnnModel| {
        if is_divergence(&e) {
            Ok(ChildOutcome {
                genotype: genotype.clone(),
                val_metric: 0.0,
                test_metric: 0.0,
                epochs_run,
                diverged: true,
                model,
            })
        } else {
            Err(e)
        }
    };
    let mut best_val = match evaluate(&model, data, SplitRole::Val) {
        Ok(v) => v,
        Err(e) => return diverged(e, epochs_run, model),
    };
    let mut best_test = match evaluate(&model, data, SplitRole::Test) {
        Ok(v) => v,
        Err(e) => return diverged(e, epochs_run, model),
    };
    let mut best_params: Vec<Tensor> = model.parameters().into_iter().cloned().collect();
    let mut since_improvement = 0;
    for _ in 1..=cfg.max_epochs {
        if let Err(e) = train_epoch(&mut model, opt, data, rng) {
            return diverged(e, epochs_run, model);
        }
        epochs_run += 1;
        let val = match evaluate(&model, data, SplitRole::Val) {
            Ok(v) => v,
            Err(e) => return diverged(e, epochs_run, model),
        };
        if val > best_val {
            best_val = val;
            best_test = match evaluate(&model, data, SplitRole::Test) {
                Ok(v) => v,
                Err(e) => return diverged(e, epochs_run, model),
            };
            best_params = model.parameters().into_iter().cloned().collect();
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= cfg.patience {
                break;
            }
        }
    }
    for (dst, src) in model.parameters_mut().into_iter().zip(best_params) {
        *dst = src;
    }
    Ok(ChildOutcome {
        genotype: genotype.clone(),
        val_metric: best_val,
        test_metric: best_test,
        epochs_run,
        diverged: false,
        model,
    })
}
