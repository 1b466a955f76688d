//! A complete model instance for one genotype: K aggregation layers, the
//! layer aggregator, and a linear classifier head.

use rand::Rng;

use crate::graph::Graph;
use crate::space::Genotype;
use crate::tensor::lstm::LstmParams;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::aggregate::{self, Activation};
use super::{LayerAggregatorKind, ModelError, NodeAggregatorKind};

/// Parameters of one model. Construction fixes every shape from the genotype
/// and the dimensions; the tensors live here between training steps and are
/// bound onto a fresh tape per forward pass.
#[derive(Debug, Clone)]
pub struct GnnModel {
    genotype: Genotype,
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    dropout: f64,
    layers: Vec<Vec<Tensor>>,
    layer_agg: Vec<Tensor>,
    classifier: Vec<Tensor>,
}

/// Tape handles for every parameter of a [`GnnModel`], in the same nesting.
#[derive(Debug, Clone)]
pub struct BoundModel {
    layers: Vec<Vec<Var>>,
    layer_agg: Vec<Var>,
    classifier: Vec<Var>,
}

fn init_node_params(
    kind: NodeAggregatorKind,
    d_in: usize,
    d_out: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Tensor>, ModelError> {
    use NodeAggregatorKind::*;
    let mut out = Vec::new();
    match kind {
        Gcn | SageSum | SageMean | SageMax | Mlp => {
            out.push(Tensor::glorot(d_in, d_out, rng));
            out.push(Tensor::zero_param(vec![1, d_out])?);
        }
        SageLstm => {
            let cell = LstmParams::new(d_in, d_out, rng)?;
            out.extend(cell.wx);
            out.extend(cell.wh);
            out.extend(cell.b);
            out.push(Tensor::glorot(d_out, d_out, rng));
            out.push(Tensor::zero_param(vec![1, d_out])?);
        }
        Gat | GatSym | GatLinear => {
            out.push(Tensor::glorot(d_in, d_out, rng));
            out.push(Tensor::zero_param(vec![1, d_out])?);
            out.push(Tensor::glorot(d_out, 1, rng));
            out.push(Tensor::glorot(d_out, 1, rng));
        }
        GatCos => {
            out.push(Tensor::glorot(d_in, d_out, rng));
            out.push(Tensor::zero_param(vec![1, d_out])?);
            out.push(Tensor::glorot(1, d_out, rng));
            out.push(Tensor::glorot(1, d_out, rng));
        }
        GatGenLinear => {
            out.push(Tensor::glorot(d_in, d_out, rng));
            out.push(Tensor::zero_param(vec![1, d_out])?);
            out.push(Tensor::glorot(d_in, d_out, rng));
            out.push(Tensor::glorot(d_in, d_out, rng));
            out.push(Tensor::glorot(d_out, 1, rng));
        }
    }
    Ok(out)
}

impl GnnModel {
    /// Fresh Glorot-initialized parameters for `genotype`. The classifier
    /// input width follows the layer aggregator: CONCAT widens by the number
    /// of selected layers, everything else keeps the hidden width.
    pub fn new(
        genotype: &Genotype,
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
            return Err(ModelError::Invalid("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(ModelError::Invalid(format!("dropout must be in [0, 1), got {dropout}")));
        }
        let mut layers = Vec::with_capacity(genotype.depth());
        for (l, &kind) in genotype.node_aggs().iter().enumerate() {
            let d_in = if l == 0 { input_dim } else { hidden_dim };
            layers.push(init_node_params(kind, d_in, hidden_dim, rng)?);
        }
        let layer_agg = match genotype.layer_agg() {
            Some(LayerAggregatorKind::Lstm) => {
                let cell = LstmParams::new(hidden_dim, hidden_dim, rng)?;
                let mut v: Vec<Tensor> = cell.wx;
                v.extend(cell.wh);
                v.extend(cell.b);
                v
            }
            _ => Vec::new(),
        };
        let d_z = match genotype.layer_agg() {
            Some(LayerAggregatorKind::Concat) => hidden_dim * genotype.selected_layers().len(),
            _ => hidden_dim,
        };
        let classifier = vec![Tensor::glorot(d_z, output_dim, rng), Tensor::zero_param(vec![1, output_dim])?];
        Ok(GnnModel {
            genotype: genotype.clone(),
            input_dim,
            hidden_dim,
            output_dim,
            dropout,
            layers,
            layer_agg,
            classifier,
        })
    }

    pub fn genotype(&self) -> &Genotype {
        &self.genotype
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    /// Width of the representation fed to the classifier.
    pub fn representation_dim(&self) -> usize {
        self.classifier[0].shape()[0]
    }

    /// Every parameter tensor in a stable order: layer 0 .. layer K-1 slots,
    /// layer-aggregator slots, classifier weight, classifier bias.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flatten()
            .chain(self.layer_agg.iter())
            .chain(self.classifier.iter())
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flatten()
            .chain(self.layer_agg.iter_mut())
            .chain(self.classifier.iter_mut())
            .collect()
    }

    /// Total scalar count across all parameters.
    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    pub fn layer_tensors(&self, layer: usize) -> &[Tensor] {
        &self.layers[layer]
    }

    pub fn layer_tensors_mut(&mut self, layer: usize) -> &mut [Tensor] {
        &mut self.layers[layer]
    }

    pub fn layer_agg_tensors(&self) -> &[Tensor] {
        &self.layer_agg
    }

    pub fn layer_agg_tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.layer_agg
    }

    pub fn classifier_tensors(&self) -> &[Tensor] {
        &self.classifier
    }

    pub fn classifier_tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.classifier
    }

    /// Registers every parameter on `tape` as a leaf, in [`Self::parameters`]
    /// order, and returns the structured handles.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let slots: Vec<Var> = self.parameters().iter().map(|t| tape.leaf(t)).collect();
        self.bind_slots(&slots).expect("slot count matches parameters() by construction")
    }

    /// Rebuilds the structured handles from pre-registered slots in
    /// [`Self::parameters`] order. Lets a caller own leaf creation, which the
    /// finite-difference checks need.
    pub fn bind_slots(&self, slots: &[Var]) -> Result<BoundModel, ModelError> {
        let want: usize = self.layers.iter().map(Vec::len).sum::<usize>() + self.layer_agg.len() + 2;
        if slots.len() != want {
            return Err(ModelError::Invalid(format!("model has {want} parameter slots, got {}", slots.len())));
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let v = slots[at..at + n].to_vec();
            at += n;
            v
        };
        let layers = self.layers.iter().map(|p| take(p.len())).collect();
        let layer_agg = take(self.layer_agg.len());
        let classifier = take(2);
        Ok(BoundModel { layers, layer_agg, classifier })
    }

    /// Full forward pass to classifier logits `[N, output_dim]`.
    ///
    /// Dropout is applied to every layer input and to the pre-classifier
    /// representation; it samples from `rng` only on a training tape with a
    /// positive rate, so evaluation passes consume no randomness.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        g: &Graph,
        rng: &mut impl Rng,
    ) -> Result<Var, ModelError> {
        if g.num_features() != self.input_dim {
            return Err(ModelError::Invalid(format!(
                "graph has {} features, model expects {}",
                g.num_features(),
                self.input_dim
            )));
        }
        let mut h = tape.leaf(g.features());
        let mut outs = Vec::with_capacity(self.genotype.depth());
        for (l, &kind) in self.genotype.node_aggs().iter().enumerate() {
            h = tape.dropout(h, self.dropout, rng)?;
            h = aggregate::node_aggregate(tape, kind, g, h, &bound.layers[l], Activation::Elu)?;
            outs.push(h);
        }
        let z = match self.genotype.layer_agg() {
            None => outs[outs.len() - 1],
            Some(kind) => {
                let sel: Vec<Var> = self.genotype.selected_layers().iter().map(|&i| outs[i]).collect();
                aggregate::layer_aggregate(tape, kind, &sel, &bound.layer_agg)?
            }
        };
        let zd = tape.dropout(z, self.dropout, rng)?;
        let lin = tape.matmul(zd, bound.classifier[0])?;
        Ok(tape.add_bias(lin, bound.classifier[1])?)
    }
}
