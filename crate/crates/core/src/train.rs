//! Combined objective and the alternating training loop.
//!
//! Each outer iteration samples a query subset Ω of the database Γ, fixes the
//! database codes Z, runs mini-batch SGD on the summed hash and dispersion
//! losses of the sampled queries, then recomputes the pooled-feature center
//! and Z from the updated encoder.
//!
//! Pooled vectors are centered before projection: on the batch mean while
//! training, on the database mean when encoding. Without it the positive
//! common mode of the pooled features dominates `W x` and the alternation
//! settles on a single code shared by every item.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hashing::{self, AgmhModel, Code};
use crate::head::{self, AdlDenominator, DescriptorParams, HeadShape};
use crate::rng::Rng;
use crate::synth::{similarity_matrix, FeatureSet};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

const INIT_STREAM: u64 = 0;
const SAMPLE_STREAM: u64 = 1;

/// Desk learning rate times code length. The summed pairwise loss grows
/// with `l`, so the step shrinks with it.
pub const DESK_LR_BITS: f64 = 7.2e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Number of descriptors `k`.
    pub descriptors: usize,
    /// Descriptor channels `C'`.
    pub channels: usize,
    /// Key memories `d`.
    pub memory_units: usize,
    /// Memory slots `S`.
    pub memory_slots: usize,
    pub bits: usize,
    pub alpha: f64,
    pub beta: f64,
    pub outer_iterations: usize,
    pub epochs_per_iteration: usize,
    pub batch_size: usize,
    pub query_sample_size: usize,
    pub lr: f64,
    /// 1-based outer iteration from which the learning rate is divided by
    /// `lr_drop_factor`; 0 disables the drop.
    pub lr_drop_at: usize,
    pub lr_drop_factor: f64,
    pub seed: u64,
    /// Include the dispersion loss.
    pub adl: bool,
    /// Route the dispersion loss through SIEA and skip fusion.
    pub siea: bool,
    pub adl_denominator: AdlDenominator,
}

impl TrainConfig {
    /// Small architecture and schedule sized for a single CPU core.
    pub fn desk(bits: usize) -> Self {
        Self {
            descriptors: 3,
            channels: 16,
            memory_units: 2,
            memory_slots: 8,
            bits,
            alpha: 1.0,
            beta: 0.5,
            outer_iterations: 10,
            epochs_per_iteration: 10,
            batch_size: 16,
            query_sample_size: 128,
            lr: DESK_LR_BITS / bits as f64,
            lr_drop_at: 8,
            lr_drop_factor: 10.0,
            seed: 0,
            adl: true,
            siea: true,
            adl_denominator: AdlDenominator::Paper,
        }
    }

    /// Published architecture and schedule.
    pub fn paper(bits: usize) -> Self {
        Self {
            descriptors: 6,
            channels: 512,
            memory_units: 4,
            memory_slots: 128,
            bits,
            alpha: 1.0,
            beta: 0.5,
            outer_iterations: 40,
            epochs_per_iteration: 30,
            batch_size: 64,
            query_sample_size: 2000,
            lr: 1e-3,
            lr_drop_at: 40,
            lr_drop_factor: 10.0,
            seed: 0,
            adl: true,
            siea: true,
            adl_denominator: AdlDenominator::Paper,
        }
    }

    pub fn head_shape(&self, in_channels: usize) -> HeadShape {
        HeadShape {
            in_channels,
            channels: self.channels,
            descriptors: self.descriptors,
            memory_units: self.memory_units,
            memory_slots: self.memory_slots,
        }
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            alpha: self.alpha,
            beta: self.beta,
            adl: self.adl,
            siea: self.siea,
            adl_denominator: self.adl_denominator,
        }
    }

    pub fn validate(&self, database_size: usize) -> Result<()> {
        let counts = [
            self.descriptors,
            self.channels,
            self.memory_units,
            self.memory_slots,
            self.bits,
            self.outer_iterations,
            self.epochs_per_iteration,
            self.batch_size,
            self.query_sample_size,
        ];
        if counts.contains(&0) {
            return Err(Error::argument("sizes and schedule counts must be positive"));
        }
        if self.descriptors < 2 {
            return Err(Error::argument("at least two descriptors are required (k >= 2)"));
        }
        // Pooled vectors are centered on their batch; one item centers to zero.
        if self.batch_size < 2 || self.query_sample_size % self.batch_size == 1 {
            return Err(Error::argument(
                "every batch needs at least two items (batch_size >= 2, and query_sample_size must not leave a single-item remainder)",
            ));
        }
        if self.query_sample_size > database_size {
            return Err(Error::argument("query_sample_size exceeds the database size"));
        }
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        if !non_negative(self.alpha) || !non_negative(self.beta) {
            return Err(Error::argument("alpha and beta must be finite and non-negative"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || !(self.lr_drop_factor.is_finite() && self.lr_drop_factor > 0.0) {
            return Err(Error::argument("learning rate and drop factor must be positive"));
        }
        Ok(())
    }

    /// Learning rate in effect during 1-based outer `iteration`.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        if self.lr_drop_at > 0 && iteration >= self.lr_drop_at {
            self.lr / self.lr_drop_factor
        } else {
            self.lr
        }
    }
}

/// Loss weights and ablation switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub alpha: f64,
    pub beta: f64,
    pub adl: bool,
    pub siea: bool,
    pub adl_denominator: AdlDenominator,
}

/// Model parameters registered on a tape.
#[derive(Debug, Clone)]
pub struct ModelNodes {
    pub head: Vec<DescriptorParams<NodeId>>,
    pub hash_weight: NodeId,
}

impl ModelNodes {
    pub fn register(tape: &mut Tape, model: &AgmhModel) -> Self {
        Self {
            head: model.head.to_nodes(tape),
            hash_weight: tape.param(model.hash.weight.clone()),
        }
    }
}

/// `hash_loss(r) + β·adl_loss(r)` for one query item, given its descriptors
/// and its centered pooled vector.
pub fn item_loss(
    tape: &mut Tape,
    nodes: &ModelNodes,
    descriptors: &[NodeId],
    hash_input: NodeId,
    codes: NodeId,
    similarity: &[i8],
    options: &LossOptions,
) -> Result<NodeId> {
    let relaxed = hashing::encode_relaxed_node(tape, nodes.hash_weight, hash_input)?;
    let hash = hashing::hash_loss(tape, relaxed, codes, similarity, options.alpha)?;
    if !options.adl || options.beta == 0.0 {
        return Ok(hash);
    }
    let attentive = descriptors
        .iter()
        .zip(&nodes.head)
        .map(|(&f, p)| head::attentive_descriptor(tape, f, p, options.siea))
        .collect::<Result<Vec<_>>>()?;
    let adl = head::adl_loss(tape, &attentive, options.adl_denominator)?;
    let adl = tape.scale(adl, options.beta);
    tape.add(hash, adl)
}

/// One query of a batch: its base features and similarity row against Γ.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub features: &'a Tensor,
    pub similarity: &'a [i8],
}

/// `Σ_r [hash_loss(r) + β·adl_loss(r)]` over `batch`, plus the per-item terms.
///
/// Each pooled vector enters the encoder centered on the batch mean,
/// `x_r − x̄_B`, so a single-item batch carries no hash signal.
pub fn total_loss(
    tape: &mut Tape,
    nodes: &ModelNodes,
    batch: &[BatchItem<'_>],
    codes: NodeId,
    options: &LossOptions,
) -> Result<(NodeId, Vec<NodeId>)> {
    if batch.is_empty() {
        return Err(Error::argument("empty batch"));
    }
    let mut descriptors = Vec::with_capacity(batch.len());
    let mut pooled = Vec::with_capacity(batch.len());
    for item in batch {
        let f = tape.constant(item.features.clone());
        let desc = head::forward_descriptors(tape, f, &nodes.head)?;
        pooled.push(head::pool_concat(tape, &desc)?);
        descriptors.push(desc);
    }
    let mut sum = pooled[0];
    for &x in &pooled[1..] {
        sum = tape.add(sum, x)?;
    }
    let batch_mean = tape.scale(sum, 1.0 / batch.len() as f64);

    let mut items = Vec::with_capacity(batch.len());
    for ((item, desc), &x) in batch.iter().zip(&descriptors).zip(&pooled) {
        let centered = tape.sub(x, batch_mean)?;
        items.push(item_loss(tape, nodes, desc, centered, codes, item.similarity, options)?);
    }
    Ok((tape.sum_scalars(&items)?, items))
}

/// Value of [`total_loss`] at `model`.
pub fn total_loss_value(
    model: &AgmhModel,
    batch: &[BatchItem<'_>],
    codes: &Tensor,
    options: &LossOptions,
) -> Result<f64> {
    let mut tape = Tape::new();
    let nodes = ModelNodes::register(&mut tape, model);
    let z = tape.constant(codes.clone());
    let (loss, _) = total_loss(&mut tape, &nodes, batch, z, options)?;
    Ok(tape.value(loss).data()[0])
}

/// Gradient of the batch-mean loss with respect to every model parameter,
/// laid out like the model. Returns `(mean loss, per-item losses, gradient)`.
pub fn loss_gradient(
    model: &AgmhModel,
    batch: &[BatchItem<'_>],
    codes: &Tensor,
    options: &LossOptions,
) -> Result<(f64, Vec<f64>, AgmhModel)> {
    let mut tape = Tape::new();
    let nodes = ModelNodes::register(&mut tape, model);
    let z = tape.constant(codes.clone());
    let (sum, items) = total_loss(&mut tape, &nodes, batch, z, options)?;
    let mean = tape.scale(sum, 1.0 / batch.len() as f64);
    let grads = tape.backward(mean)?;

    let mut gradient = model.clone();
    for (dst, src) in gradient.head.descriptors.iter_mut().zip(&nodes.head) {
        for (g, &id) in dst.tensors_mut().into_iter().zip(src.tensors()) {
            *g = grads.get_or_zeros(id, g);
        }
    }
    gradient.hash.weight = grads.get_or_zeros(nodes.hash_weight, &model.hash.weight);
    let per_item = items.iter().map(|&i| tape.value(i).data()[0]).collect();
    Ok((tape.value(mean).data()[0], per_item, gradient))
}

/// `model -= lr · gradient`, parameter by parameter.
pub fn sgd_step(model: &mut AgmhModel, gradient: &AgmhModel, lr: f64) -> Result<()> {
    for (dst, src) in model.head.descriptors.iter_mut().zip(&gradient.head.descriptors) {
        for (p, g) in dst.tensors_mut().into_iter().zip(src.tensors()) {
            p.sub_scaled(g, lr)?;
        }
    }
    model.hash.weight.sub_scaled(&gradient.hash.weight, lr)
}

/// Mean per-query loss over one epoch (1-based indices).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: AgmhModel,
    /// Final database codes, one per item of the training set.
    pub codes: Vec<Code>,
    pub loss_trace: Vec<LossRecord>,
}

/// Trains on `dataset`, which serves as the database Γ.
pub fn train(dataset: &FeatureSet, config: &TrainConfig) -> Result<TrainOutput> {
    if dataset.is_empty() {
        return Err(Error::argument("cannot train on an empty dataset"));
    }
    config.validate(dataset.len())?;
    let mut model = AgmhModel::init(
        config.head_shape(dataset.channels),
        config.bits,
        &mut Rng::fork(config.seed, INIT_STREAM),
    )?;
    let mut sampler = Rng::fork(config.seed, SAMPLE_STREAM);
    let options = config.loss_options();

    model.recenter(&dataset.features)?;
    let mut codes = hashing::update_database_codes(&model, &dataset.features)?;
    let mut trace = Vec::with_capacity(config.outer_iterations * config.epochs_per_iteration);

    for iteration in 1..=config.outer_iterations {
        let omega = sampler.sample_indices(dataset.len(), config.query_sample_size);
        let omega_labels: Vec<u32> = omega.iter().map(|&r| dataset.labels[r]).collect();
        let sim = similarity_matrix(&omega_labels, &dataset.labels)?;
        let z = hashing::codes_tensor(&codes)?;
        let lr = config.lr_at(iteration);

        let mut order: Vec<usize> = (0..omega.len()).collect();
        for epoch in 1..=config.epochs_per_iteration {
            sampler.shuffle(&mut order);
            let mut epoch_total = 0.0;
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<BatchItem<'_>> = chunk
                    .iter()
                    .map(|&q| BatchItem {
                        features: &dataset.features[omega[q]],
                        similarity: sim.row(q),
                    })
                    .collect();
                let (mean, items, gradient) = loss_gradient(&model, &batch, &z, &options)?;
                if !mean.is_finite() {
                    return Err(Error::Diverged { iteration, epoch });
                }
                epoch_total += items.iter().sum::<f64>();
                sgd_step(&mut model, &gradient, lr)?;
            }
            let mean_loss = epoch_total / omega.len() as f64;
            if !mean_loss.is_finite() || !model.hash.weight.is_finite() {
                return Err(Error::Diverged { iteration, epoch });
            }
            trace.push(LossRecord {
                iteration,
                epoch,
                mean_loss,
            });
        }
        model.recenter(&dataset.features)?;
        codes = hashing::update_database_codes(&model, &dataset.features)?;
    }

    Ok(TrainOutput {
        model,
        codes,
        loss_trace: trace,
    })
}
