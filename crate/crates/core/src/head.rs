//! Attribute head: descriptor grouping, stepwise interactive external
//! attention (SIEA), skip fusion, max aggregation and the attention
//! dispersion loss (ADL).
//!
//! Per descriptor `i` the head computes
//!
//! ```text
//! F_i   = conv(relu(conv(T)))                      descriptor, C'×H×W
//! Q_i   = transpose(flatten(conv(F_i)))            N×C', N = H·W
//! G^j   = Q_i · K_jᵀ                                j = 1..d, N×S
//! P^1   = G^1,  P^j = [P^(j-1) | G^j] · I_(j-1)ᵀ    N×S
//! P̂     = l1_rows(softmax_columns(P^d))
//! F̂_i   = reshape(transpose(P̂ · V))                 C'×H×W
//! F̂'_i  = relu(F_i + align(F̂_i))
//! ```
//!
//! The pooled representation `x` only reads `F_i`, so attention never sits on
//! the encoding path.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::{self, Tensor};

/// A 1×1 convolution's weight (`out×in`) and bias (`out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T = Tensor> {
    pub weight: T,
    pub bias: T,
}

impl<T> Conv<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Conv<U> {
        Conv {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

impl Conv {
    fn init(rng: &mut Rng, out: usize, inp: usize) -> Self {
        Self {
            weight: rng.gaussian_tensor(&[out, inp], he_std(inp)),
            bias: Tensor::zeros(&[out]),
        }
    }
}

fn he_std(fan_in: usize) -> f64 {
    libm::sqrt(2.0 / fan_in as f64)
}

/// Parameters of one descriptor branch.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorParams<T = Tensor> {
    /// First transform layer, `C → C'`.
    pub transform_in: Conv<T>,
    /// Second transform layer, `C' → C'`.
    pub transform_out: Conv<T>,
    /// Projection producing the SIEA queries.
    pub query_proj: Conv<T>,
    /// `d` key memories, each `S×C'`.
    pub mem_keys: Vec<T>,
    /// `d - 1` interaction units, each `S×2S`.
    pub interact: Vec<T>,
    /// Value memory, `S×C'`.
    pub mem_value: T,
    /// Alignment convolution on the attention branch of the skip fusion.
    pub align: Conv<T>,
}

impl<T> DescriptorParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> DescriptorParams<U> {
        DescriptorParams {
            transform_in: self.transform_in.map(&mut f),
            transform_out: self.transform_out.map(&mut f),
            query_proj: self.query_proj.map(&mut f),
            mem_keys: self.mem_keys.iter().map(&mut f).collect(),
            interact: self.interact.iter().map(&mut f).collect(),
            mem_value: f(&self.mem_value),
            align: self.align.map(&mut f),
        }
    }

    /// All tensors in serialization order: transform_in (w, b),
    /// transform_out (w, b), query_proj (w, b), mem_keys, interact,
    /// mem_value, align (w, b).
    pub fn tensors(&self) -> Vec<&T> {
        let mut out = alloc::vec![
            &self.transform_in.weight,
            &self.transform_in.bias,
            &self.transform_out.weight,
            &self.transform_out.bias,
            &self.query_proj.weight,
            &self.query_proj.bias,
        ];
        out.extend(&self.mem_keys);
        out.extend(&self.interact);
        out.push(&self.mem_value);
        out.push(&self.align.weight);
        out.push(&self.align.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out = alloc::vec![
            &mut self.transform_in.weight,
            &mut self.transform_in.bias,
            &mut self.transform_out.weight,
            &mut self.transform_out.bias,
            &mut self.query_proj.weight,
            &mut self.query_proj.bias,
        ];
        out.extend(&mut self.mem_keys);
        out.extend(&mut self.interact);
        out.push(&mut self.mem_value);
        out.push(&mut self.align.weight);
        out.push(&mut self.align.bias);
        out
    }

    /// Tensors on the SIEA / skip-fusion branch (everything except the
    /// descriptor transform).
    pub fn attention_tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out = alloc::vec![&mut self.query_proj.weight, &mut self.query_proj.bias];
        out.extend(&mut self.mem_keys);
        out.extend(&mut self.interact);
        out.push(&mut self.mem_value);
        out.push(&mut self.align.weight);
        out.push(&mut self.align.bias);
        out
    }
}

/// Architecture sizes of the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadShape {
    /// Channels of the incoming base features, `C`.
    pub in_channels: usize,
    /// Descriptor channels, `C'`.
    pub channels: usize,
    /// Number of descriptors, `k`.
    pub descriptors: usize,
    /// Key memories per descriptor, `d`.
    pub memory_units: usize,
    /// Memory slots, `S`.
    pub memory_slots: usize,
}

impl HeadShape {
    pub fn validate(&self) -> Result<()> {
        if self.descriptors < 2 {
            return Err(Error::argument("at least two descriptors are required (k >= 2)"));
        }
        if self.in_channels == 0 || self.channels == 0 || self.memory_units == 0 || self.memory_slots == 0 {
            return Err(Error::argument("head sizes C, C', d, S must be positive"));
        }
        Ok(())
    }

    /// Length of the pooled representation, `k·C'`.
    pub fn pooled_len(&self) -> usize {
        self.descriptors * self.channels
    }

    /// Shapes of one descriptor's tensors, in serialization order.
    pub fn descriptor_tensor_shapes(&self) -> Vec<Vec<usize>> {
        let (c, cp, s) = (self.in_channels, self.channels, self.memory_slots);
        let mut shapes = alloc::vec![
            alloc::vec![cp, c],
            alloc::vec![cp],
            alloc::vec![cp, cp],
            alloc::vec![cp],
            alloc::vec![cp, cp],
            alloc::vec![cp],
        ];
        shapes.extend((0..self.memory_units).map(|_| alloc::vec![s, cp]));
        shapes.extend((1..self.memory_units).map(|_| alloc::vec![s, 2 * s]));
        shapes.push(alloc::vec![s, cp]);
        shapes.push(alloc::vec![cp, cp]);
        shapes.push(alloc::vec![cp]);
        shapes
    }
}

/// Normalizer of the dispersion loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdlDenominator {
    /// `k(k+1)/2`, as the loss was published.
    #[default]
    Paper,
    /// `k(k-1)/2`, the number of summed pairs.
    Pairs,
}

impl AdlDenominator {
    pub fn value(self, k: usize) -> f64 {
        let k = k as f64;
        match self {
            Self::Paper => k * (k + 1.0) / 2.0,
            Self::Pairs => k * (k - 1.0) / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeHeadParams {
    pub shape: HeadShape,
    pub descriptors: Vec<DescriptorParams>,
}

/// Intermediate results of a full head pass over one item.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub descriptors: Vec<Tensor>,
    pub attentive: Vec<Tensor>,
    /// Softmax-normalized aggregation maps, `H×W` each.
    pub aggregation_dists: Vec<Tensor>,
    pub pooled: Tensor,
}

impl AttributeHeadParams {
    /// Gaussian `N(0, 2/fan_in)` weights and memories, zero biases.
    pub fn init(shape: HeadShape, rng: &mut Rng) -> Result<Self> {
        shape.validate()?;
        let (c, cp, s) = (shape.in_channels, shape.channels, shape.memory_slots);
        let descriptors = (0..shape.descriptors)
            .map(|_| DescriptorParams {
                transform_in: Conv::init(rng, cp, c),
                transform_out: Conv::init(rng, cp, cp),
                query_proj: Conv::init(rng, cp, cp),
                mem_keys: (0..shape.memory_units)
                    .map(|_| rng.gaussian_tensor(&[s, cp], he_std(cp)))
                    .collect(),
                interact: (1..shape.memory_units)
                    .map(|_| rng.gaussian_tensor(&[s, 2 * s], he_std(2 * s)))
                    .collect(),
                mem_value: rng.gaussian_tensor(&[s, cp], he_std(s)),
                align: Conv::init(rng, cp, cp),
            })
            .collect();
        Ok(Self { shape, descriptors })
    }

    /// Checks sizes and finiteness against `shape`.
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.descriptors.len() != self.shape.descriptors {
            return Err(Error::argument("descriptor count does not match k"));
        }
        let expected = self.shape.descriptor_tensor_shapes();
        for d in &self.descriptors {
            let tensors = d.tensors();
            if tensors.len() != expected.len() {
                return Err(Error::argument("interaction units must number d - 1"));
            }
            for (t, shape) in tensors.iter().zip(&expected) {
                if t.shape() != shape.as_slice() {
                    return Err(Error::dimension("head parameters", t.shape(), shape));
                }
                if !t.is_finite() {
                    return Err(Error::argument("non-finite head parameter"));
                }
            }
        }
        Ok(())
    }

    /// Registers every tensor as a differentiable leaf.
    pub fn to_nodes(&self, tape: &mut Tape) -> Vec<DescriptorParams<NodeId>> {
        self.descriptors
            .iter()
            .map(|d| d.map(|t| tape.param(t.clone())))
            .collect()
    }

    /// Pooled representation `x` without building a tape: the inference path.
    pub fn pooled(&self, features: &Tensor) -> Result<Tensor> {
        let pooled = self
            .descriptors
            .iter()
            .map(|d| {
                let hidden = tensor::relu(&tensor::conv1x1(features, &d.transform_in.weight, &d.transform_in.bias)?);
                let desc = tensor::conv1x1(&hidden, &d.transform_out.weight, &d.transform_out.bias)?;
                tensor::mean_spatial(&desc)
            })
            .collect::<Result<Vec<_>>>()?;
        let parts: Vec<&Tensor> = pooled.iter().collect();
        tensor::concat(&parts, 0)
    }

    /// Full forward pass. With `siea == false` the attention branch is
    /// dropped and `F̂'_i = relu(F_i)`.
    pub fn forward(&self, features: &Tensor, siea: bool) -> Result<HeadOutputs> {
        let mut tape = Tape::new();
        let t = tape.constant(features.clone());
        let params = self.to_nodes(&mut tape);
        let desc = forward_descriptors(&mut tape, t, &params)?;
        let attentive = desc
            .iter()
            .zip(&params)
            .map(|(&f, p)| attentive_descriptor(&mut tape, f, p, siea))
            .collect::<Result<Vec<_>>>()?;
        let dists = attentive
            .iter()
            .map(|&a| aggregation_dist(&mut tape, a))
            .collect::<Result<Vec<_>>>()?;
        let pooled = pool_concat(&mut tape, &desc)?;
        let collect = |ids: &[NodeId]| ids.iter().map(|&i| tape.value(i).clone()).collect();
        Ok(HeadOutputs {
            descriptors: collect(&desc),
            attentive: collect(&attentive),
            aggregation_dists: collect(&dists),
            pooled: tape.value(pooled).clone(),
        })
    }
}

/// `F_i = conv(relu(conv(T)))` for every descriptor.
pub fn forward_descriptors(
    tape: &mut Tape,
    features: NodeId,
    params: &[DescriptorParams<NodeId>],
) -> Result<Vec<NodeId>> {
    params
        .iter()
        .map(|p| {
            let h = tape.conv1x1(features, p.transform_in.weight, p.transform_in.bias)?;
            let h = tape.relu(h);
            tape.conv1x1(h, p.transform_out.weight, p.transform_out.bias)
        })
        .collect()
}

/// SIEA attention weights of one descriptor: the column softmax of `P^d`
/// over positions, and `P̂`, its rows L1-normalized over slots. Both `N×S`.
pub fn siea_attention(
    tape: &mut Tape,
    descriptor: NodeId,
    p: &DescriptorParams<NodeId>,
) -> Result<(NodeId, NodeId)> {
    let [c, h, w] = *tape.value(descriptor).shape() else {
        return Err(Error::dimension("siea_forward", tape.value(descriptor).shape(), &[]));
    };
    if p.mem_keys.is_empty() || p.interact.len() + 1 != p.mem_keys.len() {
        return Err(Error::argument("SIEA needs d >= 1 key memories and d - 1 interaction units"));
    }
    let q = tape.conv1x1(descriptor, p.query_proj.weight, p.query_proj.bias)?;
    let q = tape.reshape(q, &[c, h * w])?;
    let q = tape.transpose(q)?;

    let mut state: Option<NodeId> = None;
    for (j, &key) in p.mem_keys.iter().enumerate() {
        let kt = tape.transpose(key)?;
        let g = tape.matmul(q, kt)?;
        state = Some(match state {
            None => g,
            Some(prev) => {
                let cat = tape.concat(&[prev, g], 1)?;
                let it = tape.transpose(p.interact[j - 1])?;
                tape.matmul(cat, it)?
            }
        });
    }
    let scores = state.expect("at least one key memory");
    let columns = tape.softmax_axis(scores, 0)?;
    let attn = tape.l1_normalize_axis(columns, 1)?;
    Ok((columns, attn))
}

/// Stepwise interactive external attention over one descriptor.
pub fn siea_forward(tape: &mut Tape, descriptor: NodeId, p: &DescriptorParams<NodeId>) -> Result<NodeId> {
    let (_, attn) = siea_attention(tape, descriptor, p)?;
    let shape = tape.value(descriptor).shape().to_vec();
    let out = tape.matmul(attn, p.mem_value)?;
    let out = tape.transpose(out)?;
    tape.reshape(out, &shape)
}

/// `relu(F_i + align(F̂_i))`.
pub fn fuse_skip(
    tape: &mut Tape,
    descriptor: NodeId,
    attended: NodeId,
    p: &DescriptorParams<NodeId>,
) -> Result<NodeId> {
    let aligned = tape.conv1x1(attended, p.align.weight, p.align.bias)?;
    let sum = tape.add(descriptor, aligned)?;
    Ok(tape.relu(sum))
}

/// `F̂'_i`, with or without the SIEA branch.
pub fn attentive_descriptor(
    tape: &mut Tape,
    descriptor: NodeId,
    p: &DescriptorParams<NodeId>,
    siea: bool,
) -> Result<NodeId> {
    if siea {
        let attended = siea_forward(tape, descriptor, p)?;
        fuse_skip(tape, descriptor, attended, p)
    } else {
        Ok(tape.relu(descriptor))
    }
}

/// Softmax over all positions of the per-position channel maximum.
pub fn aggregation_dist(tape: &mut Tape, attentive: NodeId) -> Result<NodeId> {
    let a = tape.max_channel(attentive)?;
    let shape = tape.value(a).shape().to_vec();
    let flat = tape.reshape(a, &[shape.iter().product()])?;
    let dist = tape.softmax_axis(flat, 0)?;
    tape.reshape(dist, &shape)
}

/// Attention dispersion loss over the attentive descriptors of one item:
/// the sum of pairwise inner products of their aggregation distributions,
/// divided by `denominator.value(k)`.
pub fn adl_loss(tape: &mut Tape, attentive: &[NodeId], denominator: AdlDenominator) -> Result<NodeId> {
    let k = attentive.len();
    if k < 2 {
        return Err(Error::argument("dispersion loss needs at least two descriptors"));
    }
    let dists = attentive
        .iter()
        .map(|&a| aggregation_dist(tape, a))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            pairs.push(tape.inner_product(dists[i], dists[j])?);
        }
    }
    let total = tape.sum_scalars(&pairs)?;
    Ok(tape.scale(total, 1.0 / denominator.value(k)))
}

/// `x = [GAP(F_1); …; GAP(F_k)]`.
pub fn pool_concat(tape: &mut Tape, descriptors: &[NodeId]) -> Result<NodeId> {
    if let Some(first) = descriptors.first() {
        let shape = tape.value(*first).shape().to_vec();
        if let Some(bad) = descriptors.iter().find(|&&d| tape.value(d).shape() != shape.as_slice()) {
            return Err(Error::dimension("pool_concat", &shape, tape.value(*bad).shape()));
        }
    }
    let pooled = descriptors
        .iter()
        .map(|&d| tape.mean_spatial(d))
        .collect::<Result<Vec<_>>>()?;
    tape.concat(&pooled, 0)
}
