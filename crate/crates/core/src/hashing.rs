//! Linear hash encoder and the relaxed asymmetric pairwise loss.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::head::{AttributeHeadParams, HeadShape};
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::{self, Tensor};

/// A binary code with coordinates in `{-1, +1}`.
pub type Code = Vec<i8>;

/// `sign` with `sign(0) = +1`.
pub fn sign(v: f64) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

/// Linear encoder `v = W x` with `W: l × kC'`.
#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    pub weight: Tensor,
}

impl HashModel {
    pub fn new(weight: Tensor) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::argument("hash weight must be a matrix"));
        }
        if !weight.is_finite() {
            return Err(Error::argument("non-finite hash weight"));
        }
        Ok(Self { weight })
    }

    pub fn init(bits: usize, input_len: usize, rng: &mut Rng) -> Result<Self> {
        if bits == 0 || input_len == 0 {
            return Err(Error::argument("code length and input length must be positive"));
        }
        Self::new(rng.gaussian_tensor(&[bits, input_len], libm::sqrt(2.0 / input_len as f64)))
    }

    pub fn bits(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn input_len(&self) -> usize {
        self.weight.shape()[1]
    }

    fn project(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape() != [self.input_len()] {
            return Err(Error::dimension("hash encoder", self.weight.shape(), x.shape()));
        }
        let col = x.reshape(&[self.input_len(), 1])?;
        tensor::matmul(&self.weight, &col)?.reshape(&[self.bits()])
    }

    /// `ũ = tanh(W x)`.
    pub fn encode_relaxed(&self, x: &Tensor) -> Result<Tensor> {
        Ok(tensor::tanh(&self.project(x)?))
    }

    /// `u = sign(W x)`.
    pub fn encode_binary(&self, x: &Tensor) -> Result<Code> {
        Ok(self.project(x)?.data().iter().map(|&v| sign(v)).collect())
    }
}

/// Head plus hash encoder.
///
/// `center` is subtracted from the pooled vector before projection. It is a
/// statistic of the database (see [`AgmhModel::recenter`]), not a trained
/// parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AgmhModel {
    pub head: AttributeHeadParams,
    pub hash: HashModel,
    pub center: Tensor,
}

impl AgmhModel {
    pub fn init(shape: HeadShape, bits: usize, rng: &mut Rng) -> Result<Self> {
        let head = AttributeHeadParams::init(shape, rng)?;
        let hash = HashModel::init(bits, shape.pooled_len(), rng)?;
        Ok(Self {
            head,
            hash,
            center: Tensor::zeros(&[shape.pooled_len()]),
        })
    }

    /// Sets `center` to the mean pooled vector of `features`.
    pub fn recenter(&mut self, features: &[Tensor]) -> Result<()> {
        if features.is_empty() {
            return Err(Error::argument("cannot center on an empty set"));
        }
        let mut sum = Tensor::zeros(&[self.head.shape.pooled_len()]);
        for f in features {
            sum.add_assign(&self.head.pooled(f)?);
        }
        self.center = tensor::scale(&sum, 1.0 / features.len() as f64);
        Ok(())
    }

    /// Pooled vector minus `center`: the input of the hash projection.
    pub fn hash_input(&self, features: &Tensor) -> Result<Tensor> {
        tensor::sub(&self.head.pooled(features)?, &self.center)
    }

    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        if self.hash.input_len() != self.head.shape.pooled_len() {
            return Err(Error::dimension(
                "model",
                self.hash.weight.shape(),
                &[self.head.shape.pooled_len()],
            ));
        }
        if !self.hash.weight.is_finite() {
            return Err(Error::argument("non-finite hash weight"));
        }
        if self.center.shape() != [self.hash.input_len()] || !self.center.is_finite() {
            return Err(Error::argument("center must be a finite vector of the pooled length"));
        }
        Ok(())
    }

    pub fn bits(&self) -> usize {
        self.hash.bits()
    }

    /// Out-of-sample code of raw base features.
    pub fn encode(&self, features: &Tensor) -> Result<Code> {
        self.hash.encode_binary(&self.hash_input(features)?)
    }
}

/// Recomputes the database codes `z_t = sign(W x_t)` for every item.
pub fn update_database_codes(model: &AgmhModel, features: &[Tensor]) -> Result<Vec<Code>> {
    features.iter().map(|f| model.encode(f)).collect()
}

/// Stacks codes into an `m × l` matrix of ±1 values.
pub fn codes_tensor(codes: &[Code]) -> Result<Tensor> {
    let bits = codes.first().map_or(0, Vec::len);
    if codes.iter().any(|c| c.len() != bits) {
        return Err(Error::argument("codes have differing lengths"));
    }
    let data = codes.iter().flatten().map(|&b| f64::from(b)).collect();
    Tensor::new(&[codes.len(), bits], data)
}

/// `ũ = tanh(W x)` on a tape.
pub fn encode_relaxed_node(tape: &mut Tape, weight: NodeId, x: NodeId) -> Result<NodeId> {
    let [bits, len] = *tape.value(weight).shape() else {
        return Err(Error::dimension("encode_relaxed", tape.value(weight).shape(), &[]));
    };
    if tape.value(x).shape() != [len] {
        return Err(Error::dimension("encode_relaxed", &[bits, len], tape.value(x).shape()));
    }
    let col = tape.reshape(x, &[len, 1])?;
    let v = tape.matmul(weight, col)?;
    let v = tape.reshape(v, &[bits])?;
    Ok(tape.tanh(v))
}

/// `Σ_t (⟨ũ, z_t⟩ − l·S_t)² + α‖ũ − sign(ũ)‖²` with `sign(ũ)` held constant.
///
/// `codes` is the `m × l` database code matrix (normally a constant node) and
/// `similarity` the ±1 row of the query against the `m` database items.
pub fn hash_loss(
    tape: &mut Tape,
    relaxed: NodeId,
    codes: NodeId,
    similarity: &[i8],
    alpha: f64,
) -> Result<NodeId> {
    let [m, bits] = *tape.value(codes).shape() else {
        return Err(Error::dimension("hash_loss", tape.value(codes).shape(), &[]));
    };
    if tape.value(relaxed).shape() != [bits] {
        return Err(Error::dimension("hash_loss", &[m, bits], tape.value(relaxed).shape()));
    }
    if similarity.len() != m {
        return Err(Error::dimension("hash_loss", &[m, bits], &[similarity.len()]));
    }
    let col = tape.reshape(relaxed, &[bits, 1])?;
    let inner = tape.matmul(codes, col)?;
    let inner = tape.reshape(inner, &[m])?;
    let target: Vec<f64> = similarity.iter().map(|&s| bits as f64 * f64::from(s)).collect();
    let target = tape.constant(Tensor::from_vec(target));
    let residual = tape.sub(inner, target)?;
    let pairwise = tape.inner_product(residual, residual)?;

    let binarized: Vec<f64> = tape.value(relaxed).data().iter().map(|&v| f64::from(sign(v))).collect();
    let binarized = tape.constant(Tensor::from_vec(binarized));
    let gap = tape.sub(relaxed, binarized)?;
    let quant = tape.inner_product(gap, gap)?;
    let quant = tape.scale(quant, alpha);
    tape.add(pairwise, quant)
}

/// Tape-free evaluation of [`hash_loss`].
pub fn hash_loss_value(relaxed: &Tensor, codes: &Tensor, similarity: &[i8], alpha: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let u = tape.constant(relaxed.clone());
    let z = tape.constant(codes.clone());
    let loss = hash_loss(&mut tape, u, z, similarity, alpha)?;
    Ok(tape.value(loss).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_breaks_ties_upward() {
        assert_eq!(sign(0.0), 1);
        assert_eq!(sign(-0.0), 1);
        assert_eq!(sign(-1e-300), -1);
    }

    #[test]
    fn zero_weight_encodes_to_zero_and_plus_one() {
        let model = HashModel::new(Tensor::zeros(&[3, 4])).unwrap();
        let x = Tensor::from_vec(alloc::vec![1.0, -2.0, 0.5, 3.0]);
        assert_eq!(model.encode_relaxed(&x).unwrap(), Tensor::zeros(&[3]));
        assert_eq!(model.encode_binary(&x).unwrap(), alloc::vec![1, 1, 1]);
    }

    #[test]
    fn binary_code_of_known_projection() {
        let model = HashModel::new(Tensor::from_rows(&[&[0.3], &[-0.2]]).unwrap()).unwrap();
        assert_eq!(model.encode_binary(&Tensor::scalar(1.0)).unwrap(), alloc::vec![1, -1]);
    }

    #[test]
    fn encoder_rejects_wrong_input_length() {
        let model = HashModel::new(Tensor::zeros(&[3, 4])).unwrap();
        assert!(matches!(
            model.encode_binary(&Tensor::zeros(&[5])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn hash_loss_known_values() {
        let u = Tensor::from_vec(alloc::vec![1.0, 1.0]);
        let z = Tensor::from_rows(&[&[1.0, 1.0]]).unwrap();
        assert_eq!(hash_loss_value(&u, &z, &[1], 1.0).unwrap(), 0.0);
        assert_eq!(hash_loss_value(&u, &z, &[-1], 1.0).unwrap(), 16.0);
        assert!(hash_loss_value(&u, &z, &[1, 1], 1.0).is_err());
    }

    #[test]
    fn quantization_term_is_detached() {
        // d/dũ of α‖ũ − sign(ũ)‖² is 2α(ũ − sign(ũ)) when sign is constant.
        let mut tape = Tape::new();
        let u = tape.param(Tensor::from_vec(alloc::vec![0.25, -0.5]));
        let z = tape.constant(Tensor::from_rows(&[&[1.0, 1.0]]).unwrap());
        let codes_free = hash_loss(&mut tape, u, z, &[1], 1.0).unwrap();
        let grads = tape.backward(codes_free).unwrap();
        // pairwise part: 2(⟨u,z⟩ − 2)·z = 2(-0.25 - 2) = -4.5 per coordinate
        let g = grads.get(u).unwrap().data();
        assert!((g[0] - (-4.5 + 2.0 * (0.25 - 1.0))).abs() < 1e-12);
        assert!((g[1] - (-4.5 + 2.0 * (-0.5 + 1.0))).abs() < 1e-12);
    }

    #[test]
    fn codes_tensor_rejects_ragged() {
        assert!(codes_tensor(&[alloc::vec![1, -1], alloc::vec![1]]).is_err());
        let t = codes_tensor(&[alloc::vec![1, -1], alloc::vec![-1, -1]]).unwrap();
        assert_eq!(t.data(), &[1.0, -1.0, -1.0, -1.0]);
    }
}
