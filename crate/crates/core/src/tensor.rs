//! Dense row-major `f64` tensors and the plain (tape-free) kernels behind
//! every differentiable operation.
//!
//! The kernels here are used both by [`crate::tape::Tape`] for the forward
//! pass and directly on inference paths where no gradient is needed.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Slices summing below this are treated as degenerate by [`l1_normalize_axis`].
pub const L1_EPSILON: f64 = 1e-30;

const MAX_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_RANK || shape.contains(&0) {
            return Err(Error::argument("tensor extents must be positive, rank 1..=4"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dimension("tensor", shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![value; numel]).expect("valid extents")
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(&[n], data).expect("non-empty vector")
    }

    /// Builds a 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::argument("ragged rows"));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::dimension("reshape", &self.shape, shape));
        }
        Self::new(shape, self.data.clone())
    }

    /// `self -= scale * other`, used for gradient steps.
    pub fn sub_scaled(&mut self, other: &Tensor, scale: f64) -> Result<()> {
        ensure_same_shape("sub_scaled", self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a -= scale * b;
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

pub(crate) fn ensure_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::dimension(op, &a.shape, &b.shape));
    }
    Ok(())
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::argument("axis out of range"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn ensure_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::dimension(op, t.shape(), &[])),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = ensure_matrix("matmul", a)?;
    let (k2, p) = ensure_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::dimension("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for (kk, &av) in a.data[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b.data[kk * p..(kk + 1) * p]) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, p], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = ensure_matrix("transpose", a)?;
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data[i * c + j];
        }
    }
    Tensor::new(&[c, r], out)
}

/// Pointwise channel mixing: `out[:, p] = weight · x[:, p] + bias` at every
/// spatial position `p`.
pub fn conv1x1(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [cin, h, w] = *x.shape() else {
        return Err(Error::dimension("conv1x1", x.shape(), weight.shape()));
    };
    let (cout, wcin) = ensure_matrix("conv1x1", weight)?;
    if wcin != cin {
        return Err(Error::dimension("conv1x1", x.shape(), weight.shape()));
    }
    if bias.shape() != [cout] {
        return Err(Error::dimension("conv1x1", weight.shape(), bias.shape()));
    }
    let n = h * w;
    let mut out = vec![0.0; cout * n];
    for (o, out_plane) in out.chunks_exact_mut(n).enumerate() {
        out_plane.fill(bias.data[o]);
        for c in 0..cin {
            let wv = weight.data[o * cin + c];
            if wv == 0.0 {
                continue;
            }
            for (dst, &src) in out_plane.iter_mut().zip(&x.data[c * n..(c + 1) * n]) {
                *dst += wv * src;
            }
        }
    }
    Tensor::new(&[cout, h, w], out)
}

/// Numerically stable softmax of every slice along `axis`.
pub fn softmax_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let mut out = x.clone();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| x.data[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..len {
                let e = libm::exp(x.data[idx(j)] - max);
                out.data[idx(j)] = e;
                sum += e;
            }
            for j in 0..len {
                out.data[idx(j)] /= sum;
            }
        }
    }
    Ok(out)
}

/// Divides each slice along `axis` by its sum. A slice summing below
/// [`L1_EPSILON`] becomes uniform.
pub fn l1_normalize_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    Ok(l1_normalize_with_sums(x, axis)?.0)
}

/// As [`l1_normalize_axis`], also returning each slice's sum (`None` for
/// degenerate slices) in (outer, inner) order.
pub(crate) fn l1_normalize_with_sums(x: &Tensor, axis: usize) -> Result<(Tensor, Vec<Option<f64>>)> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let mut out = x.clone();
    let mut sums = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let sum: f64 = (0..len).map(|j| x.data[idx(j)]).sum();
            if sum < L1_EPSILON {
                for j in 0..len {
                    out.data[idx(j)] = 1.0 / len as f64;
                }
                sums.push(None);
            } else {
                for j in 0..len {
                    out.data[idx(j)] /= sum;
                }
                sums.push(Some(sum));
            }
        }
    }
    Ok((out, sums))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure_same_shape("add", a, b)?;
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure_same_shape("sub", a, b)?;
    let mut out = a.clone();
    for (o, v) in out.data.iter_mut().zip(&b.data) {
        *o -= v;
    }
    Ok(out)
}

pub fn scale(a: &Tensor, factor: f64) -> Tensor {
    a.map(|v| v * factor)
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn tanh(a: &Tensor) -> Tensor {
    a.map(libm::tanh)
}

/// Spatial mean `C×H×W → C`.
pub fn mean_spatial(x: &Tensor) -> Result<Tensor> {
    let [c, h, w] = *x.shape() else {
        return Err(Error::dimension("mean_spatial", x.shape(), &[]));
    };
    let n = (h * w) as f64;
    let data = x.data.chunks_exact(h * w).map(|p| p.iter().sum::<f64>() / n).collect();
    Tensor::new(&[c], data)
}

/// Per-position channel maximum `C×H×W → H×W`, with the winning channel of
/// each position (lowest index on ties).
pub fn max_channel(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [c, h, w] = *x.shape() else {
        return Err(Error::dimension("max_channel", x.shape(), &[]));
    };
    let n = h * w;
    let mut values = x.data[..n].to_vec();
    let mut argmax = vec![0usize; n];
    for ch in 1..c {
        for (p, &v) in x.data[ch * n..(ch + 1) * n].iter().enumerate() {
            if v > values[p] {
                values[p] = v;
                argmax[p] = ch;
            }
        }
    }
    Ok((Tensor::new(&[h, w], values)?, argmax))
}

pub fn sum_all(x: &Tensor) -> f64 {
    x.data.iter().sum()
}

pub fn inner_product(a: &Tensor, b: &Tensor) -> Result<f64> {
    ensure_same_shape("inner_product", a, b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

/// Concatenates tensors along `axis`; all other extents must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::argument("concat of an empty list"))?;
    let mut shape = first.shape().to_vec();
    axis_split(&shape, axis)?;
    let mut total = 0;
    for p in parts {
        let compatible = p.rank() == shape.len()
            && p.shape().iter().enumerate().all(|(d, &e)| d == axis || e == shape[d]);
        if !compatible {
            return Err(Error::dimension("concat", first.shape(), p.shape()));
        }
        total += p.shape()[axis];
    }
    shape[axis] = total;
    let (outer, _, inner) = axis_split(&shape, axis)?;
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::new(&shape, data)
}

/// Inverse of [`concat`]: cuts `x` along `axis` into pieces of the given extents.
pub fn split(x: &Tensor, axis: usize, extents: &[usize]) -> Result<Vec<Tensor>> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    if extents.iter().sum::<usize>() != len || extents.contains(&0) {
        return Err(Error::dimension("split", x.shape(), extents));
    }
    let mut pieces: Vec<Vec<f64>> = extents.iter().map(|e| Vec::with_capacity(outer * e * inner)).collect();
    for o in 0..outer {
        let mut offset = o * len * inner;
        for (piece, &e) in pieces.iter_mut().zip(extents) {
            piece.extend_from_slice(&x.data[offset..offset + e * inner]);
            offset += e * inner;
        }
    }
    pieces
        .into_iter()
        .zip(extents)
        .map(|(data, &e)| {
            let mut shape = x.shape().to_vec();
            shape[axis] = e;
            Tensor::new(&shape, data)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn construction_checks_extents() {
        assert!(Tensor::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(&[0], vec![]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn matmul_identity_and_zero() {
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&Tensor::identity(2), &m).unwrap(), m);
        let z = matmul(&t(&[1, 2], &[1.0, 2.0]), &t(&[2, 1], &[0.0, 0.0])).unwrap();
        assert_eq!(z, t(&[1, 1], &[0.0]));
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        assert_eq!(err, Error::dimension("matmul", &[2, 3], &[2, 3]));
        assert!(alloc::format!("{err}").contains("[2, 3]"));
    }

    #[test]
    fn conv1x1_identity_and_zero() {
        let x = t(&[2, 1, 2], &[1.0, -2.0, 3.0, 4.0]);
        let id = conv1x1(&x, &Tensor::identity(2), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(id, x);
        let zero = conv1x1(&x, &Tensor::zeros(&[3, 2]), &Tensor::zeros(&[3])).unwrap();
        assert_eq!(zero, Tensor::zeros(&[3, 1, 2]));
        assert!(conv1x1(&x, &Tensor::zeros(&[3, 3]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn softmax_known_values() {
        let s = softmax_axis(&Tensor::from_vec(alloc::vec![0.0, 0.0]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_axis(&Tensor::from_vec(alloc::vec![0.0, libm::log(3.0)]), 0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let s = softmax_axis(&Tensor::from_vec(alloc::vec![1000.0, 1000.0, -1000.0]), 0).unwrap();
        assert!(s.is_finite());
        assert!((s.data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_along_each_axis_of_matrix() {
        let x = t(&[2, 3], &[0.1, 0.7, -0.3, 2.0, 0.0, 1.0]);
        for axis in 0..2 {
            let s = softmax_axis(&x, axis).unwrap();
            let (outer, len, inner) = axis_split(x.shape(), axis).unwrap();
            for o in 0..outer {
                for i in 0..inner {
                    let sum: f64 = (0..len).map(|j| s.data()[(o * len + j) * inner + i]).sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn l1_normalize_known_values() {
        let y = l1_normalize_axis(&Tensor::from_vec(alloc::vec![0.2, 0.2]), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = l1_normalize_axis(&Tensor::from_vec(alloc::vec![1.0, 3.0]), 0).unwrap();
        assert_eq!(y.data(), &[0.25, 0.75]);
    }

    #[test]
    fn l1_normalize_degenerate_slice_is_uniform() {
        let y = l1_normalize_axis(&t(&[2, 4], &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 2.0, 0.0]), 1).unwrap();
        assert_eq!(&y.data()[..4], &[0.25; 4]);
        assert_eq!(&y.data()[4..], &[0.25, 0.25, 0.5, 0.0]);
    }

    #[test]
    fn elementwise_values() {
        let x = Tensor::from_vec(alloc::vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(tanh(&Tensor::scalar(0.0)).data(), &[0.0]);
        assert_eq!(scale(&x, -2.0).data(), &[2.0, -0.0, -4.0]);
        assert!(add(&x, &Tensor::zeros(&[2])).is_err());
        assert!(sub(&x, &Tensor::zeros(&[3, 1])).is_err());
    }

    #[test]
    fn reductions() {
        let c = Tensor::full(&[2, 3, 3], 1.5);
        assert_eq!(mean_spatial(&c).unwrap().data(), &[1.5, 1.5]);
        // channel vectors (1,3) at position 0 and (2,0) at position 1
        let x = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 0.0]);
        let (m, arg) = max_channel(&x).unwrap();
        assert_eq!(m.data(), &[3.0, 2.0]);
        assert_eq!(arg, alloc::vec![1, 0]);
        let (_, tie) = max_channel(&Tensor::full(&[3, 1, 1], 2.0)).unwrap();
        assert_eq!(tie, alloc::vec![0]);
        assert!(mean_spatial(&Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn concat_and_split() {
        let a = Tensor::from_vec(alloc::vec![1.0, 2.0]);
        let b = Tensor::from_vec(alloc::vec![3.0]);
        assert_eq!(concat(&[&a], 0).unwrap(), a);
        assert_eq!(concat(&[&a, &b], 0).unwrap().data(), &[1.0, 2.0, 3.0]);
        assert!(concat(&[], 0).is_err());

        let p = t(&[2, 1], &[1.0, 2.0]);
        let q = t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let pq = concat(&[&p, &q], 1).unwrap();
        assert_eq!(pq, t(&[2, 3], &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]));
        assert_eq!(split(&pq, 1, &[1, 2]).unwrap(), alloc::vec![p, q.clone()]);
        assert!(concat(&[&a, &q], 0).is_err());
    }
}
