//! Independent reference implementations and fixtures shared by the
//! integration tests. Everything here works on plain `Vec<f64>` with explicit
//! loops and never calls into the tensor kernels it is compared against.

#![allow(dead_code)]

use agmh_core::head::{AdlDenominator, DescriptorParams, HeadShape};
use agmh_core::{AttributeHeadParams, Rng, Tensor};

pub fn gaussian(rng: &mut Rng, shape: &[usize]) -> Tensor {
    rng.gaussian_tensor(shape, 1.0)
}

pub fn random_code(rng: &mut Rng, bits: usize) -> Vec<i8> {
    (0..bits).map(|_| if rng.next_u64() & 1 == 1 { 1 } else { -1 }).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `m×k · k×p`, row-major, three nested loops.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        for j in 0..p {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i * k + t] * b[t * p + j];
            }
            out[i * p + j] = acc;
        }
    }
    out
}

/// 1×1 convolution as one matrix-vector product per pixel.
pub fn conv1x1(x: &[f64], cin: usize, n: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let cout = b.len();
    let mut out = vec![0.0; cout * n];
    for pix in 0..n {
        for o in 0..cout {
            let mut acc = b[o];
            for i in 0..cin {
                acc += w[o * cin + i] * x[i * n + pix];
            }
            out[o * n + pix] = acc;
        }
    }
    out
}

/// Naive `exp / Σ exp`, no max shift.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

/// `F = conv(relu(conv(T)))`, flattened `C'×N`.
pub fn descriptor(t: &Tensor, p: &DescriptorParams) -> Vec<f64> {
    let [c, h, w] = *t.shape() else { panic!("rank-3 input expected") };
    let n = h * w;
    let hidden = relu(&conv1x1(t.data(), c, n, p.transform_in.weight.data(), p.transform_in.bias.data()));
    let cp = p.transform_in.bias.numel();
    conv1x1(&hidden, cp, n, p.transform_out.weight.data(), p.transform_out.bias.data())
}

/// Dense SIEA: returns (column softmax `N×S`, row-normalized `P̂` `N×S`,
/// `F̂` as `C'×N`).
pub fn siea(f: &[f64], cp: usize, n: usize, p: &DescriptorParams) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
    let s = p.mem_value.shape()[0];
    let q = conv1x1(f, cp, n, p.query_proj.weight.data(), p.query_proj.bias.data());
    // q is C'×N; queries are its columns.
    let score = |key: &Tensor| -> Vec<Vec<f64>> {
        (0..n)
            .map(|pos| {
                (0..s)
                    .map(|slot| (0..cp).map(|c| q[c * n + pos] * key.data()[slot * cp + c]).sum())
                    .collect()
            })
            .collect()
    };
    let mut state = score(&p.mem_keys[0]);
    for (j, key) in p.mem_keys.iter().enumerate().skip(1) {
        let g = score(key);
        let inter = &p.interact[j - 1];
        state = (0..n)
            .map(|pos| {
                (0..s)
                    .map(|out| {
                        let mut acc = 0.0;
                        for u in 0..s {
                            acc += state[pos][u] * inter.data()[out * 2 * s + u];
                            acc += g[pos][u] * inter.data()[out * 2 * s + s + u];
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
    }
    let mut cols = vec![vec![0.0; s]; n];
    for slot in 0..s {
        let column: Vec<f64> = (0..n).map(|pos| state[pos][slot]).collect();
        for (pos, v) in softmax(&column).into_iter().enumerate() {
            cols[pos][slot] = v;
        }
    }
    let attn: Vec<Vec<f64>> = cols
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            row.iter().map(|v| v / total).collect()
        })
        .collect();
    let mut out = vec![0.0; cp * n];
    for pos in 0..n {
        for c in 0..cp {
            out[c * n + pos] = (0..s).map(|slot| attn[pos][slot] * p.mem_value.data()[slot * cp + c]).sum();
        }
    }
    (cols, attn, out)
}

/// `relu(F + align(F̂))`, or `relu(F)` without attention.
pub fn attentive(f: &[f64], cp: usize, n: usize, p: &DescriptorParams, with_siea: bool) -> Vec<f64> {
    if !with_siea {
        return relu(f);
    }
    let (_, _, att) = siea(f, cp, n, p);
    let aligned = conv1x1(&att, cp, n, p.align.weight.data(), p.align.bias.data());
    relu(&f.iter().zip(&aligned).map(|(a, b)| a + b).collect::<Vec<_>>())
}

/// Softmax over positions of the per-position channel maximum.
pub fn aggregation(map: &[f64], cp: usize, n: usize) -> Vec<f64> {
    let a: Vec<f64> = (0..n)
        .map(|pos| (0..cp).map(|c| map[c * n + pos]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    softmax(&a)
}

pub fn adl(maps: &[Vec<f64>], cp: usize, n: usize, denominator: AdlDenominator) -> f64 {
    let k = maps.len();
    let dists: Vec<Vec<f64>> = maps.iter().map(|m| aggregation(m, cp, n)).collect();
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += (0..n).map(|pos| dists[i][pos] * dists[j][pos]).sum::<f64>();
        }
    }
    let k = k as f64;
    let denom = match denominator {
        AdlDenominator::Paper => k * (k + 1.0) / 2.0,
        AdlDenominator::Pairs => k * (k - 1.0) / 2.0,
    };
    total / denom
}

pub fn pooled(t: &Tensor, head: &AttributeHeadParams) -> Vec<f64> {
    let n = t.shape()[1] * t.shape()[2];
    let cp = head.shape.channels;
    head.descriptors
        .iter()
        .flat_map(|p| {
            let f = descriptor(t, p);
            (0..cp).map(move |c| f[c * n..(c + 1) * n].iter().sum::<f64>() / n as f64)
        })
        .collect()
}

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn hash_loss(u: &[f64], codes: &[Vec<i8>], similarity: &[i8], alpha: f64) -> f64 {
    let l = u.len() as f64;
    let mut pairwise = 0.0;
    for (z, &s) in codes.iter().zip(similarity) {
        let inner: f64 = u.iter().zip(z).map(|(a, &b)| a * f64::from(b)).sum();
        pairwise += (inner - l * f64::from(s)).powi(2);
    }
    let quant: f64 = u.iter().map(|&v| (v - sign(v)).powi(2)).sum();
    pairwise + alpha * quant
}

/// Summed batch objective with pooled vectors centered on the batch mean.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    head: &AttributeHeadParams,
    weight: &Tensor,
    items: &[(&Tensor, &[i8])],
    codes: &[Vec<i8>],
    alpha: f64,
    beta: f64,
    with_siea: bool,
    denominator: AdlDenominator,
) -> f64 {
    let xs: Vec<Vec<f64>> = items.iter().map(|(t, _)| pooled(t, head)).collect();
    let len = xs[0].len();
    let mean: Vec<f64> = (0..len).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64).collect();
    let bits = weight.shape()[0];
    let mut total = 0.0;
    for ((t, sim), x) in items.iter().zip(&xs) {
        let centered: Vec<f64> = x.iter().zip(&mean).map(|(a, b)| a - b).collect();
        let v = matmul(weight.data(), &centered, bits, len, 1);
        let u: Vec<f64> = v.iter().map(|a| a.tanh()).collect();
        total += hash_loss(&u, codes, sim, alpha);
        if beta != 0.0 {
            let n = t.shape()[1] * t.shape()[2];
            let cp = head.shape.channels;
            let maps: Vec<Vec<f64>> = head
                .descriptors
                .iter()
                .map(|p| attentive(&descriptor(t, p), cp, n, p, with_siea))
                .collect();
            total += beta * adl(&maps, cp, n, denominator);
        }
    }
    total
}

pub fn hamming(a: &[i8], b: &[i8]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

/// Full sort of `(distance, index)` pairs.
pub fn rank(query: &[i8], db: &[Vec<i8>]) -> Vec<usize> {
    let mut order: Vec<(u32, usize)> = db.iter().enumerate().map(|(i, c)| (hamming(query, c), i)).collect();
    order.sort();
    order.into_iter().map(|(_, i)| i).collect()
}

/// Average precision straight from the definition: precision at the rank of
/// every relevant item, averaged over relevant items.
pub fn average_precision(query: &[i8], query_id: u64, query_label: u32, db: &[Vec<i8>], ids: &[u64], labels: &[u32]) -> f64 {
    let kept: Vec<usize> = rank(query, db).into_iter().filter(|&i| ids[i] != query_id).collect();
    let relevant_ranks: Vec<usize> = kept
        .iter()
        .enumerate()
        .filter(|(_, &i)| labels[i] == query_label)
        .map(|(r, _)| r + 1)
        .collect();
    let precisions: Vec<f64> = relevant_ranks
        .iter()
        .enumerate()
        .map(|(found, &r)| (found + 1) as f64 / r as f64)
        .collect();
    precisions.iter().sum::<f64>() / precisions.len() as f64
}

pub fn tiny_shape() -> HeadShape {
    HeadShape {
        in_channels: 3,
        channels: 3,
        descriptors: 2,
        memory_units: 2,
        memory_slots: 2,
    }
}

/// Head with every tensor, biases included, drawn from `N(0, std²)`.
pub fn random_head(shape: HeadShape, rng: &mut Rng, std: f64) -> AttributeHeadParams {
    let mut head = AttributeHeadParams::init(shape, rng).unwrap();
    for d in &mut head.descriptors {
        for t in d.tensors_mut() {
            *t = rng.gaussian_tensor(t.shape(), std);
        }
    }
    head
}
