//! Central finite-difference verification of tape gradients.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;

/// Maximum relative error between tape gradients of the scalar built by `f`
/// and central differences `(f(x+h) - f(x-h)) / 2h`, over every coordinate of
/// every tensor in `point`. The relative error denominator is
/// `max(|analytic|, |numeric|, 1e-8)`.
///
/// `f` receives a fresh tape with one parameter leaf per entry of `point`.
pub fn grad_check<F>(f: F, point: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor]| -> Result<(Tape, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new();
        let leaves: Vec<NodeId> = values.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(&mut tape, &leaves)?;
        if tape.value(out).numel() != 1 {
            return Err(Error::argument("grad_check requires a scalar-valued function"));
        }
        Ok((tape, leaves, out))
    };

    let (tape, leaves, out) = eval(point)?;
    if !tape.value(out).is_finite() {
        return Err(Error::argument("function is not finite at the check point"));
    }
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for (t, &leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaf, &point[t]);
        for c in 0..point[t].numel() {
            let orig = point[t].data()[c];
            probe[t].data_mut()[c] = orig + h;
            let plus = scalar_of(&eval(&probe)?);
            probe[t].data_mut()[c] = orig - h;
            let minus = scalar_of(&eval(&probe)?);
            probe[t].data_mut()[c] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[c];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn scalar_of((tape, _, out): &(Tape, Vec<NodeId>, NodeId)) -> f64 {
    tape.value(*out).data()[0]
}
