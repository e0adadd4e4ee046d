//! Central-difference verification of tape gradients.

use super::{NodeId, Result, Tape, Tensor};

/// Compare the tape's analytic gradient of `f` at `x` against central
/// finite differences with step `h`.
///
/// Returns the max over coordinates of
/// `|analytic - central| / max(1, |analytic|)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    finite_diff_check_multi(|tape, ids| f(tape, ids[0]), std::slice::from_ref(x), h)
}

/// Multi-parameter variant: `f` builds a scalar from one leaf per input
/// tensor; the reported error is the worst coordinate across all leaves.
/// Generic over the builder's error type so loss-level closures fit.
pub fn finite_diff_check_multi<F, E>(f: F, xs: &[Tensor], h: f64) -> std::result::Result<f64, E>
where
    F: Fn(&mut Tape, &[NodeId]) -> std::result::Result<NodeId, E>,
    E: From<super::NumericsError>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = xs.iter().map(|x| tape.var(x.clone())).collect();
    let root = f(&mut tape, &ids)?;
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(xs)
        .map(|(id, x)| grads.get_or_zeros(*id, x.shape()))
        .collect();

    let eval = |inputs: &[Tensor]| -> std::result::Result<f64, E> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|x| tape.var(x.clone())).collect();
        let root = f(&mut tape, &ids)?;
        Ok(tape.item(root))
    };

    let mut worst = 0.0_f64;
    for (pi, x) in xs.iter().enumerate() {
        for ci in 0..x.len() {
            let mut plus: Vec<Tensor> = xs.to_vec();
            plus[pi].data_mut()[ci] += h;
            let mut minus: Vec<Tensor> = xs.to_vec();
            minus[pi].data_mut()[ci] -= h;
            let central = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let a = analytic[pi].data()[ci];
            let err = (a - central).abs() / f64::max(1.0, a.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
