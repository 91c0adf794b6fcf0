//! Central finite-difference check of tape gradients.

use crate::params::ParamStore;
use crate::tape::{Tape, Var};

/// Gradients whose norm is below this are compared absolutely.
pub const NORM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, floor)`.
    pub relative_error: f64,
    pub analytic_norm: f64,
}

/// Compares the tape gradient of `loss` against central differences for
/// every parameter tensor. `max_entries` bounds the probed entries per tensor
/// (evenly strided); the error is computed over the probed entries.
pub fn check_gradients(
    store: &ParamStore,
    loss: impl Fn(&mut Tape, &ParamStore) -> Var,
    step: f64,
    max_entries: usize,
) -> Vec<TensorCheck> {
    let mut tape = Tape::new();
    let l = loss(&mut tape, store);
    let grads = tape.backward(l, store.len());
    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let l = loss(&mut t, s);
        t.scalar(l)
    };
    let mut probe = store.clone();
    let mut out = Vec::new();
    for (id, name, value) in store.iter() {
        let n = value.len();
        let stride = n.div_ceil(max_entries.max(1)).max(1);
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for idx in (0..n).step_by(stride) {
            let (r, c) = (idx / value.ncols(), idx % value.ncols());
            let orig = value[[r, c]];
            probe.get_mut(id)[[r, c]] = orig + step;
            let plus = eval(&probe);
            probe.get_mut(id)[[r, c]] = orig - step;
            let minus = eval(&probe);
            probe.get_mut(id)[[r, c]] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads.get(id).map_or(0.0, |g| g[[r, c]]);
            diff += (analytic - numeric).powi(2);
            na += analytic * analytic;
            nn += numeric * numeric;
        }
        let denom = na.sqrt().max(nn.sqrt()).max(NORM_FLOOR);
        let relative_error = diff.sqrt() / denom;
        out.push(TensorCheck { name: name.to_string(), relative_error, analytic_norm: na.sqrt() });
    }
    out
}
