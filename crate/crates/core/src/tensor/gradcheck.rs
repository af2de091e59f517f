use super::{Module, Tape, Var};
use crate::error::{contract, Error, Result};

/// `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compares autodiff gradients of `loss` against central differences over
/// every trainable coordinate of `module`, returning the worst relative error.
///
/// `loss` must build a fresh scalar on the supplied tape from the module's
/// current values; it is evaluated `2 * num_parameters + 1` times.
pub fn finite_diff_check<M, F>(module: &mut M, h: f64, loss: F) -> Result<f64>
where
    M: Module + ?Sized,
    F: Fn(&M, &mut Tape) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(contract(format!("finite difference step must be positive, got {h}")));
    }
    let eval = |m: &M| -> Result<f64> {
        let mut tape = Tape::new();
        let v = loss(m, &mut tape)?;
        let value = tape.scalar(v);
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {value}")));
        }
        Ok(value)
    };

    let analytic: Vec<Option<Vec<f64>>> = {
        let mut tape = Tape::new();
        let root = loss(module, &mut tape)?;
        if !tape.scalar(root).is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {}", tape.scalar(root))));
        }
        tape.backward(root)?;
        module
            .named_tensors()
            .into_iter()
            .map(|(_, t)| {
                t.requires_grad()
                    .then(|| tape.grad_of(t).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
            })
            .collect()
    };

    let mut worst = 0.0f64;
    for (ti, grads) in analytic.iter().enumerate() {
        let Some(grads) = grads else { continue };
        for (j, &auto) in grads.iter().enumerate() {
            let original = nth_values(module, ti)[j];
            nth_values(module, ti)[j] = original + h;
            let plus = eval(module);
            nth_values(module, ti)[j] = original - h;
            let minus = eval(module);
            nth_values(module, ti)[j] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            worst = worst.max(relative_error(numeric, auto));
        }
    }
    Ok(worst)
}

fn nth_values<M: Module + ?Sized>(module: &mut M, index: usize) -> &mut [f64] {
    module
        .named_tensors_mut()
        .into_iter()
        .nth(index)
        .expect("tensor index stable across calls")
        .1
        .values_mut()
}
