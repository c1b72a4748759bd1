//! Finite-difference verification of tape gradients.

use super::param::{Gradients, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`
    Central2,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`
    Central4,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub stencil: Stencil,
    /// Checks at most this many evenly spaced coordinates per parameter.
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-4,
            stencil: Stencil::Central4,
            max_coords_per_param: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

pub fn central_difference(
    mut f: impl FnMut(f64) -> f64,
    x: f64,
    eps: f64,
    stencil: Stencil,
) -> f64 {
    match stencil {
        Stencil::Central2 => (f(x + eps) - f(x - eps)) / (2.0 * eps),
        Stencil::Central4 => {
            let near = f(x + eps) - f(x - eps);
            let far = f(x + 2.0 * eps) - f(x - 2.0 * eps);
            (8.0 * near - far) / (12.0 * eps)
        }
    }
}

/// Checks an analytic gradient of a plain function of a vector.
pub fn check_vector_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    epsilon: f64,
    stencil: Stencil,
) -> Result<f64> {
    if epsilon <= 0.0 {
        return Err(Error::invalid("epsilon must be positive"));
    }
    if f(x).to_bits() != f(x).to_bits() {
        return Err(Error::invalid("function is not deterministic"));
    }
    let mut xs = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let x0 = xs[i];
        let num = central_difference(
            |v| {
                xs[i] = v;
                f(&xs)
            },
            x0,
            epsilon,
            stencil,
        );
        xs[i] = x0;
        worst = worst.max(relative_error(analytic[i], num));
    }
    Ok(worst)
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences over every trainable coordinate of `store`.
pub fn finite_difference_check<F>(
    f: F,
    store: &mut ParamStore<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    if opts.epsilon <= 0.0 {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, s)?;
        Ok(tape.scalar(loss))
    };

    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let mut grads = Gradients::for_store(store);
    tape.backward(loss, &mut grads)?;
    let base = tape.scalar(loss);
    drop(tape);
    if eval(store)?.to_bits() != base.to_bits() {
        return Err(Error::invalid("function is not deterministic"));
    }

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().filter(|&id| store.get(id).trainable).collect();
    for id in ids {
        let n = store.value(id).len();
        let stride = match opts.max_coords_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for k in (0..n).step_by(stride) {
            let x0 = store.value(id).data()[k];
            let mut failure = None;
            let num = central_difference(
                |v| {
                    store.get_mut(id).value.data_mut()[k] = v;
                    eval(store).unwrap_or_else(|e| {
                        failure = Some(e);
                        f64::NAN
                    })
                },
                x0,
                opts.epsilon,
                opts.stencil,
            );
            store.get_mut(id).value.data_mut()[k] = x0;
            if let Some(e) = failure {
                return Err(e);
            }
            let ana = grads.get(id).map_or(0.0, |g| g.data()[k]);
            let err = relative_error(ana, num);
            report.coords_checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), k, ana, num));
            }
        }
    }
    Ok(report)
}
