//! Gated recurrent cells built from tape primitives, plus a tape-free inference
//! step that performs the identical arithmetic.
//!
//! Gate layout along the 4H axis is `[input, forget, candidate, output]`.

use rand::Rng;

use super::param::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{matmul_acc, sigmoid, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmIds {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmIds {
    pub fn register<R: Real, G: Rng>(
        store: &mut ParamStore<R>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut G,
    ) -> Result<Self> {
        let fan_in = input + hidden;
        Ok(LstmIds {
            wx: store.add_uniform(&format!("{prefix}.wx"), &[input, 4 * hidden], fan_in, rng)?,
            wh: store.add_uniform(&format!("{prefix}.wh"), &[hidden, 4 * hidden], fan_in, rng)?,
            b: store.add_uniform(&format!("{prefix}.b"), &[4 * hidden], fan_in, rng)?,
            input,
            hidden,
        })
    }

    pub fn lookup<R: Real>(store: &ParamStore<R>, prefix: &str) -> Result<Self> {
        let get = |s: &str| {
            store
                .id(&format!("{prefix}.{s}"))
                .ok_or_else(|| Error::invalid(format!("missing parameter {prefix}.{s}")))
        };
        let wx = get("wx")?;
        let wh = get("wh")?;
        let shape = store.value(wx).shape();
        Ok(LstmIds {
            wx,
            wh,
            b: get("b")?,
            input: shape[0],
            hidden: shape[1] / 4,
        })
    }

    pub fn record<R: Real>(&self, tape: &mut Tape<R>, store: &ParamStore<R>) -> LstmVars {
        LstmVars {
            wx: tape.param(store, self.wx),
            wh: tape.param(store, self.wh),
            b: tape.param(store, self.b),
            hidden: self.hidden,
        }
    }
}

/// Parameter leaves of one recurrent layer on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
    pub hidden: usize,
}

/// Tape-side recurrent state; both are 1×H.
#[derive(Clone, Copy, Debug)]
pub struct CellVars {
    pub h: Var,
    pub c: Var,
}

impl CellVars {
    pub fn zeros<R: Real>(tape: &mut Tape<R>, hidden: usize) -> Self {
        CellVars {
            h: tape.constant(Tensor::zeros(&[1, hidden])),
            c: tape.constant(Tensor::zeros(&[1, hidden])),
        }
    }
}

/// Concrete recurrent state for step-wise inference.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentCellState<R> {
    pub hidden: Vec<R>,
    pub cell: Vec<R>,
}

impl<R: Real> RecurrentCellState<R> {
    pub fn zeros(h: usize) -> Self {
        RecurrentCellState {
            hidden: vec![R::zero(); h],
            cell: vec![R::zero(); h],
        }
    }
}

fn gated_update<R: Real>(
    tape: &mut Tape<R>,
    gates_x: Var,
    state: CellVars,
    p: &LstmVars,
) -> Result<CellVars> {
    let h = p.hidden;
    let gates_h = tape.affine(state.h, p.wh, None)?;
    let z = tape.add(gates_x, gates_h)?;
    let zi = tape.slice_cols(z, 0, h)?;
    let zf = tape.slice_cols(z, h, h)?;
    let zg = tape.slice_cols(z, 2 * h, h)?;
    let zo = tape.slice_cols(z, 3 * h, h)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let fc = tape.mul(f, state.c)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok(CellVars { h, c })
}

/// One recurrent step on the tape. `x` is 1×input.
pub fn lstm_cell<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    state: CellVars,
    p: &LstmVars,
) -> Result<CellVars> {
    let gates_x = tape.affine(x, p.wx, Some(p.b))?;
    gated_update(tape, gates_x, state, p)
}

/// Runs a layer over all rows of `x` (T×input), returning T×H in time order.
pub fn lstm_sequence<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    p: &LstmVars,
    reverse: bool,
) -> Result<Var> {
    let t_len = tape.value(x).rows();
    if t_len == 0 {
        return Err(Error::EmptySequence("recurrent layer"));
    }
    let gates_x = tape.affine(x, p.wx, Some(p.b))?;
    let mut state = CellVars::zeros(tape, p.hidden);
    let mut outs = vec![state.h; t_len];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    };
    for t in order {
        let row = tape.gather_rows(gates_x, vec![t])?;
        state = gated_update(tape, row, state, p)?;
        outs[t] = state.h;
    }
    tape.stack_rows(&outs)
}

/// Forward and backward layers over the same input; output row t is
/// `[forward_t | backward_t]`, width 2H.
pub fn bidirectional_sequence<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    fwd: &LstmVars,
    bwd: &LstmVars,
) -> Result<Var> {
    if tape.value(x).rows() == 0 || tape.value(x).is_empty() {
        return Err(Error::EmptySequence("bidirectional layer"));
    }
    let f = lstm_sequence(tape, x, fwd, false)?;
    let b = lstm_sequence(tape, x, bwd, true)?;
    tape.concat_cols(&[f, b])
}

/// Tape-free step. Arithmetic order matches [`lstm_cell`] exactly.
pub fn lstm_step<R: Real>(
    store: &ParamStore<R>,
    ids: &LstmIds,
    x: &[R],
    state: &RecurrentCellState<R>,
) -> RecurrentCellState<R> {
    let h = ids.hidden;
    let mut gx = store.value(ids.b).data().to_vec();
    matmul_acc(x, 1, ids.input, store.value(ids.wx).data(), 4 * h, &mut gx);
    let mut gh = vec![R::zero(); 4 * h];
    matmul_acc(&state.hidden, 1, h, store.value(ids.wh).data(), 4 * h, &mut gh);
    let mut hidden = vec![R::zero(); h];
    let mut cell = vec![R::zero(); h];
    for j in 0..h {
        let i = sigmoid(gx[j] + gh[j]);
        let f = sigmoid(gx[h + j] + gh[h + j]);
        let g = (gx[2 * h + j] + gh[2 * h + j]).tanh();
        let o = sigmoid(gx[3 * h + j] + gh[3 * h + j]);
        let c = f * state.cell[j] + i * g;
        cell[j] = c;
        hidden[j] = o * c.tanh();
    }
    RecurrentCellState { hidden, cell }
}
