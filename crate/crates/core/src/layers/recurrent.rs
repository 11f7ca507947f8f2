//! Gated recurrent cells. The GRU follows
//!
//! ```text
//! z  = sigmoid(Wz x + Uz h + bz)         update gate
//! r  = sigmoid(Wr x + Ur h + br)         reset gate
//! h~ = tanh(Wh x + Uh (r . h) + bh)      candidate
//! h' = (1 - z) . h + z . h~
//! ```
//!
//! and the LSTM keeps a separate cell memory with forget/input/output gates:
//!
//! ```text
//! f,i,o = sigmoid(W x + U h + b)
//! g  = tanh(Wg x + Ug h + bg)
//! c' = f . c + i . g
//! h' = o . tanh(c')
//! ```

use rand_chacha::ChaCha8Rng;

use super::init::glorot_uniform;
use crate::error::{Error, Result};
use crate::tensor::{Parameter, Scalar, Tape, Tensor, ValueId};

/// Recurrent state between steps. `c` is present for LSTM cells only.
#[derive(Clone, Debug)]
pub struct CellState<E> {
    pub h: Tensor<E>,
    pub c: Option<Tensor<E>>,
}

impl<E: Scalar> CellState<E> {
    /// Zero state at sequence start.
    pub fn zeros(hidden: usize, with_cell: bool) -> Self {
        CellState {
            h: Tensor::zeros(&[hidden]),
            c: with_cell.then(|| Tensor::zeros(&[hidden])),
        }
    }
}

/// One gate's affine weights: `W x + U h + b`.
struct GateWeights<E> {
    w: Parameter<E>,
    u: Parameter<E>,
    b: Parameter<E>,
}

struct GateBinding {
    w: ValueId,
    u: ValueId,
    b: ValueId,
}

impl<E: Scalar> GateWeights<E> {
    fn new(prefix: &str, gate: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        GateWeights {
            w: glorot_uniform(rng, &[hidden, input], input, hidden, format!("{prefix}.w{gate}")),
            u: glorot_uniform(rng, &[hidden, hidden], hidden, hidden, format!("{prefix}.u{gate}")),
            b: Parameter::new(format!("{prefix}.b{gate}"), Tensor::zeros(&[hidden])),
        }
    }

    fn bind(&self, tape: &mut Tape<E>) -> GateBinding {
        GateBinding {
            w: tape.param(&self.w),
            u: tape.param(&self.u),
            b: tape.param(&self.b),
        }
    }

    /// `W x + U hterm + b`
    fn affine(
        &self,
        tape: &mut Tape<E>,
        bind: &GateBinding,
        x: ValueId,
        hterm: ValueId,
    ) -> Result<ValueId> {
        let wx = tape.matvec(bind.w, x)?;
        let uh = tape.matvec(bind.u, hterm)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, bind.b)
    }

    fn params(&self) -> [&Parameter<E>; 3] {
        [&self.w, &self.u, &self.b]
    }

    fn params_mut(&mut self) -> [&mut Parameter<E>; 3] {
        [&mut self.w, &mut self.u, &mut self.b]
    }

    fn leaves(bind: &GateBinding) -> [ValueId; 3] {
        [bind.w, bind.u, bind.b]
    }
}

pub struct GruCell<E> {
    update: GateWeights<E>,
    reset: GateWeights<E>,
    candidate: GateWeights<E>,
    hidden: usize,
    input: usize,
}

pub struct GruBinding {
    update: GateBinding,
    reset: GateBinding,
    candidate: GateBinding,
}

impl<E: Scalar> GruCell<E> {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        GruCell {
            update: GateWeights::new("cell", "z", input, hidden, rng),
            reset: GateWeights::new("cell", "r", input, hidden, rng),
            candidate: GateWeights::new("cell", "h", input, hidden, rng),
            hidden,
            input,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn bind(&self, tape: &mut Tape<E>) -> GruBinding {
        GruBinding {
            update: self.update.bind(tape),
            reset: self.reset.bind(tape),
            candidate: self.candidate.bind(tape),
        }
    }

    pub fn step_on_tape(
        &self,
        tape: &mut Tape<E>,
        bind: &GruBinding,
        x: ValueId,
        h: ValueId,
    ) -> Result<ValueId> {
        self.check_dims(tape.shape(x), tape.shape(h))?;
        let z_pre = self.update.affine(tape, &bind.update, x, h)?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = self.reset.affine(tape, &bind.reset, x, h)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, h)?;
        let cand_pre = self.candidate.affine(tape, &bind.candidate, x, rh)?;
        let cand = tape.tanh(cand_pre)?;
        let one_minus_z = tape.affine(z, -E::one(), E::one())?;
        let keep = tape.mul(one_minus_z, h)?;
        let take = tape.mul(z, cand)?;
        tape.add(keep, take)
    }

    /// Single eval-mode step on a throwaway tape.
    pub fn step(&self, x: &Tensor<E>, state: &CellState<E>) -> Result<CellState<E>> {
        let mut tape = Tape::new();
        let bind = self.bind(&mut tape);
        let xid = tape.leaf(x.clone());
        let hid = tape.leaf(state.h.clone());
        let out = self.step_on_tape(&mut tape, &bind, xid, hid)?;
        Ok(CellState {
            h: tape.value(out).clone(),
            c: None,
        })
    }

    fn check_dims(&self, x: &[usize], h: &[usize]) -> Result<()> {
        if x != [self.input] || h != [self.hidden] {
            return Err(Error::ShapeMismatch {
                op: "gru_step",
                lhs: x.to_vec(),
                rhs: h.to_vec(),
            });
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Parameter<E>> {
        let mut v = Vec::with_capacity(9);
        v.extend(self.update.params());
        v.extend(self.reset.params());
        v.extend(self.candidate.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<E>> {
        let mut v = Vec::with_capacity(9);
        v.extend(self.update.params_mut());
        v.extend(self.reset.params_mut());
        v.extend(self.candidate.params_mut());
        v
    }

    pub fn leaf_ids(&self, bind: &GruBinding) -> Vec<ValueId> {
        let mut v = Vec::with_capacity(9);
        v.extend(GateWeights::<E>::leaves(&bind.update));
        v.extend(GateWeights::<E>::leaves(&bind.reset));
        v.extend(GateWeights::<E>::leaves(&bind.candidate));
        v
    }
}

pub struct LstmCell<E> {
    forget: GateWeights<E>,
    input_gate: GateWeights<E>,
    output: GateWeights<E>,
    cell_gate: GateWeights<E>,
    hidden: usize,
    input: usize,
}

pub struct LstmBinding {
    forget: GateBinding,
    input_gate: GateBinding,
    output: GateBinding,
    cell_gate: GateBinding,
}

impl<E: Scalar> LstmCell<E> {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        LstmCell {
            forget: GateWeights::new("cell", "f", input, hidden, rng),
            input_gate: GateWeights::new("cell", "i", input, hidden, rng),
            output: GateWeights::new("cell", "o", input, hidden, rng),
            cell_gate: GateWeights::new("cell", "g", input, hidden, rng),
            hidden,
            input,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn bind(&self, tape: &mut Tape<E>) -> LstmBinding {
        LstmBinding {
            forget: self.forget.bind(tape),
            input_gate: self.input_gate.bind(tape),
            output: self.output.bind(tape),
            cell_gate: self.cell_gate.bind(tape),
        }
    }

    pub fn step_on_tape(
        &self,
        tape: &mut Tape<E>,
        bind: &LstmBinding,
        x: ValueId,
        h: ValueId,
        c: ValueId,
    ) -> Result<(ValueId, ValueId)> {
        self.check_dims(tape.shape(x), tape.shape(h))?;
        let f_pre = self.forget.affine(tape, &bind.forget, x, h)?;
        let f = tape.sigmoid(f_pre)?;
        let i_pre = self.input_gate.affine(tape, &bind.input_gate, x, h)?;
        let i = tape.sigmoid(i_pre)?;
        let o_pre = self.output.affine(tape, &bind.output, x, h)?;
        let o = tape.sigmoid(o_pre)?;
        let g_pre = self.cell_gate.affine(tape, &bind.cell_gate, x, h)?;
        let g = tape.tanh(g_pre)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let c_act = tape.tanh(c_next)?;
        let h_next = tape.mul(o, c_act)?;
        Ok((h_next, c_next))
    }

    pub fn step(&self, x: &Tensor<E>, state: &CellState<E>) -> Result<CellState<E>> {
        let c = state.c.as_ref().ok_or_else(|| {
            Error::InvalidArgument("lstm_step requires a cell state".into())
        })?;
        let mut tape = Tape::new();
        let bind = self.bind(&mut tape);
        let xid = tape.leaf(x.clone());
        let hid = tape.leaf(state.h.clone());
        let cid = tape.leaf(c.clone());
        let (h2, c2) = self.step_on_tape(&mut tape, &bind, xid, hid, cid)?;
        Ok(CellState {
            h: tape.value(h2).clone(),
            c: Some(tape.value(c2).clone()),
        })
    }

    fn check_dims(&self, x: &[usize], h: &[usize]) -> Result<()> {
        if x != [self.input] || h != [self.hidden] {
            return Err(Error::ShapeMismatch {
                op: "lstm_step",
                lhs: x.to_vec(),
                rhs: h.to_vec(),
            });
        }
        Ok(())
    }

    /// Force the forget gate open and the input gate shut (bias +/-20 with
    /// zero f/i weights), so the cell memory is carried unchanged.
    pub fn saturate_memory_gates(&mut self) {
        let hidden = self.hidden;
        for p in self.forget.params_mut() {
            if p.name().ends_with("bf") {
                p.set_value(Tensor::filled(&[hidden], E::of(20.0))).unwrap();
            } else {
                let shape = p.value().shape().to_vec();
                p.set_value(Tensor::zeros(&shape)).unwrap();
            }
        }
        for p in self.input_gate.params_mut() {
            if p.name().ends_with("bi") {
                p.set_value(Tensor::filled(&[hidden], E::of(-20.0))).unwrap();
            } else {
                let shape = p.value().shape().to_vec();
                p.set_value(Tensor::zeros(&shape)).unwrap();
            }
        }
    }

    pub fn params(&self) -> Vec<&Parameter<E>> {
        let mut v = Vec::with_capacity(12);
        v.extend(self.forget.params());
        v.extend(self.input_gate.params());
        v.extend(self.output.params());
        v.extend(self.cell_gate.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<E>> {
        let mut v = Vec::with_capacity(12);
        v.extend(self.forget.params_mut());
        v.extend(self.input_gate.params_mut());
        v.extend(self.output.params_mut());
        v.extend(self.cell_gate.params_mut());
        v
    }

    pub fn leaf_ids(&self, bind: &LstmBinding) -> Vec<ValueId> {
        let mut v = Vec::with_capacity(12);
        v.extend(GateWeights::<E>::leaves(&bind.forget));
        v.extend(GateWeights::<E>::leaves(&bind.input_gate));
        v.extend(GateWeights::<E>::leaves(&bind.output));
        v.extend(GateWeights::<E>::leaves(&bind.cell_gate));
        v
    }
}
