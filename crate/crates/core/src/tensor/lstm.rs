//! LSTM cells and (bi-directional) sequence encoders.
//!
//! Gate rows are laid out `[input; forget; candidate; output]`, so `w_ih` is
//! 4h×d, `w_hh` is 4h×h and `bias` is 4h×1. No peephole connections.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::matrix::{gemm_nn, gemm_nt, gemm_tn, Matrix};
use crate::tensor::tape::{sigmoid, GradientFault, Op, Tape, Var};

/// Handles of one LSTM direction's weights on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstmVars {
    pub forward: LstmVars,
    pub backward: LstmVars,
}

pub(crate) struct LstmRecord<T> {
    pub(crate) input: Var,
    pub(crate) w_ih: Var,
    pub(crate) w_hh: Var,
    pub(crate) bias: Var,
    hidden: usize,
    /// Time indices in the order they were processed; masked steps absent.
    steps: Vec<usize>,
    /// Activated gates per processed step, 4h each.
    gates: Vec<T>,
    /// Cell state per processed step, h each.
    cells: Vec<T>,
    tanh_cells: Vec<T>,
}

pub(crate) struct LstmGrads<T> {
    pub(crate) input: Matrix<T>,
    pub(crate) w_ih: Matrix<T>,
    pub(crate) w_hh: Matrix<T>,
    pub(crate) bias: Matrix<T>,
}

impl<T: Scalar> LstmRecord<T> {
    pub(crate) fn backward<'a>(
        &self,
        grad_out: &Matrix<T>,
        output: &Matrix<T>,
        value: impl Fn(Var) -> &'a Matrix<T>,
        fault: Option<GradientFault>,
    ) -> LstmGrads<T>
    where
        T: 'a,
    {
        let h = self.hidden;
        let x = value(self.input);
        let w_ih = value(self.w_ih);
        let w_hh = value(self.w_hh);
        let seq_len = x.cols();

        let mut dz_all = Matrix::zeros(4 * h, seq_len);
        let mut h_prev_all = Matrix::zeros(h, seq_len);
        let mut dh_next = Matrix::zeros(h, 1);
        let mut dc_next = vec![T::zero(); h];
        let mut dz = Matrix::zeros(4 * h, 1);

        let carry_fault = fault == Some(GradientFault::LstmCellCarry);
        let zero = vec![T::zero(); h];
        let one = T::one();

        for s in (0..self.steps.len()).rev() {
            let t = self.steps[s];
            let gates = &self.gates[s * 4 * h..(s + 1) * 4 * h];
            let tc = &self.tanh_cells[s * h..(s + 1) * h];
            let c_prev = if s == 0 {
                &zero[..]
            } else {
                &self.cells[(s - 1) * h..s * h]
            };
            // the previous hidden state is the output column of the previous step
            if s > 0 {
                let prev_t = self.steps[s - 1];
                for r in 0..h {
                    h_prev_all[(r, t)] = output[(r, prev_t)];
                }
            }
            for r in 0..h {
                let (i, f, g, o) = (gates[r], gates[h + r], gates[2 * h + r], gates[3 * h + r]);
                let dh = grad_out[(r, t)] + dh_next[(r, 0)];
                let d_o = dh * tc[r];
                let dc = dc_next[r] + dh * o * (one - tc[r] * tc[r]);
                let di = dc * g;
                let dg = dc * i;
                let df = dc * c_prev[r];
                dc_next[r] = if carry_fault { T::zero() } else { dc * f };
                dz[(r, 0)] = di * i * (one - i);
                dz[(h + r, 0)] = df * f * (one - f);
                dz[(2 * h + r, 0)] = dg * (one - g * g);
                dz[(3 * h + r, 0)] = d_o * o * (one - o);
            }
            for r in 0..4 * h {
                dz_all[(r, t)] = dz[(r, 0)];
            }
            dh_next.fill(T::zero());
            gemm_tn(&mut dh_next, w_hh, &dz);
        }

        let mut d_w_ih = Matrix::zeros(w_ih.rows(), w_ih.cols());
        gemm_nt(&mut d_w_ih, &dz_all, x);
        let mut d_w_hh = Matrix::zeros(w_hh.rows(), w_hh.cols());
        gemm_nt(&mut d_w_hh, &dz_all, &h_prev_all);
        let mut d_x = Matrix::zeros(x.rows(), x.cols());
        gemm_tn(&mut d_x, w_ih, &dz_all);
        let mut d_bias = Matrix::zeros(4 * h, 1);
        for r in 0..4 * h {
            d_bias[(r, 0)] = dz_all.row(r).iter().copied().sum();
        }
        LstmGrads {
            input: d_x,
            w_ih: d_w_ih,
            w_hh: d_w_hh,
            bias: d_bias,
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Runs one LSTM direction over the columns of `x` (d×T) from zero
    /// initial state and returns the h×T matrix of hidden states. Masked
    /// steps are skipped: their output column is zero and the state passes
    /// through unchanged.
    pub fn lstm_sequence(
        &mut self,
        x: Var,
        w: LstmVars,
        mask: Option<&[bool]>,
        reverse: bool,
    ) -> Result<Var> {
        let hidden = check_lstm_shapes(self, x, w)?;
        let seq_len = self.shape(x).1;
        if seq_len == 0 {
            return Err(Error::EmptySequence("lstm_sequence"));
        }
        if let Some(mask) = mask {
            if mask.len() != seq_len {
                return Err(Error::Dimension {
                    op: "lstm_sequence",
                    left: self.shape(x),
                    right: (1, mask.len()),
                });
            }
        }

        let h = hidden;
        let xv = self.value(x);
        let w_ih = self.value(w.w_ih);
        let w_hh = self.value(w.w_hh);
        let bias = self.value(w.bias);

        let mut pre = Matrix::zeros(4 * h, seq_len);
        gemm_nn(&mut pre, w_ih, xv);

        let order: Vec<usize> = if reverse {
            (0..seq_len).rev().collect()
        } else {
            (0..seq_len).collect()
        };
        let steps: Vec<usize> = order
            .into_iter()
            .filter(|&t| mask.is_none_or(|m| m[t]))
            .collect();

        let mut out = Matrix::zeros(h, seq_len);
        let mut gates = Vec::with_capacity(steps.len() * 4 * h);
        let mut cells = Vec::with_capacity(steps.len() * h);
        let mut tanh_cells = Vec::with_capacity(steps.len() * h);
        let mut h_state = Matrix::zeros(h, 1);
        let mut c_state = vec![T::zero(); h];
        let mut z = Matrix::zeros(4 * h, 1);

        for &t in &steps {
            for r in 0..4 * h {
                z[(r, 0)] = pre[(r, t)];
            }
            gemm_nn(&mut z, w_hh, &h_state);
            for r in 0..h {
                let i = sigmoid(z[(r, 0)] + bias[(r, 0)]);
                let f = sigmoid(z[(h + r, 0)] + bias[(h + r, 0)]);
                let g = (z[(2 * h + r, 0)] + bias[(2 * h + r, 0)]).tanh();
                let o = sigmoid(z[(3 * h + r, 0)] + bias[(3 * h + r, 0)]);
                let c = f * c_state[r] + i * g;
                c_state[r] = c;
                let tc = c.tanh();
                cells.push(c);
                tanh_cells.push(tc);
                out[(r, t)] = o * tc;
                z[(r, 0)] = i;
                z[(h + r, 0)] = f;
                z[(2 * h + r, 0)] = g;
                z[(3 * h + r, 0)] = o;
            }
            gates.extend_from_slice(z.data());
            for r in 0..h {
                h_state[(r, 0)] = out[(r, t)];
            }
        }

        let rg = [x, w.w_ih, w.w_hh, w.bias]
            .iter()
            .any(|v| self.requires_grad(*v));
        let record = LstmRecord {
            input: x,
            w_ih: w.w_ih,
            w_hh: w.w_hh,
            bias: w.bias,
            hidden: h,
            steps,
            gates,
            cells,
            tanh_cells,
        };
        Ok(self.push(out, rg, Op::Lstm(Box::new(record))))
    }

    /// Bi-directional encoder: column t of the result is the forward state at
    /// t stacked above the backward state at t.
    pub fn bilstm(&mut self, x: Var, w: BiLstmVars, mask: Option<&[bool]>) -> Result<Var> {
        let fwd = self.lstm_sequence(x, w.forward, mask, false)?;
        let bwd = self.lstm_sequence(x, w.backward, mask, true)?;
        self.concat_rows(fwd, bwd)
    }

    /// A single LSTM step composed from primitive tape ops. Returns
    /// `(h_t, c_t)`.
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h_prev: Var,
        c_prev: Var,
        w: LstmVars,
    ) -> Result<(Var, Var)> {
        let h = check_lstm_shapes(self, x, w)?;
        for (name, v) in [("h_prev", h_prev), ("c_prev", c_prev)] {
            if self.shape(v) != (h, 1) {
                return Err(Error::Dimension {
                    op: if name == "h_prev" {
                        "lstm_cell(h_prev)"
                    } else {
                        "lstm_cell(c_prev)"
                    },
                    left: self.shape(v),
                    right: (h, 1),
                });
            }
        }
        if self.shape(x).1 != 1 {
            return Err(Error::Dimension {
                op: "lstm_cell(x)",
                left: self.shape(x),
                right: (self.shape(x).0, 1),
            });
        }
        let zx = self.matmul(w.w_ih, x)?;
        let zh = self.matmul(w.w_hh, h_prev)?;
        let z = self.add(zx, zh)?;
        let z = self.add_bias(z, w.bias)?;
        let zi = self.slice_rows(z, 0, h)?;
        let zf = self.slice_rows(z, h, h)?;
        let zg = self.slice_rows(z, 2 * h, h)?;
        let zo = self.slice_rows(z, 3 * h, h)?;
        let i = self.sigmoid(zi);
        let f = self.sigmoid(zf);
        let g = self.tanh(zg);
        let o = self.sigmoid(zo);
        let keep = self.mul(f, c_prev)?;
        let write = self.mul(i, g)?;
        let c = self.add(keep, write)?;
        let tc = self.tanh(c);
        let h_t = self.mul(o, tc)?;
        Ok((h_t, c))
    }
}

fn check_lstm_shapes<T: Scalar>(tape: &Tape<T>, x: Var, w: LstmVars) -> Result<usize> {
    let (rows_ih, cols_ih) = tape.shape(w.w_ih);
    let (rows_hh, cols_hh) = tape.shape(w.w_hh);
    let hidden = cols_hh;
    let bad = |left, right| Error::Dimension {
        op: "lstm",
        left,
        right,
    };
    if rows_hh != 4 * hidden {
        return Err(bad((rows_hh, cols_hh), (4 * hidden, hidden)));
    }
    if rows_ih != 4 * hidden {
        return Err(bad((rows_ih, cols_ih), (4 * hidden, cols_ih)));
    }
    if tape.shape(w.bias) != (4 * hidden, 1) {
        return Err(bad(tape.shape(w.bias), (4 * hidden, 1)));
    }
    if tape.shape(x).0 != cols_ih {
        return Err(bad(tape.shape(x), (cols_ih, tape.shape(x).1)));
    }
    Ok(hidden)
}
