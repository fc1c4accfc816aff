//! Standard LSTM cell on the graph.

use crate::error::{Error, Result};

use super::graph::{Graph, ValueId};
use super::scalar::Scalar;

/// Fused cell weights. Gate blocks are laid out `[input, forget, candidate,
/// output]` along the columns: `w_x: [in, 4H]`, `w_h: [H, 4H]`, `b: [4H]`.
/// One bias vector per gate (no separate recurrent bias).
#[derive(Debug, Clone, Copy)]
pub struct LstmCellParams {
    pub w_x: ValueId,
    pub w_h: ValueId,
    pub b: ValueId,
}

/// One step of the standard LSTM recurrence:
/// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')` with sigmoid gates and a tanh
/// candidate. `x: [B, in]`, `h`/`c`: `[B, H]`; returns `(h', c')`.
pub fn lstm_cell<F: Scalar>(
    g: &mut Graph<F>,
    x: ValueId,
    h: ValueId,
    c: ValueId,
    p: &LstmCellParams,
) -> Result<(ValueId, ValueId)> {
    let wh_shape = g.shape(p.w_h);
    if wh_shape.len() != 2 || wh_shape[1] != 4 * wh_shape[0] {
        return Err(Error::Shape {
            op: "lstm_cell",
            detail: format!("recurrent weights {wh_shape:?} are not [H, 4H]"),
        });
    }
    let hidden = wh_shape[0];
    let from_x = g.matmul(x, p.w_x)?;
    let from_h = g.matmul(h, p.w_h)?;
    let linear = g.add(from_x, from_h)?;
    let pre = g.add_row(linear, p.b)?;

    let i_pre = g.slice_cols(pre, 0, hidden)?;
    let f_pre = g.slice_cols(pre, hidden, hidden)?;
    let g_pre = g.slice_cols(pre, 2 * hidden, hidden)?;
    let o_pre = g.slice_cols(pre, 3 * hidden, hidden)?;

    let i_gate = g.sigmoid(i_pre);
    let f_gate = g.sigmoid(f_pre);
    let cand = g.tanh(g_pre);
    let o_gate = g.sigmoid(o_pre);

    let keep = g.mul(f_gate, c)?;
    let write = g.mul(i_gate, cand)?;
    let c_next = g.add(keep, write)?;
    let c_act = g.tanh(c_next);
    let h_next = g.mul(o_gate, c_act)?;
    Ok((h_next, c_next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    fn zero_params(g: &mut Graph<f64>, input: usize, hidden: usize) -> LstmCellParams {
        LstmCellParams {
            w_x: g.leaf(Tensor::zeros(vec![input, 4 * hidden])),
            w_h: g.leaf(Tensor::zeros(vec![hidden, 4 * hidden])),
            b: g.leaf(Tensor::zeros(vec![4 * hidden])),
        }
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let mut g: Graph<f64> = Graph::new();
        let p = zero_params(&mut g, 3, 2);
        let x = g.leaf(Tensor::matrix(1, 3, vec![0.7, -1.3, 2.2]));
        let h = g.leaf(Tensor::zeros(vec![1, 2]));
        let c = g.leaf(Tensor::zeros(vec![1, 2]));
        let (h2, c2) = lstm_cell(&mut g, x, h, c, &p).unwrap();
        // Gates sit at 0.5 and the candidate at 0, so nothing is written.
        assert!(g.data(h2).iter().all(|&v| v == 0.0));
        assert!(g.data(c2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_carry_cell_state() {
        let mut g: Graph<f64> = Graph::new();
        let hidden = 2;
        let w_x = g.leaf(Tensor::zeros(vec![3, 4 * hidden]));
        let w_h = g.leaf(Tensor::zeros(vec![hidden, 4 * hidden]));
        // forget bias +100, input bias -100: c' ≈ c.
        let mut b = vec![0.0; 4 * hidden];
        for j in 0..hidden {
            b[j] = -100.0;
            b[hidden + j] = 100.0;
        }
        let b = g.leaf(Tensor::vector(b));
        let p = LstmCellParams { w_x, w_h, b };
        let x = g.leaf(Tensor::matrix(1, 3, vec![0.3, 0.4, -0.5]));
        let h = g.leaf(Tensor::matrix(1, hidden, vec![0.1, -0.2]));
        let c = g.leaf(Tensor::matrix(1, hidden, vec![0.9, -1.4]));
        let (_, c2) = lstm_cell(&mut g, x, h, c, &p).unwrap();
        for (out, orig) in g.data(c2).iter().zip([0.9, -1.4]) {
            assert!((out - orig).abs() < 1e-9, "{out} vs {orig}");
        }
    }

    #[test]
    fn batched_rows_stay_batched() {
        let mut g: Graph<f64> = Graph::new();
        let p = zero_params(&mut g, 3, 2);
        let x = g.leaf(Tensor::matrix(5, 3, vec![0.1; 15]));
        let h = g.leaf(Tensor::zeros(vec![5, 2]));
        let c = g.leaf(Tensor::zeros(vec![5, 2]));
        let (h2, c2) = lstm_cell(&mut g, x, h, c, &p).unwrap();
        assert_eq!(g.shape(h2), &[5, 2]);
        assert_eq!(g.shape(c2), &[5, 2]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut g: Graph<f64> = Graph::new();
        let p = zero_params(&mut g, 3, 2);
        let x = g.leaf(Tensor::matrix(1, 4, vec![0.0; 4])); // wrong input width
        let h = g.leaf(Tensor::zeros(vec![1, 2]));
        let c = g.leaf(Tensor::zeros(vec![1, 2]));
        assert!(lstm_cell(&mut g, x, h, c, &p).is_err());
    }
}
