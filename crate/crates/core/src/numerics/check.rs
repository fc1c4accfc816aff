//! Finite-difference gradient checking.
//!
//! The checker is the independent oracle for the backward pass: it rebuilds
//! the graph at perturbed inputs and compares central differences against
//! the analytic gradients, coordinate by coordinate. Checks should run at
//! `f64`; at 32 bits the difference quotient drowns in rounding error.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::graph::{Graph, ValueId};
use super::lstm::{lstm_cell, LstmCellParams};
use super::scalar::Scalar;
use super::tensor::Tensor;

/// Builds a scalar value from leaves already inserted into the graph.
pub type ScalarFn<F> = dyn Fn(&mut Graph<F>, &[ValueId]) -> Result<ValueId>;

/// Relative error with the conventional guarded denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare the analytic gradient of `f` at `points` against central finite
/// differences with step `eps`; returns the worst relative error over all
/// coordinates.
pub fn grad_check<F: Scalar>(f: &ScalarFn<F>, points: &[Tensor<F>], eps: f64) -> Result<f64> {
    let eval = |tensors: &[Tensor<F>]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<ValueId> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let root = f(&mut g, &leaves)?;
        let y = g.item(root).as_f64();
        if !y.is_finite() {
            return Err(Error::NonFinite { what: "grad_check probe".into() });
        }
        Ok(y)
    };

    // Analytic pass.
    let mut g = Graph::new();
    let leaves: Vec<ValueId> = points.iter().map(|t| g.leaf(t.clone())).collect();
    let root = f(&mut g, &leaves)?;
    if !g.item(root).as_f64().is_finite() {
        return Err(Error::NonFinite { what: "grad_check probe".into() });
    }
    g.backward(root)?;
    let analytic: Vec<Tensor<F>> = leaves.iter().map(|&id| g.grad_tensor(id)).collect();

    let mut worst = 0.0_f64;
    let mut probe: Vec<Tensor<F>> = points.to_vec();
    for (ti, t) in points.iter().enumerate() {
        for j in 0..t.numel() {
            let orig = t.data()[j];
            probe[ti].data_mut()[j] = orig + F::from_f64(eps);
            let plus = eval(&probe)?;
            probe[ti].data_mut()[j] = orig - F::from_f64(eps);
            let minus = eval(&probe)?;
            probe[ti].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[ti].data()[j].as_f64(), numeric);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

/// Result of checking one primitive over many random points.
#[derive(Debug, Clone)]
pub struct PrimitiveCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    /// 1e-6 for true primitives; the lstm_cell composite carries the
    /// composite-graph bound of 1e-4.
    pub threshold: f64,
}

impl PrimitiveCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

fn rand_tensor(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Magnitudes bounded away from zero, for ops with a kink at the origin.
fn rand_tensor_nonzero(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.3..2.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, data)
}

fn weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Run every graph primitive through the finite-difference oracle.
///
/// Matrix-valued ops are reduced to a scalar through a fixed random-weight
/// `masked_sum`, so errors cannot cancel across entries (a plain `sum` of a
/// softmax row, for instance, has an identically zero gradient).
pub fn check_primitives(points_per_op: usize, eps: f64, seed: u64) -> Result<Vec<PrimitiveCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // Each case: (name, point sampler, scalar builder over the leaves).
    type Sampler = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>>;
    type Builder = Box<ScalarFn<f64>>;
    let mut cases: Vec<(&'static str, Sampler, Builder)> = Vec::new();

    {
        let w = weights(2 * 4, &mut rng);
        cases.push((
            "matmul",
            Box::new(|r| vec![rand_tensor(vec![2, 3], -2.0, 2.0, r), rand_tensor(vec![3, 4], -2.0, 2.0, r)]),
            Box::new(move |g, l| {
                let y = g.matmul(l[0], l[1])?;
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(6, &mut rng);
        cases.push((
            "add",
            Box::new(|r| vec![rand_tensor(vec![2, 3], -2.0, 2.0, r), rand_tensor(vec![2, 3], -2.0, 2.0, r)]),
            Box::new(move |g, l| {
                let y = g.add(l[0], l[1])?;
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(6, &mut rng);
        cases.push((
            "sub",
            Box::new(|r| vec![rand_tensor(vec![2, 3], -2.0, 2.0, r), rand_tensor(vec![2, 3], -2.0, 2.0, r)]),
            Box::new(move |g, l| {
                let y = g.sub(l[0], l[1])?;
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(6, &mut rng);
        cases.push((
            "mul",
            Box::new(|r| vec![rand_tensor(vec![2, 3], -2.0, 2.0, r), rand_tensor(vec![2, 3], -2.0, 2.0, r)]),
            Box::new(move |g, l| {
                let y = g.mul(l[0], l[1])?;
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(6, &mut rng);
        cases.push((
            "add_row",
            Box::new(|r| vec![rand_tensor(vec![2, 3], -2.0, 2.0, r), rand_tensor(vec![3], -2.0, 2.0, r)]),
            Box::new(move |g, l| {
                let y = g.add_row(l[0], l[1])?;
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(6, &mut rng);
        cases.push((
            "mul_col",
            Box::new(|r| vec![rand_tensor(vec![2, 3], -2.0, 2.0, r), rand_tensor(vec![2], -2.0, 2.0, r)]),
            Box::new(move |g, l| {
                let y = g.mul_col(l[0], l[1])?;
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(4, &mut rng);
        cases.push((
            "affine",
            Box::new(|r| vec![rand_tensor(vec![4], -2.0, 2.0, r)]),
            Box::new(move |g, l| {
                let y = g.affine(l[0], 1.7, -0.3);
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(4, &mut rng);
        cases.push((
            "sigmoid",
            Box::new(|r| vec![rand_tensor(vec![4], -3.0, 3.0, r)]),
            Box::new(move |g, l| {
                let y = g.sigmoid(l[0]);
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(4, &mut rng);
        cases.push((
            "tanh",
            Box::new(|r| vec![rand_tensor(vec![4], -3.0, 3.0, r)]),
            Box::new(move |g, l| {
                let y = g.tanh(l[0]);
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(8, &mut rng);
        cases.push((
            "softmax",
            Box::new(|r| vec![rand_tensor(vec![2, 4], -3.0, 3.0, r)]),
            Box::new(move |g, l| {
                let y = g.softmax(l[0])?;
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(8, &mut rng);
        let mask = vec![true, false, true, true, true, true, false, true];
        cases.push((
            "masked_softmax",
            Box::new(|r| vec![rand_tensor(vec![2, 4], -3.0, 3.0, r)]),
            Box::new(move |g, l| {
                let y = g.masked_softmax(l[0], &mask)?;
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(10, &mut rng);
        cases.push((
            "concat_cols",
            Box::new(|r| vec![rand_tensor(vec![2, 2], -2.0, 2.0, r), rand_tensor(vec![2, 3], -2.0, 2.0, r)]),
            Box::new(move |g, l| {
                let y = g.concat_cols(&[l[0], l[1]])?;
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(4, &mut rng);
        cases.push((
            "slice_cols",
            Box::new(|r| vec![rand_tensor(vec![2, 4], -2.0, 2.0, r)]),
            Box::new(move |g, l| {
                let y = g.slice_cols(l[0], 1, 2)?;
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(9, &mut rng);
        cases.push((
            "gather_rows",
            Box::new(|r| vec![rand_tensor(vec![4, 3], -2.0, 2.0, r)]),
            Box::new(move |g, l| {
                let y = g.gather_rows(l[0], &[2, 0, 2])?;
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(3, &mut rng);
        cases.push((
            "take_per_row",
            Box::new(|r| vec![rand_tensor(vec![3, 4], -2.0, 2.0, r)]),
            Box::new(move |g, l| {
                let y = g.take_per_row(l[0], &[1, 3, 0])?;
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(3, &mut rng);
        cases.push((
            "l2_norm",
            Box::new(|r| vec![rand_tensor_nonzero(vec![3, 4], r)]),
            Box::new(move |g, l| {
                let y = g.l2_norm_rows(l[0]);
                g.masked_sum(y, &w)
            }),
        ));
    }
    {
        let w = weights(4, &mut rng);
        cases.push((
            "ln",
            Box::new(|r| vec![rand_tensor(vec![4], 0.1, 3.0, r)]),
            Box::new(move |g, l| {
                let y = g.ln(l[0]);
                g.masked_sum(y, &w)
            }),
        ));
    }
    cases.push((
        "sum",
        Box::new(|r| vec![rand_tensor(vec![2, 3], -2.0, 2.0, r)]),
        Box::new(|g, l| Ok(g.sum(l[0]))),
    ));
    {
        let w = weights(6, &mut rng);
        cases.push((
            "masked_sum",
            Box::new(|r| vec![rand_tensor(vec![6], -2.0, 2.0, r)]),
            Box::new(move |g, l| g.masked_sum(l[0], &w)),
        ));
    }
    cases.push((
        "masked_mean",
        Box::new(|r| vec![rand_tensor(vec![6], -2.0, 2.0, r)]),
        Box::new(|g, l| g.masked_mean(l[0], &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0])),
    ));
    {
        // x, h, c, w_x, w_h, b for a 2-wide cell on a batch of 2.
        let w = weights(2 * 4, &mut rng);
        cases.push((
            "lstm_cell",
            Box::new(|r| {
                vec![
                    rand_tensor(vec![2, 3], -2.0, 2.0, r),
                    rand_tensor(vec![2, 2], -2.0, 2.0, r),
                    rand_tensor(vec![2, 2], -2.0, 2.0, r),
                    rand_tensor(vec![3, 8], -1.0, 1.0, r),
                    rand_tensor(vec![2, 8], -1.0, 1.0, r),
                    rand_tensor(vec![8], -1.0, 1.0, r),
                ]
            }),
            Box::new(move |g, l| {
                let p = LstmCellParams { w_x: l[3], w_h: l[4], b: l[5] };
                let (h, c) = lstm_cell(g, l[0], l[1], l[2], &p)?;
                let both = g.concat_cols(&[h, c])?;
                g.masked_sum(both, &w)
            }),
        ));
    }

    for (name, sampler, builder) in cases {
        let mut worst = 0.0_f64;
        for _ in 0..points_per_op {
            let points = sampler(&mut rng);
            let err = grad_check(builder.as_ref(), &points, eps)?;
            if err > worst {
                worst = err;
            }
        }
        let threshold = if name == "lstm_cell" { 1e-4 } else { 1e-6 };
        out.push(PrimitiveCheck { name, max_rel_err: worst, threshold });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        // f(x) = Σ x², ∇f = 2x exactly.
        let f: Box<ScalarFn<f64>> = Box::new(|g, l| {
            let sq = g.mul(l[0], l[0])?;
            Ok(g.sum(sq))
        });
        let point = Tensor::vector(vec![1.5, -0.25, 3.0, 0.7]);
        let err = grad_check(f.as_ref(), &[point], 1e-5).unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let f: Box<ScalarFn<f64>> = Box::new(|g, _| Ok(g.scalar(4.2)));
        let err = grad_check(f.as_ref(), &[Tensor::vector(vec![1.0, 2.0])], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_probe_rejected() {
        let f: Box<ScalarFn<f64>> = Box::new(|g, l| {
            let y = g.affine(l[0], f64::INFINITY, 0.0);
            Ok(g.sum(y))
        });
        assert!(grad_check(f.as_ref(), &[Tensor::vector(vec![1.0])], 1e-5).is_err());
    }

    #[test]
    fn every_primitive_passes_at_64_bit() {
        // A small point count here keeps the unit suite fast; the acceptance
        // suite runs the full 100 points per op.
        let checks = check_primitives(10, 1e-5, 42).unwrap();
        for c in &checks {
            assert!(c.passed(), "{}: {}", c.name, c.max_rel_err);
        }
        assert!(checks.iter().any(|c| c.name == "lstm_cell"));
    }
}
