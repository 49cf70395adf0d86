//! Finite-difference gradient verification.
//!
//! Rebuilds the computation from scratch for every probe, so it checks an
//! implementation-independent quantity: (f(x+h) - f(x-h)) / 2h against the
//! tape's accumulated gradient.

use crate::tensor::{Tape, Tensor};

/// Worst disagreement between analytic and numeric gradients.
#[derive(Debug, Clone, Copy)]
pub struct Report {
    pub max_rel: f64,
    pub worst_input: usize,
    pub worst_elem: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative error with a floor so that near-zero pairs compare absolutely.
fn rel_err(a: f64, n: f64) -> f64 {
    let diff = (a - n).abs();
    if diff < 1e-10 {
        return 0.0;
    }
    diff / a.abs().max(n.abs()).max(1e-8)
}

/// `build` must construct a scalar loss from leaves created on the given
/// tape, one per entry of `inputs` (shape, values).
pub fn check<F>(build: F, inputs: &[(Vec<usize>, Vec<f64>)], step: f64) -> Report
where
    F: Fn(&Tape, &[Tensor]) -> Tensor,
{
    let eval = |values: &[Vec<f64>]| -> f64 {
        let tape = Tape::new();
        let leaves: Vec<Tensor> = inputs
            .iter()
            .zip(values)
            .map(|((shape, _), vals)| tape.leaf(shape, vals.clone()).expect("leaf shape"))
            .collect();
        let loss = build(&tape, &leaves);
        loss.scalar().expect("loss must be scalar")
    };

    // Analytic gradients from one nominal run.
    let nominal: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(shape, vals)| tape.leaf(shape, vals.clone()).expect("leaf shape"))
        .collect();
    let loss = build(&tape, &leaves);
    tape.backward(&loss).expect("backward");
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|l| l.grad_real().expect("grad")).collect();

    let mut report = Report {
        max_rel: 0.0,
        worst_input: 0,
        worst_elem: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (i, (_, vals)) in inputs.iter().enumerate() {
        for e in 0..vals.len() {
            let mut plus = nominal.clone();
            plus[i][e] += step;
            let mut minus = nominal.clone();
            minus[i][e] -= step;
            let fp = eval(&plus);
            let fm = eval(&minus);
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[i][e];
            let rel = rel_err(a, numeric);
            if rel > report.max_rel {
                report = Report {
                    max_rel: rel,
                    worst_input: i,
                    worst_elem: e,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    report
}

/// Panics with a readable message when the worst relative error exceeds `tol`.
pub fn assert_gradients<F>(build: F, inputs: &[(Vec<usize>, Vec<f64>)], step: f64, tol: f64)
where
    F: Fn(&Tape, &[Tensor]) -> Tensor,
{
    let r = check(build, inputs, step);
    assert!(
        r.max_rel < tol,
        "gradient check failed: rel err {:.3e} at input {} elem {} (analytic {:.9e}, numeric {:.9e})",
        r.max_rel,
        r.worst_input,
        r.worst_elem,
        r.analytic,
        r.numeric
    );
}
