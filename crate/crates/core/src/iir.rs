//! Order-2 IIR filter analysis.
//!
//! Everything here is scalar math on the two feedback coefficients
//! (theta0, theta1): frequency response, pole placement, stability,
//! impulse response, direct recurrent application, and the reduction of a
//! diagonal state-space channel to an order-2 filter. These functions are
//! the time-domain ground truth that the spectral path is tested against.

use num_complex::Complex64;

use std::f64::consts::TAU;

/// Complex response 1 / (1 + theta0 e^{-j 2 pi f} + theta1 e^{-j 4 pi f})
/// at normalized frequency `f` in cycles per sample.
pub fn freq_response(theta0: f64, theta1: f64, f: f64) -> Complex64 {
    let w1 = Complex64::from_polar(1.0, -TAU * f);
    let w2 = Complex64::from_polar(1.0, -2.0 * TAU * f);
    Complex64::new(1.0, 0.0) / (Complex64::new(1.0, 0.0) + theta0 * w1 + theta1 * w2)
}

/// Roots of z^2 + theta0 z + theta1, complex branch when the discriminant
/// is negative.
pub fn poles(theta0: f64, theta1: f64) -> (Complex64, Complex64) {
    let disc = theta0 * theta0 - 4.0 * theta1;
    if disc >= 0.0 {
        let r = disc.sqrt();
        (
            Complex64::new((-theta0 + r) / 2.0, 0.0),
            Complex64::new((-theta0 - r) / 2.0, 0.0),
        )
    } else {
        let r = (-disc).sqrt();
        (
            Complex64::new(-theta0 / 2.0, r / 2.0),
            Complex64::new(-theta0 / 2.0, -r / 2.0),
        )
    }
}

/// An underdamped filter rings: theta0^2 < 4 theta1, i.e. the poles form a
/// complex-conjugate pair. The boundary (critically damped) counts as false.
pub fn is_underdamped(theta0: f64, theta1: f64) -> bool {
    theta0 * theta0 < 4.0 * theta1
}

/// First `n_steps` samples of the response to a unit impulse:
/// h[0] = 1, h[t] = -theta0 h[t-1] - theta1 h[t-2].
pub fn impulse_response(theta0: f64, theta1: f64, n_steps: usize) -> Vec<f64> {
    let mut h = Vec::with_capacity(n_steps);
    for t in 0..n_steps {
        let h1 = if t >= 1 { h[t - 1] } else { 0.0 };
        let h2 = if t >= 2 { h[t - 2] } else { 0.0 };
        h.push(if t == 0 { 1.0 } else { -theta0 * h1 - theta1 * h2 });
    }
    h
}

/// Direct-form order-2 recurrence with zero initial conditions:
/// y[t] = b0 x[t] + b1 x[t-1] + b2 x[t-2] - a1 y[t-1] - a2 y[t-2].
pub fn apply_iir_recurrent(b0: f64, b1: f64, b2: f64, a1: f64, a2: f64, x: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    for t in 0..x.len() {
        let x1 = if t >= 1 { x[t - 1] } else { 0.0 };
        let x2 = if t >= 2 { x[t - 2] } else { 0.0 };
        let y1 = if t >= 1 { y[t - 1] } else { 0.0 };
        let y2 = if t >= 2 { y[t - 2] } else { 0.0 };
        y.push(b0 * x[t] + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2);
    }
    y
}

/// One channel of a diagonal state-space layer:
/// s[t] = A s[t-1] + B x[t], y[t] = C s[t] + D x[t].
#[derive(Clone, Copy, Debug)]
pub struct SsmScalars {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Order-1 filter coefficients (b0, b1, a1) equivalent to the given SSM
/// channel, with b2 = a2 = 0. Eliminating the state from the recurrence
/// gives y[t] = A y[t-1] + (CB + D) x[t] - AD x[t-1].
pub fn ssm_to_iir(s: SsmScalars) -> (f64, f64, f64) {
    (s.c * s.b + s.d, -s.a * s.d, -s.a)
}

/// Pole-derived shape diagnostics for one filter.
#[derive(Clone, Copy, Debug)]
pub struct ImpulseParams {
    /// theta0^2 - 4 theta1; negative means a ringing response.
    pub discriminant: f64,
    pub underdamped: bool,
    /// Decay rate per step: the larger pole modulus.
    pub max_pole_modulus: f64,
    /// Dominant oscillation in cycles per step (0.5 = sign alternation).
    pub oscillation_freq: f64,
}

pub fn impulse_params(theta0: f64, theta1: f64) -> ImpulseParams {
    let (p1, p2) = poles(theta0, theta1);
    let dominant = if p1.norm() >= p2.norm() { p1 } else { p2 };
    ImpulseParams {
        discriminant: theta0 * theta0 - 4.0 * theta1,
        underdamped: is_underdamped(theta0, theta1),
        max_pole_modulus: dominant.norm(),
        oscillation_freq: dominant.arg().abs() / TAU,
    }
}

// ---- CSV export ----

/// Magnitude response table: one row per frequency k/n_freqs, one column
/// per filter after the leading `f` column.
pub fn freq_magnitude_csv(filters: &[(f64, f64)], names: &[String], n_freqs: usize) -> String {
    assert_eq!(filters.len(), names.len(), "one name per filter");
    let mut out = String::from("f");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for k in 0..n_freqs {
        let f = k as f64 / n_freqs as f64;
        out.push_str(&format!("{f}"));
        for &(t0, t1) in filters {
            out.push_str(&format!(",{:e}", freq_response(t0, t1, f).norm()));
        }
        out.push('\n');
    }
    out
}

/// Impulse response table: one row per step, one column per filter after
/// the leading `t` column.
pub fn impulse_csv(filters: &[(f64, f64)], names: &[String], n_steps: usize) -> String {
    assert_eq!(filters.len(), names.len(), "one name per filter");
    let responses: Vec<Vec<f64>> = filters
        .iter()
        .map(|&(t0, t1)| impulse_response(t0, t1, n_steps))
        .collect();
    let mut out = String::from("t");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for t in 0..n_steps {
        out.push_str(&format!("{t}"));
        for h in &responses {
            out.push_str(&format!(",{:e}", h[t]));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 50x50 grid over the open coefficient square (0.01, 0.99)^2.
    fn theta_grid() -> Vec<(f64, f64)> {
        let mut grid = Vec::with_capacity(2500);
        for i in 0..50 {
            for j in 0..50 {
                grid.push((0.01 + 0.98 * i as f64 / 49.0, 0.01 + 0.98 * j as f64 / 49.0));
            }
        }
        grid
    }

    #[test]
    fn freq_response_matches_hand_values() {
        for f in [0.0, 0.125, 0.37, 0.5, 0.99] {
            let r = freq_response(0.0, 0.0, f);
            assert!(
                (r - Complex64::new(1.0, 0.0)).norm() < 1e-15,
                "zero coefficients must give unit response at f={f}"
            );
        }
        let dc = freq_response(0.5, 0.25, 0.0);
        assert!((dc - Complex64::new(1.0 / 1.75, 0.0)).norm() < 1e-15, "dc gain is 1/(1+t0+t1)");
        let nyq = freq_response(0.5, 0.25, 0.5);
        assert!((nyq - Complex64::new(1.0 / 0.75, 0.0)).norm() < 1e-12, "nyquist gain is 1/(1-t0+t1)");
    }

    #[test]
    fn poles_match_quadratic_roots() {
        let (p1, p2) = poles(0.0, 0.0);
        assert_eq!((p1, p2), (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)));

        let (p1, p2) = poles(1.0, 0.25);
        assert!((p1 - Complex64::new(-0.5, 0.0)).norm() < 1e-15, "double root at -1/2");
        assert!((p2 - Complex64::new(-0.5, 0.0)).norm() < 1e-15);

        let (p1, p2) = poles(0.2, 0.5);
        assert!(p1.im > 0.0 && p2.im < 0.0, "complex pair must be conjugate");
        assert!((p1.norm() - 0.5f64.sqrt()).abs() < 1e-15, "pair modulus is sqrt(theta1)");
        assert!((p1 - p2.conj()).norm() < 1e-15);

        for &(t0, t1) in &theta_grid() {
            let (p1, p2) = poles(t0, t1);
            let check = |p: Complex64| (p * p + t0 * p + t1).norm();
            assert!(check(p1) < 1e-12 && check(p2) < 1e-12, "roots must satisfy the quadratic");
        }
    }

    #[test]
    fn underdamped_iff_complex_pole_pair() {
        assert!(!is_underdamped(0.9, 0.1));
        assert!(is_underdamped(0.2, 0.5));
        assert!(!is_underdamped(1.0, 0.25), "critically damped boundary counts as false");
        for &(t0, t1) in &theta_grid() {
            let complex_pair = poles(t0, t1).0.im != 0.0;
            assert_eq!(
                is_underdamped(t0, t1),
                complex_pair,
                "discriminant sign must agree with pole type at ({t0}, {t1})"
            );
        }
    }

    #[test]
    fn impulse_response_matches_hand_recurrence() {
        let h = impulse_response(0.0, 0.0, 5);
        assert_eq!(h, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let h = impulse_response(0.5, 0.0, 4);
        assert_eq!(h, vec![1.0, -0.5, 0.25, -0.125], "single tap decays geometrically");
    }

    #[test]
    fn impulse_response_is_pole_bounded_on_grid() {
        for &(t0, t1) in &theta_grid() {
            let rho = impulse_params(t0, t1).max_pole_modulus;
            assert!(rho < 1.0, "grid point ({t0}, {t1}) must be stable, got modulus {rho}");
            let h = impulse_response(t0, t1, 201);
            let peak = h.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            if rho < 0.95 {
                assert!(
                    h[200].abs() < 1e-3 * peak,
                    "response at ({t0}, {t1}) must have decayed by step 200"
                );
            } else {
                // The slowest grid filters (modulus up to sqrt(0.99)) only
                // reach rho^200 ~ 0.37 of peak; they still shrink.
                assert!(
                    h[200].abs() < 0.5 * peak,
                    "response at ({t0}, {t1}) must be shrinking by step 200"
                );
            }
            let worst_ratio = h
                .iter()
                .enumerate()
                .map(|(t, &v)| v.abs() / rho.powi(t as i32))
                .fold(0.0, f64::max);
            assert!(
                worst_ratio < 250.0,
                "|h[t]| must stay within a moderate multiple of rho^t, got {worst_ratio}"
            );
        }
    }

    #[test]
    fn truncated_impulse_dft_converges_to_freq_response() {
        let n = 1024;
        for i in 0..10 {
            for j in 0..10 {
                let (t0, t1) = (0.05 + 0.9 * i as f64 / 9.0, 0.05 + 0.9 * j as f64 / 9.0);
                if impulse_params(t0, t1).max_pole_modulus >= 0.95 {
                    continue;
                }
                let h = impulse_response(t0, t1, n);
                for k in [0usize, 1, 7, 100, 512, 900] {
                    let f = k as f64 / n as f64;
                    let dft: Complex64 = h
                        .iter()
                        .enumerate()
                        .map(|(t, &v)| v * Complex64::from_polar(1.0, -TAU * f * t as f64))
                        .sum();
                    let err = (dft - freq_response(t0, t1, f)).norm();
                    assert!(
                        err < 1e-6,
                        "truncated spectrum off by {err} at ({t0}, {t1}), f={f}"
                    );
                }
            }
        }
    }

    #[test]
    fn recurrence_identity_and_impulse_agree() {
        let x = vec![0.3, -1.0, 2.5, 0.0, 0.7];
        assert_eq!(apply_iir_recurrent(1.0, 0.0, 0.0, 0.0, 0.0, &x), x);

        let mut impulse = vec![0.0; 16];
        impulse[0] = 1.0;
        let via_filter = apply_iir_recurrent(1.0, 0.0, 0.0, 0.7, 0.4, &impulse);
        let direct = impulse_response(0.7, 0.4, 16);
        for (a, b) in via_filter.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-15, "filtered impulse must equal impulse_response");
        }
    }

    #[test]
    fn recurrence_matches_truncated_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let t0 = rng.gen_range(0.01..0.99);
            let t1 = rng.gen_range(0.01..0.99);
            let x: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = apply_iir_recurrent(1.0, 0.0, 0.0, t0, t1, &x);
            let h = impulse_response(t0, t1, 64);
            for t in 0..x.len() {
                let conv: f64 = (0..=t).map(|k| h[k] * x[t - k]).sum();
                assert!(
                    (y[t] - conv).abs() < 1e-8,
                    "recurrence and convolution disagree at t={t} for ({t0}, {t1})"
                );
            }
        }
    }

    #[test]
    fn ssm_reduction_matches_hand_values() {
        let (b0, b1, a1) = ssm_to_iir(SsmScalars { a: 0.9, b: 1.0, c: 1.0, d: 0.0 });
        assert_eq!((b0, b1, a1), (1.0, 0.0, -0.9));
        let (b0, b1, a1) = ssm_to_iir(SsmScalars { a: 0.0, b: 1.0, c: 1.0, d: 1.0 });
        assert_eq!((b0, b1, a1), (2.0, 0.0, 0.0), "memoryless case is a pure gain");
    }

    #[test]
    fn ssm_reduction_matches_step_simulation() {
        let simulate = |p: SsmScalars, x: &[f64]| -> Vec<f64> {
            let mut s = 0.0;
            x.iter()
                .map(|&xt| {
                    s = p.a * s + p.b * xt;
                    p.c * s + p.d * xt
                })
                .collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for trial in 0..1000 {
            let p = SsmScalars {
                a: rng.gen_range(-0.99..0.99),
                b: rng.gen_range(-2.0..2.0),
                c: rng.gen_range(-2.0..2.0),
                d: rng.gen_range(-2.0..2.0),
            };
            let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let want = simulate(p, &x);
            let (b0, b1, a1) = ssm_to_iir(p);
            let got = apply_iir_recurrent(b0, b1, 0.0, a1, 0.0, &x);
            let worst = want
                .iter()
                .zip(&got)
                .map(|(w, g)| (w - g).abs())
                .fold(0.0, f64::max);
            assert!(
                worst < 1e-10,
                "trial {trial}: reduction diverges from the state recurrence by {worst} for {p:?}"
            );
        }
    }

    #[test]
    fn impulse_params_classifies_filters() {
        let p = impulse_params(0.2, 0.5);
        assert!(p.underdamped && p.discriminant < 0.0);
        assert!((p.max_pole_modulus - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(p.oscillation_freq > 0.0 && p.oscillation_freq < 0.5);

        let p = impulse_params(0.9, 0.1);
        assert!(!p.underdamped);
        assert!(
            (p.oscillation_freq - 0.5).abs() < 1e-15,
            "negative real dominant pole alternates sign every step"
        );
    }

    #[test]
    fn csv_tables_are_well_formed() {
        let filters = vec![(0.0, 0.0), (0.5, 0.25)];
        let names = vec!["flat".to_string(), "peaked".to_string()];

        let freq = freq_magnitude_csv(&filters, &names, 8);
        let lines: Vec<&str> = freq.trim_end().lines().collect();
        assert_eq!(lines[0], "f,flat,peaked");
        assert_eq!(lines.len(), 9, "header plus one row per frequency");
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(first[0], "0");
        assert!((first[1].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
        assert!((first[2].parse::<f64>().unwrap() - 1.0 / 1.75).abs() < 1e-12);

        let imp = impulse_csv(&filters, &names, 4);
        let lines: Vec<&str> = imp.trim_end().lines().collect();
        assert_eq!(lines[0], "t,flat,peaked");
        assert_eq!(lines.len(), 5);
        let row0: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(row0[1].parse::<f64>().unwrap(), 1.0);
    }
}
