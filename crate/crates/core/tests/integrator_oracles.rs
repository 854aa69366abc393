use std::ops::ControlFlow;

use platoon_core::integrator::{integrate, DelayEvaluation, DelaySystem, IntegrationSettings, PreHistory};

/// ẋ = −x(t − Δ), scalar.
struct DelayedDecay;

impl DelaySystem for DelayedDecay {
    fn dim(&self) -> usize {
        1
    }
    fn derivatives(&self, _t: f64, _state: &[f64], delayed: &[f64], out: &mut [f64]) {
        out[0] = -delayed[0];
    }
}

fn run(h: f64, delay: f64, mode: DelayEvaluation) -> f64 {
    let settings = IntegrationSettings {
        step: h,
        steps: (1.0 / h).round() as usize,
        delay_steps: (delay / h).round() as usize,
        pre_history: PreHistory::Constant,
        delay_evaluation: mode,
    };
    let (x, status) = integrate(&DelayedDecay, &[1.0], &settings, |_, _, _, _| ControlFlow::Continue(()));
    assert!(status.is_completed());
    x[0]
}

/// Method of steps with exact polynomial integration: on each interval of
/// length τ the solution is a polynomial in the local time.
fn method_of_steps(tau: f64, t_end: f64) -> f64 {
    let intervals = (t_end / tau).round() as usize;
    // Coefficients in local time s ∈ [0, τ]; history is v = 1.
    let mut prev = vec![1.0];
    let mut start = 1.0;
    for _ in 0..intervals {
        // v(s) = start − ∫₀ˢ prev(u) du
        let mut next = vec![start];
        for (k, c) in prev.iter().enumerate() {
            next.push(-c / (k + 1) as f64);
        }
        start = next.iter().enumerate().map(|(k, c)| c * tau.powi(k as i32)).sum();
        prev = next;
    }
    start
}

fn euler(h: f64, delay: f64) -> f64 {
    let n = (1.0 / h).round() as usize;
    let d = (delay / h).round() as usize;
    let mut v = vec![1.0; n + 1];
    for k in 0..n {
        let lagged = if k >= d { v[k - d] } else { 1.0 };
        v[k + 1] = v[k] - h * lagged;
    }
    v[n]
}

#[test]
fn exact_delay_solution_oracle() {
    let exact = method_of_steps(0.1, 1.0);
    assert!((exact - 0.32904421126867855).abs() < 1e-14, "{exact}");
}

#[test]
fn frozen_scheme_matches_fine_euler() {
    let x = run(1e-5, 0.1, DelayEvaluation::Frozen);
    let oracle = euler(1e-5, 0.1);
    assert!((x - oracle).abs() < 1e-6, "rk4 {x} euler {oracle}");
}

// Linear interpolation of the history makes the scheme second order in h.
#[test]
fn interpolated_scheme_converges_at_second_order() {
    let exact = method_of_steps(0.1, 1.0);
    let e1 = (run(1e-3, 0.1, DelayEvaluation::Interpolated) - exact).abs();
    let e2 = (run(5e-4, 0.1, DelayEvaluation::Interpolated) - exact).abs();
    assert!(e1 < 1e-6, "error {e1}");
    let ratio = e1 / e2;
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio} ({e1} vs {e2})");
}

#[test]
fn zero_delay_matches_plain_rk4() {
    let h = 1e-3;
    let via_dde = run(h, 0.0, DelayEvaluation::Frozen);
    let mut x: f64 = 1.0;
    for _ in 0..1000 {
        let k1 = -x;
        let k2 = -(x + 0.5 * h * k1);
        let k3 = -(x + 0.5 * h * k2);
        let k4 = -(x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    assert!((via_dde - x).abs() < 1e-12);
}
