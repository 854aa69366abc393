//! Analytical stability checks: eigenvalues of the linearized single-truck
//! loop, and the frequency response of the gap error between the last two
//! trucks.

use nalgebra::Matrix3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::{ControlGains, PowertrainParams};

/// Jacobian of the linearized closed loop in (position, speed, acceleration)
/// coordinates. Companion form, so the trace is always zero.
pub fn local_jacobian(gains: &ControlGains, lag: f64, desired_time_gap: f64) -> Matrix3<f64> {
    let a31 = -(2.0 * gains.kd1 + gains.kd2) / lag;
    let a32 = -(gains.kd2 * desired_time_gap + 2.0 * gains.kv + gains.kc) / lag;
    Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, a31, a32, 0.0)
}

/// Real parts of the eigenvalues, ascending.
pub fn eigen_real_parts(jacobian: &Matrix3<f64>) -> [f64; 3] {
    let ev = jacobian.complex_eigenvalues();
    let mut re = [ev[0].re, ev[1].re, ev[2].re];
    re.sort_by(|a, b| a.total_cmp(b));
    re
}

/// Intermediates of the radical solution of `λ³ + 3·x1·λ + 2·x2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicRadicals {
    pub x1: f64,
    pub x2: f64,
    /// `cbrt(sqrt(x2² + x1³) − x2)`.
    pub w: f64,
}

impl CubicRadicals {
    pub fn new(gains: &ControlGains, lag: f64, desired_time_gap: f64) -> Self {
        let x1 = (gains.kc + 2.0 * gains.kv + gains.kd2 * desired_time_gap) / (3.0 * lag);
        let x2 = (2.0 * gains.kd1 + gains.kd2) / (2.0 * lag);
        Self::from_coefficients(x1, x2)
    }

    pub fn from_coefficients(x1: f64, x2: f64) -> Self {
        let root = (x2 * x2 + x1 * x1 * x1).sqrt();
        // Same quantity as root − x2, without the cancellation when x2 dominates.
        let radicand = if x2 > 0.0 { x1 * x1 * x1 / (root + x2) } else { root - x2 };
        Self { x1, x2, w: radicand.cbrt() }
    }

    /// The real root, `(w² − x1)/w`.
    pub fn real_root(&self) -> f64 {
        if self.w == 0.0 {
            // x1 = 0: λ³ = −2·x2.
            return -(2.0 * self.x2).cbrt();
        }
        (self.w * self.w - self.x1) / self.w
    }

    /// Shared real part of the complex pair, `(x1 − w²)/(2w)`.
    pub fn complex_real_part(&self) -> f64 {
        -0.5 * self.real_root()
    }

    /// The real-root expression exactly as printed, `(x1 − w²)/w`. It is the
    /// negative of the actual root and is kept for reporting only.
    pub fn printed_real_root(&self) -> f64 {
        -self.real_root()
    }

    /// Ascending real parts from the radical forms.
    pub fn real_parts(&self) -> [f64; 3] {
        let mut re = [self.real_root(), self.complex_real_part(), self.complex_real_part()];
        re.sort_by(|a, b| a.total_cmp(b));
        re
    }
}

/// Local stability verdict for one gain set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalStabilityReport {
    pub x1: f64,
    pub x2: f64,
    pub w: f64,
    /// Eigenvalue real parts from the eigen solver, ascending.
    pub real_parts: [f64; 3],
    /// The same from the radical forms.
    pub closed_form_real_parts: [f64; 3],
    pub printed_real_root: f64,
    /// `w > 0` and `x1 − w² < 0`.
    pub condition_i_holds: bool,
    /// `w < 0` and `x1 − w² > 0`.
    pub condition_ii_holds: bool,
    pub eigenvalue_sum: f64,
    pub max_real_part: f64,
    /// All gains zero: the loop is a pure triple integrator.
    pub degenerate: bool,
}

impl LocalStabilityReport {
    pub fn literal_conditions_hold(&self) -> bool {
        self.condition_i_holds || self.condition_ii_holds
    }

    pub fn asymptotically_stable(&self) -> bool {
        self.max_real_part < 0.0
    }
}

pub fn local_conditions(gains: &ControlGains, lag: f64, desired_time_gap: f64) -> LocalStabilityReport {
    let jac = local_jacobian(gains, lag, desired_time_gap);
    let real_parts = eigen_real_parts(&jac);
    let cubic = CubicRadicals::new(gains, lag, desired_time_gap);
    let gap = cubic.x1 - cubic.w * cubic.w;
    LocalStabilityReport {
        x1: cubic.x1,
        x2: cubic.x2,
        w: cubic.w,
        real_parts,
        closed_form_real_parts: cubic.real_parts(),
        printed_real_root: cubic.printed_real_root(),
        condition_i_holds: cubic.w > 0.0 && gap < 0.0,
        condition_ii_holds: cubic.w < 0.0 && gap > 0.0,
        eigenvalue_sum: real_parts.iter().sum(),
        max_real_part: real_parts[2],
        degenerate: gains.kd1 == 0.0 && gains.kd2 == 0.0 && gains.kv == 0.0 && gains.kc == 0.0,
    }
}

/// Parameters of the last-two-trucks gap error transfer function. The
/// distance gains are tied (`k_d1 = k_d2 = k_d`) and `k_c` does not appear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapErrorParams {
    pub kd: f64,
    pub kv: f64,
    pub lag: f64,
    pub delay: f64,
    pub desired_time_gap: f64,
}

impl GapErrorParams {
    /// Takes `k_d` from `k_d1`; unequal distance gains are outside the analysis.
    pub fn from_gains(gains: &ControlGains, powertrain: &PowertrainParams, desired_time_gap: f64) -> Self {
        Self {
            kd: gains.kd1,
            kv: gains.kv,
            lag: powertrain.lag,
            delay: powertrain.delay,
            desired_time_gap,
        }
    }

    fn b(&self) -> f64 {
        2.0 * self.kv + self.kd * self.desired_time_gap
    }
}

/// `G(jω)` evaluated directly as a complex quotient.
pub fn gap_error_response(p: &GapErrorParams, omega: f64) -> Complex64 {
    let s = Complex64::new(0.0, omega);
    let e = (-s * p.delay).exp();
    let num = (2.0 * p.kd + p.kv * s) * e;
    let den = p.lag * s * s * s + p.b() * s * e + 3.0 * p.kd * e;
    num / den
}

/// One frequency point of the gap error gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapErrorGain {
    pub omega: f64,
    /// `|G(jω)|` from the complex quotient.
    pub magnitude: f64,
    /// `sqrt(X/(X + Y))` from the expanded squares.
    pub magnitude_closed_form: f64,
    pub x: f64,
    pub y: f64,
}

/// Squared numerator and denominator magnitudes of `G(jω)`, expanded by hand:
///
/// |N|² = 4k_d² + k_v²ω²
/// |D|² = 9k_d² + b²ω² + T_e²ω⁶ + 6k_dT_eω³·sin(ωΔ) − 2bT_eω⁴·cos(ωΔ),  b = 2k_v + k_dT_g
pub fn gap_error_squares(p: &GapErrorParams, omega: f64) -> (f64, f64) {
    let (kd, kv, te, b) = (p.kd, p.kv, p.lag, p.b());
    let w2 = omega * omega;
    let (sin, cos) = (omega * p.delay).sin_cos();
    let num = 4.0 * kd * kd + kv * kv * w2;
    let den = 9.0 * kd * kd + b * b * w2 + te * te * w2 * w2 * w2 + 6.0 * kd * te * w2 * omega * sin
        - 2.0 * b * te * w2 * w2 * cos;
    (num, den)
}

pub fn gap_error_gain(p: &GapErrorParams, omega: f64) -> GapErrorGain {
    let (x, den) = gap_error_squares(p, omega);
    GapErrorGain {
        omega,
        magnitude: gap_error_response(p, omega).norm(),
        magnitude_closed_form: (x / den).sqrt(),
        x,
        y: den - x,
    }
}

/// Logarithmically spaced frequency grid (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self { min: 1e-3, max: 1e3, points: 2000 }
    }
}

impl FrequencyGrid {
    pub fn refined(&self, factor: usize) -> Self {
        Self { points: (self.points - 1) * factor + 1, ..*self }
    }

    pub fn omegas(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let (lo, hi) = (self.min.ln(), self.max.ln());
        let n = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| (lo + (hi - lo) * i as f64 / n).exp())
            .collect()
    }

    pub fn is_valid(&self) -> bool {
        self.min > 0.0 && self.max > self.min && self.points >= 2 && self.max.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StringStabilityReport {
    pub params: GapErrorParams,
    pub grid: FrequencyGrid,
    pub points: Vec<GapErrorGain>,
    pub sup_magnitude: f64,
    pub sup_omega: f64,
    /// `1 − sup`.
    pub margin: f64,
    pub stable: bool,
    pub min_y: f64,
    /// Magnitude at the lowest grid frequency.
    pub dc_magnitude: f64,
    /// Largest gap between the two magnitude routes over the grid.
    pub route_disagreement: f64,
}

pub fn string_stability_check(p: &GapErrorParams, grid: &FrequencyGrid) -> StringStabilityReport {
    let points: Vec<GapErrorGain> = grid.omegas().into_iter().map(|w| gap_error_gain(p, w)).collect();
    let mut sup = 0.0;
    let mut sup_omega = grid.min;
    let mut min_y = f64::INFINITY;
    let mut disagreement: f64 = 0.0;
    for g in &points {
        if g.magnitude > sup {
            sup = g.magnitude;
            sup_omega = g.omega;
        }
        min_y = min_y.min(g.y);
        disagreement = disagreement.max((g.magnitude - g.magnitude_closed_form).abs());
    }
    StringStabilityReport {
        params: *p,
        grid: *grid,
        dc_magnitude: points.first().map_or(f64::NAN, |g| g.magnitude),
        points,
        sup_magnitude: sup,
        sup_omega,
        margin: 1.0 - sup,
        stable: sup < 1.0,
        min_y,
        route_disagreement: disagreement,
    }
}
