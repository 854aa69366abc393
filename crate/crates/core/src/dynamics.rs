//! Third-order longitudinal truck plant, resistive forces, input
//! linearization and actuator limits.

use serde::{Deserialize, Serialize};

use crate::model::{PowertrainParams, TimeGapPolicy, TruckParams, TruckState};

/// Gravity-scaled constant of the rolling resistance term.
pub const ROLLING_SCALE: f64 = 9.8066e-3;

/// 0.21 g braking limit (m/s²), stored as a magnitude.
pub const MAX_DECELERATION: f64 = 2.06;

/// Speed bands (m/s, lower edges) and their acceleration caps (m/s²) for a
/// 200 lb/hp truck.
const ACCEL_BANDS: [(f64, f64); 6] = [
    (0.0, 0.55),
    (4.4, 0.49),
    (8.9, 0.40),
    (13.3, 0.24),
    (17.8, 0.15),
    (22.2, 0.12),
];

/// C_h = 1 − 8.5e-5·H.
pub fn altitude_coefficient(altitude: f64) -> f64 {
    1.0 - 8.5e-5 * altitude
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResistanceBreakdown {
    /// Aerodynamic drag (N).
    pub aero: f64,
    /// Rolling resistance (N).
    pub rolling: f64,
    /// Total (N).
    pub total: f64,
}

/// Mass-normalized resistance coefficients so that R/M = C1·v² + C2·v + C3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizedCoeffs {
    /// 1/m.
    pub c1: f64,
    /// 1/s.
    pub c2: f64,
    /// m/s².
    pub c3: f64,
}

impl LinearizedCoeffs {
    pub fn from_params(p: &TruckParams) -> Self {
        let ch = altitude_coefficient(p.altitude);
        Self {
            c1: p.air_const * p.drag_coeff * ch * p.frontal_area / p.mass,
            c2: ROLLING_SCALE * p.rolling_coeff * p.rolling_c2,
            c3: ROLLING_SCALE * p.rolling_coeff * p.rolling_c3,
        }
    }

    /// Resistive deceleration R/M at speed `v`.
    #[inline]
    pub fn specific_resistance(&self, v: f64) -> f64 {
        (self.c1 * v + self.c2) * v + self.c3
    }

    /// d(R/M)/dv.
    #[inline]
    pub fn specific_resistance_slope(&self, v: f64) -> f64 {
        2.0 * self.c1 * v + self.c2
    }
}

/// Resistive forces evaluated from the physical parameters directly.
pub fn resistance(params: &TruckParams, v: f64) -> ResistanceBreakdown {
    let ch = altitude_coefficient(params.altitude);
    let aero = params.air_const * params.drag_coeff * ch * params.frontal_area * v * v;
    let rolling =
        ROLLING_SCALE * params.rolling_coeff * (params.rolling_c2 * v + params.rolling_c3) * params.mass;
    ResistanceBreakdown {
        aero,
        rolling,
        total: aero + rolling,
    }
}

/// Same forces through the mass-normalized coefficients.
pub fn resistance_from_coeffs(coeffs: &LinearizedCoeffs, mass: f64, v: f64) -> ResistanceBreakdown {
    let aero = mass * coeffs.c1 * v * v;
    let rolling = mass * coeffs.c2 * v + mass * coeffs.c3;
    ResistanceBreakdown {
        aero,
        rolling,
        total: (coeffs.c1 * v * v + coeffs.c2 * v + coeffs.c3) * mass,
    }
}

/// Time derivatives (ṗ, v̇, ȧ) of the nonlinear plant given the actuator
/// input that arrives now (the command issued one delay ago).
#[inline]
pub fn plant_derivatives(
    state: &TruckState,
    input: f64,
    coeffs: &LinearizedCoeffs,
    powertrain: &PowertrainParams,
) -> (f64, f64, f64) {
    let v = state.speed;
    let dv = state.acceleration - coeffs.specific_resistance(v);
    let da = (input - state.acceleration) / powertrain.lag;
    (v, dv, da)
}

/// The drift term f(v, v̇) of the speed dynamics v̈ = f + g·u.
#[inline]
pub fn drift(v: f64, vdot: f64, coeffs: &LinearizedCoeffs, lag: f64) -> f64 {
    -(vdot + coeffs.specific_resistance(v)) / lag - coeffs.specific_resistance_slope(v) * vdot
}

/// Input gain g(v) = 1/T_e.
#[inline]
pub fn input_gain(lag: f64) -> f64 {
    1.0 / lag
}

/// Plant input u = −f/g + u_c. Cancels the whole drift, so the closed loop
/// becomes v̈ = u_c/T_e.
#[inline]
pub fn feedback_linearize(
    state: &TruckState,
    vdot: f64,
    exogenous: f64,
    coeffs: &LinearizedCoeffs,
    powertrain: &PowertrainParams,
) -> f64 {
    let lag = powertrain.lag;
    -drift(state.speed, vdot, coeffs, lag) / input_gain(lag) + exogenous
}

/// Plant input that cancels only the resistive part of the drift, leaving
/// the first-order lag in place: T_e·v̈ + v̇ = u_c.
#[inline]
pub fn resistance_compensate(
    state: &TruckState,
    vdot: f64,
    exogenous: f64,
    coeffs: &LinearizedCoeffs,
    powertrain: &PowertrainParams,
) -> f64 {
    exogenous
        + coeffs.specific_resistance(state.speed)
        + powertrain.lag * coeffs.specific_resistance_slope(state.speed) * vdot
}

/// Which cancellation law sits between the controller and the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedLoopForm {
    /// Resistance cancelled, actuator lag kept: `T_e·v̈ + v̇ = u_c(t − Δ)`.
    /// The controller output acts as a commanded acceleration.
    #[default]
    Lag,
    /// Full drift cancellation: `v̈ = u_c(t − Δ)/T_e`.
    Jerk,
}

impl ClosedLoopForm {
    #[inline]
    pub fn plant_input(
        self,
        state: &TruckState,
        exogenous: f64,
        coeffs: &LinearizedCoeffs,
        powertrain: &PowertrainParams,
    ) -> f64 {
        let vdot = state.acceleration - coeffs.specific_resistance(state.speed);
        match self {
            ClosedLoopForm::Lag => resistance_compensate(state, vdot, exogenous, coeffs, powertrain),
            ClosedLoopForm::Jerk => feedback_linearize(state, vdot, exogenous, coeffs, powertrain),
        }
    }

    /// v̈ of the ideal linear closed loop for the given speed derivative.
    #[inline]
    pub fn linear_jerk(self, vdot: f64, exogenous: f64, lag: f64) -> f64 {
        match self {
            ClosedLoopForm::Lag => (exogenous - vdot) / lag,
            ClosedLoopForm::Jerk => exogenous / lag,
        }
    }
}

/// Speed-dependent acceleration cap. Band edges belong to the faster band.
pub fn max_acceleration(v: f64) -> f64 {
    ACCEL_BANDS
        .iter()
        .rev()
        .find(|(lower, _)| v >= *lower)
        .map_or(ACCEL_BANDS[0].1, |(_, cap)| *cap)
}

/// Limits a vehicle acceleration to what the truck can physically deliver.
pub fn clamp_acceleration(a: f64, v: f64, policy: &TimeGapPolicy) -> f64 {
    let mut out = a.clamp(-MAX_DECELERATION, max_acceleration(v));
    if v >= policy.max_speed {
        out = out.min(0.0);
    }
    if v <= 0.0 {
        out = out.max(0.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn policy() -> TimeGapPolicy {
        TimeGapPolicy::reference(0.8)
    }

    #[test]
    fn altitude() {
        assert_relative_eq!(altitude_coefficient(50.0), 0.99575, epsilon = 1e-15);
        assert_eq!(altitude_coefficient(0.0), 1.0);
        assert_relative_eq!(altitude_coefficient(1000.0), 0.915, epsilon = 1e-15);
    }

    #[test]
    fn resistance_reference_values() {
        let p = TruckParams::default();
        let r0 = resistance(&p, 0.0);
        assert_eq!(r0.aero, 0.0);
        // 9.8066e-3 * 1.5 * 4.575 * 40000
        assert_relative_eq!(r0.rolling, 2691.9117, max_relative = 1e-12);
        let r = resistance(&p, 31.44);
        // 0.047285 * 0.70 * 0.99575 * 10 * 31.44^2
        assert_relative_eq!(r.aero, 325.789305000264, max_relative = 1e-12);
        assert_relative_eq!(r.total, r.aero + r.rolling);
    }

    #[test]
    fn rolling_vanishes_with_mass() {
        let mut p = TruckParams::default();
        let c = LinearizedCoeffs::from_params(&p);
        p.mass = 1e-9;
        assert!(resistance_from_coeffs(&c, p.mass, 20.0).rolling < 1e-9);
    }

    #[test]
    fn standstill_deceleration() {
        let p = TruckParams::default();
        let c = LinearizedCoeffs::from_params(&p);
        let (dp, dv, da) =
            plant_derivatives(&TruckState::default(), 0.0, &c, &PowertrainParams::new(0.1, 0.1));
        assert_eq!(dp, 0.0);
        assert_eq!(da, 0.0);
        assert_relative_eq!(dv, -0.0672977925, max_relative = 1e-12);
    }

    #[test]
    fn actuator_equilibrium() {
        let c = LinearizedCoeffs::from_params(&TruckParams::default());
        let s = TruckState::new(10.0, 25.0, 0.3);
        let (dp, _, da) = plant_derivatives(&s, 0.3, &c, &PowertrainParams::new(0.2, 0.1));
        assert_eq!(da, 0.0);
        assert_eq!(dp, 25.0);
    }

    #[test]
    fn linearization_at_rest_returns_rolling_term() {
        let c = LinearizedCoeffs::from_params(&TruckParams::default());
        let pt = PowertrainParams::new(0.1, 0.1);
        let u = feedback_linearize(&TruckState::default(), 0.0, 0.0, &c, &pt);
        assert_relative_eq!(u, c.c3, max_relative = 1e-14);
    }

    #[test]
    fn acceleration_bands() {
        assert_eq!(max_acceleration(31.44), 0.12);
        assert_eq!(max_acceleration(0.0), 0.55);
        assert_eq!(max_acceleration(4.39), 0.55);
        assert_eq!(max_acceleration(4.4), 0.49);
        assert_eq!(max_acceleration(13.3), 0.24);
        assert_eq!(max_acceleration(22.2), 0.12);
        assert_eq!(max_acceleration(20.0), 0.15);
    }

    #[test]
    fn clamp_examples() {
        let p = policy();
        assert_eq!(clamp_acceleration(-5.0, 10.0, &p), -MAX_DECELERATION);
        assert_eq!(clamp_acceleration(0.3, 31.44, &p), 0.12);
        assert_eq!(clamp_acceleration(0.1, p.max_speed, &p), 0.0);
        assert_eq!(clamp_acceleration(-1.0, 0.0, &p), 0.0);
    }

    fn closed_loop_jerk(form: ClosedLoopForm, s: TruckState, uc: f64, c: &LinearizedCoeffs, pt: &PowertrainParams) -> f64 {
        // v̈ = ȧ − ρ'(v)·v̇ with the plant input from `form`
        let u = form.plant_input(&s, uc, c, pt);
        let (_, vdot, adot) = plant_derivatives(&s, u, c, pt);
        adot - c.specific_resistance_slope(s.speed) * vdot
    }

    proptest! {
        #[test]
        fn resistance_routes_agree(v in 0.0f64..40.0) {
            let p = TruckParams::default();
            let c = LinearizedCoeffs::from_params(&p);
            let direct = resistance(&p, v);
            let viac = resistance_from_coeffs(&c, p.mass, v);
            prop_assert!((direct.total - viac.total).abs() <= 1e-12 * direct.total.abs());
            prop_assert!((direct.aero - viac.aero).abs() <= 1e-12 * direct.aero.abs().max(1e-300));
            prop_assert!(direct.aero >= 0.0 && direct.rolling > 0.0);
        }

        #[test]
        fn clamp_is_idempotent_and_bounded(a in -10.0f64..10.0, v in 0.0f64..40.0) {
            let p = policy();
            let once = clamp_acceleration(a, v, &p);
            prop_assert_eq!(clamp_acceleration(once, v, &p), once);
            prop_assert!(once >= -MAX_DECELERATION && once <= max_acceleration(v));
            if v >= p.max_speed { prop_assert!(once <= 0.0); }
        }

        #[test]
        fn cancellation_laws_are_exact(
            v in 0.0f64..40.0, a in -2.0f64..2.0, uc in -3.0f64..3.0, lag in 0.05f64..0.5,
            mass in 10_000.0f64..60_000.0,
        ) {
            let p = TruckParams { mass, ..TruckParams::default() };
            let c = LinearizedCoeffs::from_params(&p);
            let pt = PowertrainParams::new(lag, 0.1);
            let s = TruckState::new(0.0, v, a);
            let vdot = a - c.specific_resistance(v);
            let jerk = closed_loop_jerk(ClosedLoopForm::Jerk, s, uc, &c, &pt);
            prop_assert!((jerk - uc / lag).abs() < 1e-9 * (1.0 + (uc / lag).abs()));
            let lagged = closed_loop_jerk(ClosedLoopForm::Lag, s, uc, &c, &pt);
            prop_assert!((lagged - (uc - vdot) / lag).abs() < 1e-9 * (1.0 + lagged.abs()));
        }
    }
}
