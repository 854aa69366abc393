//! Exogenous control laws for the followers: the asymmetric and symmetric
//! bilateral laws, the unidirectional law driving the virtual tail truck,
//! and the one-sided law for a last truck without a follower.

use crate::model::{ControlGains, TimeGapPolicy};

/// What a follower sees of itself and its neighbours, all sampled one
/// powertrain delay in the past.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborObservation {
    /// Gap to the leading truck's rear bumper (m).
    pub lead_gap: f64,
    /// Gap to the following truck; `None` when there is no follower.
    pub follow_gap: Option<f64>,
    pub lead_speed: f64,
    pub own_speed: f64,
    pub follow_speed: Option<f64>,
}

impl NeighborObservation {
    pub fn bilateral(lead_gap: f64, follow_gap: f64, lead_speed: f64, own_speed: f64, follow_speed: f64) -> Self {
        Self {
            lead_gap,
            follow_gap: Some(follow_gap),
            lead_speed,
            own_speed,
            follow_speed: Some(follow_speed),
        }
    }

    pub fn one_sided(lead_gap: f64, lead_speed: f64, own_speed: f64) -> Self {
        Self {
            lead_gap,
            follow_gap: None,
            lead_speed,
            own_speed,
            follow_speed: None,
        }
    }
}

#[inline]
fn bilateral_law(
    kd1: f64,
    kd2: f64,
    kv: f64,
    kc: f64,
    lead_gap: f64,
    follow_gap: f64,
    lead_speed: f64,
    own_speed: f64,
    follow_speed: f64,
    policy: &TimeGapPolicy,
) -> f64 {
    let v = own_speed;
    kd1 * (lead_gap - follow_gap)
        + kd2 * (lead_gap - policy.desired_gap(v))
        + kv * ((lead_speed - v) - (v - follow_speed))
        + kc * (policy.desired_speed - v)
}

fn unpack(obs: &NeighborObservation) -> (f64, f64) {
    match (obs.follow_gap, obs.follow_speed) {
        (Some(g), Some(v)) => (g, v),
        _ => panic!("bilateral control needs both follower gap and speed"),
    }
}

/// Asymmetric bilateral law: the leading gap is weighted by `k_d1 + k_d2`,
/// the following gap by `k_d1` alone.
///
/// # Panics
/// If the observation has no follower.
pub fn asymmetric_lbcm(obs: &NeighborObservation, gains: &ControlGains, policy: &TimeGapPolicy) -> f64 {
    let (dg, vf) = unpack(obs);
    bilateral_law(
        gains.kd1, gains.kd2, gains.kv, gains.kc, obs.lead_gap, dg, obs.lead_speed, obs.own_speed, vf, policy,
    )
}

/// Symmetric bilateral law, i.e. the asymmetric law with `k_d2 = 0`.
///
/// # Panics
/// If the observation has no follower.
pub fn symmetric_lbcm(obs: &NeighborObservation, gains: &ControlGains, policy: &TimeGapPolicy) -> f64 {
    let (dg, vf) = unpack(obs);
    bilateral_law(
        gains.kd1, 0.0, gains.kv, gains.kc, obs.lead_gap, dg, obs.lead_speed, obs.own_speed, vf, policy,
    )
}

/// Unidirectional law of the virtual truck trailing the platoon.
pub fn virtual_follower_control(
    lead_gap: f64,
    lead_speed: f64,
    own_speed: f64,
    gains: &ControlGains,
    policy: &TimeGapPolicy,
) -> f64 {
    gains.kd1 * (lead_gap - policy.desired_gap(own_speed))
        + gains.kv * (lead_speed - own_speed)
        + gains.kc * (policy.desired_speed - own_speed)
}

/// Law for a last truck that ignores the (absent) follower: gap and
/// relative-speed terms only.
pub fn one_sided_last_truck(obs: &NeighborObservation, gains: &ControlGains, policy: &TimeGapPolicy) -> f64 {
    gains.kd1 * (obs.lead_gap - policy.desired_gap(obs.own_speed))
        + gains.kv * (obs.lead_speed - obs.own_speed)
}

/// Dispatches on the model kind and on whether a follower is observed.
pub fn follower_control(obs: &NeighborObservation, gains: &ControlGains, policy: &TimeGapPolicy) -> f64 {
    if obs.follow_gap.is_none() {
        return one_sided_last_truck(obs, gains, policy);
    }
    match gains.model_kind {
        crate::model::ModelKind::Asymmetric => asymmetric_lbcm(obs, gains, policy),
        crate::model::ModelKind::Symmetric => symmetric_lbcm(obs, gains, policy),
    }
}
