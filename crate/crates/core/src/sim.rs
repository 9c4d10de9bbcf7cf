//! Longitudinal vehicle kinematics.
//!
//! Positions refer to the front bumper; a vehicle occupies `[x - length, x]`.
//! Chains are stored front-to-rear, so vehicle `i + 1` follows vehicle `i`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    Light,
    Heavy,
}

/// Physical envelope of a vehicle. Decelerations are positive magnitudes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub class: VehicleClass,
    pub length: f64,
    pub max_decel: f64,
    pub max_accel: f64,
}

impl VehicleSpec {
    pub const fn light() -> Self {
        Self {
            class: VehicleClass::Light,
            length: 2.0,
            max_decel: 7.5,
            max_accel: 3.0,
        }
    }

    pub const fn heavy() -> Self {
        Self {
            class: VehicleClass::Heavy,
            length: 15.0,
            max_decel: 6.0,
            max_accel: 1.5,
        }
    }

    pub const fn of(class: VehicleClass) -> Self {
        match class {
            VehicleClass::Light => Self::light(),
            VehicleClass::Heavy => Self::heavy(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.length.is_finite()
            && self.length > 0.0
            && self.max_decel.is_finite()
            && self.max_decel > 0.0
            && self.max_accel.is_finite()
            && self.max_accel >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid vehicle spec {self:?}")))
        }
    }

    /// Clips a commanded acceleration into `[-max_decel, max_accel]`.
    pub fn clip(&self, a_cmd: f64) -> f64 {
        a_cmd.clamp(-self.max_decel, self.max_accel)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Front-bumper position (m).
    pub x: f64,
    /// Speed (m/s), never negative.
    pub v: f64,
    /// Acceleration applied over the last step (m/s²).
    pub a: f64,
}

impl VehicleState {
    pub fn new(x: f64, v: f64) -> Self {
        Self { x, v, a: 0.0 }
    }
}

/// Advances one vehicle by `dt` under a constant (clipped) acceleration command.
///
/// Integration is exact for constant acceleration. A vehicle that would reverse
/// stops inside the step after covering `v² / (2|a|)`. At standstill the recorded
/// acceleration is zero.
pub fn step_kinematics(
    state: VehicleState,
    spec: &VehicleSpec,
    a_cmd: f64,
    dt: f64,
) -> Result<VehicleState> {
    if !state.x.is_finite() {
        return Err(Error::NonFinite("x"));
    }
    if !state.v.is_finite() {
        return Err(Error::NonFinite("v"));
    }
    if !a_cmd.is_finite() {
        return Err(Error::NonFinite("a_cmd"));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidTimeStep(dt));
    }
    let v0 = state.v.max(0.0);
    let a = spec.clip(a_cmd);
    let v1 = v0 + a * dt;
    if v1 <= 0.0 && a < 0.0 {
        return Ok(VehicleState {
            x: state.x + v0 * v0 / (2.0 * -a),
            v: 0.0,
            a: 0.0,
        });
    }
    Ok(VehicleState {
        x: state.x + v0 * dt + 0.5 * a * dt * dt,
        v: v1,
        a,
    })
}

/// Time to collision between a rear and a front vehicle separated by `gap`.
///
/// Infinite when the rear vehicle is not closing in.
pub fn ttc(gap: f64, v_rear: f64, v_front: f64) -> Result<f64> {
    if !gap.is_finite() {
        return Err(Error::NonFinite("gap"));
    }
    if gap < 0.0 {
        return Err(Error::NegativeGap(gap));
    }
    let closing = v_rear - v_front;
    if closing > 0.0 {
        Ok(gap / closing)
    } else {
        Ok(f64::INFINITY)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub spec: VehicleSpec,
    pub state: VehicleState,
}

impl Vehicle {
    pub fn new(spec: VehicleSpec, x: f64, v: f64) -> Self {
        Self {
            spec,
            state: VehicleState::new(x, v),
        }
    }

    pub fn rear(&self) -> f64 {
        self.state.x - self.spec.length
    }
}

/// A single-lane column of vehicles, ordered front to rear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    vehicles: Vec<Vehicle>,
    dt: f64,
}

impl Chain {
    /// Builds a chain; positions must strictly decrease front to rear.
    pub fn new(vehicles: Vec<Vehicle>, dt: f64) -> Result<Self> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::InvalidTimeStep(dt));
        }
        if vehicles.is_empty() {
            return Err(Error::InvalidConfig("empty chain".into()));
        }
        for veh in &vehicles {
            veh.spec.validate()?;
            if !veh.state.x.is_finite() || !veh.state.v.is_finite() || veh.state.v < 0.0 {
                return Err(Error::InvalidConfig(format!("invalid vehicle state {:?}", veh.state)));
            }
        }
        if vehicles.windows(2).any(|w| w[0].state.x <= w[1].state.x) {
            return Err(Error::InvalidConfig(
                "vehicle positions must strictly decrease front to rear".into(),
            ));
        }
        Ok(Self { vehicles, dt })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn vehicle(&self, i: usize) -> &Vehicle {
        &self.vehicles[i]
    }

    /// Bumper-to-bumper distance between vehicle `i` and the one behind it.
    /// Negative values mean the two overlap.
    pub fn gap(&self, i: usize) -> Result<f64> {
        if i + 1 >= self.vehicles.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.vehicles.len(),
            });
        }
        Ok(self.vehicles[i].rear() - self.vehicles[i + 1].state.x)
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.vehicles
            .windows(2)
            .map(|w| w[0].rear() - w[1].state.x)
            .collect()
    }

    /// Pairs `(i, i + 1)` whose gap is zero or negative.
    pub fn detect_collision(&self) -> Vec<(usize, usize)> {
        self.gaps()
            .into_iter()
            .enumerate()
            .filter(|&(_, g)| g <= 0.0)
            .map(|(i, _)| (i, i + 1))
            .collect()
    }

    /// Applies one acceleration command per vehicle and advances all of them by `dt`.
    pub fn advance(&mut self, commands: &[f64]) -> Result<()> {
        if commands.len() != self.vehicles.len() {
            return Err(Error::Dimension {
                expected: self.vehicles.len(),
                got: commands.len(),
            });
        }
        let dt = self.dt;
        for (veh, &a_cmd) in self.vehicles.iter_mut().zip(commands) {
            veh.state = step_kinematics(veh.state, &veh.spec, a_cmd, dt)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain_of(xs: &[f64]) -> Chain {
        let v = xs
            .iter()
            .map(|&x| Vehicle::new(VehicleSpec::light(), x, 25.0))
            .collect();
        Chain::new(v, 0.01).unwrap()
    }

    /// Explicit sub-stepping with a hard floor at zero speed.
    fn substep_oracle(mut x: f64, mut v: f64, a: f64, dt: f64, n: usize) -> (f64, f64) {
        let h = dt / n as f64;
        for _ in 0..n {
            let v_next = (v + a * h).max(0.0);
            x += 0.5 * (v + v_next) * h;
            v = v_next;
        }
        (x, v)
    }

    #[test]
    fn constant_decel_step() {
        let s = step_kinematics(VehicleState::new(0.0, 25.0), &VehicleSpec::light(), -3.0, 0.01)
            .unwrap();
        assert_close!(s.x, 0.24985, 1e-12);
        assert_close!(s.v, 24.97, 1e-12);
        assert_eq!(s.a, -3.0);
    }

    #[test]
    fn stop_inside_step() {
        let s = step_kinematics(VehicleState::new(100.0, 0.05), &VehicleSpec::light(), -7.5, 0.01)
            .unwrap();
        assert_eq!(s.v, 0.0);
        assert_close!(s.x, 100.000_166_666_7, 1e-9);
        let (xo, vo) = substep_oracle(100.0, 0.05, -7.5, 0.01, 100_000);
        assert_close!(s.x, xo, 1e-9);
        assert_eq!(vo, 0.0);
    }

    #[test]
    fn zero_accel_step() {
        let s = step_kinematics(VehicleState::new(10.0, 25.0), &VehicleSpec::light(), 0.0, 0.01)
            .unwrap();
        assert_close!(s.x, 10.25, 1e-12);
        assert_eq!(s.v, 25.0);
    }

    #[test]
    fn command_is_clipped() {
        let s = step_kinematics(VehicleState::new(0.0, 25.0), &VehicleSpec::heavy(), -20.0, 0.01)
            .unwrap();
        assert_eq!(s.a, -6.0);
        let s = step_kinematics(VehicleState::new(0.0, 25.0), &VehicleSpec::light(), 9.0, 0.01)
            .unwrap();
        assert_eq!(s.a, 3.0);
    }

    #[test]
    fn non_finite_rejected() {
        let spec = VehicleSpec::light();
        assert!(step_kinematics(VehicleState::new(f64::NAN, 1.0), &spec, 0.0, 0.01).is_err());
        assert!(step_kinematics(VehicleState::new(0.0, 1.0), &spec, f64::INFINITY, 0.01).is_err());
        assert!(matches!(
            step_kinematics(VehicleState::new(0.0, 1.0), &spec, 0.0, 0.0),
            Err(Error::InvalidTimeStep(_))
        ));
    }

    #[test]
    fn gap_examples() {
        let c = chain_of(&[36.0, 18.0, 0.0]);
        assert_eq!(c.gap(0).unwrap(), 16.0);
        assert_eq!(c.gap(1).unwrap(), 16.0);
        assert!(matches!(c.gap(2), Err(Error::IndexOutOfRange { index: 2, len: 3 })));
        let c = chain_of(&[20.0, 18.0]);
        assert_eq!(c.gap(0).unwrap(), 0.0);
    }

    #[test]
    fn collision_examples() {
        assert!(chain_of(&[36.0, 18.0, 0.0]).detect_collision().is_empty());
        assert_eq!(chain_of(&[20.0, 18.0, 11.0]).detect_collision(), vec![(0, 1)]);
        assert_eq!(
            chain_of(&[20.0, 18.3, 16.4]).detect_collision(),
            vec![(0, 1), (1, 2)]
        );
    }

    #[test]
    fn ttc_examples() {
        assert_eq!(ttc(16.0, 25.0, 25.0).unwrap(), f64::INFINITY);
        assert_close!(ttc(16.0, 25.0, 17.0).unwrap(), 2.0, 1e-12);
        assert_close!(ttc(10.5, 25.0, 17.5).unwrap(), 1.4, 1e-12);
        assert!(matches!(ttc(-0.1, 25.0, 17.0), Err(Error::NegativeGap(_))));
    }

    #[test]
    fn chain_rejects_unordered_positions() {
        let v = vec![
            Vehicle::new(VehicleSpec::light(), 0.0, 25.0),
            Vehicle::new(VehicleSpec::light(), 10.0, 25.0),
        ];
        assert!(Chain::new(v, 0.01).is_err());
    }

    #[test]
    fn piecewise_constant_commands_are_grid_independent() {
        // Exact integration: commands constant over 0.1 s windows give the same
        // trajectory on a 0.01 s and a 0.005 s grid.
        let spec = VehicleSpec::light();
        let cmds = [0.0, -3.0, -7.5, 1.0, 2.5, -1.0];
        let run = |dt: f64| {
            let per = (0.1 / dt).round() as usize;
            let mut s = VehicleState::new(0.0, 12.0);
            for &c in &cmds {
                for _ in 0..per {
                    s = step_kinematics(s, &spec, c, dt).unwrap();
                }
            }
            s
        };
        let a = run(0.01);
        let b = run(0.005);
        assert_close!(a.x, b.x, 1e-9);
        assert_close!(a.v, b.v, 1e-9);
    }

    proptest! {
        #[test]
        fn integration_matches_closed_form(
            v0 in 5.0f64..40.0,
            a in -3.0f64..3.0,
            n in 1usize..400,
        ) {
            let dt = 0.01;
            let t = n as f64 * dt;
            prop_assume!(v0 + a * t > 0.0);
            let spec = VehicleSpec::light();
            let mut s = VehicleState::new(0.0, v0);
            for _ in 0..n {
                s = step_kinematics(s, &spec, a, dt).unwrap();
            }
            let x = v0 * t + 0.5 * a * t * t;
            let v = v0 + a * t;
            prop_assert!((s.x - x).abs() <= 1e-9 * x.abs().max(1.0));
            prop_assert!((s.v - v).abs() <= 1e-9 * v.abs().max(1.0));
        }

        #[test]
        fn never_reverses(v0 in 0.0f64..40.0, cmds in prop::collection::vec(-10.0f64..5.0, 1..200)) {
            let spec = VehicleSpec::light();
            let mut s = VehicleState::new(0.0, v0);
            for c in cmds {
                let next = step_kinematics(s, &spec, c, 0.01).unwrap();
                prop_assert!(next.v >= 0.0);
                prop_assert!(next.x >= s.x);
                prop_assert!(next.a >= -spec.max_decel && next.a <= spec.max_accel);
                s = next;
            }
        }

        #[test]
        fn collision_iff_nonpositive_gap(
            x0 in 50.0f64..60.0,
            d in prop::collection::vec(-3.0f64..20.0, 1..6),
        ) {
            // Build front-bumper positions from arbitrary (possibly overlapping) gaps.
            let mut xs = vec![x0];
            for g in &d {
                let prev = *xs.last().unwrap();
                xs.push(prev - 2.0 - g);
            }
            prop_assume!(xs.windows(2).all(|w| w[0] > w[1]));
            let c = chain_of(&xs);
            let hits = c.detect_collision();
            for i in 0..c.len() - 1 {
                let g = c.gap(i).unwrap();
                prop_assert_eq!(hits.contains(&(i, i + 1)), g <= 0.0);
            }
        }

        #[test]
        fn ttc_is_scale_free(g in 0.1f64..100.0, vr in 0.0f64..40.0, vf in 0.0f64..40.0, k in 0.1f64..10.0) {
            let base = ttc(g, vr, vf).unwrap();
            prop_assume!(base.is_finite());
            let scaled = ttc(k * g, k * vr, k * vf).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
        }
    }
}
