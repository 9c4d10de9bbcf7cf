//! TTC-triggered emergency braking and the scripted lead vehicle.

use serde::{Deserialize, Serialize};

use crate::sim::{ttc, VehicleSpec};

pub const DEFAULT_TTC_THRESHOLD: f64 = 1.4;

/// Cruise at constant speed until the front TTC drops below the threshold,
/// then brake at the vehicle's maximum deceleration until standstill.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineController {
    pub aeb_latched: bool,
    pub ttc_threshold: f64,
}

impl Default for BaselineController {
    fn default() -> Self {
        Self::new(DEFAULT_TTC_THRESHOLD)
    }
}

impl BaselineController {
    pub fn new(ttc_threshold: f64) -> Self {
        Self {
            aeb_latched: false,
            ttc_threshold,
        }
    }

    /// Acceleration command for this step. Latches the brake once triggered.
    ///
    /// An already negative gap (overlap) is treated as an immediate trigger.
    pub fn action(
        &mut self,
        front_gap: f64,
        v_self: f64,
        v_front_est: f64,
        spec: &VehicleSpec,
    ) -> f64 {
        if !self.aeb_latched {
            let time_to_collision = ttc(front_gap, v_self, v_front_est).unwrap_or(0.0);
            if time_to_collision < self.ttc_threshold {
                self.aeb_latched = true;
            }
        }
        if self.aeb_latched {
            -spec.max_decel
        } else {
            0.0
        }
    }
}

/// Leader acceleration: zero until `brake_step`, then `brake_decel` (signed) onward.
pub fn scripted_leader_action(t_step: usize, brake_step: usize, brake_decel: f64) -> f64 {
    if t_step >= brake_step {
        brake_decel
    } else {
        0.0
    }
}
