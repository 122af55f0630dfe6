//! Operator actions attached to each prediction.

use incident_duration::domain::DurationBand;
use serde::{Deserialize, Serialize};

pub const EVALUATE_DETOUR: &str = "evaluate_detour";
pub const DISPATCH_HELPER: &str = "dispatch_helper";
pub const WARN_TRAVELERS: &str = "warn_travelers";
pub const MONITOR: &str = "monitor";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionPolicy {
    /// A detour is not suggested when the incident should clear sooner than this.
    pub detour_overhead_minutes: f64,
}

impl Default for ActionPolicy {
    fn default() -> Self {
        ActionPolicy { detour_overhead_minutes: 30.0 }
    }
}

impl ActionPolicy {
    pub fn recommend(&self, band: DurationBand, duration_minutes: f64) -> Vec<String> {
        let detour_ok = duration_minutes >= self.detour_overhead_minutes;
        let actions: &[&str] = match band {
            DurationBand::Long if detour_ok => &[EVALUATE_DETOUR, DISPATCH_HELPER],
            DurationBand::Long => &[DISPATCH_HELPER],
            DurationBand::Medium => &[DISPATCH_HELPER, WARN_TRAVELERS],
            DurationBand::Short => &[MONITOR],
        };
        actions.iter().map(|s| s.to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_rules() {
        let p = ActionPolicy::default();
        assert_eq!(p.recommend(DurationBand::Long, 200.0), [EVALUATE_DETOUR, DISPATCH_HELPER]);
        assert_eq!(p.recommend(DurationBand::Medium, 45.0), [DISPATCH_HELPER, WARN_TRAVELERS]);
        assert_eq!(p.recommend(DurationBand::Short, 12.0), [MONITOR]);
    }

    #[test]
    fn detour_needs_the_overhead_to_pay_off() {
        let p = ActionPolicy { detour_overhead_minutes: 150.0 };
        assert_eq!(p.recommend(DurationBand::Long, 140.0), [DISPATCH_HELPER]);
        assert_eq!(p.recommend(DurationBand::Long, 150.0), [EVALUATE_DETOUR, DISPATCH_HELPER]);
    }
}
