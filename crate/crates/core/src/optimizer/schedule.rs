use serde::{Deserialize, Serialize};

use crate::cost::FlipWeights;
use crate::error::{AqcError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// `w ← √C`
    SqrtCost,
    /// `w ← a·√C + b·w`
    Ema,
    /// `w` stays at 1 and flip weights are used as given.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedule {
    pub mode: ScheduleMode,
    pub ema_new: f64,
    pub ema_old: f64,
    pub w: f64,
}

impl WeightSchedule {
    pub fn new(mode: ScheduleMode) -> Self {
        Self {
            mode,
            ema_new: 0.1,
            ema_old: 0.9,
            w: 1.0,
        }
    }

    /// Flip weights at the current `w`. For the scheduled modes `α_1 = w` and
    /// higher orders keep their ratio to `α_1` from `base`.
    pub fn weights(&self, base: &FlipWeights) -> FlipWeights {
        match self.mode {
            ScheduleMode::Fixed => base.clone(),
            _ => match base.alphas.first() {
                Some(&a1) if a1 != 0.0 => base.scaled(self.w / a1),
                _ => base.clone(),
            },
        }
    }

    pub fn describe(&self) -> String {
        match self.mode {
            ScheduleMode::Fixed => "fixed".to_string(),
            ScheduleMode::SqrtCost => "sqrt_cost; alpha_1 = w, alpha_m/alpha_1 fixed".to_string(),
            ScheduleMode::Ema => format!(
                "ema({}, {}); alpha_1 = w, alpha_m/alpha_1 fixed",
                self.ema_new, self.ema_old
            ),
        }
    }
}

/// Advances the schedule with the latest cost.
pub fn update_weight(schedule: &WeightSchedule, cost: f64) -> Result<WeightSchedule> {
    if cost.is_nan() || cost < -1e-12 {
        return Err(AqcError::Input(format!("schedule got cost {cost}")));
    }
    let root = cost.max(0.0).sqrt();
    let w = match schedule.mode {
        ScheduleMode::Fixed => schedule.w,
        ScheduleMode::SqrtCost => root,
        ScheduleMode::Ema => schedule.ema_new * root + schedule.ema_old * schedule.w,
    };
    Ok(WeightSchedule {
        w: w.clamp(0.0, 1.0),
        ..schedule.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_arithmetic() {
        let s = WeightSchedule::new(ScheduleMode::Ema);
        let s = update_weight(&s, 0.81).unwrap();
        assert!((s.w - 0.99).abs() < 1e-15);
    }

    #[test]
    fn sqrt_zero_switches_off() {
        let s = WeightSchedule::new(ScheduleMode::SqrtCost);
        assert_eq!(update_weight(&s, 0.0).unwrap().w, 0.0);
        assert_eq!(update_weight(&s, -1e-13).unwrap().w, 0.0);
        assert!(update_weight(&s, -1e-9).is_err());
    }

    #[test]
    fn unit_cost_keeps_unit_weight() {
        for mode in [ScheduleMode::SqrtCost, ScheduleMode::Ema] {
            let s = update_weight(&WeightSchedule::new(mode), 1.0).unwrap();
            assert_eq!(s.w, 1.0);
        }
        let s = update_weight(&WeightSchedule::new(ScheduleMode::Ema), 1.2).unwrap();
        assert_eq!(s.w, 1.0);
    }

    #[test]
    fn ema_lower_bound() {
        let mut s = WeightSchedule::new(ScheduleMode::Ema);
        for k in 1..50 {
            s = update_weight(&s, 0.0).unwrap();
            assert!(s.w >= 0.9f64.powi(k) - 1e-15);
        }
    }

    #[test]
    fn scaling_preserves_ratios() {
        let mut s = WeightSchedule::new(ScheduleMode::Ema);
        s.w = 0.5;
        let base = FlipWeights::new(vec![0.5, 1.0 / 6.0]).unwrap();
        let w = s.weights(&base);
        assert!((w.alphas[0] - 0.5).abs() < 1e-15);
        assert!((w.alphas[1] - 1.0 / 6.0).abs() < 1e-15);
        s.w = 0.25;
        let w = s.weights(&base);
        assert!((w.alphas[1] / w.alphas[0] - 1.0 / 3.0).abs() < 1e-15);
        let fixed = WeightSchedule::new(ScheduleMode::Fixed);
        assert_eq!(fixed.weights(&base), base);
    }
}
