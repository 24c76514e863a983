//! Raw register units to engineering units.

use std::f64::consts::PI;

pub const TICKS_PER_REV: f64 = 4096.0;
pub const RPM_PER_VELOCITY_UNIT: f64 = 0.229;
pub const MA_PER_CURRENT_UNIT: f64 = 1.0;

pub fn position_rev(raw: i32) -> f64 {
    raw as f64 / TICKS_PER_REV
}

pub fn position_raw(rev: f64) -> i32 {
    saturate_i32((rev * TICKS_PER_REV).round())
}

pub fn velocity_rpm(raw: i32) -> f64 {
    raw as f64 * RPM_PER_VELOCITY_UNIT
}

pub fn velocity_raw(rpm: f64) -> i32 {
    saturate_i32((rpm / RPM_PER_VELOCITY_UNIT).round())
}

pub fn current_ma(raw: i16) -> f64 {
    raw as f64 * MA_PER_CURRENT_UNIT
}

pub fn current_raw(ma: f64) -> i16 {
    (ma / MA_PER_CURRENT_UNIT)
        .round()
        .clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn rad_per_s_to_rpm(omega: f64) -> f64 {
    omega * 60.0 / (2.0 * PI)
}

pub fn rpm_to_rad_per_s(rpm: f64) -> f64 {
    rpm * 2.0 * PI / 60.0
}

pub fn rad_to_rev(angle: f64) -> f64 {
    angle / (2.0 * PI)
}

fn saturate_i32(v: f64) -> i32 {
    v.clamp(i32::MIN as f64, i32::MAX as f64) as i32
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn velocity_examples() {
        assert_eq!(velocity_rpm(0), 0.0);
        assert!((velocity_rpm(100) - 22.9).abs() < 1e-12);
    }

    #[test]
    fn current_sign() {
        assert_eq!(current_ma(0xFF9Cu16 as i16), -100.0);
    }

    #[test]
    fn one_rev_is_4096_ticks() {
        assert_eq!(position_raw(1.0), 4096);
        assert_eq!(position_rev(-2048), -0.5);
    }

    proptest! {
        #[test]
        fn position_round_trip(raw in any::<i32>()) {
            prop_assert!((position_raw(position_rev(raw)) as i64 - raw as i64).abs() <= 1);
        }

        #[test]
        fn velocity_round_trip(raw in -100_000i32..100_000) {
            prop_assert!((velocity_raw(velocity_rpm(raw)) - raw).abs() <= 1);
        }

        #[test]
        fn current_round_trip(raw in any::<i16>()) {
            prop_assert!((current_raw(current_ma(raw)) as i32 - raw as i32).abs() <= 1);
        }
    }
}
