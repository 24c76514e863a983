use serde::{Deserialize, Serialize};

use super::SimError;

/// Output-referred constants of one geared servo (gearbox folded in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotorParams {
    /// Ohm.
    pub winding_resistance: f64,
    /// N·m/A.
    pub torque_constant: f64,
    /// V·s/rad.
    pub back_emf_constant: f64,
    /// kg·m².
    pub rotor_inertia: f64,
    /// N·m·s/rad.
    pub viscous_friction: f64,
    /// N·m.
    pub coulomb_friction: f64,
    /// V.
    pub supply_voltage: f64,
    /// Proportional gain of the servo's current loop, V/A.
    pub current_kp: f64,
    /// Integral gain of the servo's current loop, V/(A·s).
    pub current_ki: f64,
}

impl Default for MotorParams {
    fn default() -> Self {
        Self {
            winding_resistance: 3.4,
            torque_constant: 0.4,
            back_emf_constant: 0.4,
            rotor_inertia: 1.0e-6,
            viscous_friction: 5.0e-4,
            coulomb_friction: 6.0e-3,
            supply_voltage: 5.0,
            current_kp: 20.0,
            current_ki: 1.0e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FruitParams {
    /// m.
    pub diameter: f64,
    /// Pocket-plus-fruit stiffness, N/m of aperture overlap.
    pub contact_stiffness: f64,
    /// Viscous loss of the pocket material while compressing, N·s/m.
    pub contact_damping: f64,
    /// Contact force above which the fruit counts as damaged, N.
    pub damage_force: f64,
    /// Vertical pull that separates the stem, N.
    pub stem_force: f64,
}

impl Default for FruitParams {
    fn default() -> Self {
        Self {
            diameter: 0.0436,
            contact_stiffness: 2000.0,
            contact_damping: 20.0,
            damage_force: 15.0,
            stem_force: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoise {
    /// Standard deviation added to present current, mA.
    pub current_ma: f64,
    /// Standard deviation added to present velocity, rev/min.
    pub velocity_rpm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub motor: MotorParams,
    /// m.
    pub spool_radius: f64,
    /// Widest opening, reached when the opener cable bottoms out. Fruit wider
    /// than this cannot be enveloped. m.
    pub aperture_max: f64,
    /// Opening at which the two pockets meet. m.
    pub aperture_min: f64,
    /// Opening at power-up. m.
    pub aperture_initial: f64,
    /// Aperture change per metre of closer pull-in.
    pub cable_to_aperture_gain: f64,
    /// Structural end stops at both aperture limits, N/m and N·s/m.
    pub stop_stiffness: f64,
    pub stop_damping: f64,
    /// An oversize fruit rides on the pocket rims: the rims give way above
    /// this force (N) and then creep with the given damping (N·s/m).
    pub rim_yield_force: f64,
    pub rim_creep_damping: f64,
    /// `None` runs the plant with nothing between the pockets.
    pub fruit: Option<FruitParams>,
    /// Grip capacity against vertical pull per newton of closer cable tension.
    pub capacity_gain: f64,
    /// s.
    pub dt: f64,
    pub seed: u64,
    pub sensor_noise: SensorNoise,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            motor: MotorParams::default(),
            spool_radius: 0.005,
            aperture_max: 0.056,
            aperture_min: 0.008,
            aperture_initial: 0.030,
            cable_to_aperture_gain: 1.0,
            stop_stiffness: 5.0e4,
            stop_damping: 200.0,
            rim_yield_force: 3.0,
            rim_creep_damping: 2500.0,
            fruit: Some(FruitParams::default()),
            capacity_gain: 1.5,
            dt: 0.001,
            seed: 0,
            sensor_noise: SensorNoise::default(),
        }
    }
}

impl PlantConfig {
    pub const MAX_DT: f64 = 0.005;

    pub fn validate(&self) -> Result<(), SimError> {
        let m = &self.motor;
        let positive = [
            ("motor.winding_resistance", m.winding_resistance),
            ("motor.torque_constant", m.torque_constant),
            ("motor.back_emf_constant", m.back_emf_constant),
            ("motor.rotor_inertia", m.rotor_inertia),
            ("motor.viscous_friction", m.viscous_friction),
            ("motor.coulomb_friction", m.coulomb_friction),
            ("motor.supply_voltage", m.supply_voltage),
            ("motor.current_kp", m.current_kp),
            ("motor.current_ki", m.current_ki),
            ("spool_radius", self.spool_radius),
            ("aperture_max", self.aperture_max),
            ("aperture_min", self.aperture_min),
            ("aperture_initial", self.aperture_initial),
            ("cable_to_aperture_gain", self.cable_to_aperture_gain),
            ("stop_stiffness", self.stop_stiffness),
            ("stop_damping", self.stop_damping),
            ("rim_yield_force", self.rim_yield_force),
            ("rim_creep_damping", self.rim_creep_damping),
            ("capacity_gain", self.capacity_gain),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(f) = &self.fruit {
            for (name, v) in [
                ("fruit.diameter", f.diameter),
                ("fruit.contact_stiffness", f.contact_stiffness),
                ("fruit.contact_damping", f.contact_damping),
                ("fruit.damage_force", f.damage_force),
                ("fruit.stem_force", f.stem_force),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(SimError::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if self.aperture_min >= self.aperture_max {
            return Err(SimError::Config("aperture_min must be below aperture_max".into()));
        }
        if !(self.aperture_min..=self.aperture_max).contains(&self.aperture_initial) {
            return Err(SimError::Config("aperture_initial outside aperture limits".into()));
        }
        if self.dt > Self::MAX_DT {
            return Err(SimError::Config(format!("dt {} exceeds {}", self.dt, Self::MAX_DT)));
        }
        for (name, v) in [
            ("sensor_noise.current_ma", self.sensor_noise.current_ma),
            ("sensor_noise.velocity_rpm", self.sensor_noise.velocity_rpm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::Config(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }

    /// Largest fruit diameter the pockets can envelop.
    pub fn oversize_bound(&self) -> f64 {
        self.aperture_max
    }
}
