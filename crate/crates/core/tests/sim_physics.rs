use drawstring_core::sim::{
    run_scenario, FruitContact, FruitParams, FruitSpec, Plant, PlantConfig, PullSpec, Scenario,
};
use drawstring_core::telemetry::log_bytes;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// With both goals at zero nothing injects energy: kinetic energy never rises.
    #[test]
    fn unforced_plant_only_loses_energy(omega in -300.0f64..300.0, torque in any::<bool>(), fruit in any::<bool>()) {
        let mut cfg = PlantConfig::default();
        cfg.fruit = Some(FruitParams { diameter: 0.025, ..FruitParams::default() });
        let mut plant = Plant::new(cfg).unwrap();
        if fruit {
            plant.insert_fruit().unwrap();
        }
        for closer in [true, false] {
            plant.motor_mut(closer).torque_enabled = torque;
        }
        plant.state_mut().omega = omega;
        let mut ke = plant.kinetic_energy();
        for _ in 0..2000 {
            plant.step().unwrap();
            let next = plant.kinetic_energy();
            prop_assert!(next <= ke * (1.0 + 1e-9) + 1e-15, "{} -> {}", ke, next);
            ke = next;
        }
    }

    #[test]
    fn aperture_stays_within_stops(goal in 0.0f64..150.0, steps in 100usize..3000) {
        let cfg = PlantConfig::default();
        let mut plant = Plant::new(cfg.clone()).unwrap();
        plant.motor_mut(true).goal_current = goal / 1000.0;
        plant.motor_mut(true).torque_enabled = true;
        for _ in 0..steps {
            plant.step().unwrap();
            let a = plant.state().aperture;
            // Stops are stiff springs, not walls: allow a fraction of a millimetre.
            prop_assert!(a >= cfg.aperture_min - 5e-4 && a <= cfg.aperture_max + 5e-4, "{}", a);
        }
    }
}

#[test]
fn damage_latches() {
    let mut cfg = PlantConfig::default();
    cfg.fruit = Some(FruitParams {
        diameter: 0.025,
        damage_force: 3.0,
        ..FruitParams::default()
    });
    let mut plant = Plant::new(cfg).unwrap();
    plant.insert_fruit().unwrap();
    plant.motor_mut(true).torque_enabled = true;
    plant.motor_mut(true).goal_current = 0.1;
    for _ in 0..2000 {
        plant.step().unwrap();
    }
    assert!(plant.state().fruit_damaged);
    plant.motor_mut(true).goal_current = 0.0;
    for _ in 0..2000 {
        plant.step().unwrap();
    }
    assert!(plant.state().contact_force < 3.0);
    assert!(plant.state().fruit_damaged);
}

#[test]
fn oversize_fruit_rides_the_rim() {
    let mut cfg = PlantConfig::default();
    cfg.fruit = Some(FruitParams {
        diameter: 0.060,
        ..FruitParams::default()
    });
    let mut plant = Plant::new(cfg).unwrap();
    assert_eq!(plant.insert_fruit().unwrap(), FruitContact::Rim);
}

fn medium() -> Scenario {
    Scenario {
        name: "medium".into(),
        pull: Some(PullSpec {
            target: 10.0,
            ramp: 5.0,
            delay_ms: 200,
        }),
        ..Scenario::default()
    }
}

#[test]
fn identical_seeds_give_identical_logs() {
    for mut s in [medium(), Scenario::default()] {
        s.plant.sensor_noise.current_ma = 0.5;
        s.plant.sensor_noise.velocity_rpm = 0.2;
        let a = run_scenario(&s).unwrap();
        let b = run_scenario(&s).unwrap();
        assert_eq!(log_bytes(&a.samples), log_bytes(&b.samples));
        assert_eq!(log_bytes(&a.events), log_bytes(&b.events));
        s.plant.seed += 1;
        let c = run_scenario(&s).unwrap();
        assert_ne!(log_bytes(&a.samples), log_bytes(&c.samples));
    }
}

#[test]
fn empty_scenario_is_empty_closure() {
    let s = Scenario {
        fruit: FruitSpec {
            present: false,
            ..FruitSpec::default()
        },
        ..Scenario::default()
    };
    let r = run_scenario(&s).unwrap();
    assert_eq!(r.record.outcome, drawstring_core::controller::GraspResult::EmptyClosure);
    assert!(!r.record.damaged_on_harvest);
}

#[test]
fn antagonism_is_never_seen_by_the_plant() {
    let r = run_scenario(&medium()).unwrap();
    assert!(r.antagonism.checks > 4);
    assert_eq!(r.antagonism.violations, 0);
    assert!(r.record.harvested);
}
