use dfp_core::app_acc::*;
use dfp_core::platform::Runtime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg() -> AccConfig {
    AccConfig::default()
}

#[test]
fn desired_gap_examples() {
    let c = cfg();
    assert_eq!(desired_gap(&c, 20.0), 32.0);
    assert_eq!(desired_gap(&c, 0.0), 2.0);
    let c2 = AccConfig {
        time_headway: 2.0,
        ..cfg()
    };
    assert_eq!(desired_gap(&c2, 10.0), 22.0);
}

#[test]
fn command_examples() {
    let c = cfg();
    assert_eq!(acc_command(&c, 32.0, 20.0, 20.0), 0.0);
    assert_eq!(acc_command(&c, 0.5, 30.0, 0.0), c.accel_min);
    assert_eq!(acc_command(&c, 500.0, 0.0, 30.0), c.accel_max);
    let a = acc_command(&c, 40.0, 20.0, 18.0);
    assert!((a - (-0.16)).abs() < 1e-12, "{a}");
}

#[test]
fn equilibrium_holds_the_gap() {
    let c = cfg();
    let gap0 = desired_gap(&c, 20.0);
    let sc = Scenario {
        ego: VehicleState {
            position: 0.0,
            speed: 20.0,
            accel: 0.0,
        },
        lead: VehicleState {
            position: gap0,
            speed: 20.0,
            accel: 0.0,
        },
        lead_profile: vec![ProfileSegment {
            t_start: 0.0,
            speed: 20.0,
        }],
        dt: 0.05,
        duration: 30.0,
    };
    let tr = simulate(&sc, &c).unwrap();
    for p in &tr.points {
        assert!((p.gap - gap0).abs() < 1e-6, "t={} gap={}", p.t, p.gap);
    }
}

#[test]
fn lead_braking_step_settles() {
    let c = cfg();
    let tr = simulate(&Scenario::lead_brake_step(&c), &c).unwrap();
    assert_eq!(tr.points.len(), 2401);
    assert!(tr.points.iter().all(|p| p.gap > 0.0));
    for p in tr.points.iter().filter(|p| p.t > 70.0) {
        let err = (p.gap - desired_gap(&c, p.ego.speed)).abs();
        assert!(err < 0.5, "t={} err={err}", p.t);
    }
}

/// Re-integration of the same closed loop at `dt / sub`, written directly
/// from the control law and the Euler scheme, bypassing the stack.
fn reintegrate(sc: &Scenario, c: &AccConfig, sub: usize) -> Vec<(f64, f64, f64)> {
    let h = sc.dt / sub as f64;
    let (mut xe, mut ve) = (sc.ego.position, sc.ego.speed);
    let (mut xl, mut vl) = (sc.lead.position, sc.lead.speed);
    let mut out = vec![(0.0, xe, xl)];
    let n = sc.steps() * sub;
    for i in 0..n {
        let t = i as f64 * h;
        let gap = xl - xe;
        let a = (c.kp * (gap - (c.standstill_gap + c.time_headway * ve)) + c.kv * (vl - ve))
            .clamp(c.accel_min, c.accel_max);
        ve = (ve + a * h).max(0.0);
        xe += ve * h;
        vl = sc
            .lead_profile
            .iter()
            .rfind(|s| s.t_start <= t)
            .map_or(sc.lead.speed, |s| s.speed);
        xl += vl * h;
        if (i + 1) % sub == 0 {
            out.push(((i + 1) as f64 * h, xe, xl));
        }
    }
    out
}

#[test]
fn stack_matches_direct_integration_at_same_step() {
    // Sanity check of the oracle itself: at sub = 1 it must reproduce the
    // full-stack run.
    let c = cfg();
    let sc = Scenario::lead_brake_step(&c);
    let tr = simulate(&sc, &c).unwrap();
    let direct = reintegrate(&sc, &c, 1);
    assert_eq!(direct.len(), tr.points.len());
    for (p, (_, xe, xl)) in tr.points.iter().zip(&direct) {
        assert!((p.ego.position - xe).abs() < 1e-6);
        assert!((p.lead.position - xl).abs() < 1e-6);
    }
}

#[test]
fn fine_step_oracle_agrees_within_tenth_of_a_metre() {
    let c = cfg();
    let sc = Scenario::lead_brake_step(&c);
    let tr = simulate(&sc, &c).unwrap();
    let fine = reintegrate(&sc, &c, 10);
    let mut worst: (f64, f64) = (0.0, 0.0);
    for (p, (t, xe, xl)) in tr.points.iter().zip(&fine) {
        let d = (p.ego.position - xe)
            .abs()
            .max((p.lead.position - xl).abs());
        if d > worst.0 {
            worst = (d, *t);
        }
    }
    assert!(
        worst.0 <= 0.1,
        "dt vs dt/10 position disagreement {:.4} m at t = {:.2} s",
        worst.0,
        worst.1
    );
}

#[test]
fn runs_are_byte_identical() {
    let c = cfg();
    let sc = Scenario::lead_brake_step(&c);
    let a = simulate(&sc, &c).unwrap().to_jsonl();
    let b = simulate(&sc, &c).unwrap().to_jsonl();
    assert_eq!(a, b);
}

#[test]
fn sudden_stop_is_reported_as_collision() {
    let c = cfg();
    let sc = Scenario {
        ego: VehicleState {
            position: 0.0,
            speed: 30.0,
            accel: 0.0,
        },
        lead: VehicleState {
            position: desired_gap(&c, 30.0),
            speed: 30.0,
            accel: 0.0,
        },
        lead_profile: vec![ProfileSegment {
            t_start: 1.0,
            speed: 0.0,
        }],
        dt: 0.05,
        duration: 60.0,
    };
    match simulate(&sc, &c) {
        Err(AccError::Collision { t, gap, trajectory }) => {
            assert!(gap <= 0.0);
            assert!(t < 60.0);
            assert_eq!(trajectory.points.last().unwrap().t, t);
        }
        other => panic!("expected collision, got {other:?}"),
    }
}

#[test]
fn invalid_scenarios_are_rejected() {
    let c = cfg();
    let mut sc = Scenario::lead_brake_step(&c);
    sc.lead.position = -1.0;
    assert!(matches!(
        simulate(&sc, &c),
        Err(AccError::InvalidScenario(_))
    ));
    let mut sc = Scenario::lead_brake_step(&c);
    sc.dt = 0.0;
    assert!(matches!(
        simulate(&sc, &c),
        Err(AccError::InvalidScenario(_))
    ));
    let bad = AccConfig {
        accel_min: 1.0,
        ..c
    };
    assert!(matches!(
        simulate(&Scenario::lead_brake_step(&c), &bad),
        Err(AccError::InvalidConfig(_))
    ));
}

#[test]
fn control_runs_only_while_active() {
    let c = cfg();
    let sc = Scenario::lead_brake_step(&c);
    let mut sys = acc_system(&sc, &c, 1);
    sys.schedule.clear();
    let mut rt = Runtime::new(sys, None, &[&AccApp]).unwrap();
    let cmd = rt
        .participant()
        .create_subscriber(rt.topic("acc/command").unwrap())
        .unwrap();
    let speed = rt
        .participant()
        .create_publisher(rt.topic("vehicle/speed").unwrap())
        .unwrap();
    let round = |rt: &mut Runtime| {
        speed.publish(&25f64.to_le_bytes()).unwrap();
        let report = rt.step().unwrap();
        (
            report.fired.contains(&"acc_control".to_string()),
            cmd.take(usize::MAX).len(),
        )
    };
    // Off: nothing runs.
    assert_eq!(round(&mut rt), (false, 0));
    rt.dispatch("ads", "driver_engage").unwrap();
    assert_eq!(round(&mut rt), (false, 0));
    rt.dispatch("ads", "activate").unwrap();
    assert_eq!(round(&mut rt), (true, 1));
    assert_eq!(round(&mut rt), (true, 1));
    let out = rt.dispatch("ads", "fallback").unwrap();
    assert!(out.group_errors.is_empty());
    for _ in 0..5 {
        assert_eq!(round(&mut rt), (false, 0));
    }
    assert_eq!(
        rt.graph().state("acc_control").unwrap(),
        dfp_core::funcsw::LifecycleState::Stopped
    );
}

#[test]
fn health_fault_cascades_to_fallback() {
    let c = cfg();
    let mut rt = Runtime::new(
        acc_system(&Scenario::lead_brake_step(&c), &c, 1),
        None,
        &[&AccApp],
    )
    .unwrap();
    rt.step().unwrap();
    assert_eq!(rt.modes().state_of("ads").as_deref(), Some("Active"));
    rt.dispatch("health", "fault").unwrap();
    assert_eq!(rt.modes().state_of("ads").as_deref(), Some("Fallback"));
    assert_eq!(
        rt.graph().state("acc_control").unwrap(),
        dfp_core::funcsw::LifecycleState::Stopped
    );
}

#[test]
fn app_uses_only_the_sdk() {
    let src = include_str!("../src/app_acc.rs");
    for (i, line) in src.lines().enumerate() {
        let mut rest = line;
        while let Some(pos) = rest.find("crate::") {
            let tail = &rest[pos + "crate::".len()..];
            assert!(
                tail.starts_with("sdk"),
                "line {}: app_acc reaches past the SDK: {}",
                i + 1,
                line.trim()
            );
            rest = tail;
        }
        for layer in [
            "hal::",
            "middleware::",
            "funcsw::",
            "envmodel::",
            "modemgr::",
            "platform::",
        ] {
            assert!(
                !line.contains(&format!("dfp_core::{layer}"))
                    && !line.contains(&format!("super::{layer}")),
                "line {}: {}",
                i + 1,
                line.trim()
            );
        }
    }
}

fn random_profile(rng: &mut ChaCha8Rng, c: &AccConfig) -> Scenario {
    let v0: f64 = rng.gen_range(0.0..=30.0);
    let mut t = 0.0;
    let mut segs = Vec::new();
    for _ in 0..rng.gen_range(1..=6) {
        segs.push(ProfileSegment {
            t_start: t,
            speed: rng.gen_range(0.0..=30.0),
        });
        t += rng.gen_range(5.0..40.0);
    }
    let ve: f64 = rng.gen_range(0.0..=30.0);
    Scenario {
        ego: VehicleState {
            position: 0.0,
            speed: ve,
            accel: 0.0,
        },
        lead: VehicleState {
            position: desired_gap(c, ve) + rng.gen_range(0.0..20.0),
            speed: v0,
            accel: 0.0,
        },
        lead_profile: segs,
        dt: 0.05,
        duration: 120.0,
    }
}

#[test]
fn no_collision_for_random_lead_profiles() {
    let c = cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut collisions = Vec::new();
    for i in 0..50 {
        let sc = random_profile(&mut rng, &c);
        if let Err(AccError::Collision { t, .. }) = simulate(&sc, &c) {
            collisions.push((i, t, sc.lead_profile.clone()));
        }
    }
    assert!(
        collisions.is_empty(),
        "{} of 50 profiles collide; first: {:?}",
        collisions.len(),
        collisions.first()
    );
}
