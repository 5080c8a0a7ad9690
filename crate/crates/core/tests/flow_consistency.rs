//! Joint checks of the integrator, the period map and the averaged field.

use std::f64::consts::PI;

use pavg_core::averaging::{averaged_function, random_in_ball, DEFAULT_NODES};
use pavg_core::expr::{field_from_spec, FieldSpec};
use pavg_core::odeint::{flow_system, g_eps, integrate, poincare_map, FnSystem, IntegratorConfig, Scaled};
use pavg_core::orbit::{find_periodic, OrbitConfig};
use pavg_core::vdp::{ForcingParams, VdpField, VdpModel};
use pavg_core::{FnField, PeriodicField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn kink_field() -> impl PeriodicField {
    let spec = FieldSpec {
        dim: 1,
        period: 2.0 * PI,
        components: vec!["abs(x1) - 1".into()],
        params: Default::default(),
    };
    field_from_spec(&spec).unwrap()
}

#[test]
fn harmonic_error_drops_at_least_twelvefold_per_halving() {
    let sys = FnSystem::new(2, |_t: f64, x: &[f64], out: &mut [f64]| {
        out[0] = x[1];
        out[1] = -x[0];
    });
    let err = |h: f64| {
        let x = flow_system(&sys, 0.0, 2.0 * PI, &[1.0, 0.0], &IntegratorConfig::rk4(h)).unwrap();
        dist(&x, &[1.0, 0.0])
    };
    for h in [2e-2, 1e-2, 5e-3] {
        let ratio = err(h) / err(0.5 * h);
        assert!(ratio >= 12.0, "h = {h}: ratio {ratio}");
    }
}

#[test]
fn richardson_order_across_a_kink() {
    // x' = eps (|x| - 1) crosses x = 0 at t = ln 2 / eps from x0 = 0.5
    let f = kink_field();
    let eps = 1.0;
    let end = |h: f64| {
        integrate(&f, 0.0, 2.0, &[0.5], eps, &IntegratorConfig::rk4(h))
            .unwrap()
            .final_state()[0]
    };
    let (y1, y2, y3) = (end(1e-2), end(5e-3), end(2.5e-3));
    let order = ((y1 - y2).abs() / (y2 - y3).abs()).log2();
    assert!(order >= 1.0, "order {order}");
}

#[test]
fn consecutive_periods_compose() {
    let f = VdpField {
        model: VdpModel::Nonsmooth,
        params: ForcingParams::new(0.1, 1.0),
    };
    let cfg = IntegratorConfig::for_field(&f);
    let sys = Scaled { field: &f, eps: 0.05 };
    let t = f.period();
    let x0 = [1.3, -2.1];
    let mid = flow_system(&sys, 0.0, t, &x0, &cfg).unwrap();
    let two_step = flow_system(&sys, t, 2.0 * t, &mid, &cfg).unwrap();
    let one_step = flow_system(&sys, 0.0, 2.0 * t, &x0, &cfg).unwrap();
    assert!(dist(&two_step, &one_step) <= 1e-12, "{:e}", dist(&two_step, &one_step));
}

/// `sup ‖∇F‖` over `|u|, |u'| ≤ r` from interval bounds on each partial
/// derivative of the forcing term, for the rotating-frame van der Pol field.
fn interval_lipschitz(model: VdpModel, a: f64, r: f64) -> f64 {
    match model {
        // ∇F = -(sign(u) u' + a) ∇u - (|u| - 1) ∇u'
        VdpModel::Nonsmooth => r + a.abs() + (r - 1.0).abs().max(1.0),
        // ∇F = -(2 u u' + a) ∇u - (u² - 1) ∇u'
        VdpModel::Classical => 2.0 * r * r + a.abs() + (r * r - 1.0).abs().max(1.0),
    }
}

#[test]
fn sampled_lipschitz_respects_interval_bound() {
    use pavg_core::certify::estimate_lipschitz;
    for model in [VdpModel::Nonsmooth, VdpModel::Classical] {
        for a in [-1.0, 0.0, 0.4] {
            let f = VdpField {
                model,
                params: ForcingParams::new(a, 0.8),
            };
            let est = estimate_lipschitz(&f, &[0.0, 0.0], 3.0, 20_000, 5);
            let bound = interval_lipschitz(model, a, 3.0);
            assert!(
                est.l_hat > 0.0 && est.l_hat <= bound,
                "{model} a={a}: {} > {bound}",
                est.l_hat
            );
        }
    }
}

#[test]
fn period_map_obeys_gronwall() {
    let a = 0.1;
    let f = VdpField {
        model: VdpModel::Nonsmooth,
        params: ForcingParams::new(a, 1.0),
    };
    let eps = 0.05;
    let cfg = IntegratorConfig::for_field(&f);
    let centre = [0.5, -2.0];
    let radius = 0.5;
    // trajectories drift by at most eps * T * sup|g| ≈ 0.3 over one period
    let r = dist(&centre, &[0.0, 0.0]) + radius + 0.5;
    let l = interval_lipschitz(VdpModel::Nonsmooth, a, r) + 1.0;
    let bound = (eps * l * f.period()).exp();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let v1 = random_in_ball(&mut rng, &centre, radius);
        let v2 = random_in_ball(&mut rng, &centre, radius);
        let p1 = poincare_map(&f, &v1, eps, &cfg).unwrap();
        let p2 = poincare_map(&f, &v2, eps, &cfg).unwrap();
        worst = worst.max(dist(&p1, &p2) / dist(&v1, &v2));
    }
    assert!(worst <= bound + 1e-9, "{worst} > {bound}");
}

#[test]
fn flow_quotient_tends_to_averaged_field() {
    for model in [VdpModel::Nonsmooth, VdpModel::Classical] {
        let f = VdpField {
            model,
            params: ForcingParams::new(0.2, 0.9),
        };
        let v = [1.1, 1.7];
        let g0 = averaged_function(&f, &v, DEFAULT_NODES).unwrap();
        let cfg = IntegratorConfig::for_field(&f);
        let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&eps| dist(&g_eps(&f, &v, eps, &cfg).unwrap(), &g0))
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{model}: {errs:?}");
        assert!(errs[2] < 1e-2, "{model}: {errs:?}");
    }
}

#[test]
fn constant_field_quotient_is_exact() {
    let f = FnField::new(2, 3.0, |_t, _x, _e, out: &mut [f64]| {
        out[0] = 0.25;
        out[1] = -1.5;
    });
    let cfg = IntegratorConfig::for_field(&f);
    for eps in [0.5, 0.01] {
        let g = g_eps(&f, &[1.0, 2.0], eps, &cfg).unwrap();
        // exact up to rounding in 2000 state updates, amplified by 1/eps
        let tol = 2000.0 * f64::EPSILON * 4.0 / eps;
        assert!((g[0] - 0.75).abs() < tol && (g[1] + 4.5).abs() < tol, "{g:?}");
    }
}

#[test]
fn period_map_nearly_fixes_the_free_cycle() {
    let f = VdpField {
        model: VdpModel::Nonsmooth,
        params: ForcingParams::default(),
    };
    let eps = 0.05;
    let r = find_periodic(
        &f,
        &[VdpModel::Nonsmooth.free_amplitude(), 0.0],
        eps,
        &OrbitConfig::default(),
    )
    .unwrap();
    let p = poincare_map(&f, &r.fixed_point, eps, &IntegratorConfig::for_field(&f)).unwrap();
    assert!(dist(&p, &r.fixed_point) < 1e-3);
}

#[test]
fn zero_eps_map_is_identity() {
    let f = VdpField {
        model: VdpModel::Classical,
        params: ForcingParams::new(0.3, 2.0),
    };
    for cfg in [IntegratorConfig::for_field(&f), IntegratorConfig::adaptive()] {
        let v = [0.4, -1.9];
        assert_eq!(poincare_map(&f, &v, 0.0, &cfg).unwrap(), v.to_vec());
    }
}
