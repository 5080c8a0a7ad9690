use std::f64::consts::PI;

use pavg_core::averaging::RootOptions;
use pavg_core::certify::estimate_lipschitz;
use pavg_core::odeint::{flow_system_with, IntegratorConfig, Scaled};
use pavg_core::orbit::{
    basin_probe, eps_sweep, find_periodic, find_periodic_near, uniqueness_probe, BasinTarget, OrbitClass, OrbitConfig,
    SolveStatus,
};
use pavg_core::vdp::{amplitude_roots, recover_point, response, ForcingParams, ResonancePoint, VdpField, VdpModel};
use pavg_core::PeriodicField;

fn forced(amp: f64) -> (VdpField, ResonancePoint) {
    let a = 0.1;
    let p = ForcingParams::new(a, response(VdpModel::Nonsmooth, a, amp));
    let pt = recover_point(VdpModel::Nonsmooth, p, amp, &RootOptions::default()).unwrap();
    assert!(pt.stable);
    (
        VdpField {
            model: VdpModel::Nonsmooth,
            params: p,
        },
        pt,
    )
}

const EPS: [f64; 4] = [0.05, 0.02, 0.01, 0.005];

#[test]
fn forced_sweep_converges_at_first_order() {
    let (f, pt) = forced(3.2);
    let sweep = eps_sweep(&f, &[pt.m, pt.n], &EPS, &OrbitConfig::default()).unwrap();
    let mut last = f64::INFINITY;
    for e in &sweep.entries {
        let r = e.result.as_ref().expect("entry solved");
        assert!(r.residual <= 1e-9 && r.residual_refined <= 1e-8);
        assert!(r.stable && r.multipliers.iter().all(|z| z.norm() < 1.0 - 1e-9));
        assert!(r.dist_to_v0 < last);
        last = r.dist_to_v0;
    }
    assert!(sweep.order.unwrap() >= 1.0, "{:?}", sweep.order);
}

#[test]
fn fitted_order_stays_near_one_along_the_stable_branch() {
    for amp in [2.4, 2.8, 3.2, 3.5] {
        let (f, pt) = forced(amp);
        let sweep = eps_sweep(&f, &[pt.m, pt.n], &EPS, &OrbitConfig::default()).unwrap();
        let p = sweep.order.unwrap();
        assert!((p - 1.0).abs() <= 0.05, "A = {amp}: p = {p}");
    }
}

#[test]
fn multiplier_product_obeys_liouville_bound() {
    let (f, pt) = forced(3.2);
    let v0 = [pt.m, pt.n];
    let l_hat = estimate_lipschitz(&f, &v0, 0.5, 10_000, 11).l_hat;
    for eps in [0.05, 0.01] {
        let r = find_periodic(&f, &v0, eps, &OrbitConfig::default()).unwrap();
        let prod: f64 = r.multipliers.iter().map(|z| z.norm()).product();
        let bound = (eps * 2.0 * l_hat * f.period()).exp();
        assert!(prod > 0.0 && prod <= bound, "{prod} vs {bound}");
    }
}

#[test]
fn forced_fixed_point_is_unique() {
    let (f, pt) = forced(3.2);
    for eps in [0.05, 0.01] {
        let u = uniqueness_probe(&f, &[pt.m, pt.n], eps, 0.5, 20, 4, &OrbitConfig::default()).unwrap();
        assert_eq!(u.failed, 0);
        assert_eq!(u.fixed_points.len(), 1, "{:?}", u.fixed_points);
        assert!(u.spread < 1e-7);
    }
}

#[test]
fn reconstructed_solution_approaches_the_leading_term() {
    let (f, pt) = forced(3.2);
    let cfg = OrbitConfig::default();
    let icfg = IntegratorConfig::for_field(&f);
    let mut last = f64::INFINITY;
    let mut dist_last = f64::INFINITY;
    for eps in [0.05, 0.02, 0.01] {
        let r = find_periodic_near(&f, &[pt.m, pt.n], &[pt.m, pt.n], eps, &cfg).unwrap();
        assert!(r.stable);
        assert!(r.dist_to_v0 < dist_last);
        dist_last = r.dist_to_v0;
        let mut sup = 0.0f64;
        flow_system_with(
            &Scaled { field: &f, eps },
            0.0,
            2.0 * PI,
            &r.fixed_point,
            &icfg,
            |t, x| {
                let u = x[0] * t.sin() + x[1] * t.cos();
                sup = sup.max((u - pt.leading_term(t)).abs());
            },
        )
        .unwrap();
        assert!(sup < last, "eps {eps}: {sup} !< {last}");
        last = sup;
    }
    assert!(last < 0.05);
}

#[test]
fn forced_basin_is_full() {
    let (f, pt) = forced(3.2);
    let eps = 0.05;
    let r = find_periodic(&f, &[pt.m, pt.n], eps, &OrbitConfig::default()).unwrap();
    let b = basin_probe(
        &f,
        &r.fixed_point,
        eps,
        0.2,
        100,
        500,
        BasinTarget::for_result(&r),
        9,
        &OrbitConfig::default(),
    )
    .unwrap();
    assert_eq!(b.fraction, 1.0);
}

#[test]
fn middle_classical_branch_repels() {
    let (a, lambda) = (0.0, 0.2);
    let roots = amplitude_roots(VdpModel::Classical, a, lambda);
    assert_eq!(roots.len(), 3);
    let p = ForcingParams::new(a, lambda);
    let mid = recover_point(VdpModel::Classical, p, roots[1], &RootOptions::default()).unwrap();
    assert!(!mid.stable && !mid.hurwitz_numeric);
    let f = VdpField {
        model: VdpModel::Classical,
        params: p,
    };
    let eps = 0.05;
    let r = find_periodic(&f, &[mid.m, mid.n], eps, &OrbitConfig::default()).unwrap();
    assert_eq!(r.class, OrbitClass::Unstable);
    let b = basin_probe(
        &f,
        &r.fixed_point,
        eps,
        0.2,
        40,
        300,
        BasinTarget::for_result(&r),
        2,
        &OrbitConfig::default(),
    )
    .unwrap();
    assert!(b.fraction <= 0.05, "{}", b.fraction);
}

#[test]
fn free_cycles_are_orbitally_stable() {
    for model in [VdpModel::Nonsmooth, VdpModel::Classical] {
        let f = VdpField {
            model,
            params: ForcingParams::default(),
        };
        let eps = 0.05;
        let r = find_periodic(&f, &[model.free_amplitude(), 0.0], eps, &OrbitConfig::default()).unwrap();
        assert_eq!(r.class, OrbitClass::OrbitallyStable);
        assert_eq!(r.status, SolveStatus::Stagnated);
        assert!(!r.stable);
        assert!(r.note.as_deref().unwrap().contains("orbitally stable"));
        let radius = r.fixed_point[0].hypot(r.fixed_point[1]);
        assert!((radius - model.free_amplitude()).abs() < 0.1, "{model}: {radius}");
        let b = basin_probe(
            &f,
            &r.fixed_point,
            eps,
            0.05,
            20,
            300,
            BasinTarget::for_result(&r),
            1,
            &OrbitConfig::default(),
        )
        .unwrap();
        assert!(b.fraction >= 0.9, "{model}: {}", b.fraction);
    }
}
