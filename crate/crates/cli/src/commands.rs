use std::io::Write;

use pavg_core::averaging::{averaged_report, scan_roots, RootOptions};
use pavg_core::certify::{theorem_report, ReportOptions};
use pavg_core::orbit::eps_sweep;
use pavg_core::vdp::{resonance_curve, VdpModel};
use pavg_core::PeriodicField;

use crate::config::RunConfig;
use crate::output::{self, sink, write_json};
use crate::Failure;

pub const DEFAULT_EPS: [f64; 4] = [0.05, 0.02, 0.01, 0.005];
pub const MAX_CURVE_POINTS: usize = 100_000;

fn field(cfg: &RunConfig) -> Result<Box<dyn PeriodicField>, Failure> {
    cfg.build_field().map_err(Failure::usage)
}

fn point(cfg: &RunConfig, f: &dyn PeriodicField) -> Result<Vec<f64>, Failure> {
    let p = cfg
        .point
        .clone()
        .ok_or_else(|| Failure::usage(anyhow::anyhow!("no point given (--point or \"point\" in the config)")))?;
    if p.len() != f.dim() {
        return Err(Failure::usage(anyhow::anyhow!(
            "point has {} coordinates but the system has dimension {}",
            p.len(),
            f.dim()
        )));
    }
    Ok(p)
}

fn root_options(cfg: &RunConfig) -> RootOptions {
    RootOptions {
        root_tol: cfg.root_tol(),
        n_nodes: cfg.nodes(),
        ..RootOptions::default()
    }
}

pub fn avg(cfg: &RunConfig, jacobian: bool) -> Result<(), Failure> {
    let f = field(cfg)?;
    let v = point(cfg, &*f)?;
    let report = averaged_report(&*f, &v, cfg.nodes(), jacobian).map_err(Failure::numerical)?;
    write_json(cfg.output.as_deref(), &report).map_err(Failure::numerical)
}

pub fn roots(cfg: &RunConfig, lo: &[f64], hi: &[f64], grid: usize) -> Result<(), Failure> {
    let f = field(cfg)?;
    if lo.len() != f.dim() || hi.len() != f.dim() {
        return Err(Failure::usage(anyhow::anyhow!(
            "--lo and --hi need {} coordinates each",
            f.dim()
        )));
    }
    if grid == 0 || lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
        return Err(Failure::usage(anyhow::anyhow!(
            "need grid >= 1 and lo < hi on every axis"
        )));
    }
    let found = scan_roots(&*f, lo, hi, grid, &root_options(cfg)).map_err(Failure::numerical)?;
    if found.is_empty() {
        return Err(Failure::empty("no roots found in the box"));
    }
    let mut w = sink(cfg.output.as_deref()).map_err(Failure::numerical)?;
    output::write_roots_csv(&mut w, f.dim(), &found).map_err(Failure::numerical)
}

pub fn certify(cfg: &RunConfig) -> Result<(), Failure> {
    let f = field(cfg)?;
    let v = point(cfg, &*f)?;
    let d = ReportOptions::default();
    let opts = ReportOptions {
        root_tol: cfg.root_tol(),
        n_nodes: cfg.nodes(),
        delta: cfg.delta.unwrap_or(d.delta),
        lipschitz_samples: cfg.lipschitz_samples.unwrap_or(d.lipschitz_samples),
        pairwise_samples: cfg.pairwise_samples.unwrap_or(d.pairwise_samples),
        seed: cfg.seed(),
        alpha_policy: d.alpha_policy,
    };
    let report = theorem_report(&*f, &v, &opts);
    write_json(cfg.output.as_deref(), &report).map_err(Failure::numerical)
}

pub fn verify(cfg: &RunConfig) -> Result<(), Failure> {
    let f = field(cfg)?;
    let v = point(cfg, &*f)?;
    let eps = cfg.eps.clone().unwrap_or_else(|| DEFAULT_EPS.to_vec());
    let orbit_cfg = cfg.orbit_config(&*f).map_err(Failure::usage)?;
    let sweep = eps_sweep(&*f, &v, &eps, &orbit_cfg).map_err(Failure::numerical)?;
    for e in &sweep.entries {
        if let Some(msg) = &e.error {
            eprintln!("pavg: eps = {}: {msg}", e.eps);
        }
    }
    let mut w = sink(cfg.output.as_deref()).map_err(Failure::numerical)?;
    output::write_sweep_csv(&mut w, f.dim(), &sweep).map_err(Failure::numerical)?;
    drop(w);
    // with CSV on stdout the summary needs its own file
    if let Some(p) = &cfg.summary {
        write_json(Some(p), &sweep).map_err(Failure::numerical)?;
    } else if cfg.output.is_some() {
        write_json(None, &sweep).map_err(Failure::numerical)?;
    }
    if sweep.entries.iter().all(|e| e.result.is_none()) {
        return Err(Failure::numerical(anyhow::anyhow!(
            "no periodic orbit was found for any eps"
        )));
    }
    Ok(())
}

pub fn resonance(cfg: &RunConfig, model: VdpModel, lambda: f64, a_range: [f64; 2], n: usize) -> Result<(), Failure> {
    if n == 0 || n > MAX_CURVE_POINTS {
        return Err(Failure::usage(anyhow::anyhow!(
            "--n must be between 1 and {MAX_CURVE_POINTS}, got {n}"
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) || !(a_range[0] <= a_range[1]) || !a_range[1].is_finite() {
        return Err(Failure::usage(anyhow::anyhow!(
            "need finite lambda >= 0 and finite a range with LO <= HI"
        )));
    }
    let curve = resonance_curve(model, lambda, a_range, n, &root_options(cfg)).map_err(Failure::usage)?;
    for e in &curve.failures {
        eprintln!("pavg: {e}");
    }
    let mut w = sink(cfg.output.as_deref()).map_err(Failure::numerical)?;
    output::write_resonance_csv(&mut w, &curve.points).map_err(Failure::numerical)?;
    w.flush().map_err(Failure::numerical)?;
    if let Some(path) = &cfg.svg {
        let title = format!("{model} van der Pol, lambda = {lambda}");
        std::fs::write(path, output::resonance_svg(&curve.points, &title))
            .map_err(|e| Failure::numerical(anyhow::Error::new(e).context(format!("writing {}", path.display()))))?;
    }
    if curve.points.is_empty() {
        return Err(Failure::empty("no resonance points"));
    }
    Ok(())
}
