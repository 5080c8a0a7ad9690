//! CSV and SVG emission.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use pavg_core::averaging::RootResult;
use pavg_core::orbit::SweepResult;
use pavg_core::vdp::ResonancePoint;

pub const RESONANCE_HEADER: &str = "a,lambda,A,M,N,phi,ineq6,ineq7,hurwitz,stable,degenerate";

/// File at `path`, or stdout.
pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// 17 significant digits, so values round-trip.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_resonance_csv(w: &mut dyn Write, points: &[ResonancePoint]) -> io::Result<()> {
    writeln!(w, "{RESONANCE_HEADER}")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            num(p.a),
            num(p.lambda),
            num(p.amplitude),
            num(p.m),
            num(p.n),
            num(p.phi),
            num(p.ineq6),
            num(p.ineq7),
            p.hurwitz_numeric,
            p.stable,
            p.degenerate
        )?;
    }
    w.flush()
}

pub fn write_roots_csv(w: &mut dyn Write, dim: usize, roots: &[RootResult]) -> io::Result<()> {
    let coords: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    writeln!(
        w,
        "{},residual,iterations,converged,condition,near_singular",
        coords.join(",")
    )?;
    for r in roots {
        let v: Vec<String> = r.v0.iter().map(|x| num(*x)).collect();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            v.join(","),
            num(r.residual),
            r.iterations,
            r.converged,
            num(r.condition),
            r.near_singular
        )?;
    }
    w.flush()
}

/// One row per `eps`; failed entries leave the numeric columns empty and
/// carry the error message (commas replaced) in the last column.
pub fn write_sweep_csv(w: &mut dyn Write, dim: usize, sweep: &SweepResult) -> io::Result<()> {
    let coords: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    let mults: Vec<String> = (1..=dim).map(|i| format!("multiplier{i}_abs")).collect();
    writeln!(
        w,
        "eps,{},residual,residual_refined,{},stable,class,status,iterations,dist_to_v0,error",
        coords.join(","),
        mults.join(",")
    )?;
    for e in &sweep.entries {
        match &e.result {
            Some(r) => {
                let x: Vec<String> = r.fixed_point.iter().map(|v| num(*v)).collect();
                let m: Vec<String> = r.multipliers.iter().map(|z| num(z.norm())).collect();
                let class = serde_json::to_value(r.class).map_err(io::Error::other)?;
                let status = serde_json::to_value(r.status).map_err(io::Error::other)?;
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{},",
                    num(e.eps),
                    x.join(","),
                    num(r.residual),
                    num(r.residual_refined),
                    m.join(","),
                    r.stable,
                    class.as_str().unwrap_or_default(),
                    status.as_str().unwrap_or_default(),
                    r.iterations,
                    num(r.dist_to_v0)
                )?;
            }
            None => {
                let blanks = ",".repeat(2 * dim + 7);
                let msg = e.error.as_deref().unwrap_or("failed").replace([',', '\n'], ";");
                writeln!(w, "{}{blanks},{msg}", num(e.eps))?;
            }
        }
    }
    w.flush()
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const MARK: f64 = 3.0;

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.03 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Amplitude against detuning: stable points solid, unstable hollow,
/// degenerate crossed.
pub fn resonance_svg(points: &[ResonancePoint], title: &str) -> String {
    let (a_lo, a_hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.a), h.max(p.a)));
    let (x0, x1) = if points.is_empty() {
        (-1.0, 1.0)
    } else {
        padded(a_lo, a_hi)
    };
    let top = points.iter().map(|p| p.amplitude).fold(0.0, f64::max);
    let (y0, y1) = (0.0, if top > 0.0 { 1.08 * top } else { 1.0 });
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * (WIDTH - LEFT - RIGHT);
    let sy = |y: f64| HEIGHT - BOTTOM - (y - y0) / (y1 - y0) * (HEIGHT - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    // axes box and ticks
    let (bx0, bx1, by0, by1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        s,
        r#"<polyline points="{bx0},{by0} {bx0},{by1} {bx1},{by1} {bx1},{by0} {bx0},{by0}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r#"<polyline points="{px:.2},{by1} {px:.2},{:.2}" stroke="black"/>"#,
            by1 + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{xv:.3}</text>"#,
            by1 + 18.0
        );
        let _ = writeln!(
            s,
            r#"<polyline points="{bx0},{py:.2} {:.2},{py:.2}" stroke="black"/>"#,
            bx0 - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.3}</text>"#,
            bx0 - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">a</text>"#,
        (bx0 + bx1) / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">A</text>"#,
        (by0 + by1) / 2.0,
        (by0 + by1) / 2.0
    );

    for p in points {
        mark(&mut s, sx(p.a), sy(p.amplitude), p);
    }

    // legend
    let lx = bx1 - 110.0;
    for (i, (label, kind)) in [("stable", 0), ("unstable", 1), ("degenerate", 2)]
        .into_iter()
        .enumerate()
    {
        let ly = by0 + 16.0 + 16.0 * i as f64;
        shape(&mut s, lx, ly - 4.0, kind);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}">{label}</text>"#, lx + 10.0);
    }
    s.push_str("</svg>\n");
    s
}

fn mark(s: &mut String, x: f64, y: f64, p: &ResonancePoint) {
    let kind = if p.degenerate {
        2
    } else if p.stable {
        0
    } else {
        1
    };
    shape(s, x, y, kind);
}

fn shape(s: &mut String, x: f64, y: f64, kind: u8) {
    let _ = match kind {
        0 => writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{MARK}" fill="black"/>"#),
        1 => writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{MARK}" fill="none" stroke="black"/>"#
        ),
        _ => writeln!(
            s,
            r#"<polyline points="{:.2},{:.2} {:.2},{:.2}" stroke="black"/><polyline points="{:.2},{:.2} {:.2},{:.2}" stroke="black"/>"#,
            x - MARK,
            y - MARK,
            x + MARK,
            y + MARK,
            x - MARK,
            y + MARK,
            x + MARK,
            y - MARK
        ),
    };
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
