//! CSV tables and SVG penalty plots.

use std::fmt::Write as _;

use cpon_core::harness::{Architecture, PenaltyCurve};

pub const CSV_HEADER: &str = "architecture,filter,f_acc_ghz,budget_db,penalty_db,ber_at_threshold,ref_budget_db,seed_set_id";

fn num(v: f64, decimals: usize) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.decimals$}")
    }
}

pub fn csv(curves: &[PenaltyCurve], seed_set: u64) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in curves {
        for p in &c.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.architecture,
                c.filter,
                num(p.f_acc / 1e9, 3),
                num(p.budget_at_threshold, 4),
                num(p.penalty, 4),
                num(p.ber_residual, 6),
                num(c.reference_budget, 4),
                seed_set
            );
        }
    }
    out
}

/// File-name-safe version of a curve label.
pub fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn color(a: Architecture) -> &'static str {
    match a {
        Architecture::DualChannel => "#1f77b4",
        Architecture::SingleChannelTwoLaser => "#d62728",
        Architecture::SingleChannelOneLaser => "#2ca02c",
    }
}

/// Penalty versus frequency accuracy, one polyline per architecture.
/// Unreachable points are drawn as open markers on the top edge.
pub fn svg(filter: &str, curves: &[&PenaltyCurve]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 170.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);

    let x_max = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.f_acc / 1e9))
        .fold(1.0f64, f64::max);
    let finite_max = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.penalty))
        .filter(|p| p.is_finite())
        .fold(1.0f64, f64::max);
    let y_max = (finite_max * 2.0).ceil() / 2.0;
    let y_min = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.penalty))
        .filter(|p| p.is_finite())
        .fold(0.0f64, f64::min)
        .floor();
    let sx = |x: f64| left + x / x_max * pw;
    let sy = |y: f64| top + (y_max - y.clamp(y_min, y_max)) / (y_max - y_min) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{filter}</text>"#, left + pw / 2.0);

    let x_step = if x_max > 10.0 { 5.0 } else { 1.0 };
    let mut x = 0.0;
    while x <= x_max + 1e-9 {
        let px = sx(x);
        let _ = writeln!(s, r##"<line x1="{px:.1}" y1="{top}" x2="{px:.1}" y2="{:.1}" stroke="#ddd"/>"##, top + ph);
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#, top + ph + 16.0);
        x += x_step;
    }
    let y_step = if y_max - y_min > 4.0 { 1.0 } else { 0.5 };
    let mut y = y_min;
    while y <= y_max + 1e-9 {
        let py = sy(y);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y}</text>"#, left - 6.0, py + 4.0);
        y += y_step;
    }
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">f_acc [GHz]</text>"#, left + pw / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">penalty [dB]</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );

    for (i, c) in curves.iter().enumerate() {
        let col = color(c.architecture);
        let pts: Vec<String> = c
            .points
            .iter()
            .filter(|p| p.penalty.is_finite())
            .map(|p| format!("{:.1},{:.1}", sx(p.f_acc / 1e9), sy(p.penalty)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{col}" stroke-width="2"/>"#, pts.join(" "));
        for p in &c.points {
            let (px, py) = (sx(p.f_acc / 1e9), sy(p.penalty));
            let fill = if p.penalty.is_finite() { col } else { "white" };
            let _ = writeln!(s, r#"<circle cx="{px:.1}" cy="{py:.1}" r="3.5" fill="{fill}" stroke="{col}"/>"#);
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{col}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, c.architecture);
    }
    s.push_str("</svg>\n");
    s
}
