//! Minimal line charts written as SVG text. Output depends only on the input
//! table, so identical CSV gives identical bytes.

use std::fmt::Write;

use dockflight_core::sim::telemetry::Table;

const W: f64 = 860.0;
const H: f64 = 320.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 45.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// A named chart: file stem, title, y label and the columns it draws.
pub struct Panel {
    pub name: &'static str,
    pub title: &'static str,
    pub unit: &'static str,
    pub columns: &'static [&'static str],
}

pub const PANELS: [Panel; 4] = [
    Panel { name: "thrusts", title: "Rotor thrust commands", unit: "N", columns: &["u0_l1", "u0_l2", "u0_l3", "u0_l4", "u1_l1", "u1_l2", "u1_l3", "u1_l4"] },
    Panel { name: "altitude_error", title: "Altitude error of the controlled point", unit: "m", columns: &["ez"] },
    Panel { name: "torque", title: "Requested torque", unit: "N m", columns: &["tau_x", "tau_y", "tau_z"] },
    Panel { name: "transition", title: "Transition weight and thrust scale", unit: "-", columns: &["w", "scale"] },
];

/// Round step (1, 2 or 5 times a power of ten) giving about `n` ticks.
fn nice_step(span: f64, n: f64) -> f64 {
    let raw = span / n;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r < 1.5 {
        1.0
    } else if r < 3.5 {
        2.0
    } else if r < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Render one panel; `None` when none of its columns has finite data.
pub fn render(table: &Table, panel: &Panel) -> Option<String> {
    let t = table.column("t")?;
    let series: Vec<(&str, &[f64])> = panel.columns.iter().filter_map(|c| table.column(c).map(|v| (*c, v))).collect();
    let finite = series.iter().flat_map(|(_, v)| v.iter()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() || t.is_empty() {
        return None;
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let (t0, t1) = (t[0], t[t.len() - 1].max(t[0] + 1e-9));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let x = |v: f64| LEFT + (v - t0) / (t1 - t0) * pw;
    let y = |v: f64| TOP + (hi - v) / (hi - lo) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r##"<rect width="{W}" height="{H}" fill="#ffffff"/>"##);
    let _ = writeln!(s, r#"<text x="{}" y="18" font-size="13">{}</text>"#, LEFT, panel.title);
    let _ = writeln!(s, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##);
    let ys = nice_step(hi - lo, 5.0);
    let mut v = (lo / ys).ceil() * ys;
    while v <= hi {
        let py = y(v);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, py + 4.0, num(v));
        v += ys;
    }
    let xs = nice_step(t1 - t0, 8.0);
    let mut v = (t0 / xs).ceil() * xs;
    while v <= t1 + 1e-9 {
        let px = x(v);
        let _ = writeln!(s, r##"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{:.2}" stroke="#eee"/>"##, TOP + ph);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, num(v));
        v += xs;
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t (s)</text>"#, LEFT + pw / 2.0, H - 8.0);
    let _ = writeln!(s, r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#, TOP + ph / 2.0, TOP + ph / 2.0, panel.unit);

    for (k, (name, vals)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        // NaN gaps split the trace into separate polylines
        let mut runs: Vec<Vec<String>> = vec![Vec::new()];
        for (ti, vi) in t.iter().zip(vals.iter()) {
            if vi.is_finite() {
                runs.last_mut().expect("non-empty").push(format!("{:.2},{:.2}", x(*ti), y(*vi)));
            } else if !runs.last().expect("non-empty").is_empty() {
                runs.push(Vec::new());
            }
        }
        for run in runs.iter().filter(|r| !r.is_empty()) {
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, run.join(" "));
        }
        let ly = TOP + 14.0 * k as f64 + 8.0;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, lx + 24.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// All panels with data, as `(file name, svg)`.
pub fn render_all(table: &Table) -> Vec<(String, String)> {
    PANELS.iter().filter_map(|p| render(table, p).map(|svg| (format!("{}.svg", p.name), svg))).collect()
}
