use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::sweep::{read_sweep_csv, Metric};

const CELL: f64 = 48.0;
const LEFT: f64 = 110.0;
const TOP: f64 = 40.0;
const BAR_WIDTH: f64 = 18.0;

/// Viridis control points.
const STOPS: [(f64, [f64; 3]); 5] = [
    (0.00, [68.0, 1.0, 84.0]),
    (0.25, [59.0, 82.0, 139.0]),
    (0.50, [33.0, 145.0, 140.0]),
    (0.75, [94.0, 201.0, 98.0]),
    (1.00, [253.0, 231.0, 37.0]),
];

fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let i = STOPS.iter().rposition(|s| s.0 <= t).unwrap_or(0).min(STOPS.len() - 2);
    let (t0, c0) = STOPS[i];
    let (t1, c1) = STOPS[i + 1];
    let f = (t - t0) / (t1 - t0);
    let ch = |k: usize| (c0[k] + f * (c1[k] - c0[k])).round() as u8;
    format!("#{:02x}{:02x}{:02x}", ch(0), ch(1), ch(2))
}

fn is_log_spaced(values: &[f64]) -> bool {
    if values.len() < 3 || values.iter().any(|&v| v <= 0.0) {
        return false;
    }
    let r = values[1] / values[0];
    r > 1.0 && values.windows(2).all(|w| ((w[1] / w[0]) / r - 1.0).abs() < 1e-6)
}

fn label(v: f64, log: bool) -> String {
    if log || v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn unique_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    v
}

/// SVG heatmap of one metric from sweep CSV text: param1 along x, param2
/// along y (increasing upwards), one rect per cell. Failed or missing cells
/// are grey. Output depends only on the input bytes.
pub fn render_heatmap(csv: &str, metric: &str) -> Result<String> {
    let metric = match metric {
        "nrmse" => Metric::Nrmse,
        "ipc_total" => Metric::IpcTotal,
        other => return Err(Error::config(format!("unknown metric '{other}'"))),
    };
    let (names, rows) = read_sweep_csv(csv.as_bytes())?;
    let rows: Vec<_> = rows.into_iter().filter(|r| r.metric == metric).collect();
    if rows.is_empty() {
        return Err(Error::Format(format!("no rows for metric '{}'", metric.name())));
    }
    let xs = unique_sorted(rows.iter().map(|r| r.param1));
    let ys = unique_sorted(rows.iter().map(|r| r.param2));
    let finite: Vec<f64> = rows.iter().map(|r| r.value).filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (x_log, y_log) = (is_log_spaced(&xs), is_log_spaced(&ys));
    let (x_name, y_name) = names.unwrap_or_else(|| ("param1".into(), "param2".into()));

    let width = LEFT + CELL * xs.len() as f64 + 120.0;
    let height = TOP + CELL * ys.len() as f64 + 90.0;
    let plot_bottom = TOP + CELL * ys.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        LEFT + CELL * xs.len() as f64 / 2.0,
        metric.name()
    );
    let index = |vals: &[f64], v: f64| vals.iter().position(|&x| x == v).expect("value from set");
    let mut filled = vec![vec![None; ys.len()]; xs.len()];
    for r in &rows {
        filled[index(&xs, r.param1)][index(&ys, r.param2)] = Some(r.value);
    }
    for (i, col) in filled.iter().enumerate() {
        for (j, cell) in col.iter().enumerate() {
            let fill = match cell {
                Some(v) if v.is_finite() => {
                    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                    color(t)
                }
                _ => "#bdbdbd".to_string(),
            };
            let x = LEFT + CELL * i as f64;
            let y = plot_bottom - CELL * (j + 1) as f64;
            let title = match cell {
                Some(v) => format!("{} = {}, {} = {}: {}", x_name, xs[i], y_name, ys[j], v),
                None => "missing".to_string(),
            };
            let _ = writeln!(
                svg,
                r#"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}"><title>{}</title></rect>"#,
                escape(&title)
            );
        }
    }
    for (i, &v) in xs.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + CELL * (i as f64 + 0.5),
            plot_bottom + 16.0,
            label(v, x_log)
        );
    }
    for (j, &v) in ys.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            plot_bottom - CELL * (j as f64 + 0.5) + 4.0,
            label(v, y_log)
        );
    }
    let scale_note = |log: bool| if log { " (log scale)" } else { "" };
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}{}</text>"#,
        LEFT + CELL * xs.len() as f64 / 2.0,
        plot_bottom + 40.0,
        escape(&x_name),
        scale_note(x_log)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{1}{2}</text>"#,
        TOP + CELL * ys.len() as f64 / 2.0,
        escape(&y_name),
        scale_note(y_log)
    );

    // colour bar
    let bar_x = LEFT + CELL * xs.len() as f64 + 24.0;
    let bar_h = CELL * ys.len() as f64;
    let steps = 32;
    let _ = writeln!(svg, r#"<g class="colorbar">"#);
    for k in 0..steps {
        let t = k as f64 / (steps - 1) as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{bar_x}" y="{}" width="{BAR_WIDTH}" height="{}" fill="{}"/>"#,
            TOP + bar_h * (1.0 - (k + 1) as f64 / steps as f64),
            bar_h / steps as f64 + 0.5,
            color(t)
        );
    }
    let _ = writeln!(svg, "</g>");
    let (lo_text, hi_text) = if finite.is_empty() {
        ("n/a".to_string(), "n/a".to_string())
    } else {
        (format!("{lo:.4}"), format!("{hi:.4}"))
    };
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}">{hi_text}</text>"#,
        bar_x + BAR_WIDTH + 4.0,
        TOP + 8.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}">{lo_text}</text>"#,
        bar_x + BAR_WIDTH + 4.0,
        TOP + bar_h
    );
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}
