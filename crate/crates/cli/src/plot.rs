//! Minimal SVG line charts for forecast CSVs.

use std::fmt::Write as _;
use std::path::Path;

use crate::Failure;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 48.0;
const BOTTOM: f64 = 48.0;
const COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastSeries {
    pub step: Vec<f64>,
    pub prediction: Vec<f64>,
    pub truth: Option<Vec<f64>>,
}

/// Reads a `step,prediction[,truth]` file as written by `hyvae forecast`.
pub fn read_forecast_csv(path: &Path) -> Result<ForecastSeries, Failure> {
    let fail = |msg: String| Failure::data(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| fail(e.to_string()))?;
    let headers = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let step_col = col("step").ok_or_else(|| fail("no `step` column".into()))?;
    let pred_col = col("prediction").ok_or_else(|| fail("no `prediction` column".into()))?;
    let truth_col = col("truth");

    let mut out = ForecastSeries {
        step: Vec::new(),
        prediction: Vec::new(),
        truth: truth_col.map(|_| Vec::new()),
    };
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| fail(e.to_string()))?;
        let cell = |c: usize| -> Result<f64, Failure> {
            let s = record.get(c).unwrap_or("");
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| fail(format!("row {}: {s:?} is not a finite number", i + 2)))
        };
        out.step.push(cell(step_col)?);
        out.prediction.push(cell(pred_col)?);
        if let (Some(c), Some(t)) = (truth_col, out.truth.as_mut()) {
            t.push(cell(c)?);
        }
    }
    if out.step.is_empty() {
        return Err(fail("no data rows".into()));
    }
    Ok(out)
}

/// Round tick spacing giving roughly `target` intervals over `[lo, hi]`.
fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::EPSILON);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|f| f * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

pub fn render(title: &str, series: &[ForecastSeries], labels: &[String]) -> Result<String, Failure> {
    let first = series.first().ok_or_else(|| Failure::usage("nothing to plot"))?;
    let truth = first
        .truth
        .as_ref()
        .ok_or_else(|| Failure::data("the first input has no `truth` column (use `forecast --rolling`)"))?;

    let mut lines: Vec<(String, &str, &[f64], &[f64])> = vec![("truth".into(), "#000000", &first.step, truth)];
    for (i, s) in series.iter().enumerate() {
        lines.push((labels[i].clone(), COLORS[i % COLORS.len()], &s.step, &s.prediction));
    }

    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (_, _, xs, ys) in &lines {
        for (&x, &y) in xs.iter().zip(ys.iter()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let (y0, y1) = padded(y0, y1);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(w, r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{}</text>"#, WIDTH / 2.0, escape(title)).unwrap();

    for t in nice_ticks(y0, y1, 6) {
        let y = py(t);
        writeln!(w, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##, LEFT + pw).unwrap();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, label(t)).unwrap();
    }
    for t in nice_ticks(x0, x1, 8) {
        let x = px(t);
        writeln!(w, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#808080"/>"##, TOP + ph, TOP + ph + 5.0).unwrap();
        writeln!(w, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, label(t)).unwrap();
    }
    writeln!(w, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#808080"/>"##).unwrap();

    for (name, color, xs, ys) in &lines {
        let mut points = String::with_capacity(xs.len() * 16);
        for (&x, &y) in xs.iter().zip(ys.iter()) {
            write!(points, "{:.2},{:.2} ", px(x), py(y)).unwrap();
        }
        writeln!(
            w,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            points.trim_end(),
            escape(name)
        )
        .unwrap();
    }

    for (i, (name, color, _, _)) in lines.iter().enumerate() {
        let y = TOP + 14.0 + 16.0 * i as f64;
        let x = LEFT + 12.0;
        writeln!(w, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#, x + 20.0).unwrap();
        writeln!(w, r#"<text x="{}" y="{}">{}</text>"#, x + 26.0, y + 4.0, escape(name)).unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
