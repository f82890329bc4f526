//! SVG line charts of a metrics column against `step`.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Window of the smoothed overlay.
pub const MOVING_AVERAGE_ROWS: usize = 100;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: csv::Error },

    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },

    #[error("unknown column `{column}`; available: {}", available.join(", "))]
    UnknownColumn { column: String, available: Vec<String> },

    #[error("{0} has no `step` column")]
    NoStep(String),

    #[error("{0} has no data rows")]
    Empty(String),

    #[error("row {row}: `{value}` is not a number")]
    BadValue { row: usize, value: String },
}

fn read_series(csv_path: &Path, column: &str) -> Result<Vec<(f64, f64)>, PlotError> {
    let name = csv_path.display().to_string();
    let read_err = |source| PlotError::Read { path: name.clone(), source };
    let mut reader = csv::Reader::from_path(csv_path).map_err(read_err)?;
    let headers: Vec<String> = reader.headers().map_err(read_err)?.iter().map(str::to_owned).collect();
    let col = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| PlotError::UnknownColumn { column: column.to_owned(), available: headers.clone() })?;
    let step = headers.iter().position(|h| h == "step").ok_or_else(|| PlotError::NoStep(name.clone()))?;
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(read_err)?;
        let parse = |idx: usize| {
            let raw = record.get(idx).unwrap_or("");
            raw.trim().parse::<f64>().map_err(|_| PlotError::BadValue { row: i + 1, value: raw.to_owned() })
        };
        points.push((parse(step)?, parse(col)?));
    }
    if points.is_empty() {
        return Err(PlotError::Empty(name));
    }
    Ok(points)
}

/// Trailing mean over the last `window` finite values.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let lo = (i + 1).saturating_sub(window);
        let finite: Vec<f64> = values[lo..=i].iter().copied().filter(|v| v.is_finite()).collect();
        out.push(if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 });
    }
    out
}

/// Range of the finite values, widened by 5% on both sides. A degenerate
/// range is padded by 5% of its magnitude (or by 1 around zero).
fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) =
        values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let span = hi - lo;
    let pad = if span > 0.0 {
        0.05 * span
    } else if lo != 0.0 {
        0.05 * lo.abs()
    } else {
        1.0
    };
    (lo - pad, hi + pad)
}

fn polyline(points: &[(f64, f64)], x: (f64, f64), y: (f64, f64), style: &str) -> String {
    let sx = |v: f64| MARGIN + (v - x.0) / (x.1 - x.0) * (WIDTH - 2.0 * MARGIN);
    let sy = |v: f64| HEIGHT - MARGIN - (v - y.0) / (y.1 - y.0) * (HEIGHT - 2.0 * MARGIN);
    let coords: Vec<String> =
        points.iter().filter(|(_, v)| v.is_finite()).map(|&(s, v)| format!("{:.2},{:.2}", sx(s), sy(v))).collect();
    format!("<polyline fill=\"none\" {style} points=\"{}\"/>\n", coords.join(" "))
}

/// Renders `column` of a metrics CSV against `step`, with a moving-average
/// overlay, as a standalone SVG document.
pub fn render_svg(csv_path: &Path, column: &str) -> Result<String, PlotError> {
    let points = read_series(csv_path, column)?;
    let values: Vec<f64> = points.iter().map(|p| p.1).collect();
    let smooth: Vec<(f64, f64)> =
        points.iter().zip(moving_average(&values, MOVING_AVERAGE_ROWS)).map(|(&(s, _), m)| (s, m)).collect();
    let x = padded_range(points.iter().map(|p| p.0));
    let y = padded_range(values.iter().copied());

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(svg, "<path d=\"M{left},{top} V{bottom} H{right}\" stroke=\"black\" fill=\"none\"/>");
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">step</text>", WIDTH / 2.0, HEIGHT - 15.0);
    let _ = writeln!(
        svg,
        "<text x=\"15\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {})\">{column}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (v, py) in [(y.0, bottom), (y.1, top)] {
        let _ =
            writeln!(svg, "<text x=\"{}\" y=\"{py}\" text-anchor=\"end\" font-size=\"11\">{v:.3}</text>", left - 4.0);
    }
    for (v, px) in [(x.0, left), (x.1, right)] {
        let _ = writeln!(
            svg,
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{v:.0}</text>",
            bottom + 16.0
        );
    }
    svg.push_str(&polyline(&points, x, y, "stroke=\"#9ab\" stroke-width=\"1\""));
    svg.push_str(&polyline(&smooth, x, y, "stroke=\"#c30\" stroke-width=\"2\""));
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(csv_path: &Path, column: &str, out_path: &Path) -> Result<(), PlotError> {
    let svg = render_svg(csv_path, column)?;
    std::fs::write(out_path, svg).map_err(|source| PlotError::Write { path: out_path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_file(dir: &tempfile::TempDir, text: &str) -> std::path::PathBuf {
        let p = dir.path().join("m.csv");
        std::fs::write(&p, text).unwrap();
        p
    }

    fn first_polyline_points(svg: &str) -> Vec<(f64, f64)> {
        let start = svg.find("points=\"").unwrap() + 8;
        let end = start + svg[start..].find('"').unwrap();
        svg[start..end]
            .split_whitespace()
            .map(|p| {
                let (a, b) = p.split_once(',').unwrap();
                (a.parse().unwrap(), b.parse().unwrap())
            })
            .collect()
    }

    #[test]
    fn two_rows_give_two_points() {
        let dir = tempfile::tempdir().unwrap();
        let p = csv_file(&dir, "step,episode_return\n10,-3\n20,-1\n");
        let svg = render_svg(&p, "episode_return").unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
        let pts = first_polyline_points(&svg);
        assert_eq!(pts.len(), 2);
        assert!(pts[0].0 < pts[1].0, "step increases to the right");
        assert!(pts[0].1 > pts[1].1, "larger value drawn higher");
    }

    #[test]
    fn constant_column_is_padded() {
        assert_eq!(padded_range([2.0, 2.0].into_iter()), (1.9, 2.1));
        assert_eq!(padded_range([0.0].into_iter()), (-1.0, 1.0));
        let (lo, hi) = padded_range([0.0, 10.0].into_iter());
        assert!((lo + 0.5).abs() < 1e-12 && (hi - 10.5).abs() < 1e-12);
        let dir = tempfile::tempdir().unwrap();
        let p = csv_file(&dir, "step,loss\n1,0.5\n2,0.5\n3,0.5\n");
        let pts = first_polyline_points(&render_svg(&p, "loss").unwrap());
        assert!(pts.iter().all(|q| q.1.is_finite() && q.1 == pts[0].1));
    }

    #[test]
    fn unknown_column_lists_available() {
        let dir = tempfile::tempdir().unwrap();
        let p = csv_file(&dir, "step,loss\n1,0.5\n");
        let msg = render_svg(&p, "reward").unwrap_err().to_string();
        assert!(msg.contains("reward") && msg.contains("step, loss"), "{msg}");
    }

    #[test]
    fn header_only_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = csv_file(&dir, "step,loss\n");
        assert!(matches!(render_svg(&p, "loss"), Err(PlotError::Empty(_))));
    }

    #[test]
    fn nan_losses_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = csv_file(&dir, "step,loss\n1,NaN\n2,0.5\n3,0.25\n");
        assert_eq!(first_polyline_points(&render_svg(&p, "loss").unwrap()).len(), 2);
    }

    #[test]
    fn moving_average_window() {
        let m = moving_average(&[1.0, 3.0, 5.0, f64::NAN], 2);
        assert_eq!(&m[..3], &[1.0, 2.0, 4.0]);
        assert_eq!(m[3], 5.0);
    }
}
