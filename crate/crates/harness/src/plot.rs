//! Convergence figures from trace files: gap against iteration and against
//! elapsed time, log scale, one series per trace.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSeries {
    pub label: String,
    pub iteration: Vec<f64>,
    pub elapsed: Vec<f64>,
    pub gap: Vec<f64>,
}

/// Parses the delimited trace format: `#` header lines, a column row, data rows.
pub fn read_trace(path: &Path) -> Result<TraceSeries, UsageError> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError::new(&origin, format!("cannot read: {e}")))?;
    parse_trace(&text, &origin)
}

pub fn parse_trace(text: &str, origin: &str) -> Result<TraceSeries, UsageError> {
    let mut label = None;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = loop {
        let line = lines
            .next()
            .ok_or_else(|| UsageError::new(origin, "no column header"))?;
        match line.strip_prefix('#') {
            Some(meta) => {
                if let Some((k, v)) = meta.split_once('=') {
                    if k.trim() == "solver" && label.is_none() {
                        label = Some(v.trim().to_string());
                    }
                }
            }
            None => break line,
        }
    };
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| UsageError::new(origin, format!("missing column {name:?}")))
    };
    let (ci, ce, cg) = (col("iter")?, col("elapsed_s")?, col("gap")?);
    let mut s = TraceSeries {
        label: label.unwrap_or_else(|| origin.to_string()),
        iteration: Vec::new(),
        elapsed: Vec::new(),
        gap: Vec::new(),
    };
    for (k, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        let get = |i: usize| {
            cells
                .get(i)
                .and_then(|c| c.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    UsageError::new(
                        origin,
                        format!("row {}: bad value in column {:?}", k + 1, columns[i]),
                    )
                })
        };
        s.iteration.push(get(ci)?);
        s.elapsed.push(get(ce)?);
        s.gap.push(get(cg)?);
    }
    if s.gap.is_empty() {
        return Err(UsageError::new(origin, "trace has no rows"));
    }
    Ok(s)
}

/// Writes `gap_vs_iteration.svg` and `gap_vs_time.svg` into `dir`.
pub fn render(series: &[TraceSeries], dir: &Path) -> Result<Vec<PathBuf>, UsageError> {
    if series.is_empty() {
        return Err(UsageError::new("traces", "at least one trace is required"));
    }
    std::fs::create_dir_all(dir).map_err(|e| UsageError::new("--out", e.to_string()))?;
    let mut out = Vec::new();
    for (file, xlabel, by_time) in [
        ("gap_vs_iteration.svg", "iteration", false),
        ("gap_vs_time.svg", "elapsed seconds", true),
    ] {
        let path = dir.join(file);
        draw(series, &path, xlabel, by_time)
            .map_err(|e| UsageError::new(file, format!("rendering failed: {e}")))?;
        out.push(path);
    }
    Ok(out)
}

/// `(x, |gap|)` with nonpositive gaps dropped, since the axis is logarithmic.
fn points(s: &TraceSeries, by_time: bool) -> Vec<(f64, f64)> {
    let xs = if by_time { &s.elapsed } else { &s.iteration };
    xs.iter()
        .zip(&s.gap)
        .filter(|(_, g)| g.abs() > 0.0 && g.is_finite())
        .map(|(x, g)| (*x, g.abs()))
        .collect()
}

fn draw(
    series: &[TraceSeries],
    path: &Path,
    xlabel: &str,
    by_time: bool,
) -> Result<(), Box<dyn std::error::Error>> {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| points(s, by_time)).collect();
    let x_hi = all.iter().map(|p| p.0).fold(0.0, f64::max).max(1e-9);
    let y_lo = all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y_hi = all.iter().map(|p| p.1).fold(0.0, f64::max);
    let (y_lo, y_hi) = if y_lo.is_finite() && y_hi > 0.0 {
        (y_lo * 0.5, y_hi * 2.0)
    } else {
        (1e-12, 1.0)
    };

    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("duality gap vs {xlabel}"), ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..x_hi, (y_lo..y_hi).log_scale())?;
    chart
        .configure_mesh()
        .x_desc(xlabel)
        .y_desc("gap")
        .y_label_formatter(&|y| format!("{y:.0e}"))
        .draw()?;
    for (k, s) in series.iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        chart
            .draw_series(LineSeries::new(points(s, by_time), color.stroke_width(2)))?
            .label(s.label.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2))
            });
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRACE: &str = "# solver = fw-brent\n# network = n\niter,elapsed_s,primal,dual,gap\n1,0.1,5,4,1\n2,0.2,5,4.5,0.5\n";

    #[test]
    fn parses_label_and_rows() {
        let s = parse_trace(TRACE, "t.csv").unwrap();
        assert_eq!(s.label, "fw-brent");
        assert_eq!(s.gap, vec![1.0, 0.5]);
    }

    #[test]
    fn missing_column_is_named() {
        let err = parse_trace(&TRACE.replace("elapsed_s", "seconds"), "t.csv").unwrap_err();
        assert!(err.message.contains("elapsed_s"), "{}", err.message);
    }

    #[test]
    fn empty_trace_is_an_error() {
        let err = parse_trace("# solver = x\niter,elapsed_s,gap\n", "t.csv").unwrap_err();
        assert!(err.message.contains("no rows"));
    }
}
