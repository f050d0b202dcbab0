//! Renders training-log CSVs to a simple SVG line plot.
//!
//! Each input file contributes one series per distinct `method` value if
//! that column exists, otherwise one series named after the file stem.
//! The x axis is the first column; the y axis prefers `nll_holdout`
//! (skipping rows where it is empty) and falls back to `nll_batch_post`,
//! then to `nll`, then to the last column.

use std::path::Path;

use crate::{HarnessError, Result};

/// One named polyline.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn parse_cell(cell: &str, line: usize, path: &Path) -> Result<f64> {
    cell.trim().parse().map_err(|_| {
        HarnessError::config(format!(
            "{}: line {line}: not a number: {cell:?}",
            path.display()
        ))
    })
}

/// Which column to read y values from, given a header.
fn pick_y_column(header: &[&str]) -> usize {
    for wanted in ["nll_holdout", "nll_batch_post", "nll"] {
        if let Some(i) = header.iter().position(|&h| h == wanted) {
            return i;
        }
    }
    header.len() - 1
}

/// Reads one CSV into series.  Rows with an empty y cell are skipped, so a
/// sparse holdout column plots only the evaluated iterations.
pub fn load_series(path: &Path) -> Result<Vec<Series>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::io(format!("reading {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| HarnessError::config(format!("{}: empty file", path.display())))?;
    let header: Vec<&str> = header_line.split(',').map(str::trim).collect();
    let y_col = pick_y_column(&header);
    let method_col = header.iter().position(|&h| h == "method");
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());

    let mut series: Vec<Series> = Vec::new();
    for (index, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(HarnessError::config(format!(
                "{}: line {}: expected {} columns, found {}",
                path.display(),
                index + 1,
                header.len(),
                cells.len()
            )));
        }
        if cells[y_col].trim().is_empty() {
            continue;
        }
        let x = parse_cell(cells[0], index + 1, path)?;
        let y = parse_cell(cells[y_col], index + 1, path)?;
        let label = match method_col {
            Some(c) => cells[c].trim().to_string(),
            None => stem.clone(),
        };
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((x, y)),
            None => series.push(Series {
                label,
                points: vec![(x, y)],
            }),
        }
    }
    if series.is_empty() {
        return Err(HarnessError::config(format!(
            "{}: no plottable rows",
            path.display()
        )));
    }
    Ok(series)
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 20.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn axis_ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| (hi - lo) / s <= 6.0)
        .unwrap_or(mag * 10.0);
    let mut ticks = Vec::new();
    let mut v = (lo / step).ceil() * step;
    while v <= hi + step * 1e-9 {
        ticks.push(v);
        v += step;
    }
    ticks
}

/// Renders series to an SVG document string.
pub fn render_svg(series: &[Series], title: &str) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(HarnessError::config("nothing to plot"));
    }
    let points = series.iter().flat_map(|s| s.points.iter());
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if x_hi == x_lo {
        x_hi = x_lo + 1.0;
    }
    if y_hi == y_lo {
        y_hi = y_lo + 1.0;
    }
    let pad = (y_hi - y_lo) * 0.05;
    y_lo -= pad;
    y_hi += pad;

    let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (WIDTH - MARGIN_L - MARGIN_R);
    let sy =
        |y: f64| HEIGHT - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));

    // Axes and ticks.
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    for tick in axis_ticks(x_lo, x_hi) {
        let x = sx(tick);
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n\
             <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{tick}</text>\n",
            y0 + 5.0,
            y0 + 18.0
        ));
    }
    for tick in axis_ticks(y_lo, y_hi) {
        let y = sy(tick);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{x0}\" y2=\"{y}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{tick:.4}</text>\n",
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">iteration</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 10.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">\
         negative log-likelihood</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"14\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        (x0 + x1) / 2.0,
        xml_escape(title)
    ));

    // Series polylines and legend.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            coords.join(" ")
        ));
        let ly = MARGIN_T + 16.0 + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n<text x=\"{}\" y=\"{}\">{}</text>\n",
            x1 - 150.0,
            x1 - 120.0,
            x1 - 112.0,
            ly + 4.0,
            xml_escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Loads every input CSV and writes one combined SVG.  Fails before
/// writing anything if any input is empty or malformed.
pub fn plot_files(inputs: &[std::path::PathBuf], output: &Path, title: &str) -> Result<()> {
    if inputs.is_empty() {
        return Err(HarnessError::config("no input files to plot"));
    }
    let mut series = Vec::new();
    for input in inputs {
        series.extend(load_series(input)?);
    }
    let svg = render_svg(&series, title)?;
    std::fs::write(output, svg)
        .map_err(|e| HarnessError::io(format!("writing {}: {e}", output.display())))?;
    Ok(())
}
