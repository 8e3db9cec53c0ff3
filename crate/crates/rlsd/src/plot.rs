//! Line charts from `x,y` CSV curves, rendered as standalone SVG.
//!
//! The CSV is the normative artifact; the SVG is a convenience rendering
//! (fixed canvas, one polyline, min/max axis labels).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("line {line}: expected two comma-separated numbers, got {text:?}")]
    BadRow { line: usize, text: String },
    #[error("no data rows")]
    Empty,
}

/// Parse a two-column CSV. A single header row (any non-numeric first line,
/// e.g. `x,y` or `epoch,loss`) is skipped.
pub fn parse_xy_csv(text: &str) -> Result<Vec<(f64, f64)>, PlotError> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)));
        match parsed {
            Some(p) => points.push(p),
            None if i == 0 => continue, // header
            None => return Err(PlotError::BadRow { line: i + 1, text: raw.to_string() }),
        }
    }
    if points.is_empty() {
        return Err(PlotError::Empty);
    }
    Ok(points)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if (hi - lo).abs() < 1e-12 {
        // Flat data still needs a nonzero extent to land mid-canvas.
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Render one polyline chart. Points are plotted in input order.
pub fn render_svg(points: &[(f64, f64)], title: &str) -> String {
    let (x_lo, x_hi) = span(points.iter().map(|p| p.0));
    let (y_lo, y_hi) = span(points.iter().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let path: Vec<String> =
        points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    if !title.is_empty() {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" \
             font-family=\"sans-serif\">{}</text>\n",
            WIDTH / 2.0,
            escape(title)
        ));
    }
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b:.1}\" x2=\"{r:.1}\" y2=\"{b:.1}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b:.1}\" stroke=\"black\"/>\n",
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
    ));
    // Extent labels.
    for (x, y, anchor, value) in [
        (MARGIN, HEIGHT - MARGIN + 18.0, "middle", x_lo),
        (WIDTH - MARGIN, HEIGHT - MARGIN + 18.0, "middle", x_hi),
        (MARGIN - 6.0, HEIGHT - MARGIN + 4.0, "end", y_lo),
        (MARGIN - 6.0, MARGIN + 4.0, "end", y_hi),
    ] {
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\" font-size=\"12\" \
             font-family=\"sans-serif\">{value:.4}</text>\n"
        ));
    }
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#1a6fb0\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        path.join(" ")
    ));
    svg.push_str("</svg>\n");
    svg
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
