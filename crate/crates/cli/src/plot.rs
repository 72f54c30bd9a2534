use std::path::Path;

use plotters::prelude::*;

use crate::bundle::write_atomic;
use crate::exit::CliError;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Static SVG overlay of several time series, with optional dashed
/// horizontal reference levels. Text is emitted as plain SVG elements so no
/// font backend is needed.
pub fn overlay(path: &Path, title: &str, series: &[Series], references: &[f64]) -> Result<(), CliError> {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in series.iter().flat_map(|s| s.points.iter()) {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    for r in references {
        y0 = y0.min(*r);
        y1 = y1.max(*r);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, -1.0, 1.0);
    }
    let pad = ((y1 - y0) * 0.05).max(1e-9);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (960, 540)).into_drawing_area();
        let draw_err = |e: DrawingAreaErrorKind<_>| CliError::io("plot", e);
        root.fill(&WHITE).map_err(draw_err)?;
        let mut chart = ChartBuilder::on(&root)
            .margin_top(50)
            .margin_bottom(40)
            .margin_left(90)
            .margin_right(220)
            .build_cartesian_2d(x0..x1.max(x0 + 1e-9), (y0 - pad)..(y1 + pad))
            .map_err(draw_err)?;
        let frame = [(x0, y0 - pad), (x1, y0 - pad), (x1, y1 + pad), (x0, y1 + pad), (x0, y0 - pad)];
        chart.draw_series(LineSeries::new(frame, BLACK.stroke_width(1))).map_err(draw_err)?;
        for (i, s) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart.draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2))).map_err(draw_err)?;
        }
        for r in references {
            chart
                .draw_series(DashedLineSeries::new(vec![(x0, *r), (x1, *r)], 8, 6, BLACK.stroke_width(1)))
                .map_err(draw_err)?;
        }
        root.present().map_err(draw_err)?;
    }
    let mut text = format!(
        "<text x=\"480\" y=\"30\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"18\">{}</text>\n",
        escape(title)
    );
    let label = |x: f64, y: f64, anchor: &str, body: String| {
        format!("<text x=\"{x}\" y=\"{y}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"13\">{body}</text>\n")
    };
    text += &label(90.0, 520.0, "middle", format!("{x0:.3}"));
    text += &label(740.0, 520.0, "middle", format!("t = {x1:.3}"));
    text += &label(84.0, 500.0, "end", format!("{:.3e}", y0 - pad));
    text += &label(84.0, 58.0, "end", format!("{:.3e}", y1 + pad));
    for (i, s) in series.iter().enumerate() {
        let y = 70.0 + 18.0 * i as f64;
        let RGBColor(r, g, b) = PALETTE[i % PALETTE.len()];
        text += &format!("<line x1=\"752\" y1=\"{}\" x2=\"772\" y2=\"{}\" stroke=\"rgb({r},{g},{b})\" stroke-width=\"2\"/>\n", y - 4.0, y - 4.0);
        text += &label(778.0, y, "start", escape(&s.label));
    }
    let svg = match svg.rfind("</svg>") {
        Some(i) => format!("{}{}{}", &svg[..i], text, &svg[i..]),
        None => svg,
    };
    write_atomic(path, svg.as_bytes())
}
