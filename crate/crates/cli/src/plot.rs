//! SVG hull maps: green safe boxes, red unsafe boxes, yellow unknown boxes.
//!
//! Output is byte-deterministic for a fixed result file: hulls are drawn in
//! inventory order and all coordinates are formatted with fixed precision.

use anyhow::bail;

use probhull::bounds::Status;

use crate::output::{HullJson, ResultJson};

pub const COLOR_SAFE: &str = "#2e7d32";
pub const COLOR_UNSAFE: &str = "#c62828";
pub const COLOR_UNKNOWN: &str = "#f9a825";

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

pub fn result_to_svg(result: &ResultJson, dims: (usize, usize)) -> anyhow::Result<String> {
    let Some(hulls) = &result.hulls else {
        bail!("result file has no hull geometry; rerun verify with --emit-hulls");
    };
    let all: Vec<(Status, &HullJson)> = HullJson::status_partition(hulls).collect();

    let input_dim = all.first().map_or(2, |(_, h)| h.lower.len());
    let (dx, dy) = dims;
    if dx >= input_dim || dy >= input_dim || dx == dy {
        bail!("plot dims ({dx},{dy}) invalid for input dimension {input_dim}");
    }
    // Exact map in 2-D; higher dimensions are projected with a transparency
    // cue since projected boxes overlap.
    let exact = input_dim == 2;
    let opacity = if exact { "0.85" } else { "0.35" };

    let (mut x_min, mut x_max, mut y_min, mut y_max) = (0.0_f64, 1.0_f64, 0.0_f64, 1.0_f64);
    if let Some((_, first)) = all.first() {
        x_min = first.lower[dx];
        x_max = first.upper[dx];
        y_min = first.lower[dy];
        y_max = first.upper[dy];
        for (_, h) in &all {
            x_min = x_min.min(h.lower[dx]);
            x_max = x_max.max(h.upper[dx]);
            y_min = y_min.min(h.lower[dy]);
            y_max = y_max.max(h.upper[dy]);
        }
    }
    let x_span = (x_max - x_min).max(1e-12);
    let y_span = (y_max - y_min).max(1e-12);
    let px = |x: f64| MARGIN + (x - x_min) / x_span * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y_min) / y_span * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    for (status, h) in &all {
        let color = match status {
            Status::Safe => COLOR_SAFE,
            Status::Unsafe => COLOR_UNSAFE,
            Status::Unknown => COLOR_UNKNOWN,
        };
        let x = px(h.lower[dx]);
        let y = py(h.upper[dy]);
        let w = px(h.upper[dx]) - x;
        let hgt = py(h.lower[dy]) - y;
        svg.push_str(&format!(
            "<rect class=\"hull\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{hgt:.2}\" fill=\"{color}\" fill-opacity=\"{opacity}\" stroke=\"#333333\" stroke-width=\"0.4\"/>\n"
        ));
    }

    // Axes with end labels.
    let axis_y = HEIGHT - MARGIN;
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{axis_y}\" x2=\"{:.2}\" y2=\"{axis_y}\" stroke=\"black\" stroke-width=\"1\"/>\n",
        WIDTH - MARGIN
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{axis_y}\" stroke=\"black\" stroke-width=\"1\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{MARGIN}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{x_min:.4}</text>\n",
        axis_y + 18.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{x_max:.4}</text>\n",
        WIDTH - MARGIN,
        axis_y + 18.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{axis_y}\" font-size=\"12\" text-anchor=\"end\">{y_min:.4}</text>\n",
        MARGIN - 6.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{MARGIN}\" font-size=\"12\" text-anchor=\"end\">{y_max:.4}</text>\n",
        MARGIN - 6.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\">x{dx}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 16.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">x{dy}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));

    // Legend (circle swatches; rect elements are reserved for hulls).
    let legend = [
        (COLOR_SAFE, "safe"),
        (COLOR_UNSAFE, "unsafe"),
        (COLOR_UNKNOWN, "unknown"),
    ];
    for (i, (color, label)) in legend.iter().enumerate() {
        let y = 20.0 + 18.0 * i as f64;
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{y:.2}\" r=\"6\" fill=\"{color}\"/>\n",
            WIDTH - 130.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{label}</text>\n",
            WIDTH - 118.0,
            y + 4.0
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}
