//! Deterministic SVG figure emission: confusion/transfer heatmaps,
//! shots-vs-accuracy curves, and the categorical winner grid. Plain string
//! assembly keeps re-runs byte-identical.

use std::fmt::Write;

const CELL: f64 = 34.0;
const MARGIN_LEFT: f64 = 150.0;
const MARGIN_TOP: f64 = 60.0;

/// Five-stop sequential colormap (dark blue → yellow).
fn heat_color(v: f64) -> String {
    let stops = [
        (68, 1, 84),
        (59, 82, 139),
        (33, 145, 140),
        (94, 201, 98),
        (253, 231, 37),
    ];
    let v = v.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let i = (v.floor() as usize).min(stops.len() - 2);
    let t = v - i as f64;
    let lerp = |a: i32, b: i32| (a as f64 + t * (b - a) as f64).round() as i32;
    format!(
        "rgb({},{},{})",
        lerp(stops[i].0, stops[i + 1].0),
        lerp(stops[i].1, stops[i + 1].1),
        lerp(stops[i].2, stops[i + 1].2)
    )
}

fn svg_header(width: f64, height: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{:.0}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        width / 2.0,
        xml_escape(title)
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Heatmap of values in [0, 1] with row/column labels; cell values printed
/// when the grid is small enough to stay legible.
pub fn heatmap_svg(
    values: &[Vec<Option<f64>>],
    row_labels: &[String],
    col_labels: &[String],
    title: &str,
) -> String {
    let rows = values.len();
    let cols = col_labels.len();
    let width = MARGIN_LEFT + cols as f64 * CELL + 40.0;
    let height = MARGIN_TOP + rows as f64 * CELL + 120.0;
    let mut out = svg_header(width, height, title);
    let print_values = rows <= 20 && cols <= 20;
    for (i, row) in values.iter().enumerate() {
        let y = MARGIN_TOP + i as f64 * CELL;
        let _ = writeln!(
            out,
            "<text x=\"{:.0}\" y=\"{:.0}\" font-size=\"10\" text-anchor=\"end\">{}</text>",
            MARGIN_LEFT - 6.0,
            y + CELL / 2.0 + 3.0,
            xml_escape(&row_labels[i])
        );
        for (j, cell) in row.iter().enumerate() {
            let x = MARGIN_LEFT + j as f64 * CELL;
            match cell {
                Some(v) => {
                    let _ = writeln!(
                        out,
                        "<rect x=\"{x:.0}\" y=\"{y:.0}\" width=\"{CELL:.0}\" height=\"{CELL:.0}\" \
                         fill=\"{}\" stroke=\"white\"/>",
                        heat_color(*v)
                    );
                    if print_values {
                        let text_fill = if *v > 0.6 { "black" } else { "white" };
                        let _ = writeln!(
                            out,
                            "<text x=\"{:.0}\" y=\"{:.0}\" font-size=\"9\" fill=\"{text_fill}\" \
                             text-anchor=\"middle\">{:.2}</text>",
                            x + CELL / 2.0,
                            y + CELL / 2.0 + 3.0,
                            v
                        );
                    }
                }
                None => {
                    let _ = writeln!(
                        out,
                        "<rect x=\"{x:.0}\" y=\"{y:.0}\" width=\"{CELL:.0}\" height=\"{CELL:.0}\" \
                         fill=\"#dddddd\" stroke=\"white\"/>\n\
                         <text x=\"{:.0}\" y=\"{:.0}\" font-size=\"9\" text-anchor=\"middle\">–</text>",
                        x + CELL / 2.0,
                        y + CELL / 2.0 + 3.0
                    );
                }
            }
        }
    }
    for (j, label) in col_labels.iter().enumerate() {
        let x = MARGIN_LEFT + j as f64 * CELL + CELL / 2.0;
        let y = MARGIN_TOP + rows as f64 * CELL + 8.0;
        let _ = writeln!(
            out,
            "<text x=\"{x:.0}\" y=\"{y:.0}\" font-size=\"10\" text-anchor=\"end\" \
             transform=\"rotate(-60 {x:.0} {y:.0})\">{}</text>",
            xml_escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Shots-vs-accuracy curves: one polyline per method over log2-spaced shot
/// counts, plus optional horizontal baselines (zero-shot).
pub fn curves_svg(
    shots: &[usize],
    series: &[(String, Vec<Option<f64>>)],
    baselines: &[(String, f64)],
    title: &str,
) -> String {
    let width = 560.0;
    let height = 400.0;
    let plot_x0 = 70.0;
    let plot_y0 = 50.0;
    let plot_w = width - plot_x0 - 30.0;
    let plot_h = height - plot_y0 - 70.0;
    let mut out = svg_header(width, height, title);
    let colors = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

    let x_of = |i: usize| plot_x0 + plot_w * i as f64 / (shots.len().max(2) - 1) as f64;
    let y_of = |acc: f64| plot_y0 + plot_h * (1.0 - acc.clamp(0.0, 1.0));

    // axes and gridlines
    let _ = writeln!(
        out,
        "<line x1=\"{plot_x0:.0}\" y1=\"{plot_y0:.0}\" x2=\"{plot_x0:.0}\" y2=\"{:.0}\" stroke=\"black\"/>\n\
         <line x1=\"{plot_x0:.0}\" y1=\"{:.0}\" x2=\"{:.0}\" y2=\"{:.0}\" stroke=\"black\"/>",
        plot_y0 + plot_h,
        plot_y0 + plot_h,
        plot_x0 + plot_w,
        plot_y0 + plot_h
    );
    for tick in 0..=10 {
        let acc = tick as f64 / 10.0;
        let y = y_of(acc);
        let _ = writeln!(
            out,
            "<line x1=\"{plot_x0:.0}\" y1=\"{y:.1}\" x2=\"{:.0}\" y2=\"{y:.1}\" stroke=\"#eeeeee\"/>\n\
             <text x=\"{:.0}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{:.0}%</text>",
            plot_x0 + plot_w,
            plot_x0 - 6.0,
            y + 3.0,
            acc * 100.0
        );
    }
    for (i, &s) in shots.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.0}\" font-size=\"10\" text-anchor=\"middle\">{s}</text>",
            x_of(i),
            plot_y0 + plot_h + 16.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.0}\" y=\"{:.0}\" font-size=\"11\" text-anchor=\"middle\">shots per class</text>",
        plot_x0 + plot_w / 2.0,
        plot_y0 + plot_h + 36.0
    );

    let mut legend_y = plot_y0 + 4.0;
    for (k, (name, accs)) in series.iter().enumerate() {
        let color = colors[k % colors.len()];
        let points: Vec<String> = accs
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.map(|acc| format!("{:.1},{:.1}", x_of(i), y_of(acc))))
            .collect();
        if points.len() > 1 {
            let _ = writeln!(
                out,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
                points.join(" ")
            );
        }
        for p in &points {
            let mut it = p.split(',');
            let (x, y) = (it.next().unwrap(), it.next().unwrap());
            let _ = writeln!(out, "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"{color}\"/>");
        }
        let _ = writeln!(
            out,
            "<rect x=\"{:.0}\" y=\"{:.1}\" width=\"12\" height=\"4\" fill=\"{color}\"/>\n\
             <text x=\"{:.0}\" y=\"{:.1}\" font-size=\"10\">{}</text>",
            plot_x0 + plot_w - 120.0,
            legend_y,
            plot_x0 + plot_w - 104.0,
            legend_y + 6.0,
            xml_escape(name)
        );
        legend_y += 14.0;
    }
    for (k, (name, acc)) in baselines.iter().enumerate() {
        let color = colors[(series.len() + k) % colors.len()];
        let y = y_of(*acc);
        let _ = writeln!(
            out,
            "<line x1=\"{plot_x0:.0}\" y1=\"{y:.1}\" x2=\"{:.0}\" y2=\"{y:.1}\" \
             stroke=\"{color}\" stroke-dasharray=\"6,3\"/>",
            plot_x0 + plot_w
        );
        let _ = writeln!(
            out,
            "<rect x=\"{:.0}\" y=\"{:.1}\" width=\"12\" height=\"4\" fill=\"{color}\"/>\n\
             <text x=\"{:.0}\" y=\"{:.1}\" font-size=\"10\">{}</text>",
            plot_x0 + plot_w - 120.0,
            legend_y,
            plot_x0 + plot_w - 104.0,
            legend_y + 6.0,
            xml_escape(name)
        );
        legend_y += 14.0;
    }
    out.push_str("</svg>\n");
    out
}

/// Categorical winner grid: one color per method, accuracy printed per cell.
pub fn winner_svg(matrix: &crate::transfer::WinnerMatrix, title: &str) -> String {
    let method_color = |m: &str| match m {
        "coop" => "#d62728",
        "cocoop" => "#1f77b4",
        "maple" => "#2ca02c",
        "promptsrc" => "#9467bd",
        _ => "#7f7f7f",
    };
    let rows = matrix.sources.len();
    let cols = matrix.targets.len();
    let width = MARGIN_LEFT + cols as f64 * CELL + 160.0;
    let height = MARGIN_TOP + rows as f64 * CELL + 120.0;
    let mut out = svg_header(width, height, title);
    for (i, source) in matrix.sources.iter().enumerate() {
        let y = MARGIN_TOP + i as f64 * CELL;
        let _ = writeln!(
            out,
            "<text x=\"{:.0}\" y=\"{:.0}\" font-size=\"10\" text-anchor=\"end\">{}</text>",
            MARGIN_LEFT - 6.0,
            y + CELL / 2.0 + 3.0,
            xml_escape(source)
        );
        for (j, cell) in matrix.cells[i].iter().enumerate() {
            let x = MARGIN_LEFT + j as f64 * CELL;
            match cell {
                Some(w) => {
                    let _ = writeln!(
                        out,
                        "<rect x=\"{x:.0}\" y=\"{y:.0}\" width=\"{CELL:.0}\" height=\"{CELL:.0}\" \
                         fill=\"{}\" stroke=\"white\"/>\n\
                         <text x=\"{:.0}\" y=\"{:.0}\" font-size=\"9\" fill=\"white\" \
                         text-anchor=\"middle\">{:.1}{}</text>",
                        method_color(&w.method),
                        x + CELL / 2.0,
                        y + CELL / 2.0 + 3.0,
                        w.accuracy * 100.0,
                        if w.tie { "*" } else { "" }
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "<rect x=\"{x:.0}\" y=\"{y:.0}\" width=\"{CELL:.0}\" height=\"{CELL:.0}\" \
                         fill=\"#dddddd\" stroke=\"white\"/>"
                    );
                }
            }
        }
    }
    for (j, label) in matrix.targets.iter().enumerate() {
        let x = MARGIN_LEFT + j as f64 * CELL + CELL / 2.0;
        let y = MARGIN_TOP + rows as f64 * CELL + 8.0;
        let _ = writeln!(
            out,
            "<text x=\"{x:.0}\" y=\"{y:.0}\" font-size=\"10\" text-anchor=\"end\" \
             transform=\"rotate(-60 {x:.0} {y:.0})\">{}</text>",
            xml_escape(label)
        );
    }
    let mut ly = MARGIN_TOP;
    for m in ["coop", "cocoop", "maple", "promptsrc"] {
        let x = MARGIN_LEFT + cols as f64 * CELL + 16.0;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.0}\" y=\"{ly:.0}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n\
             <text x=\"{:.0}\" y=\"{:.0}\" font-size=\"10\">{m}</text>",
            method_color(m),
            x + 16.0,
            ly + 10.0
        );
        ly += 18.0;
    }
    out.push_str("</svg>\n");
    out
}
