//! Minimal SVG emission for the campaign reports: line charts of medians
//! across scenario levels and grouped box plots of per-replicate spreads.
//! Output is plain geometry with a fixed palette and no timestamps, so the
//! bytes are reproducible given the same inputs.

/// One polyline: a label and (x, y) points in data coordinates.
pub struct LineSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// One box in a group: five-number summary in data coordinates.
#[derive(Debug, Clone, Copy)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// A labeled cluster of boxes drawn side by side (one per series).
pub struct BoxGroup {
    pub label: String,
    pub boxes: Vec<Option<BoxStats>>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const W: f64 = 720.0;
const H: f64 = 440.0;
const ML: f64 = 64.0;
const MR: f64 = 132.0;
const MT: f64 = 40.0;
const MB: f64 = 56.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fnum(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1e4 || a < 1e-3 {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    }
}

fn coord(v: f64) -> String {
    format!("{v:.2}")
}

struct Scale {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, from: f64, to: f64) -> Self {
        let (lo, hi) = if lo == hi {
            // Degenerate range: pad so the single value sits mid-axis.
            let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.5 };
            (lo - pad, hi + pad)
        } else {
            let pad = (hi - lo) * 0.05;
            (lo - pad, hi + pad)
        };
        Self { lo, hi, from, to }
    }

    fn map(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }

    fn ticks(&self, n: usize) -> Vec<f64> {
        (0..=n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64).collect()
    }
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        (ML + (W - MR)) / 2.0,
        esc(title)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        (ML + (W - MR)) / 2.0,
        H - 12.0,
        esc(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (MT + (H - MB)) / 2.0,
        (MT + (H - MB)) / 2.0,
        esc(y_label)
    ));
    // Plot area border.
    out.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
        coord(ML),
        coord(MT),
        coord(W - MR - ML),
        coord(H - MB - MT)
    ));
}

fn y_axis(out: &mut String, ys: &Scale) {
    for t in ys.ticks(5) {
        let y = ys.map(t);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ccc\" stroke-dasharray=\"3 3\"/>\n",
            coord(ML),
            coord(y),
            coord(W - MR),
            coord(y)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            coord(ML - 6.0),
            coord(y + 4.0),
            fnum(t)
        ));
    }
}

fn legend(out: &mut String, labels: &[String]) {
    for (i, label) in labels.iter().enumerate() {
        let y = MT + 14.0 + 18.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n",
            coord(W - MR + 12.0),
            coord(y - 10.0)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            coord(W - MR + 30.0),
            coord(y),
            esc(label)
        ));
    }
}

/// Line chart: one polyline per series over a shared numeric x axis.
/// Series with no finite points are drawn as legend entries only.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[LineSeries]) -> String {
    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (xlo, xhi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, _)| (lo.min(x), hi.max(x)));
    let (ylo, yhi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| (lo.min(y), hi.max(y)));
    let (xlo, xhi, ylo, yhi) = if finite.is_empty() {
        (0.0, 1.0, 0.0, 1.0)
    } else {
        (xlo, xhi, ylo, yhi)
    };
    let xs = Scale::new(xlo, xhi, ML, W - MR);
    let ys = Scale::new(ylo, yhi, H - MB, MT);

    let mut out = String::new();
    frame(&mut out, title, x_label, y_label);
    y_axis(&mut out, &ys);
    for t in xs.ticks(5) {
        let x = xs.map(t);
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            coord(x),
            coord(H - MB + 18.0),
            fnum(t)
        ));
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{},{}", coord(xs.map(x)), coord(ys.map(y))))
            .collect();
        if !pts.is_empty() {
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                pts.join(" ")
            ));
            for &(x, y) in s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                out.push_str(&format!(
                    "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                    coord(xs.map(x)),
                    coord(ys.map(y))
                ));
            }
        }
    }
    legend(&mut out, &series.iter().map(|s| s.label.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Grouped box plot: for each group, one box per series label, whiskers at
/// the supplied extremes. Missing boxes leave a gap.
pub fn box_plot(title: &str, y_label: &str, labels: &[String], groups: &[BoxGroup]) -> String {
    let finite: Vec<f64> = groups
        .iter()
        .flat_map(|g| g.boxes.iter().flatten())
        .flat_map(|b| [b.min, b.max])
        .filter(|v| v.is_finite())
        .collect();
    let (ylo, yhi) = if finite.is_empty() {
        (0.0, 1.0)
    } else {
        finite
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    };
    let ys = Scale::new(ylo, yhi, H - MB, MT);

    let mut out = String::new();
    frame(&mut out, title, "", y_label);
    y_axis(&mut out, &ys);

    let plot_w = W - MR - ML;
    let ng = groups.len().max(1) as f64;
    let nb = labels.len().max(1) as f64;
    let group_w = plot_w / ng;
    let box_w = (group_w * 0.8 / nb).min(36.0);
    for (gi, g) in groups.iter().enumerate() {
        let cx = ML + group_w * (gi as f64 + 0.5);
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            coord(cx),
            coord(H - MB + 18.0),
            esc(&g.label)
        ));
        for (bi, b) in g.boxes.iter().enumerate() {
            let Some(b) = *b else { continue };
            let color = PALETTE[bi % PALETTE.len()];
            let x = cx + box_w * (bi as f64 - nb / 2.0 + 0.1);
            let (xm, xw) = (x + box_w * 0.4, box_w * 0.8);
            // Whiskers, box, median bar.
            out.push_str(&format!(
                "<line x1=\"{xm}\" y1=\"{}\" x2=\"{xm}\" y2=\"{}\" stroke=\"{color}\"/>\n",
                coord(ys.map(b.min)),
                coord(ys.map(b.q1)),
                xm = coord(xm)
            ));
            out.push_str(&format!(
                "<line x1=\"{xm}\" y1=\"{}\" x2=\"{xm}\" y2=\"{}\" stroke=\"{color}\"/>\n",
                coord(ys.map(b.q3)),
                coord(ys.map(b.max)),
                xm = coord(xm)
            ));
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\" fill-opacity=\"0.35\" stroke=\"{color}\"/>\n",
                coord(x),
                coord(ys.map(b.q3)),
                coord(xw),
                coord((ys.map(b.q1) - ys.map(b.q3)).max(0.5)),
            ));
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{ym}\" x2=\"{}\" y2=\"{ym}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                coord(x),
                coord(x + xw),
                ym = coord(ys.map(b.median))
            ));
        }
    }
    legend(&mut out, labels);
    out.push_str("</svg>\n");
    out
}
