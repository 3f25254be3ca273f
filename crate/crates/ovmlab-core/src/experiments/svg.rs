//! Minimal hand-rolled SVG line charts. Output is well-formed XML: every
//! element is emitted closed and text content is escaped.

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 48.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Range {
    min: f64,
    max: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Range {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() || !max.is_finite() {
            return Range { min: 0.0, max: 1.0 };
        }
        if (max - min).abs() < 1e-12 {
            max = min + 1.0;
        }
        Range { min, max }
    }

    fn scale(&self, v: f64, lo: f64, hi: f64) -> f64 {
        lo + (v - self.min) / (self.max - self.min) * (hi - lo)
    }
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xr = Range::of(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = Range::of(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let x_of = |v: f64| xr.scale(v, MARGIN_L, WIDTH - MARGIN_R);
    let y_of = |v: f64| yr.scale(v, HEIGHT - MARGIN_B, MARGIN_T);

    let mut body = String::new();
    body.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    body.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\" font-family=\"sans-serif\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));

    // Axes.
    body.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = MARGIN_L,
        r = WIDTH - MARGIN_R,
        t = MARGIN_T,
        b = HEIGHT - MARGIN_B,
    ));
    body.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">{}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    ));
    body.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        escape(y_label)
    ));

    // Ticks: five per axis.
    for i in 0..=4 {
        let fx = xr.min + (xr.max - xr.min) * i as f64 / 4.0;
        let fy = yr.min + (yr.max - yr.min) * i as f64 / 4.0;
        let x = x_of(fx);
        let y = y_of(fy);
        body.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"#cccccc\"/>\n",
            MARGIN_T,
            HEIGHT - MARGIN_B,
        ));
        body.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\" font-family=\"sans-serif\">{fx:.3}</text>\n",
            HEIGHT - MARGIN_B + 16.0
        ));
        body.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"#eeeeee\"/>\n",
            MARGIN_L,
            WIDTH - MARGIN_R
        ));
        body.push_str(&format!(
            "<text x=\"{}\" y=\"{y:.1}\" font-size=\"10\" text-anchor=\"end\" font-family=\"sans-serif\">{fy:.3}</text>\n",
            MARGIN_L - 6.0
        ));
    }

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .map(|(x, y)| format!("{:.1},{:.1}", x_of(*x), y_of(*y)))
            .collect();
        if coords.len() > 1 {
            body.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                coords.join(" ")
            ));
        }
        for (x, y) in &s.points {
            body.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n",
                x_of(*x),
                y_of(*y)
            ));
        }
        let ly = MARGIN_T + 16.0 * i as f64;
        body.push_str(&format!(
            "<rect x=\"{}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
            WIDTH - MARGIN_R + 10.0,
            ly
        ));
        body.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" font-size=\"11\" font-family=\"sans-serif\">{}</text>\n",
            WIDTH - MARGIN_R + 24.0,
            ly + 9.0,
            escape(&s.name)
        ));
    }

    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n{body}</svg>\n"
    )
}
