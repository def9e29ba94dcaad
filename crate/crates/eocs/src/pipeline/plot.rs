//! Self-contained SVG rendering of training curves (loss on the left axis,
//! held-out accuracy on the right).

use super::train::CurvePoint;

const W: f64 = 760.0;
const H: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 70.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

fn polyline(points: &[(f64, f64)], color: &str) -> String {
    let coords: Vec<String> =
        points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
        coords.join(" ")
    )
}

/// Render curves to an SVG document string.
pub fn render_curves_svg(curves: &[CurvePoint]) -> String {
    let plot_w = W - MARGIN_L - MARGIN_R;
    let plot_h = H - MARGIN_T - MARGIN_B;
    let max_epoch = curves.last().map(|p| p.epoch as f64).unwrap_or(1.0).max(1.0);
    let max_loss = curves.iter().map(|p| p.loss).fold(1e-12, f64::max);

    let x = |epoch: f64| MARGIN_L + plot_w * epoch / max_epoch;
    let y_loss = |loss: f64| MARGIN_T + plot_h * (1.0 - loss / max_loss);
    let y_acc = |acc: f64| MARGIN_T + plot_h * (1.0 - acc / 100.0);

    let loss_points: Vec<(f64, f64)> =
        curves.iter().map(|p| (x(p.epoch as f64), y_loss(p.loss))).collect();
    let acc_points: Vec<(f64, f64)> =
        curves.iter().map(|p| (x(p.epoch as f64), y_acc(p.oc_acc))).collect();

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"white\" stroke=\"#444\"/>\n"
    ));
    // horizontal grid with dual labels
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let yy = MARGIN_T + plot_h * (1.0 - frac);
        svg.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{yy:.1}\" x2=\"{:.1}\" y2=\"{yy:.1}\" \
             stroke=\"#ddd\"/>\n",
            MARGIN_L + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" fill=\"#a33\">{:.3}</text>\n",
            MARGIN_L - 6.0,
            yy + 4.0,
            max_loss * frac
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"#33a\">{:.0}%</text>\n",
            MARGIN_L + plot_w + 6.0,
            yy + 4.0,
            100.0 * frac
        ));
    }
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let xx = MARGIN_L + plot_w * frac;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{:.0}</text>\n",
            xx,
            H - MARGIN_B + 20.0,
            max_epoch * frac
        ));
    }
    svg.push_str(&polyline(&loss_points, "#a33"));
    svg.push('\n');
    svg.push_str(&polyline(&acc_points, "#33a"));
    svg.push('\n');
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"#a33\">train loss</text>\n",
        MARGIN_L + 10.0,
        MARGIN_T + 16.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"#33a\">held-out OC accuracy</text>\n",
        MARGIN_L + 10.0,
        MARGIN_T + 32.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">epoch</text>\n",
        MARGIN_L + plot_w / 2.0,
        H - 12.0
    ));
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_contains_both_series() {
        let curves = vec![
            CurvePoint { epoch: 1, loss: 0.7, oc_acc: 5.0 },
            CurvePoint { epoch: 2, loss: 0.5, oc_acc: 20.0 },
            CurvePoint { epoch: 3, loss: 0.2, oc_acc: 80.0 },
        ];
        let svg = render_curves_svg(&curves);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("train loss"));
    }
}
