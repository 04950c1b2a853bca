use std::fmt::Write as _;

use super::SensitivityCurve;

/// Two-column CSV: `dose_transformed,sensitivity`.
pub fn sensitivity_csv(curve: &SensitivityCurve) -> String {
    let mut out = String::from("dose_transformed,sensitivity\n");
    for (x, v) in curve.grid.iter().zip(&curve.values) {
        let _ = writeln!(out, "{x},{v}");
    }
    out
}

/// Line chart of the curve with a zero baseline and markers at `support` (transformed doses).
pub fn sensitivity_svg(curve: &SensitivityCurve, support: &[f64], title: &str) -> String {
    let (w, h) = (720.0, 400.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;

    let xmin = curve.grid.first().copied().unwrap_or(0.0);
    let xmax = curve.grid.last().copied().unwrap_or(1.0).max(xmin + 1e-12);
    let finite = curve.values.iter().copied().filter(|v| v.is_finite());
    let (mut ymin, mut ymax) = finite.fold((0.0_f64, 0.0_f64), |(a, b), v| (a.min(v), b.max(v)));
    if ymax - ymin < 1e-12 {
        ymin -= 1.0;
        ymax += 1.0;
    }
    let pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    let sx = |x: f64| ml + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: f64| mt + (ymax - y) / (ymax - ymin) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );

    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let xv = xmin + t * (xmax - xmin);
        let yv = ymin + t * (ymax - ymin);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{:.2}</text>"#,
            sx(xv),
            h - mb + 18.0,
            xv
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{:.3}</text>"#,
            ml - 6.0,
            sy(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">log(dose + 1)</text>"#,
        ml + pw / 2.0,
        h - 10.0
    );

    if ymin < 0.0 && ymax > 0.0 {
        let _ = writeln!(
            s,
            r#"<line x1="{ml}" y1="{y:.2}" x2="{x2}" y2="{y:.2}" stroke="red" stroke-width="1.5"/>"#,
            y = sy(0.0),
            x2 = ml + pw
        );
    }

    let mut path = String::new();
    let mut pen_down = false;
    for (x, v) in curve.grid.iter().zip(&curve.values) {
        if !v.is_finite() {
            pen_down = false;
            continue;
        }
        let _ = write!(path, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, sx(*x), sy(*v));
        pen_down = true;
    }
    let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#, path.trim_end());

    for &x in support {
        if x >= xmin && x <= xmax {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="black"/>"#,
                sx(x),
                sy(0.0_f64.clamp(ymin, ymax))
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve() -> SensitivityCurve {
        SensitivityCurve {
            grid: vec![0.0, 1.0, 2.0],
            values: vec![-0.5, 0.0, -0.25],
            max_value: 0.0,
            argmax: 1.0,
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = sensitivity_csv(&curve());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "dose_transformed,sensitivity");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "1,0");
    }

    #[test]
    fn svg_contains_baseline_and_markers() {
        let svg = sensitivity_svg(&curve(), &[1.0], "a < b");
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("stroke=\"red\""));
        assert!(svg.contains("<circle"));
        assert!(svg.contains("a &lt; b"));
    }
}
