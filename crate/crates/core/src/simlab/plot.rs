//! Minimal grouped bar charts written as standalone SVG.

use std::fmt::Write as _;

pub struct Series<'a> {
    pub name: &'a str,
    pub values: Vec<f64>,
}

const PALETTE: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One group of bars per category, one bar per series. `reference` draws a
/// dashed horizontal line (e.g. nominal coverage).
pub fn bar_chart_svg(title: &str, y_label: &str, categories: &[String], series: &[Series<'_>], reference: Option<f64>) -> String {
    let (width, height) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 60.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let values = series.iter().flat_map(|s| s.values.iter().copied()).chain(reference).filter(|v| v.is_finite());
    let (mut lo, mut hi) = values.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-12 {
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    lo = if lo < 0.0 { lo - pad } else { lo };
    hi += pad;
    let y = |v: f64| top + plot_h * (hi - v) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, width / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(y_label)
    );
    // Axes and ticks.
    let _ = writeln!(svg, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + plot_h);
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let (tick, text_x, yy, label) = (left - 4.0, left - 6.0, y(v), crate::fedproto::format_significant(v, 3));
        let _ = writeln!(
            svg,
            r#"<line x1="{tick}" y1="{yy}" x2="{left}" y2="{yy}" stroke="black"/><text x="{text_x}" y="{}" text-anchor="end">{label}</text>"#,
            yy + 4.0
        );
    }
    let _ = writeln!(svg, r#"<line x1="{left}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, y(0.0), left + plot_w);

    let groups = categories.len().max(1) as f64;
    let group_w = plot_w / groups;
    let bar_w = 0.8 * group_w / series.len().max(1) as f64;
    for (g, cat) in categories.iter().enumerate() {
        let x0 = left + group_w * g as f64 + 0.1 * group_w;
        for (s, ser) in series.iter().enumerate() {
            let Some(&v) = ser.values.get(g).filter(|v| v.is_finite()) else { continue };
            let (y0, y1) = (y(v.max(0.0)), y(v.min(0.0)));
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{}: {}</title></rect>"#,
                x0 + bar_w * s as f64,
                y0,
                bar_w,
                (y1 - y0).max(0.5),
                PALETTE[s % PALETTE.len()],
                escape(ser.name),
                v
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x0 + 0.4 * group_w,
            top + plot_h + 18.0,
            escape(cat)
        );
    }
    if let Some(r) = reference {
        let _ = writeln!(
            svg,
            r#"<line x1="{left}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="gray" stroke-dasharray="6,4"/>"#,
            y(r),
            left + plot_w
        );
    }
    for (s, ser) in series.iter().enumerate() {
        let lx = left + 10.0 + 110.0 * s as f64;
        let ly = height - 18.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{ly}">{}</text>"#,
            ly - 10.0,
            PALETTE[s % PALETTE.len()],
            lx + 16.0,
            escape(ser.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed() {
        let svg = bar_chart_svg(
            "Coverage <95%>",
            "CP (%)",
            &["i".into(), "ii".into()],
            &[Series { name: "DAC", values: vec![94.5, 93.0] }, Series { name: "DOR", values: vec![95.0, 80.0] }],
            Some(95.0),
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect x=").count(), 4 + 2);
        assert!(svg.contains("&lt;95%&gt;"));
    }
}
