//! Minimal static SVG bar charts for ablation payloads.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One series of bars, one bar per category.
pub fn bar_chart(title: &str, categories: &[String], values: &[f64]) -> String {
    grouped_bar_chart(title, categories, &[(String::new(), values.to_vec())])
}

/// Several series side by side per category. Negative values are drawn as zero height.
pub fn grouped_bar_chart(title: &str, categories: &[String], series: &[(String, Vec<f64>)]) -> String {
    const PALETTE: [&str; 6] = ["#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"];
    let max = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let scale = if max > 0.0 { (HEIGHT - 2.0 * MARGIN) / max } else { 0.0 };
    let slot = (WIDTH - 2.0 * MARGIN) / categories.len().max(1) as f64;
    let bar = slot * 0.8 / series.len().max(1) as f64;
    let base = HEIGHT - MARGIN;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    for (c, name) in categories.iter().enumerate() {
        let x0 = MARGIN + c as f64 * slot + slot * 0.1;
        for (s, (_, values)) in series.iter().enumerate() {
            let v = values.get(c).copied().unwrap_or(0.0);
            let h = if v.is_finite() { v.max(0.0) * scale } else { 0.0 };
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{}</title></rect>"#,
                x0 + s as f64 * bar,
                base - h,
                bar,
                h,
                PALETTE[s % PALETTE.len()],
                v
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="10">{}</text>"#,
            x0 + slot * 0.4,
            base + 14.0,
            escape(name)
        );
    }
    for (s, (label, _)) in series.iter().enumerate().filter(|(_, (l, _))| !l.is_empty()) {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" fill="{}">{}</text>"#,
            WIDTH - MARGIN - 80.0,
            40.0 + 12.0 * s as f64,
            PALETTE[s % PALETTE.len()],
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_rect_per_value() {
        let svg = grouped_bar_chart(
            "t <x>",
            &["a".into(), "b".into()],
            &[("s1".into(), vec![1.0, 2.0]), ("s2".into(), vec![0.5, f64::NAN])],
        );
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.contains("t &lt;x&gt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
