//! Log-log scatter of (T, metric) with the fitted line and the target-slope
//! guide line, written as plain SVG.

use std::fmt::Write;

use crate::harness::RateFit;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 72.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, lx: f64) -> f64 {
        LEFT + (lx - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, ly: f64) -> f64 {
        HEIGHT - BOTTOM - (ly - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn padded((lo, hi): (f64, f64)) -> (f64, f64) {
    if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the plot. Points with a non-finite or non-positive metric are
/// left out and counted in a footnote; with nothing to draw the axes carry
/// a "no data" note.
pub fn loglog_svg(title: &str, points: &[(f64, f64)], fit: Option<&RateFit>) -> String {
    let drawable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(t, m)| *t > 0.0 && t.is_finite() && *m > 0.0 && m.is_finite())
        .map(|(t, m)| (t.log10(), m.log10()))
        .collect();
    let omitted = points.len() - drawable.len();

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));

    let (x0, x1, y0, y1) = if drawable.is_empty() {
        (0.0, 1.0, 0.0, 1.0)
    } else {
        let fold = |f: fn(&(f64, f64)) -> f64| {
            drawable.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (xl, xh) = padded(fold(|p| p.0));
        let (yl, yh) = padded(fold(|p| p.1));
        (xl, xh, yl, yh)
    };
    let fr = Frame { x0, x1, y0, y1 };

    let (bx0, by0, bx1, by1) = (LEFT, TOP, WIDTH - RIGHT, HEIGHT - BOTTOM);
    let _ = writeln!(
        s,
        r#"<rect x="{bx0}" y="{by0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        bx1 - bx0,
        by1 - by0
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">T (log scale)</text>"#, (bx0 + bx1) / 2.0, HEIGHT - 40.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">metric (log scale)</text>"#,
        (by0 + by1) / 2.0,
        (by0 + by1) / 2.0
    );

    if drawable.is_empty() {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="16">no data</text>"#, (bx0 + bx1) / 2.0, (by0 + by1) / 2.0);
    } else {
        ticks(&mut s, &fr);
        let _ = writeln!(s, r#"<g fill="steelblue">"#);
        for (lx, ly) in &drawable {
            let _ = writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" r="4"/>"#, fr.px(*lx), fr.py(*ly));
        }
        let _ = writeln!(s, "</g>");
        if let Some((slope, intercept)) = fit.and_then(|f| Some((f.slope?, f.intercept?))) {
            let target = -fit.map(|f| f.target_exponent).unwrap_or(0.0);
            // ln-space fit converted to log10 space: slope unchanged, intercept scaled
            let b10 = intercept / std::f64::consts::LN_10;
            let line = |slope: f64, b: f64| {
                let (a, c) = (x0, x1);
                (fr.px(a), fr.py(slope * a + b), fr.px(c), fr.py(slope * c + b))
            };
            let (ax, ay, cx, cy) = line(slope, b10);
            let _ = writeln!(
                s,
                r##"<line x1="{ax:.3}" y1="{ay:.3}" x2="{cx:.3}" y2="{cy:.3}" stroke="#d62728" stroke-width="2" clip-path="url(#plot)"/>"##
            );
            let mid = drawable.iter().map(|p| p.0).sum::<f64>() / drawable.len() as f64;
            let anchor = slope * mid + b10;
            let (ax, ay, cx, cy) = line(target, anchor - target * mid);
            let _ = writeln!(
                s,
                r##"<line x1="{ax:.3}" y1="{ay:.3}" x2="{cx:.3}" y2="{cy:.3}" stroke="#555555" stroke-width="1.5" stroke-dasharray="6 4" clip-path="url(#plot)"/>"##
            );
            let lx = bx1 - 200.0;
            let _ = writeln!(s, r##"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="#d62728" stroke-width="2"/>"##, by0 + 16.0, lx + 24.0, by0 + 16.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">fit slope {slope:.4}</text>"#, lx + 30.0, by0 + 20.0);
            let _ = writeln!(
                s,
                r##"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="#555555" stroke-width="1.5" stroke-dasharray="6 4"/>"##,
                by0 + 34.0,
                lx + 24.0,
                by0 + 34.0
            );
            let _ = writeln!(s, r#"<text x="{}" y="{}">target slope {target:.4}</text>"#, lx + 30.0, by0 + 38.0);
        }
    }
    if omitted > 0 {
        let _ = writeln!(
            s,
            r#"<text x="{LEFT}" y="{}" font-size="11">* {omitted} point(s) with infinite or non-positive metric omitted</text>"#,
            HEIGHT - 12.0
        );
    }
    let _ = writeln!(
        s,
        r#"<defs><clipPath id="plot"><rect x="{bx0}" y="{by0}" width="{}" height="{}"/></clipPath></defs>"#,
        bx1 - bx0,
        by1 - by0
    );
    s.push_str("</svg>\n");
    s
}

fn ticks(s: &mut String, fr: &Frame) {
    let by1 = HEIGHT - BOTTOM;
    let mut k = fr.x0.ceil() as i32;
    while (k as f64) <= fr.x1 {
        let x = fr.px(k as f64);
        let _ = writeln!(s, r#"<line x1="{x:.3}" y1="{by1}" x2="{x:.3}" y2="{}" stroke="black"/>"#, by1 + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.3}" y="{}" text-anchor="middle">1e{k}</text>"#, by1 + 18.0);
        k += 1;
    }
    // T grids are often powers of two spanning less than a decade
    if fr.x1 - fr.x0 < 3.0 {
        let mut e = (fr.x0 / 2f64.log10()).ceil() as i32;
        while (e as f64) * 2f64.log10() <= fr.x1 {
            let x = fr.px(e as f64 * 2f64.log10());
            let _ = writeln!(s, r#"<line x1="{x:.3}" y1="{by1}" x2="{x:.3}" y2="{}" stroke="gray"/>"#, by1 - 4.0);
            let _ = writeln!(s, r#"<text x="{x:.3}" y="{}" text-anchor="middle" font-size="10" fill="gray">2^{e}</text>"#, by1 + 32.0);
            e += 1;
        }
    }
    let mut k = fr.y0.ceil() as i32;
    while (k as f64) <= fr.y1 {
        let y = fr.py(k as f64);
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.3}" x2="{LEFT}" y2="{y:.3}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.3}" text-anchor="end">1e{k}</text>"#, LEFT - 8.0, y + 4.0);
        k += 1;
    }
}

/// Writes [`loglog_svg`] to `path`.
pub fn write_loglog_svg(path: &std::path::Path, title: &str, points: &[(f64, f64)], fit: Option<&RateFit>) -> crate::Result<()> {
    crate::io::write_text(path, &loglog_svg(title, points, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::fit_rate;

    #[test]
    fn empty_points_say_no_data() {
        let svg = loglog_svg("empty", &[], None);
        assert!(svg.contains("no data"));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn fit_and_guide_lines_are_labelled() {
        let pts = [(10.0, 1.0), (100.0, 0.31622776601), (1000.0, 0.1)];
        let fit = fit_rate(&pts, 0.5, 0.1).unwrap();
        let svg = loglog_svg("rate", &pts, Some(&fit));
        assert!(svg.contains("fit slope -0.5000"));
        assert!(svg.contains("target slope -0.5000"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches("clip-path=\"url(#plot)\"").count(), 2);
    }

    #[test]
    fn infinite_points_are_footnoted() {
        let pts = [(10.0, 1.0), (20.0, f64::INFINITY), (40.0, 0.5)];
        let svg = loglog_svg("x", &pts, None);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("1 point(s) with infinite"));
    }
}
