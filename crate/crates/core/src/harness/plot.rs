//! Plot data: precision-recall points as CSV and a speed-accuracy scatter as SVG.

use std::fmt::Write as _;

use crate::metrics::{PrCurve, RECALL_POINTS};

pub fn pr_curves_csv(curves: &[PrCurve]) -> String {
    let mut out = String::from("task,category_id,threshold,recall,precision\n");
    for c in curves {
        for (i, p) in c.precision.iter().enumerate().take(RECALL_POINTS) {
            let _ = writeln!(
                out,
                "{},{},{:.2},{:.2},{:.6}",
                c.task,
                c.category_id,
                c.threshold,
                i as f64 / 100.0,
                p
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedPoint {
    pub label: String,
    pub time_ms: f64,
    pub map_box: f64,
    pub map_pt: f64,
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Inference time on x, mAP on y; boxes as circles, landmarks as squares.
pub fn speed_accuracy_svg(points: &[SpeedPoint]) -> String {
    let max_t = points.iter().map(|p| p.time_ms).fold(0.0, f64::max).max(1e-3) * 1.1;
    let x = |t: f64| PAD + t / max_t * (W - 2.0 * PAD);
    let y = |m: f64| H - PAD - m.clamp(0.0, 1.0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(s, r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#, H - PAD);
    for k in 0..=4 {
        let m = k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{m:.2}</text>"#,
            PAD - 4.0,
            y(m) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">inference time, ms (max {max_t:.2})</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(s, r#"<text x="12" y="{}" transform="rotate(-90 12 {0})" text-anchor="middle">mAP</text>"#, H / 2.0);
    for p in points {
        let (px, by, py) = (x(p.time_ms), y(p.map_box), y(p.map_pt));
        let _ = writeln!(s, r##"<circle cx="{px:.1}" cy="{by:.1}" r="4" fill="#1f77b4"/>"##);
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="8" height="8" fill="#d62728"/>"##,
            px - 4.0,
            py - 4.0
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, px + 6.0, by - 6.0, escape(&p.label));
    }
    let _ = writeln!(
        s,
        r##"<circle cx="{0}" cy="{1}" r="4" fill="#1f77b4"/><text x="{2}" y="{3}">mAP_box</text>"##,
        W - PAD - 70.0,
        PAD,
        W - PAD - 62.0,
        PAD + 4.0
    );
    let _ = writeln!(
        s,
        r##"<rect x="{0}" y="{1}" width="8" height="8" fill="#d62728"/><text x="{2}" y="{3}">mAP_pt</text>"##,
        W - PAD - 74.0,
        PAD + 12.0,
        W - PAD - 62.0,
        PAD + 20.0
    );
    s.push_str("</svg>\n");
    s
}
