//! Text renderings of an [`EvalReport`]: ROC points as CSV and a
//! self-contained SVG plot with the bootstrap confidence band.

use std::fmt::Write;

use crate::eval::{EvalReport, RocPoint};

/// `threshold,fpr,tpr` rows in curve order; infinite thresholds are written
/// as `inf`.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        let t = if p.threshold.is_infinite() {
            if p.threshold > 0.0 {
                "inf".to_string()
            } else {
                "-inf".to_string()
            }
        } else {
            p.threshold.to_string()
        };
        writeln!(out, "{t},{},{}", p.fpr, p.tpr).expect("write to string");
    }
    out
}

const SIZE: f64 = 480.0;
const MARGIN: f64 = 56.0;

fn x(fpr: f64) -> f64 {
    MARGIN + fpr * (SIZE - 2.0 * MARGIN)
}

fn y(tpr: f64) -> f64 {
    SIZE - MARGIN - tpr * (SIZE - 2.0 * MARGIN)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// ROC curve with its shaded 95% band, the chance diagonal and the Youden
/// operating point.
pub fn roc_svg(report: &EvalReport, title: &str) -> String {
    let mut s = String::new();
    let w = |s: &mut String, line: String| {
        s.push_str(&line);
        s.push('\n');
    };
    w(
        &mut s,
        format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
        ),
    );
    w(
        &mut s,
        format!(r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#),
    );
    // axes and grid
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        w(
            &mut s,
            format!(
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#e0e0e0"/>"##,
                x(v),
                y(0.0),
                x(v),
                y(1.0)
            ),
        );
        w(
            &mut s,
            format!(
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#e0e0e0"/>"##,
                x(0.0),
                y(v),
                x(1.0),
                y(v)
            ),
        );
        w(
            &mut s,
            format!(
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"#,
                x(v),
                y(0.0) + 16.0
            ),
        );
        w(
            &mut s,
            format!(
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
                x(0.0) - 6.0,
                y(v) + 4.0
            ),
        );
    }
    w(
        &mut s,
        format!(
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
            x(0.0),
            y(1.0),
            x(1.0) - x(0.0),
            y(0.0) - y(1.0)
        ),
    );
    w(
        &mut s,
        format!(
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 4"/>"##,
            x(0.0),
            y(0.0),
            x(1.0),
            y(1.0)
        ),
    );
    // confidence band: upper edge left to right, lower edge back
    if !report.roc_band.is_empty() {
        let mut pts: Vec<String> = report
            .roc_band
            .iter()
            .map(|b| format!("{:.2},{:.2}", x(b.fpr), y(b.upper)))
            .collect();
        pts.extend(
            report
                .roc_band
                .iter()
                .rev()
                .map(|b| format!("{:.2},{:.2}", x(b.fpr), y(b.lower))),
        );
        w(
            &mut s,
            format!(
                r##"<polygon points="{}" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>"##,
                pts.join(" ")
            ),
        );
    }
    let curve: Vec<String> = report
        .roc
        .iter()
        .map(|p| format!("{:.2},{:.2}", x(p.fpr), y(p.tpr)))
        .collect();
    w(
        &mut s,
        format!(
            r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
            curve.join(" ")
        ),
    );
    w(
        &mut s,
        format!(
            r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#d62728"/>"##,
            x(1.0 - report.specificity),
            y(report.sensitivity)
        ),
    );
    w(
        &mut s,
        format!(
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            SIZE / 2.0,
            escape(title)
        ),
    );
    w(
        &mut s,
        format!(
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">AUC {:.3} ({:.3}, {:.3})</text>"#,
            x(1.0) - 8.0,
            y(0.0) - 10.0,
            report.auc,
            report.auc_ci.lower,
            report.auc_ci.upper
        ),
    );
    w(
        &mut s,
        format!(
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">False positive rate</text>"#,
            SIZE / 2.0,
            SIZE - 16.0
        ),
    );
    w(
        &mut s,
        format!(
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">True positive rate</text>"#,
            SIZE / 2.0,
            SIZE / 2.0
        ),
    );
    w(&mut s, "</svg>".into());
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::ScoreSet;
    use crate::exec::Execution;

    fn report() -> EvalReport {
        let scores = ScoreSet::from_slices(&[0.8, 0.35, 0.4, 0.1, 0.9, 0.2], &[1, 1, 0, 0, 1, 0]).unwrap();
        EvalReport::build(scores, 100, 1, Execution::Sequential, serde_json::Value::Null).unwrap()
    }

    #[test]
    fn csv_lists_every_vertex() {
        let r = report();
        let csv = roc_csv(&r.roc);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "threshold,fpr,tpr");
        assert_eq!(lines.len(), r.roc.len() + 1);
        assert_eq!(lines[1], "inf,0,0");
        assert_eq!(*lines.last().unwrap(), "0.1,1,1");
    }

    #[test]
    fn svg_has_curve_band_and_title() {
        let svg = roc_svg(&report(), "T=3 <scaled>");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<polygon") && svg.contains("fill-opacity"));
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("T=3 &lt;scaled&gt;"));
        assert_eq!(svg, roc_svg(&report(), "T=3 <scaled>"));
    }
}
