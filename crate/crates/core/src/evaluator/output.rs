use std::fmt::Write as _;

use super::compare::ComparisonReport;
use super::metrics::MetricsReport;
use super::sweep::SweepRow;

pub const METRICS_CSV_HEADER: &str = "threshold,n_slices,lesion_fp_per_slice,lesion_fnr,slice_fpr,slice_fnr,slice_acc,lesion_tp,lesion_fp,lesion_fn,slice_tp,slice_fp,slice_fn,slice_tn";

fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

pub fn metrics_csv_row(r: &MetricsReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        num(r.threshold),
        r.n_slices,
        num(r.lesion_fp_per_slice),
        num(r.lesion_fnr),
        num(r.slice_fpr),
        num(r.slice_fnr),
        num(r.slice_acc),
        r.lesion.tp,
        r.lesion.fp,
        r.lesion.fn_,
        r.slice.tp,
        r.slice.fp,
        r.slice.fn_,
        r.slice.tn
    )
}

pub fn metrics_csv(reports: &[&MetricsReport]) -> String {
    let mut s = String::from(METRICS_CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&metrics_csv_row(r));
        s.push('\n');
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    metrics_csv(&rows.iter().map(|r| &r.report).collect::<Vec<_>>())
}

/// Static scatter of lesion FNR (x) against FP per slice (y): the baseline
/// sweep as a connected series, the cost-trained point and the matched
/// baseline point highlighted.
pub fn comparison_svg(rep: &ComparisonReport) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 50.0;
    let pts: Vec<(f64, f64, f64)> = rep
        .baseline_sweep
        .iter()
        .map(|r| {
            (
                r.report.lesion_fnr,
                r.report.lesion_fp_per_slice,
                r.threshold,
            )
        })
        .filter(|p| p.0.is_finite() && p.1.is_finite())
        .collect();
    let cost = (rep.cost.lesion_fnr, rep.cost.lesion_fp_per_slice);
    let ymax = pts
        .iter()
        .map(|p| p.1)
        .chain(std::iter::once(cost.1).filter(|v| v.is_finite()))
        .fold(0.0_f64, f64::max)
        .max(1e-9)
        * 1.1;
    let sx = |x: f64| M + x.clamp(0.0, 1.0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y / ymax).clamp(0.0, 1.0) * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{M}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{b}" stroke="black"/>"#,
        b = H - M,
        r = W - M
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.1}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
            sx(f),
            H - M + 15.0,
            f,
            M - 5.0,
            sy(f * ymax) + 4.0,
            f * ymax
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">lesion FNR</text><text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">FP per slice</text>"#,
        W / 2.0,
        H - 12.0,
        H / 2.0,
        H / 2.0
    );
    if !pts.is_empty() {
        let path: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#4a78b5"/>"##,
            path.join(" ")
        );
        for p in &pts {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#4a78b5"><title>t={}</title></circle>"##,
                sx(p.0),
                sy(p.1),
                p.2
            );
        }
    }
    let m = &rep.baseline_matched.report;
    if m.lesion_fnr.is_finite() && m.lesion_fp_per_slice.is_finite() {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="6" fill="none" stroke="#4a78b5" stroke-width="2"/>"##,
            sx(m.lesion_fnr),
            sy(m.lesion_fp_per_slice)
        );
    }
    if cost.0.is_finite() && cost.1.is_finite() {
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="9" height="9" fill="#c8452c"/>"##,
            sx(cost.0) - 4.5,
            sy(cost.1) - 4.5
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{x}" y="12" width="9" height="9" fill="#c8452c"/><text x="{tx}" y="20">cost-trained (t={t})</text><circle cx="{cx}" cy="34" r="3" fill="#4a78b5"/><text x="{tx}" y="38">baseline threshold sweep</text>"##,
        x = W - 190.0,
        tx = W - 176.0,
        cx = W - 185.5,
        t = rep.cost.threshold
    );
    s.push_str("</svg>\n");
    s
}
