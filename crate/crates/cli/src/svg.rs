use std::fmt::Write;

use pddwi_core::decomposition::{fit_monoexp, SubsetPlan};
use pddwi_core::dwi::{validate_study, DwiStudy, ADC_0_100, ADC_0_800, ADC_100_800};
use pddwi_core::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;

/// ROI-mean `ln(s)` against b with the low, high and full-range fits.
pub fn decay_plot(study: &DwiStudy) -> Result<String> {
    let violations = validate_study(study);
    if !violations.is_empty() {
        return Err(Error::InvalidStudy(violations));
    }
    let plan = SubsetPlan::new(&study.bvalues)?;
    let b = study.bvalues.values();
    let mean = study.roi_mean_signal();
    if let Some(s) = mean.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Numeric(format!("ROI mean signal {s} is not positive")));
    }
    let points: Vec<(f64, f64)> = b.iter().copied().zip(mean.iter().copied()).collect();
    let fit = |idx: &[usize]| {
        let pts: Vec<(f64, f64)> = idx.iter().map(|&i| points[i]).collect();
        fit_monoexp(&pts).map_err(|e| Error::Numeric(format!("ROI fit failed: {e}")))
    };
    let fits = [
        (ADC_0_100, fit(&plan.low)?, "#d62728"),
        (ADC_100_800, fit(&plan.high)?, "#1f77b4"),
        (ADC_0_800, fit(&plan.all)?, "#2ca02c"),
    ];

    let logs: Vec<f64> = mean.iter().map(|s| s.ln()).collect();
    let b_max = b[b.len() - 1].max(1.0);
    let mut y_lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut y_hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (_, f, _) in &fits {
        y_lo = y_lo.min(f.log_s0 - f.adc * b_max);
        y_hi = y_hi.max(f.log_s0);
    }
    let pad = ((y_hi - y_lo) * 0.08).max(1e-3);
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);
    let px = |bv: f64| MARGIN + bv / b_max * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| HEIGHT - MARGIN - (v - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{} {} ROI mean log-signal ({} voxels)</text>"#,
        WIDTH / 2.0,
        escape(&study.patient_id),
        study.time_point,
        study.mask_count()
    );
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for &bv in b {
        let x = px(bv);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{bv}</text>"#,
            y0 + 18.0
        );
    }
    for k in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            x0 - 6.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">b (s/mm²)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">ln S</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (i, (name, f, color)) in fits.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.5"/>"#,
            px(0.0),
            py(f.log_s0),
            px(b_max),
            py(f.log_s0 - f.adc * b_max)
        );
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{ly:.2}" fill="{color}" text-anchor="end">{name} = {:.4e} mm²/s</text>"#,
            x1,
            f.adc
        );
    }
    for (&bv, &v) in b.iter().zip(&logs) {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="black"/>"#, px(bv), py(v));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
