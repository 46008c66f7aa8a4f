//! Attention strip plot: the ECG trace with one bar per detected beat whose
//! height tracks that beat's attention weight.

use beatnet::signal::EcgRecord;

const WIDTH: f64 = 1180.0;
const HEIGHT: f64 = 260.0;
const MARGIN: f64 = 10.0;
const TRACE_TOP: f64 = 15.0;
const TRACE_BOTTOM: f64 = 165.0;
const BAR_BASE: f64 = 245.0;
const BAR_MAX: f64 = 70.0;
const BAR_WIDTH: f64 = 5.0;

// At most this many polyline points; longer records are strided down.
const MAX_POINTS: usize = 3000;

/// Renders one record and its per-beat attention weights. Exactly one bar per
/// entry of `r_indices`; `a` must be the matching attention series.
pub fn attention_strip(record: &EcgRecord, r_indices: &[usize], a: &[f64]) -> String {
    assert_eq!(r_indices.len(), a.len(), "one attention weight per beat");
    let n = record.samples.len().max(2);
    let x_of = |i: usize| MARGIN + (i as f64 / (n - 1) as f64) * (WIDTH - 2.0 * MARGIN);

    let lo = record.samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = record.samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let y_of = |s: f64| TRACE_BOTTOM - (s - lo) / span * (TRACE_BOTTOM - TRACE_TOP);

    let stride = n.div_ceil(MAX_POINTS).max(1);
    let mut points = String::new();
    for i in (0..n).step_by(stride) {
        points.push_str(&format!("{:.2},{:.2} ", x_of(i), y_of(record.samples[i])));
    }
    let max_a = a.iter().cloned().fold(0.0f64, f64::max).max(1e-12);

    let mut svg = String::with_capacity(points.len() + a.len() * 90 + 512);
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>\n"
    ));
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#3a4a5a\" stroke-width=\"0.8\"/>\n",
        points.trim_end()
    ));
    for (&r, &weight) in r_indices.iter().zip(a) {
        let h = weight / max_a * BAR_MAX;
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{BAR_WIDTH}\" height=\"{:.2}\" \
             fill=\"#d95f02\"><title>beat at sample {r}: a={weight:.6}</title></rect>\n",
            x_of(r) - BAR_WIDTH / 2.0,
            BAR_BASE - h,
            h,
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{BAR_BASE}\" x2=\"{:.2}\" y2=\"{BAR_BASE}\" \
         stroke=\"#888888\" stroke-width=\"0.5\"/>\n",
        WIDTH - MARGIN
    ));
    svg.push_str("</svg>\n");
    svg
}
