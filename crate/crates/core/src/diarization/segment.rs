/// Shortest tail worth its own window, and the bound below which a whole
/// region becomes a single window.
pub const MIN_SEGMENT: f64 = 0.5;

const EPS: f64 = 1e-9;

/// Windows of `width` every `step` within each region. A region no
/// longer than `width` yields itself. When the full windows leave at least
/// `MIN_SEGMENT` of a region uncovered, a shorter window starting one step
/// after the last full one runs to the region end.
pub fn uniform_segment(regions: &[(f64, f64)], width: f64, step: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(a, b) in regions {
        if b - a <= width + EPS {
            out.push((a, b));
            continue;
        }
        let mut i = 0usize;
        let mut last_end = a;
        loop {
            let s = a + i as f64 * step;
            if s + width > b + EPS {
                break;
            }
            last_end = s + width;
            out.push((s, last_end.min(b)));
            i += 1;
        }
        if b - last_end >= MIN_SEGMENT - EPS {
            out.push((a + i as f64 * step, b));
        }
    }
    out
}

/// Assigns each window the span between the midpoints of its overlaps
/// with its neighbours. The first and last windows of a region extend to
/// the region edges, so the spans tile every region exactly.
pub fn midpoint_spans(regions: &[(f64, f64)], windows: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut spans = Vec::with_capacity(windows.len());
    let mut wi = 0;
    for &(a, b) in regions {
        let start = wi;
        while wi < windows.len() && windows[wi].0 >= a - EPS && windows[wi].1 <= b + EPS {
            wi += 1;
        }
        let w = &windows[start..wi];
        for (j, &(s, e)) in w.iter().enumerate() {
            let left = if j == 0 { a } else { 0.5 * (s + w[j - 1].1) };
            let right = if j + 1 == w.len() { b } else { 0.5 * (w[j + 1].0 + e) };
            spans.push((left, right));
        }
    }
    spans
}
