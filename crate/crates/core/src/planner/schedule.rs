use std::f64::consts::FRAC_PI_2;

/// Fraction of tokens finalized after iteration `l` of `l_max`.
pub fn cosine_fraction(l: usize, l_max: usize) -> f64 {
    1.0 - (FRAC_PI_2 * l as f64 / l_max as f64).cos()
}

/// Cumulative number of finalized tokens after iteration `l` (1-based).
pub fn cosine_schedule(l: usize, l_max: usize, k: usize) -> usize {
    assert!(l >= 1 && l <= l_max, "iteration {l} outside 1..={l_max}");
    if l == l_max {
        return k;
    }
    let count = ((cosine_fraction(l, l_max) * k as f64).ceil() as usize).min(k);
    // monotone by construction of cos on [0, pi/2], clamped against rounding
    if l > 1 {
        count.max(cosine_schedule(l - 1, l_max, k))
    } else {
        count
    }
}

/// Counts for every iteration `1..=l_max`.
pub fn schedule_counts(l_max: usize, k: usize) -> Vec<usize> {
    (1..=l_max).map(|l| cosine_schedule(l, l_max, k)).collect()
}
