//! Decibel conversions. SINR targets cross the API boundary in dB and are
//! converted to linear exactly once, at the boundary.

/// 10^(db/10).
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// 10 log10(x). Returns -inf for x = 0, NaN for negative input.
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}
