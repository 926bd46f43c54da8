//! Small shared helpers.

/// Round `v` to `digits` significant decimal digits.
///
/// File writers round every floating-point value through this before
/// formatting so that repeated runs with the same seed produce byte-identical
/// artifacts.
pub(crate) fn round_sig(v: f64, digits: i32) -> f64 {
    if v == 0.0 || !v.is_finite() {
        // normalize -0.0 so the formatted text is stable
        return if v == 0.0 { 0.0 } else { v };
    }
    let exp = v.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits - 1 - exp);
    (v * scale).round() / scale
}

/// Format with 12 significant digits, plain decimal.
pub(crate) fn fmt_g12(v: f64) -> String {
    format!("{}", round_sig(v, 12))
}

/// Euclidean norm of a slice.
pub(crate) fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
