//! Numeric text formatting shared by CSV writers and reports.

/// Formats `v` with exactly `digits` significant digits in positional
/// notation, switching to scientific notation outside [1e-5, 1e15).
/// Non-finite values print as `nan`, `inf` or `-inf`.
pub fn fmt_sig(v: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return format!("{:.*}", digits - 1, 0.0);
    }
    // round first so the exponent reflects carries (9.99.. -> 10.0)
    let sci = format!("{:.*e}", digits - 1, v);
    let exp: i32 = sci
        .split('e')
        .nth(1)
        .and_then(|e| e.parse().ok())
        .expect("formatted exponent");
    if !(-5..15).contains(&exp) {
        return sci;
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Formats an optional value; `None` becomes an empty field.
pub fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| fmt_sig(x, digits)).unwrap_or_default()
}

/// Parses a field written by [`fmt_opt`].
pub fn parse_opt(field: &str) -> Option<f64> {
    if field.is_empty() {
        None
    } else {
        field.parse().ok()
    }
}
