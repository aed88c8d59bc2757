//! Text output helpers shared by the CSV and dump writers.

/// Formats a float with 17 significant digits in scientific notation.
///
/// Output never depends on locale: `.` is always the decimal separator.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Header fragment `x1,x2,...,xd`.
pub(crate) fn coordinate_header(dim: usize) -> String {
    (1..=dim)
        .map(|i| format!("x{i}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) fn join_floats(values: &[f64], sep: &str) -> String {
    values
        .iter()
        .map(|v| format_float(*v))
        .collect::<Vec<_>>()
        .join(sep)
}
