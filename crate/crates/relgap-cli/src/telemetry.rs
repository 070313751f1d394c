//! CSV emission with a hard non-finite guard: a NaN anywhere in telemetry
//! aborts the run with a diagnostic instead of poisoning downstream files.

use std::io::Write;
use std::path::Path;

use crate::CliError;

/// Formats one float field, refusing non-finite values.
pub fn float_field(value: f64, context: &str) -> Result<String, CliError> {
    if !value.is_finite() {
        return Err(CliError::failure(format!(
            "non-finite value {value} in telemetry column '{context}'"
        )));
    }
    Ok(value.to_string())
}

/// Writes a header plus rows; every row must match the header's arity.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<(), CliError> {
    let columns = header.split(',').count();
    let mut out = String::with_capacity(rows.len() * 32 + header.len());
    out.push_str(header);
    out.push('\n');
    for row in rows {
        assert_eq!(
            row.len(),
            columns,
            "row arity does not match header '{header}'"
        );
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::failure(format!("cannot create {}: {e}", path.display())))?;
    file.write_all(out.as_bytes())
        .map_err(|e| CliError::failure(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Interquartile range via the nearest-rank quartiles.
pub fn iqr(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let q1 = values[(n - 1) / 4];
    let q3 = values[3 * (n - 1) / 4];
    q3 - q1
}
