//! Parsers for the small textual range syntaxes the flags use.

/// End-point slack when walking a `start:end:step` range, so binary
/// floating point steps still land on the written end value.
pub const RANGE_TOLERANCE: f64 = 1e-9;

/// Parses `start:end:step` into the inclusive list of thresholds. Both
/// ends are included when the walk reaches them within [`RANGE_TOLERANCE`].
pub fn parse_threshold_range(text: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = text.split(':').collect();
    let [start, end, step] = parts.as_slice() else {
        return Err(format!(
            "threshold range {text:?} must be start:end:step, e.g. 0.05:1.0:0.05"
        ));
    };
    let parse = |name: &str, s: &str| -> Result<f64, String> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| format!("threshold range {name} {s:?} is not a number"))
    };
    let start = parse("start", start)?;
    let end = parse("end", end)?;
    let step = parse("step", step)?;
    if !start.is_finite() || !end.is_finite() || !step.is_finite() {
        return Err(format!("threshold range {text:?} has a non-finite part"));
    }
    if step <= 0.0 {
        return Err(format!("threshold step must be positive, got {step}"));
    }
    if start > end + RANGE_TOLERANCE {
        return Err(format!(
            "threshold range is inverted: start {start} exceeds end {end}"
        ));
    }
    let mut values = Vec::new();
    let mut i = 0u32;
    loop {
        let t = start + step * f64::from(i);
        if t > end + RANGE_TOLERANCE {
            break;
        }
        values.push(t);
        i += 1;
    }
    Ok(values)
}

/// Parses a `LO:HI` integer span, inclusive on both ends.
pub fn parse_span(text: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi] = parts.as_slice() else {
        return Err(format!("range {text:?} must be LO:HI, e.g. 8:16"));
    };
    let parse = |s: &str| -> Result<usize, String> {
        s.trim()
            .parse::<usize>()
            .map_err(|_| format!("range bound {s:?} is not a non-negative integer"))
    };
    let (lo, hi) = (parse(lo)?, parse(hi)?);
    if lo > hi {
        return Err(format!("range is inverted: {lo} exceeds {hi}"));
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_threshold_range_has_twenty_values() {
        let values = parse_threshold_range("0.05:1.0:0.05").unwrap();
        assert_eq!(values.len(), 20);
        assert!((values[0] - 0.05).abs() < 1e-12);
        // The end is included even though 0.05 * 20 overshoots 1.0 by a
        // few ulps in binary.
        assert!((values[19] - 1.0).abs() < RANGE_TOLERANCE);
    }

    #[test]
    fn end_point_outside_step_grid_is_dropped() {
        let values = parse_threshold_range("0.1:0.4:0.2").unwrap();
        assert_eq!(values.len(), 2);
        assert!((values[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn single_value_range() {
        let values = parse_threshold_range("0.5:0.5:0.1").unwrap();
        assert_eq!(values.len(), 1);
        assert_eq!(values[0], 0.5);
    }

    #[test]
    fn inverted_and_malformed_ranges_fail() {
        assert!(parse_threshold_range("0.9:0.1:0.05")
            .unwrap_err()
            .contains("inverted"));
        assert!(parse_threshold_range("0.1:0.9:0").is_err());
        assert!(parse_threshold_range("0.1:0.9:-0.1").is_err());
        assert!(parse_threshold_range("0.1:0.9").is_err());
        assert!(parse_threshold_range("a:b:c").is_err());
    }

    #[test]
    fn spans_parse_and_reject_inversion() {
        assert_eq!(parse_span("8:16").unwrap(), (8, 16));
        assert_eq!(parse_span("3:3").unwrap(), (3, 3));
        assert!(parse_span("9:5").unwrap_err().contains("inverted"));
        assert!(parse_span("5").is_err());
        assert!(parse_span("-1:5").is_err());
    }
}
