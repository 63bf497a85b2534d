/// Formats `x` with at most `decimal_places` digits after the point, rounding
/// half away from zero on the shortest decimal representation of `x`.
/// Trailing zeros and a trailing point are removed; negative zero prints as `0`.
pub fn format_number(x: f64, decimal_places: u32) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    // f64 Display never uses exponent notation and round-trips exactly.
    let repr = x.abs().to_string();
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((&repr, ""));
    let dp = decimal_places as usize;

    let mut digits: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    let frac = frac_part.as_bytes();
    digits.extend(frac.iter().take(dp).map(|b| b - b'0'));
    if frac.len() > dp && frac[dp] >= b'5' {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let frac_len = frac.len().min(dp);
    let split = digits.len() - frac_len;
    let mut int_str: String = digits[..split].iter().map(|d| (b'0' + d) as char).collect();
    let frac_str: String = digits[split..].iter().map(|d| (b'0' + d) as char).collect();
    let frac_str = frac_str.trim_end_matches('0');
    let trimmed = int_str.trim_start_matches('0');
    int_str = if trimmed.is_empty() { "0".into() } else { trimmed.into() };

    let mut out = int_str;
    if !frac_str.is_empty() {
        out.push('.');
        out.push_str(frac_str);
    }
    if x < 0.0 && out != "0" {
        out.insert(0, '-');
    }
    out
}

/// Quintile edges (20/40/60/80th percentiles, linear interpolation) of the
/// given values. `None` for an empty slice.
pub fn quintile_bins(values: &[f64]) -> Option<[f64; 4]> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pct = |q: f64| {
        let h = (sorted.len() - 1) as f64 * q;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    };
    Some([pct(0.2), pct(0.4), pct(0.6), pct(0.8)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rounding_and_stripping() {
        assert_eq!(format_number(3.456, 2), "3.46");
        assert_eq!(format_number(5.0, 2), "5");
        assert_eq!(format_number(-0.004, 2), "0");
        assert_eq!(format_number(-0.0, 2), "0");
        assert_eq!(format_number(2.675, 2), "2.68");
        assert_eq!(format_number(-2.675, 2), "-2.68");
        assert_eq!(format_number(9.999, 2), "10");
        assert_eq!(format_number(0.1 + 0.2, 2), "0.3");
        assert_eq!(format_number(63.45752, 2), "63.46");
        assert_eq!(format_number(180.34, 2), "180.34");
        assert_eq!(format_number(0.005, 2), "0.01");
        assert_eq!(format_number(1e-7, 2), "0");
        assert_eq!(format_number(1234567.0, 0), "1234567");
        assert_eq!(format_number(0.5, 0), "1");
        assert_eq!(format_number(-0.5, 0), "-1");
    }

    #[test]
    fn quintiles_of_one_to_ten() {
        let values: Vec<f64> = (1..=10).map(f64::from).collect();
        let edges = quintile_bins(&values).unwrap();
        // percentile oracle: position (n-1)q = 1.8, 3.6, 5.4, 7.2 on 1..10
        let expected = [2.8, 4.6, 6.4, 8.2];
        for (e, x) in edges.iter().zip(expected) {
            assert!((e - x).abs() < 1e-12, "{edges:?}");
        }
        assert!(quintile_bins(&[]).is_none());
    }

    proptest! {
        #[test]
        fn formatted_value_is_within_half_ulp_of_precision(x in -1e6f64..1e6) {
            let s = format_number(x, 2);
            let back: f64 = s.parse().unwrap();
            prop_assert!((back - x).abs() <= 0.005 + 1e-9);
            prop_assert!(!s.ends_with('.') && !(s.contains('.') && s.ends_with('0')));
            prop_assert!(s != "-0");
            // formatting is idempotent on its own output
            prop_assert_eq!(format_number(back, 2), s);
        }
    }
}
