//! Small estimators shared by the Monte Carlo modules.

/// z-value of the two-sided 95% normal interval.
pub const Z95: f64 = 1.959_963_984_540_054;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two samples.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the mean assuming independent samples.
pub fn std_error(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Ratio estimate `Σy / Σl` over independent regeneration cycles and its
/// standard error.
///
/// `cycles` holds one `(y, l)` pair per cycle: the cycle's summed quantity and
/// its length. Fewer than two cycles give a zero error.
pub fn regenerative(cycles: &[(f64, f64)]) -> (f64, f64) {
    let total_y: f64 = cycles.iter().map(|c| c.0).sum();
    let total_l: f64 = cycles.iter().map(|c| c.1).sum();
    if total_l <= 0.0 {
        return (f64::NAN, 0.0);
    }
    let r = total_y / total_l;
    let n = cycles.len();
    if n < 2 {
        return (r, 0.0);
    }
    let ss: f64 = cycles.iter().map(|&(y, l)| (y - r * l).powi(2)).sum();
    (r, (ss * n as f64 / (n - 1) as f64).sqrt() / total_l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_small_samples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(variance(&[3.0]), 0.0);
        assert!(mean(&[]).is_nan());
    }

    #[test]
    fn regenerative_matches_iid_for_unit_cycles() {
        let xs = [0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0];
        let cycles: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 1.0)).collect();
        let (r, se) = regenerative(&cycles);
        assert!((r - mean(&xs)).abs() < 1e-15);
        assert!((se - std_error(&xs)).abs() < 1e-15);
        assert_eq!(regenerative(&[(2.0, 4.0)]), (0.5, 0.0));
    }
}
