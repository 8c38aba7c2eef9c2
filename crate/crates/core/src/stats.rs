//! Small fitting helpers shared by the studies.

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return (0.0, my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Slope of `log2 c` against `log2 h`. Non-positive values are skipped.
pub fn log2_slope(h: &[f64], c: &[f64]) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = h
        .iter()
        .zip(c)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && b.is_finite())
        .map(|(a, b)| (a.log2(), b.log2()))
        .unzip();
    if x.len() < 2 {
        return f64::NAN;
    }
    linear_fit(&x, &y).0
}

/// Ratio of the largest to the smallest positive entry.
pub fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo > 0.0 { hi / lo } else { f64::INFINITY }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_power_law() {
        let h = [0.5, 0.25, 0.125, 0.0625];
        let c: Vec<f64> = h.iter().map(|x: &f64| 3.0 * x.powf(-1.0)).collect();
        assert!((log2_slope(&h, &c) + 1.0).abs() < 1e-12);
        assert_eq!(spread(&[2.0, 4.0, 3.0]), 2.0);
    }
}
