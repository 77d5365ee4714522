//! Small descriptive statistics shared by the generators and the metrics.

/// Pearson correlation of two equal-length sequences.
///
/// Degenerate cases follow the reconstruction-metric convention: two constant
/// sequences that are equal correlate at 1, a constant against a varying
/// sequence (or two different constants) at 0.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson: length mismatch");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let tiny =
        |ss: f64, m: f64| ss <= f64::EPSILON * f64::EPSILON * n * m.abs().max(1e-300).powi(2);
    let a_const = saa == 0.0 || tiny(saa, ma);
    let b_const = sbb == 0.0 || tiny(sbb, mb);
    match (a_const, b_const) {
        (true, true) => {
            if a == b || (ma - mb).abs() <= 1e-12 * ma.abs().max(mb.abs()) {
                1.0
            } else {
                0.0
            }
        }
        (true, false) | (false, true) => 0.0,
        (false, false) => (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0),
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternating_sequences_anticorrelate() {
        assert!((pearson(&[1., 0., 1., 0.], &[0., 1., 0., 1.]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_conventions() {
        assert_eq!(pearson(&[2., 2., 2.], &[2., 2., 2.]), 1.0);
        assert_eq!(pearson(&[2., 2., 2.], &[1., 2., 3.]), 0.0);
        assert_eq!(pearson(&[1., 1.], &[3., 3.]), 0.0);
    }

    #[test]
    fn std_of_known_values() {
        assert!((std_dev(&[2., 4., 4., 4., 5., 5., 7., 9.]) - 2.138089935299395).abs() < 1e-12);
    }
}
