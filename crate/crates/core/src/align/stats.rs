//! Rank statistics for the pixel-controlled partial Spearman correlation.

use crate::error::{Error, Result};

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Residual of `y` after least squares on `x` with an intercept. A constant
/// `x` explains only the mean.
pub fn residualize(y: &[f64], x: &[f64]) -> Vec<f64> {
    let (my, mx) = (mean(y), mean(x));
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let beta = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    y.iter().zip(x).map(|(b, a)| (b - my) - beta * (a - mx)).collect()
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa > 0.0 && sbb > 0.0 {
        Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
    } else {
        None
    }
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Spearman correlation of `feat` and `pose` with the rank-linear effect of
/// `pix` removed from both.
pub fn partial_spearman(feat: &[f64], pose: &[f64], pix: &[f64]) -> Result<f64> {
    let n = feat.len();
    if pose.len() != n || pix.len() != n {
        return Err(Error::shape(format!("three vectors of length {n}"), format!("{}, {}", pose.len(), pix.len())));
    }
    if n < 3 {
        return Err(Error::Input(format!("partial correlation needs at least 3 pairs, got {n}")));
    }
    if feat.iter().chain(pose).chain(pix).any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite distance".into()));
    }
    if is_constant(feat) || is_constant(pose) {
        return Err(Error::Undefined("constant feature or pose distances".into()));
    }
    let rc = average_ranks(pix);
    let ef = residualize(&average_ranks(feat), &rc);
    let ep = residualize(&average_ranks(pose), &rc);
    pearson(&ef, &ep).ok_or_else(|| Error::Undefined("a residual vector is identically zero".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
        assert_eq!(average_ranks(&[1.0; 3]), vec![2.0; 3]);
    }

    #[test]
    fn identical_and_opposite_orders() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let c = [7.0; 5];
        assert!((partial_spearman(&a, &a, &c).unwrap() - 1.0).abs() < 1e-12);
        assert!((partial_spearman(&neg, &a, &c).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!(matches!(partial_spearman(&[2.0; 4], &a, &a), Err(Error::Undefined(_))));
        assert!(matches!(partial_spearman(&a, &[2.0; 4], &a), Err(Error::Undefined(_))));
        // both fully explained by the control
        assert!(matches!(partial_spearman(&a, &a, &a), Err(Error::Undefined(_))));
        assert!(partial_spearman(&a[..2], &a[..2], &a[..2]).is_err());
        assert!(partial_spearman(&a, &a[..3], &a).is_err());
    }
}
