//! Log-domain arithmetic shared by the lattice, decoder and model code.
//!
//! `f64::NEG_INFINITY` is the log of zero and is absorbing under
//! [`log_add_exp`].

/// `ln(exp(a) + exp(b))` with the max-shift trick.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(sum(exp(x)))` over a slice. Empty input yields negative infinity.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// In-place log-softmax.
pub fn log_softmax_in_place(values: &mut [f64]) {
    let norm = log_sum_exp(values);
    for v in values.iter_mut() {
        *v -= norm;
    }
}

pub fn log_softmax(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    log_softmax_in_place(&mut out);
    out
}

/// Index of the largest element; ties go to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_exp_matches_direct() {
        let a: f64 = -1.3;
        let b: f64 = -0.2;
        let direct = (a.exp() + b.exp()).ln();
        assert!((log_add_exp(a, b) - direct).abs() < 1e-15);
        assert_eq!(log_add_exp(a, b), log_add_exp(b, a));
    }

    #[test]
    fn neg_infinity_is_absorbing() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, -2.0), -2.0);
        assert_eq!(log_add_exp(-2.0, f64::NEG_INFINITY), -2.0);
        assert_eq!(
            log_add_exp(f64::NEG_INFINITY, f64::NEG_INFINITY),
            f64::NEG_INFINITY
        );
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn large_magnitudes_do_not_overflow() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn softmax_normalizes() {
        let lp = log_softmax(&[0.3, -2.0, 5.0, 1.0]);
        assert!(log_sum_exp(&lp).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_lower_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }
}
