//! Thin wrappers over `libm` so the crate builds without std.

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// `ln(sum(exp(v)))`, returning `-inf` for an empty slice or all `-inf`.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    let s: f64 = v.iter().map(|&a| exp(a - max)).sum();
    max + ln(s)
}

/// Normalizes `v` (log weights) in place into probabilities and returns the
/// log normalizer.
pub(crate) fn normalize_log(v: &mut [f64]) -> f64 {
    let lse = log_sum_exp(v);
    for a in v.iter_mut() {
        *a = exp(*a - lse);
    }
    lse
}

/// Log-probabilities of a softmax whose last logit is pinned to zero.
pub(crate) fn log_softmax_pinned(free_logits: &[f64], out: &mut [f64]) {
    let k = out.len();
    debug_assert_eq!(free_logits.len() + 1, k);
    out[..k - 1].copy_from_slice(free_logits);
    out[k - 1] = 0.0;
    let lse = log_sum_exp(out);
    for a in out.iter_mut() {
        *a -= lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_direct_sum() {
        let v = [0.1, -2.0, 1.5];
        let direct = ln(v.iter().map(|&a| exp(a)).sum::<f64>());
        assert!((log_sum_exp(&v) - direct).abs() < 1e-14);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        // no overflow far from zero
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + ln(2.0))).abs() < 1e-12);
    }

    #[test]
    fn ln_2pi_constant() {
        assert!((LN_2PI - ln(2.0 * core::f64::consts::PI)).abs() < 1e-15);
    }
}
