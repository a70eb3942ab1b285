//! Log-space helpers shared by the classifier, distance estimators and
//! soft value solvers.

/// `log(sum(exp(x)))` with max subtraction. Returns `-inf` for an empty
/// slice or when every entry is `-inf`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `log(sum_i w_i * exp(x_i))` for non-negative weights. Zero-weight terms
/// are dropped rather than producing `0 * inf`.
pub fn weighted_logsumexp(weights: &[f64], xs: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), xs.len());
    let terms: Vec<f64> = weights
        .iter()
        .zip(xs)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, x)| w.ln() + x)
        .collect();
    logsumexp(&terms)
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|&l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Streaming accumulator for `log(sum(exp(x)))` over an unbounded sequence.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExpAcc {
    max: f64,
    scaled_sum: f64,
    // Neumaier compensation of `scaled_sum`.
    comp: f64,
}

impl Default for LogSumExpAcc {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled_sum: 0.0,
            comp: 0.0,
        }
    }
}

impl LogSumExpAcc {
    pub fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        let term = if x <= self.max {
            (x - self.max).exp()
        } else {
            let scale = (self.max - x).exp();
            self.scaled_sum *= scale;
            self.comp *= scale;
            self.max = x;
            1.0
        };
        let t = self.scaled_sum + term;
        if self.scaled_sum.abs() >= term.abs() {
            self.comp += (self.scaled_sum - t) + term;
        } else {
            self.comp += (term - t) + self.scaled_sum;
        }
        self.scaled_sum = t;
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + (self.scaled_sum + self.comp).ln()
        }
    }
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Linear-interpolation percentile of already sorted data, `q` in `[0, 100]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_handles_large_magnitudes() {
        assert!((logsumexp(&[1e4, 1e4]) - (1e4 + 2f64.ln())).abs() < 1e-9);
        assert!((logsumexp(&[-1e4, -1e4]) - (-1e4 + 2f64.ln())).abs() < 1e-9);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn streaming_matches_batch() {
        let xs = [0.3, -2.0, 5.5, 5.4, -100.0, f64::NEG_INFINITY];
        let mut acc = LogSumExpAcc::default();
        xs.iter().for_each(|&x| acc.push(x));
        assert!((acc.value() - logsumexp(&xs)).abs() < 1e-12);
    }

    #[test]
    fn percentiles_interpolate() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(percentile_sorted(&xs, 50.0), 1.5);
        assert_eq!(percentile_sorted(&xs, 100.0), 3.0);
        assert_eq!(percentile_sorted(&[10.0], 90.0), 10.0);
    }

    #[test]
    fn accumulator_is_compensated() {
        let mut acc = LogSumExpAcc::default();
        let n = 1_000_000;
        for _ in 0..n {
            acc.push(-3.0);
        }
        assert!((acc.value() - (-3.0 + (n as f64).ln())).abs() < 1e-13);
    }

    proptest::proptest! {
        #[test]
        fn logsumexp_bounds(xs in proptest::collection::vec(-700.0f64..700.0, 1..20)) {
            let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = logsumexp(&xs);
            proptest::prop_assert!(v >= m - 1e-12);
            proptest::prop_assert!(v <= m + (xs.len() as f64).ln() + 1e-9);
            let total: f64 = softmax(&xs).iter().sum();
            proptest::prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
