use super::MetricError;

/// Unbiased pass@k, `1 − C(n−c, k) / C(n, k)`, as the product
/// `1 − Π_{i=n−c+1}^{n} (1 − k/i)`.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, MetricError> {
    if c > n || k == 0 || k > n {
        return Err(MetricError::InvalidPassAtK { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    if k == 1 {
        return Ok(c as f64 / n as f64);
    }
    let mut miss = 1.0;
    for i in (n - c + 1)..=n {
        miss *= 1.0 - k as f64 / i as f64;
    }
    Ok(1.0 - miss)
}
