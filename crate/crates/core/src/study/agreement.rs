//! Inter-rater agreement: Krippendorff's alpha (ordinal) and Kendall's tau-b.

use alloc::vec;
use alloc::vec::Vec;

use super::StudyError;

/// Krippendorff's alpha with the ordinal metric for values `0..levels`.
///
/// `units[u][r]` is rater `r`'s value for unit `u`. Units with fewer than
/// two values are not pairable and drop out.
pub fn krippendorff_alpha_ordinal(units: &[Vec<Option<u8>>], levels: usize) -> Result<f64, StudyError> {
    let mut o = vec![vec![0.0f64; levels]; levels];
    for unit in units {
        let vals: Vec<usize> = unit.iter().flatten().map(|&v| v as usize).collect();
        if let Some(&bad) = vals.iter().find(|&&v| v >= levels) {
            return Err(StudyError::ValueOutOfRange { value: bad as i64, levels });
        }
        let m = vals.len();
        if m < 2 {
            continue;
        }
        let w = 1.0 / (m - 1) as f64;
        for (i, &c) in vals.iter().enumerate() {
            for (j, &k) in vals.iter().enumerate() {
                if i != j {
                    o[c][k] += w;
                }
            }
        }
    }
    let n_c: Vec<f64> = o.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = n_c.iter().sum();
    if n == 0.0 {
        return Err(StudyError::NoCoRatedItems);
    }
    let delta = ordinal_delta(&n_c);
    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for c in 0..levels {
        for k in 0..levels {
            d_o += o[c][k] * delta[c][k];
            d_e += n_c[c] * n_c[k] * delta[c][k];
        }
    }
    if d_e == 0.0 {
        return Err(StudyError::AlphaUndefined);
    }
    Ok(1.0 - (n - 1.0) * d_o / d_e)
}

/// Squared ordinal distances from the value marginals.
fn ordinal_delta(n_c: &[f64]) -> Vec<Vec<f64>> {
    let l = n_c.len();
    let mut d = vec![vec![0.0; l]; l];
    for c in 0..l {
        for k in c + 1..l {
            let between: f64 = n_c[c..=k].iter().sum::<f64>() - (n_c[c] + n_c[k]) / 2.0;
            d[c][k] = between * between;
            d[k][c] = d[c][k];
        }
    }
    d
}

/// Kendall's tau-b in O(n log n) (Knight's algorithm).
pub fn kendall_tau_b(x: &[i64], y: &[i64]) -> Result<f64, StudyError> {
    if x.len() != y.len() {
        return Err(StudyError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len() as u64;
    if n < 2 {
        return Err(StudyError::TauUndefined);
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by_key(|&i| (x[i], y[i]));

    let n0 = n * (n - 1) / 2;
    let (mut n1, mut n3) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                n3 += run_xy * (run_xy - 1) / 2;
                run_xy = 1;
            }
        } else {
            n1 += run_x * (run_x - 1) / 2;
            n3 += run_xy * (run_xy - 1) / 2;
            run_x = 1;
            run_xy = 1;
        }
    }
    n1 += run_x * (run_x - 1) / 2;
    n3 += run_xy * (run_xy - 1) / 2;

    // Inversions of y in x-order are exactly the discordant pairs.
    let mut ys: Vec<i64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = ys.clone();
    let discordant = count_inversions(&mut ys, &mut buf);

    let mut n2 = 0u64;
    let mut run = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            n2 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n2 += run * (run - 1) / 2;

    if n1 == n0 || n2 == n0 {
        return Err(StudyError::TauUndefined);
    }
    let concordant = n0 - n1 - n2 + n3 - discordant;
    let num = concordant as f64 - discordant as f64;
    Ok(num / libm::sqrt((n0 - n1) as f64 * (n0 - n2) as f64))
}

/// Merge sort that counts strict inversions; leaves `v` sorted.
fn count_inversions(v: &mut [i64], buf: &mut [i64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        count_inversions(l, bl) + count_inversions(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf[k] = v[i];
            i += 1;
        } else {
            buf[k] = v[j];
            inv += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    inv
}
