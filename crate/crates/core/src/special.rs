//! Bessel functions of the first kind and the sideband overlap series used by
//! the tunable beamsplitter.

/// Values `J_0(x), J_1(x), ..., J_n(x)` by Miller's backward recurrence,
/// normalized with `J_0 + 2 Σ J_{2k} = 1`.
pub fn bessel_j_orders(n: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let ax = x.abs();
    let scale = (n as f64).max(ax);
    let mut start = scale.ceil() as usize + 20 + (60.0 * scale).sqrt().ceil() as usize;
    if start % 2 == 1 {
        start += 1;
    }

    const BIG: f64 = 1e250;
    let mut next = 0.0; // J_{k+1}
    let mut cur = 1e-300; // J_k
    let mut norm = 0.0;
    for k in (1..=start).rev() {
        // J_{k-1} = (2k/x) J_k - J_{k+1}
        let prev = (2.0 * k as f64 / ax) * cur - next;
        next = cur;
        cur = prev;
        let order = k - 1;
        if order <= n {
            out[order] = cur;
        }
        if order % 2 == 0 && order > 0 {
            norm += 2.0 * cur;
        }
        if cur.abs() > BIG {
            cur /= BIG;
            next /= BIG;
            norm /= BIG;
            for v in out.iter_mut() {
                *v /= BIG;
            }
        }
    }
    norm += cur;
    for v in out.iter_mut() {
        *v /= norm;
    }
    if x < 0.0 {
        for (k, v) in out.iter_mut().enumerate() {
            if k % 2 == 1 {
                *v = -*v;
            }
        }
    }
    out
}

/// `J_k(x)` for any integer order, using `J_{-k} = (-1)^k J_k`.
pub fn bessel_j(order: i64, x: f64) -> f64 {
    let k = order.unsigned_abs() as usize;
    let v = bessel_j_orders(k, x)[k];
    if order < 0 && k % 2 == 1 {
        -v
    } else {
        v
    }
}

/// Sideband overlap `S(Θ) = Σ_{k≥1} J_k(Θ) J_{k-1}(Θ)`, summed until a term
/// falls below `1e-15` in magnitude.
pub fn sideband_overlap(theta: f64) -> f64 {
    let kmax = theta.abs().ceil() as usize + 40;
    let j = bessel_j_orders(kmax, theta);
    let mut sum = 0.0;
    for k in 1..=kmax {
        let term = j[k] * j[k - 1];
        sum += term;
        if k as f64 > theta.abs() && term.abs() < 1e-15 {
            break;
        }
    }
    sum
}

/// Smallest positive root of `J_0`, found by bisection on `[2, 3]`.
pub fn bessel_j0_first_root() -> f64 {
    let (mut lo, mut hi) = (2.0_f64, 3.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bessel_j(0, lo) * bessel_j(0, mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_argument_limits() {
        let j = bessel_j_orders(3, 1e-8);
        assert!((j[0] - 1.0).abs() < 1e-15);
        assert!((j[1] - 5e-9).abs() < 1e-20);
        assert!(j[3].abs() < 1e-24);
    }

    #[test]
    fn parity_under_negation() {
        for k in -5..=5 {
            let a = bessel_j(k, -2.3);
            let b = if k.rem_euclid(2) == 1 { -bessel_j(k, 2.3) } else { bessel_j(k, 2.3) };
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn j0_root() {
        let r = bessel_j0_first_root();
        assert!((r - 2.404_825_557_695_773).abs() < 1e-12);
    }

    #[test]
    fn overlap_vanishes_at_zero() {
        assert_eq!(sideband_overlap(0.0), 0.0);
        // S ≈ Θ/2 for small Θ
        assert!((sideband_overlap(1e-4) - 5e-5).abs() < 1e-12);
    }
}
