//! Small dense helpers for short vectors and row-major `d x l` matrices.

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

#[inline]
pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[inline]
pub(crate) fn sub_into(a: &[f64], b: &[f64], out: &mut [f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x - y;
    }
}

/// `|a|^p`, with `|a|^0 = 1` even at `a = 0`.
#[inline]
pub(crate) fn pow_norm(norm: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else if p == 2.0 {
        norm * norm
    } else {
        norm.powf(p)
    }
}

/// `|a|^e` from `|a|^2`, exact powers for integer exponents.
#[inline]
pub(crate) fn pow_from_sq(nsq: f64, e: f64) -> f64 {
    if e == 0.0 {
        return 1.0;
    }
    let half = 0.5 * e;
    if half.fract() == 0.0 && half.abs() <= 64.0 {
        nsq.powi(half as i32)
    } else if e.fract() == 0.0 && e.abs() <= 64.0 {
        nsq.sqrt().powi(e as i32)
    } else {
        nsq.powf(half)
    }
}
