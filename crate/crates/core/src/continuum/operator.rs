//! The interaction operator 𝓛(f)(α) = ∫ over {γ : |f(γ) − f(α)| < 1} of
//! (f(γ) − f(α)) dγ, evaluated exactly for polylines.
//!
//! Because f is nondecreasing, the window {γ : |f(γ) − q| < 1} is an
//! interval [inf{f > q − 1}, inf{f ≥ q + 1}) up to a null set. Its ends are
//! found by inverting f, and the integral of a linear piece is closed form.

use serde::{Deserialize, Serialize};

use super::OpinionFunction;
use crate::error::{Error, Result};

/// Polyline plus its prefix integrals, ready for window queries.
pub(crate) struct Windowed<'a> {
    f: &'a OpinionFunction,
    prefix: Vec<f64>,
}

impl<'a> Windowed<'a> {
    pub fn new(f: &'a OpinionFunction) -> Self {
        Self { f, prefix: f.prefix_integrals() }
    }

    /// Position γ where f crosses level `c` on the piece ending at knot `p`,
    /// with ∫₀^γ f. `p` is the first knot past the crossing.
    #[inline]
    fn point(&self, p: usize, c: f64) -> (f64, f64) {
        let a = self.f.knots();
        let v = self.f.values();
        if p == 0 {
            return (0.0, 0.0);
        }
        if p == a.len() {
            return (1.0, self.prefix[p - 1]);
        }
        let (a0, a1, v0, v1) = (a[p - 1], a[p], v[p - 1], v[p]);
        if a1 == a0 {
            return (a0, self.prefix[p - 1]);
        }
        let g = a0 + (c - v0) / (v1 - v0) * (a1 - a0);
        // f(γ) = c on this piece, so the partial trapezoid is exact
        (g, self.prefix[p - 1] + 0.5 * (g - a0) * (v0 + c))
    }

    /// 𝓛 at an arbitrary level q, by binary search.
    pub fn at_level(&self, q: f64) -> f64 {
        let v = self.f.values();
        let p_lo = v.partition_point(|&x| x <= q - 1.0);
        let p_hi = v.partition_point(|&x| x < q + 1.0);
        self.combine(p_lo, p_hi, q)
    }

    #[inline]
    fn combine(&self, p_lo: usize, p_hi: usize, q: f64) -> f64 {
        let (g0, i0) = self.point(p_lo, q - 1.0);
        let (g1, i1) = self.point(p_hi, q + 1.0);
        (i1 - i0) - q * (g1 - g0)
    }

    /// 𝓛 at every knot with two monotone pointers, O(K).
    pub fn at_knots(&self) -> Vec<f64> {
        let v = self.f.values();
        let n = v.len();
        let mut out = Vec::with_capacity(n);
        let (mut p_lo, mut p_hi) = (0, 0);
        for &q in v {
            while p_lo < n && v[p_lo] <= q - 1.0 {
                p_lo += 1;
            }
            while p_hi < n && v[p_hi] < q + 1.0 {
                p_hi += 1;
            }
            out.push(self.combine(p_lo, p_hi, q));
        }
        out
    }
}

/// 𝓛(f) at the knots of f.
pub fn operator_l(f: &OpinionFunction) -> Vec<f64> {
    Windowed::new(f).at_knots()
}

/// 𝓛(f)(α) at any α in [0, 1].
pub fn operator_at(f: &OpinionFunction, alpha: f64) -> f64 {
    Windowed::new(f).at_level(f.eval(alpha))
}

/// Knot rates shifted by a constant so that Σ ω_k r_k = 0 for the trapezoid
/// weights ω. Differences between knots, and hence every slope bound, are
/// untouched; the mean of a state advanced with these rates is conserved to
/// rounding.
pub fn conservative_rates(f: &OpinionFunction) -> Vec<f64> {
    let mut r = operator_l(f);
    let w = f.knot_weights();
    let shift: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
    r.iter_mut().for_each(|x| *x -= shift);
    r
}

/// ∫₀¹ 𝓛(f)(α) dα, exact for polylines: 𝓛(f) is quadratic in α between the
/// knots and the preimages of knot values ± 1, so Simpson's rule on those
/// pieces is exact.
pub fn integral_of_operator(f: &OpinionFunction) -> f64 {
    let w = Windowed::new(f);
    let a = f.knots();
    let v = f.values();
    let mut cuts: Vec<f64> = a.to_vec();
    for &c in v {
        for level in [c - 1.0, c + 1.0] {
            let p = v.partition_point(|&x| x <= level);
            cuts.push(w.point(p, level).0);
            let p = v.partition_point(|&x| x < level);
            cuts.push(w.point(p, level).0);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for s in cuts.windows(2) {
        let (x0, x1) = (s[0], s[1]);
        if x1 <= x0 {
            continue;
        }
        let xm = 0.5 * (x0 + x1);
        // the piece of f holding the open interval (x0, x1)
        let p = a.partition_point(|&t| t <= xm);
        let lv = |x: f64| w.at_level(f.on_piece(p, x));
        total += (x1 - x0) / 6.0 * (lv(x0) + 4.0 * lv(xm) + lv(x1));
    }
    total
}

/// Lipschitz bound of 𝓛 on functions with slopes at least m.
pub fn lipschitz_constant(m: f64) -> Result<f64> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidArgument(format!("m must be positive, got {m}")));
    }
    Ok(2.0 + 8.0 / m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBounds {
    pub m: f64,
    pub pairs: usize,
    /// max over α < β of −(f(β) − f(α)) − (𝓛(β) − 𝓛(α)), floored at 0.
    pub lower_violation: f64,
    /// max over α < β of (𝓛(β) − 𝓛(α)) − (2/m)(f(β) − f(α)), floored at 0;
    /// not checked when m = 0.
    pub upper_violation: f64,
}

/// Checks −Δf ≤ Δ𝓛 ≤ (2/m) Δf on every pair of knots.
pub fn rate_bounds_check(f: &OpinionFunction) -> RateBounds {
    let r = operator_l(f);
    let v = f.values();
    let m = f.m_lower();
    let n = v.len();
    let (mut lo, mut hi): (f64, f64) = (0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let df = v[j] - v[i];
            let dl = r[j] - r[i];
            lo = lo.max(-df - dl);
            if m > 0.0 {
                hi = hi.max(dl - 2.0 / m * df);
            }
        }
    }
    RateBounds { m, pairs: n * (n - 1) / 2, lower_violation: lo, upper_violation: hi }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_at_rest() {
        let f = OpinionFunction::constant(2.5, 16).unwrap();
        assert!(operator_l(&f).iter().all(|r| *r == 0.0));
    }

    #[test]
    fn identity_profile() {
        // every pair interacts: 𝓛(α) = ∫₀¹ (β − α) dβ = 1/2 − α
        let f = OpinionFunction::linear(0.0, 1.0, 64).unwrap();
        for (a, r) in f.knots().iter().zip(operator_l(&f)) {
            assert!((r - (0.5 - a)).abs() < 1e-14, "{a}: {r}");
        }
        for a in [0.013, 0.4, 0.77] {
            assert!((operator_at(&f, a) - (0.5 - a)).abs() < 1e-14);
        }
    }

    #[test]
    fn steep_profile() {
        let f = OpinionFunction::linear(0.0, 10.0, 512).unwrap();
        let r = operator_l(&f);
        assert!((r[0] - 0.05).abs() < 1e-14, "{}", r[0]);
        assert!((r[512] + 0.05).abs() < 1e-14);
        for (a, x) in f.knots().iter().zip(&r) {
            if (0.1..=0.9).contains(a) {
                assert!(x.abs() < 1e-13, "{a}: {x}");
            }
        }
    }

    #[test]
    fn operator_integrates_to_zero() {
        for f in [
            OpinionFunction::linear(0.0, 10.0, 512).unwrap(),
            OpinionFunction::from_fn(100, |a| 4.0 * a + (6.0 * a).sin() * 0.5).unwrap(),
            OpinionFunction::step(&[0.0, 0.7, 2.0, 2.4], &[1.0, 2.0, 1.5, 0.5]).unwrap(),
        ] {
            let i = integral_of_operator(&f);
            assert!(i.abs() < 1e-12, "{i}");
        }
    }

    #[test]
    fn lipschitz_examples() {
        assert_eq!(lipschitz_constant(8.0).unwrap(), 3.0);
        assert_eq!(lipschitz_constant(1.0).unwrap(), 10.0);
        assert!(lipschitz_constant(0.0).is_err());
    }

    #[test]
    fn identity_meets_lower_rate_bound() {
        let f = OpinionFunction::linear(0.0, 1.0, 32).unwrap();
        let r = rate_bounds_check(&f);
        assert!(r.lower_violation < 1e-14 && r.upper_violation == 0.0);
        // and with equality: Δ𝓛 = −Δf
        let l = operator_l(&f);
        assert!(((l[20] - l[3]) + (f.values()[20] - f.values()[3])).abs() < 1e-14);
        let c = rate_bounds_check(&OpinionFunction::constant(1.0, 8).unwrap());
        assert_eq!((c.lower_violation, c.upper_violation), (0.0, 0.0));
    }

    #[test]
    fn conservative_shift_only_moves_by_a_constant() {
        let f = OpinionFunction::from_fn(50, |a| 3.0 * a * a + a).unwrap();
        let r = operator_l(&f);
        let c = conservative_rates(&f);
        let d0 = r[0] - c[0];
        assert!(r.iter().zip(&c).all(|(a, b)| ((a - b) - d0).abs() < 1e-15));
        let m: f64 = c.iter().zip(f.knot_weights()).map(|(a, b)| a * b).sum();
        assert!(m.abs() < 1e-16);
    }
}
