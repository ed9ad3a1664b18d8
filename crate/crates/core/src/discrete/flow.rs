//! Within-regime flows of ẋ = −L x. Both flows report positions as
//! increments over the start state so that gaps near 1 are evaluated
//! without cancellation against the absolute opinions.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::model::{two_sum_acc, InteractionGraph};


/// Highest power of −L kept by the Dormand–Prince polynomials.
pub(crate) const DEG: usize = 7;

/// Stability-function coefficients of the Dormand–Prince 5(4) pair:
/// `R(z) = Σ ρ_p z^p` for the fifth-order solution and the embedded
/// fourth-order one. For a linear system a full step is exactly
/// `Σ ρ_p h^p (−L)^p x`.
pub(crate) struct DoPriPoly {
    pub high: [f64; DEG + 1],
    pub low: [f64; DEG + 1],
}

impl DoPriPoly {
    pub fn new() -> Self {
        let a: [[f64; 7]; 7] = [
            [0.0; 7],
            [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0],
        ];
        let b = a[6];
        let bs = [
            5179.0 / 57600.0,
            0.0,
            7571.0 / 16695.0,
            393.0 / 640.0,
            -92097.0 / 339200.0,
            187.0 / 2100.0,
            1.0 / 40.0,
        ];
        // R(z) = 1 + Σ_p z^{p+1} bᵀ A^p 1
        let mut high = [0.0; DEG + 1];
        let mut low = [0.0; DEG + 1];
        high[0] = 1.0;
        low[0] = 1.0;
        let mut v = [1.0; 7];
        for p in 0..DEG {
            high[p + 1] = b.iter().zip(&v).map(|(x, y)| x * y).sum();
            low[p + 1] = bs.iter().zip(&v).map(|(x, y)| x * y).sum();
            let mut nv = [0.0; 7];
            for (r, row) in a.iter().enumerate() {
                nv[r] = row.iter().zip(&v).map(|(x, y)| x * y).sum();
            }
            v = nv;
        }
        Self { high, low }
    }
}

/// Scratch space for the Runge–Kutta powers `v_p = (−L)^p x`.
pub(crate) struct Powers {
    pub v: Vec<Vec<f64>>,
    /// Prefix sums of the weights; fixed within a segment.
    pw: Vec<f64>,
    pwv: Vec<f64>,
    /// Compensation terms for the first power.
    pw_lo: Vec<f64>,
    pwv_lo: Vec<f64>,
}

impl Powers {
    pub fn new() -> Self {
        Self { v: vec![Vec::new(); DEG + 1], pw: Vec::new(), pwv: Vec::new(), pw_lo: Vec::new(), pwv_lo: Vec::new() }
    }

    /// Prepares the buffers for a new segment with weights `w`.
    pub fn reset(&mut self, w: &[f64]) {
        let n = w.len();
        for v in &mut self.v {
            v.resize(n, 0.0);
        }
        self.pwv.resize(n + 1, 0.0);
        self.pwv_lo.resize(n + 1, 0.0);
        self.pw.clear();
        self.pw_lo.clear();
        self.pw.push(0.0);
        self.pw_lo.push(0.0);
        let mut acc = (0.0, 0.0);
        for &wk in w {
            acc = two_sum_acc(acc, wk);
            self.pw.push(acc.0);
            self.pw_lo.push(acc.1);
        }
    }

    /// Fills `v_0 = x` and `v_p = −L v_{p−1}` for p = 1..=DEG.
    pub fn fill(&mut self, x: &[f64], w: &[f64], reach: &[usize], lo: &[usize]) {
        let n = x.len();
        let (w, reach, lo) = (&w[..n], &reach[..n], &lo[..n]);
        self.v[0].copy_from_slice(x);
        for p in 1..=DEG {
            let (head, tail) = self.v.split_at_mut(p);
            let src = &head[p - 1][..n];
            let out = &mut tail[0][..n];
            let c = src[n / 2];
            let pw = &self.pw[..n + 1];
            let pwv = &mut self.pwv[..n + 1];
            if p == 1 {
                // the velocity itself: compensated sums keep it accurate
                let pwv_lo = &mut self.pwv_lo[..n + 1];
                let pw_lo = &self.pw_lo[..n + 1];
                let mut acc = (0.0, 0.0);
                for k in 0..n {
                    acc = two_sum_acc(acc, w[k] * (src[k] - c));
                    pwv[k + 1] = acc.0;
                    pwv_lo[k + 1] = acc.1;
                }
                for i in 0..n {
                    let (a, b) = (lo[i], reach[i] + 1);
                    let sv = (pwv[b] - pwv[a]) + (pwv_lo[b] - pwv_lo[a]);
                    let sw = (pw[b] - pw[a]) + (pw_lo[b] - pw_lo[a]);
                    out[i] = sv - (src[i] - c) * sw;
                }
            } else {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += w[k] * (src[k] - c);
                    pwv[k + 1] = acc;
                }
                for i in 0..n {
                    let (a, b) = (lo[i], reach[i] + 1);
                    out[i] = (pwv[b] - pwv[a]) - (src[i] - c) * (pw[b] - pw[a]);
                }
            }
        }
    }
}

/// A flow the event scanner can query.
pub(crate) trait Flow {
    /// x_j(τ) − x_i(τ) − (x_j(0) − x_i(0)).
    fn gap_increment(&self, i: usize, j: usize, tau: f64) -> f64;
    /// Upper bound on |gap_increment(τ) − gap_increment(t0)| over τ ∈ [t0, t1].
    fn gap_variation(&self, i: usize, j: usize, t0: f64, t1: f64) -> f64;
    /// Full state x(τ).
    fn state(&self, x0: &[f64], tau: f64) -> Vec<f64>;
    /// Cheap per-agent bound on |x_i(τ) − x_i(t0)| over [t0, t1], if known.
    fn agent_bound(&self, _i: usize) -> f64 {
        f64::INFINITY
    }
}

/// One accepted Runge–Kutta step as a polynomial in τ ∈ [0, h].
pub(crate) struct PolyFlow<'a> {
    pub coef: &'a [f64; DEG + 1],
    pub powers: &'a [Vec<f64>],
    /// Σ_p |ρ_p v_p[i]| h^p for the step length h.
    pub reach_bound: &'a [f64],
}

impl Flow for PolyFlow<'_> {
    fn gap_increment(&self, i: usize, j: usize, tau: f64) -> f64 {
        if tau == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for p in (1..DEG).rev() {
            acc = acc * tau + self.coef[p] * (self.powers[p][j] - self.powers[p][i]);
        }
        acc * tau
    }

    fn gap_variation(&self, i: usize, j: usize, t0: f64, t1: f64) -> f64 {
        let mut acc = 0.0;
        let (mut a, mut b) = (t0, t1);
        for p in 1..DEG {
            acc += (self.coef[p] * (self.powers[p][j] - self.powers[p][i])).abs() * (b - a);
            a *= t0;
            b *= t1;
        }
        acc
    }

    fn state(&self, x0: &[f64], tau: f64) -> Vec<f64> {
        (0..x0.len())
            .map(|i| {
                let mut acc = 0.0;
                for p in (1..DEG).rev() {
                    acc = acc * tau + self.coef[p] * self.powers[p][i];
                }
                x0[i] + acc * tau
            })
            .collect()
    }

    fn agent_bound(&self, i: usize) -> f64 {
        self.reach_bound[i]
    }
}

/// Exact solution through a per-component eigendecomposition of the
/// symmetrised Laplacian W^{1/2} L W^{-1/2}.
pub(crate) struct EigenFlow {
    comp: Vec<usize>,
    offset: Vec<usize>,
    lambdas: Vec<Vec<f64>>,
    /// amp[c][(i - offset) * k + m] = V_im c_m / sqrt(w_i)
    amp: Vec<Vec<f64>>,
    pub lambda_max: f64,
}

impl EigenFlow {
    pub fn new(x0: &[f64], w: &[f64], graph: &InteractionGraph) -> Self {
        let n = x0.len();
        let mut comp = vec![0; n];
        let mut offset = Vec::new();
        let mut lambdas = Vec::new();
        let mut amp = Vec::new();
        let mut lambda_max: f64 = 0.0;
        for (c, range) in graph.components().into_iter().enumerate() {
            let k = range.len();
            let off = range.start;
            for i in range.clone() {
                comp[i] = c;
            }
            offset.push(off);
            if k == 1 {
                lambdas.push(vec![0.0]);
                amp.push(vec![0.0]);
                continue;
            }
            let sw: Vec<f64> = w[range.clone()].iter().map(|v| v.sqrt()).collect();
            let mut s = DMatrix::zeros(k, k);
            for a in 0..k {
                for b in a + 1..=(graph.reach(off + a) - off) {
                    let v = -sw[a] * sw[b];
                    s[(a, b)] = v;
                    s[(b, a)] = v;
                    s[(a, a)] += w[off + b];
                    s[(b, b)] += w[off + a];
                }
            }
            let eig = SymmetricEigen::new(s);
            let lam: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
            lambda_max = lam.iter().fold(lambda_max, |m, &l| m.max(l));
            let v = eig.eigenvectors;
            let coeff: Vec<f64> = (0..k).map(|m| (0..k).map(|a| v[(a, m)] * sw[a] * x0[off + a]).sum()).collect();
            let mut am = vec![0.0; k * k];
            for a in 0..k {
                for m in 0..k {
                    am[a * k + m] = v[(a, m)] * coeff[m] / sw[a];
                }
            }
            lambdas.push(lam);
            amp.push(am);
        }
        Self { comp, offset, lambdas, amp, lambda_max }
    }

    fn increment(&self, i: usize, tau: f64) -> f64 {
        let c = self.comp[i];
        let lam = &self.lambdas[c];
        let k = lam.len();
        let row = &self.amp[c][(i - self.offset[c]) * k..][..k];
        row.iter().zip(lam).map(|(a, l)| a * (-l * tau).exp_m1()).sum()
    }

    fn variation(&self, i: usize, t0: f64, t1: f64) -> f64 {
        let c = self.comp[i];
        let lam = &self.lambdas[c];
        let k = lam.len();
        let row = &self.amp[c][(i - self.offset[c]) * k..][..k];
        row.iter().zip(lam).map(|(a, l)| a.abs() * ((-l * t0).exp() - (-l * t1).exp())).sum()
    }
}

impl Flow for EigenFlow {
    fn gap_increment(&self, i: usize, j: usize, tau: f64) -> f64 {
        let c = self.comp[i];
        if c != self.comp[j] {
            return self.increment(j, tau) - self.increment(i, tau);
        }
        let lam = &self.lambdas[c];
        let k = lam.len();
        let ri = &self.amp[c][(i - self.offset[c]) * k..][..k];
        let rj = &self.amp[c][(j - self.offset[c]) * k..][..k];
        (0..k).map(|m| (rj[m] - ri[m]) * (-lam[m] * tau).exp_m1()).sum()
    }

    fn gap_variation(&self, i: usize, j: usize, t0: f64, t1: f64) -> f64 {
        let c = self.comp[i];
        if c != self.comp[j] {
            return self.variation(i, t0, t1) + self.variation(j, t0, t1);
        }
        let lam = &self.lambdas[c];
        let k = lam.len();
        let ri = &self.amp[c][(i - self.offset[c]) * k..][..k];
        let rj = &self.amp[c][(j - self.offset[c]) * k..][..k];
        (0..k).map(|m| (rj[m] - ri[m]).abs() * ((-lam[m] * t0).exp() - (-lam[m] * t1).exp())).sum()
    }

    fn state(&self, x0: &[f64], tau: f64) -> Vec<f64> {
        (0..x0.len()).map(|i| x0[i] + self.increment(i, tau)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_graph, OpinionState};

    #[test]
    fn dopri_polynomials() {
        let d = DoPriPoly::new();
        // fifth-order solution matches the exponential through z^5
        let fact = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0];
        for p in 0..=5 {
            assert!((d.high[p] - 1.0 / fact[p]).abs() < 1e-14, "p = {p}");
        }
        assert!((d.high[6] - 1.0 / 600.0).abs() < 1e-14);
        assert!(d.high[7].abs() < 1e-15);
        // embedded fourth-order one only through z^4
        for p in 0..=4 {
            assert!((d.low[p] - 1.0 / fact[p]).abs() < 1e-14);
        }
        assert!((d.low[5] - 1.0 / 120.0).abs() > 1e-6);
    }

    #[test]
    fn eigen_flow_two_agents() {
        // gap(t) = 0.5 e^{-2t}
        let s = OpinionState::unweighted(vec![0.0, 0.5]).unwrap();
        let g = build_graph(&s);
        let f = EigenFlow::new(&s.opinions, &s.weights, &g);
        let x = f.state(&s.opinions, 1.0);
        assert!((x[1] - x[0] - 0.5 * (-2.0f64).exp()).abs() < 1e-15);
        assert!((x[0] + x[1] - 0.5).abs() < 1e-15);
    }
}
