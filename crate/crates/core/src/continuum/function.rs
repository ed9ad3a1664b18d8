//! Monotone piecewise-linear opinion functions on [0, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A nondecreasing polyline through `(alpha[k], values[k])`.
///
/// Knots may repeat, which encodes a jump: the function is right-continuous
/// there. Step embeddings of discrete states use this. `m_lower` and
/// `m_upper` are the smallest and largest slopes over pieces of positive
/// width; a jump makes `m_upper` infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFunction", into = "RawFunction")]
pub struct OpinionFunction {
    alpha: Vec<f64>,
    values: Vec<f64>,
    m_lower: f64,
    m_upper: f64,
}

#[derive(Serialize, Deserialize)]
struct RawFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
    #[serde(rename = "m", default)]
    m_lower: Option<f64>,
    #[serde(rename = "M", default)]
    m_upper: Option<f64>,
}

impl TryFrom<RawFunction> for OpinionFunction {
    type Error = Error;
    fn try_from(raw: RawFunction) -> Result<Self> {
        // slope bounds are always recomputed from the data
        let _ = (raw.m_lower, raw.m_upper);
        OpinionFunction::new(raw.knots, raw.values)
    }
}

impl From<OpinionFunction> for RawFunction {
    fn from(f: OpinionFunction) -> Self {
        let m_upper = f.m_upper.is_finite().then_some(f.m_upper);
        RawFunction { knots: f.alpha, values: f.values, m_lower: Some(f.m_lower), m_upper }
    }
}

impl OpinionFunction {
    pub fn new(alpha: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::InvalidArgument("an opinion function needs at least two knots".into()));
        }
        if alpha.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: alpha.len(), got: values.len() });
        }
        if let Some(k) = alpha.iter().chain(&values).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(k % alpha.len()));
        }
        if alpha[0] != 0.0 || *alpha.last().unwrap() != 1.0 {
            return Err(Error::InvalidArgument("knots must start at 0 and end at 1".into()));
        }
        if alpha.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::InvalidArgument("knots must be nondecreasing".into()));
        }
        if values.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::InvalidArgument("values must be nondecreasing".into()));
        }
        let (m_lower, m_upper) = slope_range(&alpha, &values);
        Ok(Self { alpha, values, m_lower, m_upper })
    }

    /// Samples `f` on `k` equal pieces (k + 1 knots).
    pub fn from_fn(k: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("need at least one piece".into()));
        }
        let alpha = uniform_grid(k);
        let values = alpha.iter().map(|&a| f(a)).collect();
        Self::new(alpha, values)
    }

    /// a + (b − a) α on `k` pieces.
    pub fn linear(a: f64, b: f64, k: usize) -> Result<Self> {
        Self::from_fn(k, |t| a + (b - a) * t)
    }

    pub fn constant(c: f64, k: usize) -> Result<Self> {
        Self::from_fn(k, |_| c)
    }

    /// Plateaus of the given widths (normalised to sum 1) and values.
    pub fn step(values: &[f64], widths: &[f64]) -> Result<Self> {
        if values.is_empty() || values.len() != widths.len() {
            return Err(Error::InvalidArgument("step needs matching, nonempty values and widths".into()));
        }
        if widths.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument("plateau widths must be positive".into()));
        }
        let total: f64 = widths.iter().sum();
        let n = values.len();
        let mut alpha = Vec::with_capacity(2 * n);
        let mut vals = Vec::with_capacity(2 * n);
        let mut a = 0.0;
        for k in 0..n {
            let start = a;
            a += widths[k] / total;
            let end = if k + 1 == n { 1.0 } else { a };
            alpha.extend([start, end]);
            vals.extend([values[k], values[k]]);
        }
        Self::new(alpha, vals)
    }

    /// Same knots, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.alpha.clone(), values)
    }

    pub fn knots(&self) -> &[f64] {
        &self.alpha
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn m_lower(&self) -> f64 {
        self.m_lower
    }

    pub fn m_upper(&self) -> f64 {
        self.m_upper
    }

    /// Regular means 0 < m ≤ M < ∞.
    pub fn is_regular(&self) -> bool {
        self.m_lower > 0.0 && self.m_upper.is_finite()
    }

    /// Whether all chord slopes lie in [m, M].
    pub fn in_class(&self, m: f64, big_m: f64) -> bool {
        self.m_lower >= m && self.m_upper <= big_m
    }

    /// Right-continuous evaluation; α is clamped to [0, 1].
    pub fn eval(&self, alpha: f64) -> f64 {
        let p = self.alpha.partition_point(|&a| a <= alpha);
        if p == 0 {
            return self.values[0];
        }
        if p == self.alpha.len() {
            return *self.values.last().unwrap();
        }
        self.on_piece(p, alpha)
    }

    /// Left limit at α.
    pub fn eval_left(&self, alpha: f64) -> f64 {
        let p = self.alpha.partition_point(|&a| a < alpha);
        if p == 0 {
            return self.values[0];
        }
        if p == self.alpha.len() {
            return *self.values.last().unwrap();
        }
        self.on_piece(p, alpha)
    }

    /// Linear interpolation on the piece ending at knot `p`.
    pub(crate) fn on_piece(&self, p: usize, alpha: f64) -> f64 {
        let (a0, a1) = (self.alpha[p - 1], self.alpha[p]);
        let (v0, v1) = (self.values[p - 1], self.values[p]);
        if a1 == a0 {
            return v1;
        }
        v0 + (v1 - v0) * ((alpha - a0) / (a1 - a0))
    }

    /// Trapezoid weights of the knots: Σ ω_k v_k = ∫₀¹ f exactly.
    pub fn knot_weights(&self) -> Vec<f64> {
        let n = self.alpha.len();
        (0..n)
            .map(|k| {
                let left = if k > 0 { self.alpha[k] - self.alpha[k - 1] } else { 0.0 };
                let right = if k + 1 < n { self.alpha[k + 1] - self.alpha[k] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }

    /// ∫₀¹ f.
    pub fn mean(&self) -> f64 {
        self.knot_weights().iter().zip(&self.values).map(|(w, v)| w * v).sum()
    }

    /// ∫₀¹ (f − mean)².
    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        // exact for linear pieces: ∫ of a squared linear function
        self.alpha
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(a, v)| {
                let (p, q) = (v[0] - mu, v[1] - mu);
                (a[1] - a[0]) * (p * p + p * q + q * q) / 3.0
            })
            .sum()
    }

    /// ∫₀^{α_k} f for every knot.
    pub fn prefix_integrals(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.alpha.len());
        let mut acc = 0.0;
        out.push(0.0);
        for k in 1..self.alpha.len() {
            acc += 0.5 * (self.alpha[k] - self.alpha[k - 1]) * (self.values[k] + self.values[k - 1]);
            out.push(acc);
        }
        out
    }

    /// sup |f − g| over [0, 1], exact for polylines (left and right limits at
    /// every knot of either function).
    pub fn sup_distance(&self, other: &OpinionFunction) -> f64 {
        let mut best: f64 = 0.0;
        for &a in self.alpha.iter().chain(&other.alpha) {
            best = best.max((self.eval(a) - other.eval(a)).abs());
            best = best.max((self.eval_left(a) - other.eval_left(a)).abs());
        }
        best
    }

    /// The step function holding each knot value on an interval of its
    /// trapezoid weight. Keeps the mean; the sup distance is at most half
    /// the largest rise of a piece.
    pub fn to_steps(&self) -> Result<Self> {
        let w = self.knot_weights();
        let keep: Vec<usize> = (0..w.len()).filter(|&k| w[k] > 0.0).collect();
        let values: Vec<f64> = keep.iter().map(|&k| self.values[k]).collect();
        let widths: Vec<f64> = keep.iter().map(|&k| w[k]).collect();
        Self::step(&values, &widths)
    }

    /// CSV with header `alpha,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,value\n");
        for (a, v) in self.alpha.iter().zip(&self.values) {
            s.push_str(&format!("{a},{v}\n"));
        }
        s
    }
}

pub(crate) fn uniform_grid(k: usize) -> Vec<f64> {
    (0..=k).map(|i| if i == k { 1.0 } else { i as f64 / k as f64 }).collect()
}

fn slope_range(alpha: &[f64], values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for k in 1..alpha.len() {
        let da = alpha[k] - alpha[k - 1];
        let dv = values[k] - values[k - 1];
        if da > 0.0 {
            let s = dv / da;
            lo = lo.min(s);
            hi = hi.max(s);
        } else if dv > 0.0 {
            hi = f64::INFINITY;
        }
    }
    (if lo.is_finite() { lo } else { 0.0 }, hi)
}
