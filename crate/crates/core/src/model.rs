//! Shared domain types: sorted opinion states, interaction graphs and the
//! weighted graph Laplacian.
//!
//! Connectivity is strict everywhere: agents interact iff their opinions
//! differ by less than 1. In sorted order every neighbourhood is a contiguous
//! index window, which is what all the O(n) kernels here rely on.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Above this size the Laplacian is kept matrix-free.
pub const DENSE_LIMIT: usize = 4096;

/// Sorted opinions with per-agent weights at a given time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpinionState {
    pub opinions: Vec<f64>,
    pub weights: Vec<f64>,
    pub time: f64,
}

impl OpinionState {
    /// Builds a state, checking every invariant (sorted, finite, positive weights).
    pub fn new(opinions: Vec<f64>, weights: Vec<f64>, time: f64) -> Result<Self> {
        if opinions.is_empty() {
            return Err(Error::InvalidArgument("state needs at least one agent".into()));
        }
        if weights.len() != opinions.len() {
            return Err(Error::DimensionMismatch { expected: opinions.len(), got: weights.len() });
        }
        if let Some(i) = opinions.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument(format!("weight {i} is not strictly positive")));
        }
        if opinions.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::InvalidArgument("opinions must be sorted".into()));
        }
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::InvalidArgument("time must be finite and nonnegative".into()));
        }
        Ok(Self { opinions, weights, time })
    }

    /// Unit-weight state at time zero.
    pub fn unweighted(opinions: Vec<f64>) -> Result<Self> {
        let n = opinions.len();
        Self::new(opinions, vec![1.0; n], 0.0)
    }

    pub fn len(&self) -> usize {
        self.opinions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opinions.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn weighted_mean(&self) -> f64 {
        weighted_mean(&self.opinions, &self.weights)
    }

    /// Σ w_i (x_i − x̄)².
    pub fn variance(&self) -> f64 {
        let mean = self.weighted_mean();
        self.opinions.iter().zip(&self.weights).map(|(x, w)| w * (x - mean) * (x - mean)).sum()
    }
}

pub(crate) fn weighted_mean(x: &[f64], w: &[f64]) -> f64 {
    // shift by a representative value first; keeps the sum well conditioned
    let c = x[x.len() / 2];
    let mut sw = 0.0;
    let mut swx = 0.0;
    for (xi, wi) in x.iter().zip(w) {
        sw += wi;
        swx += wi * (xi - c);
    }
    c + swx / sw
}

/// Sorts raw opinions (ties keep their input order) and permutes weights along.
/// Missing weights mean the unweighted model.
pub fn canonicalize(initial: &[f64], weights: Option<&[f64]>) -> Result<OpinionState> {
    if let Some(i) = initial.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let w = match weights {
        Some(w) if w.len() != initial.len() => {
            return Err(Error::DimensionMismatch { expected: initial.len(), got: w.len() })
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; initial.len()],
    };
    let mut idx: Vec<usize> = (0..initial.len()).collect();
    idx.sort_by(|&a, &b| initial[a].total_cmp(&initial[b]));
    OpinionState::new(idx.iter().map(|&i| initial[i]).collect(), idx.iter().map(|&i| w[i]).collect(), 0.0)
}

/// Interaction graph over agents in sorted order.
///
/// Neighbourhoods are contiguous windows: agent `i` is linked to every
/// `j` in `(i, reach[i]]`, and `reach` is nondecreasing. Every graph built
/// from a sorted state has this shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionGraph {
    reach: Vec<usize>,
}

impl InteractionGraph {
    pub(crate) fn from_reach(reach: Vec<usize>) -> Self {
        debug_assert!(reach.iter().enumerate().all(|(i, &r)| r >= i && r < reach.len()));
        debug_assert!(reach.windows(2).all(|p| p[0] <= p[1]));
        Self { reach }
    }

    /// Builds a graph from an explicit edge list. The edge set must have the
    /// sorted-window shape described on the type.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut upper: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a == b || a >= n || b >= n {
                return Err(Error::InvalidArgument(format!("bad edge ({a}, {b}) for n = {n}")));
            }
            upper[a.min(b)].push(a.max(b));
        }
        let mut reach = Vec::with_capacity(n);
        for (i, mut ups) in upper.into_iter().enumerate() {
            ups.sort_unstable();
            ups.dedup();
            if ups.iter().enumerate().any(|(k, &j)| j != i + 1 + k) {
                return Err(Error::InvalidArgument(format!("neighbours of agent {i} are not a contiguous window")));
            }
            reach.push(i + ups.len());
        }
        if reach.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::InvalidArgument("edge set is not a sorted interval graph".into()));
        }
        Ok(Self { reach })
    }

    pub fn n(&self) -> usize {
        self.reach.len()
    }

    /// Largest neighbour index above `i` (or `i` itself if none).
    pub fn reach(&self, i: usize) -> usize {
        self.reach[i]
    }

    pub fn reaches(&self) -> &[usize] {
        &self.reach
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let (a, b) = (i.min(j), i.max(j));
        a != b && b <= self.reach[a]
    }

    pub fn edge_count(&self) -> usize {
        self.reach.iter().enumerate().map(|(i, r)| r - i).sum()
    }

    /// Edges as ordered pairs (i < j), lexicographically sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.reach.iter().enumerate().flat_map(|(i, &r)| (i + 1..=r).map(move |j| (i, j)))
    }

    /// Lower window ends: `lo[i]` is the smallest neighbour index (or `i`).
    pub fn lower_ends(&self) -> Vec<usize> {
        let n = self.reach.len();
        let mut lo = vec![0; n];
        let mut j = 0;
        for (i, l) in lo.iter_mut().enumerate() {
            while self.reach[j] < i {
                j += 1;
            }
            *l = j;
        }
        lo
    }

    /// Connected components as index ranges (consecutive agents linked).
    pub fn components(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 0..self.reach.len() {
            // reach is nondecreasing, so nothing before i links past it either
            if self.reach[i] == i {
                out.push(start..i + 1);
                start = i + 1;
            }
        }
        out
    }

    /// Toggles the pair `(i, j)`; the result must keep the window shape.
    pub fn toggled(&self, i: usize, j: usize) -> Result<Self> {
        let (a, b) = (i.min(j), i.max(j));
        let n = self.n();
        if a == b || b >= n {
            return Err(Error::InvalidArgument(format!("bad pair ({i}, {j}) for n = {n}")));
        }
        let r = self.reach[a];
        // fast path: the pair sits at the end of a's window
        if b == r && (a == 0 || self.reach[a - 1] < b) {
            let mut reach = self.reach.clone();
            reach[a] = b - 1;
            return Ok(Self { reach });
        }
        if b == r + 1 && (a + 1 == n || self.reach[a + 1] >= b) {
            let mut reach = self.reach.clone();
            reach[a] = b;
            return Ok(Self { reach });
        }
        let mut edges: Vec<(usize, usize)> = self.edges().filter(|&e| e != (a, b)).collect();
        if !self.contains(a, b) {
            edges.push((a, b));
        }
        Self::from_edges(n, &edges)
    }

    /// Smallest neighbour index of `i` (or `i`).
    pub fn lower_end(&self, i: usize) -> usize {
        self.reach.partition_point(|&r| r < i)
    }
}

/// Sliding-window construction, O(n + |E|) work but O(n) storage.
pub fn build_graph(state: &OpinionState) -> InteractionGraph {
    InteractionGraph { reach: reach_of(&state.opinions) }
}

pub(crate) fn reach_of(x: &[f64]) -> Vec<usize> {
    let n = x.len();
    let mut reach = vec![0; n];
    let mut r = 0;
    for i in 0..n {
        r = r.max(i);
        while r + 1 < n && x[r + 1] - x[i] < 1.0 {
            r += 1;
        }
        reach[i] = r;
    }
    reach
}

/// Weighted graph Laplacian: off-diagonal −w_j on edges, diagonal the
/// neighbourhood weight.
#[derive(Debug, Clone)]
pub struct Laplacian {
    repr: Repr,
}

#[derive(Debug, Clone)]
enum Repr {
    Dense(DMatrix<f64>),
    Windowed { graph: InteractionGraph, lo: Vec<usize>, weights: Vec<f64> },
}

impl Laplacian {
    pub fn n(&self) -> usize {
        match &self.repr {
            Repr::Dense(m) => m.nrows(),
            Repr::Windowed { weights, .. } => weights.len(),
        }
    }

    /// The dense matrix, if the graph was small enough to store one.
    pub fn dense(&self) -> Option<&DMatrix<f64>> {
        match &self.repr {
            Repr::Dense(m) => Some(m),
            Repr::Windowed { .. } => None,
        }
    }

    /// `L x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: x.len() });
        }
        Ok(match &self.repr {
            Repr::Dense(m) => (m * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec(),
            Repr::Windowed { graph, lo, weights } => {
                let mut out = vec![0.0; x.len()];
                neg_laplacian_into(x, weights, graph.reaches(), lo, &mut out);
                out.iter_mut().for_each(|v| *v = -*v);
                out
            }
        })
    }
}

pub fn laplacian(graph: &InteractionGraph, weights: &[f64]) -> Result<Laplacian> {
    let n = graph.n();
    if weights.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: weights.len() });
    }
    let repr = if n <= DENSE_LIMIT {
        let mut m = DMatrix::zeros(n, n);
        for (i, j) in graph.edges() {
            m[(i, j)] = -weights[j];
            m[(j, i)] = -weights[i];
            m[(i, i)] += weights[j];
            m[(j, j)] += weights[i];
        }
        Repr::Dense(m)
    } else {
        Repr::Windowed { graph: graph.clone(), lo: graph.lower_ends(), weights: weights.to_vec() }
    };
    Ok(Laplacian { repr })
}

/// Writes `−L v` into `out` using prefix sums over the neighbour windows.
pub(crate) fn neg_laplacian_into(v: &[f64], w: &[f64], reach: &[usize], lo: &[usize], out: &mut [f64]) {
    let n = v.len();
    // L is blind to constant shifts; centring keeps the prefix sums small,
    // and compensated (hi, lo) sums keep window differences accurate
    let c = v[n / 2];
    let mut pw = Vec::with_capacity(n + 1);
    let mut pwv = Vec::with_capacity(n + 1);
    pw.push((0.0, 0.0));
    pwv.push((0.0, 0.0));
    let (mut sw, mut swv) = ((0.0, 0.0), (0.0, 0.0));
    for k in 0..n {
        sw = two_sum_acc(sw, w[k]);
        swv = two_sum_acc(swv, w[k] * (v[k] - c));
        pw.push(sw);
        pwv.push(swv);
    }
    let diff = |p: &[(f64, f64)], b: usize, a: usize| (p[b].0 - p[a].0) + (p[b].1 - p[a].1);
    for i in 0..n {
        let (a, b) = (lo[i], reach[i] + 1);
        if b - a == 1 {
            out[i] = 0.0;
        } else if b - a <= 8 {
            // short windows: the direct sum is cheaper
            let vi = v[i];
            out[i] = (a..b).map(|j| w[j] * (v[j] - vi)).sum();
        } else {
            out[i] = diff(&pwv, b, a) - (v[i] - c) * diff(&pw, b, a);
        }
    }
}

/// Adds `x` to a compensated sum.
#[inline]
pub(crate) fn two_sum_acc((hi, lo): (f64, f64), x: f64) -> (f64, f64) {
    let s = hi + x;
    let bp = s - hi;
    let err = (hi - (s - bp)) + (x - bp);
    (s, lo + err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_edges(x: &[f64]) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                if (x[i] - x[j]).abs() < 1.0 {
                    e.push((i, j));
                }
            }
        }
        e
    }

    #[test]
    fn graph_examples() {
        let g = build_graph(&OpinionState::unweighted(vec![0.0, 0.5, 2.0]).unwrap());
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1)]);
        let g = build_graph(&OpinionState::unweighted(vec![0.0, 1.0]).unwrap());
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn thousand_uniform_agents_have_window_neighbourhoods() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..10.0)).collect();
        let s = canonicalize(&raw, None).unwrap();
        let g = build_graph(&s);
        assert_eq!(g.edges().collect::<Vec<_>>(), brute_edges(&s.opinions));
    }

    #[test]
    fn laplacian_examples() {
        let g = InteractionGraph::from_edges(2, &[(0, 1)]).unwrap();
        let l = laplacian(&g, &[1.0, 1.0]).unwrap();
        assert_eq!(l.dense().unwrap(), &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let l = laplacian(&InteractionGraph::from_edges(3, &[]).unwrap(), &[1.0; 3]).unwrap();
        assert!(l.dense().unwrap().iter().all(|&v| v == 0.0));
        assert!(laplacian(&g, &[1.0]).is_err());
    }

    #[test]
    fn laplacian_matches_weighted_sum() {
        let g = InteractionGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let w = [1.0, 2.0, 1.0];
        let x = [0.0, 0.9, 1.8];
        let lx = laplacian(&g, &w).unwrap().apply(&x).unwrap();
        // −(Lx)_i = Σ_{j∈N(i)} w_j (x_j − x_i), evaluated by hand
        let direct = [2.0 * 0.9, 1.0 * (0.0 - 0.9) + 1.0 * (1.8 - 0.9), 2.0 * (0.9 - 1.8)];
        for i in 0..3 {
            assert!((-lx[i] - direct[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn windowed_and_dense_agree() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 5000;
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..40.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let s = canonicalize(&raw, Some(&w)).unwrap();
        let g = build_graph(&s);
        let big = laplacian(&g, &s.weights).unwrap();
        assert!(big.dense().is_none());
        let lx = big.apply(&s.opinions).unwrap();
        // spot-check rows against the definition
        for i in (0..n).step_by(97) {
            let mut want = 0.0;
            for j in 0..n {
                if j != i && g.contains(i, j) {
                    want += s.weights[j] * (s.opinions[i] - s.opinions[j]);
                }
            }
            assert!((lx[i] - want).abs() < 1e-10, "row {i}: {} vs {}", lx[i], want);
        }
        let ones = big.apply(&vec![1.0; n]).unwrap();
        assert!(ones.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn canonicalize_examples() {
        let s = canonicalize(&[3.0, 1.0, 2.0], None).unwrap();
        assert_eq!(s.opinions, vec![1.0, 2.0, 3.0]);
        let s = canonicalize(&[1.0, 1.0, 0.0], Some(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(s.opinions, vec![0.0, 1.0, 1.0]);
        assert_eq!(s.weights, vec![3.0, 1.0, 2.0]);
        assert_eq!(s.time, 0.0);
        assert!(matches!(canonicalize(&[0.0, f64::NAN], None), Err(Error::NonFinite(1))));
        assert!(canonicalize(&[0.0, f64::INFINITY], None).is_err());
    }

    #[test]
    fn from_edges_rejects_gapped_windows() {
        assert!(InteractionGraph::from_edges(3, &[(0, 2)]).is_err());
        assert!(InteractionGraph::from_edges(3, &[(1, 1)]).is_err());
    }

    #[test]
    fn components_are_runs() {
        let g = InteractionGraph::from_edges(5, &[(0, 1), (2, 3), (3, 4), (2, 4)]).unwrap();
        assert_eq!(g.components(), vec![0..2, 2..5]);
        assert_eq!(g.lower_ends(), vec![0, 0, 2, 2, 2]);
        assert!(g.toggled(0, 1).unwrap().components().len() == 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sliding_window_equals_brute_force(raw in prop::collection::vec(0.0f64..20.0, 1..200)) {
                let s = canonicalize(&raw, None).unwrap();
                let g = build_graph(&s);
                prop_assert_eq!(g.edges().collect::<Vec<_>>(), brute_edges(&s.opinions));
                // window shape: {i,k} edge and i<j<k implies {i,j} edge
                for (i, k) in g.edges() {
                    for j in i + 1..k {
                        prop_assert!(g.contains(i, j));
                    }
                }
            }

            #[test]
            fn laplacian_is_weighted_difference(
                raw in prop::collection::vec(0.0f64..5.0, 1..40),
                ws in prop::collection::vec(0.1f64..3.0, 40),
            ) {
                let n = raw.len();
                let s = canonicalize(&raw, Some(&ws[..n])).unwrap();
                let g = build_graph(&s);
                let l = laplacian(&g, &s.weights).unwrap();
                let lx = l.apply(&s.opinions).unwrap();
                for i in 0..n {
                    let want: f64 = (0..n).filter(|&j| g.contains(i, j))
                        .map(|j| s.weights[j] * (s.opinions[i] - s.opinions[j])).sum();
                    prop_assert!((lx[i] - want).abs() < 1e-12);
                }
                let ones = l.apply(&vec![1.0; n]).unwrap();
                prop_assert!(ones.iter().all(|v| v.abs() < 1e-12));
                if ws[..n].iter().all(|&w| w == ws[0]) {
                    let d = l.dense().unwrap();
                    prop_assert!((d - d.transpose()).abs().max() == 0.0);
                }
            }
        }
    }
}
