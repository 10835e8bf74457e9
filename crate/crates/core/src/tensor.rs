//! Dense rank-m tensors over a small chart dimension, with the symmetric
//! fiber algebra used throughout: symmetrized products, metric traces, and
//! the trace-free projection.
//!
//! Fibers are tiny (dim <= 4, rank <= 4), so everything is stored dense and
//! symmetrization is an explicit sum over permutations.

use nalgebra::{DMatrix, DVector};

/// Dense tensor of `rank` indices, each running over `dim`, row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dim: usize,
    rank: usize,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(dim: usize, rank: usize) -> Self {
        Self {
            dim,
            rank,
            data: vec![0.0; dim.pow(rank as u32)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            dim: 1,
            rank: 0,
            data: vec![value],
        }
    }

    /// Rank-0 tensor carrying the ambient dimension (for fiber bookkeeping).
    pub fn scalar_dim(dim: usize, value: f64) -> Self {
        Self {
            dim,
            rank: 0,
            data: vec![value],
        }
    }

    pub fn from_fn(dim: usize, rank: usize, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(dim, rank);
        let mut idx = vec![0usize; rank];
        for flat in 0..t.data.len() {
            t.unflatten(flat, &mut idx);
            t.data[flat] = f(&idx);
        }
        t
    }

    /// Rank-2 tensor from a matrix.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        Self::from_fn(dim, 2, |idx| m[(idx[0], idx[1])])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn flatten(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank);
        let mut flat = 0;
        for &i in idx {
            debug_assert!(i < self.dim);
            flat = flat * self.dim + i;
        }
        flat
    }

    fn unflatten(&self, mut flat: usize, idx: &mut [usize]) {
        for slot in (0..self.rank).rev() {
            idx[slot] = flat % self.dim;
            flat /= self.dim;
        }
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flatten(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let flat = self.flatten(idx);
        self.data[flat] = value;
    }

    pub fn add_at(&mut self, idx: &[usize], value: f64) {
        let flat = self.flatten(idx);
        self.data[flat] += value;
    }

    /// Iterate all multi-indices in row-major order.
    pub fn indices(&self) -> MultiIndexIter {
        MultiIndexIter::new(self.dim, self.rank)
    }

    pub fn scale(&self, a: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= a;
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.dim, self.rank), (other.dim, other.rank));
        let mut out = self.clone();
        for (v, w) in out.data.iter_mut().zip(&other.data) {
            *v += w;
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.dim, self.rank), (other.dim, other.rank));
        let mut out = self.clone();
        for (v, w) in out.data.iter_mut().zip(&other.data) {
            *v -= w;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Full symmetrization `Sym(T)`: average over all index permutations.
    pub fn symmetrize(&self) -> Self {
        if self.rank <= 1 {
            return self.clone();
        }
        let perms = permutations(self.rank);
        let norm = 1.0 / perms.len() as f64;
        let mut out = Self::zeros(self.dim, self.rank);
        let mut idx = vec![0usize; self.rank];
        let mut pidx = vec![0usize; self.rank];
        for flat in 0..out.data.len() {
            out.unflatten(flat, &mut idx);
            let mut acc = 0.0;
            for p in &perms {
                for (slot, &src) in p.iter().enumerate() {
                    pidx[slot] = idx[src];
                }
                acc += self.get(&pidx);
            }
            out.data[flat] = acc * norm;
        }
        out
    }

    /// Symmetrized tensor product `Sym(self ⊗ other)`.
    pub fn sym_product(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let rank = self.rank + other.rank;
        let raw = DenseTensor::from_fn(self.dim, rank, |idx| {
            self.get(&idx[..self.rank]) * other.get(&idx[self.rank..])
        });
        raw.symmetrize()
    }

    /// Contract every slot with the given vectors.
    pub fn eval(&self, vectors: &[&DVector<f64>]) -> f64 {
        assert_eq!(vectors.len(), self.rank);
        let mut acc = 0.0;
        let mut idx = vec![0usize; self.rank];
        for flat in 0..self.data.len() {
            let c = self.data[flat];
            if c == 0.0 {
                continue;
            }
            self.unflatten(flat, &mut idx);
            let mut prod = c;
            for (slot, &i) in idx.iter().enumerate() {
                prod *= vectors[slot][i];
            }
            acc += prod;
        }
        acc
    }

    /// Contract every slot with the same vector.
    pub fn eval_repeated(&self, v: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        let mut idx = vec![0usize; self.rank];
        for flat in 0..self.data.len() {
            let c = self.data[flat];
            if c == 0.0 {
                continue;
            }
            self.unflatten(flat, &mut idx);
            let mut prod = c;
            for &i in &idx {
                prod *= v[i];
            }
            acc += prod;
        }
        acc
    }

    /// Contract the first slot with a vector, dropping the rank by one.
    pub fn contract_first(&self, v: &DVector<f64>) -> Self {
        assert!(self.rank >= 1);
        let stride = self.dim.pow((self.rank - 1) as u32);
        let mut out = Self::zeros(self.dim, self.rank - 1);
        for i in 0..self.dim {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            let block = &self.data[i * stride..(i + 1) * stride];
            for (o, b) in out.data.iter_mut().zip(block) {
                *o += vi * b;
            }
        }
        out
    }

    /// Metric trace over the first two slots: `g^{ab} T_{ab...}`.
    pub fn trace_with(&self, metric_inv: &DMatrix<f64>) -> Self {
        assert!(self.rank >= 2);
        let stride = self.dim.pow((self.rank - 2) as u32);
        let mut out = Self::zeros(self.dim, self.rank - 2);
        for a in 0..self.dim {
            for b in 0..self.dim {
                let w = metric_inv[(a, b)];
                if w == 0.0 {
                    continue;
                }
                let base = (a * self.dim + b) * stride;
                for k in 0..stride {
                    out.data[k] += w * self.data[base + k];
                }
            }
        }
        out
    }
}

/// Iterator over multi-indices of a fixed rank and dimension.
pub struct MultiIndexIter {
    dim: usize,
    rank: usize,
    next_flat: usize,
    total: usize,
}

impl MultiIndexIter {
    pub fn new(dim: usize, rank: usize) -> Self {
        Self {
            dim,
            rank,
            next_flat: 0,
            total: dim.pow(rank as u32),
        }
    }
}

impl Iterator for MultiIndexIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.next_flat >= self.total {
            return None;
        }
        let mut idx = vec![0usize; self.rank];
        let mut flat = self.next_flat;
        for slot in (0..self.rank).rev() {
            idx[slot] = flat % self.dim;
            flat /= self.dim;
        }
        self.next_flat += 1;
        Some(idx)
    }
}

/// All permutations of `0..n` (n <= 4 in practice).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    permute_rec(&mut items, 0, &mut out);
    out
}

fn permute_rec(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute_rec(items, k + 1, out);
        items.swap(k, i);
    }
}

/// Sorted multi-indices (i1 <= ... <= im): a basis of the symmetric fiber.
pub fn sym_index_basis(dim: usize, rank: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; rank];
    sym_basis_rec(dim, rank, 0, 0, &mut cur, &mut out);
    out
}

fn sym_basis_rec(
    dim: usize,
    rank: usize,
    slot: usize,
    min: usize,
    cur: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if slot == rank {
        out.push(cur.clone());
        return;
    }
    for i in min..dim {
        cur[slot] = i;
        sym_basis_rec(dim, rank, slot + 1, i, cur, out);
    }
}

/// Number of distinct permutations of a sorted multi-index.
pub fn sym_multiplicity(idx: &[usize]) -> f64 {
    let mut counts = [0usize; 8];
    for &i in idx {
        counts[i] += 1;
    }
    let mut m = factorial(idx.len());
    for &c in &counts {
        if c > 1 {
            m /= factorial(c);
        }
    }
    m as f64
}

fn factorial(n: usize) -> usize {
    (1..=n).product::<usize>().max(1)
}

/// The symmetrized-product-with-metric operator: `w -> Sym(w ⊗ g)`.
pub fn metric_product(w: &DenseTensor, metric: &DMatrix<f64>) -> DenseTensor {
    w.sym_product(&DenseTensor::from_matrix(metric))
}

/// The metric trace operator: `w -> g^{ab} w_{ab...}`.
pub fn metric_trace(w: &DenseTensor, metric_inv: &DMatrix<f64>) -> DenseTensor {
    w.trace_with(metric_inv)
}

/// Dense matrix of `u -> trace(Sym(u ⊗ g))` on the symmetric rank-k fiber,
/// in the sorted multi-index basis. Self-adjoint and positive definite for
/// Riemannian metrics; invertible in every case handled here.
pub fn trace_product_matrix(
    dim: usize,
    rank: usize,
    metric: &DMatrix<f64>,
    metric_inv: &DMatrix<f64>,
) -> (Vec<Vec<usize>>, DMatrix<f64>) {
    let basis = sym_index_basis(dim, rank);
    let nb = basis.len();
    let mut m = DMatrix::zeros(nb, nb);
    for (col, bidx) in basis.iter().enumerate() {
        // symmetrized indicator for this basis element
        let mut u = DenseTensor::zeros(dim, rank);
        u.set(bidx, 1.0);
        let u = u.symmetrize();
        let ji = metric_trace(&metric_product(&u, metric), metric_inv);
        for (row, ridx) in basis.iter().enumerate() {
            m[(row, col)] = ji.get(ridx);
        }
    }
    (basis, m)
}

/// Solve `trace(Sym(y ⊗ g)) = b` for the symmetric tensor `y`.
pub fn solve_trace_product(
    b: &DenseTensor,
    metric: &DMatrix<f64>,
    metric_inv: &DMatrix<f64>,
) -> DenseTensor {
    let dim = b.dim();
    let rank = b.rank();
    if rank == 0 {
        // ji on scalars is multiplication by trace(g^{-1} g) = dim
        let scale = (0..dim).map(|a| {
            (0..dim).map(|c| metric_inv[(a, c)] * metric[(c, a)]).sum::<f64>()
        }).sum::<f64>();
        let mut out = DenseTensor::zeros(dim, 0);
        out.data_mut()[0] = b.data()[0] / scale;
        return out;
    }
    let (basis, m) = trace_product_matrix(dim, rank, metric, metric_inv);
    let rhs = DVector::from_iterator(basis.len(), basis.iter().map(|idx| b.get(idx)));
    let sol = m
        .lu()
        .solve(&rhs)
        .expect("trace-product operator must be invertible on the symmetric fiber");
    // the solution is a combination of symmetrized indicators; symmetrizing a
    // tensor with sol[k] at the sorted tuple reproduces exactly those values
    let mut tmp = DenseTensor::zeros(dim, rank);
    for (k, idx) in basis.iter().enumerate() {
        tmp.set(idx, sol[k]);
    }
    tmp.symmetrize()
}

/// Projection onto the kernel of the metric trace:
/// `p w = w - Sym(y ⊗ g)` with `y` solving the trace-product system on `j w`.
pub fn trace_free_projection(
    w: &DenseTensor,
    metric: &DMatrix<f64>,
    metric_inv: &DMatrix<f64>,
) -> DenseTensor {
    assert!(w.rank() >= 2);
    let jw = metric_trace(w, metric_inv);
    let y = solve_trace_product(&jw, metric, metric_inv);
    w.sub(&metric_product(&y, metric))
}

/// Full metric inner product of two equal-rank tensors:
/// `<u, w> = u_{I} w_{J} g^{i1 j1} ... g^{im jm}`.
pub fn fiber_inner_product(
    u: &DenseTensor,
    w: &DenseTensor,
    metric_inv: &DMatrix<f64>,
) -> f64 {
    assert_eq!(u.rank(), w.rank());
    assert_eq!(u.dim(), w.dim());
    // raise all indices of u, then contract fully with w
    let mut raised = u.clone();
    for slot in 0..u.rank() {
        raised = raise_slot(&raised, slot, metric_inv);
    }
    raised
        .data()
        .iter()
        .zip(w.data())
        .map(|(a, b)| a * b)
        .sum()
}

fn raise_slot(t: &DenseTensor, slot: usize, metric_inv: &DMatrix<f64>) -> DenseTensor {
    let dim = t.dim();
    DenseTensor::from_fn(dim, t.rank(), |idx| {
        let mut acc = 0.0;
        let mut jdx = idx.to_vec();
        for l in 0..dim {
            jdx[slot] = l;
            acc += metric_inv[(idx[slot], l)] * t.get(&jdx);
        }
        acc
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn flat(dim: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::identity(dim, dim), DMatrix::identity(dim, dim))
    }

    #[test]
    fn sym_product_of_one_forms_matches_half_rule() {
        // (fh)(v,w) = 1/2 (f(v) h(w) + f(w) h(v))
        let f = DenseTensor::from_fn(2, 1, |i| if i[0] == 0 { 3.0 } else { -1.0 });
        let h = DenseTensor::from_fn(2, 1, |i| if i[0] == 0 { 0.5 } else { 2.0 });
        let fh = f.sym_product(&h);
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let w = DVector::from_vec(vec![-1.0, 0.5]);
        let direct = 0.5 * (f.eval(&[&v]) * h.eval(&[&w]) + f.eval(&[&w]) * h.eval(&[&v]));
        assert_relative_eq!(fh.eval(&[&v, &w]), direct, epsilon = 1e-14);
    }

    #[test]
    fn trace_product_on_scalars_is_dimension() {
        // for a scalar u: j(i u) = trace(g^{-1} * u g) = dim * u
        for dim in [2usize, 3] {
            let (g, gi) = flat(dim);
            let mut u = DenseTensor::zeros(dim, 0);
            u.data_mut()[0] = 1.7;
            let ji = metric_trace(&metric_product(&u, &g), &gi);
            assert_relative_eq!(ji.data()[0], dim as f64 * 1.7, epsilon = 1e-14);
            let back = solve_trace_product(&ji, &g, &gi);
            assert_relative_eq!(back.data()[0], 1.7, epsilon = 1e-14);
        }
    }

    fn random_sym(dim: usize, rank: usize, seed: &[f64]) -> DenseTensor {
        let mut k = 0usize;
        DenseTensor::from_fn(dim, rank, |_| {
            k += 1;
            seed[k % seed.len()] * (1.0 + 0.1 * k as f64)
        })
        .symmetrize()
    }

    fn curved_metric() -> (DMatrix<f64>, DMatrix<f64>) {
        let g = DMatrix::from_row_slice(2, 2, &[1.3, 0.2, 0.2, 0.9]);
        let gi = g.clone().try_inverse().unwrap();
        (g, gi)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn projection_is_idempotent_and_traceless(vals in proptest::collection::vec(-2.0f64..2.0, 6)) {
            let (g, gi) = curved_metric();
            let w = random_sym(2, 2, &vals);
            let pw = trace_free_projection(&w, &g, &gi);
            let ppw = trace_free_projection(&pw, &g, &gi);
            prop_assert!(ppw.sub(&pw).max_abs() <= 1e-10);
            prop_assert!(metric_trace(&pw, &gi).max_abs() <= 1e-10);
        }

        #[test]
        fn product_and_trace_are_adjoint(vals in proptest::collection::vec(-2.0f64..2.0, 8)) {
            // <i u, w> = <u, j w> pointwise
            let (g, gi) = curved_metric();
            let u = random_sym(2, 0, &vals[..4].to_vec());
            let w = random_sym(2, 2, &vals[4..].to_vec());
            let lhs = fiber_inner_product(&metric_product(&u, &g), &w, &gi);
            let rhs = fiber_inner_product(&u, &metric_trace(&w, &gi), &gi);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn adjointness_rank_one_to_three() {
        let (g, gi) = curved_metric();
        let u = random_sym(2, 1, &[0.3, -1.2, 0.7]);
        let w = random_sym(2, 3, &[1.1, 0.4, -0.8, 0.2]);
        let lhs = fiber_inner_product(&metric_product(&u, &g), &w, &gi);
        let rhs = fiber_inner_product(&u, &metric_trace(&w, &gi), &gi);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12, max_relative = 1e-12);
    }
}
