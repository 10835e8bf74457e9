//! Charted Riemannian manifolds with symmetric tensor fields and the metric
//! calculus on them: Christoffel symbols, symmetrized covariant derivatives,
//! divergences, and the trace operators.
//!
//! A manifold here is a single global chart: a metric map, a membership test,
//! and a boundary defining function (negative inside, zero on the boundary).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::tensor::{
    fiber_inner_product, metric_product, metric_trace, trace_free_projection, DenseTensor,
};

pub type Point = DVector<f64>;
pub type ChartVector = DVector<f64>;

type MetricFn = dyn Fn(&Point) -> DMatrix<f64> + Send + Sync;
type ScalarFn = dyn Fn(&Point) -> f64 + Send + Sync;
type BoolFn = dyn Fn(&Point) -> bool + Send + Sync;
type TensorFn = dyn Fn(&Point) -> DenseTensor + Send + Sync;

/// How the boundary is parametrized for inflow sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryShape {
    /// Circle of the given radius centered at the origin (angle parameter).
    Circle { radius: f64 },
    /// Axis-aligned square `[-half, half]^2` (arclength parameter).
    Square { half: f64 },
}

/// A single-chart manifold with boundary.
#[derive(Clone)]
pub struct ChartedManifold {
    id: String,
    dim: usize,
    metric: Arc<MetricFn>,
    inside: Arc<BoolFn>,
    boundary_defining: Arc<ScalarFn>,
    chart_diameter: f64,
    /// Box within which the metric closure may be evaluated (stencil room).
    chart_bounds: Vec<(f64, f64)>,
    christoffel_closed: Option<Arc<TensorFn>>,
    boundary_shape: BoundaryShape,
}

impl fmt::Debug for ChartedManifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChartedManifold")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("chart_diameter", &self.chart_diameter)
            .finish()
    }
}

impl ChartedManifold {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        dim: usize,
        metric: Arc<MetricFn>,
        inside: Arc<BoolFn>,
        boundary_defining: Arc<ScalarFn>,
        chart_diameter: f64,
        chart_bounds: Vec<(f64, f64)>,
        boundary_shape: BoundaryShape,
    ) -> Self {
        assert!(dim >= 2, "chart dimension must be at least 2");
        Self {
            id: id.into(),
            dim,
            metric,
            inside,
            boundary_defining,
            chart_diameter,
            chart_bounds,
            christoffel_closed: None,
            boundary_shape,
        }
    }

    pub fn with_closed_christoffel(mut self, gamma: Arc<TensorFn>) -> Self {
        self.christoffel_closed = Some(gamma);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn chart_diameter(&self) -> f64 {
        self.chart_diameter
    }

    pub fn boundary_shape(&self) -> BoundaryShape {
        self.boundary_shape
    }

    pub fn has_closed_christoffel(&self) -> bool {
        self.christoffel_closed.is_some()
    }

    pub fn metric(&self, x: &Point) -> DMatrix<f64> {
        (self.metric)(x)
    }

    pub fn metric_inv(&self, x: &Point) -> DMatrix<f64> {
        self.metric(x)
            .try_inverse()
            .expect("chart metric must be invertible")
    }

    pub fn inside(&self, x: &Point) -> bool {
        (self.inside)(x)
    }

    pub fn boundary_defining(&self, x: &Point) -> f64 {
        (self.boundary_defining)(x)
    }

    /// Default finite-difference step: 1e-4 of the chart diameter.
    pub fn fd_step(&self) -> f64 {
        1e-4 * self.chart_diameter
    }

    fn stencil_in_chart(&self, x: &Point, h: f64) -> bool {
        for (k, &(lo, hi)) in self.chart_bounds.iter().enumerate() {
            if x[k] - h < lo || x[k] + h > hi {
                return false;
            }
        }
        true
    }

    /// Outward unit normal (with respect to this chart's metric) computed
    /// from the gradient of the boundary defining function.
    pub fn outward_normal(&self, x: &Point) -> ChartVector {
        let h = self.fd_step();
        let mut grad = DVector::zeros(self.dim);
        for k in 0..self.dim {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            grad[k] = (self.boundary_defining(&xp) - self.boundary_defining(&xm)) / (2.0 * h);
        }
        let gi = self.metric_inv(x);
        let raised = &gi * &grad;
        let norm = (raised.dot(&(self.metric(x) * &raised))).sqrt();
        raised / norm
    }

    pub fn norm(&self, x: &Point, v: &ChartVector) -> f64 {
        self.inner(x, v, v).sqrt()
    }

    pub fn inner(&self, x: &Point, v: &ChartVector, w: &ChartVector) -> f64 {
        (self.metric(x) * w).dot(v)
    }
}

/// Christoffel symbols at a point: `Gamma^i_{jk}`, symmetric in the lower pair.
#[derive(Debug, Clone)]
pub struct Christoffel {
    gamma: DenseTensor,
}

impl Christoffel {
    pub fn new(gamma: DenseTensor) -> Self {
        debug_assert_eq!(gamma.rank(), 3);
        Self { gamma }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.gamma.get(&[i, j, k])
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.gamma
    }

    /// `Gamma^i_{jk} v^j w^k` as a vector over `i`.
    pub fn contract(&self, v: &ChartVector, w: &ChartVector) -> ChartVector {
        let dim = v.len();
        let mut out = DVector::zeros(dim);
        for i in 0..dim {
            let mut acc = 0.0;
            for j in 0..dim {
                for k in 0..dim {
                    acc += self.gamma.get(&[i, j, k]) * v[j] * w[k];
                }
            }
            out[i] = acc;
        }
        out
    }

    pub fn max_asymmetry(&self) -> f64 {
        let dim = self.gamma.dim();
        let mut worst = 0.0f64;
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    worst = worst.max((self.get(i, j, k) - self.get(i, k, j)).abs());
                }
            }
        }
        worst
    }
}

/// Christoffel symbols, preferring a registered closed form.
pub fn christoffel(man: &ChartedManifold, x: &Point) -> Result<Christoffel> {
    if let Some(closed) = &man.christoffel_closed {
        return Ok(Christoffel::new(closed(x)));
    }
    christoffel_fd(man, x, man.fd_step())
}

/// Christoffel symbols from central finite differences of the metric.
pub fn christoffel_fd(man: &ChartedManifold, x: &Point, h: f64) -> Result<Christoffel> {
    let dim = man.dim();
    if !man.stencil_in_chart(x, h) {
        return Err(CoreError::BoundaryStencil(x.iter().copied().collect()));
    }
    let gi = man.metric_inv(x);
    // dg[l] = d/dx^l of the metric matrix
    let mut dg = Vec::with_capacity(dim);
    for l in 0..dim {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[l] += h;
        xm[l] -= h;
        dg.push((man.metric(&xp) - man.metric(&xm)) / (2.0 * h));
    }
    let gamma = DenseTensor::from_fn(dim, 3, |idx| {
        let (i, j, k) = (idx[0], idx[1], idx[2]);
        let mut acc = 0.0;
        for l in 0..dim {
            acc += gi[(i, l)] * (dg[k][(l, j)] + dg[j][(l, k)] - dg[l][(j, k)]);
        }
        0.5 * acc
    });
    Ok(Christoffel::new(gamma))
}

/// A symmetric rank-m tensor field given by chart components, with optional
/// analytic partial derivatives (first index of the partials tensor is the
/// derivative direction).
#[derive(Clone)]
pub struct SymTensorField {
    rank: usize,
    dim: usize,
    components: Arc<TensorFn>,
    partials: Option<Arc<TensorFn>>,
}

impl fmt::Debug for SymTensorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymTensorField")
            .field("rank", &self.rank)
            .field("dim", &self.dim)
            .finish()
    }
}

impl SymTensorField {
    pub fn new(dim: usize, rank: usize, components: Arc<TensorFn>) -> Self {
        Self {
            rank,
            dim,
            components,
            partials: None,
        }
    }

    pub fn with_partials(mut self, partials: Arc<TensorFn>) -> Self {
        self.partials = Some(partials);
        self
    }

    pub fn constant(dim: usize, value: DenseTensor) -> Self {
        let rank = value.rank();
        let zero = DenseTensor::zeros(dim, rank + 1);
        Self {
            rank,
            dim,
            components: Arc::new(move |_| value.clone()),
            partials: Some(Arc::new(move |_| zero.clone())),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self, x: &Point) -> DenseTensor {
        (self.components)(x)
    }

    /// Evaluate on a list of `rank` vectors.
    pub fn eval(&self, x: &Point, vectors: &[&ChartVector]) -> f64 {
        self.components(x).eval(vectors)
    }

    /// Evaluate with every slot filled by the same vector.
    pub fn eval_repeated(&self, x: &Point, v: &ChartVector) -> f64 {
        self.components(x).eval_repeated(v)
    }

    /// Component partials `d_j T_{k...}`; analytic when available, otherwise
    /// central finite differences with step `h`.
    pub fn partials(&self, x: &Point, h: f64) -> DenseTensor {
        if let Some(p) = &self.partials {
            return p(x);
        }
        let dim = self.dim;
        let rank = self.rank;
        let mut out = DenseTensor::zeros(dim, rank + 1);
        for j in 0..dim {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let diff = self.components(&xp).sub(&self.components(&xm));
            for idx in diff.indices() {
                let mut full = Vec::with_capacity(rank + 1);
                full.push(j);
                full.extend_from_slice(&idx);
                out.set(&full, diff.get(&idx) / (2.0 * h));
            }
        }
        out
    }

    /// Lift a scalar field (rank 0) with its gradient.
    pub fn scalar(
        dim: usize,
        value: Arc<ScalarFn>,
        gradient: Option<Arc<dyn Fn(&Point) -> DVector<f64> + Send + Sync>>,
    ) -> Self {
        let comp = {
            let value = value.clone();
            Arc::new(move |x: &Point| DenseTensor::from_fn(dim, 0, |_| value(x))) as Arc<TensorFn>
        };
        let mut field = Self::new(dim, 0, comp);
        if let Some(grad) = gradient {
            field.partials = Some(Arc::new(move |x: &Point| {
                let g = grad(x);
                DenseTensor::from_fn(dim, 1, |idx| g[idx[0]])
            }));
        }
        field
    }
}

/// Full covariant derivative `(nabla T)_{j, k_1..k_m} = d_j T_{K} - sum_r
/// Gamma^l_{k_r j} T_{K[r -> l]}`, first index the derivative direction.
pub fn covariant_derivative(
    gamma: &Christoffel,
    partials: &DenseTensor,
    comps: &DenseTensor,
) -> DenseTensor {
    let dim = comps.dim();
    let rank = comps.rank();
    DenseTensor::from_fn(dim, rank + 1, |idx| {
        let j = idx[0];
        let k = &idx[1..];
        let mut acc = partials.get(idx);
        let mut swap = k.to_vec();
        for r in 0..rank {
            let orig = swap[r];
            for l in 0..dim {
                swap[r] = l;
                acc -= gamma.get(l, orig, j) * comps.get(&swap);
            }
            swap[r] = orig;
        }
        acc
    })
}

/// Symmetrized covariant derivative at a point: returns the rank `m = T.rank() + 1`
/// symmetric array obtained by symmetrizing the covariant derivative over all
/// index slots.
pub fn sym_covariant_derivative(
    man: &ChartedManifold,
    field: &SymTensorField,
    x: &Point,
) -> Result<DenseTensor> {
    let gamma = christoffel(man, x)?;
    let h = man.fd_step();
    if field.partials.is_none() && !man.stencil_in_chart(x, h) {
        return Err(CoreError::BoundaryStencil(x.iter().copied().collect()));
    }
    let partials = field.partials(x, h);
    let comps = field.components(x);
    Ok(covariant_derivative(&gamma, &partials, &comps).symmetrize())
}

/// Divergence field `delta^s w = -trace_g over the first two slots of nabla w`.
///
/// The sign makes it the adjoint of the symmetrized derivative:
/// `<d^s h, w> = <h, delta^s w>` for `h` vanishing on the boundary.
pub fn divergence(man: &ChartedManifold, field: &SymTensorField) -> Result<SymTensorField> {
    if field.rank() == 0 {
        return Err(CoreError::Rank {
            op: "divergence",
            rank: 0,
        });
    }
    let man = man.clone();
    let field_arc = field.clone();
    let dim = field.dim();
    let rank = field.rank();
    let comp = Arc::new(move |x: &Point| -> DenseTensor {
        let gamma = christoffel(&man, x).expect("christoffel inside chart");
        let h = man.fd_step();
        let nabla = covariant_derivative(&gamma, &field_arc.partials(x, h), &field_arc.components(x));
        let gi = man.metric_inv(x);
        metric_trace(&nabla, &gi).scale(-1.0)
    });
    Ok(SymTensorField::new(dim, rank - 1, comp))
}

/// The three trace operators applied to a field.
pub struct TraceOps {
    /// Symmetrized product with the metric (rank m + 2).
    pub product: SymTensorField,
    /// Metric trace over the first two slots (rank m - 2); `None` for m < 2.
    pub trace: Option<SymTensorField>,
    /// Projection onto the kernel of the trace (rank m).
    pub projection: SymTensorField,
}

/// Build the metric-product, trace, and trace-free-projection fields.
pub fn trace_ops(man: &ChartedManifold, field: &SymTensorField) -> TraceOps {
    let dim = field.dim();
    let rank = field.rank();

    let product = {
        let man = man.clone();
        let f = field.clone();
        SymTensorField::new(
            dim,
            rank + 2,
            Arc::new(move |x: &Point| metric_product(&f.components(x), &man.metric(x))),
        )
    };
    let trace = if rank >= 2 {
        let man = man.clone();
        let f = field.clone();
        Some(SymTensorField::new(
            dim,
            rank - 2,
            Arc::new(move |x: &Point| metric_trace(&f.components(x), &man.metric_inv(x))),
        ))
    } else {
        None
    };
    let projection = if rank >= 2 {
        let man = man.clone();
        let f = field.clone();
        SymTensorField::new(
            dim,
            rank,
            Arc::new(move |x: &Point| {
                trace_free_projection(&f.components(x), &man.metric(x), &man.metric_inv(x))
            }),
        )
    } else {
        field.clone()
    };
    TraceOps {
        product,
        trace,
        projection,
    }
}

/// L2 inner product of two equal-rank fields over the manifold, quadrature on
/// a uniform chart grid restricted to the inside region, with the metric
/// volume form.
pub fn l2_inner_product(
    man: &ChartedManifold,
    u: &SymTensorField,
    w: &SymTensorField,
    grid_per_axis: usize,
) -> f64 {
    assert_eq!(u.rank(), w.rank());
    let dim = man.dim();
    assert_eq!(dim, 2, "quadrature grid implemented for 2d charts");
    let (lo0, hi0) = man.chart_bounds[0];
    let (lo1, hi1) = man.chart_bounds[1];
    let hx = (hi0 - lo0) / grid_per_axis as f64;
    let hy = (hi1 - lo1) / grid_per_axis as f64;
    let mut acc = 0.0;
    for i in 0..grid_per_axis {
        for j in 0..grid_per_axis {
            let x = DVector::from_vec(vec![
                lo0 + (i as f64 + 0.5) * hx,
                lo1 + (j as f64 + 0.5) * hy,
            ]);
            if !man.inside(&x) {
                continue;
            }
            let g = man.metric(&x);
            let gi = g.clone().try_inverse().expect("metric invertible");
            let vol = g.determinant().sqrt();
            acc += fiber_inner_product(&u.components(&x), &w.components(&x), &gi) * vol;
        }
    }
    acc * hx * hy
}

/// Registered chart manifolds.
///
/// Ids: `flat-disc`, `polar-disc`, `conformal-disc(s)` with `s` the strength
/// of the conformal factor `exp(s * (x + y/2))`, and `flat-square`.
pub fn lookup_manifold(id: &str) -> Result<ChartedManifold> {
    if id == "flat-disc" {
        return Ok(flat_disc());
    }
    if id == "polar-disc" {
        return Ok(polar_disc());
    }
    if id == "flat-square" {
        return Ok(flat_square());
    }
    if let Some(arg) = id.strip_prefix("conformal-disc(").and_then(|s| s.strip_suffix(')')) {
        let s: f64 = arg
            .trim()
            .parse()
            .map_err(|_| CoreError::GeometryParam(id.into(), format!("bad float `{arg}`")))?;
        return Ok(conformal_disc(s));
    }
    Err(CoreError::UnknownGeometry(id.into()))
}

/// Unit disc with the Euclidean metric.
pub fn flat_disc() -> ChartedManifold {
    let metric = Arc::new(|_: &Point| DMatrix::identity(2, 2));
    let inside = Arc::new(|x: &Point| x.norm_squared() < 1.0);
    let bdf = Arc::new(|x: &Point| x.norm_squared() - 1.0);
    let zero = DenseTensor::zeros(2, 3);
    ChartedManifold::new(
        "flat-disc",
        2,
        metric,
        inside,
        bdf,
        2.0,
        vec![(-1.6, 1.6), (-1.6, 1.6)],
        BoundaryShape::Circle { radius: 1.0 },
    )
    .with_closed_christoffel(Arc::new(move |_| zero.clone()))
}

/// Unit disc in polar coordinates `(r, theta)`, `g = dr^2 + r^2 dtheta^2`.
pub fn polar_disc() -> ChartedManifold {
    let metric = Arc::new(|x: &Point| {
        let r = x[0];
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, r * r])
    });
    let inside = Arc::new(|x: &Point| x[0] > 0.0 && x[0] < 1.0);
    let bdf = Arc::new(|x: &Point| x[0] - 1.0);
    let gamma = Arc::new(|x: &Point| {
        let r = x[0];
        let mut t = DenseTensor::zeros(2, 3);
        t.set(&[0, 1, 1], -r);
        t.set(&[1, 0, 1], 1.0 / r);
        t.set(&[1, 1, 0], 1.0 / r);
        t
    });
    ChartedManifold::new(
        "polar-disc",
        2,
        metric,
        inside,
        bdf,
        2.0,
        vec![(1e-8, 1.3), (-10.0, 10.0)],
        BoundaryShape::Circle { radius: 1.0 },
    )
    .with_closed_christoffel(gamma)
}

/// Unit disc with metric `exp(2 phi) * delta`, `phi = s * (x + y/2)`.
///
/// The closed-form Christoffel symbols follow the conformal rescaling rule
/// `Gamma^i_{jk} = delta^i_j d_k phi + delta^i_k d_j phi - delta_{jk} d^i phi`.
pub fn conformal_disc(s: f64) -> ChartedManifold {
    let phi = move |x: &Point| s * (x[0] + 0.5 * x[1]);
    let grad_phi = move |_x: &Point| DVector::from_vec(vec![s, 0.5 * s]);
    let metric = Arc::new(move |x: &Point| {
        let c = (2.0 * phi(x)).exp();
        DMatrix::from_row_slice(2, 2, &[c, 0.0, 0.0, c])
    });
    let inside = Arc::new(|x: &Point| x.norm_squared() < 1.0);
    let bdf = Arc::new(|x: &Point| x.norm_squared() - 1.0);
    let gamma = Arc::new(move |x: &Point| {
        let dp = grad_phi(x);
        DenseTensor::from_fn(2, 3, |idx| {
            let (i, j, k) = (idx[0], idx[1], idx[2]);
            let mut v = 0.0;
            if i == j {
                v += dp[k];
            }
            if i == k {
                v += dp[j];
            }
            if j == k {
                v -= dp[i];
            }
            v
        })
    });
    ChartedManifold::new(
        format!("conformal-disc({s})"),
        2,
        metric,
        inside,
        bdf,
        2.0,
        vec![(-1.6, 1.6), (-1.6, 1.6)],
        BoundaryShape::Circle { radius: 1.0 },
    )
    .with_closed_christoffel(gamma)
}

/// Square `[-1, 1]^2` with the Euclidean metric.
pub fn flat_square() -> ChartedManifold {
    let metric = Arc::new(|_: &Point| DMatrix::identity(2, 2));
    let inside = Arc::new(|x: &Point| x[0].abs() < 1.0 && x[1].abs() < 1.0);
    let bdf = Arc::new(|x: &Point| x[0].abs().max(x[1].abs()) - 1.0);
    let zero = DenseTensor::zeros(2, 3);
    ChartedManifold::new(
        "flat-square",
        2,
        metric,
        inside,
        bdf,
        2.0 * std::f64::consts::SQRT_2,
        vec![(-1.6, 1.6), (-1.6, 1.6)],
        BoundaryShape::Square { half: 1.0 },
    )
    .with_closed_christoffel(Arc::new(move |_| zero.clone()))
}

#[allow(unused_imports)]
pub use crate::tensor::{sym_index_basis, sym_multiplicity};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields;
    use approx::assert_relative_eq;

    #[test]
    fn flat_disc_has_zero_christoffel() {
        let man = flat_disc();
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let g = christoffel(&man, &x).unwrap();
        assert!(g.tensor().max_abs() < 1e-15);
        let g_fd = christoffel_fd(&man, &x, man.fd_step()).unwrap();
        assert!(g_fd.tensor().max_abs() < 1e-9);
    }

    #[test]
    fn polar_christoffel_matches_hand_values() {
        let man = polar_disc();
        let x = DVector::from_vec(vec![0.5, 1.0]);
        let g = christoffel(&man, &x).unwrap();
        assert_relative_eq!(g.get(0, 1, 1), -0.5, epsilon = 1e-12);
        assert_relative_eq!(g.get(1, 0, 1), 2.0, epsilon = 1e-12);
        // finite differences agree with the closed form
        let g_fd = christoffel_fd(&man, &x, man.fd_step()).unwrap();
        assert!(g.tensor().sub(g_fd.tensor()).max_abs() < 1e-7);
    }

    #[test]
    fn fd_christoffel_converges_second_order() {
        // halving h must shrink the max error by at least 3x on every chart
        // with a registered closed form and nonzero symbols
        for man in [polar_disc(), conformal_disc(0.7)] {
            let x = DVector::from_vec(vec![0.4, 0.3]);
            let exact = christoffel(&man, &x).unwrap();
            let h = 1e-3 * man.chart_diameter();
            let e1 = christoffel_fd(&man, &x, h)
                .unwrap()
                .tensor()
                .sub(exact.tensor())
                .max_abs();
            let e2 = christoffel_fd(&man, &x, h / 2.0)
                .unwrap()
                .tensor()
                .sub(exact.tensor())
                .max_abs();
            // the polar metric is quadratic in the chart coordinates, so the
            // central difference is exact there and both errors sit at the
            // roundoff floor
            if e2 > 1e-12 {
                assert!(e1 / e2 >= 3.0, "chart {} ratio {}", man.id(), e1 / e2);
            } else {
                assert!(e1 < 1e-10, "chart {} e1={}", man.id(), e1);
            }
        }
    }

    #[test]
    fn conformal_christoffel_identity() {
        // Gamma[c g] = Gamma[g] + delta dphi + delta dphi - (grad phi) g with
        // c = exp(2 phi); on a flat base Gamma[g] = 0, checked by the
        // conformal-disc closed form against plain finite differences above.
        // Here check the identity explicitly through the fd path on a
        // nontrivial conformal factor.
        let s = 0.45;
        let man = conformal_disc(s);
        let x = DVector::from_vec(vec![0.2, -0.35]);
        let fd = christoffel_fd(&man, &x, man.fd_step()).unwrap();
        let closed = christoffel(&man, &x).unwrap();
        assert!(fd.tensor().sub(closed.tensor()).max_abs() < 1e-6);
        assert!(closed.max_asymmetry() < 1e-14);
    }

    #[test]
    fn boundary_stencil_error_raised() {
        let man = polar_disc();
        let x = DVector::from_vec(vec![5e-6, 0.0]);
        let err = christoffel_fd(&man, &x, man.fd_step());
        assert!(matches!(err, Err(CoreError::BoundaryStencil(_))));
    }

    #[test]
    fn gradient_of_scalar_is_plain_gradient() {
        let man = conformal_disc(0.3);
        let f = SymTensorField::scalar(
            2,
            Arc::new(|x: &Point| x[0] * x[0] + 2.0 * x[1]),
            Some(Arc::new(|x: &Point| DVector::from_vec(vec![2.0 * x[0], 2.0]))),
        );
        let x = DVector::from_vec(vec![0.1, 0.2]);
        let d = sym_covariant_derivative(&man, &f, &x).unwrap();
        assert_relative_eq!(d.get(&[0]), 0.2, epsilon = 1e-12);
        assert_relative_eq!(d.get(&[1]), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn sym_derivative_flat_covector_example() {
        let man = flat_disc();
        let t = SymTensorField::new(
            2,
            1,
            Arc::new(|x: &Point| {
                DenseTensor::from_fn(2, 1, |idx| if idx[0] == 0 { x[0] * x[0] } else { 0.0 })
            }),
        );
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let d = sym_covariant_derivative(&man, &t, &x).unwrap();
        assert_relative_eq!(d.get(&[0, 0]), 2.0, epsilon = 1e-8);
        assert!(d.get(&[0, 1]).abs() < 1e-9);
        assert!(d.get(&[1, 0]).abs() < 1e-9);
        assert!(d.get(&[1, 1]).abs() < 1e-9);
    }

    #[test]
    fn sym_derivative_is_exactly_symmetric() {
        let man = conformal_disc(0.5);
        let t = fields::random_spatial_field(2, 2, 0.7, 77);
        let x = DVector::from_vec(vec![0.25, -0.1]);
        let d = sym_covariant_derivative(&man, &t, &x).unwrap();
        for idx in d.indices() {
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            assert_relative_eq!(d.get(&idx), d.get(&sorted), epsilon = 1e-13);
        }
    }

    #[test]
    fn divergence_of_constant_covector_vanishes_flat() {
        let man = flat_disc();
        let mut c = DenseTensor::zeros(2, 1);
        c.set(&[0], 1.0);
        c.set(&[1], -2.0);
        let w = SymTensorField::constant(2, c);
        let div = divergence(&man, &w).unwrap();
        let x = DVector::from_vec(vec![0.2, 0.3]);
        assert!(div.components(&x).max_abs() < 1e-12);
    }

    #[test]
    fn divergence_of_gradient_is_minus_laplacian() {
        // delta^s(d^s h) = -Laplace h on the flat disc
        let man = flat_disc();
        let h_field = fields::random_scalar_bump(0.6, 424);
        let x = DVector::from_vec(vec![0.12, -0.2]);
        let grad = {
            let hf = h_field.clone();
            let man2 = man.clone();
            SymTensorField::new(
                2,
                1,
                Arc::new(move |p: &Point| sym_covariant_derivative(&man2, &hf, p).unwrap()),
            )
        };
        let div = divergence(&man, &grad).unwrap();
        let got = div.components(&x).get(&[]);
        // 5-point stencil Laplacian of the bump
        let fd = 1e-4;
        let eval = |p: &Point| h_field.components(p).get(&[]);
        let mut lap = -4.0 * eval(&x);
        for d in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[d] += fd;
            xm[d] -= fd;
            lap += eval(&xp) + eval(&xm);
        }
        lap /= fd * fd;
        assert_relative_eq!(got, -lap, epsilon = 2e-4, max_relative = 2e-4);
    }

    #[test]
    fn adjointness_of_derivative_and_divergence() {
        // |<d^s h, w> - <h, delta^s w>| small for h compactly supported
        let man = flat_disc();
        let h = fields::random_spatial_field(1, 2, 0.55, 11);
        let w = fields::random_spatial_field(2, 3, 0.75, 12);
        let dh = {
            let man2 = man.clone();
            let hf = h.clone();
            SymTensorField::new(
                2,
                2,
                Arc::new(move |p: &Point| sym_covariant_derivative(&man2, &hf, p).unwrap()),
            )
        };
        let dw = divergence(&man, &w).unwrap();
        let lhs = l2_inner_product(&man, &dh, &w, 320);
        let rhs = l2_inner_product(&man, &h, &dw, 320);
        let scale = lhs.abs().max(rhs.abs()).max(1e-12);
        assert!(
            (lhs - rhs).abs() <= 1e-4 * scale.max(1.0),
            "lhs={lhs} rhs={rhs}"
        );
    }

    #[test]
    fn trace_ops_identities() {
        let man = conformal_disc(0.3);
        let w = fields::random_spatial_field(2, 4, 0.8, 5);
        let ops = trace_ops(&man, &w);
        let x = DVector::from_vec(vec![0.3, 0.1]);
        let pw = ops.projection.components(&x);
        // p is idempotent
        let ppw = trace_free_projection(&pw, &man.metric(&x), &man.metric_inv(&x));
        assert!(ppw.sub(&pw).max_abs() < 1e-10);
        // j p = 0
        assert!(metric_trace(&pw, &man.metric_inv(&x)).max_abs() < 1e-10);
        // i on a scalar: j(i u) = n u
        let u2 = DenseTensor::scalar_dim(2, 1.0);
        let iu = metric_product(&u2, &man.metric(&x));
        let jiu = metric_trace(&iu, &man.metric_inv(&x));
        assert_relative_eq!(jiu.data()[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn registry_roundtrip() {
        assert!(lookup_manifold("flat-disc").is_ok());
        assert!(lookup_manifold("polar-disc").is_ok());
        assert!(lookup_manifold("conformal-disc(0.25)").is_ok());
        assert!(lookup_manifold("flat-square").is_ok());
        assert!(matches!(
            lookup_manifold("moebius"),
            Err(CoreError::UnknownGeometry(_))
        ));
        assert!(matches!(
            lookup_manifold("conformal-disc(xyz)"),
            Err(CoreError::GeometryParam(_, _))
        ));
    }
}
