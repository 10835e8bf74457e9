//! Stationary Lorentzian metrics on `R x M` assembled from `(kappa, eta, g)`,
//! their conformal rescaling, the block inverse of the rescaled metric, and
//! the drift field that turns spatial projections of null geodesics into
//! solutions of a second-order ODE on `M`.
//!
//! The spacetime chart is `(t, x^1, ..., x^n)` with index 0 the time
//! direction; all metric components are t-independent by construction.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::fields::{SpacetimePoint, SpacetimeTensorField};
use crate::geometry::{
    christoffel, covariant_derivative, ChartVector, ChartedManifold, Christoffel, Point,
};
use crate::tensor::{metric_product, metric_trace, solve_trace_product, DenseTensor};

type CovectorFn = dyn Fn(&Point) -> DVector<f64> + Send + Sync;
type CovectorJacFn = dyn Fn(&Point) -> DMatrix<f64> + Send + Sync;
type ScalarFn = dyn Fn(&Point) -> f64 + Send + Sync;

/// Sign branch of the lift equation `adot = eta_c bdot +/- sqrt(...)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaySign {
    Plus,
    Minus,
}

impl RaySign {
    pub fn factor(self) -> f64 {
        match self {
            RaySign::Plus => 1.0,
            RaySign::Minus => -1.0,
        }
    }
}

/// Stationary geometry data `(kappa, eta, g)` on a charted manifold, with the
/// derived conformal quantities `c = 1/(kappa - |eta|^2)`, `g_c = c g`,
/// `eta_c = c eta`.
#[derive(Clone)]
pub struct StationaryGeometry {
    id: String,
    base: ChartedManifold,
    kappa: Arc<ScalarFn>,
    eta: Arc<CovectorFn>,
    /// analytic Jacobian `d_j eta_k` when registered
    eta_jac: Option<Arc<CovectorJacFn>>,
    kappa_grad: Option<Arc<dyn Fn(&Point) -> DVector<f64> + Send + Sync>>,
    static_flag: bool,
}

impl fmt::Debug for StationaryGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StationaryGeometry")
            .field("id", &self.id)
            .field("static", &self.static_flag)
            .finish()
    }
}

impl StationaryGeometry {
    pub fn new(
        id: impl Into<String>,
        base: ChartedManifold,
        kappa: Arc<ScalarFn>,
        eta: Arc<CovectorFn>,
        static_flag: bool,
    ) -> Self {
        Self {
            id: id.into(),
            base,
            kappa,
            eta,
            eta_jac: None,
            kappa_grad: None,
            static_flag,
        }
    }

    pub fn with_eta_jacobian(mut self, jac: Arc<CovectorJacFn>) -> Self {
        self.eta_jac = Some(jac);
        self
    }

    pub fn with_kappa_gradient(
        mut self,
        grad: Arc<dyn Fn(&Point) -> DVector<f64> + Send + Sync>,
    ) -> Self {
        self.kappa_grad = Some(grad);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn base(&self) -> &ChartedManifold {
        &self.base
    }

    pub fn dim_space(&self) -> usize {
        self.base.dim()
    }

    pub fn is_static(&self) -> bool {
        self.static_flag
    }

    pub fn kappa(&self, x: &Point) -> f64 {
        (self.kappa)(x)
    }

    pub fn eta(&self, x: &Point) -> DVector<f64> {
        (self.eta)(x)
    }

    /// `|eta|^2` with respect to the base metric g.
    pub fn eta_norm2(&self, x: &Point) -> f64 {
        let e = self.eta(x);
        let gi = self.base.metric_inv(x);
        (&gi * &e).dot(&e)
    }

    /// `kappa - |eta|^2_g`; positive on the chart for a causal geometry.
    pub fn lapse(&self, x: &Point) -> f64 {
        self.kappa(x) - self.eta_norm2(x)
    }

    /// Conformal factor `c = 1 / (kappa - |eta|^2)`.
    pub fn conformal_factor(&self, x: &Point) -> f64 {
        1.0 / self.lapse(x)
    }

    /// `g_c = c g` as a matrix.
    pub fn metric_c(&self, x: &Point) -> DMatrix<f64> {
        self.base.metric(x) * self.conformal_factor(x)
    }

    /// `eta_c = c eta` as a covector.
    pub fn eta_c(&self, x: &Point) -> DVector<f64> {
        self.eta(x) * self.conformal_factor(x)
    }

    /// Partial derivatives `d_j (eta_c)_k`, central differences on the
    /// composed closure.
    pub fn eta_c_partials(&self, x: &Point) -> DMatrix<f64> {
        let n = self.dim_space();
        let h = self.base.fd_step();
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let d = (self.eta_c(&xp) - self.eta_c(&xm)) / (2.0 * h);
            for k in 0..n {
                out[(j, k)] = d[k];
            }
        }
        out
    }

    /// Gradient of `log c` when analytic kappa/eta data is registered and the
    /// base metric is flat. `log c = -log(kappa - |eta|^2)`.
    pub fn conformal_log_gradient(&self, x: &Point) -> Option<DVector<f64>> {
        if self.base.id() != "flat-disc" {
            return None;
        }
        let kg = self.kappa_grad.as_ref()?;
        let ej = self.eta_jac.as_ref()?;
        let e = self.eta(x);
        let jac = ej(x); // jac[(j, k)] = d_j eta_k
        // d_j |eta|^2 = 2 (jac * eta)_j for the flat base metric
        let dq = kg(x) - 2.0 * (jac * e);
        Some(-dq / self.lapse(x))
    }

    /// Charted manifold carrying the conformal spatial metric `g_c`.
    ///
    /// When analytic kappa/eta derivatives are available on a flat base the
    /// Christoffel symbols of `g_c` are registered in closed form through the
    /// conformal rescaling rule, which keeps the ray integrators cheap.
    pub fn conformal_manifold(&self) -> ChartedManifold {
        let geo = self.clone();
        let base = self.base.clone();
        let metric = Arc::new(move |x: &Point| geo.metric_c(x));
        let inside = {
            let b = base.clone();
            Arc::new(move |x: &Point| b.inside(x)) as Arc<dyn Fn(&Point) -> bool + Send + Sync>
        };
        let bdf = {
            let b = base.clone();
            Arc::new(move |x: &Point| b.boundary_defining(x))
                as Arc<dyn Fn(&Point) -> f64 + Send + Sync>
        };
        let mut man = ChartedManifold::new(
            format!("{}/conformal", self.id),
            base.dim(),
            metric,
            inside,
            bdf,
            base.chart_diameter(),
            chart_bounds_of(&base),
            base.boundary_shape(),
        );
        let probe = DVector::from_vec(vec![0.11, -0.07]);
        if self.conformal_log_gradient(&probe).is_some() {
            let geo2 = self.clone();
            let n = self.dim_space();
            man = man.with_closed_christoffel(Arc::new(move |x: &Point| {
                // Gamma^i_{jk} of (c * delta): phi = log(c)/2,
                // delta^i_j d_k phi + delta^i_k d_j phi - delta_{jk} d^i phi
                let dphi = geo2.conformal_log_gradient(x).expect("analytic data") * 0.5;
                DenseTensor::from_fn(n, 3, |idx| {
                    let (i, j, k) = (idx[0], idx[1], idx[2]);
                    let mut v = 0.0;
                    if i == j {
                        v += dphi[k];
                    }
                    if i == k {
                        v += dphi[j];
                    }
                    if j == k {
                        v -= dphi[i];
                    }
                    v
                })
            }));
        }
        man
    }

    /// Check `kappa - |eta|^2 > 0` on a fixed 32x32 probe grid over the chart.
    pub fn validate_causality(&self) -> Result<()> {
        let bounds = chart_bounds_of(&self.base);
        let n = 32;
        for i in 0..n {
            for j in 0..n {
                let x = DVector::from_vec(vec![
                    bounds[0].0 + (i as f64 + 0.5) / n as f64 * (bounds[0].1 - bounds[0].0),
                    bounds[1].0 + (j as f64 + 0.5) / n as f64 * (bounds[1].1 - bounds[1].0),
                ]);
                if !self.base.inside(&x) {
                    continue;
                }
                let v = self.lapse(&x);
                if v <= 0.0 {
                    return Err(CoreError::CausalityViolation {
                        point: x.iter().copied().collect(),
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    /// Assemble the spacetime metric matrix field.
    ///
    /// Plain: `-(kappa - |eta|^2) dt^2 + dt (x) eta + eta (x) dt + g`;
    /// conformal: `-dt^2 + dt (x) eta_c + eta_c (x) dt + g_c`, which equals
    /// `c` times the plain metric pointwise.
    pub fn assemble(&self, conformal: bool) -> LorentzMetric {
        let geo = self.clone();
        let n = self.dim_space();
        let matrix = Arc::new(move |z: &SpacetimePoint| {
            let x = spatial_part(z);
            geo.assembled_matrix_at(&x, conformal)
        });
        LorentzMetric {
            dim_space: n,
            matrix,
        }
    }

    pub fn assembled_matrix_at(&self, x: &Point, conformal: bool) -> DMatrix<f64> {
        let n = self.dim_space();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        if conformal {
            let ec = self.eta_c(x);
            let gc = self.metric_c(x);
            m[(0, 0)] = -1.0;
            for i in 0..n {
                m[(0, i + 1)] = ec[i];
                m[(i + 1, 0)] = ec[i];
                for j in 0..n {
                    m[(i + 1, j + 1)] = gc[(i, j)];
                }
            }
        } else {
            let e = self.eta(x);
            let g = self.base.metric(x);
            m[(0, 0)] = -self.lapse(x);
            for i in 0..n {
                m[(0, i + 1)] = e[i];
                m[(i + 1, 0)] = e[i];
                for j in 0..n {
                    m[(i + 1, j + 1)] = g[(i, j)];
                }
            }
        }
        m
    }

    /// Block inverse of the conformal spacetime metric:
    /// `lambda * [[-1, eta_c^sharp], [eta_c^sharp, (1/lambda) g_c^{-1} -
    /// eta_c^sharp (x) eta_c^sharp]]` with `lambda = (kappa - |eta|^2)/kappa`.
    pub fn inverse_conformal_metric(&self, x: &Point) -> DMatrix<f64> {
        let n = self.dim_space();
        let lambda = self.lapse(x) / self.kappa(x);
        let gc_inv = self
            .metric_c(x)
            .try_inverse()
            .expect("conformal metric invertible");
        let sharp = &gc_inv * self.eta_c(x);
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m[(0, 0)] = -lambda;
        for i in 0..n {
            m[(0, i + 1)] = lambda * sharp[i];
            m[(i + 1, 0)] = lambda * sharp[i];
            for j in 0..n {
                m[(i + 1, j + 1)] = gc_inv[(i, j)] - lambda * sharp[i] * sharp[j];
            }
        }
        m
    }

    /// The time velocity of the lifted null ray:
    /// `eta_c v + sign * sqrt((eta_c v)^2 + |v|^2_{g_c})`.
    pub fn time_velocity(&self, x: &Point, v: &ChartVector, sign: RaySign) -> f64 {
        let ec = self.eta_c(x);
        let ev = ec.dot(v);
        let v2 = (self.metric_c(x) * v).dot(v);
        ev + sign.factor() * (ev * ev + v2).sqrt()
    }

    /// The antisymmetric curl contribution `F(z, v)`:
    /// `(d eta_c)(., v)^sharp - lambda * (d eta_c)(eta_c^sharp, v) eta_c^sharp`
    /// with `(d eta_c)_{mk} = d_k (eta_c)_m - d_m (eta_c)_k`.
    pub fn curl_term(&self, x: &Point, v: &ChartVector) -> ChartVector {
        let n = self.dim_space();
        let de = self.eta_c_partials(x); // de[(j, k)] = d_j (eta_c)_k
        let mut omega_v = DVector::zeros(n);
        for m in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += (de[(k, m)] - de[(m, k)]) * v[k];
            }
            omega_v[m] = acc;
        }
        let gc_inv = self
            .metric_c(x)
            .try_inverse()
            .expect("conformal metric invertible");
        let sharp = &gc_inv * self.eta_c(x);
        let lambda = self.lapse(x) / self.kappa(x);
        let raised = &gc_inv * &omega_v;
        let scalar = sharp.dot(&omega_v);
        raised - lambda * scalar * sharp
    }

    /// The drift field `G(z, v)` of the reduced curve equation
    /// `nabla^{g_c}_{bdot} bdot = G(b, bdot)`:
    ///
    /// `G = -lambda ((nabla^{g_c}_v eta_c) v) eta_c^sharp - (eta_c v + sign *
    /// sqrt((eta_c v)^2 + |v|^2)) F(z, v)`.
    pub fn drift_field(&self, x: &Point, v: &ChartVector, sign: RaySign) -> Result<ChartVector> {
        if self.static_flag {
            return Ok(DVector::zeros(self.dim_space()));
        }
        let man_c = self.conformal_manifold();
        let gamma_c = christoffel(&man_c, x)?;
        let de = self.eta_c_partials(x);
        let ec = self.eta_c(x);
        let n = self.dim_space();
        // (nabla_v eta_c) v = v^j v^k (d_j (eta_c)_k - Gamma^l_{kj} (eta_c)_l)
        let mut nabla_vv = 0.0;
        for j in 0..n {
            for k in 0..n {
                let mut term = de[(j, k)];
                for l in 0..n {
                    term -= gamma_c.get(l, k, j) * ec[l];
                }
                nabla_vv += v[j] * v[k] * term;
            }
        }
        let gc_inv = self
            .metric_c(x)
            .try_inverse()
            .expect("conformal metric invertible");
        let sharp = &gc_inv * &ec;
        let lambda = self.lapse(x) / self.kappa(x);
        let mu = self.time_velocity(x, v, sign);
        let f = self.curl_term(x, v);
        Ok(-lambda * nabla_vv * sharp - mu * f)
    }

    /// Oracle for the drift field from the raw Christoffel difference:
    /// `G^i = (Gamma^i_{jk} - Gbar^i_{jk}) v^j v^k - 2 Gbar^i_{0k} mu v^k`
    /// with `Gbar` the spacetime symbols of the conformal metric computed by
    /// finite differences of the assembled matrix.
    pub fn drift_field_oracle(
        &self,
        x: &Point,
        v: &ChartVector,
        sign: RaySign,
    ) -> Result<ChartVector> {
        let n = self.dim_space();
        let man_c = self.conformal_manifold();
        let gamma_c = christoffel(&man_c, x)?;
        let chart = self.spacetime_chart(true);
        let z = lift_point(0.0, x);
        // the oracle stays on the finite-difference route so it remains
        // independent of the analytic closed forms
        let gbar = chart.christoffel_fd(&z)?;
        let mu = self.time_velocity(x, v, sign);
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                for k in 0..n {
                    acc += (gamma_c.get(i, j, k) - gbar.get(i + 1, j + 1, k + 1)) * v[j] * v[k];
                }
                acc -= 2.0 * gbar.get(i + 1, 0, j + 1) * mu * v[j];
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// Analytic gradient of the conformal factor when kappa/eta derivatives
    /// are registered on a flat base: `d c = -c^2 (d kappa - 2 J eta)`.
    fn conformal_factor_gradient(&self, x: &Point) -> Option<DVector<f64>> {
        if self.base.id() != "flat-disc" {
            return None;
        }
        let kg = self.kappa_grad.as_ref()?;
        let ej = self.eta_jac.as_ref()?;
        let e = self.eta(x);
        let jac = ej(x);
        let c = self.conformal_factor(x);
        Some(-c * c * (kg(x) - 2.0 * (jac * e)))
    }

    /// Closed-form spacetime Christoffel symbols of the conformal metric,
    /// available when analytic kappa/eta derivatives are registered on a
    /// flat base. Spatial derivatives of the assembled matrix are exact:
    /// `d_l (eta_c)_k = (d_l c) eta_k + c J_{lk}` and `d_l (g_c)_{ij} =
    /// (d_l c) delta_{ij}`.
    pub fn spacetime_christoffel_closed(&self, x: &Point) -> Option<Christoffel> {
        let dc = self.conformal_factor_gradient(x)?;
        let jac = (self.eta_jac.as_ref()?)(x);
        let n = self.dim_space();
        let c = self.conformal_factor(x);
        let e = self.eta(x);
        // dg[l][(a, b)] = d_{x^l} of the assembled conformal matrix
        let mut dg = vec![DMatrix::zeros(n + 1, n + 1); n];
        for l in 0..n {
            for k in 0..n {
                let de = dc[l] * e[k] + c * jac[(l, k)];
                dg[l][(0, k + 1)] = de;
                dg[l][(k + 1, 0)] = de;
                dg[l][(k + 1, k + 1)] = dc[l];
            }
        }
        let gi = self.inverse_conformal_metric(x);
        let deriv = |l: usize, a: usize, b: usize| -> f64 {
            if l == 0 {
                0.0
            } else {
                dg[l - 1][(a, b)]
            }
        };
        let gamma = DenseTensor::from_fn(n + 1, 3, |idx| {
            let (i, j, k) = (idx[0], idx[1], idx[2]);
            let mut acc = 0.0;
            for d in 0..=n {
                acc += gi[(i, d)] * (deriv(k, d, j) + deriv(j, d, k) - deriv(d, j, k));
            }
            0.5 * acc
        });
        Some(Christoffel::new(gamma))
    }

    /// Spacetime chart of the assembled metric for covariant calculus.
    pub fn spacetime_chart(&self, conformal: bool) -> SpacetimeChart {
        let metric = self.assemble(conformal);
        let closed = if conformal {
            let probe = DVector::from_vec(vec![0.11, -0.07]);
            if self.spacetime_christoffel_closed(&probe).is_some() {
                let geo = self.clone();
                Some(Arc::new(move |z: &SpacetimePoint| {
                    let x = spatial_part(z);
                    geo.spacetime_christoffel_closed(&x)
                        .expect("analytic data")
                        .tensor()
                        .clone()
                }) as Arc<dyn Fn(&SpacetimePoint) -> DenseTensor + Send + Sync>)
            } else {
                None
            }
        } else {
            None
        };
        SpacetimeChart {
            dim: self.dim_space() + 1,
            matrix: metric.matrix.clone(),
            fd_step: self.base.fd_step(),
            christoffel_closed: closed,
        }
    }
}

fn chart_bounds_of(man: &ChartedManifold) -> Vec<(f64, f64)> {
    match man.boundary_shape() {
        crate::geometry::BoundaryShape::Circle { .. } => {
            if man.id() == "polar-disc" {
                vec![(1e-8, 1.3), (-10.0, 10.0)]
            } else {
                vec![(-1.6, 1.6), (-1.6, 1.6)]
            }
        }
        crate::geometry::BoundaryShape::Square { .. } => vec![(-1.6, 1.6), (-1.6, 1.6)],
    }
}

pub fn spatial_part(z: &SpacetimePoint) -> Point {
    DVector::from_iterator(z.len() - 1, z.iter().skip(1).copied())
}

pub fn lift_point(t: f64, x: &Point) -> SpacetimePoint {
    let mut z = DVector::zeros(x.len() + 1);
    z[0] = t;
    for i in 0..x.len() {
        z[i + 1] = x[i];
    }
    z
}

/// Assembled Lorentzian metric on the spacetime chart.
#[derive(Clone)]
pub struct LorentzMetric {
    dim_space: usize,
    matrix: Arc<dyn Fn(&SpacetimePoint) -> DMatrix<f64> + Send + Sync>,
}

impl LorentzMetric {
    pub fn dim_space(&self) -> usize {
        self.dim_space
    }

    pub fn matrix(&self, z: &SpacetimePoint) -> DMatrix<f64> {
        (self.matrix)(z)
    }

    pub fn eval(&self, z: &SpacetimePoint, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
        (self.matrix(z) * w).dot(u)
    }

    pub fn tt(&self, z: &SpacetimePoint) -> f64 {
        self.matrix(z)[(0, 0)]
    }

    pub fn tx(&self, z: &SpacetimePoint) -> DVector<f64> {
        let m = self.matrix(z);
        DVector::from_iterator(self.dim_space, (0..self.dim_space).map(|i| m[(0, i + 1)]))
    }

    pub fn xx(&self, z: &SpacetimePoint) -> DMatrix<f64> {
        let m = self.matrix(z);
        DMatrix::from_fn(self.dim_space, self.dim_space, |i, j| m[(i + 1, j + 1)])
    }

    /// Signature check: eigenvalues of the assembled matrix must split into
    /// one negative and `n` positive.
    pub fn has_lorentz_signature(&self, z: &SpacetimePoint) -> bool {
        let eig = self.matrix(z).symmetric_eigenvalues();
        let neg = eig.iter().filter(|&&l| l < 0.0).count();
        neg == 1 && eig.iter().all(|&l| l.abs() > 1e-14)
    }
}

/// Metric chart over spacetime points for covariant calculus on `R x M`.
#[derive(Clone)]
pub struct SpacetimeChart {
    dim: usize,
    matrix: Arc<dyn Fn(&SpacetimePoint) -> DMatrix<f64> + Send + Sync>,
    fd_step: f64,
    christoffel_closed: Option<Arc<dyn Fn(&SpacetimePoint) -> DenseTensor + Send + Sync>>,
}

impl SpacetimeChart {
    pub fn new(
        dim: usize,
        matrix: Arc<dyn Fn(&SpacetimePoint) -> DMatrix<f64> + Send + Sync>,
        fd_step: f64,
    ) -> Self {
        Self {
            dim,
            matrix,
            fd_step,
            christoffel_closed: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn metric(&self, z: &SpacetimePoint) -> DMatrix<f64> {
        (self.matrix)(z)
    }

    pub fn metric_inv(&self, z: &SpacetimePoint) -> DMatrix<f64> {
        self.metric(z)
            .try_inverse()
            .expect("spacetime metric invertible")
    }

    /// Conformally rescaled chart `c * g`.
    pub fn conformally_scaled(
        &self,
        c: Arc<dyn Fn(&SpacetimePoint) -> f64 + Send + Sync>,
    ) -> SpacetimeChart {
        let base = self.matrix.clone();
        SpacetimeChart {
            dim: self.dim,
            matrix: Arc::new(move |z: &SpacetimePoint| base(z) * c(z)),
            fd_step: self.fd_step,
            christoffel_closed: None,
        }
    }

    /// Copy of the chart with any registered closed-form symbols dropped.
    pub fn without_closed_form(&self) -> SpacetimeChart {
        SpacetimeChart {
            dim: self.dim,
            matrix: self.matrix.clone(),
            fd_step: self.fd_step,
            christoffel_closed: None,
        }
    }

    /// Spacetime Christoffel symbols, preferring a registered closed form.
    pub fn christoffel(&self, z: &SpacetimePoint) -> Result<Christoffel> {
        if let Some(closed) = &self.christoffel_closed {
            return Ok(Christoffel::new(closed(z)));
        }
        self.christoffel_fd(z)
    }

    /// Spacetime Christoffel symbols by central differences of the matrix.
    pub fn christoffel_fd(&self, z: &SpacetimePoint) -> Result<Christoffel> {
        let dim = self.dim;
        let h = self.fd_step;
        let gi = self.metric_inv(z);
        let mut dg = Vec::with_capacity(dim);
        for l in 0..dim {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[l] += h;
            zm[l] -= h;
            dg.push((self.metric(&zp) - self.metric(&zm)) / (2.0 * h));
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

    /// Symmetrized covariant derivative of a spacetime tensor field at `z`.
    pub fn sym_covariant_derivative(
        &self,
        field: &SpacetimeTensorField,
        z: &SpacetimePoint,
    ) -> Result<DenseTensor> {
        let gamma = self.christoffel(z)?;
        let partials = field.partials(z, self.fd_step);
        let comps = field.components(z);
        Ok(covariant_derivative(&gamma, &partials, &comps).symmetrize())
    }

    /// Covariant-derivative contraction against a repeated vector, avoiding
    /// the full symmetrization: for all slots equal,
    /// `d^s T (w, ..., w) = w^j d_j[T](w...) - m T(Gamma(w,w), w, ...)`.
    pub fn sym_derivative_repeated(
        &self,
        field: &SpacetimeTensorField,
        z: &SpacetimePoint,
        w: &DVector<f64>,
        gamma: &Christoffel,
    ) -> f64 {
        let rank = field.rank();
        let partials = field.partials(z, self.fd_step);
        let dir = partials.contract_first(w).eval_repeated(w);
        if rank == 0 {
            return dir;
        }
        let gw = gamma.contract(w, w);
        let comps = field.components(z);
        let corr = comps.contract_first(&gw).eval_repeated(w);
        dir - rank as f64 * corr
    }
}

/// Outcome of the conformal rescaling of a symmetrized derivative:
/// `c^{-m+1} d~^s T = d^s(c^{-m+1} T) + U g` for the chart metric `g` and its
/// rescaling `g~ = c g`.
pub struct ConformalGaugeParts {
    /// `T' = c^{-m+1} T`
    pub rescaled: SpacetimeTensorField,
    /// Extracted `U`; `None` for m = 1, where it vanishes identically.
    pub trace_part: Option<Arc<dyn Fn(&SpacetimePoint) -> DenseTensor + Send + Sync>>,
    /// max over probes of `|c^{-m+1} d~^s T - d^s(c^{-m+1} T) - U g|`
    pub max_residual: f64,
}

/// Decompose the conformal change of the symmetrized derivative.
///
/// `T` has rank `m - 1`; the identity relates rank-m derivatives under the
/// chart metric and its rescaling by `c`. `U` is extracted pointwise as the
/// trace component of the difference of the two sides via the trace-product
/// solve on the spacetime fiber.
pub fn conformal_gauge_decompose(
    chart: &SpacetimeChart,
    field: &SpacetimeTensorField,
    c: Arc<dyn Fn(&SpacetimePoint) -> f64 + Send + Sync>,
    probes: &[SpacetimePoint],
) -> Result<ConformalGaugeParts> {
    let m = field.rank() + 1;
    let dim = chart.dim();
    // both symmetrized derivatives go through the same finite-difference
    // Christoffel route so the residual compares metrics, not discretizations
    let chart = chart.without_closed_form();
    let scaled_chart = chart.conformally_scaled(c.clone());
    let power = -(m as f64) + 1.0;

    let rescaled = scale_field_by_conformal(field, c.clone(), power, chart.fd_step());

    let mut max_residual = 0.0f64;
    for z in probes {
        let d_tilde = scaled_chart.sym_covariant_derivative(field, z)?;
        let d_base = chart.sym_covariant_derivative(&rescaled, z)?;
        let lhs = d_tilde.scale(c(z).powf(power));
        let diff = lhs.sub(&d_base);
        let g = chart.metric(z);
        let gi = chart.metric_inv(z);
        let reconstructed = if m >= 2 {
            let u = solve_trace_product(&metric_trace(&diff, &gi), &g, &gi);
            metric_product(&u, &g)
        } else {
            DenseTensor::zeros(dim, m)
        };
        let res = diff.sub(&reconstructed).max_abs();
        max_residual = max_residual.max(res);
    }

    let trace_part = if m >= 2 {
        let field = field.clone();
        let rescaled2 = rescaled.clone();
        let c2 = c.clone();
        Some(Arc::new(move |z: &SpacetimePoint| {
            let scaled_chart = chart.conformally_scaled(c2.clone());
            let d_tilde = scaled_chart
                .sym_covariant_derivative(&field, z)
                .expect("probe inside chart");
            let d_base = chart
                .sym_covariant_derivative(&rescaled2, z)
                .expect("probe inside chart");
            let diff = d_tilde.scale(c2(z).powf(power)).sub(&d_base);
            let g = chart.metric(z);
            let gi = chart.metric_inv(z);
            solve_trace_product(&metric_trace(&diff, &gi), &g, &gi)
        }) as Arc<dyn Fn(&SpacetimePoint) -> DenseTensor + Send + Sync>)
    } else {
        None
    };

    Ok(ConformalGaugeParts {
        rescaled,
        trace_part,
        max_residual,
    })
}

fn scale_field_by_conformal(
    field: &SpacetimeTensorField,
    c: Arc<dyn Fn(&SpacetimePoint) -> f64 + Send + Sync>,
    power: f64,
    fd_step: f64,
) -> SpacetimeTensorField {
    let dim = field.dim();
    let rank = field.rank();
    let f1 = field.clone();
    let c1 = c.clone();
    let comps = Arc::new(move |z: &SpacetimePoint| f1.components(z).scale(c1(z).powf(power)));
    let f2 = field.clone();
    let partials = Arc::new(move |z: &SpacetimePoint| {
        // d_j (c^p T) = p c^{p-1} (d_j c) T + c^p d_j T
        let cv = c(z).powf(power);
        let base = f2.partials(z, fd_step).scale(cv);
        let comps = f2.components(z);
        let mut out = base;
        for j in 0..dim {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += fd_step;
            zm[j] -= fd_step;
            let dc = (c(&zp) - c(&zm)) / (2.0 * fd_step);
            let factor = power * c(z).powf(power - 1.0) * dc;
            for idx in comps.indices() {
                let mut full = Vec::with_capacity(rank + 1);
                full.push(j);
                full.extend_from_slice(&idx);
                out.add_at(&full, factor * comps.get(&idx));
            }
        }
        out
    });
    SpacetimeTensorField::new(dim, rank, comps, field.t_support()).with_partials(partials)
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

/// Registered stationary geometries.
///
/// Ids:
/// - `minkowski`: flat disc, kappa = 1, eta = 0
/// - `rotation(eps)`: flat disc, kappa = 1, eta = eps * (-y dx + x dy)
/// - `conformal-minkowski(a)`: flat disc, kappa = 1 + a exp(-2|x|^2), eta = 0
/// - `conformal-rotation(eps,a)`: both of the above
pub fn lookup_stationary(id: &str) -> Result<StationaryGeometry> {
    let disc = crate::geometry::flat_disc();
    if id == "minkowski" {
        return Ok(rotation_geometry(disc, 0.0, 0.0, id));
    }
    if let Some(arg) = id.strip_prefix("rotation(").and_then(|s| s.strip_suffix(')')) {
        let eps: f64 = arg
            .trim()
            .parse()
            .map_err(|_| CoreError::GeometryParam(id.into(), format!("bad float `{arg}`")))?;
        return Ok(rotation_geometry(disc, eps, 0.0, id));
    }
    if let Some(arg) = id
        .strip_prefix("conformal-minkowski(")
        .and_then(|s| s.strip_suffix(')'))
    {
        let a: f64 = arg
            .trim()
            .parse()
            .map_err(|_| CoreError::GeometryParam(id.into(), format!("bad float `{arg}`")))?;
        return Ok(rotation_geometry(disc, 0.0, a, id));
    }
    if let Some(arg) = id
        .strip_prefix("conformal-rotation(")
        .and_then(|s| s.strip_suffix(')'))
    {
        let parts: Vec<&str> = arg.split(',').collect();
        if parts.len() != 2 {
            return Err(CoreError::GeometryParam(
                id.into(),
                "expected two floats".into(),
            ));
        }
        let eps: f64 = parts[0].trim().parse().map_err(|_| {
            CoreError::GeometryParam(id.into(), format!("bad float `{}`", parts[0]))
        })?;
        let a: f64 = parts[1].trim().parse().map_err(|_| {
            CoreError::GeometryParam(id.into(), format!("bad float `{}`", parts[1]))
        })?;
        return Ok(rotation_geometry(disc, eps, a, id));
    }
    Err(CoreError::UnknownGeometry(id.into()))
}

/// Geometry ids exercised by the verification suites.
pub fn registered_geometry_ids() -> Vec<&'static str> {
    vec![
        "minkowski",
        "rotation(0.1)",
        "conformal-minkowski(0.4)",
        "conformal-rotation(0.1,0.4)",
    ]
}

fn rotation_geometry(
    base: ChartedManifold,
    eps: f64,
    bump_amp: f64,
    id: &str,
) -> StationaryGeometry {
    let kappa = Arc::new(move |x: &Point| 1.0 + bump_amp * (-2.0 * x.norm_squared()).exp());
    let kappa_grad = Arc::new(move |x: &Point| {
        let f = bump_amp * (-2.0 * x.norm_squared()).exp();
        -4.0 * f * x.clone()
    });
    let eta = Arc::new(move |x: &Point| DVector::from_vec(vec![-eps * x[1], eps * x[0]]));
    let eta_jac = Arc::new(move |_: &Point| DMatrix::from_row_slice(2, 2, &[0.0, eps, -eps, 0.0]));
    StationaryGeometry::new(id, base, kappa, eta, eps == 0.0 && bump_amp == 0.0)
        .with_eta_jacobian(eta_jac)
        .with_kappa_gradient(kappa_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields;
    use approx::assert_relative_eq;

    fn probe_points() -> Vec<Point> {
        vec![
            DVector::from_vec(vec![0.2, 0.3]),
            DVector::from_vec(vec![-0.4, 0.1]),
            DVector::from_vec(vec![0.05, -0.55]),
        ]
    }

    #[test]
    fn minkowski_assembles_to_flat_matrix() {
        let geo = lookup_stationary("minkowski").unwrap();
        let m = geo.assemble(false);
        let z = lift_point(0.3, &DVector::from_vec(vec![0.1, 0.2]));
        let mat = m.matrix(&z);
        let expected =
            DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((mat - expected).abs().max() < 1e-14);
        assert!(m.has_lorentz_signature(&z));
    }

    #[test]
    fn conformal_metric_is_pointwise_rescaling() {
        for id in registered_geometry_ids() {
            let geo = lookup_stationary(id).unwrap();
            geo.validate_causality().unwrap();
            let plain = geo.assemble(false);
            let conf = geo.assemble(true);
            for x in probe_points() {
                let z = lift_point(0.0, &x);
                let c = geo.conformal_factor(&x);
                let diff = (conf.matrix(&z) - plain.matrix(&z) * c).abs().max();
                assert!(diff < 1e-12, "{id}: {diff}");
                assert_relative_eq!(conf.tt(&z), -1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn block_inverse_against_direct_inversion() {
        for id in registered_geometry_ids() {
            let geo = lookup_stationary(id).unwrap();
            let conf = geo.assemble(true);
            for x in probe_points() {
                let z = lift_point(0.0, &x);
                let m = conf.matrix(&z);
                let inv = geo.inverse_conformal_metric(&x);
                let prod = &m * &inv;
                let id_err = (&prod - DMatrix::identity(3, 3)).abs().max();
                assert!(id_err < 1e-10, "{id}: {id_err}");
            }
        }
    }

    #[test]
    fn block_inverse_example_entry() {
        // flat g, kappa = 2, eta = (0.1, 0): entry (0,0) = -(kappa-|eta|^2)/kappa
        let disc = crate::geometry::flat_disc();
        let geo = StationaryGeometry::new(
            "test",
            disc,
            Arc::new(|_| 2.0),
            Arc::new(|_: &Point| DVector::from_vec(vec![0.1, 0.0])),
            false,
        );
        let x = DVector::zeros(2);
        let inv = geo.inverse_conformal_metric(&x);
        assert_relative_eq!(inv[(0, 0)], -(2.0 - 0.01) / 2.0, epsilon = 1e-14);
        let direct = geo.assembled_matrix_at(&x, true).try_inverse().unwrap();
        assert!((inv - direct).abs().max() < 1e-12);
    }

    #[test]
    fn drift_vanishes_for_static_geometries() {
        for id in ["minkowski"] {
            let geo = lookup_stationary(id).unwrap();
            let x = DVector::from_vec(vec![0.2, -0.3]);
            let v = DVector::from_vec(vec![0.7, 0.4]);
            let g = geo.drift_field(&x, &v, RaySign::Plus).unwrap();
            assert!(g.norm() < 1e-12, "{id}");
        }
        // eta = 0 but kappa nonconstant: not flagged static, yet G must
        // still vanish because it is built solely from eta_c
        let geo = lookup_stationary("conformal-minkowski(0.4)").unwrap();
        let x = DVector::from_vec(vec![0.2, -0.3]);
        let v = DVector::from_vec(vec![0.7, 0.4]);
        let g = geo.drift_field(&x, &v, RaySign::Plus).unwrap();
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn drift_matches_christoffel_difference_oracle() {
        for id in registered_geometry_ids() {
            let geo = lookup_stationary(id).unwrap();
            for x in probe_points() {
                let v = DVector::from_vec(vec![0.8, -0.35]);
                let g = geo.drift_field(&x, &v, RaySign::Plus).unwrap();
                let oracle = geo.drift_field_oracle(&x, &v, RaySign::Plus).unwrap();
                let err = (g - oracle).abs().max();
                assert!(err < 1e-6, "{id} at {x:?}: err={err}");
            }
        }
    }

    #[test]
    fn drift_scales_quadratically_in_velocity() {
        let geo = lookup_stationary("conformal-rotation(0.1,0.4)").unwrap();
        let x = DVector::from_vec(vec![0.3, 0.2]);
        let v = DVector::from_vec(vec![0.5, -0.9]);
        for lam in [0.5, 2.0, 3.7] {
            let g1 = geo.drift_field(&x, &v, RaySign::Plus).unwrap();
            let g2 = geo.drift_field(&x, &(lam * &v), RaySign::Plus).unwrap();
            let err = (g2 - g1 * lam * lam).abs().max();
            assert!(err < 1e-9, "lambda={lam} err={err}");
        }
    }

    #[test]
    fn curl_term_vanishes_for_closed_eta_c() {
        // manufactured geometry with constant eta and kappa = 1 + |eta|^2, so
        // c = 1 and eta_c = eta is exactly closed
        let disc = crate::geometry::flat_disc();
        let a = 0.15;
        let eta = Arc::new(move |_x: &Point| DVector::from_vec(vec![a, 0.5 * a]));
        let kappa = Arc::new(move |_x: &Point| 1.0 + a * a + 0.25 * a * a);
        let geo = StationaryGeometry::new("closed-eta", disc, kappa, eta, false);
        let x = DVector::from_vec(vec![0.1, 0.3]);
        let v = DVector::from_vec(vec![0.4, -0.2]);
        assert_relative_eq!(geo.conformal_factor(&x), 1.0, epsilon = 1e-12);
        let f = geo.curl_term(&x, &v);
        assert!(f.norm() < 1e-9);
    }

    #[test]
    fn causality_violation_detected() {
        let disc = crate::geometry::flat_disc();
        let geo = StationaryGeometry::new(
            "bad",
            disc,
            Arc::new(|_| 0.5),
            Arc::new(|_: &Point| DVector::from_vec(vec![1.0, 0.0])),
            false,
        );
        assert!(matches!(
            geo.validate_causality(),
            Err(CoreError::CausalityViolation { .. })
        ));
    }

    #[test]
    fn conformal_gauge_identity_m1_exact_zero() {
        // rank-0 potential: both derivatives are the coordinate gradient,
        // the trace part is absent
        let geo = lookup_stationary("minkowski").unwrap();
        let chart = geo.spacetime_chart(true);
        let t = fields::random_spacetime_field(2, 0, (-1.0, 1.0), 0.8, 2, 21);
        let c = Arc::new(|z: &SpacetimePoint| 1.0 + 0.3 * (z[1] + 0.2 * z[2]).tanh());
        let probes: Vec<SpacetimePoint> =
            probe_points().iter().map(|x| lift_point(0.1, x)).collect();
        let parts = conformal_gauge_decompose(&chart, &t, c, &probes).unwrap();
        assert!(parts.trace_part.is_none());
        assert!(parts.max_residual < 1e-10, "residual {}", parts.max_residual);
    }

    #[test]
    fn conformal_gauge_identity_m2() {
        let geo = lookup_stationary("rotation(0.1)").unwrap();
        let chart = geo.spacetime_chart(true);
        let t = fields::random_spacetime_field(2, 1, (-1.0, 1.0), 0.8, 2, 22);
        let c = Arc::new(|z: &SpacetimePoint| 1.2 + 0.25 * (z[1] - 0.3 * z[2]).sin());
        let probes: Vec<SpacetimePoint> =
            probe_points().iter().map(|x| lift_point(0.05, x)).collect();
        let parts = conformal_gauge_decompose(&chart, &t, c.clone(), &probes).unwrap();
        assert!(parts.max_residual < 1e-6, "residual {}", parts.max_residual);

        // closed-form oracle: U = (1/(2 c^2)) g^{ab} (d_a c) T_b
        let z = &probes[0];
        let u = parts.trace_part.as_ref().unwrap()(z);
        let gi = chart.metric_inv(z);
        let mut dc = DVector::zeros(3);
        let h = chart.fd_step();
        for j in 0..3 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            dc[j] = (c(&zp) - c(&zm)) / (2.0 * h);
        }
        let tc = t.components(z);
        let mut expected = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                expected += gi[(a, b)] * dc[a] * tc.get(&[b]);
            }
        }
        expected /= 2.0 * c(z) * c(z);
        assert_relative_eq!(u.get(&[]), expected, epsilon = 1e-6, max_relative = 1e-4);
    }

    #[test]
    fn identity_conformal_factor_is_exact() {
        let geo = lookup_stationary("rotation(0.1)").unwrap();
        let chart = geo.spacetime_chart(true);
        let t = fields::random_spacetime_field(2, 1, (-1.0, 1.0), 0.8, 2, 23);
        let c = Arc::new(|_: &SpacetimePoint| 1.0);
        let probes = vec![lift_point(0.0, &DVector::from_vec(vec![0.2, 0.1]))];
        let parts = conformal_gauge_decompose(&chart, &t, c, &probes).unwrap();
        assert!(parts.max_residual < 1e-11);
        let u = parts.trace_part.as_ref().unwrap()(&probes[0]);
        assert!(u.max_abs() < 1e-11);
    }
}
