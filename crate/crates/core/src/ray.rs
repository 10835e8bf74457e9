//! Curve and geodesic integrators on the spatial chart, null-geodesic
//! integration on the spacetime chart, boundary inflow sampling, and the
//! convex-foliation checker.
//!
//! All integrators are fixed-step classical RK4 with a terminal bisection
//! that locates the boundary exit to 1e-10 chart units. Each sampled curve
//! stores a uniform grid plus two tail nodes (the midpoint of the final
//! partial step and the exit point) so that quadrature along the curve stays
//! fourth order up to the boundary.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CoreError, Result};
use crate::fields::SmoothScalar;
use crate::geometry::{christoffel, BoundaryShape, ChartVector, ChartedManifold, Point};
use crate::quad;
use crate::stationary::{lift_point, RaySign, SpacetimeChart, StationaryGeometry};

/// Default step: 1e-3 of the chart diameter.
pub fn default_step(man: &ChartedManifold) -> f64 {
    1e-3 * man.chart_diameter()
}

/// Budget before a ray is declared trapped.
pub const TRAPPED_BUDGET: usize = 1_000_000;

/// Inward boundary sample: a boundary point and a unit inward vector.
#[derive(Debug, Clone)]
pub struct InflowSample {
    pub x: Point,
    pub v: ChartVector,
    /// boundary parameter (angle on the disc, arclength on the square)
    pub boundary_param: f64,
    /// direction parameter: angle from the inward normal
    pub dir_param: f64,
}

/// A sampled solution of the second-order curve ODE on the spatial chart.
#[derive(Debug, Clone)]
pub struct SampledCurve {
    /// node parameters: uniform `0, h, ..., (n_uniform-1) h`, then the
    /// midpoint of the final partial step, then the exit parameter
    pub s: Vec<f64>,
    pub b: Vec<Point>,
    pub bdot: Vec<ChartVector>,
    pub n_uniform: usize,
    pub step: f64,
    pub exit_s: f64,
}

impl SampledCurve {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Integrate nodewise values along the curve (4th order composite rule
    /// on the uniform part, Simpson on the tail).
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let nu = self.n_uniform;
        if nu < 2 {
            if self.len() == 3 {
                return quad::simpson_segment(values[0], values[1], values[2], self.exit_s);
            }
            return 0.0;
        }
        let uniform = quad::integrate_uniform(&values[..nu], self.step);
        let tail_len = self.exit_s - self.s[nu - 1];
        if tail_len <= 0.0 || self.len() < nu + 2 {
            return uniform;
        }
        uniform + quad::simpson_segment(values[nu - 1], values[nu], values[nu + 1], tail_len)
    }

    /// Cumulative primitive along the nodes (4th order on the uniform part).
    pub fn cumulative(&self, values: &[f64]) -> Vec<f64> {
        debug_assert_eq!(values.len(), self.len());
        let nu = self.n_uniform;
        let mut out = vec![0.0; self.len()];
        if nu >= 2 {
            let cum = quad::cumulative_integral_uniform(&values[..nu], self.step);
            out[..nu].copy_from_slice(&cum);
        }
        if self.len() >= nu + 2 {
            let tail_len = self.exit_s - self.s[nu - 1];
            let base = out[nu - 1];
            out[nu] =
                base + quad::half_segment(values[nu - 1], values[nu], values[nu + 1], tail_len);
            out[nu + 1] =
                base + quad::simpson_segment(values[nu - 1], values[nu], values[nu + 1], tail_len);
        }
        out
    }
}

/// A lifted null ray `beta(s) = (a(s), b(s))` over the spatial curve.
#[derive(Debug, Clone)]
pub struct LiftedRay {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub adot: Vec<f64>,
    pub b: Vec<Point>,
    pub bdot: Vec<ChartVector>,
    pub n_uniform: usize,
    pub step: f64,
    pub exit_s: f64,
    pub sign: RaySign,
}

impl LiftedRay {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn spacetime_point(&self, k: usize) -> DVector<f64> {
        lift_point(self.a[k], &self.b[k])
    }

    pub fn spacetime_velocity(&self, k: usize) -> DVector<f64> {
        let n = self.b[k].len();
        let mut w = DVector::zeros(n + 1);
        w[0] = self.adot[k];
        for i in 0..n {
            w[i + 1] = self.bdot[k][i];
        }
        w
    }

    /// Time range `[min a, max a]` covered by the ray.
    pub fn time_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &a in &self.a {
            lo = lo.min(a);
            hi = hi.max(a);
        }
        (lo, hi)
    }

    /// Copy with the time component shifted by `t`: the time-translated ray.
    pub fn time_translated(&self, t: f64) -> LiftedRay {
        let mut out = self.clone();
        for a in &mut out.a {
            *a += t;
        }
        out
    }

    pub fn curve(&self) -> SampledCurve {
        SampledCurve {
            s: self.s.clone(),
            b: self.b.clone(),
            bdot: self.bdot.clone(),
            n_uniform: self.n_uniform,
            step: self.step,
            exit_s: self.exit_s,
        }
    }

    /// Supremum of `|gbar_c(betadot, betadot)|` along the ray.
    pub fn null_defect(&self, geo: &StationaryGeometry) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.len() {
            let x = &self.b[k];
            let ec = geo.eta_c(x);
            let gc = geo.metric_c(x);
            let v = &self.bdot[k];
            let adot = self.adot[k];
            let defect = -adot * adot + 2.0 * adot * ec.dot(v) + (gc * v).dot(v);
            worst = worst.max(defect.abs());
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// RK4 with boundary exit
// ---------------------------------------------------------------------------

fn rk4_step<F: Fn(&DVector<f64>) -> DVector<f64>>(
    f: &F,
    y: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let k1 = f(y);
    let k2 = f(&(y + &k1 * (0.5 * h)));
    let k3 = f(&(y + &k2 * (0.5 * h)));
    let k4 = f(&(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

struct ExitSearch {
    state: DVector<f64>,
    delta: f64,
}

/// March the ODE until the spatial part leaves the region, then bisect the
/// final step. `spatial` extracts the position from the state vector.
fn integrate_until_exit<F, S>(
    f: &F,
    spatial: &S,
    y0: DVector<f64>,
    step: f64,
    bdf: &dyn Fn(&Point) -> f64,
    budget: usize,
) -> Result<(Vec<DVector<f64>>, ExitSearch)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    S: Fn(&DVector<f64>) -> Point,
{
    let mut nodes = vec![y0.clone()];
    let mut y = y0;
    for _ in 0..budget {
        let y_next = rk4_step(f, &y, step);
        let rho = bdf(&spatial(&y_next));
        if rho >= 0.0 {
            let mut lo = 0.0f64;
            let mut hi = step;
            // guard the degenerate start-on-boundary case
            if bdf(&spatial(&y)) >= 0.0 {
                let probe = step * 1e-3;
                if bdf(&spatial(&rk4_step(f, &y, probe))) < 0.0 {
                    lo = probe;
                } else {
                    return Ok((
                        nodes,
                        ExitSearch {
                            state: y.clone(),
                            delta: 0.0,
                        },
                    ));
                }
            }
            for _ in 0..52 {
                let mid = 0.5 * (lo + hi);
                let ym = rk4_step(f, &y, mid);
                if bdf(&spatial(&ym)) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let delta = 0.5 * (lo + hi);
            let exit_state = rk4_step(f, &y, delta);
            return Ok((
                nodes,
                ExitSearch {
                    state: exit_state,
                    delta,
                },
            ));
        }
        nodes.push(y_next.clone());
        y = y_next;
    }
    Err(CoreError::TrappedRay(budget))
}

fn pack_state(b: &Point, v: &ChartVector) -> DVector<f64> {
    let n = b.len();
    let mut y = DVector::zeros(2 * n);
    for i in 0..n {
        y[i] = b[i];
        y[n + i] = v[i];
    }
    y
}

fn unpack_state(y: &DVector<f64>) -> (Point, ChartVector) {
    let n = y.len() / 2;
    let b = DVector::from_iterator(n, (0..n).map(|i| y[i]));
    let v = DVector::from_iterator(n, (0..n).map(|i| y[n + i]));
    (b, v)
}

fn curve_from_nodes(
    nodes: Vec<DVector<f64>>,
    exit: ExitSearch,
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    step: f64,
) -> SampledCurve {
    let n_uniform = nodes.len();
    let last = nodes.last().expect("at least the start node").clone();
    let mut s = Vec::with_capacity(n_uniform + 2);
    let mut b = Vec::with_capacity(n_uniform + 2);
    let mut bdot = Vec::with_capacity(n_uniform + 2);
    for (k, y) in nodes.iter().enumerate() {
        let (bb, vv) = unpack_state(y);
        s.push(k as f64 * step);
        b.push(bb);
        bdot.push(vv);
    }
    let s_last = (n_uniform - 1) as f64 * step;
    let exit_s = s_last + exit.delta;
    if exit.delta > 0.0 {
        let mid_state = rk4_step(&f, &last, 0.5 * exit.delta);
        let (bm, vm) = unpack_state(&mid_state);
        s.push(s_last + 0.5 * exit.delta);
        b.push(bm);
        bdot.push(vm);
        let (be, ve) = unpack_state(&exit.state);
        s.push(exit_s);
        b.push(be);
        bdot.push(ve);
    }
    SampledCurve {
        s,
        b,
        bdot,
        n_uniform,
        step,
        exit_s,
    }
}

/// Integrate the reduced curve equation `nabla^{g_c}_{bdot} bdot = G(b, bdot)`
/// from an interior or inflow start.
pub fn integrate_drift_curve(
    geo: &StationaryGeometry,
    start: (&Point, &ChartVector),
    step: f64,
    sign: RaySign,
) -> Result<SampledCurve> {
    let man_c = geo.conformal_manifold();
    let geo2 = geo.clone();
    let man2 = man_c.clone();
    let f = move |y: &DVector<f64>| -> DVector<f64> {
        let (b, v) = unpack_state(y);
        let gamma = christoffel(&man2, &b).expect("christoffel inside chart");
        let acc = -gamma.contract(&v, &v)
            + geo2
                .drift_field(&b, &v, sign)
                .expect("drift field inside chart");
        let n = b.len();
        let mut dy = DVector::zeros(2 * n);
        for i in 0..n {
            dy[i] = v[i];
            dy[n + i] = acc[i];
        }
        dy
    };
    let man3 = man_c.clone();
    let bdf = move |x: &Point| man3.boundary_defining(x);
    let spatial = |y: &DVector<f64>| unpack_state(y).0;
    let y0 = pack_state(start.0, start.1);
    let (nodes, exit) = integrate_until_exit(&f, &spatial, y0, step, &bdf, TRAPPED_BUDGET)?;
    Ok(curve_from_nodes(nodes, exit, &f, step))
}

/// Integrate a plain geodesic of the manifold's own metric.
pub fn integrate_geodesic(
    man: &ChartedManifold,
    start: (&Point, &ChartVector),
    step: f64,
) -> Result<SampledCurve> {
    let man2 = man.clone();
    let f = move |y: &DVector<f64>| -> DVector<f64> {
        let (b, v) = unpack_state(y);
        let gamma = christoffel(&man2, &b).expect("christoffel inside chart");
        let acc = -gamma.contract(&v, &v);
        let n = b.len();
        let mut dy = DVector::zeros(2 * n);
        for i in 0..n {
            dy[i] = v[i];
            dy[n + i] = acc[i];
        }
        dy
    };
    let man3 = man.clone();
    let bdf = move |x: &Point| man3.boundary_defining(x);
    let spatial = |y: &DVector<f64>| unpack_state(y).0;
    let y0 = pack_state(start.0, start.1);
    let (nodes, exit) = integrate_until_exit(&f, &spatial, y0, step, &bdf, TRAPPED_BUDGET)?;
    Ok(curve_from_nodes(nodes, exit, &f, step))
}

/// Exit time of the unit-speed geodesic through an inflow sample.
pub fn exit_time(man: &ChartedManifold, sample: &InflowSample, step: f64) -> Result<f64> {
    Ok(integrate_geodesic(man, (&sample.x, &sample.v), step)?.exit_s)
}

/// Lift a spatial curve to a null ray by cumulative quadrature of
/// `adot = eta_c bdot + sign * sqrt((eta_c bdot)^2 + |bdot|^2)`, `a(0) = a0`.
pub fn lift_ray(
    geo: &StationaryGeometry,
    curve: &SampledCurve,
    a0: f64,
    sign: RaySign,
) -> LiftedRay {
    let adot: Vec<f64> = (0..curve.len())
        .map(|k| geo.time_velocity(&curve.b[k], &curve.bdot[k], sign))
        .collect();
    let mut a = curve.cumulative(&adot);
    for v in &mut a {
        *v += a0;
    }
    LiftedRay {
        s: curve.s.clone(),
        a,
        adot,
        b: curve.b.clone(),
        bdot: curve.bdot.clone(),
        n_uniform: curve.n_uniform,
        step: curve.step,
        exit_s: curve.exit_s,
        sign,
    }
}

/// Integrate the full spacetime null geodesic of the conformal metric.
///
/// The start velocity is projected onto the null cone (branch matching the
/// sign of its time component) before integration.
pub fn integrate_null_geodesic(
    geo: &StationaryGeometry,
    start_point: &DVector<f64>,
    start_velocity: &DVector<f64>,
    step: f64,
) -> Result<LiftedRay> {
    let n = geo.dim_space();
    let chart = geo.spacetime_chart(true);
    let man_c = geo.conformal_manifold();
    let x0 = crate::stationary::spatial_part(start_point);
    let v_spatial = DVector::from_iterator(n, (1..=n).map(|i| start_velocity[i]));
    let sign = if start_velocity[0] >= 0.0 {
        RaySign::Plus
    } else {
        RaySign::Minus
    };
    let adot0 = geo.time_velocity(&x0, &v_spatial, sign);
    let mut w0 = start_velocity.clone();
    w0[0] = adot0;

    let chart2 = chart.clone();
    let f = move |y: &DVector<f64>| -> DVector<f64> {
        let dim = y.len() / 2;
        let z = DVector::from_iterator(dim, (0..dim).map(|i| y[i]));
        let w = DVector::from_iterator(dim, (0..dim).map(|i| y[dim + i]));
        let gamma = chart2.christoffel(&z).expect("christoffel inside chart");
        let acc = -gamma.contract(&w, &w);
        let mut dy = DVector::zeros(2 * dim);
        for i in 0..dim {
            dy[i] = w[i];
            dy[dim + i] = acc[i];
        }
        dy
    };
    let bdf = move |x: &Point| man_c.boundary_defining(x);
    let spatial = move |y: &DVector<f64>| {
        let dim = y.len() / 2;
        DVector::from_iterator(dim - 1, (1..dim).map(|i| y[i]))
    };
    let y0 = {
        let mut y = DVector::zeros(2 * (n + 1));
        for i in 0..=n {
            y[i] = start_point[i];
            y[n + 1 + i] = w0[i];
        }
        y
    };
    let (nodes, exit) = integrate_until_exit(&f, &spatial, y0, step, &bdf, TRAPPED_BUDGET)?;

    let mut s = Vec::new();
    let mut a = Vec::new();
    let mut adot = Vec::new();
    let mut b = Vec::new();
    let mut bdot = Vec::new();
    let n_uniform = nodes.len();
    let unpack = |y: &DVector<f64>| -> (f64, f64, Point, ChartVector) {
        let dim = y.len() / 2;
        let at = y[0];
        let atd = y[dim];
        let bb = DVector::from_iterator(dim - 1, (1..dim).map(|i| y[i]));
        let vv = DVector::from_iterator(dim - 1, (1..dim).map(|i| y[dim + i]));
        (at, atd, bb, vv)
    };
    for (k, y) in nodes.iter().enumerate() {
        let (at, atd, bb, vv) = unpack(y);
        s.push(k as f64 * step);
        a.push(at);
        adot.push(atd);
        b.push(bb);
        bdot.push(vv);
    }
    let s_last = (n_uniform - 1) as f64 * step;
    let exit_s = s_last + exit.delta;
    if exit.delta > 0.0 {
        let last = nodes.last().expect("nonempty").clone();
        let mid = rk4_step(&f, &last, 0.5 * exit.delta);
        for (param, state) in [(s_last + 0.5 * exit.delta, mid), (exit_s, exit.state)] {
            let (at, atd, bb, vv) = unpack(&state);
            s.push(param);
            a.push(at);
            adot.push(atd);
            b.push(bb);
            bdot.push(vv);
        }
    }
    Ok(LiftedRay {
        s,
        a,
        adot,
        b,
        bdot,
        n_uniform,
        step,
        exit_s,
        sign,
    })
}

/// Drift curve through an inflow sample lifted with `a(0) = a0`.
pub fn lifted_ray_from_sample(
    geo: &StationaryGeometry,
    sample: &InflowSample,
    a0: f64,
    step: f64,
) -> Result<LiftedRay> {
    let curve = integrate_drift_curve(geo, (&sample.x, &sample.v), step, RaySign::Plus)?;
    Ok(lift_ray(geo, &curve, a0, RaySign::Plus))
}

// ---------------------------------------------------------------------------
// Inflow sampling
// ---------------------------------------------------------------------------

/// Uniform fan-beam inflow grid: `n_points` boundary points x `n_dirs` inward
/// directions, velocities normalized to unit length in the manifold metric.
pub fn sample_inflow(man: &ChartedManifold, n_points: usize, n_dirs: usize) -> Vec<InflowSample> {
    let mut out = Vec::with_capacity(n_points * n_dirs);
    for k in 0..n_points {
        for j in 0..n_dirs {
            let psi = -std::f64::consts::FRAC_PI_2
                + std::f64::consts::PI * (j as f64 + 0.5) / n_dirs as f64;
            if let Some(sample) = boundary_sample(man, k as f64 / n_points as f64, psi) {
                out.push(sample);
            }
        }
    }
    out
}

/// Sample at a fractional boundary parameter (in [0,1)) and fan angle `psi`
/// measured from the inward normal.
pub fn boundary_sample(man: &ChartedManifold, frac: f64, psi: f64) -> Option<InflowSample> {
    let (x, inward_euclid, param) = match man.boundary_shape() {
        BoundaryShape::Circle { radius } => {
            let theta = 2.0 * std::f64::consts::PI * frac;
            let x = DVector::from_vec(vec![radius * theta.cos(), radius * theta.sin()]);
            let inward = DVector::from_vec(vec![-theta.cos(), -theta.sin()]);
            (x, inward, theta)
        }
        BoundaryShape::Square { half } => {
            let perimeter = 8.0 * half;
            let arc = frac * perimeter;
            let edge = (arc / (2.0 * half)).floor() as usize % 4;
            let along = arc - edge as f64 * 2.0 * half;
            let (x, inward) = match edge {
                0 => (
                    DVector::from_vec(vec![-half + along, -half]),
                    DVector::from_vec(vec![0.0, 1.0]),
                ),
                1 => (
                    DVector::from_vec(vec![half, -half + along]),
                    DVector::from_vec(vec![-1.0, 0.0]),
                ),
                2 => (
                    DVector::from_vec(vec![half - along, half]),
                    DVector::from_vec(vec![0.0, -1.0]),
                ),
                _ => (
                    DVector::from_vec(vec![-half, half - along]),
                    DVector::from_vec(vec![1.0, 0.0]),
                ),
            };
            (x, inward, arc)
        }
    };
    let (c, s) = (psi.cos(), psi.sin());
    let dir = DVector::from_vec(vec![
        c * inward_euclid[0] - s * inward_euclid[1],
        s * inward_euclid[0] + c * inward_euclid[1],
    ]);
    let norm = man.norm(&x, &dir);
    if !norm.is_finite() || norm < 1e-14 {
        return None;
    }
    let v = dir / norm;
    let nu = man.outward_normal(&x);
    if man.inner(&x, &v, &nu) >= -1e-10 {
        return None;
    }
    Some(InflowSample {
        x,
        v,
        boundary_param: param,
        dir_param: psi,
    })
}

/// Random inflow sample with angles away from grazing.
pub fn random_inflow(man: &ChartedManifold, rng: &mut ChaCha8Rng) -> InflowSample {
    loop {
        let frac: f64 = rng.gen_range(0.0..1.0);
        let psi: f64 = rng.gen_range(-1.45..1.45);
        if let Some(s) = boundary_sample(man, frac, psi) {
            return s;
        }
    }
}

// ---------------------------------------------------------------------------
// Foliation check
// ---------------------------------------------------------------------------

/// One failed convexity test along a curve.
#[derive(Debug, Clone, Serialize)]
pub struct FoliationFailure {
    pub curve_index: usize,
    pub s: f64,
    pub margin: f64,
}

/// Report of the convex-foliation check.
#[derive(Debug, Clone, Serialize)]
pub struct FoliationReport {
    pub pass: bool,
    pub degenerate: bool,
    /// true when the supplied profile decreases toward the boundary and was
    /// internally negated to match the boundary-maximal convention
    pub orientation_flipped: bool,
    pub n_curves: usize,
    pub n_tangencies: usize,
    /// smallest oriented second derivative over all tangencies (positive
    /// margins certify strict convexity)
    pub worst_margin: f64,
    pub failures: Vec<FoliationFailure>,
}

/// Check the convex-foliation condition: along random inflow drift curves,
/// every tangency of the level-set profile must have a strictly positive
/// second derivative (after orienting the profile to be maximal on the
/// boundary).
///
/// Tangencies are detected both at grid points where `|d rho/ds|` falls below
/// the scaled threshold and at sign changes of `d rho/ds` between nodes.
pub fn foliation_check(
    geo: &StationaryGeometry,
    rho: &SmoothScalar,
    n_curves: usize,
    seed: u64,
    step: f64,
) -> FoliationReport {
    let man_c = geo.conformal_manifold();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // degenerate-input detection: gradient of rho vanishes identically
    let mut sup_grad = 0.0f64;
    for i in 0..16 {
        for j in 0..16 {
            let x = DVector::from_vec(vec![
                -0.95 + 1.9 * (i as f64 + 0.5) / 16.0,
                -0.95 + 1.9 * (j as f64 + 0.5) / 16.0,
            ]);
            if man_c.inside(&x) {
                sup_grad = sup_grad.max((rho.gradient)(&x).norm());
            }
        }
    }
    if sup_grad < 1e-12 {
        return FoliationReport {
            pass: false,
            degenerate: true,
            orientation_flipped: false,
            n_curves: 0,
            n_tangencies: 0,
            worst_margin: 0.0,
            failures: Vec::new(),
        };
    }

    // orientation: the convention is rho maximal on the boundary
    let boundary_value = {
        let x = DVector::from_vec(vec![0.99, 0.0]);
        (rho.value)(&x)
    };
    let center_value = (rho.value)(&DVector::zeros(2));
    let orientation = if boundary_value >= center_value {
        1.0
    } else {
        -1.0
    };

    let mut failures = Vec::new();
    let mut n_tangencies = 0usize;
    let mut worst_margin = f64::INFINITY;

    for curve_index in 0..n_curves {
        let sample = random_inflow(&man_c, &mut rng);
        let curve = match integrate_drift_curve(geo, (&sample.x, &sample.v), step, RaySign::Plus) {
            Ok(c) => c,
            Err(_) => {
                failures.push(FoliationFailure {
                    curve_index,
                    s: f64::NAN,
                    margin: f64::NEG_INFINITY,
                });
                continue;
            }
        };
        let nu = curve.n_uniform;
        if nu < 5 {
            continue;
        }
        let vals: Vec<f64> = curve.b[..nu]
            .iter()
            .map(|x| orientation * (rho.value)(x))
            .collect();
        let h = curve.step;
        let sup_speed = curve.bdot[..nu]
            .iter()
            .map(|v| v.norm())
            .fold(0.0f64, f64::max);
        let threshold = 1e-6 * sup_grad * sup_speed;
        let deriv: Vec<f64> = (1..nu - 1)
            .map(|k| (vals[k + 1] - vals[k - 1]) / (2.0 * h))
            .collect();
        let second = |k: usize| (vals[k + 1] - 2.0 * vals[k] + vals[k - 1]) / (h * h);
        let mut record = |k: usize, margin: f64| {
            n_tangencies += 1;
            if margin < worst_margin {
                worst_margin = margin;
            }
            if margin <= 0.0 {
                failures.push(FoliationFailure {
                    curve_index,
                    s: curve.s[k],
                    margin,
                });
            }
        };
        for k in 1..nu - 1 {
            let d = deriv[k - 1];
            if d.abs() < threshold {
                record(k, second(k));
                continue;
            }
            // sign change between interior nodes
            if k + 1 < nu - 1 {
                let dn = deriv[k];
                if d < 0.0 && dn > 0.0 {
                    record(k, second(k).min(second(k + 1)));
                }
            }
        }
    }

    if n_tangencies == 0 {
        worst_margin = 0.0;
    }
    FoliationReport {
        pass: failures.is_empty(),
        degenerate: false,
        orientation_flipped: orientation < 0.0,
        n_curves,
        n_tangencies,
        worst_margin,
        failures,
    }
}

/// Hausdorff distance between two point sets (small sets only).
pub fn hausdorff_distance(a: &[Point], b: &[Point]) -> f64 {
    let one_sided = |xs: &[Point], ys: &[Point]| -> f64 {
        xs.iter()
            .map(|x| {
                ys.iter()
                    .map(|y| (x - y).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0f64, f64::max)
    };
    one_sided(a, b).max(one_sided(b, a))
}

/// Worst null defect of a direct spacetime integration at the given step.
pub fn direct_ray_defect(
    geo: &StationaryGeometry,
    sample: &InflowSample,
    step: f64,
) -> Result<f64> {
    let z0 = lift_point(0.0, &sample.x);
    let mut w0 = DVector::zeros(geo.dim_space() + 1);
    w0[0] = 1.0;
    for i in 0..geo.dim_space() {
        w0[i + 1] = sample.v[i];
    }
    let ray = integrate_null_geodesic(geo, &z0, &w0, step)?;
    Ok(ray.null_defect(geo))
}

/// Pointwise chart distance between the reduced (drift curve + lift) and the
/// direct spacetime integration of the same inflow ray.
pub fn reduced_vs_direct_discrepancy(
    geo: &StationaryGeometry,
    sample: &InflowSample,
    step: f64,
) -> Result<f64> {
    let reduced = lifted_ray_from_sample(geo, sample, 0.0, step)?;
    let z0 = lift_point(0.0, &sample.x);
    let mut w0 = DVector::zeros(geo.dim_space() + 1);
    w0[0] = 1.0;
    for i in 0..geo.dim_space() {
        w0[i + 1] = sample.v[i];
    }
    let direct = integrate_null_geodesic(geo, &z0, &w0, step)?;
    let n = reduced.n_uniform.min(direct.n_uniform);
    let mut worst = 0.0f64;
    for k in 0..n {
        worst = worst.max((&reduced.b[k] - &direct.b[k]).abs().max());
        worst = worst.max((reduced.a[k] - direct.a[k]).abs());
    }
    worst = worst.max((reduced.exit_s - direct.exit_s).abs());
    Ok(worst)
}

/// Spacetime chart of the conformal metric, shared by the transform layer.
pub fn spacetime_chart_of(geo: &StationaryGeometry) -> SpacetimeChart {
    geo.spacetime_chart(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stationary::lookup_stationary;
    use approx::assert_relative_eq;

    fn diameter_sample(man: &ChartedManifold) -> InflowSample {
        boundary_sample(man, 0.5, 0.0).expect("diameter sample")
    }

    #[test]
    fn flat_chord_is_straight() {
        let geo = lookup_stationary("minkowski").unwrap();
        let man = geo.conformal_manifold();
        let sample = diameter_sample(&man);
        assert_relative_eq!(sample.x[0], -1.0, epsilon = 1e-12);
        let curve =
            integrate_drift_curve(&geo, (&sample.x, &sample.v), 0.002, RaySign::Plus).unwrap();
        let mid_k = curve.n_uniform / 2;
        assert!(curve.b[mid_k].norm() < 2e-3 + 1e-9);
        assert_relative_eq!(curve.exit_s, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn exit_time_of_center_pointing_samples() {
        let geo = lookup_stationary("minkowski").unwrap();
        let man = geo.conformal_manifold();
        for s in sample_inflow(&man, 4, 1) {
            let tau = exit_time(&man, &s, 0.002).unwrap();
            assert_relative_eq!(tau, 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn inflow_samples_are_inward_unit() {
        let geo = lookup_stationary("rotation(0.1)").unwrap();
        let man = geo.conformal_manifold();
        let samples = sample_inflow(&man, 8, 6);
        assert_eq!(samples.len(), 48);
        for s in &samples {
            assert_relative_eq!(man.norm(&s.x, &s.v), 1.0, epsilon = 1e-12);
            let nu = man.outward_normal(&s.x);
            assert!(man.inner(&s.x, &s.v, &nu) < 0.0);
        }
    }

    #[test]
    fn four_point_normal_fan_points_to_center() {
        let geo = lookup_stationary("minkowski").unwrap();
        let man = geo.conformal_manifold();
        let samples = sample_inflow(&man, 4, 1);
        let expected_angles = [0.0, 0.5, 1.0, 1.5].map(|t| t * std::f64::consts::PI);
        for (s, theta) in samples.iter().zip(expected_angles) {
            assert_relative_eq!(s.boundary_param, theta, epsilon = 1e-12);
            let towards_center = -&s.x;
            assert!((s.v.normalize() - towards_center.normalize()).norm() < 1e-12);
        }
    }

    #[test]
    fn lift_on_minkowski_is_unit_rate() {
        let geo = lookup_stationary("minkowski").unwrap();
        let man = geo.conformal_manifold();
        let sample = diameter_sample(&man);
        let curve =
            integrate_drift_curve(&geo, (&sample.x, &sample.v), 0.002, RaySign::Plus).unwrap();
        let ray = lift_ray(&geo, &curve, 0.5, RaySign::Plus);
        for k in 0..ray.len() {
            assert_relative_eq!(ray.a[k], 0.5 + ray.s[k], epsilon = 1e-10);
        }
        let (lo, hi) = ray.time_range();
        assert_relative_eq!(hi - lo, 2.0, epsilon = 1e-9);
        assert!(ray.null_defect(&geo) < 1e-12);
    }

    #[test]
    fn geodesic_matches_drift_curve_for_conformal_static() {
        // eta = 0 but curved g_c: the drift curve must coincide with the
        // plain geodesic of g_c
        let geo = lookup_stationary("conformal-minkowski(0.4)").unwrap();
        let man = geo.conformal_manifold();
        let sample = boundary_sample(&man, 0.15, 0.4).unwrap();
        let step = 0.002;
        let a = integrate_drift_curve(&geo, (&sample.x, &sample.v), step, RaySign::Plus).unwrap();
        let b = integrate_geodesic(&man, (&sample.x, &sample.v), step).unwrap();
        let n = a.n_uniform.min(b.n_uniform);
        let mut worst = 0.0f64;
        for k in 0..n {
            worst = worst.max((&a.b[k] - &b.b[k]).abs().max());
        }
        assert!(worst < 1e-8, "worst={worst}");
    }

    #[test]
    fn reduced_matches_direct_on_all_geometries() {
        for id in crate::stationary::registered_geometry_ids() {
            let geo = lookup_stationary(id).unwrap();
            let man = geo.conformal_manifold();
            let sample = boundary_sample(&man, 0.23, -0.5).unwrap();
            let worst = reduced_vs_direct_discrepancy(&geo, &sample, 0.002).unwrap();
            assert!(worst < 1e-6, "{id}: worst={worst}");
        }
    }

    #[test]
    fn time_translation_of_direct_rays() {
        let geo = lookup_stationary("rotation(0.1)").unwrap();
        let man = geo.conformal_manifold();
        let sample = boundary_sample(&man, 0.4, 0.3).unwrap();
        let z0 = lift_point(0.0, &sample.x);
        let mut w0 = DVector::zeros(3);
        w0[0] = 1.0;
        w0[1] = sample.v[0];
        w0[2] = sample.v[1];
        let base = integrate_null_geodesic(&geo, &z0, &w0, 0.002).unwrap();
        let shifted_start = lift_point(0.7, &sample.x);
        let shifted = integrate_null_geodesic(&geo, &shifted_start, &w0, 0.002).unwrap();
        let n = base.n_uniform.min(shifted.n_uniform);
        for k in (0..n).step_by(50) {
            assert_relative_eq!(shifted.a[k], base.a[k] + 0.7, epsilon = 1e-9);
            assert!((&shifted.b[k] - &base.b[k]).abs().max() < 1e-9);
        }
    }

    #[test]
    fn null_defect_order_check() {
        let geo = lookup_stationary("rotation(0.1)").unwrap();
        let man = geo.conformal_manifold();
        let sample = boundary_sample(&man, 0.31, 0.6).unwrap();
        let d1 = direct_ray_defect(&geo, &sample, 0.02).unwrap();
        let d2 = direct_ray_defect(&geo, &sample, 0.01).unwrap();
        assert!(d1 / d2 >= 8.0, "d1={d1} d2={d2} ratio={}", d1 / d2);
        let d = direct_ray_defect(&geo, &sample, 0.002).unwrap();
        assert!(d < 1e-8, "d={d}");
    }

    #[test]
    fn sign_reversal_traces_same_chord() {
        let geo = lookup_stationary("rotation(0.15)").unwrap();
        let man = geo.conformal_manifold();
        let sample = boundary_sample(&man, 0.1, 0.35).unwrap();
        let fwd =
            integrate_drift_curve(&geo, (&sample.x, &sample.v), 0.002, RaySign::Plus).unwrap();
        // negative branch from the exit state with reversed velocity
        let exit_b = fwd.b.last().unwrap().clone();
        let exit_v = -fwd.bdot.last().unwrap().clone();
        // nudge inside so the start is not flagged as an immediate exit
        let start = &exit_b + 1e-9 * &exit_v;
        let bwd = integrate_drift_curve(&geo, (&start, &exit_v), 0.002, RaySign::Minus).unwrap();
        let a_pts: Vec<Point> = fwd.b.iter().step_by(25).cloned().collect();
        let b_pts: Vec<Point> = bwd.b.iter().step_by(25).cloned().collect();
        let d = hausdorff_distance(&a_pts, &b_pts);
        assert!(d < 5e-2, "hausdorff={d}");
        assert!((bwd.b.last().unwrap() - &fwd.b[0]).norm() < 1e-6);
    }

    #[test]
    fn foliation_passes_on_flat_disc() {
        let geo = lookup_stationary("minkowski").unwrap();
        let rho = SmoothScalar::one_minus_r2();
        let report = foliation_check(&geo, &rho, 40, 7, 0.002);
        assert!(report.pass, "{report:?}");
        assert!(report.orientation_flipped);
        assert!(report.n_tangencies > 0);
        assert!(report.worst_margin > 0.0);
    }

    #[test]
    fn foliation_passes_on_small_rotation() {
        let geo = lookup_stationary("rotation(0.05)").unwrap();
        let rho = SmoothScalar::one_minus_r2();
        let report = foliation_check(&geo, &rho, 40, 11, 0.002);
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn foliation_degenerate_input_reported() {
        let geo = lookup_stationary("minkowski").unwrap();
        let rho = SmoothScalar::constant(0.3, 2);
        let report = foliation_check(&geo, &rho, 10, 3, 0.002);
        assert!(report.degenerate);
        assert!(!report.pass);
    }

    #[test]
    fn trapped_ray_reported() {
        let geo = lookup_stationary("minkowski").unwrap();
        let man = geo.conformal_manifold();
        let sample = diameter_sample(&man);
        // straight-line flow with an absurdly small step exhausts the budget
        let res = integrate_until_exit(
            &|y: &DVector<f64>| {
                let (_, v) = unpack_state(y);
                let mut dy = DVector::zeros(4);
                dy[0] = v[0];
                dy[1] = v[1];
                dy
            },
            &|y: &DVector<f64>| unpack_state(y).0,
            pack_state(&sample.x, &sample.v),
            1e-9,
            &|x: &Point| man.boundary_defining(x),
            1000,
        );
        assert!(matches!(res, Err(CoreError::TrappedRay(_))));
    }
}
