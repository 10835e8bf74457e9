//! Smooth compactly supported test fields with analytic derivatives.
//!
//! Everything downstream (gauge potentials, phantoms, random suite inputs)
//! is built from radial bumps `psi(u) = exp(1 - 1/(1 - u^2))` so that
//! derivatives are exact and supports are genuinely compact.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Point, SymTensorField};
use crate::tensor::{sym_index_basis, DenseTensor};

/// `psi(u) = exp(1 - 1/(1-u^2))` for |u| < 1, zero outside.
pub fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

/// Derivative of [`bump`].
pub fn bump_deriv(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let d = 1.0 - u * u;
        bump(u) * (-2.0 * u / (d * d))
    }
}

/// Radial bump in any dimension: `a * psi(|x - c| / r)`.
#[derive(Debug, Clone)]
pub struct RadialBump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub amplitude: f64,
}

impl RadialBump {
    pub fn value(&self, x: &[f64]) -> f64 {
        let u2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            / (self.radius * self.radius);
        if u2 >= 1.0 {
            return 0.0;
        }
        self.amplitude * (1.0 - 1.0 / (1.0 - u2)).exp()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r2 = self.radius * self.radius;
        let u2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            / r2;
        if u2 >= 1.0 {
            return vec![0.0; x.len()];
        }
        let v = self.amplitude * (1.0 - 1.0 / (1.0 - u2)).exp();
        let d = 1.0 - u2;
        // d/dx_k of u2 = 2 (x_k - c_k) / r^2
        x.iter()
            .zip(&self.center)
            .map(|(a, c)| v * (-1.0 / (d * d)) * 2.0 * (a - c) / r2)
            .collect()
    }
}

/// Sum of radial bumps: a smooth compactly supported scalar.
#[derive(Debug, Clone, Default)]
pub struct BumpSum {
    pub bumps: Vec<RadialBump>,
}

impl BumpSum {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.bumps.iter().map(|b| b.value(x)).sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for b in &self.bumps {
            for (gi, bi) in g.iter_mut().zip(b.gradient(x)) {
                *gi += bi;
            }
        }
        g
    }

    /// Random sum of bumps supported in the ball of `support_radius` around 0.
    pub fn random(dim: usize, support_radius: f64, n_bumps: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut bumps = Vec::with_capacity(n_bumps);
        for _ in 0..n_bumps {
            let radius = rng.gen_range(0.25..0.6) * support_radius;
            let max_center = support_radius - radius;
            let center: Vec<f64> = (0..dim)
                .map(|_| rng.gen_range(-1.0..1.0) * max_center / (dim as f64).sqrt())
                .collect();
            let amplitude = rng.gen_range(0.4..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            bumps.push(RadialBump {
                center,
                radius,
                amplitude,
            });
        }
        Self { bumps }
    }
}

/// Random symmetric rank-m spatial field supported in `|x| < support_radius`,
/// with analytic component partials.
pub fn random_spatial_field(
    rank: usize,
    n_bumps: usize,
    support_radius: f64,
    seed: u64,
) -> SymTensorField {
    let dim = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = sym_index_basis(dim, rank);
    let comps: Vec<BumpSum> = basis
        .iter()
        .map(|_| BumpSum::random(dim, support_radius, n_bumps, &mut rng))
        .collect();
    bump_components_field(dim, rank, basis, comps)
}

fn bump_components_field(
    dim: usize,
    rank: usize,
    basis: Vec<Vec<usize>>,
    comps: Vec<BumpSum>,
) -> SymTensorField {
    let basis2 = basis.clone();
    let comps2 = comps.clone();
    let components = Arc::new(move |x: &Point| {
        let xs: Vec<f64> = x.iter().copied().collect();
        let mut t = DenseTensor::zeros(dim, rank);
        for (bidx, c) in basis.iter().zip(&comps) {
            let v = c.value(&xs);
            // fill all permutations of the sorted index
            set_symmetric(&mut t, bidx, v);
        }
        t
    });
    let partials = Arc::new(move |x: &Point| {
        let xs: Vec<f64> = x.iter().copied().collect();
        let mut t = DenseTensor::zeros(dim, rank + 1);
        for (bidx, c) in basis2.iter().zip(&comps2) {
            let grad = c.gradient(&xs);
            for (j, gj) in grad.iter().enumerate() {
                let mut full = Vec::with_capacity(rank + 1);
                full.push(j);
                full.extend_from_slice(bidx);
                set_symmetric_tail(&mut t, &full, *gj);
            }
        }
        t
    });
    SymTensorField::new(dim, rank, components).with_partials(partials)
}

/// Set `t[idx] = v` for every permutation of `idx` (idx sorted).
fn set_symmetric(t: &mut DenseTensor, sorted_idx: &[usize], v: f64) {
    let rank = sorted_idx.len();
    if rank == 0 {
        t.data_mut()[0] = v;
        return;
    }
    for idx in DenseTensor::zeros(t.dim(), rank).indices() {
        let mut s = idx.clone();
        s.sort_unstable();
        if s == sorted_idx {
            t.set(&idx, v);
        }
    }
}

/// Like [`set_symmetric`] but the first slot (derivative direction) is fixed.
fn set_symmetric_tail(t: &mut DenseTensor, full_idx: &[usize], v: f64) {
    let rank = full_idx.len() - 1;
    let j = full_idx[0];
    let sorted_tail = {
        let mut s = full_idx[1..].to_vec();
        s.sort_unstable();
        s
    };
    if rank == 0 {
        t.set(&[j], v);
        return;
    }
    for idx in DenseTensor::zeros(t.dim(), rank).indices() {
        let mut s = idx.clone();
        s.sort_unstable();
        if s == sorted_tail {
            let mut full = Vec::with_capacity(rank + 1);
            full.push(j);
            full.extend_from_slice(&idx);
            t.set(&full, v);
        }
    }
}

/// Random compactly supported scalar as a rank-0 field.
pub fn random_scalar_bump(support_radius: f64, seed: u64) -> SymTensorField {
    random_spatial_field(0, 3, support_radius, seed)
}

/// A scalar function with analytic gradient, used for foliation profiles and
/// conformal factors.
#[derive(Clone)]
pub struct SmoothScalar {
    pub value: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
    pub gradient: Arc<dyn Fn(&Point) -> DVector<f64> + Send + Sync>,
}

impl SmoothScalar {
    pub fn constant(c: f64, dim: usize) -> Self {
        Self {
            value: Arc::new(move |_| c),
            gradient: Arc::new(move |_| DVector::zeros(dim)),
        }
    }

    /// `1 - |x|^2` on a 2d chart.
    pub fn one_minus_r2() -> Self {
        Self {
            value: Arc::new(|x: &Point| 1.0 - x.norm_squared()),
            gradient: Arc::new(|x: &Point| -2.0 * x),
        }
    }
}

// ---------------------------------------------------------------------------
// Spacetime fields
// ---------------------------------------------------------------------------

pub type SpacetimePoint = DVector<f64>;

type StTensorFn = dyn Fn(&SpacetimePoint) -> DenseTensor + Send + Sync;

/// Symmetric rank-m tensor field on the spacetime chart `(t, x)`, index 0 the
/// time direction, with compact support in time.
#[derive(Clone)]
pub struct SpacetimeTensorField {
    rank: usize,
    /// spacetime dimension n + 1
    dim: usize,
    components: Arc<StTensorFn>,
    partials: Option<Arc<StTensorFn>>,
    t_support: (f64, f64),
}

impl SpacetimeTensorField {
    pub fn new(
        dim: usize,
        rank: usize,
        components: Arc<StTensorFn>,
        t_support: (f64, f64),
    ) -> Self {
        Self {
            rank,
            dim,
            components,
            partials: None,
            t_support,
        }
    }

    pub fn with_partials(mut self, partials: Arc<StTensorFn>) -> Self {
        self.partials = Some(partials);
        self
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_support(&self) -> (f64, f64) {
        self.t_support
    }

    pub fn components(&self, z: &SpacetimePoint) -> DenseTensor {
        (self.components)(z)
    }

    pub fn eval_repeated(&self, z: &SpacetimePoint, w: &DVector<f64>) -> f64 {
        self.components(z).eval_repeated(w)
    }

    pub fn eval(&self, z: &SpacetimePoint, vectors: &[&DVector<f64>]) -> f64 {
        self.components(z).eval(vectors)
    }

    pub fn partials(&self, z: &SpacetimePoint, h: f64) -> DenseTensor {
        if let Some(p) = &self.partials {
            return p(z);
        }
        let dim = self.dim;
        let rank = self.rank;
        let mut out = DenseTensor::zeros(dim, rank + 1);
        for j in 0..dim {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let diff = self.components(&zp).sub(&self.components(&zm));
            for idx in diff.indices() {
                let mut full = Vec::with_capacity(rank + 1);
                full.push(j);
                full.extend_from_slice(&idx);
                out.set(&full, diff.get(&idx) / (2.0 * h));
            }
        }
        out
    }

    /// Scale every component by a constant.
    pub fn scaled(&self, a: f64) -> Self {
        let comps = self.components.clone();
        let partials = self.partials.clone();
        Self {
            rank: self.rank,
            dim: self.dim,
            components: Arc::new(move |z: &SpacetimePoint| comps(z).scale(a)),
            partials: partials
                .map(|p| Arc::new(move |z: &SpacetimePoint| p(z).scale(a)) as Arc<StTensorFn>),
            t_support: self.t_support,
        }
    }

    /// Pointwise sum of two fields of equal rank.
    pub fn sum(&self, other: &Self) -> Self {
        assert_eq!(self.rank, other.rank);
        assert_eq!(self.dim, other.dim);
        let a = self.components.clone();
        let b = other.components.clone();
        let t_support = (
            self.t_support.0.min(other.t_support.0),
            self.t_support.1.max(other.t_support.1),
        );
        let partials = match (&self.partials, &other.partials) {
            (Some(pa), Some(pb)) => {
                let pa = pa.clone();
                let pb = pb.clone();
                Some(Arc::new(move |z: &SpacetimePoint| pa(z).add(&pb(z))) as Arc<StTensorFn>)
            }
            _ => None,
        };
        Self {
            rank: self.rank,
            dim: self.dim,
            components: Arc::new(move |z: &SpacetimePoint| a(z).add(&b(z))),
            partials,
            t_support,
        }
    }

    /// Time-shifted copy: `alpha_T(t, x) = alpha(t - shift, x)`.
    pub fn time_shifted(&self, shift: f64) -> Self {
        let comps = self.components.clone();
        let partials = self.partials.clone();
        Self {
            rank: self.rank,
            dim: self.dim,
            components: Arc::new(move |z: &SpacetimePoint| {
                let mut w = z.clone();
                w[0] -= shift;
                comps(&w)
            }),
            partials: partials.map(|p| {
                Arc::new(move |z: &SpacetimePoint| {
                    let mut w = z.clone();
                    w[0] -= shift;
                    p(&w)
                }) as Arc<StTensorFn>
            }),
            t_support: (self.t_support.0 + shift, self.t_support.1 + shift),
        }
    }
}

/// Spacetime bump: product of a time bump and a spatial radial bump, with
/// analytic spacetime gradient.
#[derive(Debug, Clone)]
pub struct SpacetimeBump {
    pub t_center: f64,
    pub t_radius: f64,
    pub space: RadialBump,
}

impl SpacetimeBump {
    pub fn value(&self, z: &[f64]) -> f64 {
        let u = (z[0] - self.t_center) / self.t_radius;
        bump(u) * self.space.value(&z[1..])
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let u = (z[0] - self.t_center) / self.t_radius;
        let tb = bump(u);
        let tg = bump_deriv(u) / self.t_radius;
        let sv = self.space.value(&z[1..]);
        let sg = self.space.gradient(&z[1..]);
        let mut out = Vec::with_capacity(z.len());
        out.push(tg * sv);
        for g in sg {
            out.push(tb * g);
        }
        out
    }
}

/// Sum of spacetime bumps.
#[derive(Debug, Clone, Default)]
pub struct SpacetimeBumpSum {
    pub bumps: Vec<SpacetimeBump>,
}

impl SpacetimeBumpSum {
    pub fn value(&self, z: &[f64]) -> f64 {
        self.bumps.iter().map(|b| b.value(z)).sum()
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; z.len()];
        for b in &self.bumps {
            for (gi, bi) in g.iter_mut().zip(b.gradient(z)) {
                *gi += bi;
            }
        }
        g
    }

    pub fn random(
        dim_space: usize,
        t_window: (f64, f64),
        support_radius: f64,
        n_bumps: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut bumps = Vec::with_capacity(n_bumps);
        let t_mid = 0.5 * (t_window.0 + t_window.1);
        let t_half = 0.5 * (t_window.1 - t_window.0);
        for _ in 0..n_bumps {
            let t_radius = rng.gen_range(0.3..0.7) * t_half;
            let t_center = t_mid + rng.gen_range(-1.0..1.0) * (t_half - t_radius);
            let radius = rng.gen_range(0.25..0.55) * support_radius;
            let max_center = support_radius - radius;
            let center: Vec<f64> = (0..dim_space)
                .map(|_| rng.gen_range(-1.0..1.0) * max_center / (dim_space as f64).sqrt())
                .collect();
            let amplitude = rng.gen_range(0.4..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            bumps.push(SpacetimeBump {
                t_center,
                t_radius,
                space: RadialBump {
                    center,
                    radius,
                    amplitude,
                },
            });
        }
        Self { bumps }
    }
}

/// Random symmetric rank-m spacetime field: each independent component an
/// independent bump sum, compactly supported in `|x| < support_radius` and
/// `t` in the window.
pub fn random_spacetime_field(
    dim_space: usize,
    rank: usize,
    t_window: (f64, f64),
    support_radius: f64,
    n_bumps: usize,
    seed: u64,
) -> SpacetimeTensorField {
    let dim = dim_space + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = sym_index_basis(dim, rank);
    let comps: Vec<SpacetimeBumpSum> = basis
        .iter()
        .map(|_| SpacetimeBumpSum::random(dim_space, t_window, support_radius, n_bumps, &mut rng))
        .collect();
    let basis2 = basis.clone();
    let comps2 = comps.clone();
    let components = Arc::new(move |z: &SpacetimePoint| {
        let zs: Vec<f64> = z.iter().copied().collect();
        let mut t = DenseTensor::zeros(dim, rank);
        for (bidx, c) in basis.iter().zip(&comps) {
            set_symmetric(&mut t, bidx, c.value(&zs));
        }
        t
    });
    let partials = Arc::new(move |z: &SpacetimePoint| {
        let zs: Vec<f64> = z.iter().copied().collect();
        let mut t = DenseTensor::zeros(dim, rank + 1);
        for (bidx, c) in basis2.iter().zip(&comps2) {
            let grad = c.gradient(&zs);
            for (j, gj) in grad.iter().enumerate() {
                let mut full = Vec::with_capacity(rank + 1);
                full.push(j);
                full.extend_from_slice(bidx);
                set_symmetric_tail(&mut t, &full, *gj);
            }
        }
        t
    });
    SpacetimeTensorField::new(dim, rank, components, t_window).with_partials(partials)
}

/// Scalar spacetime field from closures (rank 0).
pub fn spacetime_scalar(
    dim_space: usize,
    value: Arc<dyn Fn(&SpacetimePoint) -> f64 + Send + Sync>,
    gradient: Arc<dyn Fn(&SpacetimePoint) -> DVector<f64> + Send + Sync>,
    t_support: (f64, f64),
) -> SpacetimeTensorField {
    let dim = dim_space + 1;
    let v = value.clone();
    let components = Arc::new(move |z: &SpacetimePoint| DenseTensor::scalar_dim(dim, v(z)));
    let partials = Arc::new(move |z: &SpacetimePoint| {
        let g = gradient(z);
        DenseTensor::from_fn(dim, 1, |idx| g[idx[0]])
    });
    SpacetimeTensorField::new(dim, 0, components, t_support).with_partials(partials)
}

/// Space-time Gaussian phantom: `A exp(-|x-c|^2 / 2 sx^2) exp(-(t-tc)^2 / 2 st^2)`,
/// multiplied by a smooth time window so the support is genuinely compact.
/// The window sits at 4 standard deviations and changes values by < 1e-7
/// relative.
#[derive(Debug, Clone)]
pub struct GaussianPhantom {
    pub center: Vec<f64>,
    pub sigma_x: f64,
    pub t_center: f64,
    pub sigma_t: f64,
    pub amplitude: f64,
}

impl GaussianPhantom {
    pub fn window_halfwidth(&self) -> f64 {
        4.0 * self.sigma_t
    }

    pub fn t_support(&self) -> (f64, f64) {
        (
            self.t_center - self.window_halfwidth(),
            self.t_center + self.window_halfwidth(),
        )
    }

    pub fn spatial(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum();
        self.amplitude * (-r2 / (2.0 * self.sigma_x * self.sigma_x)).exp()
    }

    pub fn temporal(&self, t: f64) -> f64 {
        let w = self.window_halfwidth();
        let u = (t - self.t_center) / w;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let gauss = (-(t - self.t_center) * (t - self.t_center)
            / (2.0 * self.sigma_t * self.sigma_t))
            .exp();
        // polynomial taper that is exactly 1 in the inner half of the window
        gauss * taper(u.abs())
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.temporal(z[0]) * self.spatial(&z[1..])
    }

    pub fn as_field(&self, dim_space: usize) -> SpacetimeTensorField {
        let p = self.clone();
        let dim = dim_space + 1;
        let components = Arc::new(move |z: &SpacetimePoint| {
            let zs: Vec<f64> = z.iter().copied().collect();
            DenseTensor::scalar_dim(dim, p.value(&zs))
        });
        SpacetimeTensorField::new(dim, 0, components, self.t_support())
    }
}

/// Smooth taper: 1 for u <= 1/2, 0 at u = 1.
fn taper(u: f64) -> f64 {
    if u <= 0.5 {
        1.0
    } else if u >= 1.0 {
        0.0
    } else {
        let s = (u - 0.5) / 0.5;
        // smoothstep-like quintic
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bump_is_compact_and_smooth() {
        assert_eq!(bump(1.0), 0.0);
        assert_eq!(bump(-1.2), 0.0);
        assert_relative_eq!(bump(0.0), 1.0);
        // derivative matches finite differences
        let h = 1e-6;
        for u in [-0.7, -0.2, 0.3, 0.9] {
            let fd = (bump(u + h) - bump(u - h)) / (2.0 * h);
            assert_relative_eq!(bump_deriv(u), fd, epsilon = 1e-6, max_relative = 1e-5);
        }
    }

    #[test]
    fn random_field_is_symmetric_and_multilinear() {
        let f = random_spatial_field(2, 3, 0.8, 3);
        let x = DVector::from_vec(vec![0.1, -0.2]);
        let v = DVector::from_vec(vec![0.4, 1.0]);
        let w = DVector::from_vec(vec![-0.3, 0.8]);
        // symmetry under argument swap
        assert_relative_eq!(f.eval(&x, &[&v, &w]), f.eval(&x, &[&w, &v]), epsilon = 1e-14);
        // multilinearity: f(v + w, u) = f(v, u) + f(w, u)
        let u = DVector::from_vec(vec![1.0, 0.5]);
        let vw = &v + &w;
        assert_relative_eq!(
            f.eval(&x, &[&vw, &u]),
            f.eval(&x, &[&v, &u]) + f.eval(&x, &[&w, &u]),
            epsilon = 1e-13
        );
    }

    #[test]
    fn spacetime_field_partials_match_fd() {
        let f = random_spacetime_field(2, 2, (-1.0, 1.0), 0.8, 2, 9);
        let z = DVector::from_vec(vec![0.15, 0.1, -0.2]);
        let analytic = f.partials(&z, 0.0);
        // finite-difference cross-check
        let mut f2 = f.clone();
        f2.partials = None;
        let fd = f2.partials(&z, 1e-5);
        assert!(analytic.sub(&fd).max_abs() < 1e-6);
    }

    #[test]
    fn phantom_support_is_compact() {
        let p = GaussianPhantom {
            center: vec![0.2, 0.0],
            sigma_x: 0.25,
            t_center: 0.0,
            sigma_t: 0.5,
            amplitude: 1.0,
        };
        let (t0, t1) = p.t_support();
        assert_eq!(p.temporal(t0 - 0.01), 0.0);
        assert_eq!(p.temporal(t1 + 0.01), 0.0);
        // window does not disturb the core
        assert_relative_eq!(p.temporal(0.3), (-0.3f64 * 0.3 / (2.0 * 0.25)).exp());
    }
}
