//! Second-order SUSY transformations of `H = -d²/dr² + V(r)`.
//!
//! Confluent case: `w(r) = w0 - int_0^r u²`, `eta = u²/w`, and
//! `V_new = V + 4 u u'/w + 2 u⁴/w²`. Non-confluent case with two real
//! factorization energies: `eta = -W'/W` for the Wronskian `W(u1, u2)`.
//! Both expose the intertwiner `A = d² + eta d + gamma` with
//! `gamma = d - V + eta²/2 - eta'/2`.

use serde::Serialize;
use thiserror::Error;

use crate::numerics::{
    count_nodes, cumulative_integral, differentiate, node_indices, second_derivative,
    solve_inhomogeneous, tail_integral, Grid, NumericsError, PowerLaw, SampledFunction, Start,
};

#[derive(Debug, Error)]
pub enum SusyError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{0} must carry its first derivative")]
    MissingDerivative(&'static str),
    #[error("singular transform: {what} has interior nodes near r = {nodes:?}")]
    Singular { what: &'static str, nodes: Vec<f64> },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("degenerate factorization energies: {0}")]
    Degenerate(String),
}

pub type SusyResult<T> = Result<T, SusyError>;

/// Samples whose denominator falls below this fraction of its scale are
/// flagged singular.
pub const SINGULAR_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    VanishesAtOrigin,
    VanishesAtInfinity,
    BoundState,
}

/// A solution of `-u'' + V u = eps u` with its derivative.
#[derive(Debug, Clone)]
pub struct SeedSolution {
    pub eps: f64,
    pub u: SampledFunction,
    pub boundary: BoundaryTag,
    /// `p` in `u ~ r^p` near the origin, used to close `int_0^{r_min} u²`.
    pub origin_exponent: Option<f64>,
    /// `int_0^inf u²` when known exactly.
    pub norm_sq: Option<f64>,
    /// `int_{r_max}^inf u²` when known; otherwise estimated from `u'/u` at `r_max`.
    pub tail_sq: Option<f64>,
}

impl SeedSolution {
    pub fn new(eps: f64, u: SampledFunction, boundary: BoundaryTag) -> SusyResult<Self> {
        if u.deriv.is_none() {
            return Err(SusyError::MissingDerivative("seed u"));
        }
        Ok(Self {
            eps,
            u,
            boundary,
            origin_exponent: None,
            norm_sq: None,
            tail_sq: None,
        })
    }

    pub fn with_origin_exponent(mut self, p: f64) -> Self {
        self.origin_exponent = Some(p);
        self
    }

    pub fn with_norm_sq(mut self, n: f64) -> Self {
        self.norm_sq = Some(n);
        self
    }

    pub fn with_tail_sq(mut self, t: f64) -> Self {
        self.tail_sq = Some(t);
        self
    }

    pub fn grid(&self) -> Grid {
        self.u.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.u.values
    }

    pub fn deriv(&self) -> &[f64] {
        self.u.deriv.as_deref().expect("checked at construction")
    }

    pub fn is_zero(&self) -> bool {
        self.u.values.iter().all(|&x| x == 0.0)
    }

    /// `max |-u'' + (V - eps) u| / max |u|` over interior points, with `u''`
    /// from differentiating the stored `u'`.
    pub fn schrodinger_residual(&self, v: &SampledFunction) -> SusyResult<f64> {
        self.u.same_grid(v)?;
        let du = SampledFunction::new(self.grid(), self.deriv().to_vec())?;
        let d2 = differentiate(&du);
        let scale = self.u.max_abs();
        if scale == 0.0 {
            return Ok(0.0);
        }
        let n = self.u.len();
        let worst = (2..n - 2)
            .map(|i| (-d2.values[i] + (v.values[i] - self.eps) * self.u.values[i]).abs())
            .fold(0.0, f64::max);
        Ok(worst / scale)
    }

    fn closure(&self) -> Option<PowerLaw> {
        let u = &self.u.values;
        let g = self.grid();
        if u[0] == 0.0 {
            return Some(PowerLaw {
                coeff: 0.0,
                power: 0.0,
            });
        }
        let p = self
            .origin_exponent
            .unwrap_or_else(|| (u[1] / u[0]).abs().ln() / (g.r(1) / g.r(0)).ln());
        Some(PowerLaw::through(g.r_min(), u[0] * u[0], 2.0 * p))
    }

    /// `int_{r_max}^inf u²`: the stored value, or `u²/(-2 u'/u)` at `r_max`.
    fn tail_beyond(&self) -> f64 {
        if let Some(t) = self.tail_sq {
            return t;
        }
        let n = self.u.len();
        let (u, du) = (self.u.values[n - 1], self.deriv()[n - 1]);
        if u == 0.0 {
            return 0.0;
        }
        let beta = du / u;
        if beta < 0.0 {
            u * u / (-2.0 * beta)
        } else {
            0.0
        }
    }
}

/// `beta = u'/u`; samples with `|u| < 1e-12 max|u|` are flagged singular.
pub fn riccati_beta(u: &SeedSolution) -> SampledFunction {
    let scale = u.u.max_abs();
    let mut singular = vec![false; u.u.len()];
    let values = u
        .values()
        .iter()
        .zip(u.deriv())
        .zip(singular.iter_mut())
        .map(|((&y, &dy), s)| {
            if y.abs() < SINGULAR_REL * scale || y == 0.0 {
                *s = true;
                0.0
            } else {
                dy / y
            }
        })
        .collect();
    SampledFunction {
        grid: u.grid(),
        values,
        deriv: None,
        singular: Some(singular),
    }
}

/// `w(r) = w0 - int_0^r u²`, with `w' = -u²` stored as the derivative.
///
/// For bound-state seeds the decaying region is evaluated as
/// `w0 - int_0^inf u² + int_r^inf u²`, which keeps full relative accuracy
/// where `w` itself becomes small (`w0` at the norm).
pub fn confluent_w(u: &SeedSolution, w0: f64) -> SusyResult<SampledFunction> {
    let sq = u.u.map(|x| x * x);
    let head = cumulative_integral(&sq, u.closure())?;
    let mut values: Vec<f64> = head.values.iter().map(|i| w0 - i).collect();
    if u.boundary == BoundaryTag::BoundState {
        let tail = tail_integral(&sq, u.tail_beyond())?;
        let total = u
            .norm_sq
            .unwrap_or(head.values[head.len() - 1] + tail.values[tail.len() - 1]);
        for ((w, &i), &t) in values.iter_mut().zip(&head.values).zip(&tail.values) {
            if t < i {
                *w = w0 - total + t;
            }
        }
    }
    let deriv = sq.values.iter().map(|x| -x).collect();
    Ok(SampledFunction::with_deriv(u.grid(), values, deriv)?)
}

/// `int_0^inf u²` if the seed decays, `None` otherwise.
fn full_integral(u: &SeedSolution) -> SusyResult<Option<f64>> {
    if u.boundary != BoundaryTag::BoundState {
        return Ok(None);
    }
    if let Some(n) = u.norm_sq {
        return Ok(Some(n));
    }
    let sq = u.u.map(|x| x * x);
    let head = cumulative_integral(&sq, u.closure())?;
    Ok(Some(head.values[head.len() - 1] + u.tail_beyond()))
}

/// Zero of `w` at a grid end, which deletes the level at `eps` instead of
/// producing a singular potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointZero {
    Origin,
    Infinity,
}

/// Common interface of the two transformations, as used by [`apply_a`].
pub trait Intertwiner {
    fn potential(&self) -> &SampledFunction;
    fn new_potential(&self) -> &SampledFunction;
    fn eta(&self) -> &SampledFunction;
    /// `eta'` from closed expressions in `u`, `u'` (no numerical differentiation).
    fn eta_prime(&self) -> &SampledFunction;
    /// Mean factorization energy `d`.
    fn mean_energy(&self) -> f64;
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    /// max |eta' - eta² - 2 beta eta| for r >= [`RESIDUAL_R_MIN`], eta' numerical.
    pub bernoulli_residual: f64,
    /// max |W(u,v) - w - C| relative to max(1, max|w - w0|).
    pub wronskian_residual: f64,
    /// Interior nodes of w.
    pub nodes: usize,
    pub singular_fraction: f64,
    pub endpoint_zero: Option<EndpointZero>,
}

/// Residuals built from numerical derivatives skip `r` below this value,
/// where derivatives of `1/r`-type terms are dominated by truncation error.
pub const RESIDUAL_R_MIN: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct ConfluentTransform {
    pub eps: f64,
    pub w0: f64,
    pub v: SampledFunction,
    pub seed: SeedSolution,
    pub w: SampledFunction,
    pub eta: SampledFunction,
    pub eta_prime: SampledFunction,
    pub v_new: SampledFunction,
    pub endpoint_zero: Option<EndpointZero>,
    /// `int_0^inf u²` for decaying seeds.
    pub full_integral: Option<f64>,
}

/// Confluent partner of `V` from the seed `u` and constant `w0`, computing `w`
/// by quadrature.
pub fn confluent_partner(
    v: &SampledFunction,
    u: &SeedSolution,
    w0: f64,
) -> SusyResult<ConfluentTransform> {
    let w = confluent_w(u, w0)?;
    ConfluentTransform::from_parts(v, u, w0, w)
}

impl ConfluentTransform {
    /// Assembles the transform for a given `w` (any route), rejecting `w` with
    /// interior nodes.
    pub fn from_parts(
        v: &SampledFunction,
        u: &SeedSolution,
        w0: f64,
        w: SampledFunction,
    ) -> SusyResult<Self> {
        v.same_grid(&u.u)?;
        v.same_grid(&w)?;
        let nodes = node_indices(&w, true);
        if !nodes.is_empty() {
            let g = w.grid;
            return Err(SusyError::Singular {
                what: "w",
                nodes: nodes.iter().map(|&i| 0.5 * (g.r(i) + g.r(i + 1))).collect(),
            });
        }
        let total = full_integral(u)?;
        let scale = match total {
            Some(t) => (w0 - t).abs(),
            None => w0.abs(),
        };
        let endpoint_zero = if u.is_zero() {
            None
        } else if w0 == 0.0 {
            Some(EndpointZero::Origin)
        } else if total.is_some_and(|t| (w0 - t).abs() <= 1e-9 * t.abs().max(1.0)) {
            Some(EndpointZero::Infinity)
        } else {
            None
        };

        let n = v.len();
        let (uu, du) = (u.values(), u.deriv());
        let mut singular = vec![false; n];
        let mut eta = vec![0.0; n];
        let mut eta_p = vec![0.0; n];
        let mut v_new = vec![0.0; n];
        for i in 0..n {
            let wi = w.values[i];
            let (ui, dui) = (uu[i], du[i]);
            if ui == 0.0 {
                v_new[i] = v.values[i];
                continue;
            }
            if wi == 0.0 || wi.abs() < SINGULAR_REL * scale || !wi.is_finite() {
                singular[i] = true;
                v_new[i] = f64::NAN;
                continue;
            }
            let q = ui * ui / wi;
            eta[i] = q;
            eta_p[i] = 2.0 * ui * dui / wi + q * q;
            v_new[i] = v.values[i] + 4.0 * ui * dui / wi + 2.0 * q * q;
        }
        let mk = |values: Vec<f64>| SampledFunction {
            grid: v.grid,
            values,
            deriv: None,
            singular: Some(singular.clone()),
        };
        Ok(Self {
            eps: u.eps,
            w0,
            v: v.clone(),
            seed: u.clone(),
            w,
            eta: mk(eta),
            eta_prime: mk(eta_p),
            v_new: mk(v_new),
            endpoint_zero,
            full_integral: total,
        })
    }

    pub fn grid(&self) -> Grid {
        self.v.grid
    }

    /// `V + 2 eta'` with `eta'` by numerical differentiation.
    pub fn v_new_derivative_route(&self) -> SampledFunction {
        let d = differentiate(&self.eta);
        self.v.zip_with(&d, |v, e| v + 2.0 * e).expect("same grid")
    }

    /// max |eta'_numerical - eta² - 2 u u'/w| for `r >= RESIDUAL_R_MIN`.
    pub fn bernoulli_residual(&self) -> f64 {
        let d = differentiate(&self.eta);
        let n = self.v.len();
        let g = self.grid();
        let (u, du) = (self.seed.values(), self.seed.deriv());
        (2..n - 2)
            .filter(|&i| g.r(i) >= RESIDUAL_R_MIN && !self.is_singular_near(i))
            .map(|i| {
                let e = self.eta.values[i];
                let rhs = e * e + 2.0 * u[i] * du[i] / self.w.values[i];
                (d.values[i] - rhs).abs()
            })
            .fold(0.0, f64::max)
    }

    fn is_singular_near(&self, i: usize) -> bool {
        (i.saturating_sub(2)..=(i + 2).min(self.v.len() - 1)).any(|j| self.eta.is_singular(j))
    }

    /// Normalized eigenfunction of `H_new` at `eps`, if it exists.
    pub fn missing_state(&self) -> MissingState {
        missing_state(self)
    }

    pub fn diagnostics(&self) -> SusyResult<Diagnostics> {
        let v = generalized_eigenfunction(&self.v, &self.seed, &self.w, 0.0)?;
        let report = verify_wronskian_formula(&self.seed, &v, &self.w)?;
        Ok(Diagnostics {
            bernoulli_residual: self.bernoulli_residual(),
            wronskian_residual: report.relative_residual,
            nodes: count_nodes(&self.w, true),
            singular_fraction: self.eta.singular_fraction(),
            endpoint_zero: self.endpoint_zero,
        })
    }

    /// JSON record `{eps, w0, grid, u, w, V_new, diagnostics}`.
    pub fn to_json(&self, diagnostics: &Diagnostics) -> serde_json::Value {
        serde_json::json!({
            "eps": self.eps,
            "w0": self.w0,
            "grid": self.grid(),
            "u": self.seed.values(),
            "w": self.w.values,
            "V_new": self.v_new.values.iter().map(|x| x.is_finite().then_some(*x)).collect::<Vec<_>>(),
            "diagnostics": diagnostics,
        })
    }
}

impl Intertwiner for ConfluentTransform {
    fn potential(&self) -> &SampledFunction {
        &self.v
    }
    fn new_potential(&self) -> &SampledFunction {
        &self.v_new
    }
    fn eta(&self) -> &SampledFunction {
        &self.eta
    }
    fn eta_prime(&self) -> &SampledFunction {
        &self.eta_prime
    }
    fn mean_energy(&self) -> f64 {
        self.eps
    }
}

/// `v` with `(H - eps) v = u`, from the inhomogeneous Numerov recurrence with
/// `v(r_min) = v'(r_min) = 0`, plus `k u`.
///
/// `w` is not needed by this route; it is accepted so the signature matches
/// the quadrature form `v = u (k + int w/u²)`, see [`generalized_eigenfunction_quadrature`].
pub fn generalized_eigenfunction(
    v: &SampledFunction,
    u: &SeedSolution,
    w: &SampledFunction,
    k: f64,
) -> SusyResult<SampledFunction> {
    v.same_grid(w)?;
    let sol = solve_inhomogeneous(v, u.eps, &u.u, Start::ValueSlope(0.0, 0.0))?;
    let scale = sol.log_scale.exp();
    let values = sol
        .u
        .values
        .iter()
        .zip(u.values())
        .map(|(y, x)| y * scale + k * x)
        .collect();
    Ok(SampledFunction::new(v.grid, values)?)
}

/// `v = u (c + int_{r_a}^r (w + offset)/u²)` on the index range `[a, b]`,
/// with `c` chosen so that `v(r_a) = v_a`. Requires `u` node-free on the range.
pub fn generalized_eigenfunction_quadrature(
    u: &SeedSolution,
    w: &SampledFunction,
    offset: f64,
    range: (usize, usize),
    v_a: f64,
) -> SusyResult<Vec<f64>> {
    let (a, b) = range;
    let uu = &u.values()[a..=b];
    if uu.contains(&0.0) || uu.windows(2).any(|p| (p[0] > 0.0) != (p[1] > 0.0)) {
        return Err(SusyError::Unsupported(
            "quadrature route needs a node-free interval".into(),
        ));
    }
    let len = b - a + 1;
    let g = u.grid();
    let sub = Grid::new(g.r(a), g.r(b), len)?;
    let integrand = SampledFunction::new(
        sub,
        (a..=b)
            .map(|i| (w.values[i] + offset) / (u.values()[i] * u.values()[i]))
            .collect(),
    )?;
    let running = cumulative_integral(&integrand, None)?;
    let c = v_a / uu[0];
    Ok(uu
        .iter()
        .zip(&running.values)
        .map(|(x, i)| x * (c + i))
        .collect())
}

/// Pointwise `f g' - g f'`, using stored derivatives when present.
pub fn wronskian_of(f: &SampledFunction, g: &SampledFunction) -> SusyResult<SampledFunction> {
    f.same_grid(g)?;
    let df = f.derivative_values();
    let dg = g.derivative_values();
    let values = (0..f.len())
        .map(|i| f.values[i] * dg[i] - g.values[i] * df[i])
        .collect();
    Ok(SampledFunction::new(f.grid, values)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WronskianReport {
    /// Median of `W(u,v) - w`.
    pub const_offset: f64,
    /// max |W(u,v) - w - const_offset|.
    pub max_residual: f64,
    /// max |d/dr W(u,v) + u²|, derivative by finite differences.
    pub derivative_residual: f64,
    /// max(1, max|w - w(r_min)|): the size of the integral term.
    pub scale: f64,
    pub relative_residual: f64,
    pub relative_derivative_residual: f64,
}

/// Checks `w = W(u, v)` up to a constant, and `W(u,v)' = -u²`.
pub fn verify_wronskian_formula(
    u: &SeedSolution,
    v: &SampledFunction,
    w: &SampledFunction,
) -> SusyResult<WronskianReport> {
    u.u.same_grid(v)?;
    u.u.same_grid(w)?;
    let wr = wronskian_of(&u.u, v)?;
    let d: Vec<f64> = wr.values.iter().zip(&w.values).map(|(a, b)| a - b).collect();
    let residual_from = |c: f64, d: &[f64]| d.iter().map(|x| (x - c).abs()).fold(0.0, f64::max);
    let mut sorted = d.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let const_offset = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    let max_residual = residual_from(const_offset, &d);
    let dw = differentiate(&wr);
    let derivative_residual = dw
        .values
        .iter()
        .zip(u.values())
        .map(|(a, x)| (a + x * x).abs())
        .fold(0.0, f64::max);
    let w_start = w.values[0];
    let scale = w
        .values
        .iter()
        .map(|x| (x - w_start).abs())
        .fold(1.0, f64::max);
    Ok(WronskianReport {
        const_offset,
        max_residual,
        derivative_residual,
        scale,
        relative_residual: max_residual / scale,
        relative_derivative_residual: derivative_residual / scale,
    })
}

#[derive(Debug, Clone)]
pub struct MissingState {
    /// `u/w`, unit-normalized when `normalizable`.
    pub psi: SampledFunction,
    /// L² norm of `u/w` on the grid before normalization.
    pub norm: f64,
    pub normalizable: bool,
    /// Share of `int (u/w)²` carried by the outer tenth of the grid.
    pub tail_fraction: f64,
    /// Local power `q` in `u/w ~ r^q` at the first samples.
    pub origin_power: f64,
}

/// `psi = u/w`, normalized when square-integrable on the semi-axis.
///
/// Square integrability is judged from the origin power (`q > -1/2`) and
/// from the share of the norm in the outer tenth of the grid (`< 1e-6`).
pub fn missing_state(t: &ConfluentTransform) -> MissingState {
    let g = t.grid();
    let mut psi = t.seed.u.zip_with(&t.w, |u, w| if u == 0.0 { 0.0 } else { u / w }).expect("same grid");
    psi.singular = t.eta.singular.clone();
    psi.values
        .iter_mut()
        .enumerate()
        .for_each(|(i, x)| {
            if !x.is_finite() || t.eta.is_singular(i) {
                *x = 0.0;
            }
        });
    let norm = psi.l2_norm();
    if norm == 0.0 {
        return MissingState {
            psi,
            norm,
            normalizable: false,
            tail_fraction: 0.0,
            origin_power: 0.0,
        };
    }
    let sq = psi.map(|x| x * x);
    let cum = cumulative_integral(&sq, None).expect("no closure");
    let total = cum.values[cum.len() - 1];
    let cut = g.len() - g.len() / 10;
    let tail_fraction = (total - cum.values[cut]) / total;
    let (p0, p1) = (psi.values[0].abs(), psi.values[4].abs());
    let origin_power = if p0 > 0.0 && p1 > 0.0 {
        (p1 / p0).ln() / (g.r(4) / g.r(0)).ln()
    } else {
        0.0
    };
    let normalizable = origin_power > -0.5 && tail_fraction < 1e-6;
    if normalizable {
        psi.values.iter_mut().for_each(|x| *x /= norm);
    } else {
        log::warn!(
            "u/w is not normalizable (origin power {origin_power:.3}, tail fraction {tail_fraction:.3e})"
        );
    }
    MissingState {
        psi,
        norm,
        normalizable,
        tail_fraction,
        origin_power,
    }
}

/// `(eps1, eps2) = (d + sqrt c, d - sqrt c)` for `c > 0`.
pub fn split_energies(c: f64, d: f64) -> SusyResult<(f64, f64)> {
    if c < 0.0 {
        return Err(SusyError::Unsupported(
            "complex factorization energies (c < 0)".into(),
        ));
    }
    if c == 0.0 {
        return Err(SusyError::Degenerate(
            "c = 0 is the confluent case".into(),
        ));
    }
    let s = c.sqrt();
    Ok((d + s, d - s))
}

#[derive(Debug, Clone)]
pub struct NonConfluentTransform {
    pub eps1: f64,
    pub eps2: f64,
    pub v: SampledFunction,
    pub u1: SeedSolution,
    pub u2: SeedSolution,
    pub wronskian: SampledFunction,
    pub eta: SampledFunction,
    pub eta_prime: SampledFunction,
    pub v_new: SampledFunction,
    /// Eigenfunction of `H_new` at `eps1`, `u2/W`.
    pub psi_eps1: SampledFunction,
    /// Eigenfunction of `H_new` at `eps2`, `u1/W`.
    pub psi_eps2: SampledFunction,
}

/// Partner of `V` from two seeds at distinct real energies.
pub fn nonconfluent_partner(
    v: &SampledFunction,
    u1: &SeedSolution,
    u2: &SeedSolution,
) -> SusyResult<NonConfluentTransform> {
    v.same_grid(&u1.u)?;
    v.same_grid(&u2.u)?;
    let de = u1.eps - u2.eps;
    if de == 0.0 {
        return Err(SusyError::Degenerate(format!(
            "eps1 = eps2 = {}; use the confluent transform",
            u1.eps
        )));
    }
    let (a, da, b, db) = (u1.values(), u1.deriv(), u2.values(), u2.deriv());
    let n = v.len();
    let wr: Vec<f64> = (0..n).map(|i| a[i] * db[i] - b[i] * da[i]).collect();
    let wronskian = SampledFunction::new(v.grid, wr)?;
    let nodes = node_indices(&wronskian, true);
    if !nodes.is_empty() {
        let g = v.grid;
        return Err(SusyError::Singular {
            what: "W(u1, u2)",
            nodes: nodes.iter().map(|&i| 0.5 * (g.r(i) + g.r(i + 1))).collect(),
        });
    }
    let mut singular = vec![false; n];
    let mut eta = vec![0.0; n];
    let mut eta_p = vec![0.0; n];
    let mut v_new = vec![0.0; n];
    let mut psi1 = vec![0.0; n];
    let mut psi2 = vec![0.0; n];
    for i in 0..n {
        // W is zero when it is lost in the cancellation of its two products.
        let w = wronskian.values[i];
        if w == 0.0 || w.abs() < SINGULAR_REL * ((a[i] * db[i]).abs() + (b[i] * da[i]).abs()) {
            singular[i] = true;
            v_new[i] = f64::NAN;
            continue;
        }
        // W' = (eps1 - eps2) u1 u2,  W'' = (eps1 - eps2)(u1' u2 + u1 u2')
        let dw = de * a[i] * b[i];
        let d2w = de * (da[i] * b[i] + a[i] * db[i]);
        let lw = dw / w;
        eta[i] = -lw;
        eta_p[i] = -d2w / w + lw * lw;
        v_new[i] = v.values[i] + 2.0 * eta_p[i];
        psi1[i] = b[i] / w;
        psi2[i] = a[i] / w;
    }
    let mk = |values: Vec<f64>| SampledFunction {
        grid: v.grid,
        values,
        deriv: None,
        singular: Some(singular.clone()),
    };
    Ok(NonConfluentTransform {
        eps1: u1.eps,
        eps2: u2.eps,
        v: v.clone(),
        u1: u1.clone(),
        u2: u2.clone(),
        wronskian,
        eta: mk(eta),
        eta_prime: mk(eta_p),
        v_new: mk(v_new),
        psi_eps1: mk(psi1),
        psi_eps2: mk(psi2),
    })
}

impl NonConfluentTransform {
    /// max |eta' - eta² - 2 beta1 eta + (eps1 - eps2)| for `r >= RESIDUAL_R_MIN`,
    /// with `eta'` by numerical differentiation.
    pub fn ansatz_residual(&self) -> f64 {
        let d = differentiate(&self.eta);
        let g = self.v.grid;
        let (u, du) = (self.u1.values(), self.u1.deriv());
        let de = self.eps1 - self.eps2;
        let n = g.len();
        (2..n - 2)
            .filter(|&i| {
                g.r(i) >= RESIDUAL_R_MIN
                    && u[i] != 0.0
                    && (i - 2..=i + 2).all(|j| !self.eta.is_singular(j))
            })
            .map(|i| {
                let e = self.eta.values[i];
                (d.values[i] - e * e - 2.0 * du[i] / u[i] * e + de).abs()
            })
            .fold(0.0, f64::max)
    }
}

impl Intertwiner for NonConfluentTransform {
    fn potential(&self) -> &SampledFunction {
        &self.v
    }
    fn new_potential(&self) -> &SampledFunction {
        &self.v_new
    }
    fn eta(&self) -> &SampledFunction {
        &self.eta
    }
    fn eta_prime(&self) -> &SampledFunction {
        &self.eta_prime
    }
    fn mean_energy(&self) -> f64 {
        0.5 * (self.eps1 + self.eps2)
    }
}

/// `A f = f'' + eta f' + gamma f`, `gamma = d - V + eta²/2 - eta'/2`.
///
/// Derivatives of `f` are taken numerically unless `f` carries `f'`.
/// Samples where `eta` is singular are flagged and set to zero.
pub fn apply_a<T: Intertwiner + ?Sized>(f: &SampledFunction, t: &T, d: f64) -> SusyResult<SampledFunction> {
    let v = t.potential();
    f.same_grid(v)?;
    let df = f.derivative_values();
    let d2f = match &f.deriv {
        Some(dv) => differentiate(&SampledFunction::new(f.grid, dv.clone())?).values,
        None => second_derivative(f).values,
    };
    let (eta, eta_p) = (t.eta(), t.eta_prime());
    let mut singular = vec![false; f.len()];
    let values = (0..f.len())
        .map(|i| {
            if eta.is_singular(i) {
                singular[i] = true;
                return 0.0;
            }
            let e = eta.values[i];
            let gamma = d - v.values[i] + 0.5 * e * e - 0.5 * eta_p.values[i];
            d2f[i] + e * df[i] + gamma * f.values[i]
        })
        .collect();
    Ok(SampledFunction {
        grid: f.grid,
        values,
        deriv: None,
        singular: Some(singular),
    })
}

/// `||(-d² + V - e) f|| / ||f||` in L² over interior samples with `r >= r_from`,
/// skipping flagged samples.
pub fn eigen_residual(v: &SampledFunction, e: f64, f: &SampledFunction, r_from: f64) -> SusyResult<f64> {
    v.same_grid(f)?;
    let d2 = second_derivative(f);
    let g = f.grid;
    let n = f.len();
    let ok = |i: usize| {
        g.r(i) >= r_from
            && (i.saturating_sub(2)..=(i + 2).min(n - 1)).all(|j| !f.is_singular(j) && !v.is_singular(j))
            && v.values[i].is_finite()
    };
    let (mut num, mut den) = (0.0, 0.0);
    for i in (2..n - 2).filter(|&i| ok(i)) {
        let r = -d2.values[i] + (v.values[i] - e) * f.values[i];
        num += r * r;
        den += f.values[i] * f.values[i];
    }
    Ok(if den == 0.0 { 0.0 } else { (num / den).sqrt() })
}
