//! Confluent partners of the radial Coulomb problem
//! `V(r) = -2/r + l(l+1)/r²`, spectrum `E_n = -1/n²`, `n >= l + 1`.
//!
//! The seed regular at the origin is
//! `u = N z^(l+1) e^(-z/2) 1F1(l + 1 - nu; 2l + 2; z)` with `kappa = sqrt(-eps)`,
//! `nu = 1/kappa`, `z = 2 kappa r` and
//! `N² = kappa² Gamma(l + 1 + nu) / (Gamma(nu - l) Gamma(2l + 2)²)`.
//! For `eps = E_n` it is the normalized bound state.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::numerics::{
    Grid, Level, NumericsError, SampledFunction, Spectrum,
};
use crate::specfun::{
    ln_beta_signed, ln_gamma_signed, CompensatedSum, Evaluator, SeriesSettings, SpecialError,
};
use crate::susy::{confluent_w, BoundaryTag, ConfluentTransform, SeedSolution, SusyError};

#[derive(Debug, Error)]
pub enum CoulombError {
    #[error("invalid Coulomb parameters: {0}")]
    Params(String),
    #[error("w0 = {w0} is outside the nodeless domain {allowed}")]
    Inadmissible { w0: f64, allowed: Admissible },
    #[error(transparent)]
    Special(#[from] SpecialError),
    #[error(transparent)]
    Susy(#[from] SusyError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type CoulombResult<T> = Result<T, CoulombError>;

/// Tolerance for recognising `eps = -1/n²`.
pub const LEVEL_MATCH_TOL: f64 = 1e-12;

/// Largest radius at which the `w` series is used by [`coulomb_partner`].
pub const SERIES_R_MAX: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoulombParams {
    pub l: u32,
    pub eps: f64,
    /// Principal quantum number, set iff `eps = -1/n²`.
    pub n: Option<u32>,
    pub w0: f64,
}

impl CoulombParams {
    /// Seed at the bound level `E_n`.
    pub fn bound(l: u32, n: u32, w0: f64) -> CoulombResult<Self> {
        if n < l + 1 {
            return Err(CoulombError::Params(format!(
                "n = {n} must be at least l + 1 = {}",
                l + 1
            )));
        }
        Ok(Self {
            l,
            eps: -1.0 / (n as f64 * n as f64),
            n: Some(n),
            w0,
        })
    }

    /// Seed at an arbitrary `eps < 0`; snaps to `n` when `eps` is a level.
    pub fn generic(l: u32, eps: f64, w0: f64) -> CoulombResult<Self> {
        if eps >= 0.0 || !eps.is_finite() {
            return Err(CoulombError::Params(format!("eps = {eps} must be negative")));
        }
        let nu = 1.0 / (-eps).sqrt();
        let n = nu.round();
        if n >= (l + 1) as f64 && (eps + 1.0 / (n * n)).abs() < LEVEL_MATCH_TOL {
            return Self::bound(l, n as u32, w0);
        }
        Ok(Self {
            l,
            eps,
            n: None,
            w0,
        })
    }

    pub fn kappa(&self) -> f64 {
        match self.n {
            Some(n) => 1.0 / n as f64,
            None => (-self.eps).sqrt(),
        }
    }

    pub fn nu(&self) -> f64 {
        match self.n {
            Some(n) => n as f64,
            None => 1.0 / (-self.eps).sqrt(),
        }
    }

    pub fn with_w0(mut self, w0: f64) -> Self {
        self.w0 = w0;
        self
    }
}

/// `-2/r + l(l+1)/r²` on the grid.
pub fn coulomb_potential(l: u32, grid: Grid) -> SampledFunction {
    let c = (l * (l + 1)) as f64;
    SampledFunction::from_fn(grid, |r| -2.0 / r + c / (r * r))
}

/// `{-1/n² : n = l+1 ..= n_max}` with node counts `n - l - 1`.
pub fn coulomb_spectrum(l: u32, n_max: u32) -> CoulombResult<Spectrum> {
    if n_max < l + 1 {
        return Err(CoulombError::Params(format!(
            "n_max = {n_max} is below the lowest level n = {}",
            l + 1
        )));
    }
    let levels = (l + 1..=n_max)
        .map(|n| Level {
            energy: -1.0 / (n as f64 * n as f64),
            node_count: (n - l - 1) as usize,
        })
        .collect();
    Ok(Spectrum { levels })
}

/// `(ln |N²|, sign)` of the seed prefactor radicand.
fn prefactor_ln_sq(p: &CoulombParams) -> CoulombResult<(f64, f64)> {
    let l = p.l as f64;
    let nu = p.nu();
    let (g1, s1) = ln_gamma_signed(l + 1.0 + nu)?;
    let (g2, s2) = ln_gamma_signed(nu - l)?;
    let (g3, _) = ln_gamma_signed(2.0 * l + 2.0)?;
    Ok((2.0 * p.kappa().ln() + g1 - g2 - 2.0 * g3, s1 * s2))
}

/// Closed-form seed `(u, u')` at radius `r`.
struct SeedEval {
    ev: Evaluator,
    l: f64,
    kappa: f64,
    a: f64,
    b: f64,
    norm: f64,
}

impl SeedEval {
    fn new(p: &CoulombParams) -> CoulombResult<Self> {
        let l = p.l as f64;
        let (ln_n2, _) = prefactor_ln_sq(p)?;
        Ok(Self {
            ev: Evaluator::default(),
            l,
            kappa: p.kappa(),
            a: l + 1.0 - p.nu(),
            b: 2.0 * l + 2.0,
            norm: (0.5 * ln_n2).exp(),
        })
    }

    fn at(&self, r: f64) -> CoulombResult<(f64, f64)> {
        let z = 2.0 * self.kappa * r;
        let f = self.ev.kummer_1f1(self.a, self.b, z)?.value;
        let df = self.ev.kummer_1f1_deriv(self.a, self.b, z)?.value;
        let base = self.norm * z.powf(self.l) * (-0.5 * z).exp();
        Ok((
            base * z * f,
            2.0 * self.kappa * base * ((self.l + 1.0 - 0.5 * z) * f + z * df),
        ))
    }
}

/// Seed regular at the origin, with `u'` from the product rule and
/// `d/dz 1F1`. The prefactor takes `|N²|`; for `eps` off the spectrum the
/// overall constant is conventional.
pub fn coulomb_seed(p: &CoulombParams, grid: Grid) -> CoulombResult<SeedSolution> {
    let se = SeedEval::new(p)?;
    let mut values = Vec::with_capacity(grid.len());
    let mut deriv = Vec::with_capacity(grid.len());
    for r in grid.points() {
        let (u, du) = se.at(r)?;
        values.push(u);
        deriv.push(du);
    }
    let u = SampledFunction::with_deriv(grid, values, deriv)?;
    let seed = match p.n {
        Some(_) => SeedSolution::new(p.eps, u, BoundaryTag::BoundState)?
            .with_norm_sq(1.0)
            .with_tail_sq(tail_beyond(&se, grid)?),
        None => SeedSolution::new(p.eps, u, BoundaryTag::VanishesAtOrigin)?,
    };
    Ok(seed.with_origin_exponent(p.l as f64 + 1.0))
}

/// `int_{r_max}^inf u²` for a bound seed, by Simpson's rule on the closed form
/// out to where `e^{-2 kappa r}` has dropped by `e^{-60}`.
fn tail_beyond(se: &SeedEval, grid: Grid) -> CoulombResult<f64> {
    let r0 = grid.r_max();
    let len = 30.0 / se.kappa + 4.0 * se.l / se.kappa;
    let steps = 2 * ((len / grid.h()).ceil() as usize / 2).max(8);
    let h = len / steps as f64;
    let mut sum = CompensatedSum::new();
    for k in 0..=steps {
        let (u, _) = se.at(r0 + k as f64 * h)?;
        let wgt = if k == 0 || k == steps {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum.add(wgt * u * u);
    }
    Ok(sum.value() * h / 3.0)
}

/// `int_0^r u²` from the hypergeometric series, with an absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesIntegral {
    pub value: f64,
    pub est_error: f64,
    pub terms_used: usize,
}

/// Maximum number of m-terms in the infinite `w` series.
pub const W_SERIES_MAX_TERMS: usize = 5000;

/// `int_0^r u²` for the seed of `p`: the finite sum over
/// `m = 0 ..= n - l - 1` when `n` is set, otherwise the infinite Beta/2F2
/// series.
pub fn seed_integral_series(p: &CoulombParams, r: f64) -> CoulombResult<SeriesIntegral> {
    if r == 0.0 {
        return Ok(SeriesIntegral {
            value: 0.0,
            est_error: 0.0,
            terms_used: 1,
        });
    }
    match p.n {
        Some(n) => truncated_integral(p.l, n, r),
        None => infinite_integral(p, r),
    }
}

fn truncated_integral(l: u32, n: u32, r: f64) -> CoulombResult<SeriesIntegral> {
    let ev = Evaluator::default();
    let lf = l as f64;
    let nf = n as f64;
    let z = 2.0 * r / nf;
    let (ln_fact, _) = ln_gamma_signed(2.0 * lf + 2.0)?;
    let mut sum = CompensatedSum::new();
    let mut err = 0.0;
    for m in 0..n - l {
        let mf = m as f64;
        let a1 = 2.0 * lf + mf + 3.0;
        let f = ev.hyp_2f2(a1, nf + lf + 1.0, a1 + 1.0, 2.0 * lf + 2.0, -z)?;
        let (ln_b, sb) = ln_beta_signed(nf - lf - mf, 2.0 * lf + mf + 1.0)?;
        let (ln_mfact, _) = ln_gamma_signed(mf + 1.0)?;
        let ln_mag = a1 * z.ln()
            - a1.ln()
            - (2.0 * lf + mf + 1.0).ln()
            - (2.0 * nf).ln()
            - ln_fact
            - ln_mfact
            - ln_b;
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 } * sb;
        let c = sign * ln_mag.exp();
        sum.add(c * f.value);
        err += c.abs() * f.est_error;
    }
    Ok(SeriesIntegral {
        value: sum.value(),
        est_error: err + 2.0 * f64::EPSILON * sum.abs_sum(),
        terms_used: (n - l) as usize,
    })
}

fn infinite_integral(p: &CoulombParams, r: f64) -> CoulombResult<SeriesIntegral> {
    let ev = Evaluator::new(SeriesSettings::default());
    let lf = p.l as f64;
    let nu = p.nu();
    let kappa = p.kappa();
    let z = 2.0 * kappa * r;
    let (_, radicand_sign) = prefactor_ln_sq(p)?;
    let (ln_fact, _) = ln_gamma_signed(2.0 * lf + 2.0)?;
    let (ln_b0, s_b0) = ln_beta_signed(nu - lf, lf + 1.0 - nu)?;
    let prefix = kappa.ln() - std::f64::consts::LN_2 - ln_fact - ln_b0;
    let mut sum = CompensatedSum::new();
    let mut err = 0.0;
    let mut small_run = 0;
    for m in 0..W_SERIES_MAX_TERMS {
        let mf = m as f64;
        let a1 = 2.0 * lf + mf + 3.0;
        let f = ev.hyp_2f2(a1, lf + 1.0 + nu, a1 + 1.0, 2.0 * lf + 2.0, -z)?;
        let (ln_b, s_b) = ln_beta_signed(lf + 1.0 + nu, lf + 1.0 + mf - nu)?;
        let (ln_mfact, _) = ln_gamma_signed(mf + 1.0)?;
        let ln_mag = prefix + ln_b + a1 * z.ln() - a1.ln() - ln_mfact;
        let c = radicand_sign * s_b * s_b0 * ln_mag.exp();
        let term = c * f.value;
        sum.add(term);
        err += c.abs() * f.est_error;
        if term.abs() <= 1e-16 * sum.value().abs() {
            small_run += 1;
            if small_run >= 3 {
                return Ok(SeriesIntegral {
                    value: sum.value(),
                    est_error: err + 2.0 * f64::EPSILON * sum.abs_sum(),
                    terms_used: m + 1,
                });
            }
        } else {
            small_run = 0;
        }
    }
    Err(SpecialError::NonConvergence {
        terms: W_SERIES_MAX_TERMS,
    }
    .into())
}

/// `w(r) = w0 - int_0^r u²` from the series at every grid point, with the
/// per-point error estimates.
pub fn coulomb_w_series_with_error(
    p: &CoulombParams,
    grid: Grid,
) -> CoulombResult<(SampledFunction, Vec<f64>)> {
    let mut values = Vec::with_capacity(grid.len());
    let mut errors = Vec::with_capacity(grid.len());
    let mut warned = false;
    for r in grid.points() {
        let s = seed_integral_series(p, r)?;
        let w = p.w0 - s.value;
        if !warned && s.est_error > 1e-6 * w.abs().max(1e-300) {
            log::warn!(
                "w series loses precision at r = {r}: error estimate {:.2e} vs |w| = {:.2e}",
                s.est_error,
                w.abs()
            );
            warned = true;
        }
        values.push(w);
        errors.push(s.est_error);
    }
    Ok((SampledFunction::new(grid, values)?, errors))
}

/// `w(r)` from the series.
pub fn coulomb_w_series(p: &CoulombParams, grid: Grid) -> CoulombResult<SampledFunction> {
    Ok(coulomb_w_series_with_error(p, grid)?.0)
}

/// Nodeless `w0` domain: a union of closed intervals, plus the endpoint
/// values at which `w` vanishes at `r = 0` or `r = inf` and the level at
/// `eps` is deleted rather than kept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Admissible {
    pub intervals: Vec<(f64, f64)>,
    pub deleting_endpoints: Vec<f64>,
}

impl Admissible {
    pub fn contains(&self, w0: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a <= w0 && w0 <= b)
    }

    pub fn deletes_level(&self, w0: f64) -> bool {
        self.deleting_endpoints.contains(&w0)
    }
}

impl fmt::Display for Admissible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bound = |x: f64| {
            if x.is_infinite() {
                if x < 0.0 { "-inf".to_string() } else { "inf".to_string() }
            } else {
                format!("{x}")
            }
        };
        let parts: Vec<String> = self
            .intervals
            .iter()
            .map(|&(a, b)| {
                let lo = if a.is_infinite() { "(" } else { "[" };
                let hi = if b.is_infinite() { ")" } else { "]" };
                format!("{lo}{}, {}{hi}", bound(a), bound(b))
            })
            .collect();
        write!(f, "{}", parts.join(" U "))
    }
}

/// `(-inf, 0]` off the spectrum, `(-inf, 0] U [1, inf)` at `eps = E_n`.
pub fn w0_admissible(p: &CoulombParams) -> Admissible {
    match p.n {
        Some(_) => Admissible {
            intervals: vec![(f64::NEG_INFINITY, 0.0), (1.0, f64::INFINITY)],
            deleting_endpoints: vec![0.0, 1.0],
        },
        None => Admissible {
            intervals: vec![(f64::NEG_INFINITY, 0.0)],
            deleting_endpoints: vec![0.0],
        },
    }
}

fn check_admissible(p: &CoulombParams) -> CoulombResult<()> {
    let allowed = w0_admissible(p);
    if allowed.contains(p.w0) {
        Ok(())
    } else {
        Err(CoulombError::Inadmissible { w0: p.w0, allowed })
    }
}

/// `w` for [`coulomb_partner`]: the series for `r <= 30` where its error
/// estimate is below `1e-10 |w|`, quadrature of `u²` elsewhere.
pub fn coulomb_w(p: &CoulombParams, seed: &SeedSolution) -> CoulombResult<SampledFunction> {
    let grid = seed.grid();
    let quad = confluent_w(seed, p.w0)?;
    let mut values = quad.values.clone();
    let mut from_series = 0usize;
    for (i, r) in grid.points().enumerate() {
        if r > SERIES_R_MAX {
            break;
        }
        let s = seed_integral_series(p, r)?;
        let w = p.w0 - s.value;
        if s.est_error <= 1e-10 * w.abs() {
            values[i] = w;
            from_series += 1;
        }
    }
    log::debug!("w: {from_series} of {} samples from the series", grid.len());
    Ok(SampledFunction {
        grid,
        values,
        deriv: quad.deriv,
        singular: None,
    })
}

/// Confluent partner of the Coulomb potential for `p`.
pub fn coulomb_partner(p: &CoulombParams, grid: Grid) -> CoulombResult<ConfluentTransform> {
    check_admissible(p)?;
    let v = coulomb_potential(p.l, grid);
    let seed = coulomb_seed(p, grid)?;
    let w = coulomb_w(p, &seed)?;
    Ok(ConfluentTransform::from_parts(&v, &seed, p.w0, w)?)
}

fn closed_form(
    w0: f64,
    n: u32,
    grid: Grid,
    eval: impl Fn(f64, f64) -> Option<f64>,
) -> CoulombResult<SampledFunction> {
    let p = CoulombParams::bound(0, n, w0)?;
    check_admissible(&p)?;
    let values = grid
        .points()
        .map(|r| {
            eval(w0, r).ok_or_else(|| CoulombError::Params(format!("denominator vanishes at r = {r}")))
        })
        .collect::<CoulombResult<Vec<f64>>>()?;
    Ok(SampledFunction::new(grid, values)?)
}

/// `e^{-x} sum_{j >= 3} c(j) x^j / j!` for `0 <= x <= 1`.
fn exp_weighted_tail(x: f64, c: impl Fn(usize) -> f64) -> f64 {
    let mut sum = CompensatedSum::new();
    let mut power = x * x * x / 6.0;
    for j in 3..60 {
        let term = c(j) * power;
        sum.add(term);
        if j > 6 && term.abs() <= 1e-17 * sum.value().abs() {
            break;
        }
        power *= x / (j + 1) as f64;
    }
    (-x).exp() * sum.value()
}

/// Partner of `-2/r` from the ground state (`l = 0`, `n = 1`) at radius `r`,
/// with `e^{2r}` factored out of numerator and denominator.
/// `None` where the denominator vanishes.
///
/// For `2r < 1` numerator and denominator are rewritten as `w0 (r - 1) - R`
/// and `w0 - Q` with `Q, R = O(r³)` summed as series, so that `w0 = 0` keeps
/// full relative precision near the origin.
pub fn closed_l0n1(w0: f64, r: f64) -> Option<f64> {
    if w0.is_infinite() {
        return Some(-2.0 / r);
    }
    let e = (-2.0 * r).exp();
    let x = 2.0 * r;
    let (num, den) = if x < 1.0 {
        let q = exp_weighted_tail(x, |_| 1.0);
        let rr = exp_weighted_tail(x, |j| 0.5 * (j as f64 - 2.0));
        (w0 * (r - 1.0) - rr, w0 - q)
    } else {
        (
            (-1.0 - r) * e + (w0 - 1.0) * (r - 1.0),
            (1.0 + 2.0 * r + 2.0 * r * r) * e + (w0 - 1.0),
        )
    };
    (den != 0.0).then(|| -2.0 / r - 16.0 * r * num * e / (den * den))
}

/// Partner of `-2/r` from the first excited state (`l = 0`, `n = 2`) at
/// radius `r`, with `e^r` factored out. `None` where the denominator vanishes.
///
/// Same splitting as [`closed_l0n1`] for `r < 1`: `-2 w0 (4 - 6r + r²) - R`
/// over `8 w0 - Q`.
pub fn closed_l0n2(w0: f64, r: f64) -> Option<f64> {
    if w0.is_infinite() {
        return Some(-2.0 / r);
    }
    let e = (-r).exp();
    let r2 = r * r;
    let (num, den) = if r < 1.0 {
        let q = exp_weighted_tail(r, |j| if j == 4 { -16.0 } else { 8.0 });
        let rr = exp_weighted_tail(r, |j| match j {
            3 => 4.0,
            4 => -8.0,
            _ => {
                let j = j as f64;
                -2.0 * (j * j - 7.0 * j + 4.0)
            }
        });
        (-2.0 * w0 * (4.0 - 6.0 * r + r2) - rr, 8.0 * w0 - q)
    } else {
        (
            (-8.0 + 4.0 * r + 6.0 * r2 + 2.0 * r2 * r + r2 * r2) * e
                - 2.0 * (w0 - 1.0) * (4.0 - 6.0 * r + r2),
            (8.0 + 8.0 * r + 4.0 * r2 + r2 * r2) * e + 8.0 * (w0 - 1.0),
        )
    };
    (den != 0.0).then(|| -2.0 / r + 8.0 * r * (r - 2.0) * num * e / (den * den))
}

/// [`closed_l0n1`] on a grid, rejecting inadmissible `w0`.
pub fn partner_closed_l0n1(w0: f64, grid: Grid) -> CoulombResult<SampledFunction> {
    closed_form(w0, 1, grid, closed_l0n1)
}

/// [`closed_l0n2`] on a grid, rejecting inadmissible `w0`.
pub fn partner_closed_l0n2(w0: f64, grid: Grid) -> CoulombResult<SampledFunction> {
    closed_form(w0, 2, grid, closed_l0n2)
}
