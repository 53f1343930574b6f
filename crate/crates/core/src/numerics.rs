//! Uniform radial grids, sampled functions, quadrature and differentiation,
//! Numerov integration of `-u'' + (V - eps) u = s`, and a matched shooting
//! eigensolver.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("functions live on different grids")]
    GridMismatch,
    #[error("length {got} does not match grid point count {expected}")]
    Length { expected: usize, got: usize },
    #[error("divergent small-r closure: exponent p = {0} <= -1")]
    DivergentClosure(f64),
    #[error("invalid energy bracket ({lo}, {hi})")]
    BracketExhausted { lo: f64, hi: f64 },
    #[error("eigenvalue search for level {level} did not converge in {iterations} iterations")]
    NonConvergence { level: usize, iterations: usize },
    #[error("malformed input: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type NumericsResult<T> = Result<T, NumericsError>;

/// Uniform mesh `r_i = r_min + i h`, `h = (r_max - r_min) / (n - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    r_min: f64,
    r_max: f64,
    n: usize,
}

pub const MIN_GRID_POINTS: usize = 16;

/// Builds a uniform grid on `[r_min, r_max]` with `n` points.
pub fn make_grid(r_min: f64, r_max: f64, n: usize) -> NumericsResult<Grid> {
    Grid::new(r_min, r_max, n)
}

impl Grid {
    pub fn new(r_min: f64, r_max: f64, n: usize) -> NumericsResult<Self> {
        if !(r_min.is_finite() && r_max.is_finite()) {
            return Err(NumericsError::Grid("bounds must be finite".into()));
        }
        if r_min <= 0.0 {
            return Err(NumericsError::Grid(format!("r_min = {r_min} must be positive")));
        }
        if r_max <= r_min {
            return Err(NumericsError::Grid(format!(
                "r_max = {r_max} must exceed r_min = {r_min}"
            )));
        }
        if n < MIN_GRID_POINTS {
            return Err(NumericsError::Grid(format!(
                "{n} points, at least {MIN_GRID_POINTS} required"
            )));
        }
        Ok(Self { r_min, r_max, n })
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn h(&self) -> f64 {
        (self.r_max - self.r_min) / (self.n - 1) as f64
    }

    pub fn r(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.r_max
        } else {
            self.r_min + i as f64 * self.h()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.r(i))
    }

    /// Index of the last grid point with `r_i <= r`.
    pub fn index_at_or_below(&self, r: f64) -> usize {
        if r <= self.r_min {
            return 0;
        }
        let i = ((r - self.r_min) / self.h()).floor() as usize;
        i.min(self.n - 1)
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}] x {}", self.r_min, self.r_max, self.n)
    }
}

/// Samples of a real function on a [`Grid`], optionally with its first
/// derivative and a mask of singular samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
    #[serde(skip)]
    pub deriv: Option<Vec<f64>>,
    #[serde(skip)]
    pub singular: Option<Vec<bool>>,
}

impl SampledFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> NumericsResult<Self> {
        if values.len() != grid.len() {
            return Err(NumericsError::Length {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            grid,
            values,
            deriv: None,
            singular: None,
        })
    }

    pub fn with_deriv(grid: Grid, values: Vec<f64>, deriv: Vec<f64>) -> NumericsResult<Self> {
        if deriv.len() != grid.len() {
            return Err(NumericsError::Length {
                expected: grid.len(),
                got: deriv.len(),
            });
        }
        let mut f = Self::new(grid, values)?;
        f.deriv = Some(deriv);
        Ok(f)
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().map(f).collect();
        Self {
            grid,
            values,
            deriv: None,
            singular: None,
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::from_fn(grid, |_| 0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_singular(&self, i: usize) -> bool {
        self.singular.as_ref().is_some_and(|s| s[i])
    }

    /// Fraction of samples flagged singular.
    pub fn singular_fraction(&self) -> f64 {
        match &self.singular {
            Some(s) => s.iter().filter(|&&b| b).count() as f64 / s.len() as f64,
            None => 0.0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.is_singular(*i))
            .fold(0.0, |m, (_, v)| m.max(v.abs()))
    }

    pub fn same_grid(&self, other: &SampledFunction) -> NumericsResult<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(NumericsError::GridMismatch)
        }
    }

    /// Pointwise combination of two functions on the same grid.
    pub fn zip_with(
        &self,
        other: &SampledFunction,
        f: impl Fn(f64, f64) -> f64,
    ) -> NumericsResult<SampledFunction> {
        self.same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        SampledFunction::new(self.grid, values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SampledFunction {
        SampledFunction {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
            deriv: None,
            singular: self.singular.clone(),
        }
    }

    /// First derivative: stored one if present, else finite differences.
    pub fn derivative_values(&self) -> Vec<f64> {
        match &self.deriv {
            Some(d) => d.clone(),
            None => differentiate(self).values,
        }
    }

    /// Sum of squares times h (trapezoid with the tiny endpoint weights folded in).
    pub fn l2_norm(&self) -> f64 {
        let h = self.grid.h();
        let s: f64 = self.values.iter().map(|v| v * v).sum();
        let ends = 0.5 * (self.values[0].powi(2) + self.values[self.len() - 1].powi(2));
        ((s - ends) * h).sqrt()
    }

    /// Two-column CSV `r,value` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W, header: &str) -> std::io::Result<()> {
        writeln!(w, "r,{header}")?;
        for (r, v) in self.grid.points().zip(&self.values) {
            writeln!(w, "{},{}", fmt_f64(r), fmt_f64(*v))?;
        }
        Ok(())
    }

    /// Reads the CSV written by [`SampledFunction::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> NumericsResult<Self> {
        let mut rs = Vec::new();
        let mut vs = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let mut next = || -> NumericsResult<f64> {
                cols.next()
                    .ok_or_else(|| NumericsError::Parse(format!("line {}: missing column", lineno + 1)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| NumericsError::Parse(format!("line {}: {e}", lineno + 1)))
            };
            rs.push(next()?);
            vs.push(next()?);
        }
        if rs.len() < 2 {
            return Err(NumericsError::Parse("fewer than two rows".into()));
        }
        let grid = Grid::new(rs[0], rs[rs.len() - 1], rs.len())?;
        SampledFunction::new(grid, vs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sampled function serializes")
    }

    pub fn from_json(s: &str) -> NumericsResult<Self> {
        let f: SampledFunction =
            serde_json::from_str(s).map_err(|e| NumericsError::Parse(e.to_string()))?;
        Grid::new(f.grid.r_min, f.grid.r_max, f.grid.n)?;
        if f.values.len() != f.grid.len() {
            return Err(NumericsError::Length {
                expected: f.grid.len(),
                got: f.values.len(),
            });
        }
        Ok(f)
    }
}

/// 17-significant-digit scientific format.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Power-law behaviour `f ~ coeff * r^power` on `(0, r_min)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw {
    pub coeff: f64,
    pub power: f64,
}

impl PowerLaw {
    /// Power law with the given exponent passing through `(r, value)`.
    pub fn through(r: f64, value: f64, power: f64) -> Self {
        Self {
            coeff: value / r.powf(power),
            power,
        }
    }

    fn integral_to(&self, r: f64) -> NumericsResult<f64> {
        if self.power <= -1.0 {
            return Err(NumericsError::DivergentClosure(self.power));
        }
        Ok(self.coeff * r.powf(self.power + 1.0) / (self.power + 1.0))
    }
}

/// Integral over one grid interval from four neighbouring samples
/// (cubic interpolation, local error O(h^5)).
fn interval_integral(f: &[f64], i: usize, h: f64) -> f64 {
    let n = f.len();
    if i == 0 {
        h / 24.0 * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
    } else if i + 2 >= n {
        h / 24.0 * (f[n - 4] - 5.0 * f[n - 3] + 19.0 * f[n - 2] + 9.0 * f[n - 1])
    } else {
        h / 24.0 * (-f[i - 1] + 13.0 * f[i] + 13.0 * f[i + 1] - f[i + 2])
    }
}

/// Running integral `F(r_i) = int_0^{r_i} f`.
///
/// Even-indexed points accumulate composite Simpson panels; odd-indexed points
/// add a cubic single-interval rule to the preceding even point. The segment
/// `(0, r_min)` comes from `closure`, or is omitted when `closure` is `None`.
pub fn cumulative_integral(
    f: &SampledFunction,
    closure: Option<PowerLaw>,
) -> NumericsResult<SampledFunction> {
    let h = f.grid.h();
    let v = &f.values;
    let n = v.len();
    let start = match closure {
        Some(c) => c.integral_to(f.grid.r_min())?,
        None => 0.0,
    };
    let mut out = vec![0.0; n];
    out[0] = start;
    let mut even = start;
    let mut i = 0;
    while i + 2 < n {
        out[i + 1] = even + interval_integral(v, i, h);
        even += h / 3.0 * (v[i] + 4.0 * v[i + 1] + v[i + 2]);
        out[i + 2] = even;
        i += 2;
    }
    if i + 1 < n {
        out[i + 1] = even + interval_integral(v, i, h);
    }
    SampledFunction::new(f.grid, out)
}

/// Running tail integral `T(r_i) = int_{r_i}^{r_max} f + tail`.
///
/// Mirror image of [`cumulative_integral`]; `tail` supplies the
/// contribution beyond `r_max`.
pub fn tail_integral(f: &SampledFunction, tail: f64) -> NumericsResult<SampledFunction> {
    let mut rev = f.values.clone();
    rev.reverse();
    let h = f.grid.h();
    let n = rev.len();
    let mut out = vec![0.0; n];
    out[0] = tail;
    let mut even = tail;
    let mut i = 0;
    while i + 2 < n {
        out[i + 1] = even + interval_integral(&rev, i, h);
        even += h / 3.0 * (rev[i] + 4.0 * rev[i + 1] + rev[i + 2]);
        out[i + 2] = even;
        i += 2;
    }
    if i + 1 < n {
        out[i + 1] = even + interval_integral(&rev, i, h);
    }
    out.reverse();
    SampledFunction::new(f.grid, out)
}

/// Definite integral over the whole grid.
pub fn integrate(f: &SampledFunction) -> f64 {
    *cumulative_integral(f, None)
        .expect("no closure")
        .values
        .last()
        .expect("grid is non-empty")
}

/// First derivative: fourth-order central differences, one-sided
/// fourth-order stencils at the two points nearest each edge.
pub fn differentiate(f: &SampledFunction) -> SampledFunction {
    let v = &f.values;
    let n = v.len();
    let d = 12.0 * f.grid.h();
    let mut out = vec![0.0; n];
    for i in 2..n - 2 {
        out[i] = (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) / d;
    }
    out[0] = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / d;
    out[1] = (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) / d;
    out[n - 1] = -(-25.0 * v[n - 1] + 48.0 * v[n - 2] - 36.0 * v[n - 3] + 16.0 * v[n - 4]
        - 3.0 * v[n - 5])
        / d;
    out[n - 2] = -(-3.0 * v[n - 1] - 10.0 * v[n - 2] + 18.0 * v[n - 3] - 6.0 * v[n - 4]
        + v[n - 5])
        / d;
    SampledFunction {
        grid: f.grid,
        values: out,
        deriv: None,
        singular: f.singular.clone(),
    }
}

/// Second derivative, fourth order everywhere.
pub fn second_derivative(f: &SampledFunction) -> SampledFunction {
    let v = &f.values;
    let n = v.len();
    let d = 12.0 * f.grid.h().powi(2);
    let mut out = vec![0.0; n];
    for i in 2..n - 2 {
        out[i] = (-v[i - 2] + 16.0 * v[i - 1] - 30.0 * v[i] + 16.0 * v[i + 1] - v[i + 2]) / d;
    }
    let edge0 = |w: &dyn Fn(usize) -> f64| {
        (45.0 * w(0) - 154.0 * w(1) + 214.0 * w(2) - 156.0 * w(3) + 61.0 * w(4) - 10.0 * w(5)) / d
    };
    let edge1 = |w: &dyn Fn(usize) -> f64| {
        (10.0 * w(0) - 15.0 * w(1) - 4.0 * w(2) + 14.0 * w(3) - 6.0 * w(4) + w(5)) / d
    };
    out[0] = edge0(&|k| v[k]);
    out[1] = edge1(&|k| v[k]);
    out[n - 1] = edge0(&|k| v[n - 1 - k]);
    out[n - 2] = edge1(&|k| v[n - 1 - k]);
    SampledFunction {
        grid: f.grid,
        values: out,
        deriv: None,
        singular: f.singular.clone(),
    }
}

/// Number of strict sign changes between consecutive non-zero samples.
///
/// With `exclude_endpoints`, leading and trailing samples that are
/// numerically zero (below `1e-10 * max|f|`) and shrink toward the end of the
/// grid are dropped first, so a zero sitting at either end is not reported as
/// a node. A sign change inside a small but non-shrinking run still counts.
pub fn count_nodes(f: &SampledFunction, exclude_endpoints: bool) -> usize {
    node_indices(f, exclude_endpoints).len()
}

/// Grid indices `i` such that `f` changes sign between `i` and the next
/// non-zero sample.
pub fn node_indices(f: &SampledFunction, exclude_endpoints: bool) -> Vec<usize> {
    let v = &f.values;
    let (mut lo, mut hi) = (0, v.len());
    if exclude_endpoints {
        let tol = 1e-10 * f.max_abs();
        while lo + 1 < hi && v[lo].abs() <= tol && v[lo].abs() <= v[lo + 1].abs() {
            lo += 1;
        }
        while hi > lo + 1 && v[hi - 1].abs() <= tol && v[hi - 1].abs() <= v[hi - 2].abs() {
            hi -= 1;
        }
    }
    let mut nodes = Vec::new();
    let mut last: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate().take(hi).skip(lo) {
        if x == 0.0 || f.is_singular(i) {
            continue;
        }
        if let Some((j, y)) = last {
            if (x > 0.0) != (y > 0.0) {
                nodes.push(j);
            }
        }
        last = Some((i, x));
    }
    nodes
}

fn sign_changes(v: &[f64]) -> usize {
    let mut count = 0;
    let mut last = 0.0_f64;
    for &x in v {
        if x == 0.0 {
            continue;
        }
        if last != 0.0 && (x > 0.0) != (last > 0.0) {
            count += 1;
        }
        last = x;
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Outward,
    Inward,
}

/// Starting data for the Numerov recurrence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Start {
    /// Value and slope `du/dr` at the starting end.
    ValueSlope(f64, f64),
    /// Values at the first two grid points in the direction of integration.
    TwoPoint(f64, f64),
}

/// Solution of a Numerov integration. True values are `u * exp(log_scale)`.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub u: SampledFunction,
    pub log_scale: f64,
}

const OVERFLOW_GUARD: f64 = 1e150;

/// Derivatives of the polynomial interpolating `f[0..=6]` at the first
/// sample: `D^j = (ln(1 + Delta))^j / h^j` truncated at `Delta^6`.
fn forward_derivatives(f: &[f64], h: f64) -> [f64; 5] {
    const ORDER: usize = 6;
    let npts = f.len().min(ORDER + 1);
    let mut diffs = [0.0; ORDER + 1];
    let mut row: Vec<f64> = f[..npts].to_vec();
    for d in diffs.iter_mut().take(npts) {
        *d = row[0];
        row = row.windows(2).map(|w| w[1] - w[0]).collect();
    }
    // ln(1+x) = x - x^2/2 + x^3/3 - ...
    let mut ln1p = [0.0; ORDER + 1];
    for (k, c) in ln1p.iter_mut().enumerate().skip(1) {
        *c = if k % 2 == 1 { 1.0 } else { -1.0 } / k as f64;
    }
    let mut power = [0.0; ORDER + 1];
    power[0] = 1.0;
    let mut out = [0.0; 5];
    out[0] = f[0];
    for (j, o) in out.iter_mut().enumerate().skip(1) {
        let mut next = [0.0; ORDER + 1];
        for a in 0..=ORDER {
            for b in 1..=ORDER - a {
                next[a + b] += power[a] * ln1p[b];
            }
        }
        power = next;
        let s: f64 = (0..=ORDER).map(|k| power[k] * diffs[k]).sum();
        *o = s / h.powi(j as i32);
    }
    out
}

/// Second sample from value and slope by a Taylor expansion of
/// `y'' = q y - s`, using finite-difference derivatives of `q` and `s`.
fn taylor_start(q: &[f64], s: Option<&[f64]>, h: f64, y0: f64, dy0: f64) -> f64 {
    let qd = forward_derivatives(q, h);
    let sd = match s {
        Some(s) => forward_derivatives(s, h),
        None => [0.0; 5],
    };
    let binom = |n: usize, k: usize| -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    };
    let mut y = [0.0; 7];
    y[0] = y0;
    y[1] = dy0;
    for k in 0..5 {
        let mut acc = -sd[k];
        for j in 0..=k {
            acc += binom(k, j) * qd[j] * y[k - j];
        }
        y[k + 2] = acc;
    }
    let mut y1 = 0.0;
    let mut fact = 1.0;
    for (k, yk) in y.iter().enumerate() {
        if k > 0 {
            fact *= k as f64;
        }
        y1 += yk * h.powi(k as i32) / fact;
    }
    y1
}

/// Numerov recurrence on index order `0, 1, 2, ...` of `q` and `s`,
/// with rescaling when the solution exceeds the overflow guard.
fn numerov_core(q: &[f64], s: Option<&[f64]>, h: f64, y0: f64, y1: f64) -> (Vec<f64>, f64) {
    let n = q.len();
    let c = h * h / 12.0;
    let mut y = vec![0.0; n];
    y[0] = y0;
    y[1] = y1;
    let mut log_scale = 0.0;
    let mut source_scale = 1.0;
    for i in 1..n - 1 {
        let mut rhs = 2.0 * (1.0 + 5.0 * c * q[i]) * y[i] - (1.0 - c * q[i - 1]) * y[i - 1];
        if let Some(s) = s {
            rhs -= c * source_scale * (s[i + 1] + 10.0 * s[i] + s[i - 1]);
        }
        y[i + 1] = rhs / (1.0 - c * q[i + 1]);
        if y[i + 1].abs() > OVERFLOW_GUARD {
            for v in y.iter_mut().take(i + 2) {
                *v /= OVERFLOW_GUARD;
            }
            source_scale /= OVERFLOW_GUARD;
            log_scale += OVERFLOW_GUARD.ln();
        }
    }
    (y, log_scale)
}

fn solve_ode(
    v: &SampledFunction,
    eps: f64,
    source: Option<&SampledFunction>,
    direction: Direction,
    start: Start,
) -> NumericsResult<OdeSolution> {
    if let Some(s) = source {
        v.same_grid(s)?;
    }
    let h = v.grid.h();
    let mut q: Vec<f64> = v.values.iter().map(|x| x - eps).collect();
    let mut s: Option<Vec<f64>> = source.map(|s| s.values.clone());
    if direction == Direction::Inward {
        q.reverse();
        if let Some(s) = s.as_mut() {
            s.reverse();
        }
    }
    let (y0, y1) = match start {
        Start::TwoPoint(a, b) => (a, b),
        Start::ValueSlope(val, slope) => {
            let slope = match direction {
                Direction::Outward => slope,
                Direction::Inward => -slope,
            };
            (val, taylor_start(&q, s.as_deref(), h, val, slope))
        }
    };
    let (mut y, log_scale) = numerov_core(&q, s.as_deref(), h, y0, y1);
    if direction == Direction::Inward {
        y.reverse();
    }
    Ok(OdeSolution {
        u: SampledFunction::new(v.grid, y)?,
        log_scale,
    })
}

/// Integrates `-u'' + (V - eps) u = 0` across the whole grid.
pub fn numerov_solve(
    v: &SampledFunction,
    eps: f64,
    direction: Direction,
    start: Start,
) -> NumericsResult<OdeSolution> {
    solve_ode(v, eps, None, direction, start)
}

/// Integrates `-v'' + (V - eps) v = source` outward from `r_min`.
pub fn solve_inhomogeneous(
    v: &SampledFunction,
    eps: f64,
    source: &SampledFunction,
    start: Start,
) -> NumericsResult<OdeSolution> {
    solve_ode(v, eps, Some(source), Direction::Outward, start)
}

/// One bound level: energy and number of interior nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub energy: f64,
    pub node_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub levels: Vec<Level>,
}

impl Spectrum {
    pub fn energies(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.energy).collect()
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingOptions {
    /// Final bracket width on each eigenvalue.
    pub energy_tol: f64,
    pub max_iterations: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            energy_tol: 1e-9,
            max_iterations: 200,
        }
    }
}

/// Behaviour of the regular solution near the origin, from a quadratic fit
/// `r^2 V(r) = L + Q r + R r^2` at the first three grid points:
/// `u ~ r^s (1 + c1 r + c2 r^2)`, `s (s - 1) = L`.
#[derive(Debug, Clone, Copy)]
struct OriginSeries {
    s: f64,
    q: f64,
    r2: f64,
}

impl OriginSeries {
    fn fit(v: &SampledFunction) -> Self {
        let g = v.grid;
        let (x0, x1, x2) = (g.r(0), g.r(1), g.r(2));
        let (y0, y1, y2) = (
            x0 * x0 * v.values[0],
            x1 * x1 * v.values[1],
            x2 * x2 * v.values[2],
        );
        // Newton divided differences
        let d01 = (y1 - y0) / (x1 - x0);
        let d12 = (y2 - y1) / (x2 - x1);
        let r2 = (d12 - d01) / (x2 - x0);
        let q = d01 - r2 * (x0 + x1);
        let l = y0 - q * x0 - r2 * x0 * x0;
        let mut s = 0.5 * (1.0 + (1.0 + 4.0 * l.max(-0.25)).sqrt());
        if (s - s.round()).abs() < 1e-3 {
            s = s.round();
        }
        Self { s, q, r2 }
    }

    fn value(&self, r: f64, energy: f64) -> f64 {
        let c1 = self.q / (2.0 * self.s);
        let c2 = (self.q * c1 + self.r2 - energy) / (2.0 * (2.0 * self.s + 1.0));
        r.powf(self.s) * (1.0 + c1 * r + c2 * r * r)
    }
}

/// `V(r) ~ c0 + c1/r + c2/r²` beyond `r_max`, interpolated through three
/// samples spread over the outer quarter of the grid.
#[derive(Debug, Clone, Copy)]
struct TailModel {
    c0: f64,
    c1: f64,
    c2: f64,
}

impl TailModel {
    fn fit(v: &SampledFunction) -> Self {
        let n = v.len();
        let k = (n / 8).max(1);
        let idx = [n - 1 - 2 * k, n - 1 - k, n - 1];
        let x: Vec<f64> = idx.iter().map(|&i| 1.0 / v.grid.r(i)).collect();
        let y: Vec<f64> = idx.iter().map(|&i| v.values[i]).collect();
        let flat = Self {
            c0: y[2],
            c1: 0.0,
            c2: 0.0,
        };
        if y.iter().any(|t| !t.is_finite()) {
            return flat;
        }
        // quadratic in x = 1/r by divided differences
        let d01 = (y[1] - y[0]) / (x[1] - x[0]);
        let d12 = (y[2] - y[1]) / (x[2] - x[1]);
        let c2 = (d12 - d01) / (x[2] - x[0]);
        let c1 = d01 - c2 * (x[0] + x[1]);
        let c0 = y[0] - c1 * x[0] - c2 * x[0] * x[0];
        Self { c0, c1, c2 }
    }

    fn value(&self, r: f64) -> f64 {
        self.c0 + self.c1 / r + self.c2 / (r * r)
    }
}

/// Decay exponent `2 kappa L` reached by the inward start beyond `r_max`.
const TAIL_DECAY: f64 = 60.0;
const TAIL_MAX_POINTS: usize = 400_000;

/// Outward/inward shooting for a potential sampled on a grid, with the
/// regular origin behaviour and an inward start far beyond `r_max` on the
/// extrapolated tail of `V`.
struct Shooter<'a> {
    v: &'a SampledFunction,
    origin: OriginSeries,
    tail: TailModel,
}

struct MatchState {
    /// Number of eigenvalues below the trial energy.
    below: usize,
    /// Normalized Wronskian mismatch at the matching point.
    det: f64,
    m: usize,
}

impl<'a> Shooter<'a> {
    fn new(v: &'a SampledFunction) -> Self {
        Self {
            v,
            origin: OriginSeries::fit(v),
            tail: TailModel::fit(v),
        }
    }

    /// Outermost classical turning point, clamped away from the edges.
    fn matching_index(&self, e: f64) -> usize {
        let n = self.v.len();
        let vals = &self.v.values;
        let m = match vals.iter().rposition(|&x| x < e) {
            Some(i) => i,
            None => vals
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(n / 2),
        };
        m.clamp(8, n - 9)
    }

    fn outward(&self, e: f64, upto: usize) -> Vec<f64> {
        let g = self.v.grid;
        let q: Vec<f64> = self.v.values[..=upto].iter().map(|x| x - e).collect();
        let y0 = self.origin.value(g.r(0), e);
        let y1 = self.origin.value(g.r(1), e);
        numerov_core(&q, None, g.h(), y0, y1).0
    }

    /// Number of samples appended beyond `r_max` for energy `e`.
    fn tail_points(&self, e: f64) -> usize {
        let gap = self.tail.c0 - e;
        if gap <= 0.0 {
            return 0;
        }
        let len = TAIL_DECAY / (2.0 * gap.sqrt());
        ((len / self.v.grid.h()).ceil() as usize).min(TAIL_MAX_POINTS)
    }

    /// Inward solution on `[from, n)` in increasing-r order, and the number of
    /// sign changes of the full inward solution (tail included).
    fn inward(&self, e: f64, from: usize) -> (Vec<f64>, usize) {
        let g = self.v.grid;
        let h = g.h();
        let n = self.v.len();
        let m_ext = self.tail_points(e);
        let mut q: Vec<f64> = Vec::with_capacity(n - from + m_ext);
        q.extend((1..=m_ext).rev().map(|j| self.tail.value(g.r_max() + j as f64 * h) - e));
        q.extend(self.v.values[from..].iter().rev().map(|x| x - e));
        let qmid = 0.5 * (q[0] + q[1]);
        let y1 = if qmid > 0.0 { (h * qmid.sqrt()).exp() } else { 1.0 };
        let (y, _) = numerov_core(&q, None, h, 1.0, y1);
        let nodes = sign_changes(&y[..y.len() - 1]);
        let mut inside = y[m_ext..].to_vec();
        inside.reverse();
        debug_assert_eq!(inside.len(), n - from);
        (inside, nodes)
    }

    fn state_at(&self, e: f64, m: usize) -> MatchState {
        let h2 = 2.0 * self.v.grid.h();
        let out = self.outward(e, m + 1);
        let (inn, nodes_in) = self.inward(e, m - 1);
        let (uo, duo) = (out[m], (out[m + 1] - out[m - 1]) / h2);
        let (ui, dui) = (inn[1], (inn[2] - inn[0]) / h2);
        let nodes_out = sign_changes(&out[..=m]);
        let wr = ui * duo - uo * dui;
        // beta_out < beta_in  <=>  wr / (uo ui) < 0
        let extra = usize::from(wr * uo * ui < 0.0);
        let norm = (uo * uo + (duo * self.v.grid.h()).powi(2)).sqrt()
            * (ui * ui + (dui * self.v.grid.h()).powi(2)).sqrt();
        MatchState {
            below: nodes_out + nodes_in + extra,
            det: if norm > 0.0 { wr / norm } else { 0.0 },
            m,
        }
    }

    fn state(&self, e: f64) -> MatchState {
        self.state_at(e, self.matching_index(e))
    }

    /// Energy of the level with `k` levels below it, within `(lo, hi)`.
    fn find_level(&self, k: usize, mut lo: f64, mut hi: f64, opts: &ShootingOptions) -> NumericsResult<f64> {
        let mut iterations = 0;
        let coarse = (opts.energy_tol * 100.0).max(1e-7);
        while hi - lo > coarse {
            iterations += 1;
            if iterations > opts.max_iterations {
                return Err(NumericsError::NonConvergence {
                    level: k,
                    iterations,
                });
            }
            let mid = 0.5 * (lo + hi);
            if self.state(mid).below > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // Illinois refinement on the matching determinant at a fixed matching point.
        let m = self.state(0.5 * (lo + hi)).m;
        let (mut flo, mut fhi) = (self.state_at(lo, m).det, self.state_at(hi, m).det);
        if flo * fhi > 0.0 {
            // determinant has no sign change here: finish by counting
            while hi - lo > opts.energy_tol {
                iterations += 1;
                if iterations > opts.max_iterations {
                    return Err(NumericsError::NonConvergence {
                        level: k,
                        iterations,
                    });
                }
                let mid = 0.5 * (lo + hi);
                if self.state(mid).below > k {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(0.5 * (lo + hi));
        }
        let mut side = 0i8;
        loop {
            iterations += 1;
            if iterations > opts.max_iterations {
                return Err(NumericsError::NonConvergence {
                    level: k,
                    iterations,
                });
            }
            let e = (lo * fhi - hi * flo) / (fhi - flo);
            let f = self.state_at(e, m).det;
            if f == 0.0 {
                return Ok(e);
            }
            if f * flo > 0.0 {
                lo = e;
                flo = f;
                if side == -1 {
                    fhi *= 0.5;
                }
                side = -1;
            } else {
                hi = e;
                fhi = f;
                if side == 1 {
                    flo *= 0.5;
                }
                side = 1;
            }
            if hi - lo < opts.energy_tol || (e - 0.5 * (lo + hi)).abs() < 0.5 * opts.energy_tol {
                return Ok(e);
            }
        }
    }

    /// Matched eigenfunction at `e`, normalized to unit L2 norm.
    fn eigenfunction(&self, e: f64) -> NumericsResult<SampledFunction> {
        let m = self.matching_index(e);
        let out = self.outward(e, m);
        let (inn, _) = self.inward(e, m);
        let scale = out[m] / inn[0];
        let mut values = out[..m].to_vec();
        values.extend(inn.iter().map(|y| y * scale));
        let mut f = SampledFunction::new(self.v.grid, values)?;
        let norm = f.l2_norm();
        let sign = if f.values[1] < 0.0 { -1.0 } else { 1.0 };
        f.values.iter_mut().for_each(|y| *y *= sign / norm);
        Ok(f)
    }
}

/// Bound-state energies of `-u'' + V u = E u` in `(e_lo, e_hi)`, at most
/// `max_levels` of them, in increasing order.
///
/// Levels are isolated by a Sturm count (nodes of the outward and inward
/// solutions plus the sign of the log-derivative mismatch at the matching
/// point), then refined on the matching determinant.
pub fn shoot_spectrum(
    v: &SampledFunction,
    e_lo: f64,
    e_hi: f64,
    max_levels: usize,
) -> NumericsResult<Spectrum> {
    shoot_spectrum_with(v, e_lo, e_hi, max_levels, &ShootingOptions::default())
}

pub fn shoot_spectrum_with(
    v: &SampledFunction,
    e_lo: f64,
    e_hi: f64,
    max_levels: usize,
    opts: &ShootingOptions,
) -> NumericsResult<Spectrum> {
    if e_lo >= e_hi || !e_lo.is_finite() || !e_hi.is_finite() {
        return Err(NumericsError::BracketExhausted { lo: e_lo, hi: e_hi });
    }
    let shooter = Shooter::new(v);
    let n_lo = shooter.state(e_lo).below;
    let n_hi = shooter.state(e_hi).below;
    let mut levels = Vec::new();
    let mut lo = e_lo;
    for k in n_lo..n_hi.min(n_lo + max_levels) {
        let e = shooter.find_level(k, lo, e_hi, opts)?;
        log::debug!("level {k}: E = {e:.12}");
        levels.push(Level {
            energy: e,
            node_count: k,
        });
        lo = e + opts.energy_tol;
    }
    Ok(Spectrum { levels })
}

/// Normalized eigenfunction of `V` at a (converged) eigenvalue `e`.
pub fn eigenfunction(v: &SampledFunction, e: f64) -> NumericsResult<SampledFunction> {
    Shooter::new(v).eigenfunction(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(r_min: f64, r_max: f64, n: usize) -> Grid {
        Grid::new(r_min, r_max, n).unwrap()
    }

    #[test]
    fn grid_construction() {
        let g = make_grid(1e-3, 40.0, 16001).unwrap();
        assert_eq!(g.h(), (40.0 - 0.001) / 16000.0);
        assert_eq!(g.r(16000), 40.0);
        assert!(make_grid(1.0, 2.0, 2).is_err());
        assert!(make_grid(-1.0, 2.0, 100).is_err());
        assert!(make_grid(2.0, 1.0, 100).is_err());
    }

    #[test]
    fn cumulative_integral_examples() {
        let g = grid(1e-3, 10.0, 4001);
        let one = SampledFunction::from_fn(g, |_| 1.0);
        let f = cumulative_integral(&one, Some(PowerLaw { coeff: 1.0, power: 0.0 })).unwrap();
        for (r, v) in g.points().zip(&f.values) {
            assert!((v - r).abs() < 1e-12);
        }
        let zero = SampledFunction::zeros(g);
        let f = cumulative_integral(&zero, None).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
        assert!(matches!(
            cumulative_integral(&one, Some(PowerLaw { coeff: 1.0, power: -1.0 })),
            Err(NumericsError::DivergentClosure(_))
        ));
    }

    #[test]
    fn tail_integral_matches_forward() {
        let g = grid(1e-3, 12.0, 2001);
        let f = SampledFunction::from_fn(g, |r| (-r).exp());
        let fwd = cumulative_integral(&f, None).unwrap();
        let tail = tail_integral(&f, 0.0).unwrap();
        let total = fwd.values[g.len() - 1];
        for i in 0..g.len() {
            assert!((fwd.values[i] + tail.values[i] - total).abs() < 1e-12);
        }
    }

    #[test]
    fn differentiate_examples() {
        let g = grid(1e-3, 5.0, 2001);
        let sq = SampledFunction::from_fn(g, |r| r * r);
        let d = differentiate(&sq);
        for (r, v) in g.points().zip(&d.values) {
            assert!((v - 2.0 * r).abs() < 1e-10);
        }
        let c = SampledFunction::from_fn(g, |_| 3.0);
        assert!(differentiate(&c).values.iter().all(|v| v.abs() < 1e-12));
        let ex = SampledFunction::from_fn(g, |r| (-2.0 * r).exp());
        let d = differentiate(&ex);
        for (r, v) in g.points().zip(&d.values) {
            assert!((v + 2.0 * (-2.0 * r).exp()).abs() < 1e-8);
        }
        let d2 = second_derivative(&ex);
        for (r, v) in g.points().zip(&d2.values) {
            assert!((v - 4.0 * (-2.0 * r).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_derivatives_of_polynomial() {
        let h = 0.1;
        let f: Vec<f64> = (0..7).map(|i| (1.0 + i as f64 * h).powi(3)).collect();
        let d = forward_derivatives(&f, h);
        assert!((d[1] - 3.0).abs() < 1e-10);
        assert!((d[2] - 6.0).abs() < 1e-8);
        assert!((d[3] - 6.0).abs() < 1e-6);
        assert!(d[4].abs() < 1e-4);
    }

    #[test]
    fn count_nodes_examples() {
        let g = grid(1e-3, 10.0, 1001);
        let s = SampledFunction::from_fn(g, f64::sin);
        assert_eq!(count_nodes(&s, true), 3);
        let neg = SampledFunction::from_fn(g, |r| -1.0 - r);
        assert_eq!(count_nodes(&neg, false), 0);
        // trailing numerical zero with the wrong sign
        let mut w = SampledFunction::from_fn(g, |r| (-r).exp());
        let last = w.len() - 1;
        w.values[last] = -1e-17;
        assert_eq!(count_nodes(&w, false), 1);
        assert_eq!(count_nodes(&w, true), 0);
    }

    #[test]
    fn free_particle_outward() {
        let g = grid(1e-3, 30.0, 12001);
        let v = SampledFunction::zeros(g);
        let r0 = g.r_min();
        let sol = numerov_solve(&v, 1.0, Direction::Outward, Start::ValueSlope(r0.sin(), r0.cos()))
            .unwrap();
        assert_eq!(sol.log_scale, 0.0);
        for (r, u) in g.points().zip(&sol.u.values) {
            assert!((u - r.sin()).abs() < 1e-9, "r = {r}: {u} vs {}", r.sin());
        }
    }

    #[test]
    fn decaying_inward() {
        let g = grid(1e-3, 20.0, 8001);
        let v = SampledFunction::zeros(g);
        let rm = g.r_max();
        let sol = numerov_solve(&v, -1.0, Direction::Inward, Start::ValueSlope((-rm).exp(), -(-rm).exp()))
            .unwrap();
        for (r, u) in g.points().zip(&sol.u.values) {
            let exact = (-r).exp();
            assert!(((u - exact) / exact).abs() < 1e-8);
        }
    }

    #[test]
    fn overflow_guard_rescales() {
        let g = grid(1e-3, 400.0, 40001);
        let v = SampledFunction::zeros(g);
        let sol = numerov_solve(&v, -1.0, Direction::Outward, Start::ValueSlope(1.0, 1.0)).unwrap();
        assert!(sol.log_scale > 0.0);
        assert!(sol.u.values.iter().all(|x| x.is_finite()));
        let last = sol.u.values[g.len() - 1].ln() + sol.log_scale;
        assert!((last - (400.0 - 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn inhomogeneous_double_integration() {
        let g = grid(1e-3, 5.0, 1001);
        let v = SampledFunction::zeros(g);
        let one = SampledFunction::from_fn(g, |_| 1.0);
        let sol = solve_inhomogeneous(&v, 0.0, &one, Start::ValueSlope(0.0, 0.0)).unwrap();
        for (r, y) in g.points().zip(&sol.u.values) {
            let exact = -(r - g.r_min()).powi(2) / 2.0;
            assert!((y - exact).abs() < 1e-11 * (1.0 + exact.abs()), "r = {r}: {y} vs {exact}");
        }
    }

    #[test]
    fn inhomogeneous_zero_source_reduces_to_numerov() {
        let g = grid(1e-3, 20.0, 4001);
        let v = SampledFunction::from_fn(g, |r| -2.0 / r);
        let zero = SampledFunction::zeros(g);
        let start = Start::ValueSlope(0.3, -0.2);
        let a = numerov_solve(&v, -0.5, Direction::Outward, start).unwrap();
        let b = solve_inhomogeneous(&v, -0.5, &zero, start).unwrap();
        for (x, y) in a.u.values.iter().zip(&b.u.values) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn empty_spectrum_for_free_particle() {
        let g = grid(1e-3, 40.0, 4001);
        let v = SampledFunction::zeros(g);
        let s = shoot_spectrum(&v, -2.0, -0.01, 4).unwrap();
        assert!(s.is_empty());
        assert!(matches!(
            shoot_spectrum(&v, -0.01, -2.0, 4),
            Err(NumericsError::BracketExhausted { .. })
        ));
    }

    #[test]
    fn csv_and_json_round_trip() {
        let g = grid(1e-3, 2.0, 17);
        let f = SampledFunction::from_fn(g, |r| (r * 1.3).sin() / 3.0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf, "value").unwrap();
        let back = SampledFunction::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values, f.values);
        let json = f.to_json();
        assert!(json.starts_with("{\"grid\":{\"r_min\""));
        assert_eq!(SampledFunction::from_json(&json).unwrap(), f);
    }
}
