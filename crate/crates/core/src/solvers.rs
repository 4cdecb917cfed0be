//! Viscous Burgers and Poisson benchmarks.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analysis::{l2_norm, ratio_r, ConvergenceRow, ConvergenceTable};
use crate::compact::{OptimizerConfig, Scheme};
use crate::error::{Error, Result};
use crate::geometry::{generate_nodes, DomainSpec, NodeSet};
use crate::global::{apply_operator, assemble_global, assemble_poisson, solve_poisson, Field, GlobalOperator};
use crate::krylov::SolverConfig;
use crate::labfm::OperatorKind;

/// How the diffusive timestep candidate scales with the Reynolds number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtConvention {
    /// `cfl_diff · min(s²) · Re`.
    Viscous,
    /// `cfl_diff · min(s²) / Re`.
    PaperExact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurgersConfig {
    pub re: f64,
    pub s: f64,
    pub scheme: char,
    pub seed: u64,
    pub t_end: f64,
    pub cfl_adv: f64,
    pub cfl_diff: f64,
    pub series_terms: usize,
    /// Spacing in time between recorded norms.
    pub output_interval: f64,
    pub dt_convention: DtConvention,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        Self {
            re: 100.0,
            s: 1.0 / 40.0,
            scheme: 'a',
            seed: 7,
            t_end: 1.0,
            cfl_adv: 0.1,
            cfl_diff: 0.05,
            series_terms: 30,
            output_interval: 0.01,
            dt_convention: DtConvention::Viscous,
        }
    }
}

impl BurgersConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.re, self.s, self.t_end, self.cfl_adv, self.cfl_diff, self.output_interval];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("Burgers settings must be positive and finite: {self:?}")));
        }
        if self.series_terms == 0 || self.series_terms > MAX_BESSEL_ORDER as usize {
            return Err(Error::Config(format!(
                "series_terms must lie in 1..={MAX_BESSEL_ORDER}, got {}",
                self.series_terms
            )));
        }
        Scheme::from_label(self.scheme)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BurgersState {
    pub u: Field,
    pub v: Field,
    pub t: f64,
}

/// The three operators a Burgers step needs, all on the same node set.
#[derive(Debug, Clone)]
pub struct BurgersOperators {
    pub ddx: GlobalOperator,
    pub ddy: GlobalOperator,
    pub laplacian: GlobalOperator,
}

impl BurgersOperators {
    pub fn assemble(nodes: &NodeSet, scheme: Scheme, cfg: &OptimizerConfig) -> Result<Self> {
        let (ddx, _) = assemble_global(nodes, scheme, OperatorKind::Ddx, cfg)?;
        let (ddy, _) = assemble_global(nodes, scheme, OperatorKind::Ddy, cfg)?;
        let (laplacian, _) = assemble_global(nodes, scheme, OperatorKind::Laplacian, cfg)?;
        Ok(Self { ddx, ddy, laplacian })
    }
}

fn derivatives(ops: &BurgersOperators, f: &Field, solver: &SolverConfig) -> Result<(Field, Field, Field)> {
    let ((dx, dy), lap) = rayon::join(
        || rayon::join(|| apply_operator(&ops.ddx, f, solver), || apply_operator(&ops.ddy, f, solver)),
        || apply_operator(&ops.laplacian, f, solver),
    );
    Ok((dx?, dy?, lap?))
}

/// `(du/dt, dv/dt)` for `u_t + u u_x + v u_y = ∇²u / Re` and likewise for `v`.
pub fn burgers_rhs(
    state: &BurgersState,
    ops: &BurgersOperators,
    re: f64,
    solver: &SolverConfig,
) -> Result<(Field, Field)> {
    let n = ops.ddx.dim();
    if state.u.len() != n || state.v.len() != n {
        return Err(Error::Dimension(format!("state of length {} on {n} nodes", state.u.len())));
    }
    let (ux, uy, ulap) = derivatives(ops, &state.u, solver)?;
    let (vx, vy, vlap) = derivatives(ops, &state.v, solver)?;
    let (u, v) = (&state.u.values, &state.v.values);
    let du = (0..n)
        .map(|i| -(u[i] * ux.values[i] + v[i] * uy.values[i]) + ulap.values[i] / re)
        .collect();
    let dv = (0..n)
        .map(|i| -(u[i] * vx.values[i] + v[i] * vy.values[i]) + vlap.values[i] / re)
        .collect();
    Ok((Field::new(du), Field::new(dv)))
}

/// Diffusive timestep candidate under the chosen convention.
pub fn diffusive_dt(min_spacing: f64, re: f64, cfl_diff: f64, convention: DtConvention) -> f64 {
    let base = cfl_diff * min_spacing * min_spacing;
    match convention {
        DtConvention::Viscous => base * re,
        DtConvention::PaperExact => base / re,
    }
}

/// `min(cfl_adv · min(s) / max|u|, dt_diff)`.
pub fn compute_dt(state: &BurgersState, min_spacing: f64, cfg: &BurgersConfig) -> f64 {
    let umax = state
        .u
        .values
        .iter()
        .chain(&state.v.values)
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let advective = if umax > 0.0 {
        cfg.cfl_adv * min_spacing / umax
    } else {
        f64::INFINITY
    };
    advective.min(diffusive_dt(min_spacing, cfg.re, cfg.cfl_diff, cfg.dt_convention))
}

fn axpy(base: &[f64], k: &[f64], h: f64) -> Vec<f64> {
    base.iter().zip(k).map(|(b, k)| b + h * k).collect()
}

/// Classical four-stage Runge–Kutta step.
pub fn rk4_step<F>(state: &BurgersState, dt: f64, mut rhs: F) -> Result<BurgersState>
where
    F: FnMut(&BurgersState) -> Result<(Field, Field)>,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("timestep must be positive, got {dt}")));
    }
    let stage = |h: f64, k: &(Field, Field), t: f64| BurgersState {
        u: Field::new(axpy(&state.u.values, &k.0.values, h)),
        v: Field::new(axpy(&state.v.values, &k.1.values, h)),
        t,
    };
    let k1 = rhs(state)?;
    let k2 = rhs(&stage(0.5 * dt, &k1, state.t + 0.5 * dt))?;
    let k3 = rhs(&stage(0.5 * dt, &k2, state.t + 0.5 * dt))?;
    let k4 = rhs(&stage(dt, &k3, state.t + dt))?;
    let combine = |y: &[f64], a: &Field, b: &Field, c: &Field, d: &Field| -> Vec<f64> {
        (0..y.len())
            .map(|i| y[i] + dt / 6.0 * (a.values[i] + 2.0 * b.values[i] + 2.0 * c.values[i] + d.values[i]))
            .collect()
    };
    let next = BurgersState {
        u: Field::new(combine(&state.u.values, &k1.0, &k2.0, &k3.0, &k4.0)),
        v: Field::new(combine(&state.v.values, &k1.1, &k2.1, &k3.1, &k4.1)),
        t: state.t + dt,
    };
    if next.u.values.iter().chain(&next.v.values).any(|x| !x.is_finite()) {
        return Err(Error::Divergence { time: next.t });
    }
    Ok(next)
}

pub const MAX_BESSEL_ORDER: u32 = 40;
pub const MAX_BESSEL_ARG: f64 = 50.0;

/// Modified Bessel function of the first kind `I_n(z)` by its power series.
pub fn bessel_i(n: u32, z: f64) -> Result<f64> {
    if n > MAX_BESSEL_ORDER || !(0.0..=MAX_BESSEL_ARG).contains(&z) {
        return Err(Error::Domain(format!(
            "I_{n}({z}) outside n ≤ {MAX_BESSEL_ORDER}, 0 ≤ z ≤ {MAX_BESSEL_ARG}"
        )));
    }
    let half = 0.5 * z;
    let mut term = 1.0;
    for k in 1..=n {
        term *= half / k as f64;
    }
    if term == 0.0 {
        return Ok(0.0);
    }
    let q = half * half;
    let mut sum = term;
    // Every term is positive; stop once past the peak and negligible.
    for k in 1..=400u32 {
        term *= q / (k as f64 * (k + n) as f64);
        sum += term;
        if k as f64 > half && term <= sum * 1e-17 {
            break;
        }
    }
    Ok(sum)
}

/// Fourier coefficients `A_0, A_1, …, A_terms` of the initial heat-equation
/// field, each carrying the `e^{−z}` scaling.
pub fn cole_hopf_coefficients(re: f64, terms: usize) -> Result<Vec<f64>> {
    if !(re > 0.0) {
        return Err(Error::Domain(format!("Reynolds number must be positive, got {re}")));
    }
    if terms > MAX_BESSEL_ORDER as usize {
        return Err(Error::Domain(format!("at most {MAX_BESSEL_ORDER} series terms")));
    }
    let z = re / (4.0 * PI);
    let scale = (-z).exp();
    (0..=terms)
        .map(|n| {
            let i = bessel_i(n as u32, z)?;
            Ok(if n == 0 { scale * i } else { 2.0 * scale * i })
        })
        .collect()
}

fn cole_hopf_series(coeffs: &[f64], x: f64, t: f64, re: f64) -> Result<f64> {
    let mut num = 0.0;
    let mut den = coeffs[0];
    for (n, a) in coeffs.iter().enumerate().skip(1) {
        let nf = n as f64;
        let decay = (-4.0 * nf * nf * PI * PI * t / re).exp();
        let (s, c) = (2.0 * nf * PI * x).sin_cos();
        num += nf * a * s * decay;
        den += a * c * decay;
    }
    if den.abs() < 1e-300 {
        return Err(Error::Domain(format!("Cole–Hopf denominator vanished at x = {x}, t = {t}")));
    }
    Ok(4.0 * PI / re * num / den)
}

/// Exact solution for `u(x, 0) = sin(2πx)` on the periodic unit interval.
pub fn burgers_analytic(x: f64, t: f64, re: f64, terms: usize) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    cole_hopf_series(&cole_hopf_coefficients(re, terms)?, x, t, re)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BurgersRun {
    /// `(t, relative L2 error of u)` at every output time.
    pub series: Vec<(f64, f64)>,
    pub max_l2: f64,
    pub steps: usize,
    pub nodes: usize,
    /// Largest `|Σu(t) − Σu(0)| / (N max|u(0)|)`.
    pub momentum_drift: f64,
    pub max_abs_v: f64,
    /// Time at which the integration blew up, if it did.
    pub diverged_at: Option<f64>,
    pub dt_convention: DtConvention,
}

impl BurgersRun {
    /// `t,l2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,l2\n");
        for (t, l2) in &self.series {
            let _ = writeln!(out, "{t:.16e},{l2:.16e}");
        }
        out
    }
}

/// Integrates on a prepared node set with prebuilt operators.
pub fn run_burgers_on(
    nodes: &NodeSet,
    ops: &BurgersOperators,
    cfg: &BurgersConfig,
    solver: &SolverConfig,
) -> Result<BurgersRun> {
    cfg.validate()?;
    let coeffs = cole_hopf_coefficients(cfg.re, cfg.series_terms)?;
    let analytic = |t: f64| -> Result<Field> {
        let values = nodes
            .positions
            .iter()
            .map(|p| cole_hopf_series(&coeffs, p[0], t, cfg.re))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Field::new(values))
    };
    let n = nodes.len();
    let mut state = BurgersState {
        u: Field::from_fn(nodes, |x, _| (2.0 * PI * x).sin()),
        v: Field::zeros(n),
        t: 0.0,
    };
    let min_spacing = nodes.min_spacing();
    let momentum0: f64 = state.u.values.iter().sum();
    let umax0 = state.u.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut run = BurgersRun {
        series: Vec::new(),
        max_l2: 0.0,
        steps: 0,
        nodes: n,
        momentum_drift: 0.0,
        max_abs_v: 0.0,
        diverged_at: None,
        dt_convention: cfg.dt_convention,
    };
    let outputs = (cfg.t_end / cfg.output_interval - 1e-9).ceil() as usize;
    for k in 1..=outputs {
        let t_out = (k as f64 * cfg.output_interval).min(cfg.t_end);
        while state.t < t_out * (1.0 - 1e-12) {
            let dt = compute_dt(&state, min_spacing, cfg).min(t_out - state.t);
            match rk4_step(&state, dt, |s| burgers_rhs(s, ops, cfg.re, solver)) {
                Ok(next) => state = next,
                Err(Error::Divergence { time }) => {
                    run.diverged_at = Some(time);
                    return Ok(run);
                }
                Err(e) => return Err(e),
            }
            run.steps += 1;
            if state.u.values.iter().any(|x| x.abs() > 1e6) {
                run.diverged_at = Some(state.t);
                return Ok(run);
            }
        }
        state.t = t_out;
        let l2 = l2_norm(&state.u, &analytic(t_out)?)?;
        run.series.push((t_out, l2));
        run.max_l2 = run.max_l2.max(l2);
        let momentum: f64 = state.u.values.iter().sum();
        run.momentum_drift = run.momentum_drift.max((momentum - momentum0).abs() / (n as f64 * umax0));
        run.max_abs_v = run.max_abs_v.max(state.v.values.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    }
    Ok(run)
}

/// Generates the periodic cloud, builds the operators and integrates.
pub fn run_burgers(cfg: &BurgersConfig, optimizer: &OptimizerConfig, solver: &SolverConfig) -> Result<BurgersRun> {
    cfg.validate()?;
    let nodes = generate_nodes(&DomainSpec::unit_periodic(), cfg.s, cfg.seed)?;
    let ops = BurgersOperators::assemble(&nodes, Scheme::from_label(cfg.scheme)?, optimizer)?;
    run_burgers_on(&nodes, &ops, cfg, solver)
}

/// `sin(2πx) sin(2πy)`.
pub fn poisson_solution(x: f64, y: f64) -> f64 {
    (2.0 * PI * x).sin() * (2.0 * PI * y).sin()
}

/// `∇²` of [`poisson_solution`].
pub fn poisson_source(x: f64, y: f64) -> f64 {
    -8.0 * PI * PI * poisson_solution(x, y)
}

/// Relative L2 error of one scheme on the Poisson problem over `nodes`.
pub fn poisson_error(
    nodes: &NodeSet,
    scheme: Scheme,
    optimizer: &OptimizerConfig,
    solver: &SolverConfig,
) -> Result<f64> {
    let system = assemble_poisson(nodes, scheme, optimizer)?;
    let f = Field::from_fn(nodes, poisson_source);
    let exact = Field::from_fn(nodes, poisson_solution);
    let (phi, _) = solve_poisson(&system, &f, &exact, solver)?;
    l2_norm(&phi, &exact)
}

/// Explicit-versus-compact Poisson errors on the punctured square.
pub fn run_poisson(
    explicit: Scheme,
    compact: Scheme,
    resolutions: &[f64],
    seed: u64,
    optimizer: &OptimizerConfig,
    solver: &SolverConfig,
) -> Result<ConvergenceTable> {
    let domain = DomainSpec::punctured_unit_square();
    let mut rows = Vec::with_capacity(resolutions.len());
    for &s in resolutions {
        let nodes = generate_nodes(&domain, s, seed)?;
        let l2_explicit = poisson_error(&nodes, explicit, optimizer, solver)?;
        let l2_compact = poisson_error(&nodes, compact, optimizer, solver)?;
        rows.push(ConvergenceRow {
            s,
            nodes: nodes.len(),
            l2_explicit,
            l2_compact,
            r: ratio_r(l2_compact, l2_explicit)?,
        });
    }
    Ok(ConvergenceTable {
        kind: OperatorKind::Laplacian,
        explicit,
        compact,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_at_zero() {
        assert_eq!(bessel_i(0, 0.0).unwrap(), 1.0);
        for n in 1..=5 {
            assert_eq!(bessel_i(n, 0.0).unwrap(), 0.0);
        }
        assert!(bessel_i(41, 1.0).is_err());
        assert!(bessel_i(0, 50.5).is_err());
        assert!(bessel_i(0, -1.0).is_err());
    }

    #[test]
    fn bessel_recurrence() {
        // I_{n−1}(z) − I_{n+1}(z) = (2n/z) I_n(z)
        for &z in &[0.5, 7.957747154594767, 30.0] {
            for n in 1..20 {
                let lhs = bessel_i(n - 1, z).unwrap() - bessel_i(n + 1, z).unwrap();
                let rhs = 2.0 * n as f64 / z * bessel_i(n, z).unwrap();
                assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300), "n={n} z={z}");
            }
        }
    }

    #[test]
    fn analytic_solution_basics() {
        for t in [0.0, 0.1, 0.5] {
            assert_eq!(burgers_analytic(0.0, t, 100.0, 30).unwrap(), 0.0);
        }
        for x in [0.1, 0.3, 0.7] {
            let u = burgers_analytic(x, 1e-6, 100.0, 30).unwrap();
            assert!((u - (2.0 * PI * x).sin()).abs() < 1e-3);
            assert!(burgers_analytic(x, 200.0, 100.0, 30).unwrap().abs() < 1e-10);
        }
        assert!(burgers_analytic(0.2, -1.0, 100.0, 30).is_err());
    }

    #[test]
    fn dt_conventions() {
        let cfg = BurgersConfig::default();
        let state = BurgersState {
            u: Field::new(vec![1.0, -0.5]),
            v: Field::zeros(2),
            t: 0.0,
        };
        let s = 1.0 / 40.0;
        assert!((diffusive_dt(s, 100.0, 0.05, DtConvention::Viscous) - 0.003125).abs() < 1e-15);
        assert!((diffusive_dt(s, 100.0, 0.05, DtConvention::PaperExact) - 3.125e-7).abs() < 1e-20);
        assert!((compute_dt(&state, s, &cfg) - 2.5e-3).abs() < 1e-15);
        let still = BurgersState {
            u: Field::zeros(2),
            v: Field::zeros(2),
            t: 0.0,
        };
        assert!((compute_dt(&still, s, &cfg) - 0.003125).abs() < 1e-15);
    }

    #[test]
    fn rk4_scalar_decay() {
        let state = BurgersState {
            u: Field::new(vec![1.0]),
            v: Field::new(vec![0.0]),
            t: 0.0,
        };
        let dt = 0.1;
        let next = rk4_step(&state, dt, |s| Ok((Field::new(vec![-s.u.values[0]]), Field::zeros(1)))).unwrap();
        let poly = 1.0 - dt + dt * dt / 2.0 - dt.powi(3) / 6.0 + dt.powi(4) / 24.0;
        assert!((next.u.values[0] - poly).abs() < 1e-15);
        assert!((next.u.values[0] - (-dt).exp()).abs() < dt.powi(5));
        assert_eq!(next.t, dt);
        let same = rk4_step(&state, dt, |_| Ok((Field::zeros(1), Field::zeros(1)))).unwrap();
        assert_eq!(same.u, state.u);
        let blown = rk4_step(&state, dt, |_| Ok((Field::new(vec![f64::NAN]), Field::zeros(1))));
        assert!(matches!(blown, Err(Error::Divergence { .. })));
    }

    #[test]
    fn series_truncation_is_converged() {
        for t in [0.01, 0.2, 1.0] {
            for x in [0.05, 0.25, 0.45, 0.8] {
                let a = burgers_analytic(x, t, 100.0, 30).unwrap();
                let b = burgers_analytic(x, t, 100.0, 40).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
