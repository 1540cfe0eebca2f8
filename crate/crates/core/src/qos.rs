//! Nested ADMM for the penalized relaxed QoS problem
//!
//! ```text
//! minimize <Lambda, W>  subject to  tr(H_k W) >= gamma_k,  W >= 0
//! ```
//!
//! The solver works on the dual `max y^T gamma s.t. H^*(y) + S = Lambda,
//! S >= 0, y >= 0`. Outer iterations update `y`, `S` and the scaled
//! multiplier `W` (which converges to the primal solution divided by `rho`).
//! The `y` block is itself solved by a fixed number of inner ADMM steps on
//! the splitting `y = z, z >= 0`, all of which reuse one Cholesky
//! factorization of `rho H H^H + mu I`.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermitian::{psd_project, HermitianMatrix, MeasurementMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QosSolverConfig {
    /// Outer augmented-Lagrangian penalty.
    pub rho: f64,
    /// Inner penalty for the `y = z` splitting.
    pub mu: f64,
    /// Inner iterations per outer `y`-update.
    pub inner_iters: usize,
    pub eps_dual: f64,
    pub eps_prim: f64,
    pub max_outer_iters: usize,
    /// Zero `y`, `z`, `g` before every inner loop instead of carrying them
    /// over from the previous outer iteration.
    pub reset_inner: bool,
}

impl Default for QosSolverConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            mu: 1e5,
            inner_iters: 50,
            eps_dual: 1e-5,
            eps_prim: 1e-4,
            max_outer_iters: 1000,
            reset_inner: false,
        }
    }
}

impl QosSolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("mu", self.mu),
            ("eps_dual", self.eps_dual),
            ("eps_prim", self.eps_prim),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.inner_iters == 0 || self.max_outer_iters == 0 {
            return Err(Error::Config("iteration counts must be positive".into()));
        }
        Ok(())
    }
}

/// ADMM iterates plus the factorization of `rho H H^H + mu I`.
#[derive(Debug, Clone)]
pub struct SolverState {
    /// Scaled multiplier; `rho * w` is the primal precoding matrix.
    pub w: HermitianMatrix,
    pub y: DVector<f64>,
    pub s: HermitianMatrix,
    pub z: DVector<f64>,
    pub g: DVector<f64>,
    system: Cholesky<f64, Dyn>,
    rho: f64,
    mu: f64,
}

impl SolverState {
    /// Primal precoding matrix `rho * w`.
    pub fn primal_w(&self) -> HermitianMatrix {
        self.w.scale(self.rho)
    }

    /// Explicit `(rho H H^H + mu I)^{-1}`, for inspection only.
    pub fn cached_inverse(&self) -> DMatrix<f64> {
        self.system.inverse()
    }

    pub fn system_matrix(&self, map: &MeasurementMap) -> DMatrix<f64> {
        system_matrix(map, self.rho, self.mu)
    }

    /// Multiplies the primal iterate by `factor` (warm start for a new SNR
    /// target).
    pub fn scale_w(&mut self, factor: f64) {
        self.w.scale_mut(factor);
    }

    pub fn reset_inner(&mut self) {
        self.y.fill(0.0);
        self.z.fill(0.0);
        self.g.fill(0.0);
    }
}

fn system_matrix(map: &MeasurementMap, rho: f64, mu: f64) -> DMatrix<f64> {
    let k = map.num_ues();
    map.gram() * rho + DMatrix::identity(k, k) * mu
}

/// Builds the initial iterates: `W = warm_w` (or `(P_T / N) I`),
/// `S = (P_T / N) I`, `y = z = g = 0`, and factors the inner system once.
pub fn init_state(
    map: &MeasurementMap,
    lambda: &HermitianMatrix,
    config: &QosSolverConfig,
    warm_w: Option<&HermitianMatrix>,
    power_budget: f64,
) -> Result<SolverState> {
    config.validate()?;
    let n = map.dim();
    if lambda.dim() != n {
        return Err(Error::InvalidInput(format!(
            "penalty matrix is {}x{}, channels have N = {n}",
            lambda.dim(),
            lambda.dim()
        )));
    }
    if !(power_budget > 0.0 && power_budget.is_finite()) {
        return Err(Error::InvalidInput(format!("power budget must be positive, got {power_budget}")));
    }
    let w = match warm_w {
        Some(w) if w.dim() != n => {
            return Err(Error::InvalidInput("warm start has the wrong dimension".into()));
        }
        Some(w) => w.scale(1.0 / config.rho),
        None => HermitianMatrix::scaled_identity(n, power_budget / n as f64 / config.rho),
    };
    let system = Cholesky::new(system_matrix(map, config.rho, config.mu)).ok_or_else(|| {
        Error::NumericalCorruption("rho H H^H + mu I is not numerically positive definite".into())
    })?;
    let k = map.num_ues();
    Ok(SolverState {
        w,
        y: DVector::zeros(k),
        s: HermitianMatrix::scaled_identity(n, power_budget / n as f64),
        z: DVector::zeros(k),
        g: DVector::zeros(k),
        system,
        rho: config.rho,
        mu: config.mu,
    })
}

fn check_gamma(map: &MeasurementMap, gamma: &DVector<f64>) -> Result<()> {
    if gamma.len() != map.num_ues() {
        return Err(Error::InvalidInput(format!(
            "{} SNR targets for {} UEs",
            gamma.len(),
            map.num_ues()
        )));
    }
    if gamma.iter().any(|&g| !(g >= 0.0 && g.is_finite())) {
        return Err(Error::InvalidInput("SNR targets must be finite and nonnegative".into()));
    }
    Ok(())
}

/// Runs the `T` inner steps of the `y`-update:
///
/// ```text
/// y <- (rho H H^H + mu I)^{-1} (b + mu (z - g)),   b = gamma - rho H(S - Lambda + W)
/// z <- max(y + g, 0)
/// g <- g + y - z
/// ```
///
/// `b` is computed once per call.
pub fn inner_y_update(
    state: &mut SolverState,
    map: &MeasurementMap,
    gamma: &DVector<f64>,
    lambda: &HermitianMatrix,
    config: &QosSolverConfig,
) -> Result<()> {
    let offset = &(&state.s - lambda) + &state.w;
    let b = gamma - map.apply(&offset)? * config.rho;
    if config.reset_inner {
        state.reset_inner();
    }
    let mut rhs = DVector::zeros(b.len());
    for _ in 0..config.inner_iters {
        rhs.copy_from(&b);
        rhs.axpy(config.mu, &state.z, 1.0);
        rhs.axpy(-config.mu, &state.g, 1.0);
        state.system.solve_mut(&mut rhs);
        state.y.copy_from(&rhs);
        for i in 0..state.z.len() {
            state.z[i] = (state.y[i] + state.g[i]).max(0.0);
            state.g[i] += state.y[i] - state.z[i];
        }
    }
    Ok(())
}

/// Relative changes used by the stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `|tr(W - W_prev)| / tr(W)`.
    pub dual: f64,
    /// `||S - S_prev||_F / ||S||_F`.
    pub prim: f64,
}

impl Residuals {
    pub fn converged(&self, config: &QosSolverConfig) -> bool {
        self.dual < config.eps_dual && self.prim < config.eps_prim
    }
}

fn relative(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

/// One outer step: `y`-update, `S = proj_psd(Lambda - H^*(y) - W)`, then
/// `W <- W + H^*(y) + S - Lambda`.
pub fn outer_iteration(
    state: &mut SolverState,
    map: &MeasurementMap,
    gamma: &DVector<f64>,
    lambda: &HermitianMatrix,
    config: &QosSolverConfig,
) -> Result<Residuals> {
    let trace_prev = state.w.trace();
    let s_prev = state.s.clone();

    inner_y_update(state, map, gamma, lambda, config)?;
    let hy = map.apply_adjoint(&state.y)?;
    let x = &(lambda - &hy) - &state.w;
    state.s = psd_project(&x)?;
    // W + H^*(y) + S - Lambda = S - X
    state.w = &state.s - &x;
    if !state.w.is_finite() {
        return Err(Error::NumericalCorruption("ADMM iterate became non-finite".into()));
    }

    let trace = state.w.trace();
    Ok(Residuals {
        dual: relative((trace - trace_prev).abs(), trace),
        prim: relative((&state.s - &s_prev).frobenius_norm(), state.s.frobenius_norm()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub dual_residual: f64,
    pub primal_residual: f64,
    pub trace_w: f64,
    pub dual_objective: f64,
}

pub fn write_trace_csv<W: Write>(rows: &[IterationTrace], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct QosSolution {
    /// Primal precoding matrix (not projected onto the PSD cone).
    pub w: HermitianMatrix,
    pub objective_trace: f64,
    /// `y^T gamma`.
    pub dual_objective: f64,
    pub outer_iters_used: usize,
    pub converged: bool,
    pub residuals: Residuals,
}

/// Iterates [`outer_iteration`] from `state` until both stopping
/// conditions hold or the iteration cap is reached. A run that hits the cap
/// is returned with `converged == false`.
pub fn solve_qos(
    map: &MeasurementMap,
    gamma: &DVector<f64>,
    lambda: &HermitianMatrix,
    config: &QosSolverConfig,
    state: &mut SolverState,
    mut trace: Option<&mut Vec<IterationTrace>>,
) -> Result<QosSolution> {
    config.validate()?;
    check_gamma(map, gamma)?;
    if lambda.dim() != map.dim() || state.w.dim() != map.dim() || state.y.len() != map.num_ues() {
        return Err(Error::InvalidInput("solver state does not match the problem".into()));
    }
    let mut residuals = Residuals { dual: f64::INFINITY, prim: f64::INFINITY };
    let mut used = 0;
    let mut converged = false;
    while used < config.max_outer_iters {
        residuals = outer_iteration(state, map, gamma, lambda, config)?;
        used += 1;
        if let Some(rows) = trace.as_deref_mut() {
            rows.push(IterationTrace {
                iteration: used,
                dual_residual: residuals.dual,
                primal_residual: residuals.prim,
                trace_w: state.w.trace() * config.rho,
                dual_objective: state.y.dot(gamma),
            });
        }
        if residuals.converged(config) {
            converged = true;
            break;
        }
    }
    let w = state.primal_w();
    Ok(QosSolution {
        objective_trace: w.trace(),
        w,
        dual_objective: state.y.dot(gamma),
        outer_iters_used: used,
        converged,
        residuals,
    })
}

/// Cold-started solve: builds the state and runs [`solve_qos`].
pub fn solve_qos_fresh(
    map: &MeasurementMap,
    gamma: &DVector<f64>,
    lambda: &HermitianMatrix,
    config: &QosSolverConfig,
    warm_w: Option<&HermitianMatrix>,
    power_budget: f64,
) -> Result<QosSolution> {
    let mut state = init_state(map, lambda, config, warm_w, power_budget)?;
    solve_qos(map, gamma, lambda, config, &mut state, None)
}

/// `SNR_k = tr(H_k W)`.
pub fn snr_of(w: &HermitianMatrix, map: &MeasurementMap) -> Result<DVector<f64>> {
    let snr = map.apply(w)?;
    let scale = snr.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    if let Some(bad) = snr.iter().find(|&&x| x < -1e-9 * scale) {
        return Err(Error::NumericalCorruption(format!("negative SNR {bad:e}")));
    }
    Ok(snr)
}

/// `SE_k = log2(1 + SNR_k)`.
pub fn se_of(snr: &[f64]) -> Vec<f64> {
    snr.iter().map(|&x| (1.0 + x.max(0.0)).log2()).collect()
}
