//! Max-min fair multicast beamforming.
//!
//! The common SNR target `gamma_c` is located by bisection, using the QoS
//! solver as a feasibility oracle (`tr(W) <= P_T`). Each QoS solve is warm
//! started from the previous one with `W` rescaled by `gamma_c / gamma_prev`.
//! While the relaxed solution has numerical rank above one, its second
//! eigen-direction is added to the penalty matrix
//! `Lambda = c I + sum_r zeta_r u_r u_r^H` and the bisection is repeated on
//! the narrow interval `[kappa gamma_c, gamma_c]`. The final beamformer is
//! the principal eigenvector of the last solution, scaled to full power.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::hermitian::{psd_project, rank_from_spectrum, second_eigpair, CVector, HermitianMatrix, MeasurementMap};
use crate::qos::{init_state, se_of, solve_qos, IterationTrace, QosSolverConfig, SolverState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmfConfig {
    /// `P_T` in watts.
    pub power_budget: f64,
    /// Bisection stops once the interval is no wider than this (SNR units).
    pub bisection_tol: f64,
    /// Elimination rounds re-bisect on `[kappa gamma_c, gamma_c]`.
    pub elimination_kappa: f64,
    /// The `c` in `Lambda = c I + ...`.
    pub penalty_weight: f64,
    /// Defaults to `N - 1`.
    pub max_elimination_rounds: Option<usize>,
    /// `lambda_2 / lambda_1` below this counts as rank one.
    pub rank1_threshold: f64,
    /// Zero the inner dual variables before every QoS solve.
    pub reset_between_solves: bool,
    pub qos: QosSolverConfig,
}

impl Default for MmfConfig {
    fn default() -> Self {
        Self {
            power_budget: 40.0,
            bisection_tol: 0.1,
            elimination_kappa: 0.9,
            penalty_weight: 5.0,
            max_elimination_rounds: None,
            rank1_threshold: 1e-3,
            reset_between_solves: false,
            qos: QosSolverConfig::default(),
        }
    }
}

impl MmfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.power_budget > 0.0 && self.power_budget.is_finite()) {
            return Err(Error::Config(format!("power budget must be positive, got {}", self.power_budget)));
        }
        if !(self.bisection_tol > 0.0) {
            return Err(Error::Config("bisection tolerance must be positive".into()));
        }
        if !(self.elimination_kappa > 0.0 && self.elimination_kappa < 1.0) {
            return Err(Error::Config(format!("kappa must lie in (0, 1), got {}", self.elimination_kappa)));
        }
        if !(self.penalty_weight >= 1.0 && self.penalty_weight.is_finite()) {
            return Err(Error::Config(format!("penalty weight must be >= 1, got {}", self.penalty_weight)));
        }
        if !(self.rank1_threshold > 0.0 && self.rank1_threshold < 1.0) {
            return Err(Error::Config("rank-one threshold must lie in (0, 1)".into()));
        }
        self.qos.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyTerm {
    pub zeta: f64,
    pub direction: CVector,
}

/// `Lambda = c I + sum_r zeta_r u_r u_r^H`, rebuilt from its terms on every
/// change.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    base_weight: f64,
    terms: Vec<PenaltyTerm>,
    assembled: HermitianMatrix,
}

impl PenaltyMatrix {
    pub fn new(base_weight: f64, n: usize) -> Result<Self> {
        if !(base_weight >= 1.0 && base_weight.is_finite()) {
            return Err(Error::InvalidInput(format!("penalty weight must be >= 1, got {base_weight}")));
        }
        if n == 0 {
            return Err(Error::InvalidInput("penalty matrix needs N >= 1".into()));
        }
        Ok(Self { base_weight, terms: Vec::new(), assembled: HermitianMatrix::scaled_identity(n, base_weight) })
    }

    pub fn base_weight(&self) -> f64 {
        self.base_weight
    }

    pub fn terms(&self) -> &[PenaltyTerm] {
        &self.terms
    }

    pub fn assembled(&self) -> &HermitianMatrix {
        &self.assembled
    }

    pub fn dim(&self) -> usize {
        self.assembled.dim()
    }

    /// Appends `zeta u u^H`; `u` must be unit norm to `1e-9` and is
    /// renormalized exactly.
    pub fn push(&mut self, zeta: f64, direction: CVector) -> Result<()> {
        if !(zeta >= 0.0 && zeta.is_finite()) {
            return Err(Error::InvalidInput(format!("penalty factor must be >= 0, got {zeta}")));
        }
        if direction.len() != self.dim() {
            return Err(Error::InvalidInput("penalty direction has the wrong length".into()));
        }
        let norm = direction.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("penalty direction must be unit norm, got {norm}")));
        }
        let direction = direction / Complex64::new(norm, 0.0);
        self.terms.push(PenaltyTerm { zeta, direction });
        self.rebuild();
        Ok(())
    }

    fn rebuild(&mut self) {
        let mut acc = HermitianMatrix::scaled_identity(self.dim(), self.base_weight);
        for t in &self.terms {
            acc += &HermitianMatrix::outer(&t.direction).scale(t.zeta);
        }
        self.assembled = acc;
    }
}

/// `min_k P_T ||h_k||^2 / sigma_k^2`: no beamformer within budget can give
/// any UE more SNR than this.
pub fn gamma_upper_bound(channels: &ChannelSet, power_budget: f64) -> f64 {
    channels
        .channels()
        .iter()
        .zip(channels.noise_powers())
        .map(|(h, s)| power_budget * h.norm_squared() / s)
        .fold(f64::INFINITY, f64::min)
}

/// Number of halvings until an interval of width `width` is no wider than
/// `tol`, i.e. `ceil(log2(width / tol))` (zero when already narrow enough).
pub fn bisection_iterations(width: f64, tol: f64) -> usize {
    let mut w = width;
    let mut n = 0;
    while w > tol {
        w /= 2.0;
        n += 1;
    }
    n
}

/// Solver state carried from one QoS solve to the next.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub state: SolverState,
    /// Target of the most recent solve; `None` before the first.
    pub gamma_prev: Option<f64>,
}

impl WarmStart {
    pub fn new(state: SolverState) -> Self {
        Self { state, gamma_prev: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub lo: f64,
    pub up: f64,
    /// Interval width before this step; halved exactly each step.
    pub width: f64,
    pub gamma: f64,
    pub trace_w: f64,
    pub feasible: bool,
    pub outer_iters: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct BisectionOutcome {
    /// Last feasible target, or the lower endpoint when none was found.
    pub gamma: f64,
    /// Solution at `gamma` when `feasible`.
    pub w: Option<HermitianMatrix>,
    /// Nonnegative dual weights (`z`) of that solution.
    pub dual_weights: Option<DVector<f64>>,
    pub feasible: bool,
    pub steps: Vec<BisectionStep>,
}

/// Bisection over a common SNR target. Runs exactly
/// [`bisection_iterations`] steps; the interval width after step `i` is the
/// initial width times `2^-i`.
pub fn bisection_qos(
    map: &MeasurementMap,
    interval: (f64, f64),
    lambda: &HermitianMatrix,
    config: &MmfConfig,
    warm: &mut WarmStart,
    mut trace: Option<&mut Vec<IterationTrace>>,
) -> Result<BisectionOutcome> {
    let (lo0, up0) = interval;
    if !(lo0 >= 0.0 && lo0 <= up0 && up0.is_finite()) {
        return Err(Error::InvalidInput(format!("bad bisection interval [{lo0}, {up0}]")));
    }
    let k = map.num_ues();
    let mut lo = lo0;
    let mut width = up0 - lo0;
    let mut outcome = BisectionOutcome { gamma: lo0, w: None, dual_weights: None, feasible: false, steps: Vec::new() };

    for _ in 0..bisection_iterations(width, config.bisection_tol) {
        let gamma_c = lo + width / 2.0;
        if let Some(prev) = warm.gamma_prev {
            if prev > 0.0 {
                warm.state.scale_w(gamma_c / prev);
            }
        }
        if config.reset_between_solves {
            warm.state.reset_inner();
        }
        let gamma = DVector::from_element(k, gamma_c);
        let sol = solve_qos(map, &gamma, lambda, &config.qos, &mut warm.state, trace.as_deref_mut())?;
        warm.gamma_prev = Some(gamma_c);

        let feasible = sol.objective_trace <= config.power_budget;
        outcome.steps.push(BisectionStep {
            lo,
            up: lo + width,
            width,
            gamma: gamma_c,
            trace_w: sol.objective_trace,
            feasible,
            outer_iters: sol.outer_iters_used,
            converged: sol.converged,
        });
        if feasible {
            lo = gamma_c;
            outcome.gamma = gamma_c;
            outcome.w = Some(sol.w);
            outcome.dual_weights = Some(warm.state.z.clone());
            outcome.feasible = true;
        }
        width /= 2.0;
    }
    Ok(outcome)
}

/// Adds the second eigen-direction of `w`, weighted by its eigenvalue, to
/// the penalty.
pub fn eliminate_round(w: &HermitianMatrix, penalty: &PenaltyMatrix, rank1_threshold: f64) -> Result<PenaltyMatrix> {
    let eig = w.eigen()?;
    if rank_from_spectrum(&eig.eigenvalues, rank1_threshold) < 2 {
        return Err(Error::ContractViolation("elimination requires a solution of rank >= 2".into()));
    }
    let (zeta, u) = second_eigpair(w)?;
    let mut next = penalty.clone();
    next.push(zeta.max(0.0), u)?;
    Ok(next)
}

/// One pass of the elimination loop (round 0 is the plain relaxation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub interval: (f64, f64),
    pub steps: Vec<BisectionStep>,
    pub gamma_c: f64,
    pub feasible: bool,
    /// Numerical rank of the round's solution.
    pub rank: usize,
    /// Eigenvalues of the round's solution, descending.
    pub spectrum: Vec<f64>,
    /// Share of `tr(W)` along the direction penalized just before this
    /// round: `u^H W u / tr(W)`.
    pub suppressed_energy: Option<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmfDiagnostics {
    pub rounds: Vec<RoundRecord>,
    /// Rounds were exhausted (or a round found nothing feasible) before the
    /// solution reached rank one; the beamformer is a rank-one truncation.
    pub truncated: bool,
    /// The first bisection never met the power budget.
    pub relaxation_infeasible: bool,
    pub qos_solves: usize,
    pub nonconverged_solves: usize,
}

impl MmfDiagnostics {
    pub fn all_converged(&self) -> bool {
        self.nonconverged_solves == 0
    }
}

#[derive(Debug, Clone)]
pub struct MmfResult {
    /// Rank-one beamformer with `||w||^2 = P_T`.
    pub beamformer: CVector,
    /// `min_k |h_k^H w|^2 / sigma_k^2`, recomputed from the raw channels.
    pub minimum_snr: f64,
    pub per_ue_snr: Vec<f64>,
    pub per_ue_se: Vec<f64>,
    /// Certified upper bound on the max-min SNR of any beamformer within
    /// budget: `P_T lambda_max(sum_k y_k H_k)` for the normalized
    /// nonnegative dual weights of the first relaxed solution.
    pub sdr_upper_bound_snr: f64,
    pub sdr_upper_bound_se: f64,
    /// Common target found by the first (relaxed) bisection.
    pub sdr_gamma: f64,
    pub elimination_rounds: usize,
    pub total_outer_iterations: usize,
    pub wall_time: f64,
    /// `gamma_c` after each round, starting with the relaxation.
    pub per_round_gammas: Vec<f64>,
    pub diagnostics: MmfDiagnostics,
}

impl MmfResult {
    pub fn min_se(&self) -> f64 {
        (1.0 + self.minimum_snr).log2()
    }
}

/// Serializable per-run record for diagnostics output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub seed: Option<u64>,
    pub min_se: f64,
    pub sdr_upper_bound_se: f64,
    pub sdr_gamma: f64,
    pub per_round_gammas: Vec<f64>,
    pub wall_time: f64,
    pub total_outer_iterations: usize,
    pub diagnostics: MmfDiagnostics,
}

impl DiagnosticRecord {
    pub fn new(seed: Option<u64>, result: &MmfResult) -> Self {
        Self {
            seed,
            min_se: result.min_se(),
            sdr_upper_bound_se: result.sdr_upper_bound_se,
            sdr_gamma: result.sdr_gamma,
            per_round_gammas: result.per_round_gammas.clone(),
            wall_time: result.wall_time,
            total_outer_iterations: result.total_outer_iterations,
            diagnostics: result.diagnostics.clone(),
        }
    }
}

/// Wall-clock timer that reads zero where no monotonic clock exists.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    pub(crate) fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    pub(crate) fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

/// Certified bound `P_T lambda_max(sum_k y_k H_k)` with `y` normalized onto
/// the simplex; any `y >= 0` gives a valid bound, a dual-optimal one a
/// tight bound.
pub fn dual_snr_bound(map: &MeasurementMap, weights: &DVector<f64>, power_budget: f64) -> Result<f64> {
    let clipped = weights.map(|v| v.max(0.0));
    let total = clipped.sum();
    if !(total > 0.0) {
        return Ok(f64::INFINITY);
    }
    let combined = map.apply_adjoint(&(clipped / total))?;
    Ok(power_budget * combined.eigen()?.eigenvalues[0])
}

fn relative_energy(w: &HermitianMatrix, u: &CVector) -> f64 {
    let tr = w.trace();
    if tr > 0.0 {
        w.quadratic_form(u) / tr
    } else {
        f64::INFINITY
    }
}

/// Full max-min fair solve: relaxed bisection, successive elimination and
/// rank-one extraction.
pub fn mmf_solve(channels: &ChannelSet, config: &MmfConfig) -> Result<MmfResult> {
    mmf_solve_traced(channels, config, None)
}

/// [`mmf_solve`] that also appends every outer ADMM iteration to `trace`.
pub fn mmf_solve_traced(
    channels: &ChannelSet,
    config: &MmfConfig,
    mut trace: Option<&mut Vec<IterationTrace>>,
) -> Result<MmfResult> {
    config.validate()?;
    let clock = Stopwatch::start();
    let map = channels.measurement_map()?;
    let n = channels.num_antennas();
    let max_rounds = config.max_elimination_rounds.unwrap_or(n.saturating_sub(1));
    let p = config.power_budget;

    let mut penalty = PenaltyMatrix::new(config.penalty_weight, n)?;
    let mut warm = WarmStart::new(init_state(&map, penalty.assembled(), &config.qos, None, p)?);

    let gamma_up = gamma_upper_bound(channels, p);
    let relaxed = bisection_qos(&map, (0.0, gamma_up), penalty.assembled(), config, &mut warm, trace.as_deref_mut())?;

    let mut diagnostics = MmfDiagnostics {
        rounds: Vec::new(),
        truncated: false,
        relaxation_infeasible: !relaxed.feasible,
        qos_solves: 0,
        nonconverged_solves: 0,
    };
    let tally = |steps: &[BisectionStep], d: &mut MmfDiagnostics| -> usize {
        d.qos_solves += steps.len();
        d.nonconverged_solves += steps.iter().filter(|s| !s.converged).count();
        steps.iter().map(|s| s.outer_iters).sum()
    };
    let mut total_outer = tally(&relaxed.steps, &mut diagnostics);

    let bound_snr = match &relaxed.dual_weights {
        Some(y) => dual_snr_bound(&map, y, p)?.min(gamma_up),
        None => gamma_up,
    };
    let sdr_gamma = relaxed.gamma;

    let mut current = match relaxed.w.clone() {
        Some(w) => w,
        None => warm.state.primal_w(),
    };
    let mut gamma_c = relaxed.gamma;
    let mut per_round_gammas = vec![gamma_c];
    let mut round_steps = relaxed.steps;
    let mut round_interval = (0.0, gamma_up);
    let mut round_feasible = relaxed.feasible;
    let mut suppressed = None;
    let mut round_clock = clock.seconds();
    let mut rounds = 0;

    loop {
        let eig = current.eigen()?;
        let rank = rank_from_spectrum(&eig.eigenvalues, config.rank1_threshold);
        let now = clock.seconds();
        diagnostics.rounds.push(RoundRecord {
            round: rounds,
            interval: round_interval,
            steps: std::mem::take(&mut round_steps),
            gamma_c,
            feasible: round_feasible,
            rank,
            spectrum: eig.eigenvalues.clone(),
            suppressed_energy: suppressed,
            wall_time: now - round_clock,
        });
        round_clock = now;

        if rank <= 1 || !round_feasible {
            diagnostics.truncated = rank > 1;
            break;
        }
        if rounds >= max_rounds {
            diagnostics.truncated = true;
            break;
        }

        penalty = eliminate_round(&current, &penalty, config.rank1_threshold)?;
        let direction = penalty.terms().last().expect("term just added").direction.clone();
        let lambda = penalty.assembled().clone();

        let mut interval = (config.elimination_kappa * gamma_c, gamma_c);
        let mut outcome = bisection_qos(&map, interval, &lambda, config, &mut warm, trace.as_deref_mut())?;
        total_outer += tally(&outcome.steps, &mut diagnostics);
        if !outcome.feasible {
            // widen once before giving up on this round
            interval = (config.elimination_kappa.powi(2) * gamma_c, gamma_c);
            let retry = bisection_qos(&map, interval, &lambda, config, &mut warm, trace.as_deref_mut())?;
            total_outer += tally(&retry.steps, &mut diagnostics);
            let mut steps = outcome.steps;
            steps.extend(retry.steps.iter().copied());
            outcome = BisectionOutcome { steps, ..retry };
        }
        rounds += 1;
        round_interval = interval;
        round_steps = outcome.steps;
        round_feasible = outcome.feasible;
        if let Some(w) = outcome.w {
            suppressed = Some(relative_energy(&w, &direction));
            current = w;
            gamma_c = outcome.gamma;
        } else {
            suppressed = None;
        }
        per_round_gammas.push(gamma_c);
    }

    let beamformer = extract_beamformer(&current, p)?;
    let per_ue_snr = channels.snr_of_beamformer(&beamformer);
    let minimum_snr = per_ue_snr.iter().copied().fold(f64::INFINITY, f64::min);
    let per_ue_se = se_of(&per_ue_snr);

    Ok(MmfResult {
        beamformer,
        minimum_snr,
        per_ue_snr,
        per_ue_se,
        sdr_upper_bound_snr: bound_snr,
        sdr_upper_bound_se: (1.0 + bound_snr).log2(),
        sdr_gamma,
        elimination_rounds: rounds,
        total_outer_iterations: total_outer,
        wall_time: clock.seconds(),
        per_round_gammas,
        diagnostics,
    })
}

/// `sqrt(lambda_1) u_1` of the PSD part of `w`, rescaled to `||w||^2 = P_T`.
pub fn extract_beamformer(w: &HermitianMatrix, power_budget: f64) -> Result<CVector> {
    let clipped = psd_project(w)?;
    let eig = clipped.eigen()?;
    let mut v = eig.vector(0) * Complex64::new(eig.eigenvalues[0].max(0.0).sqrt(), 0.0);
    let norm = v.norm();
    if !(norm > 0.0) {
        v = CVector::zeros(w.dim());
        v[0] = Complex64::new(1.0, 0.0);
    }
    let norm = v.norm();
    Ok(v * Complex64::new(power_budget.sqrt() / norm, 0.0))
}
