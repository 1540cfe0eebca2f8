//! Browser front end for the solver. `Session` holds the last solved drop
//! and is plain Rust; `Demo` is its JavaScript face.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use mcast_core::channel::{generate_scenario, Scenario, ScenarioConfig};
use mcast_core::hermitian::CVector;
use mcast_core::mmf::{mmf_solve, MmfConfig, MmfResult};
use mcast_core::{Error, Result};

pub const MAX_ANTENNAS: usize = 64;
pub const MAX_UES: usize = 40;

/// What the page draws after a solve.
#[derive(Debug, Clone, Serialize)]
pub struct DropReport {
    pub seed: u64,
    pub num_antennas: usize,
    pub num_ues: usize,
    pub area_side: f64,
    pub bs_position: [f64; 2],
    pub ue_positions: Vec<[f64; 2]>,
    pub azimuths: Vec<f64>,
    pub per_ue_se: Vec<f64>,
    pub min_se: f64,
    pub bound_se: f64,
    pub elimination_rounds: usize,
    pub outer_iterations: usize,
    pub per_round_gammas: Vec<f64>,
    pub converged: bool,
}

/// `|a(phi)^H w|^2 / ||w||^2` for the half-wavelength ULA response
/// `a_d(phi) = exp(j pi d sin(phi))`.
pub fn array_gain(w: &CVector, phi: f64) -> f64 {
    let norm = w.norm_squared();
    if norm == 0.0 {
        return 0.0;
    }
    let step = Complex64::from_polar(1.0, PI * phi.sin());
    let mut a = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for wd in w.iter() {
        acc += a.conj() * wd;
        a *= step;
    }
    acc.norm_sqr() / norm
}

#[derive(Default)]
pub struct Session {
    scenario: Option<Scenario>,
    result: Option<MmfResult>,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(&mut self, seed: u64, num_antennas: usize, num_ues: usize) -> Result<DropReport> {
        if !(1..=MAX_ANTENNAS).contains(&num_antennas) || !(1..=MAX_UES).contains(&num_ues) {
            return Err(Error::InvalidInput(format!(
                "demo sizes are limited to N <= {MAX_ANTENNAS}, K <= {MAX_UES}"
            )));
        }
        let scenario = generate_scenario(seed, &ScenarioConfig::with_size(num_antennas, num_ues))?;
        let result = mmf_solve(&scenario.channels, &MmfConfig::default())?;
        let g = &scenario.geometry;
        let report = DropReport {
            seed,
            num_antennas,
            num_ues,
            area_side: g.area_side,
            bs_position: g.bs_position,
            ue_positions: g.ue_positions.clone(),
            azimuths: (0..num_ues).map(|k| g.azimuth(k)).collect(),
            per_ue_se: result.per_ue_se.clone(),
            min_se: result.min_se(),
            bound_se: result.sdr_upper_bound_se,
            elimination_rounds: result.elimination_rounds,
            outer_iterations: result.total_outer_iterations,
            per_round_gammas: result.per_round_gammas.clone(),
            converged: result.diagnostics.all_converged(),
        };
        self.scenario = Some(scenario);
        self.result = Some(result);
        Ok(report)
    }

    /// Normalized array gain of the last beamformer at `points` azimuths
    /// evenly spaced over `[-pi, pi)`.
    pub fn beam_pattern(&self, points: usize) -> Result<Vec<f64>> {
        let r = self.result.as_ref().ok_or_else(|| Error::InvalidInput("nothing solved yet".into()))?;
        Ok((0..points)
            .map(|i| array_gain(&r.beamformer, -PI + 2.0 * PI * i as f64 / points as f64))
            .collect())
    }

    /// Eigenvalues of UE `k`'s correlation matrix divided by its average
    /// gain, largest first.
    pub fn correlation_spectrum(&self, k: usize) -> Result<Vec<f64>> {
        let s = self.scenario.as_ref().ok_or_else(|| Error::InvalidInput("nothing solved yet".into()))?;
        let corr = s
            .correlations
            .get(k)
            .ok_or_else(|| Error::InvalidInput(format!("no UE {k} in this drop")))?;
        let beta = corr.average_gain();
        let mut eig = corr.matrix.eigen()?.eigenvalues;
        eig.sort_by(|a, b| b.total_cmp(a));
        Ok(eig.into_iter().map(|l| l / beta).collect())
    }
}

fn js_err(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    session: Session,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        Demo { session: Session::new() }
    }

    /// Solves one seeded drop and returns the report as JSON.
    pub fn solve(&mut self, seed: u32, num_antennas: usize, num_ues: usize) -> std::result::Result<String, JsError> {
        let report = self.session.solve(seed.into(), num_antennas, num_ues).map_err(js_err)?;
        serde_json::to_string(&report).map_err(|e| JsError::new(&e.to_string()))
    }

    #[wasm_bindgen(js_name = beamPattern)]
    pub fn beam_pattern(&self, points: usize) -> std::result::Result<Vec<f64>, JsError> {
        self.session.beam_pattern(points).map_err(js_err)
    }

    #[wasm_bindgen(js_name = correlationSpectrum)]
    pub fn correlation_spectrum(&self, ue: usize) -> std::result::Result<Vec<f64>, JsError> {
        self.session.correlation_spectrum(ue).map_err(js_err)
    }
}

impl Default for Demo {
    fn default() -> Self {
        Self::new()
    }
}
