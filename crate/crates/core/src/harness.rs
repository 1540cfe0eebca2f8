//! Monte Carlo campaigns, CDF tables and the small-instance grid oracle.
//!
//! Sample `i` of a campaign uses seed `base_seed + i`, so records do not
//! depend on how many threads ran them. Failed samples are kept in
//! `samples.csv` with their error class and left out of the CDFs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_channels, ChannelSet, ScenarioConfig};
use crate::error::{Error, Result};
use crate::hermitian::CVector;
use crate::mmf::{mmf_solve, DiagnosticRecord, MmfConfig, MmfResult};

/// Settings for the grid-oracle sandwich check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Also run the oracle check as part of `run_campaign`.
    pub enabled: bool,
    pub instances: usize,
    pub base_seed: u64,
    pub num_antennas: usize,
    /// Instance `i` uses `ue_counts[i % len]` UEs.
    pub ue_counts: Vec<usize>,
    /// Grid points per angular dimension.
    pub resolution: usize,
    /// Allowed relative shortfall of the solver against the oracle.
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            instances: 50,
            base_seed: 0,
            num_antennas: 2,
            ue_counts: vec![2, 3],
            resolution: 2000,
            tolerance: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub num_samples: usize,
    pub base_seed: u64,
    pub scenario: ScenarioConfig,
    pub mmf: MmfConfig,
    /// Where CSV artifacts go; nothing is written when unset.
    pub output_dir: Option<PathBuf>,
    /// Worker threads; `None` lets the pool decide.
    pub threads: Option<usize>,
    /// Write `diagnostics.jsonl` with one record per successful sample.
    pub diagnostics: bool,
    pub oracle: OracleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_samples: 2000,
            base_seed: 0,
            scenario: ScenarioConfig::default(),
            mmf: MmfConfig::default(),
            output_dir: None,
            threads: None,
            diagnostics: false,
            oracle: OracleConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.mmf.validate()?;
        let net = &self.scenario.network;
        if net.num_antennas == 0 || net.num_ues == 0 {
            return Err(Error::Config("N and K must be positive".into()));
        }
        if !(net.area_side > 0.0) || !(net.min_bs_distance >= 0.0) {
            return Err(Error::Config("area side must be positive and the exclusion radius nonnegative".into()));
        }
        if !self.scenario.noise_power_dbm.is_finite() || !(self.scenario.angular_std_deg >= 0.0) {
            return Err(Error::Config("noise power must be finite and angular spread nonnegative".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.oracle.enabled && self.oracle.ue_counts.is_empty() {
            return Err(Error::Config("oracle needs at least one UE count".into()));
        }
        Ok(())
    }
}

/// One row of `samples.csv`. Numeric fields are empty for failed samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub seed: u64,
    /// `ok`, or the error class of the failure.
    pub status: String,
    pub min_se_rank1: Option<f64>,
    pub min_se_sdr_bound: Option<f64>,
    /// `log2(1 + gamma_c)` of the relaxed bisection.
    pub sdr_target_se: Option<f64>,
    pub elimination_rounds: Option<usize>,
    pub outer_iterations_total: Option<usize>,
    pub qos_solves: Option<usize>,
    /// Solves that hit the outer iteration cap.
    pub nonconverged_solves: Option<usize>,
    /// Every QoS solve met both stopping conditions.
    pub converged: Option<bool>,
    /// Elimination reached rank one without truncation.
    pub rank_one: Option<bool>,
    /// Kept out of `samples.csv` so that file is reproducible; see
    /// `timings.csv`.
    #[serde(skip)]
    pub wall_time_seconds: Option<f64>,
}

impl SampleRecord {
    pub fn from_result(seed: u64, r: &MmfResult) -> Self {
        Self {
            seed,
            status: "ok".into(),
            min_se_rank1: Some(r.min_se()),
            min_se_sdr_bound: Some(r.sdr_upper_bound_se),
            sdr_target_se: Some((1.0 + r.sdr_gamma).log2()),
            elimination_rounds: Some(r.elimination_rounds),
            outer_iterations_total: Some(r.total_outer_iterations),
            qos_solves: Some(r.diagnostics.qos_solves),
            nonconverged_solves: Some(r.diagnostics.nonconverged_solves),
            converged: Some(r.diagnostics.all_converged()),
            rank_one: Some(!r.diagnostics.truncated),
            wall_time_seconds: Some(r.wall_time),
        }
    }

    pub fn failed(seed: u64, err: &Error) -> Self {
        Self {
            seed,
            status: err.class().into(),
            min_se_rank1: None,
            min_se_sdr_bound: None,
            sdr_target_se: None,
            elimination_rounds: None,
            outer_iterations_total: None,
            qos_solves: None,
            nonconverged_solves: None,
            converged: None,
            rank_one: None,
            wall_time_seconds: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub requested: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub failures_by_class: BTreeMap<String, usize>,
    pub converged: usize,
    pub rank_one: usize,
    pub mean_wall_time: Option<f64>,
    pub median_wall_time: Option<f64>,
    pub mean_se_rank1: Option<f64>,
    pub median_se_rank1: Option<f64>,
    pub mean_se_sdr_bound: Option<f64>,
    /// Median of `(bound - rank1) / bound` over successful samples.
    pub median_relative_gap: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

impl CampaignSummary {
    pub fn from_records(records: &[SampleRecord]) -> Self {
        let ok: Vec<&SampleRecord> = records.iter().filter(|r| r.is_ok()).collect();
        let mut failures_by_class = BTreeMap::new();
        for r in records.iter().filter(|r| !r.is_ok()) {
            *failures_by_class.entry(r.status.clone()).or_insert(0) += 1;
        }
        let times: Vec<f64> = ok.iter().filter_map(|r| r.wall_time_seconds).collect();
        let rank1: Vec<f64> = ok.iter().filter_map(|r| r.min_se_rank1).collect();
        let bound: Vec<f64> = ok.iter().filter_map(|r| r.min_se_sdr_bound).collect();
        let gaps: Vec<f64> = ok
            .iter()
            .filter_map(|r| Some((r.min_se_sdr_bound? - r.min_se_rank1?) / r.min_se_sdr_bound?))
            .collect();
        Self {
            requested: records.len(),
            succeeded: ok.len(),
            failed: records.len() - ok.len(),
            failures_by_class,
            converged: ok.iter().filter(|r| r.converged == Some(true)).count(),
            rank_one: ok.iter().filter(|r| r.rank_one == Some(true)).count(),
            mean_wall_time: mean(&times),
            median_wall_time: median(&times),
            mean_se_rank1: mean(&rank1),
            median_se_rank1: median(&rank1),
            mean_se_sdr_bound: mean(&bound),
            median_relative_gap: median(&gaps),
        }
    }
}

impl fmt::Display for CampaignSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
        writeln!(f, "samples_requested: {}", self.requested)?;
        writeln!(f, "samples_succeeded: {}", self.succeeded)?;
        writeln!(f, "samples_failed: {}", self.failed)?;
        for (class, n) in &self.failures_by_class {
            writeln!(f, "failed[{class}]: {n}")?;
        }
        writeln!(f, "samples_converged: {}", self.converged)?;
        writeln!(f, "samples_rank_one: {}", self.rank_one)?;
        writeln!(f, "mean_wall_time_s: {}", opt(self.mean_wall_time))?;
        writeln!(f, "median_wall_time_s: {}", opt(self.median_wall_time))?;
        writeln!(f, "mean_min_se_rank1: {}", opt(self.mean_se_rank1))?;
        writeln!(f, "median_min_se_rank1: {}", opt(self.median_se_rank1))?;
        writeln!(f, "mean_min_se_sdr_bound: {}", opt(self.mean_se_sdr_bound))?;
        writeln!(f, "median_relative_gap: {}", opt(self.median_relative_gap))
    }
}

#[derive(Debug, Clone)]
pub struct Campaign {
    /// Sorted by seed.
    pub records: Vec<SampleRecord>,
    pub diagnostics: Vec<DiagnosticRecord>,
    pub summary: CampaignSummary,
    pub oracle: Option<Vec<OracleRecord>>,
}

impl Campaign {
    pub fn rank1_values(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.min_se_rank1).collect()
    }

    pub fn bound_values(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.min_se_sdr_bound).collect()
    }
}

/// Empirical CDF with the midpoint convention: the `i`-th smallest of `n`
/// values (1-based) gets percentile `(i - 0.5) / n`.
pub fn emit_cdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("empty CDF table".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("CDF values must be finite".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    Ok(v.into_iter().enumerate().map(|(i, x)| (x, (i as f64 + 0.5) / n)).collect())
}

pub fn write_cdf_csv<W: Write>(table: &[(f64, f64)], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["value", "percentile"])?;
    for (v, p) in table {
        wtr.write_record([v.to_string(), p.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

fn run_sample(seed: u64, cfg: &ExperimentConfig) -> (SampleRecord, Option<DiagnosticRecord>) {
    let solved = generate_channels(seed, &cfg.scenario).and_then(|cs| mmf_solve(&cs, &cfg.mmf));
    match solved {
        Ok(r) => (SampleRecord::from_result(seed, &r), cfg.diagnostics.then(|| DiagnosticRecord::new(Some(seed), &r))),
        Err(e) => (SampleRecord::failed(seed, &e), None),
    }
}

fn map_seeds<T, F>(seeds: &[u64], threads: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if threads != Some(1) {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            return Ok(pool.install(|| seeds.par_iter().map(|&s| f(s)).collect()));
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(seeds.iter().map(|&s| f(s)).collect())
}

/// Runs every sample, then writes the artifacts if `output_dir` is set.
/// Only configuration and I/O problems abort the campaign.
pub fn run_campaign(cfg: &ExperimentConfig) -> Result<Campaign> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.num_samples as u64).map(|i| cfg.base_seed.wrapping_add(i)).collect();
    let outcomes = map_seeds(&seeds, cfg.threads, |s| run_sample(s, cfg))?;
    let (mut records, diags): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    records.sort_by_key(|r| r.seed);
    let mut diagnostics: Vec<DiagnosticRecord> = diags.into_iter().flatten().collect();
    diagnostics.sort_by_key(|d| d.seed);

    let oracle = if cfg.oracle.enabled { Some(run_oracle(&cfg.oracle, &cfg.scenario, &cfg.mmf)?) } else { None };
    let campaign = Campaign { summary: CampaignSummary::from_records(&records), records, diagnostics, oracle };
    if let Some(dir) = &cfg.output_dir {
        write_campaign(dir, &campaign)?;
    }
    Ok(campaign)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes `samples.csv`, `timings.csv`, `cdf_rank1.csv`, `cdf_sdr.csv`,
/// `summary.txt`, and when present `diagnostics.jsonl` and `oracle.csv`.
/// CDF files hold only the header when no sample succeeded.
pub fn write_campaign(dir: &Path, campaign: &Campaign) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut wtr = csv::Writer::from_writer(create(dir, "samples.csv")?);
    if campaign.records.is_empty() {
        wtr.write_record([
            "seed",
            "status",
            "min_se_rank1",
            "min_se_sdr_bound",
            "sdr_target_se",
            "elimination_rounds",
            "outer_iterations_total",
            "qos_solves",
            "nonconverged_solves",
            "converged",
            "rank_one",
        ])?;
    }
    for r in &campaign.records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;

    let mut wtr = csv::Writer::from_writer(create(dir, "timings.csv")?);
    wtr.write_record(["seed", "wall_time_seconds"])?;
    for r in &campaign.records {
        wtr.write_record([r.seed.to_string(), r.wall_time_seconds.map(|t| t.to_string()).unwrap_or_default()])?;
    }
    wtr.flush()?;

    for (name, values) in [("cdf_rank1.csv", campaign.rank1_values()), ("cdf_sdr.csv", campaign.bound_values())] {
        let table = if values.is_empty() { Vec::new() } else { emit_cdf(&values)? };
        write_cdf_csv(&table, create(dir, name)?)?;
    }

    let mut out = create(dir, "summary.txt")?;
    write!(out, "{}", campaign.summary)?;
    out.flush()?;

    if !campaign.diagnostics.is_empty() {
        let mut out = create(dir, "diagnostics.jsonl")?;
        for d in &campaign.diagnostics {
            serde_json::to_writer(&mut out, d)?;
            writeln!(out)?;
        }
        out.flush()?;
    }
    if let Some(rows) = &campaign.oracle {
        write_oracle_csv(rows, create(dir, "oracle.csv")?)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub min_snr: f64,
    pub min_se: f64,
    /// Full-power maximizer, first component real and nonnegative.
    pub beamformer: CVector,
}

/// Smallest grid accepted per angular dimension: 500 for `N = 2`; for
/// `N = 3` the four-dimensional grid is coarse and the polish does the rest.
pub fn min_oracle_resolution(n: usize) -> usize {
    if n == 2 {
        500
    } else {
        24
    }
}

struct SphereParam {
    n: usize,
    rows: Vec<[Complex64; 3]>,
}

impl SphereParam {
    fn new(channels: &ChannelSet, power: f64) -> Self {
        let n = channels.num_antennas();
        let scale = power.sqrt();
        let rows = channels
            .channels()
            .iter()
            .zip(channels.noise_powers())
            .map(|(h, s)| {
                let mut r = [Complex64::new(0.0, 0.0); 3];
                for i in 0..n {
                    r[i] = h[i].conj() * (scale / s.sqrt());
                }
                r
            })
            .collect();
        Self { n, rows }
    }

    /// Unit vector for `(theta_1, phi_1)` or `(theta_1, theta_2, phi_1, phi_2)`.
    fn point(&self, p: &[f64]) -> [Complex64; 3] {
        let c = Complex64::new;
        if self.n == 2 {
            [c(p[0].cos(), 0.0), Complex64::from_polar(p[0].sin(), p[1]), c(0.0, 0.0)]
        } else {
            let (s1, c1) = p[0].sin_cos();
            let (s2, c2) = p[1].sin_cos();
            [c(c1, 0.0), Complex64::from_polar(s1 * c2, p[2]), Complex64::from_polar(s1 * s2, p[3])]
        }
    }

    fn min_snr(&self, p: &[f64]) -> f64 {
        let w = self.point(p);
        self.rows
            .iter()
            .map(|r| (r[0] * w[0] + r[1] * w[1] + r[2] * w[2]).norm_sqr())
            .fold(f64::INFINITY, f64::min)
    }
}

fn grid_search_2(sp: &SphereParam, res: usize) -> (f64, Vec<f64>) {
    let phis: Vec<Complex64> = (0..res)
        .map(|j| Complex64::from_polar(1.0, std::f64::consts::TAU * j as f64 / res as f64))
        .collect();
    let mut best = (f64::NEG_INFINITY, vec![0.0, 0.0]);
    let mut ab = vec![(Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)); sp.rows.len()];
    for i in 0..res {
        let theta = std::f64::consts::FRAC_PI_2 * i as f64 / (res - 1) as f64;
        let (s, c) = theta.sin_cos();
        for (slot, r) in ab.iter_mut().zip(&sp.rows) {
            *slot = (r[0] * c, r[1] * s);
        }
        'phi: for (j, e) in phis.iter().enumerate() {
            let mut m = f64::INFINITY;
            for (a, b) in &ab {
                m = m.min((a + b * e).norm_sqr());
                if m <= best.0 {
                    continue 'phi;
                }
            }
            best = (m, vec![theta, std::f64::consts::TAU * j as f64 / res as f64]);
        }
    }
    best
}

fn grid_search_3(sp: &SphereParam, res: usize) -> (f64, Vec<f64>) {
    let theta = |i: usize| std::f64::consts::FRAC_PI_2 * i as f64 / (res - 1) as f64;
    let phi = |j: usize| std::f64::consts::TAU * j as f64 / res as f64;
    let mut best = (f64::NEG_INFINITY, vec![0.0; 4]);
    for a in 0..res {
        for b in 0..res {
            for c in 0..res {
                for d in 0..res {
                    let p = [theta(a), theta(b), phi(c), phi(d)];
                    let v = sp.min_snr(&p);
                    if v > best.0 {
                        best = (v, p.to_vec());
                    }
                }
            }
        }
    }
    best
}

/// Pattern search over the angles, including pairwise diagonal moves so
/// the ridge where two UEs tie can be followed.
fn polish(sp: &SphereParam, start: (f64, Vec<f64>), steps: Vec<f64>) -> (f64, Vec<f64>) {
    let (mut best, mut p) = start;
    let mut steps = steps;
    let d = p.len();
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut v = vec![0.0; d];
            v[i] = s;
            dirs.push(v);
        }
        for j in i + 1..d {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut v = vec![0.0; d];
                v[i] = si;
                v[j] = sj;
                dirs.push(v);
            }
        }
    }
    for _ in 0..20_000 {
        if steps.iter().all(|&s| s < 1e-13) {
            break;
        }
        let mut improved = false;
        for dir in &dirs {
            let q: Vec<f64> = p.iter().zip(dir).zip(&steps).map(|((x, u), s)| x + u * s).collect();
            let v = sp.min_snr(&q);
            if v > best {
                best = v;
                p = q;
                improved = true;
            }
        }
        if !improved {
            steps.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    (best, p)
}

/// Exhaustive max-min search over full-power beamformers for `N` in
/// {2, 3}, followed by a local polish. The result is a lower bound on the
/// true optimum that is tight to the polish accuracy.
pub fn brute_force_mmf(channels: &ChannelSet, power_budget: f64, grid_resolution: usize) -> Result<OracleSolution> {
    let n = channels.num_antennas();
    if !(n == 2 || n == 3) {
        return Err(Error::UnsupportedSize(format!("grid oracle supports N = 2 or 3, got {n}")));
    }
    if grid_resolution < min_oracle_resolution(n) {
        return Err(Error::InvalidInput(format!(
            "grid resolution {grid_resolution} below the minimum {} for N = {n}",
            min_oracle_resolution(n)
        )));
    }
    if !(power_budget > 0.0 && power_budget.is_finite()) {
        return Err(Error::InvalidInput("power budget must be positive".into()));
    }
    let sp = SphereParam::new(channels, power_budget);
    let dtheta = std::f64::consts::FRAC_PI_2 / (grid_resolution - 1) as f64;
    let dphi = std::f64::consts::TAU / grid_resolution as f64;
    let (start, steps) = if n == 2 {
        (grid_search_2(&sp, grid_resolution), vec![dtheta, dphi])
    } else {
        (grid_search_3(&sp, grid_resolution), vec![dtheta, dtheta, dphi, dphi])
    };
    let (min_snr, p) = polish(&sp, start, steps);
    let w = sp.point(&p);
    let beamformer = CVector::from_iterator(n, w.iter().take(n).map(|x| x * power_budget.sqrt()));
    Ok(OracleSolution { min_snr, min_se: (1.0 + min_snr).log2(), beamformer })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub seed: u64,
    pub num_ues: usize,
    pub solver_se: f64,
    pub oracle_se: f64,
    pub bound_se: f64,
    /// `(oracle - solver) / oracle`; negative when the solver wins.
    pub relative_shortfall: f64,
    pub within_tolerance: bool,
    pub below_bound: bool,
}

impl OracleRecord {
    pub fn passed(&self) -> bool {
        self.within_tolerance && self.below_bound
    }
}

/// Solver-versus-grid comparison on small seeded drops.
pub fn run_oracle(cfg: &OracleConfig, scenario: &ScenarioConfig, mmf: &MmfConfig) -> Result<Vec<OracleRecord>> {
    if cfg.ue_counts.is_empty() {
        return Err(Error::Config("oracle needs at least one UE count".into()));
    }
    (0..cfg.instances)
        .map(|i| {
            let seed = cfg.base_seed.wrapping_add(i as u64);
            let k = cfg.ue_counts[i % cfg.ue_counts.len()];
            let mut sc = *scenario;
            sc.network.num_antennas = cfg.num_antennas;
            sc.network.num_ues = k;
            let cs = generate_channels(seed, &sc)?;
            let solved = mmf_solve(&cs, mmf)?;
            let oracle = brute_force_mmf(&cs, mmf.power_budget, cfg.resolution)?;
            let solver_se = solved.min_se();
            let shortfall = (oracle.min_se - solver_se) / oracle.min_se;
            Ok(OracleRecord {
                seed,
                num_ues: k,
                solver_se,
                oracle_se: oracle.min_se,
                bound_se: solved.sdr_upper_bound_se,
                relative_shortfall: shortfall,
                within_tolerance: shortfall <= cfg.tolerance,
                below_bound: solver_se <= solved.sdr_upper_bound_se + 1e-6,
            })
        })
        .collect()
}

pub fn write_oracle_csv<W: Write>(rows: &[OracleRecord], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
