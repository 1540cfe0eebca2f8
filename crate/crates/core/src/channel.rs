//! Single-cell massive MIMO simulation environment.
//!
//! UEs are dropped uniformly in a square around a base station with a
//! half-wavelength uniform linear array. Large-scale fading follows the
//! 3GPP urban microcell pathloss with spatially correlated log-normal
//! shadowing, and small-scale fading is correlated Rayleigh with a Gaussian
//! local-scattering correlation matrix per UE.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermitian::{CMatrix, CVector, HermitianMatrix, MeasurementMap};

/// Shadow fading standard deviation in dB.
pub const SHADOW_STD_DB: f64 = 4.0;
/// Distance (m) over which the shadowing correlation halves.
pub const SHADOW_DECORRELATION_M: f64 = 9.0;

const GEOMETRY_STREAM: u64 = 0;
const SHADOW_STREAM: u64 = 1;
const CHANNEL_STREAM: u64 = 2;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkParams {
    pub area_side: f64,
    pub num_antennas: usize,
    pub num_ues: usize,
    pub min_bs_distance: f64,
    /// Defaults to the center of the area.
    pub bs_position: Option<[f64; 2]>,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            area_side: 750.0,
            num_antennas: 36,
            num_ues: 15,
            min_bs_distance: 5.0,
            bs_position: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGeometry {
    pub area_side: f64,
    pub bs_position: [f64; 2],
    pub num_antennas: usize,
    pub num_ues: usize,
    pub ue_positions: Vec<[f64; 2]>,
    pub min_bs_distance: f64,
}

impl NetworkGeometry {
    pub fn distance(&self, k: usize) -> f64 {
        let [x, y] = self.ue_positions[k];
        (x - self.bs_position[0]).hypot(y - self.bs_position[1])
    }

    pub fn distances(&self) -> Vec<f64> {
        (0..self.num_ues).map(|k| self.distance(k)).collect()
    }

    /// Azimuth of UE `k` seen from the BS, measured from the array broadside
    /// (the +x axis).
    pub fn azimuth(&self, k: usize) -> f64 {
        let [x, y] = self.ue_positions[k];
        (y - self.bs_position[1]).atan2(x - self.bs_position[0])
    }

    pub fn pair_distance(&self, k: usize, i: usize) -> f64 {
        let [xk, yk] = self.ue_positions[k];
        let [xi, yi] = self.ue_positions[i];
        (xk - xi).hypot(yk - yi)
    }
}

/// Drops `num_ues` UEs uniformly in the square, redrawing any UE closer than
/// `min_bs_distance` to the BS.
pub fn sample_geometry(seed: u64, params: &NetworkParams) -> Result<NetworkGeometry> {
    let mut rng = rng_for(seed, GEOMETRY_STREAM);
    sample_geometry_with(&mut rng, params)
}

fn sample_geometry_with(rng: &mut impl Rng, params: &NetworkParams) -> Result<NetworkGeometry> {
    if params.num_ues == 0 || params.num_antennas == 0 {
        return Err(Error::Config("need at least one UE and one antenna".into()));
    }
    if !(params.area_side > 0.0 && params.area_side.is_finite()) {
        return Err(Error::Config(format!("area side must be positive, got {}", params.area_side)));
    }
    if !(params.min_bs_distance >= 0.0) {
        return Err(Error::Config("min_bs_distance must be nonnegative".into()));
    }
    let side = params.area_side;
    let bs = params.bs_position.unwrap_or([side / 2.0, side / 2.0]);
    if !(0.0..=side).contains(&bs[0]) || !(0.0..=side).contains(&bs[1]) {
        return Err(Error::Config("BS must lie inside the area".into()));
    }
    // farthest corner bounds the feasible exclusion radius
    let reach = [0.0, side]
        .iter()
        .flat_map(|&cx| [0.0, side].map(move |cy| (cx - bs[0]).hypot(cy - bs[1])))
        .fold(0.0, f64::max);
    if params.min_bs_distance >= reach {
        return Err(Error::Config(format!(
            "min_bs_distance {} leaves no room inside the area (limit {reach})",
            params.min_bs_distance
        )));
    }

    let mut ue_positions = Vec::with_capacity(params.num_ues);
    while ue_positions.len() < params.num_ues {
        let x = rng.random::<f64>() * side;
        let y = rng.random::<f64>() * side;
        if (x - bs[0]).hypot(y - bs[1]) >= params.min_bs_distance {
            ue_positions.push([x, y]);
        }
    }
    Ok(NetworkGeometry {
        area_side: side,
        bs_position: bs,
        num_antennas: params.num_antennas,
        num_ues: params.num_ues,
        ue_positions,
        min_bs_distance: params.min_bs_distance,
    })
}

/// Urban microcell pathloss `-30.5 - 36.7 log10(d / 1 m)` in dB, without
/// shadowing.
pub fn pathloss_db(distance_m: f64) -> Result<f64> {
    if !(distance_m > 0.0) || !distance_m.is_finite() {
        return Err(Error::InvalidInput(format!("distance must be positive, got {distance_m}")));
    }
    Ok(-30.5 - 36.7 * distance_m.log10())
}

/// `E{F_k F_i} = 16 * 2^(-delta_ki / 9 m)`.
pub fn shadow_covariance(geometry: &NetworkGeometry) -> DMatrix<f64> {
    let k = geometry.num_ues;
    DMatrix::from_fn(k, k, |a, b| {
        SHADOW_STD_DB.powi(2) * 2f64.powf(-geometry.pair_distance(a, b) / SHADOW_DECORRELATION_M)
    })
}

/// Draws correlated shadowing vectors from a fixed layout.
#[derive(Debug, Clone)]
pub struct ShadowSampler {
    factor: DMatrix<f64>,
}

impl ShadowSampler {
    pub fn new(geometry: &NetworkGeometry) -> Self {
        Self::from_covariance(shadow_covariance(geometry))
    }

    /// Factors `cov = L L^T` through its eigendecomposition, clipping any
    /// negative eigenvalue to zero.
    pub fn from_covariance(cov: DMatrix<f64>) -> Self {
        let sym = (&cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut factor = eig.eigenvectors.clone();
        for (j, mut col) in factor.column_iter_mut().enumerate() {
            col *= eig.eigenvalues[j].max(0.0).sqrt();
        }
        Self { factor }
    }

    /// The covariance the sampler actually realizes (after repair).
    pub fn covariance(&self) -> DMatrix<f64> {
        let c = &self.factor * self.factor.transpose();
        (&c + c.transpose()) * 0.5
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let k = self.factor.nrows();
        let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.factor * z).iter().copied().collect()
    }
}

/// Shadow fading realization `F_k` in dB for every UE.
pub fn sample_shadowing(seed: u64, geometry: &NetworkGeometry) -> Vec<f64> {
    let mut rng = rng_for(seed, SHADOW_STREAM);
    ShadowSampler::new(geometry).sample(&mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeScaleFading {
    pub beta_db: Vec<f64>,
    pub shadow_db: Vec<f64>,
    pub distances: Vec<f64>,
}

impl LargeScaleFading {
    pub fn new(geometry: &NetworkGeometry, shadow_db: Vec<f64>) -> Result<Self> {
        if shadow_db.len() != geometry.num_ues {
            return Err(Error::InvalidInput("one shadowing value per UE expected".into()));
        }
        let distances = geometry.distances();
        let beta_db = distances
            .iter()
            .zip(&shadow_db)
            .map(|(&d, &f)| pathloss_db(d).map(|pl| pl + f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { beta_db, shadow_db, distances })
    }

    pub fn beta_linear(&self) -> Vec<f64> {
        self.beta_db.iter().map(|&b| db_to_linear(b)).collect()
    }
}

/// Spatial correlation matrix of one UE.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCorrelation {
    pub matrix: HermitianMatrix,
    pub nominal_angle: f64,
    pub angular_std: f64,
}

impl SpatialCorrelation {
    pub fn average_gain(&self) -> f64 {
        self.matrix.trace() / self.matrix.dim() as f64
    }
}

/// How the local-scattering correlation integral is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationModel {
    /// Composite Simpson quadrature of the Gaussian angle average.
    #[default]
    Quadrature,
    /// Small-spread closed form
    /// `exp(j pi d sin(phi)) exp(-(sigma^2 / 2) (pi d cos(phi))^2)`.
    /// Loses accuracy quickly above a few degrees of spread.
    ClosedForm,
}

const QUADRATURE_INTERVALS: usize = 2000;
const QUADRATURE_SPAN_STDS: f64 = 7.0;

/// `E{exp(j pi d sin(phi + delta))}` for `delta ~ N(0, sigma^2)`, `d = 0..n`.
fn local_scattering_lags(model: CorrelationModel, phi: f64, sigma: f64, n: usize) -> Vec<Complex64> {
    if sigma == 0.0 {
        return (0..n).map(|d| Complex64::from_polar(1.0, PI * d as f64 * phi.sin())).collect();
    }
    match model {
        CorrelationModel::ClosedForm => {
            let (s, c) = phi.sin_cos();
            (0..n)
                .map(|d| {
                    let d = d as f64;
                    Complex64::from_polar((-(sigma * sigma / 2.0) * (PI * d * c).powi(2)).exp(), PI * d * s)
                })
                .collect()
        }
        CorrelationModel::Quadrature => {
            let half = QUADRATURE_SPAN_STDS * sigma;
            let h = 2.0 * half / QUADRATURE_INTERVALS as f64;
            let norm = 1.0 / (sigma * (2.0 * PI).sqrt());
            let mut lags = vec![Complex64::new(0.0, 0.0); n];
            for i in 0..=QUADRATURE_INTERVALS {
                let delta = -half + i as f64 * h;
                let simpson = if i == 0 || i == QUADRATURE_INTERVALS {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let weight = simpson * h / 3.0 * norm * (-(delta * delta) / (2.0 * sigma * sigma)).exp();
                let step = Complex64::from_polar(1.0, PI * (phi + delta).sin());
                let mut rot = Complex64::new(weight, 0.0);
                for lag in lags.iter_mut() {
                    *lag += rot;
                    rot *= step;
                }
            }
            lags
        }
    }
}

/// Local-scattering correlation for a half-wavelength ULA with Gaussian
/// angular spread `angular_std` around `nominal_angle`:
///
/// `R[l, m] = beta E{exp(j pi (l - m) sin(phi + delta))}`, `delta ~ N(0, sigma^2)`,
///
/// normalized so that `tr(R) / N = beta`.
pub fn spatial_correlation(
    beta_linear: f64,
    nominal_angle: f64,
    angular_std: f64,
    n: usize,
) -> Result<SpatialCorrelation> {
    spatial_correlation_with(CorrelationModel::Quadrature, beta_linear, nominal_angle, angular_std, n)
}

pub fn spatial_correlation_with(
    model: CorrelationModel,
    beta_linear: f64,
    nominal_angle: f64,
    angular_std: f64,
    n: usize,
) -> Result<SpatialCorrelation> {
    if !(beta_linear > 0.0 && beta_linear.is_finite()) {
        return Err(Error::InvalidInput(format!("channel gain must be positive, got {beta_linear}")));
    }
    if n == 0 {
        return Err(Error::InvalidInput("need at least one antenna".into()));
    }
    if !nominal_angle.is_finite() || !(angular_std >= 0.0 && angular_std.is_finite()) {
        return Err(Error::InvalidInput("angles must be finite, spread nonnegative".into()));
    }
    let lags = local_scattering_lags(model, nominal_angle, angular_std, n);
    let scale = beta_linear / lags[0].re;
    let raw = CMatrix::from_fn(n, n, |l, m| {
        if l >= m {
            lags[l - m] * scale
        } else {
            lags[m - l].conj() * scale
        }
    });
    let r = HermitianMatrix::new(raw)?;
    let eig = r.eigen()?;
    let mut clipped = eig.reconstruct_with(|l| l.max(0.0));
    // clipping only removes rounding-level negative mass; keep tr(R)/N = beta
    clipped.scale_mut(beta_linear * n as f64 / clipped.trace());
    Ok(SpatialCorrelation { matrix: clipped, nominal_angle, angular_std })
}

/// Draws `h ~ CN(0, R)` as `Q sqrt(Sigma) g` with `g ~ CN(0, I)`.
#[derive(Debug, Clone)]
pub struct CorrelatedRayleigh {
    factor: CMatrix,
}

impl CorrelatedRayleigh {
    pub fn new(r: &HermitianMatrix) -> Result<Self> {
        let eig = r.eigen()?;
        let lmax = eig.eigenvalues[0].max(0.0);
        let lmin = *eig.eigenvalues.last().unwrap();
        if lmin < -1e-9 * lmax.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidInput(format!(
                "correlation matrix is not PSD (min eigenvalue {lmin:e})"
            )));
        }
        let floor = eig.eigenvalues.len() as f64 * f64::EPSILON * lmax;
        let mut factor = eig.eigenvectors.clone();
        for (j, mut col) in factor.column_iter_mut().enumerate() {
            let lam = eig.eigenvalues[j];
            let amp = if lam > floor { lam.sqrt() } else { 0.0 };
            col *= Complex64::new(amp, 0.0);
        }
        Ok(Self { factor })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> CVector {
        let n = self.factor.ncols();
        let g = CVector::from_fn(n, |_, _| standard_complex_normal(rng));
        &self.factor * g
    }
}

pub fn standard_complex_normal(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Per-UE channels and noise powers: the data of one beamforming problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    channels: Vec<CVector>,
    noise_powers: Vec<f64>,
    seed: Option<u64>,
}

impl ChannelSet {
    pub fn new(channels: Vec<CVector>, noise_powers: Vec<f64>, seed: Option<u64>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidInput("channel set needs at least one UE".into()));
        }
        if channels.len() != noise_powers.len() {
            return Err(Error::InvalidInput(format!(
                "{} channels but {} noise powers",
                channels.len(),
                noise_powers.len()
            )));
        }
        let n = channels[0].len();
        if n == 0 || channels.iter().any(|h| h.len() != n) {
            return Err(Error::InvalidInput("all channels must share a nonzero length".into()));
        }
        if channels.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("channel entries must be finite".into()));
        }
        if noise_powers.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput("noise powers must be positive".into()));
        }
        Ok(Self { channels, noise_powers, seed })
    }

    pub fn num_antennas(&self) -> usize {
        self.channels[0].len()
    }

    pub fn num_ues(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, k: usize) -> &CVector {
        &self.channels[k]
    }

    pub fn channels(&self) -> &[CVector] {
        &self.channels
    }

    pub fn noise_powers(&self) -> &[f64] {
        &self.noise_powers
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// `H_k = h_k h_k^H / sigma_k^2`.
    pub fn snr_matrix(&self, k: usize) -> HermitianMatrix {
        HermitianMatrix::outer(&self.channels[k]).scale(1.0 / self.noise_powers[k])
    }

    /// `N x K` matrix with columns `h_k / sigma_k`.
    pub fn normalized_vectors(&self) -> CMatrix {
        let n = self.num_antennas();
        let mut v = CMatrix::zeros(n, self.num_ues());
        for (k, h) in self.channels.iter().enumerate() {
            let s = Complex64::new(1.0 / self.noise_powers[k].sqrt(), 0.0);
            v.set_column(k, &(h * s));
        }
        v
    }

    pub fn measurement_map(&self) -> Result<MeasurementMap> {
        MeasurementMap::from_vectors(self.normalized_vectors())
    }

    /// `|h_k^H w|^2 / sigma_k^2` for every UE.
    pub fn snr_of_beamformer(&self, w: &CVector) -> Vec<f64> {
        self.channels
            .iter()
            .zip(&self.noise_powers)
            .map(|(h, s)| h.dotc(w).norm_sqr() / s)
            .collect()
    }

    /// Multiplies every channel by a common complex factor.
    pub fn rotated(&self, factor: Complex64) -> Self {
        Self {
            channels: self.channels.iter().map(|h| h * factor).collect(),
            noise_powers: self.noise_powers.clone(),
            seed: self.seed,
        }
    }

    /// Writes the set as CSV: a `n,k,seed` header block followed by one row
    /// per UE holding its noise power and interleaved real/imaginary channel
    /// entries.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().flexible(true).from_writer(out);
        wtr.write_record(["n", "k", "seed"])?;
        wtr.write_record([
            self.num_antennas().to_string(),
            self.num_ues().to_string(),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
        let mut header = vec!["ue".to_string(), "noise_power".to_string()];
        for i in 0..self.num_antennas() {
            header.push(format!("re{i}"));
            header.push(format!("im{i}"));
        }
        wtr.write_record(&header)?;
        for (k, h) in self.channels.iter().enumerate() {
            let mut row = vec![k.to_string(), format!("{:e}", self.noise_powers[k])];
            for z in h.iter() {
                row.push(format!("{:e}", z.re));
                row.push(format!("{:e}", z.im));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut records = rdr.records();
        let mut next = |what: &str| -> Result<csv::StringRecord> {
            records
                .next()
                .ok_or_else(|| Error::Format(format!("missing {what}")))?
                .map_err(Error::from)
        };
        let head = next("header")?;
        if head.iter().collect::<Vec<_>>() != ["n", "k", "seed"] {
            return Err(Error::Format("first line must be `n,k,seed`".into()));
        }
        let dims = next("dimension line")?;
        let field = |rec: &csv::StringRecord, i: usize| -> Result<String> {
            rec.get(i).map(str::to_string).ok_or_else(|| Error::Format(format!("missing field {i}")))
        };
        let n: usize = parse(&field(&dims, 0)?, "n")?;
        let k: usize = parse(&field(&dims, 1)?, "k")?;
        let seed_txt = field(&dims, 2)?;
        let seed = if seed_txt.is_empty() { None } else { Some(parse(&seed_txt, "seed")?) };
        let cols = next("column header")?;
        if cols.len() != 2 + 2 * n {
            return Err(Error::Format(format!("column header has {} fields, expected {}", cols.len(), 2 + 2 * n)));
        }
        let mut channels = Vec::with_capacity(k);
        let mut noise = Vec::with_capacity(k);
        for ue in 0..k {
            let row = next(&format!("row for UE {ue}"))?;
            if row.len() != 2 + 2 * n {
                return Err(Error::Format(format!("UE row {ue} has {} fields", row.len())));
            }
            let idx: usize = parse(&row[0], "ue index")?;
            if idx != ue {
                return Err(Error::Format(format!("expected UE {ue}, found {idx}")));
            }
            noise.push(parse(&row[1], "noise_power")?);
            let h = CVector::from_fn(n, |i, _| {
                Complex64::new(
                    row[2 + 2 * i].parse().unwrap_or(f64::NAN),
                    row[3 + 2 * i].parse().unwrap_or(f64::NAN),
                )
            });
            channels.push(h);
        }
        Self::new(channels, noise, seed).map_err(|e| Error::Format(e.to_string()))
    }
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("cannot parse {what} from `{s}`")))
}

/// Draws one channel vector per UE from its correlation matrix.
pub fn sample_channels(
    seed: u64,
    geometry: &NetworkGeometry,
    correlations: &[SpatialCorrelation],
    noise_powers: &[f64],
) -> Result<ChannelSet> {
    if correlations.len() != geometry.num_ues {
        return Err(Error::InvalidInput(format!(
            "{} correlation matrices for {} UEs",
            correlations.len(),
            geometry.num_ues
        )));
    }
    if correlations.iter().any(|r| r.matrix.dim() != geometry.num_antennas) {
        return Err(Error::InvalidInput("correlation size must equal the antenna count".into()));
    }
    let mut rng = rng_for(seed, CHANNEL_STREAM);
    let mut channels = Vec::with_capacity(correlations.len());
    for r in correlations {
        channels.push(CorrelatedRayleigh::new(&r.matrix)?.sample(&mut rng));
    }
    ChannelSet::new(channels, noise_powers.to_vec(), Some(seed))
}

/// Physical parameters of the simulated cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub network: NetworkParams,
    pub noise_power_dbm: f64,
    pub angular_std_deg: f64,
    pub correlation_model: CorrelationModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            network: NetworkParams::default(),
            noise_power_dbm: -94.0,
            angular_std_deg: 15.0,
            correlation_model: CorrelationModel::Quadrature,
        }
    }
}

impl ScenarioConfig {
    pub fn with_size(num_antennas: usize, num_ues: usize) -> Self {
        let mut cfg = Self::default();
        cfg.network.num_antennas = num_antennas;
        cfg.network.num_ues = num_ues;
        cfg
    }

    pub fn noise_power(&self) -> f64 {
        dbm_to_watts(self.noise_power_dbm)
    }
}

/// Every intermediate of one seeded drop.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub geometry: NetworkGeometry,
    pub fading: LargeScaleFading,
    pub correlations: Vec<SpatialCorrelation>,
    pub channels: ChannelSet,
}

/// Runs the full generation pipeline for one seed.
pub fn generate_scenario(seed: u64, config: &ScenarioConfig) -> Result<Scenario> {
    let geometry = sample_geometry(seed, &config.network)?;
    let fading = LargeScaleFading::new(&geometry, sample_shadowing(seed, &geometry))?;
    let sigma = config.angular_std_deg.to_radians();
    let correlations = fading
        .beta_linear()
        .iter()
        .enumerate()
        .map(|(k, &beta)| {
            spatial_correlation_with(config.correlation_model, beta, geometry.azimuth(k), sigma, geometry.num_antennas)
        })
        .collect::<Result<Vec<_>>>()?;
    let noise = vec![config.noise_power(); geometry.num_ues];
    let channels = sample_channels(seed, &geometry, &correlations, &noise)?;
    Ok(Scenario { geometry, fading, correlations, channels })
}

pub fn generate_channels(seed: u64, config: &ScenarioConfig) -> Result<ChannelSet> {
    generate_scenario(seed, config).map(|s| s.channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use crate::hermitian::numerical_rank;

    #[test]
    fn pathloss_spot_values() {
        assert_eq!(pathloss_db(1.0).unwrap(), -30.5);
        assert!((pathloss_db(100.0).unwrap() - -103.9).abs() < 1e-12);
        assert!((pathloss_db(10.0).unwrap() - -67.2).abs() < 1e-12);
        assert!(pathloss_db(0.0).is_err());
        assert!(pathloss_db(-3.0).is_err());
    }

    #[test]
    fn noise_power_from_dbm() {
        assert_relative_eq!(dbm_to_watts(-94.0), 3.981_071_705_534_97e-13, max_relative = 1e-12);
    }

    #[test]
    fn geometry_is_deterministic_and_respects_exclusion() {
        let params = NetworkParams { num_ues: 200, min_bs_distance: 10.0, ..Default::default() };
        let a = sample_geometry(5, &params).unwrap();
        let b = sample_geometry(5, &params).unwrap();
        assert_eq!(a, b);
        assert!(a.distances().iter().all(|&d| d >= 10.0));
        assert!(a.ue_positions.iter().all(|p| (0.0..=750.0).contains(&p[0]) && (0.0..=750.0).contains(&p[1])));
    }

    #[test]
    fn geometry_rejects_infeasible_exclusion() {
        let params = NetworkParams { min_bs_distance: 750.0 / 2.0 * 2f64.sqrt(), ..Default::default() };
        assert!(matches!(sample_geometry(1, &params), Err(Error::Config(_))));
        let params = NetworkParams { num_ues: 0, ..Default::default() };
        assert!(sample_geometry(1, &params).is_err());
    }

    /// Mean distance from the center of a square of side `a` to a uniform
    /// point is `a (sqrt(2) + ln(1 + sqrt(2))) / 6`.
    #[test]
    fn geometry_mean_distance_matches_uniform_square() {
        let params = NetworkParams { num_ues: 1000, min_bs_distance: 0.0, ..Default::default() };
        let g = sample_geometry(123, &params).unwrap();
        let d = g.distances();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = 750.0 * (2f64.sqrt() + (1.0 + 2f64.sqrt()).ln()) / 6.0;
        assert!((mean - expected).abs() < 3.0 * (var / n).sqrt(), "mean {mean} vs {expected}");
    }

    fn three_ue_layout() -> NetworkGeometry {
        NetworkGeometry {
            area_side: 750.0,
            bs_position: [375.0, 375.0],
            num_antennas: 4,
            num_ues: 3,
            ue_positions: vec![[100.0, 100.0], [109.0, 100.0], [100.0, 104.0]],
            min_bs_distance: 5.0,
        }
    }

    #[test]
    fn shadow_covariance_entries() {
        let g = three_ue_layout();
        let cov = shadow_covariance(&g);
        assert_eq!(cov[(0, 0)], 16.0);
        assert!((cov[(0, 1)] - 8.0).abs() < 1e-12);
        assert_eq!(cov[(0, 1)], cov[(1, 0)]);
    }

    #[test]
    fn shadow_empirical_covariance() {
        let g = three_ue_layout();
        let sampler = ShadowSampler::new(&g);
        let mut rng = rng_for(77, SHADOW_STREAM);
        let draws = 100_000;
        let mut acc = DMatrix::<f64>::zeros(3, 3);
        let mut acc2 = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..draws {
            let f = sampler.sample(&mut rng);
            for a in 0..3 {
                for b in 0..3 {
                    acc[(a, b)] += f[a] * f[b];
                    acc2[(a, b)] += (f[a] * f[b]).powi(2);
                }
            }
        }
        let cov = shadow_covariance(&g);
        let n = draws as f64;
        for a in 0..3 {
            for b in 0..3 {
                let mean = acc[(a, b)] / n;
                let se = ((acc2[(a, b)] / n - mean * mean) / n).sqrt();
                assert!((mean - cov[(a, b)]).abs() < 3.0 * se, "({a},{b}) {mean} vs {}", cov[(a, b)]);
            }
        }
    }

    #[test]
    fn shadow_repair_clips_indefinite_covariance() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let repaired = ShadowSampler::from_covariance(bad).covariance();
        let eig = SymmetricEigen::new(repaired.clone());
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-12));
        assert_relative_eq!(repaired[(0, 1)], repaired[(1, 0)]);
    }

    #[test]
    fn correlation_diagonal_and_trace() {
        let r = spatial_correlation(2.5e-12, 0.4, 15f64.to_radians(), 8).unwrap();
        for i in 0..8 {
            assert_relative_eq!(r.matrix.as_matrix()[(i, i)].re, 2.5e-12, max_relative = 1e-6);
        }
        assert_relative_eq!(r.average_gain(), 2.5e-12, max_relative = 1e-9);
        let eig = r.matrix.eigen().unwrap();
        assert!(eig.eigenvalues.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn correlation_without_spread_is_rank_one() {
        let r = spatial_correlation(1.0, 0.3, 0.0, 6).unwrap();
        assert_eq!(numerical_rank(&r.matrix, 1e-4).unwrap(), 1);
        let a = CVector::from_fn(6, |l, _| Complex64::from_polar(1.0, PI * l as f64 * 0.3f64.sin()));
        let expected = HermitianMatrix::outer(&a);
        assert!((&r.matrix - &expected).frobenius_norm() < 1e-10);
    }

    /// Bessel function of the first kind from its periodic integral
    /// representation, where the trapezoid rule converges geometrically.
    fn bessel_j(order: i64, x: f64) -> f64 {
        let m = 1024;
        (0..m)
            .map(|i| {
                let tau = -PI + 2.0 * PI * i as f64 / m as f64;
                (x * tau.sin() - order as f64 * tau).cos()
            })
            .sum::<f64>()
            / m as f64
    }

    /// Exact Gaussian local scattering through the Jacobi-Anger expansion:
    /// `E{exp(j a sin(phi + delta))} = sum_n J_n(a) exp(j n phi) exp(-n^2 sigma^2 / 2)`.
    fn local_scattering_series(beta: f64, phi: f64, sigma: f64, n: usize) -> CMatrix {
        let lag = |d: i64| {
            let a = PI * d as f64;
            let terms = a.abs().ceil() as i64 + 40;
            let mut acc = Complex64::new(0.0, 0.0);
            for order in -terms..=terms {
                let damp = (-(order * order) as f64 * sigma * sigma / 2.0).exp();
                acc += Complex64::from_polar(bessel_j(order, a) * damp, order as f64 * phi);
            }
            acc * beta
        };
        let lags: Vec<Complex64> = (-(n as i64) + 1..n as i64).map(lag).collect();
        CMatrix::from_fn(n, n, |l, m| lags[(l as i64 - m as i64 + n as i64 - 1) as usize])
    }

    #[test]
    fn correlation_matches_series_oracle() {
        let (phi, sigma) = (30f64.to_radians(), 15f64.to_radians());
        let ours = spatial_correlation(1.0, phi, sigma, 4).unwrap();
        let exact = local_scattering_series(1.0, phi, sigma, 4);
        for l in 0..4 {
            for m in 0..4 {
                let a = ours.matrix.as_matrix()[(l, m)];
                let b = exact[(l, m)];
                assert!((a - b).norm() <= 0.02 * b.norm(), "({l},{m}): {a} vs {b}");
            }
        }
        // the quadrature is far tighter than that at full array size
        let big = spatial_correlation(1.0, -1.1, sigma, 36).unwrap();
        let exact = local_scattering_series(1.0, -1.1, sigma, 36);
        assert!((big.matrix.as_matrix() - &exact).norm() <= 1e-6 * exact.norm());
    }

    #[test]
    fn closed_form_is_accurate_only_for_small_spread() {
        let phi = 30f64.to_radians();
        let small = spatial_correlation_with(CorrelationModel::ClosedForm, 1.0, phi, 5f64.to_radians(), 4).unwrap();
        let exact = local_scattering_series(1.0, phi, 5f64.to_radians(), 4);
        for l in 0..4 {
            for m in 0..4 {
                let (a, b) = (small.matrix.as_matrix()[(l, m)], exact[(l, m)]);
                assert!((a - b).norm() <= 0.01 * b.norm(), "({l},{m}): {a} vs {b}");
            }
        }
        let wide = spatial_correlation_with(CorrelationModel::ClosedForm, 1.0, phi, 15f64.to_radians(), 4).unwrap();
        let exact = local_scattering_series(1.0, phi, 15f64.to_radians(), 4);
        let worst = (0..4)
            .map(|d| (wide.matrix.as_matrix()[(d, 0)] - exact[(d, 0)]).norm() / exact[(d, 0)].norm())
            .fold(0.0, f64::max);
        assert!(worst > 0.1, "closed form unexpectedly accurate at 15 degrees: {worst}");
    }

    #[test]
    fn channels_identity_correlation_variance() {
        let beta = 3.0;
        let r = HermitianMatrix::scaled_identity(4, beta);
        let sampler = CorrelatedRayleigh::new(&r).unwrap();
        let mut rng = rng_for(8, CHANNEL_STREAM);
        let draws = 100_000;
        let mut sum = vec![0.0; 4];
        let mut sum2 = vec![0.0; 4];
        for _ in 0..draws {
            let h = sampler.sample(&mut rng);
            for i in 0..4 {
                let p = h[i].norm_sqr();
                sum[i] += p;
                sum2[i] += p * p;
            }
        }
        let n = draws as f64;
        for i in 0..4 {
            let mean = sum[i] / n;
            let se = ((sum2[i] / n - mean * mean) / n).sqrt();
            assert!((mean - beta).abs() < 3.0 * se, "antenna {i}: {mean}");
        }
    }

    #[test]
    fn rank_one_correlation_gives_collinear_channels() {
        let r = spatial_correlation(1.0, -0.7, 0.0, 5).unwrap();
        let u = r.matrix.eigen().unwrap().vector(0);
        let sampler = CorrelatedRayleigh::new(&r.matrix).unwrap();
        let mut rng = rng_for(4, CHANNEL_STREAM);
        for _ in 0..20 {
            let h = sampler.sample(&mut rng);
            let along = u.dotc(&h);
            let residual = &h - &u * along;
            assert!(residual.norm() <= 1e-10 * h.norm().max(1e-30));
        }
    }

    #[test]
    fn non_psd_correlation_is_rejected() {
        let r = HermitianMatrix::from_real_diagonal(&[1.0, -0.5]);
        assert!(matches!(CorrelatedRayleigh::new(&r), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn scenario_channel_set_invariants() {
        let sc = generate_scenario(11, &ScenarioConfig::with_size(8, 5)).unwrap();
        let cs = &sc.channels;
        assert_eq!((cs.num_antennas(), cs.num_ues()), (8, 5));
        for k in 0..5 {
            let hk = cs.snr_matrix(k);
            assert_eq!(numerical_rank(&hk, 1e-9).unwrap(), 1);
            assert_relative_eq!(hk.trace(), cs.channel(k).norm_squared() / cs.noise_powers()[k], max_relative = 1e-9);
            let expected = -30.5 - 36.7 * sc.fading.distances[k].log10() + sc.fading.shadow_db[k];
            assert_eq!(sc.fading.beta_db[k], expected);
        }
    }

    #[test]
    fn csv_rejects_malformed_input() {
        assert!(matches!(ChannelSet::read_csv("a,b\n".as_bytes()), Err(Error::Format(_))));
        let truncated = "n,k,seed\n2,2,\nue,noise_power,re0,im0,re1,im1\n0,1,1,0,0,1\n";
        assert!(matches!(ChannelSet::read_csv(truncated.as_bytes()), Err(Error::Format(_))));
        let bad_num = "n,k,seed\n1,1,\nue,noise_power,re0,im0\n0,1,x,0\n";
        assert!(ChannelSet::read_csv(bad_num.as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn pipeline_is_reproducible_and_csv_round_trips(seed in any::<u64>(), n in 1usize..6, k in 1usize..5) {
            let cfg = ScenarioConfig::with_size(n, k);
            let a = generate_channels(seed, &cfg).unwrap();
            let b = generate_channels(seed, &cfg).unwrap();
            prop_assert_eq!(&a, &b);
            let mut buf = Vec::new();
            a.write_csv(&mut buf).unwrap();
            let back = ChannelSet::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(a, back);
        }

        #[test]
        fn pathloss_strictly_decreasing(d in 0.1f64..5000.0, step in 1e-3f64..100.0) {
            prop_assert!(pathloss_db(d + step).unwrap() < pathloss_db(d).unwrap());
        }
    }
}
