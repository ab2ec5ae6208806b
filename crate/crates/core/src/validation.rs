//! Orbit-space geometry, covariance comparison and the hypothesis verdict.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cert::DeviceCertificate;
use crate::error::{Error, Result};
use crate::gaussian::{mean_photons, photon_covariance, InputKind};
use crate::hafnian::MAX_ENUMERATION_MODES;
use crate::orbits::{FeatureOptions, FeatureVector, OrbitCounts, DEFAULT_N_MAX, DEFAULT_N_MIN, DEFAULT_RESAMPLES};
use crate::pipeline::Device;
use crate::sampling::{
    derive_seed, sample_classical, sample_distinguishable, sample_smsv_bruteforce, SampleSet, SamplerOptions,
    DEFAULT_PNR_CUTOFF, DISTINGUISHABLE,
};
use crate::tdm::CircuitProgram;

/// Fewest bootstrap replicates accepted by [`spread_metric`].
pub const MIN_RESAMPLES: usize = 30;

/// Total-least-squares plane `normal · p = offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    pub normal: [f64; 3],
    pub offset: f64,
    pub rms_residual: f64,
    /// Signed distances of the fitted points.
    pub residuals: Vec<f64>,
}

impl PlaneFit {
    pub fn residual(&self, p: [f64; 3]) -> f64 {
        dot(self.normal, p) - self.offset
    }

    /// Residual over its standard deviation along the normal.
    pub fn z_score(&self, p: [f64; 3], cov: &Matrix3<f64>) -> f64 {
        let n = Vector3::from(self.normal);
        self.residual(p).abs() / (n.dot(&(cov * n))).sqrt().max(f64::MIN_POSITIVE)
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Centroid and eigen-decomposition of the scatter matrix, eigenvalues ascending.
fn principal_axes(points: &[[f64; 3]]) -> (Vector3<f64>, [f64; 3], Matrix3<f64>) {
    let k = points.len() as f64;
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) / k;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = Vector3::from(*p) - centroid;
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.map(|i| eig.eigenvalues[i].max(0.0));
    let vectors = Matrix3::from_columns(&order.map(|i| eig.eigenvectors.column(i).into_owned()));
    (centroid, values, vectors)
}

/// Flip so the largest component is positive.
fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    let i = v.iamax();
    if v[i] < 0.0 {
        -v
    } else {
        v
    }
}

pub fn fit_hyperplane(points: &[[f64; 3]]) -> Result<PlaneFit> {
    if points.len() < 4 {
        return Err(Error::Degenerate(format!("plane fit needs at least 4 points, got {}", points.len())));
    }
    let (centroid, values, vectors) = principal_axes(points);
    if values[2] <= 0.0 || values[1] <= 1e-14 * values[2] {
        return Err(Error::Degenerate("points are collinear".into()));
    }
    let normal = canonical_sign(vectors.column(0).into_owned());
    let normal = [normal[0], normal[1], normal[2]];
    let offset = dot(normal, [centroid[0], centroid[1], centroid[2]]);
    let residuals: Vec<f64> = points.iter().map(|p| dot(normal, *p) - offset).collect();
    let rms_residual = rms(&residuals);
    Ok(PlaneFit { normal, offset, rms_residual, residuals })
}

/// Total-least-squares line through the points of one photon number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub n: usize,
    pub direction: [f64; 3],
    pub centroid: [f64; 3],
    /// Perpendicular distances of the fitted points.
    pub residuals: Vec<f64>,
}

impl LineFit {
    /// Component of `p − centroid` perpendicular to the line.
    pub fn offset(&self, p: [f64; 3]) -> [f64; 3] {
        let d = Vector3::from(p) - Vector3::from(self.centroid);
        let u = Vector3::from(self.direction);
        let r = d - u * u.dot(&d);
        [r[0], r[1], r[2]]
    }

    pub fn distance(&self, p: [f64; 3]) -> f64 {
        Vector3::from(self.offset(p)).norm()
    }

    /// Distance over the point's standard deviation along the offset.
    pub fn z_score(&self, p: [f64; 3], cov: &Matrix3<f64>) -> f64 {
        let r = Vector3::from(self.offset(p));
        let len = r.norm();
        if len == 0.0 {
            return 0.0;
        }
        let u = r / len;
        len / u.dot(&(cov * u)).sqrt().max(f64::MIN_POSITIVE)
    }
}

/// One line per photon number; groups with fewer than two points are skipped.
pub fn fit_iso_n_lines(groups: &[(usize, Vec<[f64; 3]>)]) -> Vec<LineFit> {
    groups
        .iter()
        .filter_map(|(n, points)| {
            if points.len() < 2 {
                log::warn!("iso-n line for n = {n} skipped: {} point(s)", points.len());
                return None;
            }
            let (centroid, _, vectors) = principal_axes(points);
            let u = canonical_sign(vectors.column(2).into_owned());
            let mut line = LineFit {
                n: *n,
                direction: [u[0], u[1], u[2]],
                centroid: [centroid[0], centroid[1], centroid[2]],
                residuals: Vec::new(),
            };
            line.residuals = points.iter().map(|p| line.distance(*p)).collect();
            Some(line)
        })
        .collect()
}

/// Groups feature vectors from several runs by photon number.
pub fn group_by_n<'a>(runs: impl IntoIterator<Item = &'a [FeatureVector]>) -> Vec<(usize, Vec<[f64; 3]>)> {
    let mut groups: BTreeMap<usize, Vec<[f64; 3]>> = BTreeMap::new();
    for run in runs {
        for f in run {
            groups.entry(f.n).or_default().push(f.point());
        }
    }
    groups.into_iter().collect()
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Per-n 3×3 covariance of the feature vectors across bootstrap replicates.
pub fn point_covariances(replicates: &[Vec<FeatureVector>]) -> BTreeMap<usize, Matrix3<f64>> {
    let mut by_n: BTreeMap<usize, Vec<Vector3<f64>>> = BTreeMap::new();
    for rep in replicates {
        for f in rep {
            by_n.entry(f.n).or_default().push(Vector3::from(f.point()));
        }
    }
    by_n.into_iter()
        .filter(|(_, pts)| pts.len() > 1)
        .map(|(n, pts)| {
            let k = pts.len() as f64;
            // shifted by the first point so identical inputs give exactly zero
            let pts: Vec<Vector3<f64>> = pts.iter().map(|p| p - pts[0]).collect();
            let mean = pts.iter().sum::<Vector3<f64>>() / k;
            let cov = pts.iter().map(|p| (p - mean) * (p - mean).transpose()).sum::<Matrix3<f64>>() / (k - 1.0);
            (n, cov)
        })
        .collect()
}

/// Mean over n of the trace of the bootstrap covariance.
pub fn spread_metric(replicates: &[Vec<FeatureVector>]) -> Result<f64> {
    if replicates.len() < MIN_RESAMPLES {
        return Err(Error::Input(format!(
            "spread needs at least {MIN_RESAMPLES} bootstrap replicates, got {}",
            replicates.len()
        )));
    }
    let covs = point_covariances(replicates);
    if covs.is_empty() {
        return Ok(0.0);
    }
    Ok(covs.values().map(|c| c.trace()).sum::<f64>() / covs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceDistance {
    /// ‖a − b‖_F / ‖b‖_F.
    pub frobenius: f64,
    /// Pearson correlation of the off-diagonal entries.
    pub pearson: f64,
}

pub fn covariance_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<CovarianceDistance> {
    if a.shape() != b.shape() || !a.is_square() {
        return Err(Error::Input(format!("covariance shapes {:?} and {:?}", a.shape(), b.shape())));
    }
    let norm = b.norm();
    if norm == 0.0 {
        return Err(Error::Degenerate("reference covariance is zero".into()));
    }
    let frobenius = (a - b).norm() / norm;
    let m = a.nrows();
    let pairs: Vec<(f64, f64)> = (0..m)
        .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| (a[(i, j)], b[(i, j)]))
        .collect();
    Ok(CovarianceDistance { frobenius, pearson: pearson(&pairs) })
}

fn pearson(pairs: &[(f64, f64)]) -> f64 {
    if pairs.is_empty() {
        return 1.0;
    }
    let k = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(x, y), (a, b)| (x + a / k, y + b / k));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 && syy == 0.0 {
        return 1.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Photon-count covariance of a sample set, shots weighted by `weights`.
fn weighted_covariance(set: &SampleSet, weights: Option<&[u32]>) -> DMatrix<f64> {
    let m = set.n_modes();
    let mut first = vec![0.0; m];
    let mut second = vec![0.0; m * m];
    let mut total = 0.0;
    let mut nz: Vec<(usize, f64)> = Vec::with_capacity(m);
    for (k, shot) in set.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[k] as f64);
        if w == 0.0 {
            continue;
        }
        total += w;
        nz.clear();
        nz.extend(shot.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, &c)| (i, c as f64)));
        for (a, &(i, ci)) in nz.iter().enumerate() {
            first[i] += w * ci;
            let wi = w * ci;
            for &(j, cj) in &nz[a..] {
                second[i * m + j] += wi * cj;
            }
        }
    }
    DMatrix::from_fn(m, m, |i, j| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        second[i * m + j] / total - first[i] / total * first[j] / total
    })
}

pub fn sample_covariance(set: &SampleSet) -> DMatrix<f64> {
    weighted_covariance(set, None)
}

/// Relative Frobenius distance between bootstrap and full-sample covariances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseFloor {
    pub mean: f64,
    pub std_dev: f64,
    pub replicates: Vec<f64>,
}

impl NoiseFloor {
    /// Whether `distance` sits more than `threshold` standard deviations above the floor.
    pub fn exceeded_by(&self, distance: f64, threshold: f64) -> bool {
        distance > self.mean + threshold * self.std_dev
    }
}

pub fn covariance_noise_floor(set: &SampleSet, resamples: usize, seed: u64) -> Result<NoiseFloor> {
    if resamples < 2 {
        return Err(Error::Input("noise floor needs at least 2 resamples".into()));
    }
    let full = sample_covariance(set);
    let n = set.shots();
    let mut weights = vec![0u32; n];
    let replicates: Vec<f64> = (0..resamples)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
            weights.iter_mut().for_each(|w| *w = 0);
            for _ in 0..n {
                weights[rng.gen_range(0..n)] += 1;
            }
            covariance_distance(&weighted_covariance(set, Some(&weights)), &full).map(|d| d.frobenius)
        })
        .collect::<Result<_>>()?;
    let k = replicates.len() as f64;
    let mean = replicates.iter().sum::<f64>() / k;
    let std_dev = (replicates.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    Ok(NoiseFloor { mean, std_dev, replicates })
}

/// Hypotheses ranked by [`validate`].
pub const HYPOTHESES: [&str; 5] = ["smsv", "thermal", "squashed", "coherent", DISTINGUISHABLE];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub seed: u64,
    /// Certificate squeezing label.
    pub squeezing: String,
    /// Shots per simulated hypothesis; defaults to the size of the input.
    pub shots: Option<usize>,
    pub n_min: usize,
    pub n_max: usize,
    pub features: FeatureOptions,
    pub resamples: usize,
    pub covariance_resamples: usize,
    /// Test threshold in standard deviations.
    pub threshold: f64,
    /// Extra thermal runs at these multiples of the common efficiency.
    pub sweep_factors: Vec<f64>,
    pub pnr_cutoff: u8,
    pub threads: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            seed: 0,
            squeezing: "low".into(),
            shots: None,
            n_min: DEFAULT_N_MIN,
            n_max: DEFAULT_N_MAX,
            features: FeatureOptions::default(),
            resamples: DEFAULT_RESAMPLES,
            covariance_resamples: 20,
            threshold: 3.0,
            sweep_factors: vec![0.9, 0.95, 1.05, 1.1],
            pnr_cutoff: DEFAULT_PNR_CUTOFF,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisResult {
    pub hypothesis: String,
    /// Seed of the simulated run, absent when the hypothesis was not sampled.
    pub seed: Option<u64>,
    pub mean_photons: Option<f64>,
    pub features: Vec<FeatureVector>,
    pub spread: Option<f64>,
    pub plane_rms_z: Option<f64>,
    /// Whether the hypothesis puts its points on the reference plane.
    pub on_plane: bool,
    pub orbit_rms_z: Option<f64>,
    pub orbit_compatible: Option<bool>,
    /// Observed minus predicted total mean photons, in standard errors.
    pub mean_photons_z: Option<f64>,
    pub intensity_compatible: Option<bool>,
    pub covariance: CovarianceDistance,
    /// "analytic" or "simulated".
    pub covariance_source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub version: String,
    pub config: ValidationConfig,
    pub samples_hash: String,
    pub program_hash: String,
    pub certificate: String,
    pub n_modes: usize,
    pub shots: usize,
    pub observed: Vec<FeatureVector>,
    pub observed_spread: Option<f64>,
    pub observed_mean_photons: f64,
    /// Fitted to the thermal run and its efficiency sweep.
    pub plane: Option<PlaneFit>,
    pub observed_plane_rms_z: Option<f64>,
    pub off_plane: Option<bool>,
    pub lines: Vec<LineFit>,
    pub observed_line_rms_z: Option<f64>,
    pub noise_floor: NoiseFloor,
    pub hypotheses: Vec<HypothesisResult>,
    /// Best hypothesis first.
    pub verdict: Vec<String>,
    pub warnings: Vec<String>,
    /// Sweep runs, for plotting.
    pub sweep: Vec<(f64, Vec<FeatureVector>)>,
    #[serde(skip)]
    pub covariances: BTreeMap<String, DMatrix<f64>>,
}

impl HypothesisResult {
    /// Number of failed compatibility tests (orbits, intensity).
    pub fn incompatibilities(&self) -> usize {
        [self.orbit_compatible, self.intensity_compatible].iter().filter(|c| **c == Some(false)).count()
    }
}

impl ValidationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn hypothesis(&self, name: &str) -> Option<&HypothesisResult> {
        self.hypotheses.iter().find(|h| h.hypothesis == name)
    }

    /// `label,n,o1,o2,o3,e1,e2,e3,support` for every point in the report.
    pub fn orbit_scatter_csv(&self) -> String {
        let mut out = String::from("label,n,o1,o2,o3,e1,e2,e3,support\n");
        let mut push = |label: &str, fs: &[FeatureVector]| {
            for f in fs {
                let [e1, e2, e3] = f.std_errors;
                out.push_str(&format!(
                    "{label},{},{:e},{:e},{:e},{:e},{:e},{:e},{}\n",
                    f.n, f.o1, f.o2, f.o3, e1, e2, e3, f.support
                ));
            }
        };
        push("observed", &self.observed);
        for h in &self.hypotheses {
            push(&h.hypothesis, &h.features);
        }
        for (eff, fs) in &self.sweep {
            push(&format!("thermal@{eff}"), fs);
        }
        out
    }

    /// Writes `report.json`, `orbits.csv` and one `covariance_<name>.csv`
    /// grid (`i,j,value`) per stored matrix.
    pub fn write_files(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: String, body: String| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
            Ok(())
        };
        put("report.json".into(), self.to_json())?;
        put("orbits.csv".into(), self.orbit_scatter_csv())?;
        for (name, c) in &self.covariances {
            put(format!("covariance_{name}.csv"), grid_csv(c))?;
        }
        Ok(written)
    }
}

/// Long-format `i,j,value` grid, one blank line between rows (gnuplot `pm3d`).
pub fn grid_csv(c: &DMatrix<f64>) -> String {
    let mut out = String::from("i,j,value\n");
    for i in 0..c.nrows() {
        for j in 0..c.ncols() {
            out.push_str(&format!("{i},{j},{:e}\n", c[(i, j)]));
        }
        out.push('\n');
    }
    out
}

struct Run {
    features: Vec<FeatureVector>,
    covs: BTreeMap<usize, Matrix3<f64>>,
    spread: f64,
}

fn analyse(set: &SampleSet, cfg: &ValidationConfig, seed: u64) -> Result<Run> {
    let w = cfg.features.pool_width;
    let table = OrbitCounts::from_samples(set, cfg.n_min.saturating_sub(w), cfg.n_max + w)?;
    let in_range = |f: &FeatureVector| (cfg.n_min..=cfg.n_max).contains(&f.n);
    let features: Vec<FeatureVector> = table.features(&cfg.features).into_iter().filter(in_range).collect();
    let reps: Vec<Vec<FeatureVector>> = table
        .bootstrap(&cfg.features, cfg.resamples, seed)
        .into_iter()
        .map(|r| r.into_iter().filter(in_range).collect())
        .collect();
    let spread = spread_metric(&reps)?;
    Ok(Run { features, covs: point_covariances(&reps), spread })
}

fn plane_z(plane: &PlaneFit, run: &Run) -> Option<f64> {
    let z: Vec<f64> = run
        .features
        .iter()
        .filter_map(|f| run.covs.get(&f.n).map(|c| plane.z_score(f.point(), c)))
        .collect();
    (!z.is_empty()).then(|| rms(&z))
}

/// RMS over n and components of the standardized difference between two runs.
fn orbit_z(a: &Run, b: &Run) -> Option<f64> {
    let mut z = Vec::new();
    for fa in &a.features {
        let Some(fb) = b.features.iter().find(|f| f.n == fa.n) else { continue };
        let (Some(ca), Some(cb)) = (a.covs.get(&fa.n), b.covs.get(&fa.n)) else { continue };
        for k in 0..3 {
            let var = ca[(k, k)] + cb[(k, k)];
            if var > 0.0 {
                z.push((fa.point()[k] - fb.point()[k]) / var.sqrt());
            }
        }
    }
    (!z.is_empty()).then(|| rms(&z))
}

/// Runs every hypothesis against `samples` and ranks them.
///
/// Ranking is lexicographic: agreement with the observed on/off-plane
/// status, then the number of failed compatibility tests (orbit points,
/// mean photon number), then covariance distance.
pub fn validate(
    samples: &SampleSet,
    program: &CircuitProgram,
    certificate: &DeviceCertificate,
    config: &ValidationConfig,
) -> Result<ValidationReport> {
    let device = Device::from_certificate(program.clone(), certificate)?;
    let m = device.n_outputs();
    if samples.n_modes() != m {
        return Err(Error::Input(format!("samples have {} modes, program has {m}", samples.n_modes())));
    }
    let s = certificate.squeezing(&config.squeezing)?;
    let shots = config.shots.unwrap_or(samples.shots());
    let opts = SamplerOptions { pnr_cutoff: config.pnr_cutoff, threads: config.threads };
    let mut warnings = Vec::new();
    let seed_of = |k: u64| derive_seed(config.seed, k);

    let observed = analyse(samples, config, seed_of(0))?;
    if observed.features.is_empty() {
        warnings.push(format!(
            "no photon number in {}..={} reaches {} shots; orbit tests skipped",
            config.n_min, config.n_max, config.features.min_support
        ));
    }

    // simulated hypotheses
    let mut sims: BTreeMap<&str, (u64, SampleSet)> = BTreeMap::new();
    for (k, kind) in [InputKind::Thermal, InputKind::Squashed, InputKind::Coherent].into_iter().enumerate() {
        let seed = seed_of(1 + k as u64);
        sims.insert(kind.as_str(), (seed, sample_classical(kind, &device, s, shots, seed, opts)?));
    }
    let seed = seed_of(4);
    sims.insert(DISTINGUISHABLE, (seed, sample_distinguishable(&device, s, shots, seed, opts)?));
    if m <= MAX_ENUMERATION_MODES {
        let seed = seed_of(5);
        let cutoff = (config.pnr_cutoff as usize).min(crate::hafnian::MAX_ENUMERATION_CUTOFF);
        sims.insert("smsv", (seed, sample_smsv_bruteforce(&device, s, shots, seed, cutoff, opts)?));
    } else {
        warnings.push(format!("smsv is not sampled at {m} modes; its orbit tests are skipped"));
    }
    let runs: BTreeMap<&str, Run> = sims
        .iter()
        .map(|(name, (seed, set))| Ok((*name, analyse(set, config, derive_seed(*seed, 1))?)))
        .collect::<Result<_>>()?;

    // efficiency sweep for the reference plane and iso-n lines
    let mut sweep = Vec::new();
    for (k, factor) in config.sweep_factors.iter().enumerate() {
        let eff = certificate.common_efficiency * factor;
        let cert = certificate.clone().with_common_efficiency(eff)?;
        let dev = Device::from_certificate(program.clone(), &cert)?;
        let seed = seed_of(10 + k as u64);
        let set = sample_classical(InputKind::Thermal, &dev, s, shots, seed, opts)?;
        sweep.push((eff, analyse(&set, config, derive_seed(seed, 1))?));
    }
    let thermal = &runs["thermal"];
    let mut plane_points: Vec<[f64; 3]> = thermal.features.iter().map(|f| f.point()).collect();
    plane_points.extend(sweep.iter().flat_map(|(_, r)| r.features.iter().map(|f| f.point())));
    let plane = match fit_hyperplane(&plane_points) {
        Ok(p) => Some(p),
        Err(e) => {
            warnings.push(format!("reference plane not fitted: {e}"));
            None
        }
    };
    let lines = fit_iso_n_lines(&group_by_n(
        std::iter::once(thermal.features.as_slice()).chain(sweep.iter().map(|(_, r)| r.features.as_slice())),
    ));
    let observed_plane_rms_z = plane.as_ref().and_then(|p| plane_z(p, &observed));
    let off_plane = observed_plane_rms_z.map(|z| z > config.threshold);
    let line_z: Vec<f64> = observed
        .features
        .iter()
        .filter_map(|f| {
            let line = lines.iter().find(|l| l.n == f.n)?;
            Some(line.z_score(f.point(), observed.covs.get(&f.n)?))
        })
        .collect();
    let observed_line_rms_z = (!line_z.is_empty()).then(|| rms(&line_z));

    // covariances
    let observed_mean = samples.total_mean();
    let observed_cov = sample_covariance(samples);
    let noise_floor = covariance_noise_floor(samples, config.covariance_resamples, seed_of(20))?;
    let mut covariances = BTreeMap::new();
    covariances.insert("observed".to_string(), observed_cov.clone());

    let mut hypotheses = Vec::new();
    for name in HYPOTHESES {
        let run = runs.get(name);
        let kind: Option<InputKind> = name.parse().ok();
        let analytic = match kind {
            Some(k) => match device.output_state(k, s).and_then(|st| photon_covariance(&st)) {
                Ok(c) => Some(c),
                Err(e) if matches!(e, Error::Unsupported(_)) => None,
                Err(e) => return Err(e),
            },
            None => None,
        };
        let (reference, source) = match analytic {
            Some(c) => (c, "analytic"),
            None => (sample_covariance(&sims[name].1), "simulated"),
        };
        let covariance = covariance_distance(&observed_cov, &reference)?;
        covariances.insert(name.to_string(), reference);
        let plane_rms_z = run.zip(plane.as_ref()).and_then(|(r, p)| plane_z(p, r));
        let orbit_rms_z = run.and_then(|r| orbit_z(&observed, r));
        let predicted = match kind {
            Some(k) => Some((mean_photons(&device.output_state(k, s)?).iter().sum::<f64>(), 0.0)),
            None => sims.get(name).map(|(_, set)| set.total_mean()),
        };
        let mean_photons_z = predicted.map(|(mean, se)| {
            (observed_mean.0 - mean) / (observed_mean.1.powi(2) + se * se).sqrt().max(f64::MIN_POSITIVE)
        });
        hypotheses.push(HypothesisResult {
            hypothesis: name.to_string(),
            seed: sims.get(name).map(|(seed, _)| *seed),
            mean_photons: predicted.map(|(mean, _)| mean),
            mean_photons_z,
            intensity_compatible: mean_photons_z.map(|z| z.abs() <= config.threshold),
            features: run.map(|r| r.features.clone()).unwrap_or_default(),
            spread: run.map(|r| r.spread),
            plane_rms_z,
            // Gaussian states share the plane; only a sampled run can say otherwise
            on_plane: plane_rms_z.map_or(true, |z| z <= config.threshold),
            orbit_rms_z,
            orbit_compatible: orbit_rms_z.map(|z| z <= config.threshold),
            covariance,
            covariance_source: source.to_string(),
        });
    }

    let mut ranked: Vec<&HypothesisResult> = hypotheses.iter().collect();
    ranked.sort_by(|a, b| {
        let key = |h: &HypothesisResult| {
            let plane_mismatch = off_plane.is_some_and(|off| off == h.on_plane);
            (plane_mismatch, h.incompatibilities())
        };
        key(a).cmp(&key(b)).then(a.covariance.frobenius.total_cmp(&b.covariance.frobenius))
    });
    let verdict = ranked.iter().map(|h| h.hypothesis.clone()).collect();

    Ok(ValidationReport {
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        samples_hash: samples.hash(),
        program_hash: program.hash(),
        certificate: certificate.id(),
        n_modes: m,
        shots: samples.shots(),
        observed: observed.features.clone(),
        observed_spread: (!observed.features.is_empty()).then_some(observed.spread),
        observed_mean_photons: observed_mean.0,
        plane,
        observed_plane_rms_z,
        off_plane,
        lines,
        observed_line_rms_z,
        noise_floor,
        hypotheses,
        verdict,
        warnings,
        sweep: sweep.into_iter().map(|(eff, r)| (eff, r.features)).collect(),
        covariances,
    })
}
