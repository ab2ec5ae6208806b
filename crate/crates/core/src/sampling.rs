//! Photon-count samplers and the sample file format.
//!
//! Every shot draws from its own ChaCha8 stream keyed by `(seed, stage)`
//! and indexed by the shot number, so output does not depend on how the
//! shots are split across threads.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gaussian::InputKind;
use crate::hafnian::{enumerate_distribution_with, Distribution, ProbabilityOptions};
use crate::pipeline::Device;

pub const DEFAULT_PNR_CUTOFF: u8 = 7;

/// Label of the distinguishable-photon hypothesis in sample metadata.
pub const DISTINGUISHABLE: &str = "distinguishable";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub version: String,
    pub hypothesis: String,
    pub certificate: String,
    pub program_hash: String,
    pub seed: u64,
    pub shots: usize,
    pub n_modes: usize,
    pub pnr_cutoff: u8,
    pub squeezing: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, Value>,
}

/// Photon counts, one row per shot.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub meta: SampleMeta,
    counts: Vec<u8>,
}

impl SampleSet {
    pub fn new(meta: SampleMeta, counts: Vec<u8>) -> Result<Self> {
        if counts.len() != meta.shots * meta.n_modes {
            return Err(Error::Format(format!(
                "{} counts for {} shots of {} modes",
                counts.len(),
                meta.shots,
                meta.n_modes
            )));
        }
        if let Some(c) = counts.iter().find(|&&c| c > meta.pnr_cutoff) {
            return Err(Error::Format(format!("count {c} above the cutoff {}", meta.pnr_cutoff)));
        }
        Ok(SampleSet { meta, counts })
    }

    /// Wraps counts from elsewhere (e.g. hardware). Provenance fields are
    /// left blank and the cutoff is the largest count present.
    pub fn from_counts(hypothesis: &str, n_modes: usize, counts: Vec<u8>) -> Result<Self> {
        if n_modes == 0 || counts.len() % n_modes != 0 {
            return Err(Error::Format(format!("{} counts do not fill rows of {n_modes}", counts.len())));
        }
        let meta = SampleMeta {
            version: env!("CARGO_PKG_VERSION").into(),
            hypothesis: hypothesis.into(),
            certificate: String::new(),
            program_hash: String::new(),
            seed: 0,
            shots: counts.len() / n_modes,
            n_modes,
            pnr_cutoff: counts.iter().copied().max().unwrap_or(0),
            squeezing: 0.0,
            params: BTreeMap::new(),
        };
        SampleSet::new(meta, counts)
    }

    /// SHA-256 of the serialized file.
    pub fn hash(&self) -> String {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes).expect("writing to memory");
        crate::hash_hex(&bytes)
    }

    pub fn shots(&self) -> usize {
        self.meta.shots
    }

    pub fn n_modes(&self) -> usize {
        self.meta.n_modes
    }

    pub fn shot(&self, i: usize) -> &[u8] {
        let m = self.meta.n_modes;
        &self.counts[i * m..(i + 1) * m]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u8]> + '_ {
        self.counts.chunks_exact(self.meta.n_modes.max(1))
    }

    pub fn counts(&self) -> &[u8] {
        &self.counts
    }

    /// Photons detected in each shot.
    pub fn totals(&self) -> Vec<u32> {
        self.iter().map(|s| s.iter().map(|&c| c as u32).sum()).collect()
    }

    pub fn mean_photons(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_modes()];
        for shot in self.iter() {
            for (a, &c) in acc.iter_mut().zip(shot) {
                *a += c as f64;
            }
        }
        acc.iter().map(|a| a / self.shots() as f64).collect()
    }

    /// Mean total photons and its standard error.
    pub fn total_mean(&self) -> (f64, f64) {
        let t = self.totals();
        let n = t.len() as f64;
        let mean = t.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = t.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    }

    /// Appends another run with the same hypothesis and geometry.
    pub fn concat(mut self, other: &SampleSet) -> Result<Self> {
        if other.n_modes() != self.n_modes() || other.meta.pnr_cutoff != self.meta.pnr_cutoff {
            return Err(Error::Input("sample sets differ in modes or cutoff".into()));
        }
        self.counts.extend_from_slice(&other.counts);
        self.meta.shots += other.shots();
        let seeds = self.meta.params.entry("merged_seeds".into()).or_insert_with(|| Value::Array(vec![]));
        if let Value::Array(list) = seeds {
            list.push(other.meta.seed.into());
        }
        Ok(self)
    }

    /// `# <metadata json>` then one comma-separated line per shot.
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "# {}", serde_json::to_string(&self.meta)?)?;
        let mut line = String::with_capacity(4 * self.n_modes());
        for shot in self.iter() {
            line.clear();
            for (k, c) in shot.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                let _ = write!(line, "{c}");
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty sample file".into()))??;
        let json = header
            .strip_prefix("# ")
            .ok_or_else(|| Error::Format("sample file must start with a `# ` metadata line".into()))?;
        let meta: SampleMeta = serde_json::from_str(json)?;
        let mut counts = Vec::with_capacity(meta.shots * meta.n_modes);
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let before = counts.len();
            for field in line.split(',') {
                counts.push(
                    field
                        .parse::<u8>()
                        .map_err(|e| Error::Format(format!("shot {}: {e}", k + 1)))?,
                );
            }
            if counts.len() - before != meta.n_modes {
                return Err(Error::Format(format!("shot {} has {} modes", k + 1, counts.len() - before)));
            }
        }
        SampleSet::new(meta, counts)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerOptions {
    pub pnr_cutoff: u8,
    /// Worker threads; the output does not depend on it.
    pub threads: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            pnr_cutoff: DEFAULT_PNR_CUTOFF,
            threads: 1,
        }
    }
}

/// Independent seed for shard `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let digest = Sha256::new()
        .chain_update(b"shard")
        .chain_update(seed.to_le_bytes())
        .chain_update(index.to_le_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn stage_key(seed: u64, stage: &str) -> [u8; 32] {
    Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(stage.as_bytes())
        .finalize()
        .into()
}

/// Fills `shots × m` counts, calling `draw(rng, out_row)` once per shot.
fn run_shots<F>(seed: u64, stage: &str, shots: usize, m: usize, threads: usize, draw: F) -> Vec<u8>
where
    F: Fn(&mut ChaCha8Rng, &mut [u8]) + Sync,
{
    let key = stage_key(seed, stage);
    let mut counts = vec![0u8; shots * m];
    if m == 0 || shots == 0 {
        return counts;
    }
    let threads = threads.clamp(1, shots);
    let per = shots.div_ceil(threads);
    std::thread::scope(|scope| {
        for (chunk_index, chunk) in counts.chunks_mut(per * m).enumerate() {
            let draw = &draw;
            scope.spawn(move || {
                for (k, row) in chunk.chunks_exact_mut(m).enumerate() {
                    let mut rng = ChaCha8Rng::from_seed(key);
                    rng.set_stream((chunk_index * per + k) as u64);
                    draw(&mut rng, row);
                }
            });
        }
    });
    counts
}

fn poisson_capped<R: Rng>(rng: &mut R, mean: f64, cap: u8) -> u8 {
    if mean <= 0.0 {
        return 0;
    }
    let n: f64 = Poisson::new(mean).expect("positive mean").sample(rng);
    n.min(cap as f64) as u8
}

/// Column range `[lo, hi)` holding the nonzero entries of each row.
fn row_support(map: &DMatrix<Complex64>) -> Vec<(usize, usize)> {
    (0..map.nrows())
        .map(|i| {
            let nz = |j: &usize| map[(i, *j)] != Complex64::new(0.0, 0.0);
            let lo = (0..map.ncols()).find(nz).unwrap_or(0);
            let hi = (0..map.ncols()).rev().find(nz).map_or(0, |j| j + 1);
            (lo, hi.max(lo))
        })
        .collect()
}

fn base_meta(device: &Device, hypothesis: &str, s: f64, shots: usize, seed: u64, cutoff: u8) -> SampleMeta {
    let mut params = BTreeMap::new();
    params.insert("loss".into(), serde_json::to_value(&device.loss).expect("loss serializes"));
    params.insert("placement".into(), serde_json::to_value(device.placement).expect("placement serializes"));
    params.insert("fill_light".into(), device.fill_light.into());
    SampleMeta {
        version: env!("CARGO_PKG_VERSION").into(),
        hypothesis: hypothesis.into(),
        certificate: device.certificate.clone(),
        program_hash: device.program.hash(),
        seed,
        shots,
        n_modes: device.n_outputs(),
        pnr_cutoff: cutoff,
        squeezing: s,
        params,
    }
}

/// Coherent-state mixtures: draw input amplitudes from the hypothesis
/// P-function, push them through the lossy map, count Poisson photons.
pub fn sample_classical(
    kind: InputKind,
    device: &Device,
    s: f64,
    shots: usize,
    seed: u64,
    opts: SamplerOptions,
) -> Result<SampleSet> {
    if !kind.is_classical() {
        return Err(Error::Unsupported(format!(
            "{kind} inputs have no positive P-function; use the brute-force sampler"
        )));
    }
    if !s.is_finite() || s < 0.0 {
        return Err(Error::Input(format!("squeezing must be non-negative, got {s}")));
    }
    let map = device.effective_map()?;
    let support = row_support(&map);
    let (m, n_in) = map.shape();
    let nbar = s.sinh().powi(2);
    let cap = opts.pnr_cutoff;

    let counts = match kind {
        InputKind::Coherent | InputKind::Vacuum => {
            let alpha = if kind == InputKind::Coherent { s.sinh() } else { 0.0 };
            let means: Vec<f64> = (0..m)
                .map(|i| (map.row(i).sum() * alpha).norm_sqr())
                .collect();
            run_shots(seed, kind.as_str(), shots, m, opts.threads, |rng, row| {
                for (c, &mu) in row.iter_mut().zip(&means) {
                    *c = poisson_capped(rng, mu, cap);
                }
            })
        }
        InputKind::Thermal | InputKind::Squashed => {
            let thermal = kind == InputKind::Thermal;
            let sd = if thermal { (nbar / 2.0).sqrt() } else { nbar.sqrt() };
            run_shots(seed, kind.as_str(), shots, m, opts.threads, |rng, row| {
                let alpha: Vec<Complex64> = (0..n_in)
                    .map(|_| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = if thermal { rng.sample(StandardNormal) } else { 0.0 };
                        Complex64::new(sd * re, sd * im)
                    })
                    .collect();
                for (i, c) in row.iter_mut().enumerate() {
                    let (lo, hi) = support[i];
                    let mut beta = Complex64::new(0.0, 0.0);
                    for j in lo..hi {
                        beta += map[(i, j)] * alpha[j];
                    }
                    *c = poisson_capped(rng, beta.norm_sqr(), cap);
                }
            })
        }
        InputKind::Smsv => unreachable!(),
    };
    SampleSet::new(base_meta(device, kind.as_str(), s, shots, seed, cap), counts)
}

/// Inverse-CDF draws from an exact distribution, renormalized over its captured mass.
pub fn sample_distribution(dist: &Distribution, shots: usize, seed: u64, stage: &str, opts: SamplerOptions) -> Vec<u8> {
    let mut cumulative = Vec::with_capacity(dist.entries.len());
    let mut acc = 0.0;
    for (_, p) in &dist.entries {
        acc += p;
        cumulative.push(acc);
    }
    let total = acc;
    let cap = opts.pnr_cutoff;
    run_shots(seed, stage, shots, dist.n_modes, opts.threads, |rng, row| {
        let u = rng.gen::<f64>() * total;
        let k = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
        for (c, &n) in row.iter_mut().zip(&dist.entries[k].0.counts) {
            *c = (n as u8).min(cap);
        }
    })
}

/// Exact squeezed-vacuum sampling for small devices (≤ 6 detected modes).
pub fn sample_smsv_bruteforce(
    device: &Device,
    s: f64,
    shots: usize,
    seed: u64,
    cutoff: usize,
    opts: SamplerOptions,
) -> Result<SampleSet> {
    let m = device.n_outputs();
    if m > crate::hafnian::MAX_ENUMERATION_MODES {
        return Err(Error::Resource(format!(
            "exact squeezed-vacuum sampling is limited to {} modes, device has {m}; \
             at full scale use a classical hypothesis instead",
            crate::hafnian::MAX_ENUMERATION_MODES
        )));
    }
    let state = device.output_state(InputKind::Smsv, s)?;
    let dist = enumerate_distribution_with(&state, cutoff, ProbabilityOptions::default())?;
    let counts = sample_distribution(&dist, shots, seed, "smsv", opts);
    let mut meta = base_meta(device, "smsv", s, shots, seed, opts.pnr_cutoff);
    meta.params.insert("captured_mass".into(), dist.captured_mass.into());
    SampleSet::new(meta, counts)
}

/// Single-mode squeezed-vacuum photon-number law, `P(2k)` for `k = 0, 1, …`.
pub fn pair_distribution(s: f64) -> Vec<f64> {
    let t2 = s.tanh().powi(2);
    let mut p = vec![1.0 / s.cosh()];
    // P(2k+2)/P(2k) = (2k+1)/(2k+2) tanh²s
    while p.len() < 4096 {
        let k = (p.len() - 1) as f64;
        let next = p[p.len() - 1] * (2.0 * k + 1.0) / (2.0 * k + 2.0) * t2;
        if next < 1e-17 {
            break;
        }
        p.push(next);
    }
    p
}

/// Photons from each source travel the interferometer independently,
/// reaching output `i` from input `j` with probability `|E_ij|²`.
pub fn sample_distinguishable(
    device: &Device,
    s: f64,
    shots: usize,
    seed: u64,
    opts: SamplerOptions,
) -> Result<SampleSet> {
    if !s.is_finite() || s < 0.0 {
        return Err(Error::Input(format!("squeezing must be non-negative, got {s}")));
    }
    let map = device.effective_map()?;
    let (m, n_in) = map.shape();
    let pairs = pair_distribution(s);
    let mut pair_cdf: Vec<f64> = pairs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let last = pair_cdf.len() - 1;
    pair_cdf[last] = f64::INFINITY;

    // per input: outputs with nonzero probability and their running sums
    let routes: Vec<(Vec<usize>, Vec<f64>)> = (0..n_in)
        .map(|j| {
            let mut outs = Vec::new();
            let mut cdf = Vec::new();
            let mut acc = 0.0;
            for i in 0..m {
                let p = map[(i, j)].norm_sqr();
                if p > 0.0 {
                    acc += p;
                    outs.push(i);
                    cdf.push(acc);
                }
            }
            (outs, cdf)
        })
        .collect();
    let cap = opts.pnr_cutoff;
    let counts = run_shots(seed, DISTINGUISHABLE, shots, m, opts.threads, |rng, row| {
        let mut tally = vec![0u32; m];
        for (outs, cdf) in &routes {
            let u: f64 = rng.gen();
            let k = pair_cdf.partition_point(|&c| c <= u);
            for _ in 0..2 * k {
                let v: f64 = rng.gen();
                let idx = cdf.partition_point(|&c| c <= v);
                if idx < outs.len() {
                    tally[outs[idx]] += 1;
                }
            }
        }
        for (c, t) in row.iter_mut().zip(tally) {
            *c = t.min(cap as u32) as u8;
        }
    });
    SampleSet::new(base_meta(device, DISTINGUISHABLE, s, shots, seed, cap), counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::LossModel;
    use crate::tdm::{CircuitProgram, LoopSpec};

    fn identity_device(m: usize) -> Device {
        let program = CircuitProgram::bypass(LoopSpec::default(), m, 0).unwrap();
        Device::new(program, LossModel::lossless(3, 16)).unwrap()
    }

    #[test]
    fn file_round_trip_is_exact() {
        let d = identity_device(5);
        let set = sample_classical(InputKind::Thermal, &d, 0.9, 200, 3, SamplerOptions::default()).unwrap();
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        let back = SampleSet::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, set);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn header_is_required() {
        assert!(SampleSet::read_from("0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn threads_do_not_change_output() {
        let d = identity_device(6);
        let one = sample_classical(InputKind::Squashed, &d, 0.7, 301, 9, SamplerOptions::default()).unwrap();
        let four = sample_classical(
            InputKind::Squashed,
            &d,
            0.7,
            301,
            9,
            SamplerOptions { threads: 4, ..Default::default() },
        )
        .unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn counts_respect_the_cutoff() {
        let d = identity_device(3);
        let opts = SamplerOptions { pnr_cutoff: 2, threads: 1 };
        let set = sample_classical(InputKind::Thermal, &d, 1.5, 500, 1, opts).unwrap();
        assert!(set.counts().iter().all(|&c| c <= 2));
        assert!(set.counts().contains(&2));
    }

    #[test]
    fn squeezed_vacuum_is_not_classical() {
        let d = identity_device(2);
        let err = sample_classical(InputKind::Smsv, &d, 0.5, 10, 1, SamplerOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn zero_squeezing_gives_vacuum() {
        let d = identity_device(3);
        let set = sample_smsv_bruteforce(&d, 0.0, 100, 1, 4, SamplerOptions::default()).unwrap();
        assert!(set.counts().iter().all(|&c| c == 0));
    }

    #[test]
    fn brute_force_refuses_large_devices() {
        let d = identity_device(7);
        let err = sample_smsv_bruteforce(&d, 0.3, 10, 1, 4, SamplerOptions::default()).unwrap_err();
        assert!(err.is_resource());
    }

    #[test]
    fn pair_law_is_normalized() {
        for s in [0.1, 0.669, 1.2] {
            let total: f64 = pair_distribution(s).iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "{s} {total}");
        }
    }

    #[test]
    fn shard_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
