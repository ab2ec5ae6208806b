//! Orbits (photon-count partitions) and the O₁/O₂/O₃ feature vectors.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution as _};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::hafnian::OutcomePattern;
use crate::sampling::{derive_seed, SampleSet};

/// Minimum number of shots at a given n before a feature vector is emitted.
pub const DEFAULT_MIN_SUPPORT: u64 = 100;
pub const DEFAULT_RESAMPLES: usize = 200;
pub const DEFAULT_N_MIN: usize = 18;
pub const DEFAULT_N_MAX: usize = 32;

/// A weakly decreasing list of positive counts. The empty orbit is vacuum.
///
/// Ordering: by photon number, then longer partitions first, then
/// lexicographically ascending. For fixed n this starts
/// `[1ⁿ], [2,1ⁿ⁻²], [2,2,1ⁿ⁻⁴], [3,1ⁿ⁻³], …`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Orbit {
    partition: Vec<usize>,
}

impl Orbit {
    pub fn new(mut parts: Vec<usize>) -> Result<Self> {
        if parts.contains(&0) {
            return Err(Error::Input("orbit entries must be positive".into()));
        }
        parts.sort_unstable_by(|a, b| b.cmp(a));
        Ok(Orbit { partition: parts })
    }

    pub fn from_counts<T: Copy + Into<usize>>(counts: &[T]) -> Self {
        let mut partition: Vec<usize> = counts.iter().map(|&c| c.into()).filter(|&c| c > 0).collect();
        partition.sort_unstable_by(|a, b| b.cmp(a));
        Orbit { partition }
    }

    /// `[1ⁿ]`, `[2,1ⁿ⁻²]` or `[2,2,1ⁿ⁻⁴]` for `k` = 1, 2, 3.
    pub fn feature(k: usize, n: usize) -> Option<Orbit> {
        let twos = k.checked_sub(1)?;
        if k > 3 || 2 * twos > n {
            return None;
        }
        let mut partition = vec![2; twos];
        partition.extend(std::iter::repeat(1).take(n - 2 * twos));
        Some(Orbit { partition })
    }

    pub fn partition(&self) -> &[usize] {
        &self.partition
    }

    pub fn total(&self) -> usize {
        self.partition.iter().sum()
    }

    /// All orbits with `n` photons in canonical order.
    pub fn all_of(n: usize) -> Vec<Orbit> {
        fn rec(left: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Orbit>) {
            if left == 0 {
                out.push(Orbit { partition: cur.clone() });
                return;
            }
            for p in (1..=max.min(left)).rev() {
                cur.push(p);
                rec(left - p, p, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(n, n, &mut Vec::new(), &mut out);
        out.sort();
        out
    }
}

impl Ord for Orbit {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total()
            .cmp(&other.total())
            .then(other.partition.len().cmp(&self.partition.len()))
            .then_with(|| self.partition.cmp(&other.partition))
    }
}

impl PartialOrd for Orbit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Orbit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.partition.iter().map(|p| p.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

impl FromStr for Orbit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let inner = s
            .trim()
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| Error::Format(format!("orbit must be bracketed: {s:?}")))?;
        let parts = inner
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<usize>().map_err(|e| Error::Format(format!("orbit entry {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if parts.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Format(format!("orbit not weakly decreasing: {s:?}")));
        }
        Orbit::new(parts)
    }
}

impl Serialize for Orbit {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Orbit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn orbit_of(pattern: &OutcomePattern) -> Orbit {
    Orbit::from_counts(&pattern.counts)
}

/// Conditional orbit frequencies among shots with `n` photons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitHistogram {
    pub n: usize,
    pub support: u64,
    /// Canonical order; only observed orbits appear.
    pub entries: Vec<(Orbit, u64)>,
}

impl OrbitHistogram {
    pub fn frequency(&self, orbit: &Orbit) -> f64 {
        if self.support == 0 {
            return 0.0;
        }
        self.entries
            .iter()
            .find(|(o, _)| o == orbit)
            .map_or(0.0, |(_, c)| *c as f64 / self.support as f64)
    }

    pub fn frequencies(&self) -> Vec<(Orbit, f64)> {
        self.entries
            .iter()
            .map(|(o, c)| (o.clone(), *c as f64 / self.support as f64))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("orbit,count,frequency\n");
        for (o, c) in &self.entries {
            out.push_str(&format!("{o},{c},{:e}\n", *c as f64 / self.support as f64));
        }
        out
    }
}

pub fn orbit_histogram(samples: &SampleSet, n: usize) -> OrbitHistogram {
    let mut counts: std::collections::BTreeMap<Orbit, u64> = Default::default();
    let mut support = 0;
    for shot in samples.iter() {
        if shot.iter().map(|&c| c as usize).sum::<usize>() == n {
            support += 1;
            *counts.entry(Orbit::from_counts(shot)).or_insert(0) += 1;
        }
    }
    if support == 0 {
        log::warn!("no shots with {n} photons");
    }
    OrbitHistogram { n, support, entries: counts.into_iter().collect() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub n: usize,
    pub o1: f64,
    pub o2: f64,
    pub o3: f64,
    /// Multinomial errors √(p(1−p)/support).
    pub std_errors: [f64; 3],
    pub support: u64,
}

impl FeatureVector {
    pub fn point(&self) -> [f64; 3] {
        [self.o1, self.o2, self.o3]
    }

    fn from_cell(n: usize, cell: &[u64; 4]) -> Self {
        let support: u64 = cell.iter().sum();
        let p = |k: usize| cell[k] as f64 / support as f64;
        let se = |k: usize| (p(k) * (1.0 - p(k)) / support as f64).sqrt();
        FeatureVector { n, o1: p(0), o2: p(1), o3: p(2), std_errors: [se(0), se(1), se(2)], support }
    }
}

pub fn features_to_csv(features: &[FeatureVector]) -> String {
    let mut out = String::from("n,o1,o2,o3,e1,e2,e3,support\n");
    for f in features {
        let [e1, e2, e3] = f.std_errors;
        out.push_str(&format!("{},{:e},{:e},{:e},{:e},{:e},{:e},{}\n", f.n, f.o1, f.o2, f.o3, e1, e2, e3, f.support));
    }
    out
}

pub fn features_from_csv(text: &str) -> Result<Vec<FeatureVector>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("n,o1,o2,o3,e1,e2,e3,support") {
        return Err(Error::Format("unexpected feature CSV header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Format(format!("feature row needs 8 fields: {line:?}")));
            }
            let num = |i: usize| f[i].trim().parse::<f64>().map_err(|e| Error::Format(format!("{line:?}: {e}")));
            let int = |i: usize| f[i].trim().parse::<u64>().map_err(|e| Error::Format(format!("{line:?}: {e}")));
            Ok(FeatureVector {
                n: int(0)? as usize,
                o1: num(1)?,
                o2: num(2)?,
                o3: num(3)?,
                std_errors: [num(4)?, num(5)?, num(6)?],
                support: int(7)?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub min_support: u64,
    /// Shots with total in `n ± pool_width` also count towards n. 0 = per exact n.
    pub pool_width: usize,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions { min_support: DEFAULT_MIN_SUPPORT, pool_width: 0 }
    }
}

/// Shot counts per (photon number, class) with class O₁, O₂, O₃ or other.
///
/// Feature vectors depend on the sample set only through this table, so
/// resampling shots is a multinomial draw over its cells.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitCounts {
    pub n_min: usize,
    pub cells: Vec<[u64; 4]>,
    pub shots: u64,
}

/// 0, 1, 2 for O₁, O₂, O₃; 3 otherwise.
pub fn feature_class(shot: &[u8]) -> usize {
    let mut twos = 0;
    for &c in shot {
        match c {
            0 | 1 => {}
            2 => twos += 1,
            _ => return 3,
        }
    }
    twos.min(3)
}

impl OrbitCounts {
    /// Table over totals `n_min..=n_max`.
    pub fn from_samples(samples: &SampleSet, n_min: usize, n_max: usize) -> Result<Self> {
        if n_min > n_max {
            return Err(Error::Input(format!("n_min {n_min} exceeds n_max {n_max}")));
        }
        let mut cells = vec![[0u64; 4]; n_max - n_min + 1];
        for shot in samples.iter() {
            let n: usize = shot.iter().map(|&c| c as usize).sum();
            if (n_min..=n_max).contains(&n) {
                cells[n - n_min][feature_class(shot)] += 1;
            }
        }
        Ok(OrbitCounts { n_min, cells, shots: samples.shots() as u64 })
    }

    pub fn n_max(&self) -> usize {
        self.n_min + self.cells.len() - 1
    }

    pub fn support(&self, n: usize) -> u64 {
        n.checked_sub(self.n_min)
            .and_then(|i| self.cells.get(i))
            .map_or(0, |c| c.iter().sum())
    }

    /// Feature vector at each n with enough support.
    pub fn features(&self, opts: &FeatureOptions) -> Vec<FeatureVector> {
        let w = opts.pool_width;
        (self.n_min..=self.n_max())
            .filter_map(|n| {
                let lo = n.saturating_sub(w).max(self.n_min);
                let hi = (n + w).min(self.n_max());
                let mut cell = [0u64; 4];
                for c in &self.cells[lo - self.n_min..=hi - self.n_min] {
                    for k in 0..4 {
                        cell[k] += c[k];
                    }
                }
                let support: u64 = cell.iter().sum();
                (support >= opts.min_support.max(1)).then(|| FeatureVector::from_cell(n, &cell))
            })
            .collect()
    }

    /// One bootstrap replicate: all shots redrawn with replacement.
    pub fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> OrbitCounts {
        let mut left = self.shots;
        let mut remaining_p = 1.0;
        let mut cells = vec![[0u64; 4]; self.cells.len()];
        for (dst, src) in cells.iter_mut().zip(&self.cells) {
            for k in 0..4 {
                if left == 0 || src[k] == 0 {
                    continue;
                }
                let p = src[k] as f64 / self.shots as f64;
                let q = (p / remaining_p).clamp(0.0, 1.0);
                let draw = Binomial::new(left, q).expect("valid binomial").sample(rng);
                dst[k] = draw;
                left -= draw;
                remaining_p -= p;
            }
        }
        OrbitCounts { n_min: self.n_min, cells, shots: self.shots }
    }

    /// `resamples` bootstrap replicates of the feature vectors. Each
    /// replicate keeps the n values of the original table.
    pub fn bootstrap(&self, opts: &FeatureOptions, resamples: usize, seed: u64) -> Vec<Vec<FeatureVector>> {
        let keep: Vec<usize> = self.features(opts).iter().map(|f| f.n).collect();
        let relaxed = FeatureOptions { min_support: 1, ..*opts };
        (0..resamples)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
                self.resample(&mut rng)
                    .features(&relaxed)
                    .into_iter()
                    .filter(|f| keep.contains(&f.n))
                    .collect()
            })
            .collect()
    }
}

pub fn feature_vectors(samples: &SampleSet, n_min: usize, n_max: usize) -> Result<Vec<FeatureVector>> {
    feature_vectors_with(samples, n_min, n_max, &FeatureOptions::default())
}

pub fn feature_vectors_with(
    samples: &SampleSet,
    n_min: usize,
    n_max: usize,
    opts: &FeatureOptions,
) -> Result<Vec<FeatureVector>> {
    let lo = n_min.saturating_sub(opts.pool_width);
    let table = OrbitCounts::from_samples(samples, lo, n_max + opts.pool_width)?;
    Ok(table.features(opts).into_iter().filter(|f| (n_min..=n_max).contains(&f.n)).collect())
}
