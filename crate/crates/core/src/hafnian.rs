//! Hafnians and photon-number probabilities of Gaussian states.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianState;

/// Largest `k` (matrix size `2k`) evaluated by default.
pub const DEFAULT_HAFNIAN_LIMIT: usize = 10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HafnianMethod {
    /// Power-trace inclusion–exclusion over pairs, `O(2^k k^3)`.
    #[default]
    PowerTrace,
    /// Sum over perfect matchings. Slow; kept as a reference.
    Enumerate,
}

/// Hafnian of a symmetric `2k × 2k` matrix, `k ≤ 10`.
pub fn hafnian(m: &DMatrix<Complex64>) -> Result<Complex64> {
    hafnian_with(m, HafnianMethod::PowerTrace, DEFAULT_HAFNIAN_LIMIT)
}

pub fn hafnian_with(m: &DMatrix<Complex64>, method: HafnianMethod, limit: usize) -> Result<Complex64> {
    if !m.is_square() {
        return Err(Error::Input(format!("hafnian of a {}x{} matrix", m.nrows(), m.ncols())));
    }
    let n = m.nrows();
    if n % 2 != 0 {
        return Err(Error::Input(format!("hafnian needs even dimension, got {n}")));
    }
    if n / 2 > limit {
        return Err(Error::Resource(format!(
            "hafnian of size {n} exceeds the limit of {}",
            2 * limit
        )));
    }
    Ok(match method {
        HafnianMethod::PowerTrace => power_trace(m),
        HafnianMethod::Enumerate => {
            let idx: Vec<usize> = (0..n).collect();
            enumerate(m, &idx)
        }
    })
}

fn enumerate(m: &DMatrix<Complex64>, idx: &[usize]) -> Complex64 {
    if idx.is_empty() {
        return ONE;
    }
    let first = idx[0];
    let mut total = ZERO;
    for p in 1..idx.len() {
        let w = m[(first, idx[p])];
        if w == ZERO {
            continue;
        }
        let rest: Vec<usize> = idx[1..].iter().enumerate().filter(|&(q, _)| q + 1 != p).map(|(_, &v)| v).collect();
        total += w * enumerate(m, &rest);
    }
    total
}

/// `haf(A) = Σ_Z (−1)^{k−|Z|} [η^k] exp(Σ_j tr((A X)_Z^j) η^j / 2j)`, pairs `(i, i+k)`.
fn power_trace(a: &DMatrix<Complex64>) -> Complex64 {
    let k = a.nrows() / 2;
    if k == 0 {
        return ONE;
    }
    let mut total = ZERO;
    for z in 0u32..(1 << k) {
        let pairs: Vec<usize> = (0..k).filter(|i| z >> i & 1 == 1).collect();
        let sign = if (k - pairs.len()) % 2 == 0 { 1.0 } else { -1.0 };
        if pairs.is_empty() {
            continue;
        }
        let idx: Vec<usize> = pairs.iter().copied().chain(pairs.iter().map(|&i| i + k)).collect();
        let h = pairs.len();
        // (A_Z X) swaps the column halves
        let c = DMatrix::from_fn(2 * h, 2 * h, |r, s| {
            let s_swapped = if s < h { s + h } else { s - h };
            a[(idx[r], idx[s_swapped])]
        });
        let mut traces = Vec::with_capacity(k);
        let mut power = c.clone();
        for j in 1..=k {
            if j > 1 {
                power = &power * &c;
            }
            traces.push(power.trace() / (2.0 * j as f64));
        }
        total += sign * exp_series_coefficient(&traces, k);
    }
    total
}

/// `[η^k] exp(Σ_j g_j η^j)` with `g[j-1] = g_j`.
fn exp_series_coefficient(g: &[Complex64], k: usize) -> Complex64 {
    let mut e = vec![ZERO; k + 1];
    e[0] = ONE;
    for m in 1..=k {
        let mut acc = ZERO;
        for j in 1..=m {
            acc += (j as f64) * g[j - 1] * e[m - j];
        }
        e[m] = acc / m as f64;
    }
    e[k]
}

/// Hafnian of `a` with row and column `i` repeated `reps[i]` times.
///
/// Uses the finite-difference moment identity
/// `Σ_ν (−1)^{Σν} ∏ C(r_i, ν_i) (hᵀAh/2)^{N/2} / (N/2)!` with `h = r/2 − ν`,
/// stepping ν through a mixed-radix Gray code so each term costs `O(dim)`.
/// Diagonal entries count, as they do in the expanded matrix.
pub fn hafnian_repeated(a: &DMatrix<Complex64>, reps: &[usize]) -> Result<Complex64> {
    if a.nrows() != reps.len() || !a.is_square() {
        return Err(Error::Input("repetition vector does not match the matrix".into()));
    }
    Ok(repeated_sum(a, reps).0)
}

/// Value and a rounding-error bound (`ε √terms Σ|term|`).
fn repeated_sum(a: &DMatrix<Complex64>, reps: &[usize]) -> (Complex64, f64) {
    let total: usize = reps.iter().sum();
    if total % 2 == 1 {
        return (ZERO, 0.0);
    }
    let half = total / 2;
    if half == 0 {
        return (ONE, 0.0);
    }
    // Only indices that appear matter.
    let live: Vec<usize> = (0..reps.len()).filter(|&i| reps[i] > 0).collect();
    let d = live.len();
    let r: Vec<usize> = live.iter().map(|&i| reps[i]).collect();
    let sub = DMatrix::from_fn(d, d, |i, j| a[(live[i], live[j])]);

    let mut nu = vec![0usize; d];
    let mut dir = vec![1i64; d];
    let mut h = DVector::from_fn(d, |i, _| Complex64::new(r[i] as f64 / 2.0, 0.0));
    let mut ah = &sub * &h;
    let mut quad: Complex64 = h.iter().zip(ah.iter()).map(|(x, y)| x * y).sum();
    let mut weight = 1.0f64;
    let mut sign = 1.0f64;
    let inv_fact: f64 = (1..=half).map(|v| 1.0 / v as f64).product();

    let mut acc = ZERO;
    let mut magnitude = 0.0f64;
    let mut terms = 0.0f64;
    loop {
        let term = sign * weight * (quad / 2.0).powu(half as u32);
        acc += term;
        magnitude += term.norm();
        terms += 1.0;
        // Advance the lowest digit that can still move in its direction.
        let mut moved = false;
        for i in 0..d {
            let next = nu[i] as i64 + dir[i];
            if next < 0 || next > r[i] as i64 {
                dir[i] = -dir[i];
                continue;
            }
            let step = dir[i] as f64;
            weight *= if dir[i] > 0 {
                (r[i] - nu[i]) as f64 / (nu[i] + 1) as f64
            } else {
                nu[i] as f64 / (r[i] - nu[i] + 1) as f64
            };
            nu[i] = next as usize;
            sign = -sign;
            // h_i changes by −step: update hᵀAh and Ah incrementally.
            let delta = Complex64::new(-step, 0.0);
            quad += 2.0 * delta * ah[i] + delta * delta * sub[(i, i)];
            for row in 0..d {
                ah[row] += sub[(row, i)] * delta;
            }
            h[i] += delta;
            moved = true;
            break;
        }
        if !moved {
            break;
        }
    }
    (acc * inv_fact, f64::EPSILON * terms.sqrt() * magnitude * inv_fact)
}

/// `A`, its blocks and the vacuum prefactor of a zero-mean Gaussian state.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyEncoding {
    /// `[[B, C], [Cᵀ, B*]]`, `2m × 2m`.
    pub a: DMatrix<Complex64>,
    pub b: DMatrix<Complex64>,
    pub c: DMatrix<Complex64>,
    /// `det(σ_Q)^{−1/2}`.
    pub prefactor: f64,
    pub log_prefactor: f64,
}

impl AdjacencyEncoding {
    pub fn n_modes(&self) -> usize {
        self.b.nrows()
    }
}

/// `log det` of a symmetric positive-definite matrix via Cholesky.
fn log_det_spd(m: DMatrix<f64>) -> Result<f64> {
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Input("Q covariance is not positive definite".into()))?;
    Ok(chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum())
}

pub fn build_encoding(state: &GaussianState) -> Result<AdjacencyEncoding> {
    if state.has_displacement() {
        return Err(Error::Unsupported(
            "hafnian encoding needs a zero-mean state".into(),
        ));
    }
    state.check_physical()?;
    let m = state.n_modes();
    let n = 2 * m;
    let identity = DMatrix::<f64>::identity(n, n);
    let sigma_q = (&state.covariance + &identity) * 0.5;
    let log_prefactor = -0.5 * log_det_spd(sigma_q)?;

    // Ladder-basis Q = L (σ + I) L†, rows (a, a†), with a = (x + ip)/2.
    let half = Complex64::new(0.5, 0.0);
    let ihalf = Complex64::new(0.0, 0.5);
    let l = DMatrix::from_fn(n, n, |r, s| {
        let (mode_r, dag) = (r % m, r >= m);
        if s % m != mode_r {
            return ZERO;
        }
        match (dag, s >= m) {
            (_, false) => half,
            (false, true) => ihalf,
            (true, true) => -ihalf,
        }
    });
    let shifted = (&state.covariance + &identity).map(|v| Complex64::new(v, 0.0));
    let q = &l * shifted * l.adjoint();
    let q_inv = q
        .try_inverse()
        .ok_or_else(|| Error::Input("Q covariance is singular".into()))?;
    let x = DMatrix::from_fn(n, n, |r, s| if (r + m) % n == s { ONE } else { ZERO });
    let mut a = (x * (DMatrix::<Complex64>::identity(n, n) - q_inv)).map(|z| z.conj());
    a = (&a + a.transpose()) * half;
    let b = a.view((0, 0), (m, m)).into_owned();
    let c = a.view((0, m), (m, m)).into_owned();
    Ok(AdjacencyEncoding {
        a,
        b,
        c,
        prefactor: log_prefactor.exp(),
        log_prefactor,
    })
}

/// Photon counts of one shot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OutcomePattern {
    pub counts: Vec<usize>,
}

impl OutcomePattern {
    pub fn new(counts: Vec<usize>) -> Self {
        OutcomePattern { counts }
    }

    pub fn vacuum(m: usize) -> Self {
        OutcomePattern { counts: vec![0; m] }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Repetition vector `(n, n)` over the `2m` indices of `A`.
fn repetitions(pattern: &OutcomePattern) -> Vec<usize> {
    pattern.counts.iter().chain(pattern.counts.iter()).copied().collect()
}

/// `A_n̄`: index `i` and `i + m` each repeated `n_i` times.
pub fn reduce_encoding(enc: &AdjacencyEncoding, pattern: &OutcomePattern) -> DMatrix<Complex64> {
    let m = enc.n_modes();
    let reps = repetitions(pattern);
    let idx: Vec<usize> = (0..2 * m).flat_map(|i| std::iter::repeat(i).take(reps[i])).collect();
    DMatrix::from_fn(idx.len(), idx.len(), |r, s| enc.a[(idx[r], idx[s])])
}

/// Largest tolerated absolute rounding error on a probability.
const REPEATED_SUM_TOLERANCE: f64 = 1e-12;

fn log_factorial(n: usize) -> f64 {
    (2..=n).map(|v| (v as f64).ln()).sum()
}

/// Configuration for probability evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProbabilityOptions {
    /// Most photons per pattern; `A_n̄` is then at most `2·limit` square.
    pub hafnian_limit: usize,
}

impl Default for ProbabilityOptions {
    fn default() -> Self {
        ProbabilityOptions {
            hafnian_limit: DEFAULT_HAFNIAN_LIMIT,
        }
    }
}

fn probability_from_encoding(enc: &AdjacencyEncoding, pattern: &OutcomePattern, limit: usize) -> Result<f64> {
    let total = pattern.total();
    if total > limit {
        return Err(Error::Resource(format!(
            "pattern with {total} photons exceeds the hafnian limit of {limit}"
        )));
    }
    let reps = repetitions(pattern);
    let norm: f64 = pattern.counts.iter().map(|&c| log_factorial(c)).sum();
    let scale = (enc.log_prefactor - norm).exp();
    // The repetition sum is cheap but cancels badly at high counts; fall back
    // to the expanded power trace when its error bound is too loose.
    let rep_cost: f64 = reps.iter().map(|&r| (r + 1) as f64).product();
    let pt_cost = 2f64.powi(total as i32) * (2 * total).pow(2) as f64;
    let mut haf = None;
    if rep_cost <= pt_cost {
        let (value, err) = repeated_sum(&enc.a, &reps);
        if err * scale <= REPEATED_SUM_TOLERANCE {
            haf = Some(value);
        }
    }
    let haf = match haf {
        Some(v) => v,
        None => hafnian_with(&reduce_encoding(enc, pattern), HafnianMethod::PowerTrace, limit)?,
    };
    let p = haf.re * scale;
    let imag = haf.im * scale;
    if imag.abs() > 1e-10 || p < -1e-10 {
        log::warn!("probability {p:e} has residue {imag:e}");
    }
    Ok(p.max(0.0))
}

/// Coherent product states: independent Poisson counts.
fn coherent_probability(state: &GaussianState, pattern: &OutcomePattern) -> f64 {
    let n = crate::gaussian::mean_photons(state);
    n.iter()
        .zip(&pattern.counts)
        .map(|(&mu, &k)| {
            if mu == 0.0 {
                return if k == 0 { 1.0 } else { 0.0 };
            }
            (k as f64 * mu.ln() - mu - log_factorial(k)).exp()
        })
        .product()
}

fn is_vacuum_noise(state: &GaussianState) -> bool {
    let n = state.covariance.nrows();
    (&state.covariance - DMatrix::<f64>::identity(n, n)).amax() <= 1e-10
}

/// Probability of a photon-number pattern.
///
/// Zero-mean states use the hafnian formula. Displaced states are accepted
/// only when their noise is vacuum-level (coherent products).
pub fn outcome_probability(state: &GaussianState, pattern: &OutcomePattern) -> Result<f64> {
    outcome_probability_with(state, pattern, ProbabilityOptions::default())
}

pub fn outcome_probability_with(
    state: &GaussianState,
    pattern: &OutcomePattern,
    opts: ProbabilityOptions,
) -> Result<f64> {
    if pattern.counts.len() != state.n_modes() {
        return Err(Error::Input(format!(
            "pattern covers {} modes, state has {}",
            pattern.counts.len(),
            state.n_modes()
        )));
    }
    if state.has_displacement() {
        if is_vacuum_noise(state) {
            return Ok(coherent_probability(state, pattern));
        }
        return Err(Error::Unsupported(
            "displaced states with excess noise have no hafnian formula here".into(),
        ));
    }
    let enc = build_encoding(state)?;
    probability_from_encoding(&enc, pattern, opts.hafnian_limit)
}

/// Exact distribution over a truncated pattern space.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    pub n_modes: usize,
    pub cutoff: usize,
    pub entries: Vec<(OutcomePattern, f64)>,
    /// Sum of all listed probabilities.
    pub captured_mass: f64,
}

impl Distribution {
    pub fn probability(&self, pattern: &OutcomePattern) -> f64 {
        self.entries
            .iter()
            .find(|(p, _)| p == pattern)
            .map_or(0.0, |(_, v)| *v)
    }

    /// `n_0,…,n_{m−1},probability` per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.n_modes).map(|i| format!("n{i}")).collect();
        let _ = writeln!(out, "{},probability", header.join(","));
        for (p, v) in &self.entries {
            let counts: Vec<String> = p.counts.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "{},{v:e}", counts.join(","));
        }
        out
    }
}

pub const MAX_ENUMERATION_MODES: usize = 6;
pub const MAX_ENUMERATION_CUTOFF: usize = 8;

/// All patterns with every count `≤ cutoff` and at most `hafnian_limit` photons.
///
/// Patterns above the photon limit are left out and show up as missing mass.
pub fn enumerate_distribution(state: &GaussianState, cutoff: usize) -> Result<Distribution> {
    enumerate_distribution_with(state, cutoff, ProbabilityOptions::default())
}

pub fn enumerate_distribution_with(
    state: &GaussianState,
    cutoff: usize,
    opts: ProbabilityOptions,
) -> Result<Distribution> {
    let m = state.n_modes();
    if m > MAX_ENUMERATION_MODES || cutoff > MAX_ENUMERATION_CUTOFF {
        return Err(Error::Resource(format!(
            "enumeration over {m} modes at cutoff {cutoff} (max {MAX_ENUMERATION_MODES} modes, cutoff {MAX_ENUMERATION_CUTOFF})"
        )));
    }
    let coherent = state.has_displacement();
    if coherent && !is_vacuum_noise(state) {
        return Err(Error::Unsupported("displaced state with excess noise".into()));
    }
    let enc = if coherent { None } else { Some(build_encoding(state)?) };
    let mut entries = Vec::new();
    let mut counts = vec![0usize; m];
    loop {
        let total: usize = counts.iter().sum();
        if total <= opts.hafnian_limit {
            let pattern = OutcomePattern::new(counts.clone());
            let p = match &enc {
                Some(enc) => probability_from_encoding(enc, &pattern, opts.hafnian_limit)?,
                None => coherent_probability(state, &pattern),
            };
            entries.push((pattern, p));
        }
        // odometer, last mode fastest
        let mut i = m;
        loop {
            if i == 0 {
                let captured_mass = entries.iter().map(|(_, p)| p).sum();
                return Ok(Distribution {
                    n_modes: m,
                    cutoff,
                    entries,
                    captured_mass,
                });
            }
            i -= 1;
            if counts[i] < cutoff {
                counts[i] += 1;
                break;
            }
            counts[i] = 0;
        }
    }
}

/// Number of perfect matchings of a simple graph, exactly.
///
/// Odd vertex counts have none; a warning is logged.
pub fn perfect_matching_count(adjacency: &DMatrix<u8>) -> Result<u64> {
    let n = adjacency.nrows();
    if !adjacency.is_square() {
        return Err(Error::Input("adjacency matrix must be square".into()));
    }
    if adjacency.iter().any(|&v| v > 1) || adjacency != &adjacency.transpose() {
        return Err(Error::Input("adjacency matrix must be symmetric 0/1".into()));
    }
    if n % 2 == 1 {
        log::warn!("graph with {n} vertices has no perfect matching");
        return Ok(0);
    }
    if n > 20 {
        return Err(Error::Resource(format!("{n} vertices exceeds the limit of 20")));
    }
    // ways[mask] = matchings of the vertices in mask
    let full = (1usize << n) - 1;
    let mut ways = vec![0u64; 1 << n];
    ways[0] = 1;
    for mask in 1..=full {
        if mask.count_ones() % 2 == 1 {
            continue;
        }
        let low = mask.trailing_zeros() as usize;
        let rest = mask & !(1 << low);
        let mut acc = 0u64;
        let mut bits = rest;
        while bits != 0 {
            let j = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            if adjacency[(low, j)] == 1 {
                acc += ways[rest & !(1 << j)];
            }
        }
        ways[mask] = acc;
    }
    Ok(ways[full])
}
