//! Gaussian states in the quadrature picture.
//!
//! Conventions: `ħ = 2`, so the vacuum covariance is the identity and
//! `a = (x + i p) / 2`. Vectors are ordered `(x_1..x_m, p_1..p_m)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tdm::{max_singular_value, TransferMatrix};

/// The input-state families the device (or its classical mimics) can emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Smsv,
    Thermal,
    Coherent,
    Squashed,
    Vacuum,
}

impl InputKind {
    pub const ALL: [InputKind; 5] = [
        InputKind::Smsv,
        InputKind::Thermal,
        InputKind::Coherent,
        InputKind::Squashed,
        InputKind::Vacuum,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InputKind::Smsv => "smsv",
            InputKind::Thermal => "thermal",
            InputKind::Coherent => "coherent",
            InputKind::Squashed => "squashed",
            InputKind::Vacuum => "vacuum",
        }
    }

    /// States with a non-negative P-function, samplable as coherent-state mixtures.
    pub fn is_classical(self) -> bool {
        matches!(
            self,
            InputKind::Thermal | InputKind::Coherent | InputKind::Squashed | InputKind::Vacuum
        )
    }
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InputKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Input(format!("unknown input kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub kind: InputKind,
    /// Squeezing parameter `s`, shared by all modes.
    pub squeezing: f64,
    pub n_modes: usize,
}

impl InputSpec {
    pub fn new(kind: InputKind, squeezing: f64, n_modes: usize) -> Self {
        InputSpec {
            kind,
            squeezing,
            n_modes,
        }
    }
}

/// Mean and covariance of a Gaussian state.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// JSON form used for state export.
#[derive(Serialize, Deserialize)]
struct StateDocument {
    n_modes: usize,
    mean: Vec<f64>,
    /// Row-major.
    covariance: Vec<f64>,
}

impl GaussianState {
    pub fn vacuum(m: usize) -> Self {
        GaussianState {
            mean: DVector::zeros(2 * m),
            covariance: DMatrix::identity(2 * m, 2 * m),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn has_displacement(&self) -> bool {
        self.mean.iter().any(|v| *v != 0.0)
    }

    /// Symmetric within 1e-10 and `σ + iΩ ⪰ −1e-8`.
    pub fn check_physical(&self) -> Result<()> {
        let n = self.covariance.nrows();
        if n != self.mean.len() || !self.covariance.is_square() || n % 2 != 0 {
            return Err(Error::Input("state dimensions are inconsistent".into()));
        }
        let asym = (&self.covariance - self.covariance.transpose()).amax();
        if asym > 1e-10 {
            return Err(Error::Input(format!("covariance is not symmetric ({asym:e})")));
        }
        let m = n / 2;
        let herm = DMatrix::from_fn(n, n, |i, j| {
            let omega = if i < m && j == i + m {
                1.0
            } else if i >= m && j + m == i {
                -1.0
            } else {
                0.0
            };
            Complex64::new(self.covariance[(i, j)], omega)
        });
        let lowest = herm.symmetric_eigenvalues().min();
        if lowest < -1e-8 {
            return Err(Error::Input(format!(
                "covariance violates the uncertainty principle (eigenvalue {lowest:e})"
            )));
        }
        Ok(())
    }

    /// `σ − I ⪰ −1e-8`: the state has a non-negative P-function.
    pub fn is_classical(&self) -> bool {
        let n = self.covariance.nrows();
        let shifted = &self.covariance - DMatrix::identity(n, n);
        shifted.symmetric_eigenvalues().min() >= -1e-8
    }

    /// Reduced state on the given modes.
    pub fn marginal(&self, modes: &[usize]) -> GaussianState {
        let m = self.n_modes();
        let idx: Vec<usize> = modes.iter().copied().chain(modes.iter().map(|&k| k + m)).collect();
        GaussianState {
            mean: DVector::from_fn(idx.len(), |i, _| self.mean[idx[i]]),
            covariance: DMatrix::from_fn(idx.len(), idx.len(), |i, j| self.covariance[(idx[i], idx[j])]),
        }
    }

    pub fn to_json(&self) -> String {
        let doc = StateDocument {
            n_modes: self.n_modes(),
            mean: self.mean.iter().copied().collect(),
            covariance: self.covariance.transpose().iter().copied().collect(),
        };
        serde_json::to_string_pretty(&doc).expect("state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: StateDocument = serde_json::from_str(text)?;
        let n = 2 * doc.n_modes;
        if doc.mean.len() != n || doc.covariance.len() != n * n {
            return Err(Error::Format("state document has inconsistent sizes".into()));
        }
        Ok(GaussianState {
            mean: DVector::from_vec(doc.mean),
            covariance: DMatrix::from_row_slice(n, n, &doc.covariance),
        })
    }
}

/// Per-mode covariance block `(σ_xx, σ_pp)` and x-displacement of each family.
///
/// The squeezed and squashed families carry their excess noise on `x`.
/// All families share the lossless mean photon number `sinh²(s)`.
fn mode_moments(kind: InputKind, s: f64) -> (f64, f64, f64) {
    let n = s.sinh().powi(2);
    match kind {
        InputKind::Smsv => ((2.0 * s).exp(), (-2.0 * s).exp(), 0.0),
        InputKind::Thermal => (1.0 + 2.0 * n, 1.0 + 2.0 * n, 0.0),
        InputKind::Squashed => (1.0 + 4.0 * n, 1.0, 0.0),
        InputKind::Coherent => (1.0, 1.0, 2.0 * s.sinh()),
        InputKind::Vacuum => (1.0, 1.0, 0.0),
    }
}

pub fn prepare_input(spec: &InputSpec) -> Result<GaussianState> {
    if !spec.squeezing.is_finite() || spec.squeezing < 0.0 {
        return Err(Error::Input(format!(
            "squeezing must be a non-negative number, got {}",
            spec.squeezing
        )));
    }
    let m = spec.n_modes;
    let (vx, vp, dx) = mode_moments(spec.kind, spec.squeezing);
    let mut state = GaussianState::vacuum(m);
    for i in 0..m {
        state.covariance[(i, i)] = vx;
        state.covariance[(i + m, i + m)] = vp;
        state.mean[i] = dx;
    }
    Ok(state)
}

/// Real quadrature form `[[X, −Y], [Y, X]]` of `T = X + iY`.
pub fn symplectic_form(t: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (r, c) = t.shape();
    DMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let z = t[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// Propagates through a square transfer matrix.
pub fn evolve(state: &GaussianState, t: &TransferMatrix) -> Result<GaussianState> {
    evolve_linear(state, &t.entries)
}

/// Propagates through any linear map `out × in` with singular values ≤ 1.
///
/// The lost fraction is refilled with vacuum: `σ → SσSᵀ + (I − SSᵀ)`.
pub fn evolve_linear(state: &GaussianState, t: &DMatrix<Complex64>) -> Result<GaussianState> {
    if t.ncols() != state.n_modes() {
        return Err(Error::Input(format!(
            "linear map acts on {} modes, state has {}",
            t.ncols(),
            state.n_modes()
        )));
    }
    let smax = max_singular_value(t);
    if smax > 1.0 + 1e-10 {
        return Err(Error::Input(format!(
            "transfer matrix is amplifying (largest singular value {smax})"
        )));
    }
    let s = symplectic_form(t);
    let sst = &s * s.transpose();
    let n = sst.nrows();
    let mut covariance = &s * &state.covariance * s.transpose() + DMatrix::identity(n, n) - sst;
    covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(GaussianState {
        mean: &s * &state.mean,
        covariance,
    })
}

/// Independent pure-loss channels with transmission `eta[i]` on mode `i`.
pub fn apply_loss(state: &GaussianState, eta: &[f64]) -> Result<GaussianState> {
    let m = state.n_modes();
    if eta.len() != m {
        return Err(Error::Input(format!("{} efficiencies for {m} modes", eta.len())));
    }
    if let Some(e) = eta.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(Error::Input(format!("efficiency {e} outside [0, 1]")));
    }
    let h: Vec<f64> = (0..2 * m).map(|i| eta[i % m]).collect();
    let mut out = state.clone();
    for i in 0..2 * m {
        out.mean[i] *= h[i].sqrt();
        for j in 0..2 * m {
            out.covariance[(i, j)] *= (h[i] * h[j]).sqrt();
        }
        out.covariance[(i, i)] += 1.0 - h[i];
    }
    Ok(out)
}

/// `n̄_i = (σ_xx + σ_pp − 2)/4 + (μ_x² + μ_p²)/4`.
pub fn mean_photons(state: &GaussianState) -> Vec<f64> {
    let m = state.n_modes();
    (0..m)
        .map(|i| {
            let c = &state.covariance;
            (c[(i, i)] + c[(i + m, i + m)] - 2.0) / 4.0
                + (state.mean[i].powi(2) + state.mean[i + m].powi(2)) / 4.0
        })
        .collect()
}

/// Normally-ordered moments `N_ij = ⟨a_i† a_j⟩` and `M_ij = ⟨a_i a_j⟩` of a state.
pub fn ladder_moments(state: &GaussianState) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let m = state.n_modes();
    let c = &state.covariance;
    let n = DMatrix::from_fn(m, m, |i, j| {
        let delta = if i == j { 2.0 } else { 0.0 };
        Complex64::new(
            (c[(i, j)] + c[(i + m, j + m)] - delta) / 4.0,
            (c[(i, j + m)] - c[(i + m, j)]) / 4.0,
        )
    });
    let mm = DMatrix::from_fn(m, m, |i, j| {
        Complex64::new(
            (c[(i, j)] - c[(i + m, j + m)]) / 4.0,
            (c[(i, j + m)] + c[(i + m, j)]) / 4.0,
        )
    });
    (n, mm)
}

/// Photon-number covariance `Cov(n_i, n_j)` of a zero-mean Gaussian state.
pub fn photon_covariance(state: &GaussianState) -> Result<DMatrix<f64>> {
    if state.has_displacement() {
        return Err(Error::Unsupported(
            "analytic photon covariance needs a zero-mean state; sample displaced states instead".into(),
        ));
    }
    let (n, mm) = ladder_moments(state);
    let m = state.n_modes();
    Ok(DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            let nii = n[(i, i)].re;
            nii * (nii + 1.0) + mm[(i, i)].norm_sqr()
        } else {
            n[(i, j)].norm_sqr() + mm[(i, j)].norm_sqr()
        }
    }))
}

/// Where the detector index of each logical mode comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DetectorAssignment {
    /// Mode `i` goes to detector `i mod n`.
    Cyclic(usize),
    Explicit(Vec<usize>),
}

impl DetectorAssignment {
    pub fn detector(&self, mode: usize) -> usize {
        match self {
            DetectorAssignment::Cyclic(n) => mode % n,
            DetectorAssignment::Explicit(map) => map[mode],
        }
    }
}

/// Component efficiencies of the device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub common_efficiency: f64,
    pub loop_efficiencies: Vec<f64>,
    pub channel_efficiencies: Vec<f64>,
    pub detector_assignment: DetectorAssignment,
}

impl LossModel {
    pub fn lossless(n_loops: usize, n_channels: usize) -> Self {
        LossModel {
            common_efficiency: 1.0,
            loop_efficiencies: vec![1.0; n_loops],
            channel_efficiencies: vec![1.0; n_channels],
            detector_assignment: DetectorAssignment::Cyclic(n_channels),
        }
    }

    pub fn validate(&self, n_logical: usize) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.common_efficiency) {
            return Err(Error::Input("common_efficiency outside [0, 1]".into()));
        }
        if !self.loop_efficiencies.iter().all(|&v| unit(v)) {
            return Err(Error::Input("loop efficiency outside [0, 1]".into()));
        }
        if !self.channel_efficiencies.iter().all(|&v| unit(v)) {
            return Err(Error::Input("channel efficiency outside [0, 1]".into()));
        }
        let n_channels = self.channel_efficiencies.len();
        match &self.detector_assignment {
            DetectorAssignment::Cyclic(n) if *n != n_channels || *n == 0 => Err(Error::Input(format!(
                "cyclic assignment over {n} detectors, {n_channels} channel efficiencies"
            ))),
            DetectorAssignment::Explicit(map) if map.len() != n_logical => Err(Error::Input(format!(
                "detector assignment covers {} of {n_logical} modes",
                map.len()
            ))),
            DetectorAssignment::Explicit(map) if map.iter().any(|&d| d >= n_channels) => {
                Err(Error::Input("detector assignment names a missing detector".into()))
            }
            _ => Ok(()),
        }
    }

    /// Relative efficiency of the detector reading out logical mode `i`.
    pub fn channel(&self, mode: usize) -> f64 {
        self.channel_efficiencies[self.detector_assignment.detector(mode)]
    }

    /// `common × ∏ loops × channel(i)` for each logical mode, every loop counted once.
    pub fn per_mode_efficiency(&self, n_logical: usize) -> Vec<f64> {
        let loops: f64 = self.loop_efficiencies.iter().product();
        (0..n_logical)
            .map(|i| self.common_efficiency * loops * self.channel(i))
            .collect()
    }

    /// Turns detector `d` off, as in an unbalanced-loss run.
    pub fn with_detector_off(mut self, d: usize) -> Self {
        self.channel_efficiencies[d] = 0.0;
        self
    }
}
