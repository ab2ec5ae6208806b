//! Time-domain loop interferometer compiler.
//!
//! A program is a per-bin schedule of beamsplitter transmissivities and
//! phase shifts for each delay loop. Compilation streams the time bins
//! through the loops in order (shortest first) and tracks every amplitude
//! as a linear combination of the input bins, giving the transfer matrix
//! `T` with `a_out = T a_in`.
//!
//! Each delay-`d` loop is a ring of `d` memory slots. At bin `t` the slot
//! `t mod d` holds the light that entered the loop `d` bins earlier.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PHASE_SLACK: f64 = 1e-12;

/// Geometry of the delay loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopSpec {
    /// Loop delays in units of time bins, strictly increasing.
    pub delays: Vec<usize>,
    /// Physical time per bin in nanoseconds. Metadata only.
    pub bin_separation_ns: f64,
    /// Fixed optical phase of each loop, in (-π, π].
    pub static_phases: Vec<f64>,
}

impl Default for LoopSpec {
    fn default() -> Self {
        LoopSpec {
            delays: vec![1, 6, 36],
            bin_separation_ns: 167.0,
            static_phases: vec![0.0; 3],
        }
    }
}

/// Wraps an angle into (-π, π].
pub fn wrap_phase(phi: f64) -> f64 {
    let mut w = phi.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

impl LoopSpec {
    pub fn new(delays: Vec<usize>, static_phases: Vec<f64>) -> Result<Self> {
        let spec = LoopSpec {
            delays,
            bin_separation_ns: 167.0,
            static_phases,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default three-loop geometry with the given loop phases, wrapped into (-π, π].
    pub fn with_static_phases(phases: &[f64]) -> Result<Self> {
        let mut spec = LoopSpec::default();
        if phases.len() != spec.delays.len() {
            return Err(Error::Program(format!(
                "expected {} static phases, got {}",
                spec.delays.len(),
                phases.len()
            )));
        }
        spec.static_phases = phases.iter().map(|&p| wrap_phase(p)).collect();
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_loops(&self) -> usize {
        self.delays.len()
    }

    /// Total number of memory slots over all loops.
    pub fn memory_slots(&self) -> usize {
        self.delays.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.delays.is_empty() {
            return Err(Error::Program("delays: at least one loop required".into()));
        }
        if self.delays[0] == 0 {
            return Err(Error::Program("delays: each delay must be >= 1".into()));
        }
        if self.delays.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Program("delays: must be strictly increasing".into()));
        }
        if self.static_phases.len() != self.delays.len() {
            return Err(Error::Program(format!(
                "static_phases: expected {} values, got {}",
                self.delays.len(),
                self.static_phases.len()
            )));
        }
        for &p in &self.static_phases {
            if !p.is_finite() {
                return Err(Error::Input("static_phases: non-finite value".into()));
            }
            if p <= -PI || p > PI {
                return Err(Error::Program(format!(
                    "static_phases: {p} outside (-pi, pi]"
                )));
            }
        }
        if !self.bin_separation_ns.is_finite() || self.bin_separation_ns <= 0.0 {
            return Err(Error::Input("bin_separation_ns: must be positive".into()));
        }
        Ok(())
    }
}

/// A device program: per-loop, per-bin beamsplitter and phase schedules.
#[derive(Clone, Debug, PartialEq)]
pub struct CircuitProgram {
    pub loop_spec: LoopSpec,
    pub n_physical_modes: usize,
    pub fill_modes: usize,
    /// `bs_transmissivity[loop][bin]` in [0, 1]; 1 bypasses the loop.
    pub bs_transmissivity: Vec<Vec<f64>>,
    /// `phase[loop][bin]` in [-π/2, π/2].
    pub phase: Vec<Vec<f64>>,
}

impl CircuitProgram {
    /// Every bin uses the same transmissivity and phase on every loop.
    pub fn uniform(
        loop_spec: LoopSpec,
        n_physical_modes: usize,
        fill_modes: usize,
        transmissivity: f64,
        phase: f64,
    ) -> Result<Self> {
        let n_loops = loop_spec.n_loops();
        let program = CircuitProgram {
            loop_spec,
            n_physical_modes,
            fill_modes,
            bs_transmissivity: vec![vec![transmissivity; n_physical_modes]; n_loops],
            phase: vec![vec![phase; n_physical_modes]; n_loops],
        };
        program.validate()?;
        Ok(program)
    }

    /// All loops bypassed: compiles to the identity.
    pub fn bypass(loop_spec: LoopSpec, n_physical_modes: usize, fill_modes: usize) -> Result<Self> {
        Self::uniform(loop_spec, n_physical_modes, fill_modes, 1.0, 0.0)
    }

    /// Transmissivities uniform in [0.4, 0.6] and phases uniform in [-π/2, π/2].
    pub fn random<R: Rng + ?Sized>(
        loop_spec: LoopSpec,
        n_physical_modes: usize,
        fill_modes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n_loops = loop_spec.n_loops();
        let bs_transmissivity = (0..n_loops)
            .map(|_| (0..n_physical_modes).map(|_| rng.gen_range(0.4..=0.6)).collect())
            .collect();
        let phase = (0..n_loops)
            .map(|_| {
                (0..n_physical_modes)
                    .map(|_| rng.gen_range(-FRAC_PI_2..=FRAC_PI_2))
                    .collect()
            })
            .collect();
        let program = CircuitProgram {
            loop_spec,
            n_physical_modes,
            fill_modes,
            bs_transmissivity,
            phase,
        };
        program.validate()?;
        Ok(program)
    }

    /// The reference device: 259 physical bins, 43 of them filling the loops.
    pub fn reference_random<R: Rng + ?Sized>(loop_spec: LoopSpec, rng: &mut R) -> Result<Self> {
        Self::random(loop_spec, 259, 43, rng)
    }

    pub fn n_logical_modes(&self) -> usize {
        self.n_physical_modes.saturating_sub(self.fill_modes)
    }

    pub fn validate(&self) -> Result<()> {
        self.loop_spec.validate()?;
        if self.n_physical_modes == 0 {
            return Err(Error::Program("n_physical_modes: must be positive".into()));
        }
        if self.fill_modes >= self.n_physical_modes {
            return Err(Error::Input(format!(
                "fill_modes: {} leaves no logical modes out of {}",
                self.fill_modes, self.n_physical_modes
            )));
        }
        let n_loops = self.loop_spec.n_loops();
        for (key, schedule) in [("bs_transmissivity", &self.bs_transmissivity), ("phase", &self.phase)] {
            if schedule.len() != n_loops {
                return Err(Error::Program(format!(
                    "{key}: expected {n_loops} schedules, got {}",
                    schedule.len()
                )));
            }
            for (l, row) in schedule.iter().enumerate() {
                if row.len() != self.n_physical_modes {
                    return Err(Error::Program(format!(
                        "{key}[{l}]: length {} != n_physical_modes {}",
                        row.len(),
                        self.n_physical_modes
                    )));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Input(format!("{key}[{l}]: non-finite value")));
                }
            }
        }
        for (l, row) in self.bs_transmissivity.iter().enumerate() {
            if let Some(v) = row.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Program(format!(
                    "bs_transmissivity[{l}]: {v} outside [0, 1]"
                )));
            }
        }
        for (l, row) in self.phase.iter().enumerate() {
            if let Some(v) = row.iter().find(|&&v| v.abs() > FRAC_PI_2 + PHASE_SLACK) {
                return Err(Error::Program(format!(
                    "phase[{l}]: {v} outside [-pi/2, pi/2]"
                )));
            }
        }
        Ok(())
    }

    /// Content hash of the program, hex encoded. Used to tag sample files.
    pub fn hash(&self) -> String {
        crate::hash_hex(self.to_json().as_bytes())
    }

    pub fn to_document(&self) -> ProgramDocument {
        ProgramDocument {
            delays: self.loop_spec.delays.clone(),
            static_phases: self.loop_spec.static_phases.clone(),
            bs_transmissivity: self.bs_transmissivity.clone(),
            phase: self.phase.clone(),
            n_physical_modes: self.n_physical_modes,
            fill_modes: self.fill_modes,
            bin_separation_ns: Some(self.loop_spec.bin_separation_ns),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("program serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ProgramDocument = serde_json::from_str(text)
            .map_err(|e| Error::Program(format!("program document: {e}")))?;
        doc.into_program()
    }
}

/// On-disk form of a [`CircuitProgram`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramDocument {
    pub delays: Vec<usize>,
    pub static_phases: Vec<f64>,
    pub bs_transmissivity: Vec<Vec<f64>>,
    pub phase: Vec<Vec<f64>>,
    pub n_physical_modes: usize,
    pub fill_modes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_separation_ns: Option<f64>,
}

impl ProgramDocument {
    pub fn into_program(self) -> Result<CircuitProgram> {
        let loop_spec = LoopSpec {
            delays: self.delays,
            bin_separation_ns: self.bin_separation_ns.unwrap_or(167.0),
            static_phases: self.static_phases,
        };
        let program = CircuitProgram {
            loop_spec,
            n_physical_modes: self.n_physical_modes,
            fill_modes: self.fill_modes,
            bs_transmissivity: self.bs_transmissivity,
            phase: self.phase,
        };
        program.validate()?;
        Ok(program)
    }
}

/// Complex mode transformation, rows are output bins and columns input bins.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferMatrix {
    pub entries: DMatrix<Complex64>,
    /// Set when the matrix is unitary to within 1e-10.
    pub lossless: bool,
}

impl TransferMatrix {
    /// Wraps a square matrix, checking the singular-value bound and deriving the lossless flag.
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::Input(format!(
                "transfer matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Input("transfer matrix has non-finite entries".into()));
        }
        let smax = max_singular_value(&entries);
        if smax > 1.0 + 1e-10 {
            return Err(Error::Input(format!(
                "transfer matrix is amplifying (largest singular value {smax})"
            )));
        }
        let lossless = unitarity_defect(&entries) <= 1e-10;
        Ok(TransferMatrix { entries, lossless })
    }

    pub fn identity(m: usize) -> Self {
        TransferMatrix {
            entries: DMatrix::identity(m, m),
            lossless: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn singular_values(&self) -> Vec<f64> {
        self.entries.clone().singular_values().iter().copied().collect()
    }

    /// Largest modulus above the diagonal; zero for a causal matrix.
    pub fn acausal_leakage(&self) -> f64 {
        let m = self.dim();
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in (i + 1)..m {
                worst = worst.max(self.entries[(i, j)].norm());
            }
        }
        worst
    }

    /// Row-major CSV, one row per line, `re,im` pairs per entry.
    pub fn to_csv(&self) -> String {
        matrix_to_csv(&self.entries)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        Self::new(matrix_from_csv(text)?)
    }
}

/// Haar-distributed `m × m` unitary (QR of a complex Ginibre matrix, phases fixed).
pub fn random_unitary<R: Rng + ?Sized>(m: usize, rng: &mut R) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(m, m, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    });
    let (q, r) = g.qr().unpack();
    let mut u = q;
    for j in 0..m {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..m {
            u[(i, j)] *= phase;
        }
    }
    u
}

/// `max |T†T − I|` over all entries.
pub fn unitarity_defect(t: &DMatrix<Complex64>) -> f64 {
    let gram = t.adjoint() * t;
    let mut worst = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - Complex64::new(target, 0.0)).norm());
        }
    }
    worst
}

pub(crate) fn max_singular_value(t: &DMatrix<Complex64>) -> f64 {
    if t.is_empty() {
        return 0.0;
    }
    t.clone().singular_values().max()
}

pub fn matrix_to_csv(t: &DMatrix<Complex64>) -> String {
    let mut out = String::new();
    for i in 0..t.nrows() {
        for j in 0..t.ncols() {
            if j > 0 {
                out.push(',');
            }
            let z = t[(i, j)];
            let _ = write!(out, "{},{}", z.re, z.im);
        }
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<DMatrix<Complex64>> {
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("matrix line {}: {e}", ln + 1)))?;
        if values.len() % 2 != 0 {
            return Err(Error::Format(format!(
                "matrix line {}: odd number of values",
                ln + 1
            )));
        }
        rows.push(values.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect());
    }
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format("matrix rows have unequal lengths".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Result of streaming the bins through every loop.
///
/// Rows are outputs, columns are inputs, both laid out as
/// `[bins 0..m, memory slots of loop 0, memory slots of loop 1, ...]`.
struct Propagation {
    bins: Vec<Vec<Complex64>>,
    memory: Vec<Vec<Complex64>>,
}

fn propagate(program: &CircuitProgram, loop_efficiencies: &[f64]) -> Propagation {
    let m = program.n_physical_modes;
    let width = m + program.loop_spec.memory_slots();
    let unit = |k: usize| {
        let mut v = vec![Complex64::new(0.0, 0.0); width];
        v[k] = Complex64::new(1.0, 0.0);
        v
    };

    let mut bins: Vec<Vec<Complex64>> = (0..m).map(unit).collect();
    let mut memory = Vec::with_capacity(width - m);
    let mut slot_offset = m;

    for (l, &d) in program.loop_spec.delays.iter().enumerate() {
        let mut slots: Vec<Vec<Complex64>> = (0..d).map(|k| unit(slot_offset + k)).collect();
        // the static phase and the loop loss act once per traversal, on the light leaving the delay line
        let traversal = Complex64::from_polar(loop_efficiencies[l].sqrt(), program.loop_spec.static_phases[l]);
        for t in 0..m {
            let transmissivity = program.bs_transmissivity[l][t];
            let through = Complex64::new(transmissivity.sqrt(), 0.0);
            let cross = Complex64::new(0.0, (1.0 - transmissivity).sqrt());
            let shift = Complex64::from_polar(1.0, program.phase[l][t]);
            let slot = &mut slots[t % d];
            let incoming = &mut bins[t];
            for (a, s) in incoming.iter_mut().zip(slot.iter_mut()) {
                let bin_amp = *a * shift;
                let loop_amp = *s * traversal;
                *a = through * bin_amp + cross * loop_amp;
                *s = cross * bin_amp + through * loop_amp;
            }
        }
        // slot k of the ring was last written at the bin with the highest index congruent to k
        memory.extend(slots);
        slot_offset += d;
    }
    Propagation { bins, memory }
}

fn check_efficiencies(program: &CircuitProgram, loop_efficiencies: &[f64]) -> Result<()> {
    if loop_efficiencies.len() != program.loop_spec.n_loops() {
        return Err(Error::Input(format!(
            "expected {} loop efficiencies, got {}",
            program.loop_spec.n_loops(),
            loop_efficiencies.len()
        )));
    }
    if loop_efficiencies.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::Input("loop efficiencies must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Compiles the program on its physical bins with lossless loops.
///
/// Memory slots start in vacuum and are traced out, so light still
/// circulating when the last bin leaves is lost: the result is unitary
/// only when every loop is empty at the end of the window. The full
/// unitary including memory slots is [`compile_dilation`].
pub fn compile_unitary(program: &CircuitProgram) -> Result<TransferMatrix> {
    compile_lossy(program, &vec![1.0; program.loop_spec.n_loops()])
}

/// Like [`compile_unitary`], with amplitude `sqrt(eta)` applied on every loop traversal.
pub fn compile_lossy(program: &CircuitProgram, loop_efficiencies: &[f64]) -> Result<TransferMatrix> {
    program.validate()?;
    check_efficiencies(program, loop_efficiencies)?;
    let m = program.n_physical_modes;
    let prop = propagate(program, loop_efficiencies);
    let entries = DMatrix::from_fn(m, m, |i, j| prop.bins[i][j]);
    let lossless = unitarity_defect(&entries) <= 1e-10;
    Ok(TransferMatrix { entries, lossless })
}

/// Unitary on bins plus memory slots (inputs: initial slot contents,
/// outputs: final slot contents).
pub fn compile_dilation(program: &CircuitProgram) -> Result<DMatrix<Complex64>> {
    program.validate()?;
    let prop = propagate(program, &vec![1.0; program.loop_spec.n_loops()]);
    let width = program.n_physical_modes + program.loop_spec.memory_slots();
    let rows: Vec<&Vec<Complex64>> = prop.bins.iter().chain(prop.memory.iter()).collect();
    Ok(DMatrix::from_fn(width, width, |i, j| rows[i][j]))
}

/// Drops the first `fill_modes` rows and columns.
pub fn truncate_to_logical(t: &TransferMatrix, program: &CircuitProgram) -> Result<TransferMatrix> {
    if program.fill_modes >= program.n_physical_modes {
        return Err(Error::Input(format!(
            "fill_modes {} >= n_physical_modes {}",
            program.fill_modes, program.n_physical_modes
        )));
    }
    if t.dim() != program.n_physical_modes {
        return Err(Error::Input(format!(
            "transfer matrix has dimension {}, program has {} physical modes",
            t.dim(),
            program.n_physical_modes
        )));
    }
    if program.fill_modes == 0 {
        return Ok(t.clone());
    }
    let f = program.fill_modes;
    let n = program.n_logical_modes();
    let entries = t.entries.view((f, f), (n, n)).into_owned();
    let lossless = unitarity_defect(&entries) <= 1e-10;
    Ok(TransferMatrix { entries, lossless })
}

/// Mean modulus along each sub-diagonal: `profile[k] = mean_i |T[i][i-k]|`.
pub fn connectivity_profile(t: &TransferMatrix) -> Vec<f64> {
    let m = t.dim();
    (0..m)
        .map(|k| {
            let total: f64 = (k..m).map(|i| t.entries[(i, i - k)].norm()).sum();
            total / (m - k) as f64
        })
        .collect()
}
