//! Program + losses → effective linear map on the detected modes.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cert::DeviceCertificate;
use crate::error::Result;
use crate::gaussian::{evolve_linear, prepare_input, GaussianState, InputKind, InputSpec, LossModel};
use crate::tdm::{compile_lossy, compile_unitary, CircuitProgram};

/// Where the loop efficiencies act.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossPlacement {
    /// Inside each loop, once per traversal. Light that circulates several
    /// times is attenuated several times.
    #[default]
    InLoop,
    /// Every mode pays each loop efficiency exactly once, after compilation.
    Uniform,
}

/// A programmed device with its losses.
#[derive(Clone, Debug, PartialEq)]
pub struct Device {
    pub program: CircuitProgram,
    pub loss: LossModel,
    pub placement: LossPlacement,
    /// Whether the fill bins are squeezed like the others. Their light
    /// spreads into later bins through the loops.
    pub fill_light: bool,
    /// Certificate the losses came from, for provenance.
    pub certificate: String,
}

impl Device {
    pub fn new(program: CircuitProgram, loss: LossModel) -> Result<Self> {
        loss.validate(program.n_logical_modes())?;
        program.validate()?;
        Ok(Device {
            program,
            loss,
            placement: LossPlacement::default(),
            fill_light: true,
            certificate: "custom".into(),
        })
    }

    pub fn from_certificate(program: CircuitProgram, cert: &DeviceCertificate) -> Result<Self> {
        let mut device = Device::new(program, cert.loss_model())?;
        device.certificate = cert.id();
        Ok(device)
    }

    pub fn with_placement(mut self, placement: LossPlacement) -> Self {
        self.placement = placement;
        self
    }

    pub fn with_fill_light(mut self, fill_light: bool) -> Self {
        self.fill_light = fill_light;
        self
    }

    pub fn n_outputs(&self) -> usize {
        self.program.n_logical_modes()
    }

    /// Number of squeezed input bins.
    pub fn n_inputs(&self) -> usize {
        if self.fill_light {
            self.program.n_physical_modes
        } else {
            self.program.n_logical_modes()
        }
    }

    /// `n_outputs × n_inputs` amplitude map, losses included.
    pub fn effective_map(&self) -> Result<DMatrix<Complex64>> {
        let p = &self.program;
        let (compiled, extra_loop) = match self.placement {
            LossPlacement::InLoop => (compile_lossy(p, &self.loss.loop_efficiencies)?, 1.0),
            LossPlacement::Uniform => (compile_unitary(p)?, self.loss.loop_efficiencies.iter().product()),
        };
        let f = p.fill_modes;
        let first_input = if self.fill_light { 0 } else { f };
        let n_out = self.n_outputs();
        let n_in = self.n_inputs();
        Ok(DMatrix::from_fn(n_out, n_in, |i, j| {
            let scale = (self.loss.common_efficiency * extra_loop * self.loss.channel(i)).sqrt();
            compiled.entries[(f + i, first_input + j)] * scale
        }))
    }

    /// Input state of the given family at squeezing `s`.
    pub fn input_state(&self, kind: InputKind, s: f64) -> Result<GaussianState> {
        prepare_input(&InputSpec::new(kind, s, self.n_inputs()))
    }

    /// Gaussian state on the detected modes.
    pub fn output_state(&self, kind: InputKind, s: f64) -> Result<GaussianState> {
        let map = self.effective_map()?;
        evolve_linear(&self.input_state(kind, s)?, &map)
    }
}
