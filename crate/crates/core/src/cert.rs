//! Device certificates.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::gaussian::{DetectorAssignment, LossModel};
use crate::tdm::{CircuitProgram, LoopSpec};

pub const N_LOOPS: usize = 3;
pub const N_CHANNELS: usize = 16;

/// Daily calibration record of the device.
///
/// `finished_at`, `target` and `schmidt_number` are metadata and may be
/// absent (older listings omit them). Keys not listed here are kept as-is.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviceCertificate {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// Raw static loop phases; wrapped when building a [`LoopSpec`].
    pub loop_phases: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schmidt_number: Option<f64>,
    pub common_efficiency: f64,
    pub loop_efficiencies: Vec<f64>,
    pub squeezing_parameters_mean: BTreeMap<String, f64>,
    pub relative_channel_efficiencies: Vec<f64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

const KNOWN_KEYS: [&str; 8] = [
    "finished_at",
    "target",
    "loop_phases",
    "schmidt_number",
    "common_efficiency",
    "loop_efficiencies",
    "squeezing_parameters_mean",
    "relative_channel_efficiencies",
];

fn number(key: &str, v: &Value) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::ingestion(key, "expected a finite number"))
}

fn numbers(key: &str, v: &Value, arity: usize) -> Result<Vec<f64>> {
    let items = v
        .as_array()
        .ok_or_else(|| Error::ingestion(key, "expected an array of numbers"))?;
    if items.len() != arity {
        return Err(Error::ingestion(key, format!("expected {arity} values, got {}", items.len())));
    }
    items.iter().map(|x| number(key, x)).collect()
}

fn efficiency(key: &str, x: f64) -> Result<f64> {
    if x > 0.0 && x <= 1.0 {
        Ok(x)
    } else {
        Err(Error::ingestion(key, format!("efficiency {x} outside (0, 1]")))
    }
}

fn text(key: &str, v: &Value) -> Result<String> {
    v.as_str()
        .map(str::to_owned)
        .ok_or_else(|| Error::ingestion(key, "expected a string"))
}

impl DeviceCertificate {
    pub fn from_value(doc: &Value) -> Result<Self> {
        let obj = doc
            .as_object()
            .ok_or_else(|| Error::ingestion("<root>", "expected an object"))?;
        let required = |key: &str| obj.get(key).ok_or_else(|| Error::ingestion(key, "missing"));

        let squeezing_doc = required("squeezing_parameters_mean")?
            .as_object()
            .ok_or_else(|| Error::ingestion("squeezing_parameters_mean", "expected a label map"))?;
        let mut squeezing_parameters_mean = BTreeMap::new();
        for (label, v) in squeezing_doc {
            let s = number("squeezing_parameters_mean", v)?;
            if s < 0.0 {
                return Err(Error::ingestion("squeezing_parameters_mean", format!("`{label}` is negative")));
            }
            squeezing_parameters_mean.insert(label.clone(), s);
        }
        if !squeezing_parameters_mean.contains_key("low") {
            return Err(Error::ingestion("squeezing_parameters_mean", "no `low` preset"));
        }

        let cert = DeviceCertificate {
            finished_at: obj.get("finished_at").map(|v| text("finished_at", v)).transpose()?,
            target: obj.get("target").map(|v| text("target", v)).transpose()?,
            loop_phases: numbers("loop_phases", required("loop_phases")?, N_LOOPS)?,
            schmidt_number: obj.get("schmidt_number").map(|v| number("schmidt_number", v)).transpose()?,
            common_efficiency: efficiency("common_efficiency", number("common_efficiency", required("common_efficiency")?)?)?,
            loop_efficiencies: numbers("loop_efficiencies", required("loop_efficiencies")?, N_LOOPS)?
                .into_iter()
                .map(|x| efficiency("loop_efficiencies", x))
                .collect::<Result<_>>()?,
            squeezing_parameters_mean,
            relative_channel_efficiencies: numbers(
                "relative_channel_efficiencies",
                required("relative_channel_efficiencies")?,
                N_CHANNELS,
            )?
            .into_iter()
            .map(|x| efficiency("relative_channel_efficiencies", x))
            .collect::<Result<_>>()?,
            extra: obj
                .iter()
                .filter(|(k, _)| !KNOWN_KEYS.contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        };
        Ok(cert)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::ingestion("<document>", e.to_string()))?;
        Self::from_value(&doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    /// Short identifier: the timestamp when present, else a content hash.
    pub fn id(&self) -> String {
        match &self.finished_at {
            Some(t) => t.clone(),
            None => format!("sha256:{}", &crate::hash_hex(self.to_json().as_bytes())[..16]),
        }
    }

    /// Squeezing of a preset label; `off` is zero.
    pub fn squeezing(&self, label: &str) -> Result<f64> {
        if label == "off" {
            return Ok(0.0);
        }
        self.squeezing_parameters_mean.get(label).copied().ok_or_else(|| {
            let known: Vec<&str> = self.squeezing_parameters_mean.keys().map(String::as_str).collect();
            Error::Input(format!("no squeezing preset `{label}` (have {})", known.join(", ")))
        })
    }

    /// Default loop geometry with this day's static phases.
    pub fn loop_spec(&self) -> Result<LoopSpec> {
        LoopSpec::with_static_phases(&self.loop_phases)
    }

    pub fn loss_model(&self) -> LossModel {
        LossModel {
            common_efficiency: self.common_efficiency,
            loop_efficiencies: self.loop_efficiencies.clone(),
            channel_efficiencies: self.relative_channel_efficiencies.clone(),
            detector_assignment: DetectorAssignment::Cyclic(N_CHANNELS),
        }
    }

    pub fn with_common_efficiency(mut self, eta: f64) -> Result<Self> {
        self.common_efficiency = efficiency("common_efficiency", eta)?;
        Ok(self)
    }
}

/// `common × ∏ loops × channel(i mod 16)` for each logical mode of the program.
pub fn effective_efficiencies(cert: &DeviceCertificate, program: &CircuitProgram) -> Vec<f64> {
    cert.loss_model().per_mode_efficiency(program.n_logical_modes())
}

/// Certificates bundled with the crate.
pub mod fixtures {
    use super::DeviceCertificate;

    pub const JAN_12: &str = include_str!("../fixtures/cert-2023-01-12.json");
    pub const APR_04: &str = include_str!("../fixtures/cert-2023-04-04.json");
    /// Earlier low-squeezing run (s = 0.533); no timestamp or Schmidt number.
    pub const LOW_0533: &str = include_str!("../fixtures/cert-low-0533.json");

    pub fn jan_12() -> DeviceCertificate {
        DeviceCertificate::from_json(JAN_12).expect("bundled certificate parses")
    }

    pub fn apr_04() -> DeviceCertificate {
        DeviceCertificate::from_json(APR_04).expect("bundled certificate parses")
    }

    pub fn low_0533() -> DeviceCertificate {
        DeviceCertificate::from_json(LOW_0533).expect("bundled certificate parses")
    }

    /// Looks up a bundled certificate by name.
    pub fn by_name(name: &str) -> Option<DeviceCertificate> {
        match name {
            "jan-12" | "2023-01-12" => Some(jan_12()),
            "apr-04" | "2023-04-04" => Some(apr_04()),
            "low-0533" => Some(low_0533()),
            _ => None,
        }
    }
}
