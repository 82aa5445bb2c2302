use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DeviceClass, PartitionPlan, SetAssignment};

#[derive(Debug, Error)]
pub enum PlanFileError {
    #[error("plan parse error: {0}")]
    Parse(String),
    #[error("plan is inconsistent: {0}")]
    Invalid(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanDoc {
    k: u32,
    objective: f64,
    devices: Vec<PlanDevice>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanDevice {
    id: String,
    w: u32,
    n: u32,
    class: DeviceClass,
    #[serde(default)]
    forced: bool,
    #[serde(default)]
    relay: bool,
}

impl PartitionPlan {
    pub fn to_toml_string(&self) -> String {
        let doc = PlanDoc {
            k: self.k,
            objective: self.objective,
            devices: (0..self.w.len())
                .map(|m| PlanDevice {
                    id: self.device_ids[m].clone(),
                    w: self.w[m],
                    n: self.n[m],
                    class: self.sets.class[m],
                    forced: self.sets.forced[m],
                    relay: self.sets.relay[m],
                })
                .collect(),
        };
        toml::to_string(&doc).expect("plans are always representable as TOML")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PlanFileError> {
        let doc: PlanDoc = toml::from_str(text).map_err(|e| PlanFileError::Parse(e.to_string()))?;
        if doc.devices.is_empty() {
            return Err(PlanFileError::Invalid("no devices".into()));
        }
        if doc.k == 0 {
            return Err(PlanFileError::Invalid("k must be at least 1".into()));
        }
        let plan = PartitionPlan {
            device_ids: doc.devices.iter().map(|d| d.id.clone()).collect(),
            w: doc.devices.iter().map(|d| d.w).collect(),
            n: doc.devices.iter().map(|d| d.n).collect(),
            k: doc.k,
            objective: doc.objective,
            sets: SetAssignment {
                class: doc.devices.iter().map(|d| d.class).collect(),
                forced: doc.devices.iter().map(|d| d.forced).collect(),
                relay: doc.devices.iter().map(|d| d.relay).collect(),
            },
        };
        if !plan.sets.is_consistent() {
            return Err(PlanFileError::Invalid("forced or relay device outside m4".into()));
        }
        if let Some(d) = doc.devices.iter().find(|d| d.n > d.w) {
            return Err(PlanFileError::Invalid(format!("{}: n exceeds w", d.id)));
        }
        Ok(plan)
    }
}
