//! JSON network file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    BusSpec, LineSpec, Network, NetworkError, Phase, PhaseImpedance, PhaseSet, DEFAULT_BASE_KVA,
    DEFAULT_BASE_VOLTAGE,
};
use crate::scalar::Real;

fn default_phase() -> String {
    "ABC".into()
}

fn default_transformer() -> f64 {
    400.0
}

fn default_base_voltage() -> f64 {
    DEFAULT_BASE_VOLTAGE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CustomerField {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusFile {
    pub id: u64,
    #[serde(default = "default_phase")]
    pub phase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub customer: Option<CustomerField>,
    /// Explicit phase for the customer(s) on a multi-phase bus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub customer_phase: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFile {
    pub from: u64,
    pub to: u64,
    pub length_km: f64,
    pub cable: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CableFile {
    pub label: String,
    #[serde(default, alias = "cross_section_mm2")]
    pub cross_section: f64,
    pub r_self: f64,
    pub x_self: f64,
    pub r_mutual: f64,
    pub x_mutual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub buses: Vec<BusFile>,
    pub lines: Vec<LineFile>,
    pub slack: u64,
    #[serde(default = "default_transformer")]
    pub transformer_kva: f64,
    #[serde(default = "default_base_voltage")]
    pub base_voltage_v: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_kva: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cables: Vec<CableFile>,
}

impl NetworkFile {
    pub fn into_network<T: Real>(self) -> Result<Network<T>, NetworkError> {
        let mut buses = Vec::with_capacity(self.buses.len());
        for b in &self.buses {
            let phases = PhaseSet::parse(&b.phase)?;
            let explicit = match &b.customer_phase {
                Some(s) => {
                    let set = PhaseSet::parse(s)?;
                    if set.len() != 1 {
                        return Err(NetworkError::PhaseLabel(s.clone()));
                    }
                    set.iter().next()
                }
                None => None,
            };
            let customers = match &b.customer {
                None => vec![],
                Some(CustomerField::One(i)) => vec![(*i, explicit)],
                Some(CustomerField::Many(v)) => v.iter().map(|&i| (i, explicit)).collect(),
            };
            buses.push(BusSpec {
                id: b.id,
                phases,
                customers,
            });
        }
        let lines = self
            .lines
            .iter()
            .map(|l| LineSpec {
                from: l.from,
                to: l.to,
                length_km: T::lit(l.length_km),
                cable: l.cable.clone(),
            })
            .collect();
        let cables = self
            .cables
            .iter()
            .map(|c| PhaseImpedance {
                label: c.label.clone(),
                cross_section: T::lit(c.cross_section),
                r_self: T::lit(c.r_self),
                x_self: T::lit(c.x_self),
                r_mutual: T::lit(c.r_mutual),
                x_mutual: T::lit(c.x_mutual),
            })
            .collect();
        Network::build(
            buses,
            lines,
            cables,
            self.slack,
            T::lit(self.transformer_kva),
            T::lit(self.base_voltage_v),
            T::lit(self.base_kva.unwrap_or(DEFAULT_BASE_KVA)),
        )
    }
}

impl<T: Real> Network<T> {
    /// Serializes into the file schema. Catalog cables are referenced by label;
    /// non-catalog cables are written into the `cables` array.
    pub fn to_file(&self) -> NetworkFile {
        let catalog = super::catalog_names();
        let buses = self
            .buses()
            .iter()
            .map(|b| {
                let idx: Vec<usize> = b
                    .customers
                    .iter()
                    .map(|&p| self.customers()[p].index)
                    .collect();
                let customer = match idx.len() {
                    0 => None,
                    1 => Some(CustomerField::One(idx[0])),
                    _ => Some(CustomerField::Many(idx)),
                };
                // Only emit an explicit customer phase when it differs from the default rule.
                let phases: Vec<Phase> = b.phases.iter().collect();
                let explicit = b.customers.iter().find_map(|&p| {
                    let c = self.customers()[p];
                    (phases[c.index % phases.len()] != c.phase).then(|| c.phase.to_string())
                });
                BusFile {
                    id: b.id,
                    phase: b.phases.to_string(),
                    customer,
                    customer_phase: explicit,
                }
            })
            .collect();
        let lines = self
            .lines()
            .iter()
            .map(|l| LineFile {
                from: self.buses()[l.from_bus].id,
                to: self.buses()[l.to_bus].id,
                length_km: l.length_km.as_f64(),
                cable: self.cables()[l.cable].label.clone(),
            })
            .collect();
        let cables = self
            .cables()
            .iter()
            .filter(|c| {
                !catalog.contains(&c.label)
                    || super::cable_lookup::<T>(&c.label).ok().as_ref() != Some(*c)
            })
            .map(|c| CableFile {
                label: c.label.clone(),
                cross_section: c.cross_section.as_f64(),
                r_self: c.r_self.as_f64(),
                x_self: c.x_self.as_f64(),
                r_mutual: c.r_mutual.as_f64(),
                x_mutual: c.x_mutual.as_f64(),
            })
            .collect();
        NetworkFile {
            buses,
            lines,
            slack: self.buses()[self.slack()].id,
            transformer_kva: self.transformer_kva().as_f64(),
            base_voltage_v: self.base_voltage().as_f64(),
            base_kva: Some(self.base_kva().as_f64()),
            cables,
        }
    }
}

/// Reads and validates a network JSON file.
pub fn load_network<T: Real>(path: impl AsRef<Path>) -> Result<Network<T>, NetworkError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: NetworkFile = serde_json::from_str(&text).map_err(|source| NetworkError::Json {
        path: path.display().to_string(),
        source,
    })?;
    file.into_network()
}
