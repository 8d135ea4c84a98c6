//! Radial three-phase feeder topology, conductor data and per-unit bases.

mod catalog;
mod file;
mod generate;

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{Complex, Real};

pub use catalog::{cable_lookup, catalog_names, PhaseImpedance, CABLE_TABLE};
pub use file::{load_network, BusFile, CableFile, CustomerField, LineFile, NetworkFile};
pub use generate::generate_feeder;

/// Default per-phase power base in kVA.
pub const DEFAULT_BASE_KVA: f64 = 100.0;
/// Line-to-neutral voltage base in volts.
pub const DEFAULT_BASE_VOLTAGE: f64 = 230.0;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("unknown cable `{name}`; catalog has: {}", valid.join(", "))]
    UnknownCable { name: String, valid: Vec<String> },
    #[error("invalid cable `{label}`: {reason}")]
    InvalidCable { label: String, reason: String },
    #[error("duplicate bus id {0}")]
    DuplicateBus(u64),
    #[error("duplicate customer index {0}")]
    DuplicateCustomer(usize),
    #[error("line {line} references unknown bus {bus}")]
    UnknownBus { line: usize, bus: u64 },
    #[error("slack bus {0} not present")]
    MissingSlack(u64),
    #[error("line {line} connects bus {bus} to itself")]
    SelfLoop { line: usize, bus: u64 },
    #[error("line {line} ({from}-{to}) closes a cycle; network must be radial")]
    Cycle { line: usize, from: u64, to: u64 },
    #[error("buses not reachable from slack: {0:?}")]
    Disconnected(Vec<u64>),
    #[error("line {line} has non-positive or non-finite length")]
    InvalidLength { line: usize },
    #[error("bus {bus} phases {phases} not supplied by parent phases {parent}")]
    PhaseMismatch {
        bus: u64,
        phases: PhaseSet,
        parent: PhaseSet,
    },
    #[error("customer {customer} on bus {bus} uses phase {phase} not present at the bus")]
    CustomerPhase {
        customer: usize,
        bus: u64,
        phase: Phase,
    },
    #[error("invalid phase label `{0}`")]
    PhaseLabel(String),
    #[error("feeder needs at least 2 buses, got {0}")]
    TooFewBuses(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("reading network file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing network file {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Phase {
        Self::ALL[i % 3]
    }

    /// Nominal angle of the phase in degrees (A leads, positive sequence).
    pub fn angle_deg(self) -> f64 {
        [0.0, -120.0, 120.0][self.index()]
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(["A", "B", "C"][self.index()])
    }
}

/// Subset of {A, B, C}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn single(p: Phase) -> Self {
        PhaseSet(1 << p.index())
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn is_subset(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |&p| self.contains(p))
    }

    pub fn parse(s: &str) -> Result<Self, NetworkError> {
        let t = s.trim().to_ascii_uppercase();
        if t == "THREE" || t == "3" || t == "ABC" {
            return Ok(Self::ABC);
        }
        let mut bits = 0u8;
        for ch in t.chars() {
            bits |= match ch {
                'A' => 1,
                'B' => 2,
                'C' => 4,
                _ => return Err(NetworkError::PhaseLabel(s.to_string())),
            };
        }
        if bits == 0 {
            return Err(NetworkError::PhaseLabel(s.to_string()));
        }
        Ok(PhaseSet(bits))
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

/// A customer connection point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Customer {
    /// External customer index (unique across the feeder).
    pub index: usize,
    pub bus: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u64,
    pub phases: PhaseSet,
    /// Positions into [`Network::customers`].
    pub customers: Vec<usize>,
}

impl Bus {
    pub fn has_customer(&self) -> bool {
        !self.customers.is_empty()
    }
}

/// A segment oriented from the slack side (`from_bus`) to the load side.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSegment<T> {
    pub from_bus: usize,
    pub to_bus: usize,
    pub length_km: T,
    /// Index into [`Network::cables`].
    pub cable: usize,
    pub phases: PhaseSet,
}

/// Unvalidated bus description used to build a [`Network`].
#[derive(Debug, Clone)]
pub struct BusSpec {
    pub id: u64,
    pub phases: PhaseSet,
    /// Customer index with an optional explicit phase.
    pub customers: Vec<(usize, Option<Phase>)>,
}

#[derive(Debug, Clone)]
pub struct LineSpec<T> {
    pub from: u64,
    pub to: u64,
    pub length_km: T,
    pub cable: String,
}

/// Immutable, validated radial feeder.
#[derive(Debug, Clone)]
pub struct Network<T> {
    buses: Vec<Bus>,
    lines: Vec<LineSegment<T>>,
    cables: Vec<PhaseImpedance<T>>,
    customers: Vec<Customer>,
    slack: usize,
    transformer_kva: T,
    base_voltage: T,
    base_kva: T,
    parent_line: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
    effective_z: Vec<T>,
}

impl<T: Real> Network<T> {
    /// Validates topology and builds the derived tree structures.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        buses: Vec<BusSpec>,
        lines: Vec<LineSpec<T>>,
        custom_cables: Vec<PhaseImpedance<T>>,
        slack_id: u64,
        transformer_kva: T,
        base_voltage: T,
        base_kva: T,
    ) -> Result<Self, NetworkError> {
        if !(base_voltage > T::zero()) || !(base_kva > T::zero()) {
            return Err(NetworkError::InvalidParameter(
                "base voltage and base power must be positive".into(),
            ));
        }
        let mut index_of = HashMap::new();
        for (i, b) in buses.iter().enumerate() {
            if index_of.insert(b.id, i).is_some() {
                return Err(NetworkError::DuplicateBus(b.id));
            }
        }
        let slack = *index_of
            .get(&slack_id)
            .ok_or(NetworkError::MissingSlack(slack_id))?;

        // Custom cables shadow catalog entries of the same label.
        let mut cables: Vec<PhaseImpedance<T>> = Vec::new();
        for c in custom_cables {
            c.validate()?;
            cables.retain(|k| k.label != c.label);
            cables.push(c);
        }
        let mut cable_index = |name: &str| -> Result<usize, NetworkError> {
            if let Some(i) = cables.iter().position(|c| c.label == name) {
                return Ok(i);
            }
            cables.push(cable_lookup(name)?);
            Ok(cables.len() - 1)
        };

        // Union-find for cycle detection; adjacency for orientation.
        let n = buses.len();
        let mut uf: Vec<usize> = (0..n).collect();
        fn find(uf: &mut [usize], mut x: usize) -> usize {
            while uf[x] != x {
                uf[x] = uf[uf[x]];
                x = uf[x];
            }
            x
        }
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        let mut raw = Vec::with_capacity(lines.len());
        for (li, l) in lines.iter().enumerate() {
            let a = *index_of.get(&l.from).ok_or(NetworkError::UnknownBus {
                line: li,
                bus: l.from,
            })?;
            let b = *index_of.get(&l.to).ok_or(NetworkError::UnknownBus {
                line: li,
                bus: l.to,
            })?;
            if a == b {
                return Err(NetworkError::SelfLoop {
                    line: li,
                    bus: l.from,
                });
            }
            if !(l.length_km > T::zero()) || !l.length_km.is_finite() {
                return Err(NetworkError::InvalidLength { line: li });
            }
            let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
            if ra == rb {
                return Err(NetworkError::Cycle {
                    line: li,
                    from: l.from,
                    to: l.to,
                });
            }
            uf[ra] = rb;
            let cable = cable_index(&l.cable)?;
            adj[a].push((b, li));
            adj[b].push((a, li));
            raw.push((a, b, l.length_km, cable));
        }

        let mut parent_line = vec![None; n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([slack]);
        seen[slack] = true;
        let mut oriented: Vec<Option<LineSegment<T>>> = vec![None; raw.len()];
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, li) in &adj[u] {
                if seen[v] {
                    continue;
                }
                seen[v] = true;
                parent_line[v] = Some(li);
                let (_, _, len, cable) = raw[li];
                oriented[li] = Some(LineSegment {
                    from_bus: u,
                    to_bus: v,
                    length_km: len,
                    cable,
                    phases: buses[v].phases,
                });
                queue.push_back(v);
            }
        }
        if order.len() != n {
            let missing = (0..n).filter(|&i| !seen[i]).map(|i| buses[i].id).collect();
            return Err(NetworkError::Disconnected(missing));
        }
        let lines: Vec<LineSegment<T>> = oriented.into_iter().map(|l| l.unwrap()).collect();
        let mut children = vec![Vec::new(); n];
        for l in &lines {
            children[l.from_bus].push(l.to_bus);
        }
        for l in &lines {
            let (child, parent) = (&buses[l.to_bus], &buses[l.from_bus]);
            if !child.phases.is_subset(parent.phases) {
                return Err(NetworkError::PhaseMismatch {
                    bus: child.id,
                    phases: child.phases,
                    parent: parent.phases,
                });
            }
        }

        let mut customers = Vec::new();
        let mut bus_list = Vec::with_capacity(n);
        let mut seen_customer = HashMap::new();
        for (bi, b) in buses.iter().enumerate() {
            let phases: Vec<Phase> = b.phases.iter().collect();
            let mut positions = Vec::new();
            for &(idx, explicit) in &b.customers {
                if seen_customer.insert(idx, ()).is_some() {
                    return Err(NetworkError::DuplicateCustomer(idx));
                }
                let phase = explicit.unwrap_or(phases[idx % phases.len()]);
                if !b.phases.contains(phase) {
                    return Err(NetworkError::CustomerPhase {
                        customer: idx,
                        bus: b.id,
                        phase,
                    });
                }
                positions.push(customers.len());
                customers.push(Customer {
                    index: idx,
                    bus: bi,
                    phase,
                });
            }
            bus_list.push(Bus {
                id: b.id,
                phases: b.phases,
                customers: positions,
            });
        }
        // Customers are kept sorted by external index; rewrite bus positions.
        let mut perm: Vec<usize> = (0..customers.len()).collect();
        perm.sort_by_key(|&i| customers[i].index);
        let mut new_pos = vec![0; customers.len()];
        for (new, &old) in perm.iter().enumerate() {
            new_pos[old] = new;
        }
        let customers: Vec<Customer> = perm.iter().map(|&i| customers[i]).collect();
        for b in &mut bus_list {
            for p in &mut b.customers {
                *p = new_pos[*p];
            }
        }

        let mut cumulative = vec![Complex::new(T::zero(), T::zero()); n];
        let mut effective_z = vec![T::zero(); n];
        for &b in order.iter().skip(1) {
            let li = parent_line[b].unwrap();
            let l = &lines[li];
            cumulative[b] = cumulative[l.from_bus] + cables[l.cable].z_self() * l.length_km;
            effective_z[b] = cumulative[b].norm();
        }

        Ok(Network {
            buses: bus_list,
            lines,
            cables,
            customers,
            slack,
            transformer_kva,
            base_voltage,
            base_kva,
            parent_line,
            children,
            order,
            effective_z,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[LineSegment<T>] {
        &self.lines
    }

    pub fn cables(&self) -> &[PhaseImpedance<T>] {
        &self.cables
    }

    pub fn customers(&self) -> &[Customer] {
        &self.customers
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Index of the slack bus.
    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn transformer_kva(&self) -> T {
        self.transformer_kva
    }

    pub fn base_voltage(&self) -> T {
        self.base_voltage
    }

    /// Per-phase power base in kVA.
    pub fn base_kva(&self) -> T {
        self.base_kva
    }

    /// Impedance base in ohms.
    pub fn base_impedance(&self) -> T {
        self.base_voltage * self.base_voltage / (self.base_kva * T::lit(1000.0))
    }

    pub fn parent_line(&self, bus: usize) -> Option<usize> {
        self.parent_line[bus]
    }

    pub fn children(&self, bus: usize) -> &[usize] {
        &self.children[bus]
    }

    /// Buses in breadth-first order from the slack (parents before children).
    pub fn bfs_order(&self) -> &[usize] {
        &self.order
    }

    /// Magnitude of cumulative series self-impedance from the slack, in ohms.
    pub fn effective_impedance(&self, bus: usize) -> T {
        self.effective_z[bus]
    }

    pub fn bus_index(&self, id: u64) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Segment phase impedance matrix in ohms (full 3×3, zeros outside the segment phases).
    pub fn segment_z(&self, line: usize) -> [[Complex<T>; 3]; 3] {
        let l = &self.lines[line];
        let per_km = self.cables[l.cable].phase_matrix();
        let zero = Complex::new(T::zero(), T::zero());
        let mut z = [[zero; 3]; 3];
        for i in l.phases.iter() {
            for j in l.phases.iter() {
                z[i.index()][j.index()] = per_km[i.index()][j.index()] * l.length_km;
            }
        }
        z
    }

    /// Single-phase-equivalent segment impedance in ohms: self impedance for
    /// single-phase segments, positive-sequence `z_self − z_mutual` otherwise.
    pub fn segment_z_equivalent(&self, line: usize) -> Complex<T> {
        let l = &self.lines[line];
        let c = &self.cables[l.cable];
        let z = if l.phases.len() > 1 {
            c.z_self() - c.z_mutual()
        } else {
            c.z_self()
        };
        z * l.length_km
    }

    /// True when every segment carries the same phase set.
    pub fn uniform_phasing(&self) -> bool {
        self.lines.windows(2).all(|w| w[0].phases == w[1].phases)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus() -> Network<f64> {
        Network::build(
            vec![
                BusSpec {
                    id: 0,
                    phases: PhaseSet::ABC,
                    customers: vec![],
                },
                BusSpec {
                    id: 1,
                    phases: PhaseSet::single(Phase::A),
                    customers: vec![(0, None)],
                },
            ],
            vec![LineSpec {
                from: 0,
                to: 1,
                length_km: 1.0,
                cable: "ow95".into(),
            }],
            vec![],
            0,
            400.0,
            230.0,
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn minimal_tree() {
        let n = two_bus();
        assert_eq!(n.lines().len(), 1);
        assert_eq!(n.customers().len(), 1);
        assert_eq!(n.customers()[0].phase, Phase::A);
        assert_eq!(n.effective_impedance(0), 0.0);
        let z = (0.452f64.powi(2) + 0.270f64.powi(2)).sqrt();
        assert!((n.effective_impedance(1) - z).abs() < 1e-12);
        assert_eq!(n.segment_z_equivalent(0), Complex::new(0.452, 0.270));
    }

    #[test]
    fn reversed_line_is_oriented_from_slack() {
        let n: Network<f64> = Network::build(
            vec![
                BusSpec {
                    id: 5,
                    phases: PhaseSet::ABC,
                    customers: vec![(3, None)],
                },
                BusSpec {
                    id: 9,
                    phases: PhaseSet::ABC,
                    customers: vec![],
                },
            ],
            vec![LineSpec {
                from: 5,
                to: 9,
                length_km: 0.1,
                cable: "ug150".into(),
            }],
            vec![],
            9,
            400.0,
            230.0,
            100.0,
        )
        .unwrap();
        assert_eq!(n.slack(), 1);
        assert_eq!(n.lines()[0].from_bus, 1);
        assert_eq!(n.lines()[0].to_bus, 0);
        // round-robin default: index 3 -> phase A
        assert_eq!(n.customers()[0].phase, Phase::A);
    }

    #[test]
    fn phase_set_parsing() {
        assert_eq!(PhaseSet::parse("abc").unwrap(), PhaseSet::ABC);
        assert_eq!(PhaseSet::parse("B").unwrap(), PhaseSet::single(Phase::B));
        assert_eq!(PhaseSet::parse("AC").unwrap().len(), 2);
        assert!(PhaseSet::parse("D").is_err());
    }

    #[test]
    fn phase_mismatch_rejected() {
        let err = Network::<f64>::build(
            vec![
                BusSpec {
                    id: 0,
                    phases: PhaseSet::ABC,
                    customers: vec![],
                },
                BusSpec {
                    id: 1,
                    phases: PhaseSet::single(Phase::A),
                    customers: vec![],
                },
                BusSpec {
                    id: 2,
                    phases: PhaseSet::single(Phase::B),
                    customers: vec![],
                },
            ],
            vec![
                LineSpec {
                    from: 0,
                    to: 1,
                    length_km: 0.1,
                    cable: "ow95".into(),
                },
                LineSpec {
                    from: 1,
                    to: 2,
                    length_km: 0.1,
                    cable: "ow95".into(),
                },
            ],
            vec![],
            0,
            400.0,
            230.0,
            100.0,
        )
        .unwrap_err();
        assert!(matches!(err, NetworkError::PhaseMismatch { .. }));
    }
}
