//! Formal network model: controllers, switches, the physical graph, the two
//! IP networks (controller-to-controller `A`, controller-to-switch `B`), the
//! per-switch address pool and the switch-controller mapping.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Controller rank, unique within a cluster configuration. Ranks start at 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct ControllerId(pub u32);

/// Switch index `l`. Binds the switch to static address `S_l` and pool address `P_l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct SwitchId(pub u32);

impl fmt::Display for ControllerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl fmt::Display for SwitchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NetworkTag {
    A,
    B,
}

/// A statically assigned address (`C_i` in `A`, `S_i` in `B`). Opaque token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StaticAddress {
    pub network: NetworkTag,
    pub token: u32,
}

/// Pool address `P_l`: the address switch `l` dials. Moved between
/// controllers by alias ownership.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct PoolAddress(pub u32);

/// Ids deserialize from a number or, as map keys buffered by serde, a
/// numeric string.
macro_rules! id_from_number_or_key {
    ($($t:ident),*) => {$(
        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                struct V;
                impl serde::de::Visitor<'_> for V {
                    type Value = $t;
                    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                        f.write_str("a u32 id")
                    }
                    fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<$t, E> {
                        u32::try_from(v).map($t).map_err(|_| E::custom("id out of range"))
                    }
                    fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<$t, E> {
                        u32::try_from(v).map($t).map_err(|_| E::custom("id out of range"))
                    }
                    fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<$t, E> {
                        v.parse().map($t).map_err(|_| E::custom(format!("bad id {v:?}")))
                    }
                }
                d.deserialize_any(V)
            }
        }
    )*};
}

id_from_number_or_key!(ControllerId, SwitchId, PoolAddress);

impl PoolAddress {
    pub fn for_switch(s: SwitchId) -> Self {
        PoolAddress(s.0)
    }

    pub fn switch(self) -> SwitchId {
        SwitchId(self.0)
    }
}

impl fmt::Display for PoolAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Vertex {
    Controller(ControllerId),
    Switch(SwitchId),
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vertex::Controller(c) => c.fmt(f),
            Vertex::Switch(s) => s.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("edge references unknown vertex {0}")]
    UnknownVertex(Vertex),
    #[error("network {network:?}: no path in G between {from} and {to}")]
    Disconnected {
        network: NetworkTag,
        from: Vertex,
        to: Vertex,
    },
    #[error("network {network:?}: address {token} assigned to both {first} and {second}")]
    DuplicateAddress {
        network: NetworkTag,
        token: u32,
        first: Vertex,
        second: Vertex,
    },
    #[error("network {network:?}: address of {vertex} is tagged for another network")]
    WrongNetwork { network: NetworkTag, vertex: Vertex },
    #[error("network {network:?}: {vertex} is not allowed in this network")]
    IllegalMember { network: NetworkTag, vertex: Vertex },
}

/// Undirected graph `G = (V, E)` over controllers and switches.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkGraph {
    vertices: BTreeSet<Vertex>,
    edges: BTreeSet<(Vertex, Vertex)>,
}

impl NetworkGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Controllers in a clique, every switch linked to every controller.
    pub fn full(controllers: &[ControllerId], switches: &[SwitchId]) -> Self {
        let mut g = Self::new();
        for &c in controllers {
            g.add_vertex(Vertex::Controller(c));
        }
        for &s in switches {
            g.add_vertex(Vertex::Switch(s));
        }
        for (i, &a) in controllers.iter().enumerate() {
            for &b in &controllers[i + 1..] {
                g.add_edge(Vertex::Controller(a), Vertex::Controller(b)).unwrap();
            }
            for &s in switches {
                g.add_edge(Vertex::Controller(a), Vertex::Switch(s)).unwrap();
            }
        }
        g
    }

    pub fn add_vertex(&mut self, v: Vertex) {
        self.vertices.insert(v);
    }

    pub fn add_edge(&mut self, a: Vertex, b: Vertex) -> Result<(), ModelError> {
        for v in [a, b] {
            if !self.vertices.contains(&v) {
                return Err(ModelError::UnknownVertex(v));
            }
        }
        self.edges.insert(if a <= b { (a, b) } else { (b, a) });
        Ok(())
    }

    pub fn vertices(&self) -> impl Iterator<Item = &Vertex> {
        self.vertices.iter()
    }

    pub fn contains_edge(&self, a: Vertex, b: Vertex) -> bool {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.edges.contains(&key)
    }

    fn neighbours(&self) -> BTreeMap<Vertex, Vec<Vertex>> {
        let mut adj: BTreeMap<Vertex, Vec<Vertex>> = BTreeMap::new();
        for &(a, b) in &self.edges {
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
        adj
    }

    /// Vertices reachable from `start` (including `start`).
    pub fn reachable(&self, start: Vertex) -> BTreeSet<Vertex> {
        let adj = self.neighbours();
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &n in adj.get(&v).into_iter().flatten() {
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        seen
    }

    pub fn has_path(&self, a: Vertex, b: Vertex) -> bool {
        a == b || self.reachable(a).contains(&b)
    }
}

/// An IP network `N = (V_N, E_N)` with its static address assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IpNetworkSpec {
    pub name: NetworkTag,
    pub members: BTreeSet<Vertex>,
    pub static_addresses: BTreeMap<Vertex, BTreeSet<StaticAddress>>,
}

impl IpNetworkSpec {
    /// Network `A`: controllers only, controller `c_i` gets token `i`.
    pub fn controller_network(controllers: &[ControllerId]) -> Self {
        let members = controllers.iter().map(|&c| Vertex::Controller(c)).collect();
        let static_addresses = controllers
            .iter()
            .map(|&c| {
                let addr = StaticAddress {
                    network: NetworkTag::A,
                    token: c.0,
                };
                (Vertex::Controller(c), BTreeSet::from([addr]))
            })
            .collect();
        Self {
            name: NetworkTag::A,
            members,
            static_addresses,
        }
    }

    /// Network `B`: controllers and switches. Switches get static `S_l`;
    /// controllers hold only pool aliases, which live in the [`AliasTable`].
    pub fn switch_network(controllers: &[ControllerId], switches: &[SwitchId]) -> Self {
        let mut members: BTreeSet<Vertex> =
            controllers.iter().map(|&c| Vertex::Controller(c)).collect();
        let mut static_addresses = BTreeMap::new();
        for &s in switches {
            members.insert(Vertex::Switch(s));
            let addr = StaticAddress {
                network: NetworkTag::B,
                token: s.0,
            };
            static_addresses.insert(Vertex::Switch(s), BTreeSet::from([addr]));
        }
        Self {
            name: NetworkTag::B,
            members,
            static_addresses,
        }
    }

    pub fn controllers(&self) -> impl Iterator<Item = ControllerId> + '_ {
        self.members.iter().filter_map(|v| match v {
            Vertex::Controller(c) => Some(*c),
            Vertex::Switch(_) => None,
        })
    }

    pub fn switches(&self) -> impl Iterator<Item = SwitchId> + '_ {
        self.members.iter().filter_map(|v| match v {
            Vertex::Switch(s) => Some(*s),
            Vertex::Controller(_) => None,
        })
    }

    /// Path constraint on every member pair, disjoint address sets, and
    /// membership rules (`A` holds controllers only).
    pub fn validate(&self, graph: &NetworkGraph) -> Result<(), ModelError> {
        let mut owners: BTreeMap<u32, Vertex> = BTreeMap::new();
        for (&v, addrs) in &self.static_addresses {
            for a in addrs {
                if a.network != self.name {
                    return Err(ModelError::WrongNetwork {
                        network: self.name,
                        vertex: v,
                    });
                }
                if let Some(&first) = owners.get(&a.token) {
                    return Err(ModelError::DuplicateAddress {
                        network: self.name,
                        token: a.token,
                        first,
                        second: v,
                    });
                }
                owners.insert(a.token, v);
            }
        }
        if self.name == NetworkTag::A {
            if let Some(&v) = self
                .members
                .iter()
                .find(|v| matches!(v, Vertex::Switch(_)))
            {
                return Err(ModelError::IllegalMember {
                    network: self.name,
                    vertex: v,
                });
            }
        }
        let Some(&first) = self.members.iter().next() else {
            return Ok(());
        };
        // Connectivity is an equivalence relation, so one reachability sweep suffices.
        let reach = graph.reachable(first);
        for &v in &self.members {
            if !reach.contains(&v) {
                return Err(ModelError::Disconnected {
                    network: self.name,
                    from: first,
                    to: v,
                });
            }
        }
        Ok(())
    }
}

/// One (controller, switch) pair of the mapping `M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub switch: SwitchId,
    pub controller: ControllerId,
}

/// The switch-controller mapping `M`. A raw set of pairs, so invalid
/// (doubly mapped) states are representable and detectable by
/// [`validate_mapping`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControllerSwitchMapping {
    pairs: BTreeSet<Assignment>,
}

impl ControllerSwitchMapping {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (ControllerId, SwitchId)>>(pairs: I) -> Self {
        Self {
            pairs: pairs
                .into_iter()
                .map(|(controller, switch)| Assignment { switch, controller })
                .collect(),
        }
    }

    /// Adds a raw pair without removing existing pairs for the switch.
    pub fn insert(&mut self, c: ControllerId, s: SwitchId) {
        self.pairs.insert(Assignment {
            switch: s,
            controller: c,
        });
    }

    /// Maps `s` to `c`, replacing any previous controller of `s`.
    pub fn assign(&mut self, s: SwitchId, c: ControllerId) {
        self.unassign(s);
        self.insert(c, s);
    }

    pub fn unassign(&mut self, s: SwitchId) {
        self.pairs.retain(|a| a.switch != s);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Assignment> {
        self.pairs.iter()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn switches_of(&self, c: ControllerId) -> impl Iterator<Item = SwitchId> + '_ {
        self.pairs
            .iter()
            .filter(move |a| a.controller == c)
            .map(|a| a.switch)
    }

    /// Switch -> controller view; the first pair wins on an invalid mapping.
    pub fn as_map(&self) -> BTreeMap<SwitchId, ControllerId> {
        let mut out = BTreeMap::new();
        for a in &self.pairs {
            out.entry(a.switch).or_insert(a.controller);
        }
        out
    }
}

impl FromIterator<(ControllerId, SwitchId)> for ControllerSwitchMapping {
    fn from_iter<I: IntoIterator<Item = (ControllerId, SwitchId)>>(iter: I) -> Self {
        Self::from_pairs(iter)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvalidMapping {
    DoublyMapped(SwitchId),
    UnknownController(ControllerId),
    UnknownSwitch(SwitchId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MappingVerdict {
    Complete,
    Partial { unmapped: Vec<SwitchId> },
    Invalid(InvalidMapping),
}

impl MappingVerdict {
    pub fn is_complete(&self) -> bool {
        matches!(self, MappingVerdict::Complete)
    }

    pub fn is_invalid(&self) -> bool {
        matches!(self, MappingVerdict::Invalid(_))
    }
}

pub fn validate_mapping(
    m: &ControllerSwitchMapping,
    controllers: &BTreeSet<ControllerId>,
    switches: &BTreeSet<SwitchId>,
) -> MappingVerdict {
    let mut seen = BTreeSet::new();
    for a in m.iter() {
        if !controllers.contains(&a.controller) {
            return MappingVerdict::Invalid(InvalidMapping::UnknownController(a.controller));
        }
        if !switches.contains(&a.switch) {
            return MappingVerdict::Invalid(InvalidMapping::UnknownSwitch(a.switch));
        }
        if !seen.insert(a.switch) {
            return MappingVerdict::Invalid(InvalidMapping::DoublyMapped(a.switch));
        }
    }
    let unmapped: Vec<SwitchId> = switches.difference(&seen).copied().collect();
    if unmapped.is_empty() {
        MappingVerdict::Complete
    } else {
        MappingVerdict::Partial { unmapped }
    }
}

pub fn controller_of(m: &ControllerSwitchMapping, s: SwitchId) -> Option<ControllerId> {
    m.iter().find(|a| a.switch == s).map(|a| a.controller)
}

/// One switch migration: `from` is `None` for an unowned switch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MigrationOrder {
    pub switch: SwitchId,
    pub from: Option<ControllerId>,
    pub to: ControllerId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiffError {
    #[error("new mapping does not cover switch {0}")]
    Incomplete(SwitchId),
    #[error("new mapping assigns switch {0} twice")]
    DoublyMapped(SwitchId),
}

/// Migration orders turning `m_old` into `m_new`, ascending by switch index.
/// `m_new` must map every switch in `switches` exactly once.
pub fn diff_mappings(
    m_old: &ControllerSwitchMapping,
    m_new: &ControllerSwitchMapping,
    switches: &BTreeSet<SwitchId>,
) -> Result<Vec<MigrationOrder>, DiffError> {
    let mut new_map = BTreeMap::new();
    for a in m_new.iter() {
        if new_map.insert(a.switch, a.controller).is_some() {
            return Err(DiffError::DoublyMapped(a.switch));
        }
    }
    let old_map = m_old.as_map();
    let mut orders = Vec::new();
    for &s in switches {
        let to = *new_map.get(&s).ok_or(DiffError::Incomplete(s))?;
        let from = old_map.get(&s).copied();
        if from != Some(to) {
            orders.push(MigrationOrder { switch: s, from, to });
        }
    }
    Ok(orders)
}

/// Applies orders to a mapping (the inverse direction of [`diff_mappings`]).
pub fn apply_orders(m: &ControllerSwitchMapping, orders: &[MigrationOrder]) -> ControllerSwitchMapping {
    let mut out = m.clone();
    for o in orders {
        out.assign(o.switch, o.to);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("alias {pool} is owned by {owner}, {requester} cannot acquire it")]
pub struct AliasConflict {
    pub pool: PoolAddress,
    pub owner: ControllerId,
    pub requester: ControllerId,
}

/// Ownership of pool addresses: realizes `IP_B{c}` for every controller.
/// Disjointness is structural (one owner slot per address).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AliasTable {
    owner: BTreeMap<PoolAddress, Option<ControllerId>>,
}

impl AliasTable {
    pub fn new<I: IntoIterator<Item = PoolAddress>>(pools: I) -> Self {
        Self {
            owner: pools.into_iter().map(|p| (p, None)).collect(),
        }
    }

    pub fn from_mapping(m: &ControllerSwitchMapping, switches: &BTreeSet<SwitchId>) -> Self {
        let mut t = Self::new(switches.iter().map(|&s| PoolAddress::for_switch(s)));
        for a in m.iter() {
            t.owner
                .insert(PoolAddress::for_switch(a.switch), Some(a.controller));
        }
        t
    }

    pub fn add_pool(&mut self, p: PoolAddress) {
        self.owner.entry(p).or_insert(None);
    }

    pub fn pools(&self) -> impl Iterator<Item = PoolAddress> + '_ {
        self.owner.keys().copied()
    }

    pub fn owner_of(&self, p: PoolAddress) -> Option<ControllerId> {
        self.owner.get(&p).copied().flatten()
    }

    /// Adds `p` to `IP_B{c}`. Re-acquiring an owned alias is a no-op.
    pub fn acquire(&mut self, p: PoolAddress, c: ControllerId) -> Result<(), AliasConflict> {
        let slot = self.owner.entry(p).or_insert(None);
        match *slot {
            Some(owner) if owner != c => Err(AliasConflict {
                pool: p,
                owner,
                requester: c,
            }),
            _ => {
                *slot = Some(c);
                Ok(())
            }
        }
    }

    /// Removes `p` from `IP_B{c}`; returns false if `c` did not own it.
    pub fn release(&mut self, p: PoolAddress, c: ControllerId) -> bool {
        match self.owner.get_mut(&p) {
            Some(slot) if *slot == Some(c) => {
                *slot = None;
                true
            }
            _ => false,
        }
    }

    /// Drops every alias of `c` (host went down). Returns the lost addresses.
    pub fn drop_all(&mut self, c: ControllerId) -> Vec<PoolAddress> {
        let mut lost = Vec::new();
        for (p, slot) in self.owner.iter_mut() {
            if *slot == Some(c) {
                *slot = None;
                lost.push(*p);
            }
        }
        lost
    }

    pub fn unowned(&self) -> impl Iterator<Item = PoolAddress> + '_ {
        self.owner
            .iter()
            .filter(|(_, o)| o.is_none())
            .map(|(p, _)| *p)
    }

    pub fn count_of(&self, c: ControllerId) -> usize {
        self.owner.values().filter(|o| **o == Some(c)).count()
    }

    /// Every pool address is owned by one of `live`.
    pub fn is_exhaustive(&self, live: &BTreeSet<ControllerId>) -> bool {
        self.owner
            .values()
            .all(|o| o.is_some_and(|c| live.contains(&c)))
    }

    /// The mapping implied by current ownership.
    pub fn implied_mapping(&self) -> ControllerSwitchMapping {
        self.owner
            .iter()
            .filter_map(|(p, o)| o.map(|c| (c, p.switch())))
            .collect()
    }
}

/// `IP_B{c}`: exactly the pool addresses owned by `c`.
pub fn alias_set(t: &AliasTable, c: ControllerId) -> BTreeSet<PoolAddress> {
    t.owner
        .iter()
        .filter(|(_, o)| **o == Some(c))
        .map(|(p, _)| *p)
        .collect()
}

/// Graph plus both IP networks, validated together at scenario load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Networks {
    pub graph: NetworkGraph,
    pub a: IpNetworkSpec,
    pub b: IpNetworkSpec,
}

impl Networks {
    pub fn full(controllers: &[ControllerId], switches: &[SwitchId]) -> Self {
        Self {
            graph: NetworkGraph::full(controllers, switches),
            a: IpNetworkSpec::controller_network(controllers),
            b: IpNetworkSpec::switch_network(controllers, switches),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.a.validate(&self.graph)?;
        self.b.validate(&self.graph)
    }

    pub fn switch_set(&self) -> BTreeSet<SwitchId> {
        self.b.switches().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(i: u32) -> ControllerId {
        ControllerId(i)
    }
    fn s(i: u32) -> SwitchId {
        SwitchId(i)
    }

    pub(crate) fn fig3a() -> ControllerSwitchMapping {
        ControllerSwitchMapping::from_pairs([
            (c(1), s(1)),
            (c(1), s(2)),
            (c(2), s(3)),
            (c(2), s(4)),
            (c(2), s(5)),
        ])
    }

    fn fig3c() -> ControllerSwitchMapping {
        let mut m = fig3a();
        m.assign(s(3), c(1));
        m
    }

    fn fig3d() -> ControllerSwitchMapping {
        (1..=5).map(|i| (c(1), s(i))).collect()
    }

    fn sets(n: u32, m: u32) -> (BTreeSet<ControllerId>, BTreeSet<SwitchId>) {
        ((1..=n).map(c).collect(), (1..=m).map(s).collect())
    }

    #[test]
    fn ids_accept_numbers_and_numeric_keys() {
        assert_eq!(serde_json::from_str::<SwitchId>("7").unwrap(), s(7));
        assert_eq!(serde_json::from_str::<ControllerId>("\"3\"").unwrap(), c(3));
        assert!(serde_json::from_str::<PoolAddress>("\"x\"").is_err());
        assert!(serde_json::from_str::<PoolAddress>("-1").is_err());
    }

    #[test]
    fn validate_examples() {
        let (cs, ss) = sets(2, 5);
        assert_eq!(validate_mapping(&fig3a(), &cs, &ss), MappingVerdict::Complete);
        assert_eq!(
            validate_mapping(&ControllerSwitchMapping::new(), &BTreeSet::new(), &BTreeSet::new()),
            MappingVerdict::Complete
        );
        let double = ControllerSwitchMapping::from_pairs([(c(1), s(1)), (c(2), s(1))]);
        assert_eq!(
            validate_mapping(&double, &cs, &ss),
            MappingVerdict::Invalid(InvalidMapping::DoublyMapped(s(1)))
        );
        let partial = ControllerSwitchMapping::from_pairs([(c(1), s(1))]);
        assert!(matches!(
            validate_mapping(&partial, &cs, &ss),
            MappingVerdict::Partial { ref unmapped } if unmapped.len() == 4
        ));
        let stranger = ControllerSwitchMapping::from_pairs([(c(7), s(1))]);
        assert_eq!(
            validate_mapping(&stranger, &cs, &ss),
            MappingVerdict::Invalid(InvalidMapping::UnknownController(c(7)))
        );
    }

    #[test]
    fn controller_of_examples() {
        assert_eq!(controller_of(&fig3a(), s(3)), Some(c(2)));
        assert_eq!(controller_of(&ControllerSwitchMapping::new(), s(1)), None);
        assert_eq!(controller_of(&fig3c(), s(3)), Some(c(1)));
    }

    #[test]
    fn diff_examples() {
        let (_, ss) = sets(2, 5);
        assert_eq!(
            diff_mappings(&fig3a(), &fig3c(), &ss).unwrap(),
            vec![MigrationOrder {
                switch: s(3),
                from: Some(c(2)),
                to: c(1)
            }]
        );
        assert!(diff_mappings(&fig3a(), &fig3a(), &ss).unwrap().is_empty());
        assert_eq!(
            diff_mappings(&fig3c(), &fig3d(), &ss).unwrap(),
            vec![
                MigrationOrder {
                    switch: s(4),
                    from: Some(c(2)),
                    to: c(1)
                },
                MigrationOrder {
                    switch: s(5),
                    from: Some(c(2)),
                    to: c(1)
                },
            ]
        );
        let partial = ControllerSwitchMapping::from_pairs([(c(1), s(1))]);
        assert_eq!(
            diff_mappings(&fig3a(), &partial, &ss),
            Err(DiffError::Incomplete(s(2)))
        );
    }

    #[test]
    fn alias_set_examples() {
        let (_, ss) = sets(2, 5);
        let t = AliasTable::from_mapping(&fig3a(), &ss);
        let p = |i| PoolAddress(i);
        assert_eq!(alias_set(&t, c(1)), BTreeSet::from([p(1), p(2)]));
        assert_eq!(alias_set(&t, c(2)), BTreeSet::from([p(3), p(4), p(5)]));
        assert!(alias_set(&AliasTable::default(), c(1)).is_empty());
        assert!(t.is_exhaustive(&BTreeSet::from([c(1), c(2)])));
        assert!(!t.is_exhaustive(&BTreeSet::from([c(1)])));
    }

    #[test]
    fn alias_acquire_release() {
        let mut t = AliasTable::new([PoolAddress(3)]);
        t.acquire(PoolAddress(3), c(2)).unwrap();
        let err = t.acquire(PoolAddress(3), c(1)).unwrap_err();
        assert_eq!(err.owner, c(2));
        assert!(!t.release(PoolAddress(3), c(1)));
        assert!(t.release(PoolAddress(3), c(2)));
        t.acquire(PoolAddress(3), c(1)).unwrap();
        assert_eq!(t.owner_of(PoolAddress(3)), Some(c(1)));
        assert_eq!(t.drop_all(c(1)), vec![PoolAddress(3)]);
        assert_eq!(t.unowned().count(), 1);
    }

    #[test]
    fn network_validation() {
        let cs = [c(1), c(2)];
        let ss = [s(1), s(2)];
        let nets = Networks::full(&cs, &ss);
        nets.validate().unwrap();

        let mut g = NetworkGraph::new();
        for v in [Vertex::Controller(c(1)), Vertex::Controller(c(2))] {
            g.add_vertex(v);
        }
        let a = IpNetworkSpec::controller_network(&cs);
        assert!(matches!(a.validate(&g), Err(ModelError::Disconnected { .. })));
        assert_eq!(
            g.add_edge(Vertex::Controller(c(1)), Vertex::Switch(s(9))),
            Err(ModelError::UnknownVertex(Vertex::Switch(s(9))))
        );
        g.add_edge(Vertex::Controller(c(2)), Vertex::Controller(c(1)))
            .unwrap();
        assert!(g.contains_edge(Vertex::Controller(c(1)), Vertex::Controller(c(2))));
        a.validate(&g).unwrap();

        let mut dup = a.clone();
        dup.static_addresses
            .get_mut(&Vertex::Controller(c(2)))
            .unwrap()
            .insert(StaticAddress {
                network: NetworkTag::A,
                token: 1,
            });
        assert!(matches!(
            dup.validate(&g),
            Err(ModelError::DuplicateAddress { token: 1, .. })
        ));
    }

    fn all_mappings(n: u32, m: u32) -> Vec<ControllerSwitchMapping> {
        // every switch: unmapped or one of n controllers
        let mut out = vec![ControllerSwitchMapping::new()];
        for sw in 1..=m {
            let mut next = Vec::new();
            for base in &out {
                next.push(base.clone());
                for ctl in 1..=n {
                    let mut x = base.clone();
                    x.insert(c(ctl), s(sw));
                    next.push(x);
                }
            }
            out = next;
        }
        out
    }

    #[test]
    fn diff_then_apply_is_identity_brute_force() {
        for n in 1..=3 {
            for m in 0..=4 {
                let (_, ss) = sets(n, m);
                let all = all_mappings(n, m);
                let complete: Vec<_> = all.iter().filter(|x| x.len() as u32 == m).collect();
                for old in &all {
                    for new in &complete {
                        let orders = diff_mappings(old, new, &ss).unwrap();
                        assert_eq!(&apply_orders(old, &orders), *new);
                        assert!(orders.windows(2).all(|w| w[0].switch < w[1].switch));
                    }
                }
            }
        }
    }

    #[test]
    fn validate_agrees_with_occurrence_count() {
        for n in 1..=3 {
            for m in 0..=3 {
                let (cs, ss) = sets(n, m);
                // include doubly mapped combinations: pairs of mappings unioned
                let singles = all_mappings(n, m);
                for x in &singles {
                    for y in singles.iter().step_by(3) {
                        let mut u = x.clone();
                        for a in y.iter() {
                            u.insert(a.controller, a.switch);
                        }
                        let mut counts = BTreeMap::new();
                        for a in u.iter() {
                            *counts.entry(a.switch).or_insert(0) += 1;
                        }
                        let expect = if counts.values().any(|&k| k > 1) {
                            "invalid"
                        } else if counts.len() as u32 == m {
                            "complete"
                        } else {
                            "partial"
                        };
                        let got = match validate_mapping(&u, &cs, &ss) {
                            MappingVerdict::Complete => "complete",
                            MappingVerdict::Partial { .. } => "partial",
                            MappingVerdict::Invalid(_) => "invalid",
                        };
                        assert_eq!(got, expect, "{u:?}");
                    }
                }
            }
        }
    }
}
