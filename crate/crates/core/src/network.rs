//! Link graph, volume-delay functions and turn expansion.
//!
//! Units are fixed throughout the crate: times in hours, flows in vehicles
//! per hour. Node, link and zone indices are zero-based in memory; the text
//! formats in [`crate::tntp`] use the usual one-based numbering.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::{domain, Error, Result};

/// Volume-delay parameters `t̄ (1 + ρ (f/f̄)^{1/μ})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BprParams {
    pub rho: f64,
    pub mu: f64,
}

impl BprParams {
    pub fn new(rho: f64, mu: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Validation(format!(
                "BPR rho must be positive, got {rho}"
            )));
        }
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(Error::Validation(format!(
                "BPR mu must lie in (0, 1], got {mu}"
            )));
        }
        Ok(Self { rho, mu })
    }

    /// Converts the TNTP `B` / `power` pair. `B = 0` is allowed and yields a
    /// constant-time link.
    pub fn from_tntp(b: f64, power: f64) -> Result<Self> {
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::Validation(format!(
                "BPR coefficient B must be nonnegative, got {b}"
            )));
        }
        if !(power >= 1.0 && power.is_finite()) {
            return Err(Error::Validation(format!(
                "BPR power must be at least 1, got {power}"
            )));
        }
        Ok(Self {
            rho: b,
            mu: 1.0 / power,
        })
    }
}

impl Default for BprParams {
    fn default() -> Self {
        Self {
            rho: 0.15,
            mu: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostModel {
    /// Flow-dependent link times; the parameters are defaults that per-link
    /// values read from files take precedence over.
    Beckmann(BprParams),
    /// Hard capacities; link times are multipliers `t ≥ t̄`.
    StableDynamics,
}

impl CostModel {
    pub fn beckmann() -> Self {
        CostModel::Beckmann(BprParams::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            CostModel::Beckmann(_) => "beckmann",
            CostModel::StableDynamics => "stable-dynamics",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkKind {
    #[default]
    Road,
    /// Auxiliary movement link created by [`expand_turns`].
    Turn,
    /// Zero-cost link tying a zone to a split intersection.
    Connector,
}

/// Attributes carried through from input files but not used by the models.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkAttrs {
    pub length: f64,
    pub speed: f64,
    pub toll: f64,
    pub link_type: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub tail: usize,
    pub head: usize,
    pub free_flow_time: f64,
    /// `f64::INFINITY` marks an uncapacitated link with constant time.
    pub capacity: f64,
    /// Per-link volume-delay parameters; override the model defaults.
    pub bpr: Option<BprParams>,
    /// Constant cost per mode; `None` when the mode cannot use the link.
    pub mode_costs: Vec<Option<f64>>,
    pub kind: LinkKind,
    pub attrs: LinkAttrs,
}

impl Link {
    /// Single-mode road link with default attributes.
    pub fn road(tail: usize, head: usize, free_flow_time: f64, capacity: f64) -> Self {
        Self {
            tail,
            head,
            free_flow_time,
            capacity,
            bpr: None,
            mode_costs: vec![Some(0.0)],
            kind: LinkKind::Road,
            attrs: LinkAttrs::default(),
        }
    }

    pub fn with_modes(mut self, mode_costs: Vec<Option<f64>>) -> Self {
        self.mode_costs = mode_costs;
        self
    }

    pub fn with_bpr(mut self, bpr: BprParams) -> Self {
        self.bpr = Some(bpr);
        self
    }

    pub fn is_uncapacitated(&self) -> bool {
        self.capacity.is_infinite()
    }

    pub fn mode_cost(&self, mode: usize) -> Option<f64> {
        self.mode_costs.get(mode).copied().flatten()
    }
}

/// Directed network with forward/backward adjacency in compressed form.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    num_nodes: usize,
    links: Vec<Link>,
    zones: Vec<usize>,
    zone_of_node: Vec<Option<usize>>,
    through: Vec<bool>,
    num_modes: usize,
    out_start: Vec<usize>,
    out_links: Vec<usize>,
    in_start: Vec<usize>,
    in_links: Vec<usize>,
}

impl Network {
    /// Builds and validates a network. `through[v] == false` forbids paths
    /// from passing through `v` (it may still start or end one); `None` means
    /// every node is traversable.
    pub fn new(
        num_nodes: usize,
        links: Vec<Link>,
        zones: Vec<usize>,
        through: Option<Vec<bool>>,
    ) -> Result<Self> {
        let num_modes = links.first().map_or(1, |l| l.mode_costs.len()).max(1);
        for (e, link) in links.iter().enumerate() {
            if link.tail >= num_nodes || link.head >= num_nodes {
                return Err(Error::Structural(format!(
                    "link {} references node {} beyond the {num_nodes} declared nodes",
                    e + 1,
                    link.tail.max(link.head) + 1
                )));
            }
            let fixed = link.is_uncapacitated() || link.bpr.is_some_and(|b| b.rho == 0.0);
            if !(link.capacity > 0.0) {
                return Err(Error::Validation(format!(
                    "link {} has non-positive capacity {}",
                    e + 1,
                    link.capacity
                )));
            }
            if !link.free_flow_time.is_finite()
                || link.free_flow_time < 0.0
                || (link.free_flow_time == 0.0 && !fixed)
            {
                return Err(Error::Validation(format!(
                    "link {} has invalid free-flow time {}",
                    e + 1,
                    link.free_flow_time
                )));
            }
            if link.mode_costs.len() != num_modes {
                return Err(Error::Validation(format!(
                    "link {} lists {} mode costs, expected {num_modes}",
                    e + 1,
                    link.mode_costs.len()
                )));
            }
            if link
                .mode_costs
                .iter()
                .flatten()
                .any(|c| !(c.is_finite() && *c >= 0.0))
            {
                return Err(Error::Validation(format!(
                    "link {} has a negative or non-finite mode cost",
                    e + 1
                )));
            }
        }
        let mut zone_of_node = vec![None; num_nodes];
        for (z, &v) in zones.iter().enumerate() {
            if v >= num_nodes {
                return Err(Error::Structural(format!(
                    "zone {} is node {} beyond node count",
                    z + 1,
                    v + 1
                )));
            }
            if zone_of_node[v].replace(z).is_some() {
                return Err(Error::Structural(format!(
                    "node {} is listed as a zone twice",
                    v + 1
                )));
            }
        }
        let through = through.unwrap_or_else(|| vec![true; num_nodes]);
        if through.len() != num_nodes {
            return Err(Error::ShapeMismatch(
                "through flags must cover every node".into(),
            ));
        }
        let (out_start, out_links) = csr(num_nodes, links.iter().map(|l| l.tail));
        let (in_start, in_links) = csr(num_nodes, links.iter().map(|l| l.head));
        Ok(Self {
            num_nodes,
            links,
            zones,
            zone_of_node,
            through,
            num_modes,
            out_start,
            out_links,
            in_start,
            in_links,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_zones(&self) -> usize {
        self.zones.len()
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, e: usize) -> &Link {
        &self.links[e]
    }

    pub fn zones(&self) -> &[usize] {
        &self.zones
    }

    pub fn zone_of_node(&self, v: usize) -> Option<usize> {
        self.zone_of_node[v]
    }

    pub fn is_through(&self, v: usize) -> bool {
        self.through[v]
    }

    pub fn through_flags(&self) -> &[bool] {
        &self.through
    }

    pub fn out_links(&self, v: usize) -> &[usize] {
        &self.out_links[self.out_start[v]..self.out_start[v + 1]]
    }

    pub fn in_links(&self, v: usize) -> &[usize] {
        &self.in_links[self.in_start[v]..self.in_start[v + 1]]
    }

    pub fn free_flow_times(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.free_flow_time).collect()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.capacity).collect()
    }

    /// Resolved volume-delay functions, file values taking precedence.
    pub fn link_costs(&self, defaults: &BprParams) -> Vec<LinkCost> {
        self.links
            .iter()
            .map(|l| LinkCost::resolve(l, defaults))
            .collect()
    }

    /// Drops every per-link BPR override so the model defaults apply.
    pub fn without_file_bpr(mut self) -> Self {
        for l in &mut self.links {
            l.bpr = None;
        }
        self
    }

    /// Zones reachable from `origin_zone`, honoring through-node flags and
    /// counting only links usable by `mode` (any mode if `None`).
    pub fn reachable_from(&self, origin_zone: usize, mode: Option<usize>) -> Vec<bool> {
        let source = self.zones[origin_zone];
        let mut seen = vec![false; self.num_nodes];
        let mut queue = VecDeque::from([source]);
        seen[source] = true;
        while let Some(v) = queue.pop_front() {
            if v != source && !self.through[v] {
                continue;
            }
            for &e in self.out_links(v) {
                let link = &self.links[e];
                let usable = match mode {
                    Some(m) => link.mode_cost(m).is_some(),
                    None => link.mode_costs.iter().any(Option::is_some),
                };
                if usable && !seen[link.head] {
                    seen[link.head] = true;
                    queue.push_back(link.head);
                }
            }
        }
        self.zones.iter().map(|&z| seen[z]).collect()
    }

    /// Load-time check that every OD pair with positive demand (row-major
    /// `zones × zones`) is connected.
    pub fn check_demand_reachable(&self, demand: &[f64]) -> Result<()> {
        let nz = self.num_zones();
        if demand.len() != nz * nz {
            return Err(Error::ShapeMismatch(format!(
                "demand has {} entries, expected {}",
                demand.len(),
                nz * nz
            )));
        }
        for i in 0..nz {
            let row = &demand[i * nz..(i + 1) * nz];
            if row.iter().all(|&d| d <= 0.0) {
                continue;
            }
            let reach = self.reachable_from(i, None);
            for (j, &d) in row.iter().enumerate() {
                if d > 0.0 && i != j && !reach[j] {
                    return Err(Error::InfeasibleOd {
                        origin: i,
                        destination: j,
                    });
                }
            }
        }
        Ok(())
    }
}

fn csr(n: usize, keys: impl Iterator<Item = usize> + Clone) -> (Vec<usize>, Vec<usize>) {
    let mut start = vec![0usize; n + 1];
    for k in keys.clone() {
        start[k + 1] += 1;
    }
    for v in 0..n {
        start[v + 1] += start[v];
    }
    let mut fill = start.clone();
    let mut items = vec![0usize; start[n]];
    for (e, k) in keys.enumerate() {
        items[fill[k]] = e;
        fill[k] += 1;
    }
    (start, items)
}

/// A link's volume-delay function with parameters resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkCost {
    pub free_flow_time: f64,
    pub capacity: f64,
    pub rho: f64,
    pub mu: f64,
}

impl LinkCost {
    pub fn resolve(link: &Link, defaults: &BprParams) -> Self {
        let p = link.bpr.unwrap_or(*defaults);
        Self {
            free_flow_time: link.free_flow_time,
            capacity: link.capacity,
            rho: p.rho,
            mu: p.mu,
        }
    }

    /// Constant-time link: no capacity or zero BPR coefficient.
    pub fn is_fixed(&self) -> bool {
        self.capacity.is_infinite() || self.rho == 0.0 || self.free_flow_time == 0.0
    }

    /// `τ(f) = t̄ (1 + ρ (f/f̄)^{1/μ})`.
    pub fn time(&self, flow: f64) -> f64 {
        if self.is_fixed() {
            return self.free_flow_time;
        }
        self.free_flow_time * (1.0 + self.rho * (flow / self.capacity).powf(1.0 / self.mu))
    }

    /// `σ(f) = ∫₀ᶠ τ = t̄ f (1 + ρ μ/(1+μ) (f/f̄)^{1/μ})`.
    pub fn integral(&self, flow: f64) -> f64 {
        if self.is_fixed() {
            return self.free_flow_time * flow;
        }
        let ratio = (flow / self.capacity).powf(1.0 / self.mu);
        self.free_flow_time * flow * (1.0 + self.rho * self.mu / (1.0 + self.mu) * ratio)
    }

    /// Fenchel conjugate `σ*(t) = f̄ ((t−t̄)/(t̄ρ))^μ (t−t̄)/(1+μ)` on `t ≥ t̄`.
    /// Constant-time links have `σ* = 0` at `t̄` and `+∞` above it.
    pub fn conjugate(&self, t: f64) -> f64 {
        let excess = t - self.free_flow_time;
        if excess <= 0.0 {
            return 0.0;
        }
        if self.is_fixed() {
            return f64::INFINITY;
        }
        self.capacity * (excess / (self.free_flow_time * self.rho)).powf(self.mu) * excess
            / (1.0 + self.mu)
    }

    /// `σ*'(t)`, the flow whose time is `t` (inverse of `τ`).
    pub fn conjugate_slope(&self, t: f64) -> f64 {
        let excess = t - self.free_flow_time;
        if excess <= 0.0 {
            return 0.0;
        }
        if self.is_fixed() {
            return f64::INFINITY;
        }
        self.capacity * (excess / (self.free_flow_time * self.rho)).powf(self.mu)
    }
}

fn check_flow(flow: f64) -> Result<()> {
    if flow < 0.0 || flow.is_nan() {
        return Err(domain(format!("flow must be nonnegative, got {flow}")));
    }
    Ok(())
}

/// Link travel time under the Beckmann model.
pub fn bpr_time(params: &BprParams, link: &Link, flow: f64) -> Result<f64> {
    check_flow(flow)?;
    Ok(LinkCost::resolve(link, params).time(flow))
}

/// Integral of the link time from zero to `flow`.
pub fn bpr_integral(params: &BprParams, link: &Link, flow: f64) -> Result<f64> {
    check_flow(flow)?;
    Ok(LinkCost::resolve(link, params).integral(flow))
}

/// Conjugate of [`bpr_integral`], defined for `time ≥ t̄`.
pub fn bpr_conjugate(params: &BprParams, link: &Link, time: f64) -> Result<f64> {
    if time.is_nan() || time < link.free_flow_time {
        return Err(domain(format!(
            "time {time} is below the free-flow time {}",
            link.free_flow_time
        )));
    }
    Ok(LinkCost::resolve(link, params).conjugate(time))
}

/// One allowed movement through an intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Turn {
    pub node: usize,
    pub from_link: usize,
    pub to_link: usize,
    pub penalty: f64,
}

/// Allowed turns; intersections absent from the table are unrestricted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TurnTable {
    pub turns: Vec<Turn>,
}

impl TurnTable {
    /// Every turn at every node allowed with zero penalty.
    pub fn all_allowed(network: &Network) -> Self {
        let mut turns = Vec::new();
        for v in 0..network.num_nodes() {
            for &from_link in network.in_links(v) {
                for &to_link in network.out_links(v) {
                    turns.push(Turn {
                        node: v,
                        from_link,
                        to_link,
                        penalty: 0.0,
                    });
                }
            }
        }
        Self { turns }
    }

    /// All turns at `node` except the listed `(from, to)` pairs.
    pub fn banning(network: &Network, node: usize, banned: &[(usize, usize)]) -> Self {
        let mut turns = Vec::new();
        for &from_link in network.in_links(node) {
            for &to_link in network.out_links(node) {
                if !banned.contains(&(from_link, to_link)) {
                    turns.push(Turn {
                        node,
                        from_link,
                        to_link,
                        penalty: 0.0,
                    });
                }
            }
        }
        Self { turns }
    }
}

/// Splits every intersection named in `turns`: each incoming link ends at its
/// own node, each outgoing link starts at its own node, and an auxiliary link
/// per allowed turn joins them. Original links keep their indices; node
/// indices of the original network are kept as well, and split zone nodes are
/// tied in with zero-time connectors and made non-traversable.
pub fn expand_turns(network: &Network, turns: &TurnTable) -> Result<Network> {
    let mut by_node: BTreeMap<usize, Vec<Turn>> = BTreeMap::new();
    for t in &turns.turns {
        let (Some(from), Some(to)) = (network.links.get(t.from_link), network.links.get(t.to_link))
        else {
            return Err(Error::Structural(format!(
                "turn at node {} references a missing link",
                t.node + 1
            )));
        };
        if t.node >= network.num_nodes || from.head != t.node || to.tail != t.node {
            return Err(Error::Structural(format!(
                "turn ({} -> {}) does not pass through node {}",
                t.from_link + 1,
                t.to_link + 1,
                t.node + 1
            )));
        }
        if !(t.penalty >= 0.0 && t.penalty.is_finite()) {
            return Err(Error::Validation(format!(
                "turn penalty {} must be finite and nonnegative",
                t.penalty
            )));
        }
        by_node.entry(t.node).or_default().push(*t);
    }

    let num_modes = network.num_modes;
    let mut links = network.links.clone();
    let mut num_nodes = network.num_nodes;
    let mut through = network.through.clone();
    let aux = |tail, head, time, kind| Link {
        tail,
        head,
        free_flow_time: time,
        capacity: f64::INFINITY,
        bpr: None,
        mode_costs: vec![Some(0.0); num_modes],
        kind,
        attrs: LinkAttrs::default(),
    };

    for (&v, node_turns) in &by_node {
        let mut in_node = BTreeMap::new();
        for &e in network.in_links(v) {
            in_node.insert(e, num_nodes);
            links[e].head = num_nodes;
            through.push(true);
            num_nodes += 1;
        }
        let mut out_node = BTreeMap::new();
        for &e in network.out_links(v) {
            // A self-loop is both incoming and outgoing; give its tail its own node.
            out_node.insert(e, num_nodes);
            links[e].tail = num_nodes;
            through.push(true);
            num_nodes += 1;
        }
        let mut seen = BTreeSet::new();
        for t in node_turns {
            if seen.insert((t.from_link, t.to_link)) {
                let mut link = aux(
                    in_node[&t.from_link],
                    out_node[&t.to_link],
                    t.penalty,
                    LinkKind::Turn,
                );
                // A movement is usable by a mode only if both legs are.
                link.mode_costs = (0..num_modes)
                    .map(|m| {
                        (network.links[t.from_link].mode_cost(m).is_some()
                            && network.links[t.to_link].mode_cost(m).is_some())
                        .then_some(0.0)
                    })
                    .collect();
                links.push(link);
            }
        }
        if network.zone_of_node(v).is_some() {
            for &n in out_node.values() {
                links.push(aux(v, n, 0.0, LinkKind::Connector));
            }
            for &n in in_node.values() {
                links.push(aux(n, v, 0.0, LinkKind::Connector));
            }
            through[v] = false;
        }
    }
    Network::new(num_nodes, links, network.zones.clone(), Some(through))
}
