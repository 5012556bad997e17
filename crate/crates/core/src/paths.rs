//! Label-setting shortest paths, all-origins cost matrices and aggregation
//! of OD demand onto shortest-path trees.
//!
//! Paths are never enumerated. A demand assignment walks each origin's tree
//! once in reverse settle order, so loading is linear in the node count.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use rayon::prelude::*;

use crate::error::{domain, shape, Error, Result};
use crate::network::Network;
use crate::od::OdMatrix;

/// Predecessor sentinel for the origin and unreachable nodes.
pub const NO_LINK: usize = usize::MAX;

/// Origins handled by one task. Partial flows are summed per chunk and the
/// chunks reduced in order, which keeps results independent of thread count.
const ORIGIN_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPathTree {
    pub origin: usize,
    pub dist: Vec<f64>,
    pub pred_link: Vec<usize>,
    /// Reachable nodes in the order they were settled.
    pub order: Vec<usize>,
}

impl ShortestPathTree {
    /// Largest number of links on a tree path from the origin.
    pub fn hop_depth(&self, network: &Network) -> usize {
        let mut depth = vec![0usize; self.dist.len()];
        let mut max = 0;
        for &v in &self.order {
            let e = self.pred_link[v];
            if e != NO_LINK {
                depth[v] = depth[network.link(e).tail] + 1;
                max = max.max(depth[v]);
            }
        }
        max
    }

    /// Links of the tree path from the origin to `node`, origin first.
    pub fn path_to(&self, network: &Network, node: usize) -> Option<Vec<usize>> {
        if !self.dist[node].is_finite() {
            return None;
        }
        let mut path = Vec::new();
        let mut v = node;
        while self.pred_link[v] != NO_LINK {
            let e = self.pred_link[v];
            path.push(e);
            v = network.link(e).tail;
        }
        path.reverse();
        Some(path)
    }

    /// Debug dump as `node,dist,pred_link` rows (1-based ids, 0 = none).
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("node,dist,pred_link\n");
        for (v, (d, p)) in self.dist.iter().zip(&self.pred_link).enumerate() {
            let p = if *p == NO_LINK { 0 } else { p + 1 };
            let _ = writeln!(out, "{},{},{}", v + 1, d, p);
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Label {
    dist: f64,
    node: usize,
}

impl Eq for Label {}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from `origin` (a node index). Links with infinite time are not
/// traversable. Equal-cost alternatives resolve to the smaller link index.
pub fn dijkstra(network: &Network, link_times: &[f64], origin: usize) -> Result<ShortestPathTree> {
    if link_times.len() != network.num_links() {
        return Err(shape(format!(
            "{} link times for {} links",
            link_times.len(),
            network.num_links()
        )));
    }
    if let Some(t) = link_times.iter().find(|t| t.is_nan() || **t < 0.0) {
        return Err(domain(format!("link time must be nonnegative, got {t}")));
    }
    let n = network.num_nodes();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![NO_LINK; n];
    let mut settled = vec![false; n];
    let mut order = Vec::new();
    let mut heap = BinaryHeap::new();
    dist[origin] = 0.0;
    heap.push(Label {
        dist: 0.0,
        node: origin,
    });
    while let Some(Label { dist: d, node: u }) = heap.pop() {
        if settled[u] || d > dist[u] {
            continue;
        }
        settled[u] = true;
        order.push(u);
        if u != origin && !network.is_through(u) {
            continue;
        }
        for &e in network.out_links(u) {
            let w = link_times[e];
            if w.is_infinite() {
                continue;
            }
            let v = network.link(e).head;
            if settled[v] {
                continue;
            }
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                pred[v] = e;
                heap.push(Label { dist: nd, node: v });
            } else if nd == dist[v] && e < pred[v] {
                pred[v] = e;
            }
        }
    }
    Ok(ShortestPathTree {
        origin,
        dist,
        pred_link: pred,
        order,
    })
}

/// Loads one origin's demand row (indexed by destination zone) onto its tree.
pub fn load_tree(
    network: &Network,
    tree: &ShortestPathTree,
    row: &[f64],
    flows: &mut [f64],
) -> Result<()> {
    let mut load = vec![0.0; network.num_nodes()];
    for (j, &d) in row.iter().enumerate() {
        if d <= 0.0 {
            continue;
        }
        let node = network.zones()[j];
        if node == tree.origin {
            continue;
        }
        if !tree.dist[node].is_finite() {
            let origin = network.zone_of_node(tree.origin).unwrap_or(tree.origin);
            return Err(Error::InfeasibleOd {
                origin,
                destination: j,
            });
        }
        load[node] += d;
    }
    for &v in tree.order.iter().rev() {
        let l = load[v];
        if l == 0.0 {
            continue;
        }
        let e = tree.pred_link[v];
        if e == NO_LINK {
            continue;
        }
        flows[e] += l;
        load[network.link(e).tail] += l;
    }
    Ok(())
}

/// Link flows of `demand` routed on the given trees, one tree per origin
/// zone (in zone order).
pub fn aggregate_flows(
    network: &Network,
    trees: &[ShortestPathTree],
    demand: &OdMatrix,
) -> Result<Vec<f64>> {
    if trees.len() != network.num_zones() || demand.zones() != network.num_zones() {
        return Err(shape("need one tree and one demand row per zone"));
    }
    let mut flows = vec![0.0; network.num_links()];
    for (i, tree) in trees.iter().enumerate() {
        load_tree(network, tree, demand.row(i), &mut flows)?;
    }
    Ok(flows)
}

/// Travel costs `T^m_ij` between zones for every mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    zones: usize,
    /// `values[m][i * zones + j]`.
    values: Vec<Vec<f64>>,
}

impl CostMatrix {
    pub fn new(zones: usize, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.iter().any(|v| v.len() != zones * zones) {
            return Err(shape("every mode needs a zones × zones block"));
        }
        Ok(Self { zones, values })
    }

    pub fn zones(&self) -> usize {
        self.zones
    }

    pub fn num_modes(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, mode: usize, i: usize, j: usize) -> f64 {
        self.values[mode][i * self.zones + j]
    }

    pub fn mode(&self, mode: usize) -> &[f64] {
        &self.values[mode]
    }

    pub fn modes(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Fails on the first positive-demand pair without a finite cost.
    pub fn check_demand(&self, mode: usize, demand: &OdMatrix) -> Result<()> {
        for i in 0..self.zones {
            for j in 0..self.zones {
                if i != j && demand.get(i, j) > 0.0 && !self.get(mode, i, j).is_finite() {
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

/// Per-mode link times `t_e + c^m_e`, infinite where the mode is barred.
pub fn mode_link_times(network: &Network, times: &[f64]) -> Vec<Vec<f64>> {
    (0..network.num_modes())
        .map(|m| {
            network
                .links()
                .iter()
                .zip(times)
                .map(|(l, t)| l.mode_cost(m).map_or(f64::INFINITY, |c| t + c))
                .collect()
        })
        .collect()
}

fn zone_row(network: &Network, tree: &ShortestPathTree) -> Vec<f64> {
    network.zones().iter().map(|&z| tree.dist[z]).collect()
}

/// Zone-to-zone costs for each mode's link times. Origins run on the current
/// rayon pool.
pub fn all_origin_costs(network: &Network, link_times_per_mode: &[Vec<f64>]) -> Result<CostMatrix> {
    let nz = network.num_zones();
    let mut values = Vec::with_capacity(link_times_per_mode.len());
    for times in link_times_per_mode {
        let rows: Vec<Vec<f64>> = (0..nz)
            .into_par_iter()
            .map(|i| dijkstra(network, times, network.zones()[i]).map(|t| zone_row(network, &t)))
            .collect::<Result<_>>()?;
        values.push(rows.concat());
    }
    CostMatrix::new(nz, values)
}

/// Result of one all-or-nothing loading.
#[derive(Debug, Clone, PartialEq)]
pub struct Loading {
    /// Per-mode link flows.
    pub flows: Vec<Vec<f64>>,
    pub costs: CostMatrix,
}

impl Loading {
    pub fn total_flows(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.flows.first().map_or(0, Vec::len)];
        for f in &self.flows {
            for (t, x) in total.iter_mut().zip(f) {
                *t += x;
            }
        }
        total
    }
}

/// Shortest-path oracle with an optional dedicated worker pool and a count
/// of all-origins sweeps performed.
pub struct PathEngine {
    pool: Option<rayon::ThreadPool>,
    sweeps: AtomicUsize,
}

impl std::fmt::Debug for PathEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PathEngine")
            .field("threads", &self.threads())
            .field("sweeps", &self.sweeps())
            .finish()
    }
}

impl Default for PathEngine {
    fn default() -> Self {
        Self {
            pool: None,
            sweeps: AtomicUsize::new(0),
        }
    }
}

impl PathEngine {
    /// `threads = None` uses the global rayon pool.
    pub fn new(threads: Option<usize>) -> Result<Self> {
        let pool = match threads {
            None => None,
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| Error::Validation(format!("cannot build thread pool: {e}")))?,
            ),
        };
        Ok(Self {
            pool,
            sweeps: AtomicUsize::new(0),
        })
    }

    pub fn threads(&self) -> usize {
        self.pool
            .as_ref()
            .map_or_else(rayon::current_num_threads, |p| p.current_num_threads())
    }

    /// Number of single-mode all-origins sweeps so far.
    pub fn sweeps(&self) -> usize {
        self.sweeps.load(AtomicOrdering::Relaxed)
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    pub fn costs(&self, network: &Network, link_times_per_mode: &[Vec<f64>]) -> Result<CostMatrix> {
        self.sweeps
            .fetch_add(link_times_per_mode.len(), AtomicOrdering::Relaxed);
        self.install(|| all_origin_costs(network, link_times_per_mode))
    }

    /// Routes each mode's demand on that mode's shortest paths.
    pub fn assign(
        &self,
        network: &Network,
        link_times_per_mode: &[Vec<f64>],
        demand: &[OdMatrix],
    ) -> Result<Loading> {
        if demand.len() != link_times_per_mode.len() {
            return Err(shape("one demand matrix per mode required"));
        }
        let nz = network.num_zones();
        self.sweeps
            .fetch_add(link_times_per_mode.len(), AtomicOrdering::Relaxed);
        self.install(|| {
            let mut flows = Vec::with_capacity(demand.len());
            let mut costs = Vec::with_capacity(demand.len());
            for (times, od) in link_times_per_mode.iter().zip(demand) {
                let (f, c) = assign_mode(network, times, od, nz)?;
                flows.push(f);
                costs.push(c);
            }
            Ok(Loading {
                flows,
                costs: CostMatrix::new(nz, costs)?,
            })
        })
    }
}

fn assign_mode(
    network: &Network,
    times: &[f64],
    od: &OdMatrix,
    nz: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..nz.div_ceil(ORIGIN_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut flows = vec![0.0; network.num_links()];
            let mut rows = Vec::with_capacity(ORIGIN_CHUNK * nz);
            for i in c * ORIGIN_CHUNK..((c + 1) * ORIGIN_CHUNK).min(nz) {
                let tree = dijkstra(network, times, network.zones()[i])?;
                load_tree(network, &tree, od.row(i), &mut flows)?;
                rows.extend(zone_row(network, &tree));
            }
            Ok((flows, rows))
        })
        .collect::<Result<_>>()?;
    let mut flows = vec![0.0; network.num_links()];
    let mut costs = Vec::with_capacity(nz * nz);
    for (f, rows) in chunks {
        for (a, b) in flows.iter_mut().zip(&f) {
            *a += b;
        }
        costs.extend(rows);
    }
    Ok((flows, costs))
}
