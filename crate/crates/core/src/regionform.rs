//! Region formation: warm-up congestion, fuzzy congestion graph, alpha cut.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use petgraph::unionfind::UnionFind;
use sha2::{Digest, Sha256};

use crate::error::{PartitionError, SimError};
use crate::mesosim::{generate_demand, FlowConfig, SimParams, Simulation};
use crate::netmodel::{Endpoint, LinkId, NodeId, RoadNetwork};
use crate::policies::{run_controller, FixedTimeController};

pub const DEFAULT_WARMUP_HORIZON: f64 = 3600.0;

/// Time-averaged total incoming queue per intersection (indexed by node id)
/// over a fixed-time warm-up run.
pub fn collect_warmup_congestion(
    net: &RoadNetwork,
    flow: &FlowConfig,
    warmup_horizon: f64,
    seed: u64,
    params: &SimParams,
) -> Result<Vec<f64>, SimError> {
    let trips = if flow.total_vehicles == 0 {
        Vec::new()
    } else {
        generate_demand(&flow.scaled(warmup_horizon, 1.0), net, seed)?
    };
    let params = SimParams { horizon: warmup_horizon, record_log: false, ..params.clone() };
    let mut sim = Simulation::new(net, trips, params)?;
    run_controller(&mut sim, &mut FixedTimeController::new(net))?;
    let (sums, k) = sim.queue_sample_sums();
    Ok(sums.iter().map(|&s| if k == 0 { 0.0 } else { s as f64 / k as f64 }).collect())
}

/// Directed congestion graph over signalized intersections.
#[derive(Clone, Debug, PartialEq)]
pub struct CongestionGraph {
    /// Intersection ids; graph indices refer to positions in this list.
    pub vertices: Vec<NodeId>,
    /// `(from, to, c)` with `from`, `to` graph indices.
    pub edges: Vec<(usize, usize, f64)>,
    pub sigma: Vec<f64>,
    /// Membership per edge, parallel to `edges`.
    pub mu: Vec<f64>,
}

impl CongestionGraph {
    /// Build from explicit edge weights, computing sigma and mu.
    pub fn from_weights(vertices: Vec<NodeId>, edges: Vec<(usize, usize, f64)>) -> Self {
        let n = vertices.len();
        let mut in_sum = vec![0.0; n];
        let mut in_count = vec![0usize; n];
        for &(_, v, c) in &edges {
            in_sum[v] += c;
            in_count[v] += 1;
        }
        let sigma: Vec<f64> = (0..n).map(|v| if in_count[v] == 0 { 0.0 } else { in_sum[v] / in_count[v] as f64 }).collect();
        let mu = edges
            .iter()
            .map(|&(u, v, c)| {
                let p = if in_sum[v] > 0.0 { c / in_sum[v] } else { 0.0 };
                sigma[u].min(sigma[v]) * p
            })
            .collect();
        CongestionGraph { vertices, edges, sigma, mu }
    }

    /// Graph with memberships given directly (for synthetic tests).
    pub fn from_memberships(vertices: Vec<NodeId>, edges: Vec<(usize, usize)>, mu: Vec<f64>) -> Self {
        assert_eq!(edges.len(), mu.len());
        CongestionGraph {
            sigma: vec![0.0; vertices.len()],
            edges: edges.into_iter().map(|(u, v)| (u, v, 0.0)).collect(),
            vertices,
            mu,
        }
    }
}

/// Signalized intersections reachable from `node` by leaving it once and
/// then passing only through unsignalized intersections.
fn signalized_successors(net: &RoadNetwork, node: NodeId) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    let mut seen = BTreeSet::from([node]);
    let mut queue: VecDeque<NodeId> = net.intersections[node].neighbors.iter().flatten().copied().collect();
    while let Some(n) = queue.pop_front() {
        if !seen.insert(n) {
            continue;
        }
        if net.intersections[n].signalized {
            out.insert(n);
        } else {
            queue.extend(net.intersections[n].neighbors.iter().flatten().copied());
        }
    }
    out
}

/// One edge i -> j per downstream signalized neighbor j of i, weighted by
/// the congestion of i.
pub fn build_fuzzy_graph(queues: &[f64], net: &RoadNetwork) -> CongestionGraph {
    let vertices = net.signalized_ids();
    let index: BTreeMap<NodeId, usize> = vertices.iter().enumerate().map(|(k, &n)| (n, k)).collect();
    let mut edges = Vec::new();
    for (k, &i) in vertices.iter().enumerate() {
        for j in signalized_successors(net, i) {
            edges.push((k, index[&j], queues[i].max(0.0)));
        }
    }
    CongestionGraph::from_weights(vertices, edges)
}

/// Disjoint regions of signalized intersections.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionPartition {
    /// Sorted members per region; regions ordered by their smallest member.
    pub regions: Vec<Vec<NodeId>>,
    /// Region of every intersection (None for unsignalized ones).
    pub region_of: Vec<Option<usize>>,
}

impl RegionPartition {
    /// Normalize and validate a list of regions against a network.
    pub fn new(net: &RoadNetwork, regions: Vec<Vec<NodeId>>) -> Result<Self, PartitionError> {
        let mut regions: Vec<Vec<NodeId>> = regions
            .into_iter()
            .map(|mut r| {
                r.sort_unstable();
                r
            })
            .collect();
        if regions.iter().any(|r| r.is_empty()) {
            return Err(PartitionError::NotAPartition("empty region".into()));
        }
        regions.sort();
        let mut region_of = vec![None; net.num_nodes()];
        for (k, r) in regions.iter().enumerate() {
            for w in r.windows(2) {
                if w[0] == w[1] {
                    return Err(PartitionError::NotAPartition(format!("intersection {} repeated", w[0])));
                }
            }
            for &n in r {
                match net.intersections.get(n) {
                    None => return Err(PartitionError::NotAPartition(format!("unknown intersection {n}"))),
                    Some(i) if !i.signalized => {
                        return Err(PartitionError::NotAPartition(format!("intersection {n} is not signalized")))
                    }
                    _ => {}
                }
                if region_of[n].replace(k).is_some() {
                    return Err(PartitionError::NotAPartition(format!("intersection {n} in two regions")));
                }
            }
        }
        if let Some(i) = net.signalized().find(|i| region_of[i.id].is_none()) {
            return Err(PartitionError::NotAPartition(format!("intersection {} uncovered", i.id)));
        }
        Ok(RegionPartition { regions, region_of })
    }

    /// Every signalized intersection in its own region.
    pub fn singletons(net: &RoadNetwork) -> Self {
        RegionPartition::new(net, net.signalized_ids().into_iter().map(|n| vec![n]).collect()).expect("singletons partition")
    }

    /// All signalized intersections in one region.
    pub fn single(net: &RoadNetwork) -> Self {
        RegionPartition::new(net, vec![net.signalized_ids()]).expect("single region partition")
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn same_region(&self, a: NodeId, b: NodeId) -> bool {
        matches!((self.region_of.get(a), self.region_of.get(b)), (Some(Some(x)), Some(Some(y))) if x == y)
    }

    /// Links with exactly one end at a member of `region`.
    pub fn boundary_links(&self, net: &RoadNetwork, region: usize) -> Vec<LinkId> {
        let inside = |e: Endpoint| matches!(e, Endpoint::Node(n) if self.region_of[n] == Some(region));
        net.links.iter().filter(|l| inside(l.from) != inside(l.to)).map(|l| l.id).collect()
    }

    /// Canonical JSON: region id -> sorted member ids.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<usize, &Vec<NodeId>> = self.regions.iter().enumerate().collect();
        let mut s = serde_json::to_string_pretty(&map).expect("serializable");
        s.push('\n');
        s
    }

    pub fn from_json(net: &RoadNetwork, text: &str) -> Result<Self, PartitionError> {
        let map: BTreeMap<usize, Vec<NodeId>> =
            serde_json::from_str(text).map_err(|e| PartitionError::Format(e.to_string()))?;
        RegionPartition::new(net, map.into_values().collect())
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Regions as lists of graph indices (not intersection ids), sorted.
pub fn alpha_cut_components(graph: &CongestionGraph, alpha: f64) -> Result<Vec<Vec<usize>>, PartitionError> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(PartitionError::InvalidAlpha(alpha));
    }
    let n = graph.vertices.len();
    let mut uf = UnionFind::<usize>::new(n);
    for (&(u, v, _), &mu) in graph.edges.iter().zip(&graph.mu) {
        if mu >= alpha {
            uf.union(u, v);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        groups.entry(uf.find(v)).or_default().push(v);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort();
    Ok(out)
}

pub fn alpha_cut_partition(graph: &CongestionGraph, alpha: f64, net: &RoadNetwork) -> Result<RegionPartition, PartitionError> {
    let comps = alpha_cut_components(graph, alpha)?;
    RegionPartition::new(net, comps.into_iter().map(|c| c.into_iter().map(|k| graph.vertices[k]).collect()).collect())
}

/// Distinct candidate thresholds: 0 and every edge membership, ascending.
pub fn alpha_candidates(graph: &CongestionGraph) -> Vec<f64> {
    let mut v: Vec<f64> = std::iter::once(0.0).chain(graph.mu.iter().copied()).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}
