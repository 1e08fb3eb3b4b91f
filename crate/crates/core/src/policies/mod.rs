//! State features and rewards for the local, RegionWide and OneHop models,
//! plus the rule-based baseline controllers.

mod baselines;

use serde::{Deserialize, Serialize};

pub use baselines::{
    run_controller, ActuatedController, ActuatedParams, ControlDecision, FixedTimeController, RandomController,
    SignalController,
};

use crate::error::AgentError;
use crate::mesosim::{IntersectionObservation, Simulation};
use crate::netmodel::{Endpoint, Movement, NodeId, RoadNetwork, Side, NUM_ACTIONS};
use crate::regionform::RegionPartition;

pub const PHASE_WIDTH: usize = NUM_ACTIONS;
pub const QUEUE_WIDTH: usize = 4;
pub const TOPOLOGY_WIDTH: usize = 5;
pub const LOCAL_WIDTH: usize = PHASE_WIDTH + QUEUE_WIDTH + TOPOLOGY_WIDTH;
pub const REGIONWIDE_WIDTH: usize = 4 + QUEUE_WIDTH + 1 + 1 + 4;
pub const ONEHOP_SLOT_WIDTH: usize = PHASE_WIDTH + 1 + QUEUE_WIDTH + TOPOLOGY_WIDTH;
pub const ONEHOP_WIDTH: usize = 4 * ONEHOP_SLOT_WIDTH + 2;

/// Approach halted count above which an approach counts as spilling back.
pub const SPILLBACK_THRESHOLD: u32 = 15;

/// Normalizer for the time to a neighbor's next decision (long green plus clearance).
pub const DELTA_T_SCALE: f64 = 18.0;

/// Halted count and storage (lanes x per-lane capacity) over the groups
/// selected by `pick`.
fn halted_over(obs: &IntersectionObservation, pick: impl Fn(Side, Movement) -> bool) -> (u32, u32) {
    let mut halted = 0;
    let mut storage = 0;
    for side in Side::ALL {
        for m in Movement::ALL {
            if !pick(side, m) {
                continue;
            }
            if let Some(g) = obs.group(side, m) {
                halted += g.halted;
                storage += g.lanes * g.lane_capacity;
            }
        }
    }
    (halted, storage)
}

fn ratio(num: u32, den: u32) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `[q_vert, q_hor, q_vert_left, q_hor_left]`: halted vehicles divided by
/// the storage of the lanes that exist for that movement class. Right-turn
/// lanes count with the through movement of their approach.
pub fn queue_block(obs: &IntersectionObservation) -> [f64; QUEUE_WIDTH] {
    let sel = |vertical: bool, left: bool| {
        let (h, s) = halted_over(obs, |side, m| side.is_vertical() == vertical && (m == Movement::Left) == left);
        ratio(h, s)
    };
    [sel(true, false), sel(false, false), sel(true, true), sel(false, true)]
}

/// Total halted over all approaches divided by their total storage.
pub fn normalized_queue(obs: &IntersectionObservation) -> f64 {
    let (h, s) = halted_over(obs, |_, _| true);
    ratio(h, s)
}

/// Current action one-hot; all zero during clearance or before the first decision.
pub fn phase_one_hot(obs: &IntersectionObservation) -> [f64; PHASE_WIDTH] {
    match obs.current_phase {
        Some(a) if !obs.in_clearance => a.one_hot(),
        _ => [0.0; PHASE_WIDTH],
    }
}

pub fn local_state(obs: &IntersectionObservation) -> [f64; LOCAL_WIDTH] {
    let mut out = [0.0; LOCAL_WIDTH];
    out[..PHASE_WIDTH].copy_from_slice(&phase_one_hot(obs));
    out[PHASE_WIDTH..PHASE_WIDTH + QUEUE_WIDTH].copy_from_slice(&queue_block(obs));
    out[PHASE_WIDTH + QUEUE_WIDTH..].copy_from_slice(&obs.topology.one_hot());
    out
}

pub fn local_reward(obs: &IntersectionObservation) -> f64 {
    -normalized_queue(obs)
}

pub fn composite_reward(local: f64, regional: f64, weights: &RewardWeights) -> f64 {
    weights.rho_loc * local + weights.rho_reg * regional
}

/// Vehicles present minus halted on the vertical and horizontal approaches.
pub fn advancing_counts(obs: &IntersectionObservation) -> [f64; 2] {
    let mut out = [0u32; 2];
    for side in Side::ALL {
        for m in Movement::ALL {
            if let Some(g) = obs.group(side, m) {
                out[if side.is_vertical() { 0 } else { 1 }] += g.present - g.halted;
            }
        }
    }
    [out[0] as f64, out[1] as f64]
}

/// Neighbor slot contents for the OneHop block.
fn onehop_slot(neighbor: &IntersectionObservation, now: f64) -> [f64; ONEHOP_SLOT_WIDTH] {
    let mut out = [0.0; ONEHOP_SLOT_WIDTH];
    out[..PHASE_WIDTH].copy_from_slice(&phase_one_hot(neighbor));
    out[PHASE_WIDTH] = (neighbor.next_decision - now).max(0.0) / DELTA_T_SCALE;
    out[PHASE_WIDTH + 1..PHASE_WIDTH + 1 + QUEUE_WIDTH].copy_from_slice(&queue_block(neighbor));
    out[PHASE_WIDTH + 1 + QUEUE_WIDTH..].copy_from_slice(&neighbor.topology.one_hot());
    out
}

/// Four neighbor slots in N, E, S, W order (zero when the neighbor is
/// absent or outside the region), then `[N_vert, N_hor]` of the
/// intersection itself.
pub fn onehop_state(own: &IntersectionObservation, neighbors: [Option<&IntersectionObservation>; 4]) -> [f64; ONEHOP_WIDTH] {
    let mut out = [0.0; ONEHOP_WIDTH];
    for (k, n) in neighbors.iter().enumerate() {
        if let Some(n) = n {
            out[k * ONEHOP_SLOT_WIDTH..(k + 1) * ONEHOP_SLOT_WIDTH].copy_from_slice(&onehop_slot(n, own.time));
        }
    }
    out[4 * ONEHOP_SLOT_WIDTH..].copy_from_slice(&advancing_counts(own));
    out
}

pub fn onehop_reward(neighbors: [Option<&IntersectionObservation>; 4]) -> f64 {
    -neighbors.iter().flatten().map(|n| normalized_queue(n)).sum::<f64>()
}

/// In-region one-hop neighbors of `node` in N, E, S, W order.
pub fn region_neighbors(net: &RoadNetwork, partition: &RegionPartition, node: NodeId) -> [Option<NodeId>; 4] {
    net.intersections[node].neighbors.map(|n| n.filter(|&j| partition.same_region(node, j)))
}

/// 1 for each direction whose leg leads outside the region (another
/// region, an unsignalized intersection or the network edge); 0 for
/// in-region neighbors and for missing legs.
pub fn boundary_indicators(net: &RoadNetwork, partition: &RegionPartition, node: NodeId) -> [f64; 4] {
    let inter = &net.intersections[node];
    let mut out = [0.0; 4];
    for side in Side::ALL {
        let Some(link) = inter.outbound[side.index()] else { continue };
        let inside = match net.links[link].to {
            Endpoint::Node(j) => partition.same_region(node, j),
            Endpoint::Boundary(_) => false,
        };
        if !inside {
            out[side.index()] = 1.0;
        }
    }
    out
}

/// Whole-region aggregates at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSummary {
    pub time: f64,
    /// Fraction of members whose green serves each phase logic.
    pub phase_share: [f64; 4],
    pub mean_queue: [f64; QUEUE_WIDTH],
    /// Fraction of member approaches with more than the threshold halted.
    pub spillback: f64,
    /// Fraction of members in clearance.
    pub switching: f64,
    /// Mean normalized total queue over members.
    pub queue_mean: f64,
    /// Net change of vehicles on boundary links per second.
    pub exchange: f64,
}

impl RegionSummary {
    /// Aggregate member observations; `exchange` is supplied by the caller.
    pub fn from_members(members: &[&IntersectionObservation], exchange: f64) -> Self {
        let n = members.len().max(1) as f64;
        let mut phase_share = [0.0; 4];
        let mut mean_queue = [0.0; QUEUE_WIDTH];
        let mut approaches = 0u32;
        let mut spilled = 0u32;
        let mut switching = 0.0;
        let mut queue_mean = 0.0;
        for obs in members {
            if let (Some(a), false) = (obs.current_phase, obs.in_clearance) {
                phase_share[a.logic.index()] += 1.0;
            }
            if obs.in_clearance {
                switching += 1.0;
            }
            for (acc, q) in mean_queue.iter_mut().zip(queue_block(obs)) {
                *acc += q;
            }
            queue_mean += normalized_queue(obs);
            for side in Side::ALL {
                if let Some(h) = obs.approach_halted(side) {
                    approaches += 1;
                    if h > SPILLBACK_THRESHOLD {
                        spilled += 1;
                    }
                }
            }
        }
        RegionSummary {
            time: members.first().map_or(0.0, |o| o.time),
            phase_share: phase_share.map(|x| x / n),
            mean_queue: mean_queue.map(|x| x / n),
            spillback: ratio(spilled, approaches),
            switching: switching / n,
            queue_mean: queue_mean / n,
            exchange,
        }
    }
}

/// `[phase share (4), mean queue block (4), spillback, exchange, boundary indicators (4)]`.
pub fn regionwide_state(summary: &RegionSummary, boundary: [f64; 4]) -> [f64; REGIONWIDE_WIDTH] {
    let mut out = [0.0; REGIONWIDE_WIDTH];
    out[..4].copy_from_slice(&summary.phase_share);
    out[4..8].copy_from_slice(&summary.mean_queue);
    out[8] = summary.spillback;
    out[9] = summary.exchange;
    out[10..].copy_from_slice(&boundary);
    out
}

/// Exponential moving average seeded with its first observation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Ema {
    pub factor: f64,
    value: Option<f64>,
}

impl Ema {
    pub fn new(factor: f64) -> Self {
        Ema { factor, value: None }
    }

    pub fn update(&mut self, x: f64) -> f64 {
        let v = match self.value {
            None => x,
            Some(prev) => self.factor * prev + (1.0 - self.factor) * x,
        };
        self.value = Some(v);
        v
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }
}

/// Smoothed spillback, switching and exchange terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothedTerms {
    pub queue_mean: f64,
    pub spillback: f64,
    pub switching: f64,
    pub exchange: f64,
}

/// `-queue_mean - l_spill * spillback - l_switch * switching + l_out * exchange`.
pub fn regionwide_reward(terms: &SmoothedTerms, lambda: [f64; 3]) -> f64 {
    -terms.queue_mean - lambda[0] * terms.spillback - lambda[1] * terms.switching + lambda[2] * terms.exchange
}

/// Per-region bookkeeping for the exchange flow and the smoothed reward terms.
#[derive(Clone, Debug)]
pub struct RegionMonitor {
    members: Vec<NodeId>,
    boundary_links: Vec<usize>,
    last_counts: Vec<u32>,
    last_snapshot: Option<f64>,
    exchange: f64,
    ema: [Ema; 3],
    cached: Option<(RegionSummary, SmoothedTerms)>,
}

impl RegionMonitor {
    pub fn new(net: &RoadNetwork, partition: &RegionPartition, region: usize, ema_factor: f64) -> Self {
        RegionMonitor {
            members: partition.regions[region].clone(),
            boundary_links: partition.boundary_links(net, region),
            last_counts: Vec::new(),
            last_snapshot: None,
            exchange: 0.0,
            ema: [Ema::new(ema_factor); 3],
            cached: None,
        }
    }

    /// Summary and smoothed terms at the simulator's current time, computed
    /// once per distinct time.
    pub fn update(&mut self, sim: &Simulation, observations: &[Option<IntersectionObservation>]) -> (&RegionSummary, &SmoothedTerms) {
        let t = sim.clock();
        if self.cached.as_ref().map(|(s, _)| s.time) != Some(t) {
            let counts: Vec<u32> = self.boundary_links.iter().map(|&l| sim.link_vehicles(l)).collect();
            match self.last_snapshot {
                Some(prev) if t > prev => {
                    let delta: i64 = counts.iter().zip(&self.last_counts).map(|(&a, &b)| a as i64 - b as i64).sum();
                    self.exchange = delta as f64 / (t - prev);
                }
                Some(_) => {}
                None => self.exchange = 0.0,
            }
            self.last_counts = counts;
            self.last_snapshot = Some(t);
            let members: Vec<&IntersectionObservation> =
                self.members.iter().map(|&n| observations[n].as_ref().expect("member observation")).collect();
            let mut summary = RegionSummary::from_members(&members, self.exchange);
            summary.time = t;
            let terms = SmoothedTerms {
                queue_mean: summary.queue_mean,
                spillback: self.ema[0].update(summary.spillback),
                switching: self.ema[1].update(summary.switching),
                exchange: self.ema[2].update(summary.exchange),
            };
            self.cached = Some((summary, terms));
        }
        let (s, terms) = self.cached.as_ref().expect("cached summary");
        (s, terms)
    }
}

/// Which encoder and reward a model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    FullyDecentralized,
    PartiallySemictde,
    Regionwide,
    Onehop,
}

impl ModelTag {
    pub fn parse(tag: &str) -> Result<ModelTag, AgentError> {
        match tag {
            "fully_decentralized" => Ok(ModelTag::FullyDecentralized),
            "partially_semictde" => Ok(ModelTag::PartiallySemictde),
            "regionwide" => Ok(ModelTag::Regionwide),
            "onehop" => Ok(ModelTag::Onehop),
            other => Err(AgentError::UnknownModel(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelTag::FullyDecentralized => "fully_decentralized",
            ModelTag::PartiallySemictde => "partially_semictde",
            ModelTag::Regionwide => "regionwide",
            ModelTag::Onehop => "onehop",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionalBlock {
    None,
    RegionWide,
    OneHop,
}

impl RegionalBlock {
    pub fn width(self) -> usize {
        match self {
            RegionalBlock::None => 0,
            RegionalBlock::RegionWide => REGIONWIDE_WIDTH,
            RegionalBlock::OneHop => ONEHOP_WIDTH,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sharing {
    PerIntersection,
    PerRegion,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub rho_loc: f64,
    pub rho_reg: f64,
    #[serde(default = "default_ema")]
    pub ema_factor: f64,
}

fn default_ema() -> f64 {
    0.9
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Variant {
    pub tag: ModelTag,
    pub regional: RegionalBlock,
    pub sharing: Sharing,
    pub weights: RewardWeights,
}

impl Variant {
    pub fn state_width(&self) -> usize {
        LOCAL_WIDTH + self.regional.width()
    }
}

pub fn baseline_variants(tag: ModelTag) -> Variant {
    let local_only = RewardWeights { rho_loc: 1.0, rho_reg: 0.0, ema_factor: default_ema() };
    match tag {
        ModelTag::FullyDecentralized => {
            Variant { tag, regional: RegionalBlock::None, sharing: Sharing::PerIntersection, weights: local_only }
        }
        ModelTag::PartiallySemictde => {
            Variant { tag, regional: RegionalBlock::None, sharing: Sharing::PerRegion, weights: local_only }
        }
        ModelTag::Regionwide => Variant {
            tag,
            regional: RegionalBlock::RegionWide,
            sharing: Sharing::PerRegion,
            weights: RewardWeights { rho_loc: 0.5, rho_reg: 0.5, ema_factor: default_ema() },
        },
        ModelTag::Onehop => Variant {
            tag,
            regional: RegionalBlock::OneHop,
            sharing: Sharing::PerRegion,
            weights: RewardWeights { rho_loc: 0.7, rho_reg: 0.3, ema_factor: default_ema() },
        },
    }
}

#[cfg(test)]
mod tests;
