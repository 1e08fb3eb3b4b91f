//! Deterministic event-driven mesoscopic traffic simulator.
//!
//! Vehicles cross a link at free-flow speed and then join the FIFO of the
//! lane group matching their next turn. A green lane group discharges one
//! vehicle per headway (`saturation_headway / lanes`); a discharge only
//! happens when the receiving lane group downstream has room, otherwise
//! the head vehicle stays put (spillback). Vehicles that reach an idle
//! green stop line with room downstream pass without stopping.
//!
//! Events at the same instant run in a fixed order: signal changes, then
//! discharges (by intersection, then lane index), then arrivals, then
//! injections, then metric samples. When a signal change leaves an
//! intersection waiting for a decision the simulator hands control back to
//! the caller before touching the rest of that instant.

mod demand;
mod metrics;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

pub use demand::{generate_demand, ArrivalLaw, FlowConfig, Trip, FULL_HORIZON};
pub use metrics::{compute_metrics, fmt_g6, EventLog, LogKind, LogRecord, MetricsReport, SamplePoint};

use crate::error::SimError;
use crate::netmodel::{
    IntersectionTopology, LaneGroup, LinkId, Movement, NodeId, PhaseAction, PhaseLogic, RoadNetwork, Side,
};

pub const DEFAULT_SATURATION_HEADWAY: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// m/s.
    pub free_flow_speed: f64,
    /// Seconds per vehicle per lane.
    pub saturation_headway: f64,
    /// Meters of storage per queued vehicle.
    pub vehicle_space: f64,
    /// Metric sampling cadence, seconds.
    pub sample_interval: f64,
    pub horizon: f64,
    #[serde(default)]
    pub record_log: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            free_flow_speed: 13.9,
            saturation_headway: DEFAULT_SATURATION_HEADWAY,
            vehicle_space: 7.5,
            sample_interval: 10.0,
            horizon: FULL_HORIZON,
            record_log: false,
        }
    }
}

/// One entry of the decision history of an intersection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub node: NodeId,
    pub time: f64,
    pub logic: PhaseLogic,
    /// Index in the global action space when the green matched a duration option.
    pub action: Option<usize>,
    pub green: f64,
    pub clearance: f64,
    pub next_decision: f64,
}

/// Raw per-intersection measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupObservation {
    /// Queued (stopped) vehicles.
    pub halted: u32,
    /// Queued plus still travelling on the approach toward this group.
    pub present: u32,
    pub lanes: u32,
    /// Per-lane storage of the approach.
    pub lane_capacity: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntersectionObservation {
    pub node: NodeId,
    pub time: f64,
    pub topology: IntersectionTopology,
    /// Indexed by `LaneGroup::index()`; `None` when the group does not exist.
    pub groups: [Option<GroupObservation>; 12],
    /// The action whose green is running or has just expired; `None` during
    /// clearance and before the first decision.
    pub current_phase: Option<PhaseAction>,
    pub in_clearance: bool,
    pub next_decision: f64,
}

impl IntersectionObservation {
    pub fn group(&self, side: Side, movement: Movement) -> Option<&GroupObservation> {
        self.groups[LaneGroup { side, movement }.index()].as_ref()
    }

    /// Total halted vehicles on the approach arriving from `side`.
    pub fn approach_halted(&self, side: Side) -> Option<u32> {
        let mut any = false;
        let mut total = 0;
        for m in Movement::ALL {
            if let Some(g) = self.group(side, m) {
                any = true;
                total += g.halted;
            }
        }
        any.then_some(total)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Signal {
    AwaitingDecision,
    Clearance { logic: PhaseLogic, green: f64 },
    Green { logic: PhaseLogic },
    Uncontrolled,
}

#[derive(Clone, Debug)]
struct NodeState {
    signal: Signal,
    last_logic: Option<PhaseLogic>,
    last_action: Option<PhaseAction>,
    next_decision: f64,
    /// Start of the current uninterrupted green of `last_logic`.
    green_since: f64,
    queued: u32,
}

#[derive(Clone, Debug)]
struct GroupState {
    node: NodeId,
    lane_index: usize,
    queue: VecDeque<usize>,
    green: bool,
    server_free_at: f64,
    discharge_pending: bool,
    generation: u32,
    lanes: u32,
    capacity: u32,
    /// Vehicles on the link bound for this group (travelling or queued).
    load: u32,
    last_arrival: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Place {
    Pending,
    Waiting,
    Travelling,
    Queued,
    Exited,
}

#[derive(Clone, Debug)]
struct VehicleState {
    route: Vec<LinkId>,
    origin: usize,
    pos: usize,
    entry_time: f64,
    exit_time: Option<f64>,
    wait: f64,
    queued_since: f64,
    place: Place,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    SignalChange { node: NodeId },
    Discharge { group: usize, generation: u32 },
    Arrival { vehicle: usize },
    Inject { vehicle: usize },
    Sample,
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    class: u8,
    key: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Reversed so that BinaryHeap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.class.cmp(&self.class))
            .then(other.key.cmp(&self.key))
            .then(other.seq.cmp(&self.seq))
    }
}

/// What one call to [`Simulation::step`] did.
#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    /// All events at this instant were processed.
    Advanced(f64),
    /// These intersections await a decision at this instant.
    Decision(f64),
    /// The horizon was reached.
    Finished,
}

pub struct Simulation<'n> {
    net: &'n RoadNetwork,
    params: SimParams,
    clock: f64,
    seq: u64,
    events: BinaryHeap<Event>,
    nodes: Vec<NodeState>,
    /// Indexed by `link * 3 + movement`; only links that end at a node are used.
    groups: Vec<GroupState>,
    vehicles: Vec<VehicleState>,
    /// Vehicles on links that end at the network edge.
    exit_load: Vec<u32>,
    backlog: Vec<VecDeque<usize>>,
    due: Vec<NodeId>,
    entered: usize,
    exited: usize,
    queued_total: usize,
    // Running sums for the instantaneous waiting-time sample.
    wait_in_network: f64,
    queued_since_sum: f64,
    decisions: Vec<DecisionRecord>,
    samples: Vec<SamplePoint>,
    sample_queue_total: u64,
    node_queue_sums: Vec<u64>,
    log: Option<Vec<LogRecord>>,
    finished: bool,
}

impl<'n> Simulation<'n> {
    pub fn new(net: &'n RoadNetwork, trips: Vec<Trip>, params: SimParams) -> Result<Self, SimError> {
        if !(params.horizon > 0.0 && params.sample_interval > 0.0 && params.saturation_headway > 0.0) {
            return Err(SimError::InvalidFlow("horizon, sample interval and headway must be positive".into()));
        }
        let nodes = net
            .intersections
            .iter()
            .map(|i| NodeState {
                signal: if i.signalized { Signal::AwaitingDecision } else { Signal::Uncontrolled },
                last_logic: None,
                last_action: None,
                next_decision: 0.0,
                green_since: 0.0,
                queued: 0,
            })
            .collect();

        let mut groups = Vec::with_capacity(net.links.len() * 3);
        for link in &net.links {
            for m in Movement::ALL {
                let (node, lane_index, exists) = match (link.to_node(), link.arrive_side) {
                    (Some(n), Some(side)) => {
                        let g = LaneGroup { side, movement: m };
                        (n, g.index(), net.intersections[n].topology.has_group(g))
                    }
                    _ => (usize::MAX, 0, false),
                };
                let lanes = link.group_lanes(m);
                let uncontrolled = exists && !net.intersections[node].signalized;
                groups.push(GroupState {
                    node,
                    lane_index,
                    queue: VecDeque::new(),
                    green: uncontrolled,
                    server_free_at: 0.0,
                    discharge_pending: false,
                    generation: 0,
                    lanes,
                    capacity: if exists { net.lane_capacity(link.id, params.vehicle_space) * lanes } else { 0 },
                    load: 0,
                    last_arrival: None,
                });
            }
        }

        let mut sim = Simulation {
            net,
            clock: 0.0,
            seq: 0,
            events: BinaryHeap::new(),
            nodes,
            groups,
            vehicles: Vec::with_capacity(trips.len()),
            exit_load: vec![0; net.links.len()],
            backlog: vec![VecDeque::new(); net.boundaries.len()],
            due: net.signalized_ids(),
            entered: 0,
            exited: 0,
            queued_total: 0,
            wait_in_network: 0.0,
            queued_since_sum: 0.0,
            decisions: Vec::new(),
            samples: Vec::new(),
            sample_queue_total: 0,
            node_queue_sums: vec![0; net.num_nodes()],
            log: params.record_log.then(Vec::new),
            finished: false,
            params,
        };
        for (v, trip) in trips.into_iter().enumerate() {
            if trip.route.is_empty() || trip.origin >= net.boundaries.len() {
                return Err(SimError::InvalidFlow(format!("trip {v} has no usable route")));
            }
            if trip.entry_time < sim.params.horizon {
                sim.schedule(trip.entry_time, 3, v as u64, EventKind::Inject { vehicle: v });
            }
            sim.vehicles.push(VehicleState {
                route: trip.route,
                origin: trip.origin,
                pos: 0,
                entry_time: f64::NAN,
                exit_time: None,
                wait: 0.0,
                queued_since: 0.0,
                place: Place::Pending,
            });
        }
        let mut k = 0u64;
        loop {
            let t = k as f64 * sim.params.sample_interval;
            if t >= sim.params.horizon {
                break;
            }
            sim.schedule(t, 4, 0, EventKind::Sample);
            k += 1;
        }
        Ok(sim)
    }

    pub fn network(&self) -> &'n RoadNetwork {
        self.net
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Intersections awaiting a decision at the current instant, by id.
    pub fn due(&self) -> &[NodeId] {
        &self.due
    }

    pub fn decisions(&self) -> &[DecisionRecord] {
        &self.decisions
    }

    pub fn entered(&self) -> usize {
        self.entered
    }

    pub fn exited(&self) -> usize {
        self.exited
    }

    pub fn in_network(&self) -> usize {
        self.entered - self.exited
    }

    pub fn next_decision(&self, node: NodeId) -> f64 {
        self.nodes[node].next_decision
    }

    pub fn in_clearance(&self, node: NodeId) -> bool {
        matches!(self.nodes[node].signal, Signal::Clearance { .. })
    }

    pub fn last_logic(&self, node: NodeId) -> Option<PhaseLogic> {
        self.nodes[node].last_logic
    }

    /// Seconds the current logic has been green without interruption.
    pub fn green_elapsed(&self, node: NodeId) -> f64 {
        self.clock - self.nodes[node].green_since
    }

    /// Latest time a vehicle reached the stop line of a group served by `logic`.
    pub fn last_arrival(&self, node: NodeId, logic: PhaseLogic) -> Option<f64> {
        self.served_group_ids(node, logic)
            .filter_map(|g| self.groups[g].last_arrival)
            .reduce(f64::max)
    }

    /// Queued vehicles on groups served by `logic`.
    pub fn served_queue(&self, node: NodeId, logic: PhaseLogic) -> u32 {
        self.served_group_ids(node, logic).map(|g| self.groups[g].queue.len() as u32).sum()
    }

    /// Total queued vehicles on all approaches of a node.
    pub fn node_queue(&self, node: NodeId) -> u32 {
        self.nodes[node].queued
    }

    /// Sum over metric samples of the node's total queue, and the sample count.
    pub fn queue_sample_sums(&self) -> (&[u64], usize) {
        (&self.node_queue_sums, self.samples.len())
    }

    pub fn samples(&self) -> &[SamplePoint] {
        &self.samples
    }

    fn served_group_ids(&self, node: NodeId, logic: PhaseLogic) -> impl Iterator<Item = usize> + '_ {
        let inter = &self.net.intersections[node];
        logic.served_groups().into_iter().filter_map(move |g| {
            if !inter.topology.has_group(g) {
                return None;
            }
            inter.inbound[g.side.index()].map(|l| l * 3 + g.movement.index())
        })
    }

    fn schedule(&mut self, time: f64, class: u8, key: u64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Event { time, class, key, seq: self.seq, kind });
    }

    fn record(&mut self, kind: LogKind, vehicle: Option<usize>, node: Option<NodeId>, group: Option<usize>, action: Option<usize>) {
        if let Some(log) = self.log.as_mut() {
            log.push(LogRecord {
                t: self.clock,
                kind,
                vehicle: vehicle.map(|v| v as u32),
                node: node.map(|n| n as u32),
                group: group.map(|g| (g + 1) as u8),
                action: action.map(|a| a as u8),
            });
        }
    }

    /// Process the next instant. Returns `Decision` (without processing the
    /// rest of the instant) when intersections need a decision.
    pub fn step(&mut self) -> Result<StepOutcome, SimError> {
        if !self.due.is_empty() {
            return Ok(StepOutcome::Decision(self.clock));
        }
        if self.finished {
            return Ok(StepOutcome::Finished);
        }
        let Some(next) = self.events.peek().copied() else {
            if self.in_network() > 0 && self.clock < self.params.horizon {
                return Err(SimError::Deadlock { time: self.clock, in_network: self.in_network() });
            }
            self.finish();
            return Ok(StepOutcome::Finished);
        };
        if next.time >= self.params.horizon {
            self.finish();
            return Ok(StepOutcome::Finished);
        }
        debug_assert!(next.time >= self.clock, "event out of order");
        let t = next.time;
        self.clock = t;
        while let Some(ev) = self.events.peek().copied() {
            if ev.time != t {
                break;
            }
            if ev.class > 0 && !self.due.is_empty() {
                return Ok(StepOutcome::Decision(t));
            }
            self.events.pop();
            self.handle(ev.kind);
        }
        if !self.due.is_empty() {
            return Ok(StepOutcome::Decision(t));
        }
        Ok(StepOutcome::Advanced(t))
    }

    /// Run until some intersection needs a decision (returns its time) or
    /// the horizon is reached (returns `None`).
    pub fn advance_to_decision(&mut self) -> Result<Option<f64>, SimError> {
        loop {
            match self.step()? {
                StepOutcome::Decision(t) => return Ok(Some(t)),
                StepOutcome::Finished => return Ok(None),
                StepOutcome::Advanced(_) => {}
            }
        }
    }

    fn finish(&mut self) {
        if !self.finished {
            self.finished = true;
            self.clock = self.params.horizon;
        }
    }

    fn handle(&mut self, kind: EventKind) {
        match kind {
            EventKind::SignalChange { node } => self.on_signal_change(node),
            EventKind::Discharge { group, generation } => self.on_discharge(group, generation),
            EventKind::Arrival { vehicle } => self.on_arrival(vehicle),
            EventKind::Inject { vehicle } => self.on_inject(vehicle),
            EventKind::Sample => self.on_sample(),
        }
    }

    /// Execute `action` at an intersection awaiting a decision.
    pub fn apply_phase(&mut self, node: NodeId, action: PhaseAction) -> Result<f64, SimError> {
        let inter = &self.net.intersections[node];
        if !inter.admissible.contains(action.index()) {
            return Err(SimError::InadmissibleAction { node, action: action.index() });
        }
        let green = self.net.timing.green(action);
        self.start_phase(node, action.logic, green, Some(action))
    }

    /// Execute an arbitrary green length for `logic` (rule-based controllers).
    /// Returns the scheduled next decision time.
    pub fn apply_green(&mut self, node: NodeId, logic: PhaseLogic, green: f64) -> Result<f64, SimError> {
        if !(green > 0.0 && green.is_finite()) {
            return Err(SimError::InvalidGreen(green));
        }
        let inter = &self.net.intersections[node];
        if !inter.admissible.logics().any(|l| l == logic) {
            return Err(SimError::InadmissibleAction { node, action: logic.index() * 2 });
        }
        let timing = self.net.timing;
        let action = [timing.g_short, timing.g_long]
            .iter()
            .position(|&g| g == green)
            .map(|d| logic.index() * 2 + d);
        self.start_phase(node, logic, green, action.map(PhaseAction::from_index))
    }

    fn start_phase(&mut self, node: NodeId, logic: PhaseLogic, green: f64, action: Option<PhaseAction>) -> Result<f64, SimError> {
        if !self.net.intersections[node].signalized {
            return Err(SimError::NotSignalized(node));
        }
        let Some(pos) = self.due.iter().position(|&n| n == node) else {
            return Err(SimError::NotAtDecision { node, time: self.clock });
        };
        self.due.remove(pos);

        let t = self.clock;
        let clearance = self.net.timing.clearance_cost(self.nodes[node].last_logic, logic);
        let next = t + clearance + green;
        {
            let st = &mut self.nodes[node];
            st.next_decision = next;
            st.last_action = action;
        }
        self.decisions.push(DecisionRecord {
            node,
            time: t,
            logic,
            action: action.map(|a| a.index()),
            green,
            clearance,
            next_decision: next,
        });
        self.record(LogKind::Decision, None, Some(node), None, action.map(|a| a.index()));

        if clearance > 0.0 {
            self.set_red(node);
            self.nodes[node].signal = Signal::Clearance { logic, green };
            self.schedule(t + clearance, 0, node as u64, EventKind::SignalChange { node });
        } else {
            self.start_green(node, logic, green);
        }
        Ok(next)
    }

    fn set_red(&mut self, node: NodeId) {
        for side in Side::ALL {
            if let Some(l) = self.net.intersections[node].inbound[side.index()] {
                for m in 0..3 {
                    let g = &mut self.groups[l * 3 + m];
                    if g.green {
                        g.green = false;
                        g.generation += 1;
                        g.discharge_pending = false;
                    }
                }
            }
        }
    }

    fn start_green(&mut self, node: NodeId, logic: PhaseLogic, green: f64) {
        let t = self.clock;
        let continuing = self.nodes[node].last_logic == Some(logic);
        let served: Vec<usize> = self.served_group_ids(node, logic).collect();
        for side in Side::ALL {
            if let Some(l) = self.net.intersections[node].inbound[side.index()] {
                for m in 0..3 {
                    let gid = l * 3 + m;
                    let on = served.contains(&gid);
                    let g = &mut self.groups[gid];
                    if on && !g.green {
                        g.green = true;
                        g.server_free_at = if g.queue.is_empty() { t } else { t + self.params.saturation_headway / g.lanes as f64 };
                        self.ensure_discharge(gid);
                    } else if !on && g.green {
                        g.green = false;
                        g.generation += 1;
                        g.discharge_pending = false;
                    }
                }
            }
        }
        let st = &mut self.nodes[node];
        if !continuing {
            st.green_since = t;
        }
        st.last_logic = Some(logic);
        st.signal = Signal::Green { logic };
        self.schedule(t + green, 0, node as u64, EventKind::SignalChange { node });
    }

    fn on_signal_change(&mut self, node: NodeId) {
        match self.nodes[node].signal {
            Signal::Clearance { logic, green } => self.start_green(node, logic, green),
            Signal::Green { .. } => {
                self.nodes[node].signal = Signal::AwaitingDecision;
                self.due.push(node);
                self.due.sort_unstable();
            }
            Signal::AwaitingDecision | Signal::Uncontrolled => {}
        }
    }

    /// Schedule the next service slot of a green, non-empty group.
    fn ensure_discharge(&mut self, gid: usize) {
        let g = &self.groups[gid];
        if !g.green || g.queue.is_empty() || g.discharge_pending {
            return;
        }
        let at = g.server_free_at.max(self.clock);
        let key = (g.node * 12 + g.lane_index) as u64;
        let generation = g.generation;
        self.groups[gid].discharge_pending = true;
        self.schedule(at, 1, key, EventKind::Discharge { group: gid, generation });
    }

    /// Group a vehicle will join on link `route[pos]`, if that link ends at a node.
    fn target_group(&self, vehicle: usize, pos: usize) -> Option<usize> {
        let v = &self.vehicles[vehicle];
        let link = *v.route.get(pos)?;
        let next = *v.route.get(pos + 1)?;
        let g = self.net.turn_group(link, next)?;
        Some(link * 3 + g.movement.index())
    }

    fn has_room(&self, vehicle: usize, pos: usize) -> bool {
        match self.target_group(vehicle, pos) {
            Some(g) => self.groups[g].load < self.groups[g].capacity,
            None => true,
        }
    }

    /// Put a vehicle on `route[pos]` at the current time.
    fn enter_link(&mut self, vehicle: usize, pos: usize) {
        let link = self.vehicles[vehicle].route[pos];
        match self.target_group(vehicle, pos) {
            Some(g) => self.groups[g].load += 1,
            None => self.exit_load[link] += 1,
        }
        let travel = self.net.links[link].length / self.params.free_flow_speed;
        let v = &mut self.vehicles[vehicle];
        v.pos = pos;
        v.place = Place::Travelling;
        self.schedule(self.clock + travel, 2, vehicle as u64, EventKind::Arrival { vehicle });
    }

    fn leave_group(&mut self, vehicle: usize, gid: usize) {
        self.groups[gid].load -= 1;
        let pos = self.vehicles[vehicle].pos;
        self.enter_link(vehicle, pos + 1);
        // Room opened on this link: let waiting vehicles in if it is an entry.
        let link = gid / 3;
        if let crate::netmodel::Endpoint::Boundary(b) = self.net.links[link].from {
            self.try_admit(b);
        }
    }

    fn on_discharge(&mut self, gid: usize, generation: u32) {
        {
            let g = &mut self.groups[gid];
            if g.generation != generation || !g.green {
                return;
            }
            g.discharge_pending = false;
        }
        let Some(&head) = self.groups[gid].queue.front() else {
            return;
        };
        let headway = self.params.saturation_headway / self.groups[gid].lanes as f64;
        let pos = self.vehicles[head].pos;
        if self.has_room(head, pos + 1) {
            self.groups[gid].queue.pop_front();
            let node = self.groups[gid].node;
            self.nodes[node].queued -= 1;
            self.queued_total -= 1;
            let waited = self.clock - self.vehicles[head].queued_since;
            self.vehicles[head].wait += waited;
            self.wait_in_network += waited;
            self.queued_since_sum -= self.vehicles[head].queued_since;
            let lane = self.groups[gid].lane_index;
            self.record(LogKind::Depart, Some(head), Some(node), Some(lane), None);
            self.groups[gid].server_free_at = self.clock + headway;
            self.leave_group(head, gid);
        } else {
            self.groups[gid].server_free_at = self.clock + headway;
        }
        self.ensure_discharge(gid);
    }

    fn on_arrival(&mut self, vehicle: usize) {
        let pos = self.vehicles[vehicle].pos;
        let link = self.vehicles[vehicle].route[pos];
        let Some(gid) = self.target_group(vehicle, pos) else {
            // End of an exit link.
            self.exit_load[link] -= 1;
            let v = &mut self.vehicles[vehicle];
            v.place = Place::Exited;
            v.exit_time = Some(self.clock);
            self.exited += 1;
            self.wait_in_network -= self.vehicles[vehicle].wait;
            self.record(LogKind::Exit, Some(vehicle), None, None, None);
            return;
        };
        debug_assert_eq!(gid / 3, link);
        let t = self.clock;
        let node = self.groups[gid].node;
        let lane = self.groups[gid].lane_index;
        self.groups[gid].last_arrival = Some(t);
        let g = &self.groups[gid];
        let free = g.green && g.queue.is_empty() && t >= g.server_free_at;
        if free && self.has_room(vehicle, pos + 1) {
            self.groups[gid].server_free_at = t + self.params.saturation_headway / self.groups[gid].lanes as f64;
            self.record(LogKind::Pass, Some(vehicle), Some(node), Some(lane), None);
            self.leave_group(vehicle, gid);
            return;
        }
        let v = &mut self.vehicles[vehicle];
        v.place = Place::Queued;
        v.queued_since = t;
        self.queued_since_sum += t;
        self.queued_total += 1;
        self.nodes[node].queued += 1;
        self.groups[gid].queue.push_back(vehicle);
        self.record(LogKind::Queue, Some(vehicle), Some(node), Some(lane), None);
        if free {
            // Green and idle but blocked downstream: retry after one headway.
            self.groups[gid].server_free_at = t + self.params.saturation_headway / self.groups[gid].lanes as f64;
        }
        self.ensure_discharge(gid);
    }

    fn on_inject(&mut self, vehicle: usize) {
        let b = self.vehicles[vehicle].origin;
        self.vehicles[vehicle].place = Place::Waiting;
        self.backlog[b].push_back(vehicle);
        self.try_admit(b);
    }

    fn try_admit(&mut self, boundary: usize) {
        while let Some(&v) = self.backlog[boundary].front() {
            if !self.has_room(v, 0) {
                break;
            }
            self.backlog[boundary].pop_front();
            self.entered += 1;
            self.vehicles[v].entry_time = self.clock;
            self.record(LogKind::Enter, Some(v), None, None, None);
            self.enter_link(v, 0);
        }
    }

    fn on_sample(&mut self) {
        let t = self.clock;
        let mut total = 0u64;
        let mut count = 0u64;
        for (i, st) in self.nodes.iter().enumerate() {
            self.node_queue_sums[i] += st.queued as u64;
            if self.net.intersections[i].signalized {
                total += st.queued as u64;
                count += 1;
            }
        }
        self.sample_queue_total += total;
        let in_net = self.in_network();
        let awt = if in_net == 0 {
            0.0
        } else {
            let w = self.wait_in_network + self.queued_total as f64 * t - self.queued_since_sum;
            (w / in_net as f64).max(0.0)
        };
        let aql = if count == 0 { 0.0 } else { total as f64 / count as f64 };
        self.samples.push(SamplePoint { t, aql, awt });
        self.record(LogKind::Sample, None, None, None, None);
    }

    /// Raw measurements around an intersection.
    pub fn observe(&self, node: NodeId) -> IntersectionObservation {
        let inter = &self.net.intersections[node];
        let mut groups: [Option<GroupObservation>; 12] = Default::default();
        for side in Side::ALL {
            let Some(l) = inter.inbound[side.index()] else { continue };
            let lane_capacity = self.net.lane_capacity(l, self.params.vehicle_space);
            for m in Movement::ALL {
                let lg = LaneGroup { side, movement: m };
                if !inter.topology.has_group(lg) {
                    continue;
                }
                let g = &self.groups[l * 3 + m.index()];
                groups[lg.index()] = Some(GroupObservation {
                    halted: g.queue.len() as u32,
                    present: g.load,
                    lanes: g.lanes,
                    lane_capacity,
                });
            }
        }
        let st = &self.nodes[node];
        let (current_phase, in_clearance) = match st.signal {
            Signal::Clearance { .. } => (None, true),
            Signal::Uncontrolled => (None, false),
            _ => (st.last_action, false),
        };
        IntersectionObservation {
            node,
            time: self.clock,
            topology: inter.topology,
            groups,
            current_phase,
            in_clearance,
            next_decision: st.next_decision,
        }
    }

    /// Vehicles currently on a link (travelling or queued).
    pub fn link_vehicles(&self, link: LinkId) -> u32 {
        (0..3).map(|m| self.groups[link * 3 + m].load).sum::<u32>() + self.exit_load[link]
    }

    /// Count vehicles by location and check them against the counters and
    /// queue capacities. Used by tests at event boundaries.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut travelling = 0;
        let mut queued = 0;
        let mut exited = 0;
        for v in &self.vehicles {
            match v.place {
                Place::Travelling => travelling += 1,
                Place::Queued => queued += 1,
                Place::Exited => exited += 1,
                Place::Pending | Place::Waiting => {}
            }
        }
        if exited != self.exited {
            return Err(format!("exited counter {} != {}", self.exited, exited));
        }
        if self.entered != self.exited + travelling + queued {
            return Err(format!(
                "conservation broken: entered {} exited {} travelling {} queued {}",
                self.entered, self.exited, travelling, queued
            ));
        }
        let in_queues: usize = self.groups.iter().map(|g| g.queue.len()).sum();
        if in_queues != queued || queued != self.queued_total {
            return Err(format!("queue bookkeeping: {in_queues} in queues, {queued} marked, {} counted", self.queued_total));
        }
        for (i, g) in self.groups.iter().enumerate() {
            if g.queue.len() as u32 > g.capacity || g.load > g.capacity {
                return Err(format!("group {i} over capacity: queue {} load {} cap {}", g.queue.len(), g.load, g.capacity));
            }
        }
        Ok(())
    }

    /// Online metrics over completed trips and the samples taken so far.
    pub fn report(&self) -> Result<MetricsReport, SimError> {
        let done: Vec<&VehicleState> = self.vehicles.iter().filter(|v| v.exit_time.is_some()).collect();
        if done.is_empty() {
            return Err(SimError::EmptyTripSet);
        }
        let n = done.len() as f64;
        let awt = done.iter().map(|v| v.wait).sum::<f64>() / n;
        let att = done.iter().map(|v| v.exit_time.unwrap() - v.entry_time).sum::<f64>() / n;
        let signalized = self.net.signalized().count() as u64;
        let k = self.samples.len() as u64;
        let aql = if signalized == 0 || k == 0 { 0.0 } else { self.sample_queue_total as f64 / (signalized * k) as f64 };
        Ok(MetricsReport {
            awt,
            att,
            aql,
            completed: done.len(),
            entered: self.entered,
            time_series: self.samples.clone(),
            wait_times: done.iter().map(|v| v.wait).collect(),
        })
    }

    /// Snapshot of the raw event log (empty unless `record_log` was set).
    pub fn event_log(&self) -> EventLog {
        EventLog {
            horizon: self.params.horizon,
            signalized: self.net.signalized_ids(),
            records: self.log.clone().unwrap_or_default(),
        }
    }

    pub fn take_event_log(&mut self) -> EventLog {
        EventLog {
            horizon: self.params.horizon,
            signalized: self.net.signalized_ids(),
            records: self.log.take().unwrap_or_default(),
        }
    }
}
