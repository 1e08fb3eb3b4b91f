//! Static road network: grid intersections, directed links, lane groups,
//! the global phase action space and per-intersection admissible sets.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::NetworkError;

pub type NodeId = usize;
pub type LinkId = usize;

/// Size of the global action space (4 phase logics x 2 durations).
pub const NUM_ACTIONS: usize = 8;

/// Compass side of an intersection. Index order N, E, S, W is used
/// everywhere a fixed directional layout is needed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    North,
    East,
    South,
    West,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::North, Side::East, Side::South, Side::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Side {
        Side::ALL[i % 4]
    }

    pub fn opposite(self) -> Side {
        Side::from_index(self.index() + 2)
    }

    pub fn is_vertical(self) -> bool {
        matches!(self, Side::North | Side::South)
    }
}

/// Turning movement of a vehicle that arrives on some approach.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Movement {
    Right,
    Through,
    Left,
}

impl Movement {
    pub const ALL: [Movement; 3] = [Movement::Right, Movement::Through, Movement::Left];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Side through which a vehicle arriving from `from` leaves the node.
    pub fn exit_side(self, from: Side) -> Side {
        match self {
            Movement::Right => Side::from_index(from.index() + 3),
            Movement::Through => Side::from_index(from.index() + 2),
            Movement::Left => Side::from_index(from.index() + 1),
        }
    }

    /// Movement connecting an arrival side to an exit side; `None` for a U-turn.
    pub fn between(from: Side, to: Side) -> Option<Movement> {
        Movement::ALL.into_iter().find(|m| m.exit_side(from) == to)
    }
}

/// A lane group: one movement on the approach arriving from `side`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LaneGroup {
    pub side: Side,
    pub movement: Movement,
}

impl LaneGroup {
    /// Lane index 1..=12 of the standard four-leg layout: per approach
    /// (N, E, S, W) the right, through and left lanes in that order.
    pub fn lane_id(self) -> u8 {
        (self.side.index() * 3 + self.movement.index() + 1) as u8
    }

    pub fn from_lane_id(id: u8) -> LaneGroup {
        assert!((1..=12).contains(&id), "lane id out of range: {id}");
        let k = (id - 1) as usize;
        LaneGroup {
            side: Side::from_index(k / 3),
            movement: Movement::ALL[k % 3],
        }
    }

    /// Flat index 0..12 (same order as `lane_id`).
    pub fn index(self) -> usize {
        self.lane_id() as usize - 1
    }
}

/// Intersection geometry. Declaration order matches the spatial one-hot
/// layout: west, east, south, north blocked, then four-way.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntersectionTopology {
    TWestBlocked,
    TEastBlocked,
    TSouthBlocked,
    TNorthBlocked,
    Cross4,
}

impl IntersectionTopology {
    pub const ALL: [IntersectionTopology; 5] = [
        IntersectionTopology::TWestBlocked,
        IntersectionTopology::TEastBlocked,
        IntersectionTopology::TSouthBlocked,
        IntersectionTopology::TNorthBlocked,
        IntersectionTopology::Cross4,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn one_hot(self) -> [f64; 5] {
        let mut v = [0.0; 5];
        v[self.index()] = 1.0;
        v
    }

    pub fn missing_side(self) -> Option<Side> {
        match self {
            IntersectionTopology::TWestBlocked => Some(Side::West),
            IntersectionTopology::TEastBlocked => Some(Side::East),
            IntersectionTopology::TSouthBlocked => Some(Side::South),
            IntersectionTopology::TNorthBlocked => Some(Side::North),
            IntersectionTopology::Cross4 => None,
        }
    }

    pub fn has_leg(self, side: Side) -> bool {
        self.missing_side() != Some(side)
    }

    /// Classify from the set of present legs (indexed by `Side`).
    pub fn from_legs(present: [bool; 4]) -> Option<IntersectionTopology> {
        match present.iter().filter(|p| !**p).count() {
            0 => Some(IntersectionTopology::Cross4),
            1 => {
                let missing = Side::from_index(present.iter().position(|p| !p).unwrap());
                Some(match missing {
                    Side::West => IntersectionTopology::TWestBlocked,
                    Side::East => IntersectionTopology::TEastBlocked,
                    Side::South => IntersectionTopology::TSouthBlocked,
                    Side::North => IntersectionTopology::TNorthBlocked,
                })
            }
            _ => None,
        }
    }

    /// Whether the lane group physically exists: its approach is present
    /// and so is the leg it leads into.
    pub fn has_group(self, group: LaneGroup) -> bool {
        self.has_leg(group.side) && self.has_leg(group.movement.exit_side(group.side))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhaseLogic {
    NsS,
    NsL,
    EwS,
    EwL,
}

/// Lanes receiving green under each logic, by lane id.
const SERVED_LANES: [[u8; 4]; 4] = [[1, 2, 7, 8], [1, 3, 7, 9], [4, 5, 10, 11], [4, 6, 10, 12]];

impl PhaseLogic {
    pub const ALL: [PhaseLogic; 4] = [PhaseLogic::NsS, PhaseLogic::NsL, PhaseLogic::EwS, PhaseLogic::EwL];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn served_lane_ids(self) -> [u8; 4] {
        SERVED_LANES[self.index()]
    }

    pub fn served_groups(self) -> [LaneGroup; 4] {
        self.served_lane_ids().map(LaneGroup::from_lane_id)
    }

    pub fn serves(self, group: LaneGroup) -> bool {
        self.served_lane_ids().contains(&group.lane_id())
    }

    /// The movement this logic exists for (through or protected left).
    pub fn primary_movement(self) -> Movement {
        match self {
            PhaseLogic::NsS | PhaseLogic::EwS => Movement::Through,
            PhaseLogic::NsL | PhaseLogic::EwL => Movement::Left,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PhaseLogic::NsS => "NS_S",
            PhaseLogic::NsL => "NS_L",
            PhaseLogic::EwS => "EW_S",
            PhaseLogic::EwL => "EW_L",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GreenDuration {
    Short,
    Long,
}

/// One of the eight concrete actions of the global action space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhaseAction {
    pub logic: PhaseLogic,
    pub duration: GreenDuration,
}

impl PhaseAction {
    pub fn new(logic: PhaseLogic, duration: GreenDuration) -> Self {
        PhaseAction { logic, duration }
    }

    /// Index in the global action space: `2 * logic + duration`.
    pub fn index(self) -> usize {
        self.logic.index() * 2 + self.duration as usize
    }

    pub fn from_index(i: usize) -> PhaseAction {
        assert!(i < NUM_ACTIONS, "action index out of range: {i}");
        PhaseAction {
            logic: PhaseLogic::ALL[i / 2],
            duration: if i % 2 == 0 { GreenDuration::Short } else { GreenDuration::Long },
        }
    }

    pub fn all() -> impl Iterator<Item = PhaseAction> {
        (0..NUM_ACTIONS).map(PhaseAction::from_index)
    }

    pub fn one_hot(self) -> [f64; NUM_ACTIONS] {
        let mut v = [0.0; NUM_ACTIONS];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for PhaseAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match self.duration {
            GreenDuration::Short => "short",
            GreenDuration::Long => "long",
        };
        write!(f, "{} {}", self.logic.name(), d)
    }
}

/// Subset of the global action space, stored as a bit mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionSet(pub u8);

impl ActionSet {
    pub const FULL: ActionSet = ActionSet(0xff);

    pub fn empty() -> Self {
        ActionSet(0)
    }

    pub fn insert(&mut self, action: usize) {
        self.0 |= 1 << action;
    }

    pub fn contains(self, action: usize) -> bool {
        action < NUM_ACTIONS && self.0 & (1 << action) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..NUM_ACTIONS).filter(move |&a| self.contains(a))
    }

    pub fn logics(self) -> impl Iterator<Item = PhaseLogic> {
        PhaseLogic::ALL
            .into_iter()
            .filter(move |l| self.contains(l.index() * 2) || self.contains(l.index() * 2 + 1))
    }
}

impl FromIterator<usize> for ActionSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = ActionSet::empty();
        for a in iter {
            s.insert(a);
        }
        s
    }
}

/// Admissible actions for a topology. A logic is kept (with both
/// durations) when at least one lane group carrying its primary movement
/// exists. Right-turn lanes are shared between the two logics of an axis
/// and do not make a logic admissible on their own, but every existing
/// group stays served by some admissible logic.
pub fn admissible_actions(topology: IntersectionTopology) -> ActionSet {
    let mut set = ActionSet::empty();
    for logic in PhaseLogic::ALL {
        let feasible = logic
            .served_groups()
            .into_iter()
            .any(|g| g.movement == logic.primary_movement() && topology.has_group(g));
        if feasible {
            set.insert(logic.index() * 2);
            set.insert(logic.index() * 2 + 1);
        }
    }
    set
}

/// Green and clearance durations, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalTiming {
    pub g_short: f64,
    pub g_long: f64,
    pub clearance: f64,
}

impl Default for SignalTiming {
    fn default() -> Self {
        SignalTiming { g_short: 5.0, g_long: 15.0, clearance: 3.0 }
    }
}

impl SignalTiming {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if !(self.g_short > 0.0 && self.g_short < self.g_long && self.clearance >= 0.0) {
            return Err(NetworkError::InvalidTiming(*self));
        }
        Ok(())
    }

    pub fn green(&self, action: PhaseAction) -> f64 {
        match action.duration {
            GreenDuration::Short => self.g_short,
            GreenDuration::Long => self.g_long,
        }
    }

    /// Clearance inserted before `next`: none when the logic continues or
    /// when there is no previous action.
    pub fn clearance_cost(&self, prev: Option<PhaseLogic>, next: PhaseLogic) -> f64 {
        match prev {
            Some(p) if p != next => self.clearance,
            _ => 0.0,
        }
    }
}

/// Either an intersection or a virtual source/sink at the network edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Node(NodeId),
    Boundary(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub from: Endpoint,
    pub to: Endpoint,
    pub length: f64,
    pub lanes: u32,
    /// Side of the downstream intersection this link arrives on.
    pub arrive_side: Option<Side>,
    /// Side of the upstream intersection this link leaves from.
    pub depart_side: Option<Side>,
}

impl Link {
    pub fn to_node(&self) -> Option<NodeId> {
        match self.to {
            Endpoint::Node(n) => Some(n),
            Endpoint::Boundary(_) => None,
        }
    }

    pub fn from_node(&self) -> Option<NodeId> {
        match self.from {
            Endpoint::Node(n) => Some(n),
            Endpoint::Boundary(_) => None,
        }
    }

    /// Number of lanes dedicated to a movement. Right and left each get one
    /// lane; through gets the rest (at least one).
    pub fn group_lanes(&self, movement: Movement) -> u32 {
        match movement {
            Movement::Right | Movement::Left => 1,
            Movement::Through => self.lanes.saturating_sub(2).max(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: NodeId,
    pub row: usize,
    pub col: usize,
    pub topology: IntersectionTopology,
    pub signalized: bool,
    pub neighbors: [Option<NodeId>; 4],
    pub inbound: [Option<LinkId>; 4],
    pub outbound: [Option<LinkId>; 4],
    pub admissible: ActionSet,
}

impl Intersection {
    /// Existing lane groups in flat lane-index order.
    pub fn groups(&self) -> impl Iterator<Item = LaneGroup> + '_ {
        Side::ALL.into_iter().flat_map(move |side| {
            Movement::ALL
                .into_iter()
                .map(move |movement| LaneGroup { side, movement })
                .filter(move |g| self.topology.has_group(*g))
        })
    }
}

/// Network entry/exit point attached to a perimeter intersection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub id: usize,
    pub node: NodeId,
    pub side: Side,
    pub entry: LinkId,
    pub exit: LinkId,
}

/// Declarative grid description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Meters.
    pub approach_length: f64,
    pub lanes: u32,
    /// Intersections without a signal. Defaults to the four grid corners.
    #[serde(default)]
    pub unsignalized: Option<Vec<NodeId>>,
    #[serde(default)]
    pub timing: SignalTiming,
}

impl GridSpec {
    /// The 5x5 evaluation network.
    pub fn standard_grid() -> Self {
        GridSpec {
            rows: 5,
            cols: 5,
            approach_length: 470.0,
            lanes: 3,
            unsignalized: None,
            timing: SignalTiming::default(),
        }
    }

    pub fn signalized_map(&self) -> Vec<bool> {
        let n = self.rows * self.cols;
        let mut map = vec![true; n];
        match &self.unsignalized {
            Some(list) => {
                for &id in list {
                    if id < n {
                        map[id] = false;
                    }
                }
            }
            None => {
                for id in corner_ids(self.rows, self.cols) {
                    map[id] = false;
                }
            }
        }
        map
    }

    pub fn build(&self) -> Result<RoadNetwork, NetworkError> {
        if let Some(list) = &self.unsignalized {
            if let Some(&bad) = list.iter().find(|&&id| id >= self.rows * self.cols) {
                return Err(NetworkError::UnknownNode(bad));
            }
        }
        build_grid_network(
            self.rows,
            self.cols,
            self.approach_length,
            self.lanes,
            &self.signalized_map(),
            self.timing,
        )
    }
}

fn corner_ids(rows: usize, cols: usize) -> Vec<NodeId> {
    let mut v = vec![0, cols - 1, (rows - 1) * cols, rows * cols - 1];
    v.dedup();
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub rows: usize,
    pub cols: usize,
    pub intersections: Vec<Intersection>,
    pub links: Vec<Link>,
    pub boundaries: Vec<BoundaryPoint>,
    pub timing: SignalTiming,
}

/// Build a rows x cols grid. Node `r * cols + c` sits at row `r` (row 0 is
/// the northern edge). Each corner gets one boundary leg on its outward
/// vertical side; all other perimeter legs are absent, so perimeter nodes
/// are T-intersections and interior nodes are four-way.
pub fn build_grid_network(
    rows: usize,
    cols: usize,
    approach_length: f64,
    lanes: u32,
    signalized: &[bool],
    timing: SignalTiming,
) -> Result<RoadNetwork, NetworkError> {
    if rows < 2 || cols < 2 {
        return Err(NetworkError::GridTooSmall { rows, cols });
    }
    if !(approach_length > 0.0) {
        return Err(NetworkError::InvalidLength(approach_length));
    }
    if lanes == 0 {
        return Err(NetworkError::NoLanes);
    }
    if signalized.len() != rows * cols {
        return Err(NetworkError::SignalMapSize { expected: rows * cols, got: signalized.len() });
    }
    timing.validate()?;

    let id = |r: usize, c: usize| r * cols + c;
    let neighbor = |r: usize, c: usize, side: Side| -> Option<NodeId> {
        match side {
            Side::North => (r > 0).then(|| id(r - 1, c)),
            Side::South => (r + 1 < rows).then(|| id(r + 1, c)),
            Side::West => (c > 0).then(|| id(r, c - 1)),
            Side::East => (c + 1 < cols).then(|| id(r, c + 1)),
        }
    };

    let mut boundary_sides: Vec<(NodeId, Side)> = Vec::new();
    for corner in corner_ids(rows, cols) {
        let side = if corner / cols == 0 { Side::North } else { Side::South };
        boundary_sides.push((corner, side));
    }

    let mut intersections = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let n = id(r, c);
            let neighbors = Side::ALL.map(|s| neighbor(r, c, s));
            let mut present = neighbors.map(|nb| nb.is_some());
            for &(bn, bs) in &boundary_sides {
                if bn == n {
                    present[bs.index()] = true;
                }
            }
            let topology = IntersectionTopology::from_legs(present).ok_or(NetworkError::DegenerateNode(n))?;
            intersections.push(Intersection {
                id: n,
                row: r,
                col: c,
                topology,
                signalized: signalized[n],
                neighbors,
                inbound: [None; 4],
                outbound: [None; 4],
                admissible: admissible_actions(topology),
            });
        }
    }

    let mut links = Vec::new();
    for n in 0..rows * cols {
        for side in Side::ALL {
            if let Some(nb) = intersections[n].neighbors[side.index()] {
                let lid = links.len();
                links.push(Link {
                    id: lid,
                    from: Endpoint::Node(n),
                    to: Endpoint::Node(nb),
                    length: approach_length,
                    lanes,
                    arrive_side: Some(side.opposite()),
                    depart_side: Some(side),
                });
                intersections[n].outbound[side.index()] = Some(lid);
                intersections[nb].inbound[side.opposite().index()] = Some(lid);
            }
        }
    }

    let mut boundaries = Vec::new();
    for (b, &(n, side)) in boundary_sides.iter().enumerate() {
        let entry = links.len();
        links.push(Link {
            id: entry,
            from: Endpoint::Boundary(b),
            to: Endpoint::Node(n),
            length: approach_length,
            lanes,
            arrive_side: Some(side),
            depart_side: None,
        });
        let exit = links.len();
        links.push(Link {
            id: exit,
            from: Endpoint::Node(n),
            to: Endpoint::Boundary(b),
            length: approach_length,
            lanes,
            arrive_side: None,
            depart_side: Some(side),
        });
        intersections[n].inbound[side.index()] = Some(entry);
        intersections[n].outbound[side.index()] = Some(exit);
        boundaries.push(BoundaryPoint { id: b, node: n, side, entry, exit });
    }

    Ok(RoadNetwork { rows, cols, intersections, links, boundaries, timing })
}

impl RoadNetwork {
    pub fn num_nodes(&self) -> usize {
        self.intersections.len()
    }

    pub fn signalized(&self) -> impl Iterator<Item = &Intersection> + '_ {
        self.intersections.iter().filter(|i| i.signalized)
    }

    pub fn signalized_ids(&self) -> Vec<NodeId> {
        self.signalized().map(|i| i.id).collect()
    }

    /// Lane group a vehicle joins when it travels `from` -> `to` through
    /// the downstream node of `from`.
    pub fn turn_group(&self, from: LinkId, to: LinkId) -> Option<LaneGroup> {
        let a = &self.links[from];
        let b = &self.links[to];
        if a.to_node()? != b.from_node()? {
            return None;
        }
        let side = a.arrive_side?;
        let movement = Movement::between(side, b.depart_side?)?;
        Some(LaneGroup { side, movement })
    }

    /// Fewest-links route from a boundary entry to a boundary exit with no
    /// U-turns. Ties break toward the first side in N, E, S, W order.
    pub fn shortest_route(&self, entry_boundary: usize, exit_boundary: usize) -> Option<Vec<LinkId>> {
        let start = self.boundaries.get(entry_boundary)?.entry;
        let goal = self.boundaries.get(exit_boundary)?.exit;
        let mut parent: Vec<Option<LinkId>> = vec![None; self.links.len()];
        let mut seen = vec![false; self.links.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(l) = queue.pop_front() {
            if l == goal {
                let mut route = vec![l];
                let mut cur = l;
                while let Some(p) = parent[cur] {
                    route.push(p);
                    cur = p;
                }
                route.reverse();
                return Some(route);
            }
            let link = &self.links[l];
            let (Some(node), Some(arrive)) = (link.to_node(), link.arrive_side) else {
                continue;
            };
            for side in Side::ALL {
                if side == arrive {
                    continue;
                }
                if let Some(next) = self.intersections[node].outbound[side.index()] {
                    if !seen[next] {
                        seen[next] = true;
                        parent[next] = Some(l);
                        queue.push_back(next);
                    }
                }
            }
        }
        None
    }

    /// Per-lane storage of a link at the given vehicle spacing.
    pub fn lane_capacity(&self, link: LinkId, vehicle_space: f64) -> u32 {
        (self.links[link].length / vehicle_space).floor() as u32
    }
}
