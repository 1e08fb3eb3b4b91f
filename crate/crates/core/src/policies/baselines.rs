//! Rule-based controllers: fixed-time round robin, uniform random and
//! gap-out actuated control.

use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::mesosim::Simulation;
use crate::netmodel::{GreenDuration, NodeId, PhaseAction, PhaseLogic, RoadNetwork};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ControlDecision {
    Action(PhaseAction),
    Green { logic: PhaseLogic, seconds: f64 },
}

pub trait SignalController {
    fn decide(&mut self, sim: &Simulation, node: NodeId) -> ControlDecision;
}

/// Drive a simulation to its horizon, deciding for due intersections in id order.
pub fn run_controller(sim: &mut Simulation, ctrl: &mut dyn SignalController) -> Result<(), SimError> {
    while sim.advance_to_decision()?.is_some() {
        for node in sim.due().to_vec() {
            match ctrl.decide(sim, node) {
                ControlDecision::Action(a) => sim.apply_phase(node, a)?,
                ControlDecision::Green { logic, seconds } => sim.apply_green(node, logic, seconds)?,
            };
        }
    }
    Ok(())
}

fn admissible_logics(net: &RoadNetwork, node: NodeId) -> Vec<PhaseLogic> {
    net.intersections[node].admissible.logics().collect()
}

/// Cycles through the admissible logics with long greens.
pub struct FixedTimeController {
    cursor: Vec<usize>,
    logics: Vec<Vec<PhaseLogic>>,
}

impl FixedTimeController {
    pub fn new(net: &RoadNetwork) -> Self {
        FixedTimeController {
            cursor: vec![0; net.num_nodes()],
            logics: (0..net.num_nodes()).map(|n| admissible_logics(net, n)).collect(),
        }
    }
}

impl SignalController for FixedTimeController {
    fn decide(&mut self, _sim: &Simulation, node: NodeId) -> ControlDecision {
        let logics = &self.logics[node];
        let logic = logics[self.cursor[node] % logics.len()];
        self.cursor[node] += 1;
        ControlDecision::Action(PhaseAction::new(logic, GreenDuration::Long))
    }
}

/// Uniform over the admissible actions.
pub struct RandomController {
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(seed: u64) -> Self {
        RandomController { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl SignalController for RandomController {
    fn decide(&mut self, sim: &Simulation, node: NodeId) -> ControlDecision {
        let set = sim.network().intersections[node].admissible;
        let a = set.iter().choose(&mut self.rng).expect("non-empty admissible set");
        ControlDecision::Action(PhaseAction::from_index(a))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatedParams {
    pub min_green: f64,
    pub max_green: f64,
    /// A green is extended while a vehicle reached the stop line within
    /// this many seconds.
    pub critical_gap: f64,
}

impl Default for ActuatedParams {
    fn default() -> Self {
        ActuatedParams { min_green: 5.0, max_green: 45.0, critical_gap: 3.0 }
    }
}

/// Round robin over admissible logics. Each green lasts at least
/// `min_green` and is extended by `critical_gap` steps while vehicles keep
/// arriving or are still queued, up to `max_green`.
pub struct ActuatedController {
    params: ActuatedParams,
    logics: Vec<Vec<PhaseLogic>>,
    cursor: Vec<usize>,
    started: Vec<bool>,
}

impl ActuatedController {
    pub fn new(net: &RoadNetwork, params: ActuatedParams) -> Self {
        ActuatedController {
            params,
            logics: (0..net.num_nodes()).map(|n| admissible_logics(net, n)).collect(),
            cursor: vec![0; net.num_nodes()],
            started: vec![false; net.num_nodes()],
        }
    }
}

impl SignalController for ActuatedController {
    fn decide(&mut self, sim: &Simulation, node: NodeId) -> ControlDecision {
        let p = self.params;
        let logics = &self.logics[node];
        if self.started[node] {
            let logic = logics[self.cursor[node] % logics.len()];
            let elapsed = sim.green_elapsed(node);
            let now = sim.clock();
            let recent = sim.last_arrival(node, logic).is_some_and(|t| now - t < p.critical_gap);
            let demand = recent || sim.served_queue(node, logic) > 0;
            if demand && elapsed < p.max_green {
                let ext = p.critical_gap.min(p.max_green - elapsed);
                return ControlDecision::Green { logic, seconds: ext };
            }
            self.cursor[node] += 1;
        }
        self.started[node] = true;
        let logic = logics[self.cursor[node] % logics.len()];
        ControlDecision::Green { logic, seconds: p.min_green }
    }
}
