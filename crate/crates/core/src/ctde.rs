//! Regional agents with shared parameters, state encoding and action
//! masking per intersection, the asynchronous episode loop and checkpoint
//! bundles.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AgentError, LearnError};
use crate::mesosim::{generate_demand, EventLog, FlowConfig, IntersectionObservation, MetricsReport, SimParams, Simulation};
use crate::netmodel::{ActionSet, NodeId, PhaseAction, RoadNetwork};
use crate::policies::{
    baseline_variants, boundary_indicators, composite_reward, local_reward, local_state, onehop_reward, onehop_state,
    region_neighbors, regionwide_reward, regionwide_state, ModelTag, RegionMonitor, RegionalBlock, Sharing, Variant,
    LOCAL_WIDTH, ONEHOP_SLOT_WIDTH,
};
use crate::qlearn::{select_action, DoubleDqn, Mlp, TrainerConfig, Transition};
use crate::regionform::RegionPartition;
use crate::scalar::Scalar;

/// Regional reward coefficients (spillback, switching, outflow) used until tuned.
pub const DEFAULT_LAMBDA: [f64; 3] = [0.1, 0.1, 0.1];

/// SplitMix64 step, used to derive independent seeds from one base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub width: usize,
}

/// Ordered feature blocks of an encoded state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub blocks: Vec<Block>,
    pub width: usize,
}

impl StateLayout {
    pub fn for_block(regional: RegionalBlock) -> Self {
        let mut spec: Vec<(&str, usize)> = vec![("phase", 8), ("throughput", 4), ("spatial", 5)];
        match regional {
            RegionalBlock::None => {}
            RegionalBlock::RegionWide => spec.extend([
                ("region_phase", 4),
                ("region_queue", 4),
                ("spillback", 1),
                ("exchange", 1),
                ("boundary", 4),
            ]),
            RegionalBlock::OneHop => spec.extend([
                ("neighbor_n", ONEHOP_SLOT_WIDTH),
                ("neighbor_e", ONEHOP_SLOT_WIDTH),
                ("neighbor_s", ONEHOP_SLOT_WIDTH),
                ("neighbor_w", ONEHOP_SLOT_WIDTH),
                ("advancing", 2),
            ]),
        }
        let mut offset = 0;
        let blocks = spec
            .into_iter()
            .map(|(name, width)| {
                let b = Block { name: name.to_string(), offset, width };
                offset += width;
                b
            })
            .collect();
        StateLayout { blocks, width: offset }
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// Admissible entries kept, the rest set to negative infinity.
pub fn amm_mask<S: Scalar>(q: &[S], admissible: ActionSet) -> Result<Vec<S>, LearnError> {
    if admissible.is_empty() {
        return Err(LearnError::EmptyMask);
    }
    Ok(q.iter().enumerate().map(|(a, &v)| if admissible.contains(a) { v } else { S::neg_infinity() }).collect())
}

/// Everything the encoder needs besides the observations.
pub struct EncodeContext<'a> {
    pub net: &'a RoadNetwork,
    pub partition: &'a RegionPartition,
    pub regional: RegionalBlock,
}

/// Fixed-width state of `node` at the current instant.
pub fn tle_encode(
    ctx: &EncodeContext,
    node: NodeId,
    observations: &[Option<IntersectionObservation>],
    monitors: &mut [RegionMonitor],
    sim: &Simulation,
) -> Vec<f64> {
    let own = observations[node].as_ref().expect("signalized observation");
    let mut out = Vec::with_capacity(LOCAL_WIDTH + ctx.regional.width());
    out.extend_from_slice(&local_state(own));
    match ctx.regional {
        RegionalBlock::None => {}
        RegionalBlock::RegionWide => {
            let region = ctx.partition.region_of[node].expect("covered node");
            let (summary, _) = monitors[region].update(sim, observations);
            out.extend_from_slice(&regionwide_state(summary, boundary_indicators(ctx.net, ctx.partition, node)));
        }
        RegionalBlock::OneHop => {
            let nb = region_neighbors(ctx.net, ctx.partition, node).map(|j| j.and_then(|j| observations[j].as_ref()));
            out.extend_from_slice(&onehop_state(own, nb));
        }
    }
    out
}

/// Regional reward term of `node` at the current instant.
pub fn regional_reward(
    ctx: &EncodeContext,
    node: NodeId,
    observations: &[Option<IntersectionObservation>],
    monitors: &mut [RegionMonitor],
    sim: &Simulation,
    lambda: &[[f64; 3]],
) -> f64 {
    match ctx.regional {
        RegionalBlock::None => 0.0,
        RegionalBlock::RegionWide => {
            let region = ctx.partition.region_of[node].expect("covered node");
            let (_, terms) = monitors[region].update(sim, observations);
            regionwide_reward(terms, lambda[region])
        }
        RegionalBlock::OneHop => {
            let nb = region_neighbors(ctx.net, ctx.partition, node).map(|j| j.and_then(|j| observations[j].as_ref()));
            onehop_reward(nb)
        }
    }
}

/// One shared learner serving a set of intersections.
#[derive(Clone, Debug)]
pub struct RegionalAgent<S> {
    pub id: usize,
    pub members: Vec<NodeId>,
    pub learner: DoubleDqn<S>,
}

/// A full set of agents bound to one model and one partition.
#[derive(Clone, Debug)]
pub struct SemiCtde<S> {
    pub variant: Variant,
    pub layout: StateLayout,
    pub partition: RegionPartition,
    pub agents: Vec<RegionalAgent<S>>,
    /// Agent serving each intersection.
    pub agent_of: Vec<Option<usize>>,
    /// Per partition region.
    pub lambda: Vec<[f64; 3]>,
    pub trainer: TrainerConfig,
    /// Keep every encoded state in the episode outcome.
    pub record_features: bool,
}

impl<S: Scalar> SemiCtde<S> {
    pub fn new(net: &RoadNetwork, partition: RegionPartition, tag: ModelTag, trainer: TrainerConfig, seed: u64) -> Result<Self, AgentError> {
        let variant = baseline_variants(tag);
        let layout = StateLayout::for_block(variant.regional);
        let groups: Vec<Vec<NodeId>> = match variant.sharing {
            Sharing::PerRegion => partition.regions.clone(),
            Sharing::PerIntersection => net.signalized_ids().into_iter().map(|n| vec![n]).collect(),
        };
        let mut agent_of = vec![None; net.num_nodes()];
        let mut agents = Vec::with_capacity(groups.len());
        for (id, members) in groups.into_iter().enumerate() {
            for &n in &members {
                agent_of[n] = Some(id);
            }
            let learner = DoubleDqn::new(layout.width, trainer.clone(), derive_seed(seed, id as u64))?;
            agents.push(RegionalAgent { id, members, learner });
        }
        if let Some(i) = net.signalized().find(|i| agent_of[i.id].is_none()) {
            return Err(AgentError::Uncovered(i.id));
        }
        let lambda = vec![DEFAULT_LAMBDA; partition.len()];
        Ok(SemiCtde { variant, layout, partition, agents, agent_of, lambda, trainer, record_features: false })
    }

    pub fn tag(&self) -> ModelTag {
        self.variant.tag
    }

    fn agent_for(&self, node: NodeId) -> Result<usize, AgentError> {
        let a = self.agent_of.get(node).copied().flatten().ok_or(AgentError::Uncovered(node))?;
        if a >= self.agents.len() {
            return Err(AgentError::MissingAgent(a));
        }
        Ok(a)
    }

    pub fn total_transitions(&self) -> usize {
        self.agents.iter().map(|a| a.learner.memory.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Train { epsilon: f64 },
    Eval,
}

/// Bookkeeping of one closed transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosedTransition {
    pub node: NodeId,
    pub agent: usize,
    pub opened: f64,
    pub closed: f64,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub metrics: MetricsReport,
    pub transitions: Vec<ClosedTransition>,
    /// Training losses in step order.
    pub losses: Vec<f64>,
    /// Mean regional reward term per partition region over the episode.
    pub regional_reward: Vec<f64>,
    pub decisions: usize,
    pub event_log: Option<EventLog>,
    /// `(time, node, state)` per decision when recording is enabled.
    pub features: Vec<(f64, NodeId, Vec<f64>)>,
}

struct Pending {
    state: Vec<f64>,
    action: usize,
    opened: f64,
}

fn observe_all(sim: &Simulation) -> Vec<Option<IntersectionObservation>> {
    let net = sim.network();
    (0..net.num_nodes()).map(|n| net.intersections[n].signalized.then(|| sim.observe(n))).collect()
}

fn to_scalar<S: Scalar>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::of(x)).collect()
}

/// Run one episode. In training mode closed transitions go to the serving
/// agent's memory and trigger its training steps; in evaluation mode the
/// agents are not touched and actions are greedy.
pub fn run_episode<S: Scalar>(
    system: &mut SemiCtde<S>,
    net: &RoadNetwork,
    trips: Vec<crate::mesosim::Trip>,
    params: SimParams,
    mode: Mode,
    seed: u64,
) -> Result<EpisodeOutcome, AgentError> {
    let record_log = params.record_log;
    let mut sim = Simulation::new(net, trips, params)?;
    let partition = system.partition.clone();
    let ctx = EncodeContext { net, partition: &partition, regional: system.variant.regional };
    let mut monitors: Vec<RegionMonitor> =
        (0..partition.len()).map(|k| RegionMonitor::new(net, &partition, k, system.variant.weights.ema_factor)).collect();
    let mut pending: Vec<Option<Pending>> = (0..net.num_nodes()).map(|_| None).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xE5));
    let epsilon = match mode {
        Mode::Train { epsilon } => epsilon,
        Mode::Eval => 0.0,
    };
    let weights = system.variant.weights;
    let mut closed = Vec::new();
    let mut losses = Vec::new();
    let mut reg_sum = vec![0.0; partition.len()];
    let mut reg_count = vec![0usize; partition.len()];
    let mut decisions = 0usize;
    let mut features = Vec::new();

    let close = |system: &mut SemiCtde<S>,
                     node: NodeId,
                     p: Pending,
                     next: &[f64],
                     local: f64,
                     regional: f64,
                     t: f64,
                     done: bool,
                     losses: &mut Vec<f64>|
     -> Result<ClosedTransition, AgentError> {
        let agent = system.agent_for(node)?;
        let reward = composite_reward(local, regional, &weights);
        if let Mode::Train { .. } = mode {
            let tr = Transition {
                s: to_scalar(&p.state),
                a: p.action,
                r: S::of(reward),
                s_next: to_scalar(next),
                done,
                next_mask: net.intersections[node].admissible,
            };
            if let Some(loss) = system.agents[agent].learner.observe(tr)? {
                losses.push(loss.as_f64());
            }
        }
        Ok(ClosedTransition { node, agent, opened: p.opened, closed: t, action: p.action, reward, done })
    };

    while let Some(t) = sim.advance_to_decision()? {
        let due = sim.due().to_vec();
        let observations = observe_all(&sim);
        let mut states = Vec::with_capacity(due.len());
        for &node in &due {
            let s = tle_encode(&ctx, node, &observations, &mut monitors, &sim);
            if s.len() != system.layout.width {
                return Err(AgentError::LayoutMismatch { agent: system.agent_for(node)?, expected: system.layout.width, got: s.len() });
            }
            if let Some(p) = pending[node].take() {
                let local = local_reward(observations[node].as_ref().expect("observed"));
                let regional = regional_reward(&ctx, node, &observations, &mut monitors, &sim, &system.lambda);
                if let Some(r) = partition.region_of[node] {
                    reg_sum[r] += regional;
                    reg_count[r] += 1;
                }
                closed.push(close(system, node, p, &s, local, regional, t, false, &mut losses)?);
            }
            states.push(s);
        }
        for (&node, s) in due.iter().zip(states) {
            let agent = system.agent_for(node)?;
            let q = system.agents[agent].learner.q_values(&to_scalar::<S>(&s))?;
            let mask = net.intersections[node].admissible;
            let masked = amm_mask(&q, mask)?;
            let a = select_action(&masked, mask, epsilon, &mut rng)?;
            sim.apply_phase(node, PhaseAction::from_index(a))?;
            decisions += 1;
            if system.record_features {
                features.push((t, node, s.clone()));
            }
            pending[node] = Some(Pending { state: s, action: a, opened: t });
        }
    }

    let t = sim.clock();
    let observations = observe_all(&sim);
    for node in 0..net.num_nodes() {
        let Some(p) = pending[node].take() else { continue };
        let s = tle_encode(&ctx, node, &observations, &mut monitors, &sim);
        let local = local_reward(observations[node].as_ref().expect("observed"));
        let regional = regional_reward(&ctx, node, &observations, &mut monitors, &sim, &system.lambda);
        if let Some(r) = partition.region_of[node] {
            reg_sum[r] += regional;
            reg_count[r] += 1;
        }
        closed.push(close(system, node, p, &s, local, regional, t, true, &mut losses)?);
    }

    let metrics = sim.report()?;
    Ok(EpisodeOutcome {
        metrics,
        transitions: closed,
        losses,
        regional_reward: reg_sum.iter().zip(&reg_count).map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect(),
        decisions,
        event_log: record_log.then(|| sim.take_event_log()),
        features,
    })
}

/// Greedy execution with frozen agents.
pub fn decentralized_execute<S: Scalar>(
    system: &SemiCtde<S>,
    net: &RoadNetwork,
    trips: Vec<crate::mesosim::Trip>,
    params: SimParams,
    seed: u64,
) -> Result<EpisodeOutcome, AgentError> {
    let mut frozen = system.clone();
    run_episode(&mut frozen, net, trips, params, Mode::Eval, seed)
}

/// Per-episode summary of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub epsilon: f64,
    pub awt: f64,
    pub att: f64,
    pub aql: f64,
    pub completed: usize,
    pub train_steps: usize,
    pub mean_loss: Option<f64>,
}

/// Seed of the demand used in training episode `episode`.
pub fn episode_seed(base: u64, episode: usize) -> u64 {
    derive_seed(base, 0x1000 + episode as u64)
}

/// Train for `episodes` episodes with per-episode epsilon decay.
pub fn train<S: Scalar>(
    system: &mut SemiCtde<S>,
    net: &RoadNetwork,
    flow: &FlowConfig,
    params: &SimParams,
    episodes: usize,
    seed: u64,
    first_episode: usize,
) -> Result<Vec<EpisodeRecord>, AgentError> {
    let mut out = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let episode = first_episode + k;
        let es = episode_seed(seed, episode);
        let trips = generate_demand(flow, net, es)?;
        let epsilon = system.trainer.epsilon(episode);
        let sim_params = SimParams { record_log: false, ..params.clone() };
        let o = run_episode(system, net, trips, sim_params, Mode::Train { epsilon }, es)?;
        let mean_loss = (!o.losses.is_empty()).then(|| o.losses.iter().sum::<f64>() / o.losses.len() as f64);
        log::info!(
            "episode {episode}: eps {epsilon:.3} awt {:.2} att {:.2} aql {:.3} steps {}",
            o.metrics.awt,
            o.metrics.att,
            o.metrics.aql,
            o.losses.len()
        );
        out.push(EpisodeRecord {
            episode,
            epsilon,
            awt: o.metrics.awt,
            att: o.metrics.att,
            aql: o.metrics.aql,
            completed: o.metrics.completed,
            train_steps: o.losses.len(),
            mean_loss,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentEntry {
    pub id: usize,
    pub file: String,
    pub members: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub model: ModelTag,
    pub layout: StateLayout,
    pub layer_sizes: Vec<usize>,
    pub partition_hash: String,
    pub config_hash: String,
    pub lambda: Vec<[f64; 3]>,
    pub agents: Vec<AgentEntry>,
}

/// Write one parameter file per agent plus `manifest.json`.
pub fn save_bundle<S: Scalar>(system: &SemiCtde<S>, dir: &Path, config_hash: &str) -> Result<Vec<PathBuf>, AgentError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    let mut paths = Vec::new();
    for a in &system.agents {
        let file = format!("agent_{:03}.qnet", a.id);
        let mut buf = Vec::new();
        a.learner.online.write_to(&mut buf)?;
        let path = dir.join(&file);
        fs::write(&path, buf)?;
        paths.push(path);
        entries.push(AgentEntry { id: a.id, file, members: a.members.clone() });
    }
    let manifest = BundleManifest {
        model: system.tag(),
        layout: system.layout.clone(),
        layer_sizes: system.agents.first().map(|a| a.learner.online.sizes().to_vec()).unwrap_or_default(),
        partition_hash: system.partition.hash(),
        config_hash: config_hash.to_string(),
        lambda: system.lambda.clone(),
        agents: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| AgentError::Manifest(e.to_string()))?;
    text.push('\n');
    let path = dir.join("manifest.json");
    fs::write(&path, text)?;
    paths.push(path);
    Ok(paths)
}

/// Rebuild frozen agents from a bundle; the partition must match the one it was trained with.
pub fn load_bundle<S: Scalar>(dir: &Path, net: &RoadNetwork, partition: RegionPartition, trainer: TrainerConfig) -> Result<SemiCtde<S>, AgentError> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: BundleManifest = serde_json::from_str(&text).map_err(|e| AgentError::Manifest(e.to_string()))?;
    if manifest.partition_hash != partition.hash() {
        return Err(AgentError::Manifest("partition differs from the one used in training".into()));
    }
    let mut system = SemiCtde::<S>::new(net, partition, manifest.model, trainer, 0)?;
    if manifest.layout != system.layout {
        return Err(AgentError::LayoutMismatch { agent: 0, expected: system.layout.width, got: manifest.layout.width });
    }
    if manifest.agents.len() != system.agents.len() {
        let missing = (0..system.agents.len()).find(|k| !manifest.agents.iter().any(|e| e.id == *k)).unwrap_or(manifest.agents.len());
        return Err(AgentError::MissingAgent(missing));
    }
    for entry in &manifest.agents {
        let agent = system.agents.get_mut(entry.id).ok_or(AgentError::MissingAgent(entry.id))?;
        if agent.members != entry.members {
            return Err(AgentError::Manifest(format!("agent {} serves different intersections", entry.id)));
        }
        let path = dir.join(&entry.file);
        if !path.exists() {
            return Err(AgentError::MissingAgent(entry.id));
        }
        let bytes = fs::read(&path)?;
        let net_params = Mlp::<S>::read_from(&bytes[..])?;
        if net_params.input_dim() != system.layout.width {
            return Err(AgentError::LayoutMismatch { agent: entry.id, expected: system.layout.width, got: net_params.input_dim() });
        }
        agent.learner.online = net_params.clone();
        agent.learner.target = net_params;
    }
    system.lambda = manifest.lambda;
    Ok(system)
}
