//! End-to-end acceptance checks. One line per criterion goes straight to
//! stderr (not captured by the test harness); the test fails if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semictde::ctde::{run_episode, Mode, SemiCtde, StateLayout};
use semictde::mesosim::{compute_metrics, EventLog, FlowConfig, SimParams, Simulation, StepOutcome, Trip};
use semictde::netmodel::{
    admissible_actions, ActionSet, GridSpec, IntersectionTopology, PhaseAction, RoadNetwork, NUM_ACTIONS,
};
use semictde::policies::{
    ActuatedController, ActuatedParams, ControlDecision, FixedTimeController, ModelTag, RandomController, RegionalBlock,
    SignalController, LOCAL_WIDTH,
};
use semictde::qlearn::{ddqn_targets, select_action, Mlp, Transition};
use semictde::regionform::{alpha_cut_components, CongestionGraph, RegionPartition};
use semictde::spsa::{maximize, spsa_probe, SpsaSchedule};
use semictde_cli::config::{toy_trainer, ExperimentConfig, FlowSection};
use semictde_cli::run::{cmd_eval, cmd_train, seed_dir};

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn toy_net() -> RoadNetwork {
    ExperimentConfig::toy().network.build().unwrap()
}

fn toy_trips(net: &RoadNetwork, seed: u64) -> Vec<Trip> {
    let flow = ExperimentConfig::toy().flow.resolve().unwrap();
    semictde::mesosim::generate_demand(&flow, net, seed).unwrap()
}

fn toy_params() -> SimParams {
    let cfg = ExperimentConfig::toy();
    cfg.simulation.params(cfg.flow.resolve().unwrap().horizon)
}

// 1

fn scope() -> Outcome {
    let expected = [
        ("U1", 39_600, 2.2),
        ("G1", 10_800, 0.60),
        ("G2", 13_500, 0.75),
        ("W1", 14_400, 0.60),
        ("W2", 10_800, 0.70),
        ("W3", 18_000, 1.0),
        ("W4", 19_800, 1.1),
    ];
    for (name, total, rate) in expected {
        let f = FlowConfig::preset(name).ok_or(format!("missing preset {name}"))?;
        ensure(f.total_vehicles == total && f.avg_rate == rate && f.horizon == 18_000.0, format!("preset {name} differs: {f:?}"))?;
    }
    let full = ExperimentConfig::full();
    full.validate().map_err(|e| e.to_string())?;
    let net = full.network.build().map_err(|e| e.to_string())?;
    ensure(net.signalized_ids().len() == 21, "the 5x5 grid should have 21 signalized intersections")?;
    Ok("full-scale profile and flow presets load; numeric reproduction is out of scope by design".into())
}

// 2

fn loss_of(net: &Mlp<f64>, x: &Array2<f64>, a: &[usize], y: &[f64]) -> f64 {
    net.selected_mse(x.view(), a, y).unwrap().0
}

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut params = 0usize;
    for seed in 0..100u64 {
        let mut r = rng(0x6AD0 + seed);
        let d = r.random_range(2..10);
        let depth = r.random_range(1..4);
        let mut sizes = vec![d];
        sizes.extend((0..depth).map(|_| r.random_range(2..12)));
        sizes.push(NUM_ACTIONS);
        let mut net = Mlp::<f64>::new(&sizes, &mut r).unwrap();
        for b in &mut net.biases {
            b.mapv_inplace(|_| r.random_range(-0.5..0.5));
        }
        let n = r.random_range(1..9);
        let x = Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0));
        let a: Vec<usize> = (0..n).map(|_| r.random_range(0..NUM_ACTIONS)).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let (_, g) = net.selected_mse(x.view(), &a, &y).unwrap();
        let analytic: Vec<f64> = g.weights.iter().zip(&g.biases).flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>()).collect();
        let base = net.flat_params();
        let h = 1e-5;
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] = base[k] + h;
            net.set_flat_params(&p).unwrap();
            let up = loss_of(&net, &x, &a, &y);
            p[k] = base[k] - h;
            net.set_flat_params(&p).unwrap();
            let down = loss_of(&net, &x, &a, &y);
            let numeric = (up - down) / (2.0 * h);
            let err = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
        params += base.len();
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(worst < 1e-4, format!("max relative error {worst:.3e}"))?;
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!("max relative error {worst:.2e} over 100 instances ({params} parameters) in {secs:.2} s"))
}

// 3

fn ddqn_identity() -> Outcome {
    let mut r = rng(0xDD);
    let mut checked = 0;
    while checked < 1000 {
        let d = r.random_range(2..8);
        let sizes = [d, r.random_range(3..10), r.random_range(3..10), NUM_ACTIONS];
        let online = Mlp::<f64>::new(&sizes, &mut r).unwrap();
        let target = online.clone();
        let gamma = r.random_range(0.5..0.99);
        let batch: Vec<Transition<f64>> = (0..50)
            .map(|_| {
                let mut mask = ActionSet(r.random_range(1..=255u8));
                if r.random_bool(0.3) {
                    mask = ActionSet::FULL;
                }
                Transition {
                    s: (0..d).map(|_| r.random_range(-1.0..1.0)).collect(),
                    a: r.random_range(0..NUM_ACTIONS),
                    r: r.random_range(-3.0..1.0),
                    s_next: (0..d).map(|_| r.random_range(-1.0..1.0)).collect(),
                    done: r.random_bool(0.1),
                    next_mask: mask,
                }
            })
            .collect();
        let refs: Vec<&Transition<f64>> = batch.iter().collect();
        let got = ddqn_targets(&refs, &online, &target, gamma).unwrap();
        let next = Array2::from_shape_fn((batch.len(), d), |(i, j)| batch[i].s_next[j]);
        let q = target.forward(next.view()).unwrap();
        for (i, t) in batch.iter().enumerate() {
            let want = if t.done {
                t.r
            } else {
                let best = (0..NUM_ACTIONS).filter(|&a| t.next_mask.contains(a)).map(|a| q[[i, a]]).fold(f64::NEG_INFINITY, f64::max);
                t.r + gamma * best
            };
            ensure(got[i] == want, format!("transition {checked}: {} vs {}", got[i], want))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} transitions equal r + gamma max_a' Q(s', a') bit for bit"))
}

// 4

fn reachability(n: usize, edges: &[(usize, usize)], mu: &[f64], alpha: f64) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for (&(u, v), &m) in edges.iter().zip(mu) {
        if m >= alpha {
            adj[u].push(v);
            adj[v].push(u);
        }
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([s]);
        seen[s] = true;
        while let Some(u) = queue.pop_front() {
            comp.push(u);
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        comp.sort();
        out.push(comp);
    }
    out.sort();
    out
}

fn region_oracle() -> Outcome {
    let mut r = rng(0xA1FA);
    let mut cuts = 0;
    for g in 0..500 {
        let n = r.random_range(1..=20);
        let p = r.random_range(0.05..0.5);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u != v && r.random_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        // Coarse values so that ties with alpha occur.
        let mu: Vec<f64> = edges.iter().map(|_| r.random_range(0..=20) as f64 / 20.0).collect();
        let graph = CongestionGraph::from_memberships((0..n).collect(), edges.clone(), mu.clone());
        let mut alphas: Vec<f64> = mu.clone();
        alphas.extend((0..5).map(|_| r.random_range(0.0..1.1)));
        alphas.push(0.0);
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        let mut previous: Option<Vec<Vec<usize>>> = None;
        for &alpha in &alphas {
            let got = alpha_cut_components(&graph, alpha).map_err(|e| e.to_string())?;
            let want = reachability(n, &edges, &mu, alpha);
            ensure(got == want, format!("graph {g} alpha {alpha}: {got:?} vs {want:?}"))?;
            if let Some(coarse) = &previous {
                for comp in &got {
                    let home = coarse.iter().find(|c| c.contains(&comp[0])).unwrap();
                    ensure(comp.iter().all(|v| home.contains(v)), format!("graph {g}: not a refinement at alpha {alpha}"))?;
                }
            }
            previous = Some(got);
            cuts += 1;
        }
    }
    Ok(format!("500 graphs, {cuts} alpha cuts match the reachability oracle; refinement monotone"))
}

// 5

fn scheduling_law() -> Outcome {
    let net = toy_net();
    let mut sim = Simulation::new(&net, toy_trips(&net, 55), toy_params()).unwrap();
    let mut ctrl = RandomController::new(55);
    semictde::policies::run_controller(&mut sim, &mut ctrl).unwrap();
    let mut by_node: BTreeMap<usize, Vec<(f64, usize)>> = BTreeMap::new();
    for d in sim.decisions() {
        let a = d.action.ok_or(format!("decision without an action index at t={}", d.time))?;
        ensure(net.intersections[d.node].admissible.contains(a), format!("inadmissible action {a} at node {}", d.node))?;
        by_node.entry(d.node).or_default().push((d.time, a));
    }
    let mut gaps = 0;
    for (node, seq) in &by_node {
        for k in 0..seq.len() - 1 {
            let (t, a) = seq[k];
            let green = if a % 2 == 0 { 5.0 } else { 15.0 };
            let clearance = if k > 0 && seq[k - 1].1 / 2 != a / 2 { 3.0 } else { 0.0 };
            let gap = seq[k + 1].0 - t;
            ensure(gap == green + clearance, format!("node {node} at t={t}: gap {gap}, expected {}", green + clearance))?;
            gaps += 1;
        }
    }
    ensure(by_node.len() == 4, "every signalized node decides")?;
    Ok(format!("{gaps} inter-decision gaps over {} intersections equal green + clearance", by_node.len()))
}

// 6

fn mask_safety() -> Outcome {
    let mut r = rng(0x3A5C);
    let topologies = [
        IntersectionTopology::TWestBlocked,
        IntersectionTopology::TEastBlocked,
        IntersectionTopology::TSouthBlocked,
        IntersectionTopology::TNorthBlocked,
    ];
    let draws = 100_000;
    let mut counts = vec![[0usize; NUM_ACTIONS]; topologies.len()];
    for i in 0..draws {
        let k = i % topologies.len();
        let mask = admissible_actions(topologies[k]);
        let q: Vec<f64> = (0..NUM_ACTIONS).map(|_| r.random_range(-1.0..1.0)).collect();
        let a = select_action(&q, mask, 1.0, &mut r).map_err(|e| e.to_string())?;
        ensure(mask.contains(a), format!("inadmissible action {a} for {:?}", topologies[k]))?;
        counts[k][a] += 1;
    }
    let mut worst: f64 = 0.0;
    for (k, topo) in topologies.iter().enumerate() {
        let mask = admissible_actions(*topo);
        let n = counts[k].iter().sum::<usize>() as f64;
        let p = 1.0 / mask.len() as f64;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for a in 0..NUM_ACTIONS {
            if !mask.contains(a) {
                continue;
            }
            let z = (counts[k][a] as f64 - n * p).abs() / sigma;
            worst = worst.max(z);
            ensure(z <= 3.0, format!("{topo:?} action {a}: count {} is {z:.2} sigma from {:.0}", counts[k][a], n * p))?;
        }
    }
    Ok(format!("{draws} draws, no inadmissible action, largest deviation {worst:.2} sigma"))
}

// 7

fn drive(sim: &mut Simulation, ctrl: &mut dyn SignalController) -> Result<usize, String> {
    let mut boundaries = 0;
    loop {
        let outcome = sim.step().map_err(|e| e.to_string())?;
        if let StepOutcome::Decision(_) = outcome {
            for node in sim.due().to_vec() {
                match ctrl.decide(sim, node) {
                    ControlDecision::Action(a) => sim.apply_phase(node, a),
                    ControlDecision::Green { logic, seconds } => sim.apply_green(node, logic, seconds),
                }
                .map_err(|e| e.to_string())?;
            }
        }
        ensure(sim.entered() == sim.exited() + sim.in_network(), format!("t={}: counters disagree", sim.clock()))?;
        sim.check_invariants().map_err(|e| format!("t={}: {e}", sim.clock()))?;
        boundaries += 1;
        if outcome == StepOutcome::Finished {
            return Ok(boundaries);
        }
    }
}

fn conservation() -> Outcome {
    let toy = toy_net();
    let full = GridSpec::standard_grid().build().unwrap();
    let three = GridSpec { rows: 3, cols: 3, approach_length: 120.0, lanes: 2, ..GridSpec::standard_grid() }.build().unwrap();
    let heavy = FlowConfig::preset("W4").unwrap().scaled(1800.0, 1.0);
    let light = FlowConfig::preset("U1").unwrap().scaled(1800.0, 1.0);
    let params = SimParams { horizon: 1800.0, ..SimParams::default() };
    let mut scenarios: Vec<(&str, &RoadNetwork, Vec<Trip>, Box<dyn SignalController>)> = vec![
        ("toy/random", &toy, toy_trips(&toy, 7), Box::new(RandomController::new(7))),
        ("toy/fixed", &toy, toy_trips(&toy, 8), Box::new(FixedTimeController::new(&toy))),
        ("5x5/fixed", &full, semictde::mesosim::generate_demand(&light, &full, 9).unwrap(), Box::new(FixedTimeController::new(&full))),
        ("5x5/random heavy", &full, semictde::mesosim::generate_demand(&heavy, &full, 10).unwrap(), Box::new(RandomController::new(10))),
        (
            "3x3/actuated heavy",
            &three,
            semictde::mesosim::generate_demand(&heavy, &three, 11).unwrap(),
            Box::new(ActuatedController::new(&three, ActuatedParams::default())),
        ),
    ];
    let mut total = 0;
    for (name, net, trips, ctrl) in scenarios.iter_mut() {
        let mut sim = Simulation::new(net, std::mem::take(trips), params.clone()).unwrap();
        total += drive(&mut sim, ctrl.as_mut()).map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(format!("{} scenarios, {total} event boundaries, counts conserved and queues within capacity", scenarios.len()))
}

// 8

struct Script {
    plan: Vec<usize>,
    next: HashMap<usize, usize>,
}

impl SignalController for Script {
    fn decide(&mut self, sim: &Simulation, node: usize) -> ControlDecision {
        let admissible = sim.network().intersections[node].admissible;
        let k = self.next.entry(node).or_insert(node);
        loop {
            let a = self.plan[*k % self.plan.len()];
            *k += 1;
            if admissible.contains(a) {
                return ControlDecision::Action(PhaseAction::from_index(a));
            }
        }
    }
}

fn metrics_oracle() -> Outcome {
    let spec = GridSpec { rows: 2, cols: 2, approach_length: 100.0, lanes: 2, unsignalized: Some(vec![2, 3]), ..GridSpec::standard_grid() };
    let net = spec.build().unwrap();
    ensure(net.signalized_ids() == vec![0, 1], "two signalized intersections")?;
    let mut trips = Vec::new();
    let b = net.boundaries.len();
    for k in 0..160 {
        let o = k % b;
        let d = (o + 1 + (k / b) % (b - 1)) % b;
        if let Some(route) = net.shortest_route(o, d) {
            trips.push(Trip { entry_time: 3.0 * k as f64, origin: o, destination: d, route });
        }
    }
    let params = SimParams { horizon: 900.0, record_log: true, ..SimParams::default() };
    let mut sim = Simulation::new(&net, trips, params).unwrap();
    let mut ctrl = Script { plan: vec![1, 0, 3, 7, 2, 5, 4, 6], next: HashMap::new() };
    semictde::policies::run_controller(&mut sim, &mut ctrl).unwrap();
    let online = sim.report().unwrap();
    let mut bytes = Vec::new();
    sim.event_log().write_jsonl(&mut bytes).unwrap();
    let text = String::from_utf8(bytes).unwrap();

    // Independent recomputation straight from the JSON lines.
    let mut lines = text.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    let signalized: BTreeSet<u64> = header["signalized"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    let mut enter: BTreeMap<u64, f64> = BTreeMap::new();
    let mut exit: BTreeMap<u64, f64> = BTreeMap::new();
    let mut wait: BTreeMap<u64, f64> = BTreeMap::new();
    let mut queued_at: HashMap<u64, (f64, u64)> = HashMap::new();
    let mut queue_len: HashMap<u64, u64> = HashMap::new();
    let (mut sample_sum, mut samples) = (0u64, 0u64);
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let t = v["t"].as_f64().unwrap();
        let veh = v.get("vehicle").and_then(|x| x.as_u64());
        let node = v.get("node").and_then(|x| x.as_u64());
        match v["kind"].as_str().unwrap() {
            "Enter" => {
                enter.insert(veh.unwrap(), t);
            }
            "Queue" => {
                queued_at.insert(veh.unwrap(), (t, node.unwrap()));
                *queue_len.entry(node.unwrap()).or_default() += 1;
            }
            "Depart" => {
                let (since, n) = queued_at.remove(&veh.unwrap()).unwrap();
                *wait.entry(veh.unwrap()).or_default() += t - since;
                *queue_len.get_mut(&n).unwrap() -= 1;
            }
            "Exit" => {
                exit.insert(veh.unwrap(), t);
            }
            "Sample" => {
                sample_sum += signalized.iter().map(|n| queue_len.get(n).copied().unwrap_or(0)).sum::<u64>();
                samples += 1;
            }
            _ => {}
        }
    }
    let done = exit.len() as f64;
    let awt = exit.keys().map(|v| wait.get(v).copied().unwrap_or(0.0)).sum::<f64>() / done;
    let att = exit.iter().map(|(v, t)| t - enter[v]).sum::<f64>() / done;
    let aql = sample_sum as f64 / (signalized.len() as u64 * samples) as f64;

    let log = EventLog::read_jsonl(text.as_bytes()).unwrap();
    let replay = compute_metrics(&log).unwrap();
    ensure(exit.len() > 50, format!("only {} trips completed", exit.len()))?;
    for (name, got, want) in [("awt", replay.awt, awt), ("att", replay.att, att), ("aql", replay.aql, aql)] {
        ensure(got == want, format!("compute_metrics {name} {got} vs oracle {want}"))?;
    }
    for (name, got, want) in [("awt", online.awt, awt), ("att", online.att, att), ("aql", online.aql, aql)] {
        let tol = 1e-12 * want.abs().max(1.0);
        ensure((got - want).abs() <= tol, format!("online {name} {got} vs oracle {want}"))?;
    }
    Ok(format!("{} trips: awt {awt:.4} att {att:.4} aql {aql:.4} equal the oracle", exit.len()))
}

// 9

fn feature_widths() -> Outcome {
    let toy = toy_net();
    let three = GridSpec { rows: 3, cols: 3, approach_length: 120.0, lanes: 2, ..GridSpec::standard_grid() }.build().unwrap();
    let three_split = RegionPartition::new(&three, vec![vec![1, 4], vec![3, 5, 7]]).unwrap();
    let trainer = semictde::qlearn::TrainerConfig { hidden: vec![16], ..toy_trainer() };
    let cases = [
        (ModelTag::FullyDecentralized, LOCAL_WIDTH, 0),
        (ModelTag::PartiallySemictde, LOCAL_WIDTH, 0),
        (ModelTag::Regionwide, 31, 14),
        (ModelTag::Onehop, 91, 74),
    ];
    let mut vectors = 0;
    ensure(LOCAL_WIDTH == 17, format!("local width {LOCAL_WIDTH}"))?;
    for (tag, total, regional) in cases {
        for (net, partition) in [(&toy, RegionPartition::single(&toy)), (&three, three_split.clone())] {
            let mut system = SemiCtde::<f64>::new(net, partition, tag, trainer.clone(), 3).map_err(|e| e.to_string())?;
            system.record_features = true;
            ensure(system.layout.width == total, format!("{}: layout width {}", tag.name(), system.layout.width))?;
            let block = match tag {
                ModelTag::Regionwide => RegionalBlock::RegionWide,
                ModelTag::Onehop => RegionalBlock::OneHop,
                _ => RegionalBlock::None,
            };
            ensure(block.width() == regional, format!("{}: regional block {}", tag.name(), block.width()))?;
            ensure(StateLayout::for_block(block).width == total, "layout for block")?;
            let flow = FlowConfig::preset("U1").unwrap().scaled(600.0, 1.0);
            let trips = semictde::mesosim::generate_demand(&flow, net, 4).unwrap();
            let params = SimParams { horizon: 600.0, ..SimParams::default() };
            let out = run_episode(&mut system, net, trips, params, Mode::Train { epsilon: 1.0 }, 4).map_err(|e| e.to_string())?;
            ensure(!out.features.is_empty(), "no features recorded")?;
            let nodes: BTreeSet<usize> = out.features.iter().map(|f| f.1).collect();
            ensure(nodes.len() == net.signalized_ids().len(), "every intersection encoded")?;
            for (t, node, x) in &out.features {
                ensure(x.len() == total, format!("{} node {node} t={t}: width {}", tag.name(), x.len()))?;
            }
            vectors += out.features.len();
        }
    }
    Ok(format!("local 17, regionwide 31, onehop 91 (regional block 74) constant over {vectors} encoded states"))
}

// 10

fn summary_awt(dir: &Path) -> Result<f64, String> {
    let text = fs::read_to_string(dir.join("eval_summary.csv")).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|&h| h == "awt_mean").ok_or("no awt_mean column")?;
    let row: Vec<&str> = lines.next().ok_or("empty summary")?.split(',').collect();
    row[col].parse().map_err(|e| format!("{e}"))
}

fn learning_smoke() -> Outcome {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let base = ExperimentConfig::toy();
    let seeds = [0u64, 1, 2];
    let mut baselines = BTreeMap::new();
    for kind in ["random", "fixed_time"] {
        let mut cfg = base.clone();
        cfg.model.tag = kind.into();
        let out = tmp.path().join(kind);
        cmd_eval(&cfg, None, &out).map_err(|e| e.to_string())?;
        baselines.insert(kind, summary_awt(&out)?);
    }
    let (random, fixed) = (baselines["random"], baselines["fixed_time"]);
    let mut lines = vec![format!("random {random:.2}, fixed-time {fixed:.2}")];
    let mut failures = Vec::new();
    for tag in ["onehop", "regionwide"] {
        let mut cfg = base.clone();
        cfg.model.tag = tag.into();
        let out = tmp.path().join("train");
        cmd_train(&cfg, &seeds, &out).map_err(|e| e.to_string())?;
        let mut per_seed = Vec::new();
        for &seed in &seeds {
            let dir = seed_dir(&out, tag, seed);
            let eval_out = dir.join("eval");
            cmd_eval(&cfg, Some(&dir.join("checkpoint")), &eval_out).map_err(|e| e.to_string())?;
            per_seed.push(summary_awt(&eval_out)?);
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let seeds_txt: Vec<String> = per_seed.iter().map(|a| format!("{a:.2}")).collect();
        lines.push(format!("{tag} {mean:.2} [{}]", seeds_txt.join(" ")));
        if !(mean <= 0.85 * random && mean < fixed) {
            failures.push(format!("{tag} mean awt {mean:.2}"));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    lines.push(format!("{secs:.0} s"));
    if secs >= 1200.0 {
        failures.push(format!("runtime {secs:.0} s"));
    }
    if failures.is_empty() {
        Ok(lines.join("; "))
    } else {
        Err(format!("{} ({})", failures.join(", "), lines.join("; ")))
    }
}

// 11

fn agent_bytes(system: &SemiCtde<f64>) -> Vec<u8> {
    let mut out = Vec::new();
    for agent in &system.agents {
        agent.learner.online.write_to(&mut out).unwrap();
        agent.learner.target.write_to(&mut out).unwrap();
        for t in agent.learner.memory.iter() {
            for x in t.s.iter().chain(&t.s_next).chain([&t.r]) {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.extend_from_slice(&(t.a as u64).to_le_bytes());
            out.push(t.done as u8);
            out.push(t.next_mask.0);
        }
    }
    for l in system.lambda.iter().flatten() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

fn spsa_sanity() -> Outcome {
    let schedule = SpsaSchedule { a: 0.2, ..SpsaSchedule::default() };
    let target = [0.5, 0.3, 0.8];
    let quadratic = |l: &[f64]| -l.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut slowest = 0;
    for seed in 0..20 {
        let path = maximize(quadratic, &[0.0; 3], &schedule, 200, seed);
        let hit = path.iter().position(|l| l.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() < 0.1);
        let k = hit.ok_or(format!("seed {seed}: never within 0.1, final {:?}", path.last()))?;
        slowest = slowest.max(k);
    }

    let net = toy_net();
    let partition = RegionPartition::new(&net, vec![vec![0, 1], vec![2, 3]]).unwrap();
    let trainer = semictde::qlearn::TrainerConfig { hidden: vec![32], ..toy_trainer() };
    let mut system = SemiCtde::<f64>::new(&net, partition, ModelTag::Regionwide, trainer, 21).map_err(|e| e.to_string())?;
    let flow = ExperimentConfig::toy().flow.resolve().unwrap();
    let params = toy_params();
    semictde::ctde::train(&mut system, &net, &flow, &params, 2, 21, 0).map_err(|e| e.to_string())?;
    ensure(system.total_transitions() > 0, "training filled no memory")?;
    let before = agent_bytes(&system);
    let deltas = [[1.0, -1.0, 1.0], [-1.0, -1.0, 1.0]];
    let probes = spsa_probe(&system, &net, &flow, &params, 0.2, &deltas, 77).map_err(|e| e.to_string())?;
    ensure(probes.len() == 2, "one probe pair per region")?;
    let after = agent_bytes(&system);
    ensure(before == after, "probe changed agent parameters or memories")?;
    Ok(format!(
        "20 seeds within 0.1 by iteration {slowest}; probes left {} bytes of networks and {} transitions identical",
        before.len(),
        system.total_transitions()
    ))
}

// 12

fn collect_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "run_timing.json") {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn reproducibility() -> Outcome {
    let mut cfg = ExperimentConfig::toy();
    cfg.training.episodes = 3;
    cfg.training.eval_repetitions = 2;
    cfg.output.event_log = true;
    cfg.output.dump_features = true;
    cfg.flow = FlowSection { total_vehicles: Some(400), horizon: Some(900.0), ..cfg.flow.clone() };
    let run = |root: &Path| -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
        cmd_train(&cfg, &[4], root).map_err(|e| e.to_string())?;
        let dir = seed_dir(root, "onehop", 4);
        cmd_eval(&cfg, Some(&dir.join("checkpoint")), &root.join("eval")).map_err(|e| e.to_string())?;
        Ok(collect_files(root))
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run(a.path())?;
    let second = run(b.path())?;
    ensure(first.keys().eq(second.keys()), "different file sets")?;
    for (path, bytes) in &first {
        ensure(second[path] == *bytes, format!("{} differs", path.display()))?;
    }
    let kinds = ["events_", "checkpoint/", "eval_summary.csv", "episodes.csv"];
    for k in kinds {
        ensure(first.keys().any(|p| p.to_string_lossy().contains(k)), format!("no {k} output"))?;
    }
    let total: usize = first.values().map(Vec::len).sum();
    Ok(format!("{} files ({total} bytes) identical across two runs", first.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("scope", scope),
        ("gradient correctness", gradient_check),
        ("ddqn target identity", ddqn_identity),
        ("region formation oracle", region_oracle),
        ("scheduling law", scheduling_law),
        ("mask safety", mask_safety),
        ("simulator conservation", conservation),
        ("metrics oracle", metrics_oracle),
        ("feature widths", feature_widths),
        ("learning smoke test", learning_smoke),
        ("spsa sanity", spsa_sanity),
        ("reproducibility", reproducibility),
    ];
    let mut failed = Vec::new();
    let mut report = std::io::stderr();
    for (k, (name, check)) in criteria.iter().enumerate() {
        let line = match check() {
            Ok(detail) => format!("[PASS] {:>2} {name}: {detail}", k + 1),
            Err(why) => {
                failed.push(k + 1);
                format!("[FAIL] {:>2} {name}: {why}", k + 1)
            }
        };
        writeln!(report, "{line}").unwrap();
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
