//! Command implementations. Every output lands under the given directory and
//! is a pure function of the configuration and seeds, except
//! `run_timing.json`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use semictde::ctde::{decentralized_execute, derive_seed, load_bundle, save_bundle, train, EpisodeRecord, SemiCtde};
use semictde::mesosim::{fmt_g6, generate_demand, FlowConfig, MetricsReport, SimParams, Simulation};
use semictde::netmodel::RoadNetwork;
use semictde::policies::{
    run_controller, ActuatedController, ActuatedParams, FixedTimeController, ModelTag, RandomController, SignalController,
};
use semictde::regionform::{
    alpha_candidates, alpha_cut_partition, build_fuzzy_graph, collect_warmup_congestion, CongestionGraph, RegionPartition,
};
use semictde::spsa::{tune, write_lambda_csv};

use crate::config::{ControllerKind, ExperimentConfig, PartitionSource};
use crate::CliError;

pub const MOVING_AVERAGE_WINDOW: usize = 10;

/// Network, training flow and simulator parameters resolved from a config.
pub struct Setup {
    pub net: RoadNetwork,
    pub flow: FlowConfig,
    pub params: SimParams,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let net = cfg.network.build()?;
        let flow = cfg.flow.resolve()?;
        let params = cfg.simulation.params(flow.horizon);
        Ok(Setup { net, flow, params })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_with<F: FnOnce(&mut dyn Write) -> std::io::Result<()>>(path: &Path, f: F) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(fs::File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?);
    f(&mut out)?;
    out.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[derive(Debug, Serialize)]
struct Timing {
    command: String,
    wall_clock_secs: f64,
}

fn write_timing(dir: &Path, command: &str, started: Instant) -> Result<(), CliError> {
    write_json(&dir.join("run_timing.json"), &Timing { command: command.into(), wall_clock_secs: started.elapsed().as_secs_f64() })
}

/// Partition from the configured source; the congestion graph is returned
/// when it was computed.
pub fn build_partition(cfg: &ExperimentConfig, setup: &Setup) -> Result<(RegionPartition, Option<CongestionGraph>), CliError> {
    let net = &setup.net;
    match cfg.partition.source {
        PartitionSource::Single => Ok((RegionPartition::single(net), None)),
        PartitionSource::Singletons => Ok((RegionPartition::singletons(net), None)),
        PartitionSource::File => {
            let path = cfg.partition.file.as_ref().expect("validated");
            let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            Ok((RegionPartition::from_json(net, &text)?, None))
        }
        PartitionSource::Compute => {
            let graph = congestion_graph(cfg, setup)?;
            Ok((alpha_cut_partition(&graph, cfg.partition.alpha, net)?, Some(graph)))
        }
    }
}

fn congestion_graph(cfg: &ExperimentConfig, setup: &Setup) -> Result<CongestionGraph, CliError> {
    let flow = match &cfg.partition.warmup_flow {
        Some(name) => FlowConfig::preset(name).ok_or_else(|| CliError::Config(format!("unknown warm-up flow {name:?}")))?,
        None => setup.flow.clone(),
    };
    let queues = collect_warmup_congestion(&setup.net, &flow, cfg.partition.warmup_horizon, cfg.partition.warmup_seed, &setup.params)?;
    Ok(build_fuzzy_graph(&queues, &setup.net))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub regions: usize,
    pub largest: usize,
}

/// Warm-up, alpha-cut at the configured alpha, and the region count for
/// every swept alpha (every distinct membership value when none are given).
pub fn cmd_partition(cfg: &ExperimentConfig, out: &Path) -> Result<(RegionPartition, Vec<SweepRow>), CliError> {
    let started = Instant::now();
    let setup = Setup::new(cfg)?;
    let graph = congestion_graph(cfg, &setup)?;
    let part = alpha_cut_partition(&graph, cfg.partition.alpha, &setup.net)?;
    let alphas = if cfg.partition.sweep.is_empty() { alpha_candidates(&graph) } else { cfg.partition.sweep.clone() };
    let mut rows = Vec::with_capacity(alphas.len());
    for alpha in alphas {
        let p = alpha_cut_partition(&graph, alpha, &setup.net)?;
        rows.push(SweepRow { alpha, regions: p.len(), largest: p.regions.iter().map(Vec::len).max().unwrap_or(0) });
    }
    write_file(&out.join("partition.json"), part.to_json().as_bytes())?;
    write_with(&out.join("alpha_sweep.csv"), |w| {
        writeln!(w, "alpha,regions,largest_region")?;
        for r in &rows {
            writeln!(w, "{},{},{}", fmt_g6(r.alpha), r.regions, r.largest)?;
        }
        Ok(())
    })?;
    write_with(&out.join("edges.csv"), |w| {
        writeln!(w, "from,to,weight,mu")?;
        for (k, &(u, v, c)) in graph.edges.iter().enumerate() {
            writeln!(w, "{},{},{},{}", graph.vertices[u], graph.vertices[v], fmt_g6(c), fmt_g6(graph.mu[k]))?;
        }
        Ok(())
    })?;
    write_timing(out, "partition", started)?;
    Ok((part, rows))
}

/// Reproducibility record of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub model: String,
    pub seed: u64,
    pub partition_hash: String,
    pub checkpoint_files: Vec<String>,
    pub lambda: Vec<[f64; 3]>,
    pub episodes: Vec<EpisodeRecord>,
}

fn learned_tag(cfg: &ExperimentConfig, command: &str) -> Result<ModelTag, CliError> {
    match cfg.model.kind()? {
        ControllerKind::Learned(tag) => Ok(tag),
        other => Err(CliError::Config(format!("{command}: {} has nothing to train", other.name()))),
    }
}

fn new_system(cfg: &ExperimentConfig, setup: &Setup, tag: ModelTag, partition: RegionPartition, seed: u64) -> Result<SemiCtde<f64>, CliError> {
    let mut system = SemiCtde::<f64>::new(&setup.net, partition, tag, cfg.training.trainer.clone(), seed)?;
    if let Some(l) = cfg.model.lambda {
        system.lambda.iter_mut().for_each(|x| *x = l);
    }
    Ok(system)
}

pub fn seed_dir(out: &Path, model: &str, seed: u64) -> PathBuf {
    out.join(model).join(format!("seed_{seed}"))
}

/// Trailing mean over at most `window` values.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

fn write_episode_csvs(dir: &Path, records: &[EpisodeRecord]) -> Result<(), CliError> {
    write_with(&dir.join("episodes.csv"), |w| {
        writeln!(w, "episode,epsilon,awt,att,aql,completed,train_steps,mean_loss")?;
        for r in records {
            let loss = r.mean_loss.map(fmt_g6).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.episode,
                fmt_g6(r.epsilon),
                fmt_g6(r.awt),
                fmt_g6(r.att),
                fmt_g6(r.aql),
                r.completed,
                r.train_steps,
                loss
            )?;
        }
        Ok(())
    })?;
    let awt: Vec<f64> = records.iter().map(|r| r.awt).collect();
    let att: Vec<f64> = records.iter().map(|r| r.att).collect();
    let (awt_ma, att_ma) = (moving_average(&awt, MOVING_AVERAGE_WINDOW), moving_average(&att, MOVING_AVERAGE_WINDOW));
    write_with(&dir.join("curves.csv"), |w| {
        writeln!(w, "episode,awt_ma10,att_ma10")?;
        for (k, r) in records.iter().enumerate() {
            writeln!(w, "{},{},{}", r.episode, fmt_g6(awt_ma[k]), fmt_g6(att_ma[k]))?;
        }
        Ok(())
    })
}

fn finish_training_run(
    cfg: &ExperimentConfig,
    command: &str,
    dir: &Path,
    system: &SemiCtde<f64>,
    seed: u64,
    episodes: Vec<EpisodeRecord>,
) -> Result<RunManifest, CliError> {
    write_episode_csvs(dir, &episodes)?;
    let ckpt = dir.join("checkpoint");
    let files = save_bundle(system, &ckpt, &cfg.hash())?;
    write_file(&dir.join("partition.json"), system.partition.to_json().as_bytes())?;
    let manifest = RunManifest {
        command: command.into(),
        config_hash: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        model: system.tag().name().into(),
        seed,
        partition_hash: system.partition.hash(),
        checkpoint_files: files.iter().map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string()).collect(),
        lambda: system.lambda.clone(),
        episodes,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_file(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    Ok(manifest)
}

/// Train the configured model once per seed.
pub fn cmd_train(cfg: &ExperimentConfig, seeds: &[u64], out: &Path) -> Result<Vec<RunManifest>, CliError> {
    let tag = learned_tag(cfg, "train")?;
    let setup = Setup::new(cfg)?;
    let (partition, _) = build_partition(cfg, &setup)?;
    let mut manifests = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let started = Instant::now();
        let dir = seed_dir(out, tag.name(), seed);
        let mut system = new_system(cfg, &setup, tag, partition.clone(), seed)?;
        let episodes = train(&mut system, &setup.net, &setup.flow, &setup.params, cfg.training.episodes, seed, 0)?;
        write_with(&dir.join("loss.csv"), |w| {
            writeln!(w, "episode,train_steps,mean_loss")?;
            for r in &episodes {
                writeln!(w, "{},{},{}", r.episode, r.train_steps, r.mean_loss.map(fmt_g6).unwrap_or_default())?;
            }
            Ok(())
        })?;
        manifests.push(finish_training_run(cfg, "train", &dir, &system, seed, episodes)?);
        write_timing(&dir, "train", started)?;
    }
    Ok(manifests)
}

/// SPSA block plan on a RegionWide run, once per seed.
pub fn cmd_tune(cfg: &ExperimentConfig, seeds: &[u64], out: &Path) -> Result<Vec<RunManifest>, CliError> {
    let tag = learned_tag(cfg, "tune")?;
    if tag != ModelTag::Regionwide {
        return Err(CliError::Config(format!("tune: {} has no regional coefficients to tune", tag.name())));
    }
    let setup = Setup::new(cfg)?;
    let (partition, _) = build_partition(cfg, &setup)?;
    let mut manifests = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let started = Instant::now();
        let dir = seed_dir(out, "tune", seed);
        let mut system = new_system(cfg, &setup, tag, partition.clone(), seed)?;
        let outcome = tune(&mut system, &setup.net, &setup.flow, &setup.params, &cfg.spsa, seed)?;
        write_with(&dir.join("lambda.csv"), |w| write_lambda_csv(&outcome.history, w))?;
        manifests.push(finish_training_run(cfg, "tune", &dir, &system, seed, outcome.episodes)?);
        write_timing(&dir, "tune", started)?;
    }
    Ok(manifests)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub flow: String,
    pub model: String,
    pub repetition: usize,
    pub seed: u64,
    pub aql: f64,
    pub awt: f64,
    pub att: f64,
    pub completed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub flow: String,
    pub model: String,
    pub runs: usize,
    pub aql_mean: f64,
    pub aql_std: f64,
    pub awt_mean: f64,
    pub awt_std: f64,
    pub att_mean: f64,
    pub att_std: f64,
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(rows: &[EvalRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.flow.clone(), r.model.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(flow, model)| {
            let sel: Vec<&EvalRow> = rows.iter().filter(|r| r.flow == flow && r.model == model).collect();
            let col = |f: fn(&EvalRow) -> f64| mean_std(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (aql_mean, aql_std) = col(|r| r.aql);
            let (awt_mean, awt_std) = col(|r| r.awt);
            let (att_mean, att_std) = col(|r| r.att);
            SummaryRow { flow, model, runs: sel.len(), aql_mean, aql_std, awt_mean, awt_std, att_mean, att_std }
        })
        .collect()
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<(), CliError> {
    write_with(path, |w| {
        writeln!(w, "flow,model,repetition,seed,aql,awt,att,completed")?;
        for r in rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.flow,
                r.model,
                r.repetition,
                r.seed,
                fmt_g6(r.aql),
                fmt_g6(r.awt),
                fmt_g6(r.att),
                r.completed
            )?;
        }
        Ok(())
    })
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    write_with(path, |w| {
        writeln!(w, "flow,model,runs,aql_mean,aql_std,awt_mean,awt_std,att_mean,att_std")?;
        for r in rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.flow,
                r.model,
                r.runs,
                fmt_g6(r.aql_mean),
                fmt_g6(r.aql_std),
                fmt_g6(r.awt_mean),
                fmt_g6(r.awt_std),
                fmt_g6(r.att_mean),
                fmt_g6(r.att_std)
            )?;
        }
        Ok(())
    })
}

/// `(bin_start, count)` over fixed-width bins starting at 0.
pub fn histogram(values: &[f64], bin: f64) -> Vec<(f64, usize)> {
    let bins = values.iter().map(|&v| (v.max(0.0) / bin).floor() as usize).max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[(v.max(0.0) / bin).floor() as usize] += 1;
    }
    counts.into_iter().enumerate().map(|(k, c)| (k as f64 * bin, c)).collect()
}

/// What to evaluate: a baseline controller or a frozen agent set.
pub enum Evaluated<'a> {
    Baseline(ControllerKind),
    Agents(&'a SemiCtde<f64>),
}

impl Evaluated<'_> {
    fn name(&self) -> &'static str {
        match self {
            Evaluated::Baseline(k) => k.name(),
            Evaluated::Agents(s) => s.tag().name(),
        }
    }
}

fn baseline(kind: ControllerKind, net: &RoadNetwork, seed: u64) -> Box<dyn SignalController> {
    match kind {
        ControllerKind::FixedTime => Box::new(FixedTimeController::new(net)),
        ControllerKind::Random => Box::new(RandomController::new(seed)),
        ControllerKind::Actuated => Box::new(ActuatedController::new(net, ActuatedParams::default())),
        ControllerKind::Learned(_) => unreachable!("learned models are evaluated through their agents"),
    }
}

/// One evaluation episode.
pub struct EvalEpisode {
    pub metrics: MetricsReport,
    pub event_log: Option<semictde::mesosim::EventLog>,
    pub features: Vec<(f64, usize, Vec<f64>)>,
}

pub fn evaluate_once(what: &Evaluated, net: &RoadNetwork, flow: &FlowConfig, params: &SimParams, seed: u64, record: bool) -> Result<EvalEpisode, CliError> {
    let trips = generate_demand(flow, net, seed)?;
    let params = SimParams { record_log: record, ..params.clone() };
    match what {
        Evaluated::Baseline(kind) => {
            let mut sim = Simulation::new(net, trips, params)?;
            let mut ctrl = baseline(*kind, net, derive_seed(seed, 0xBA5E));
            run_controller(&mut sim, ctrl.as_mut())?;
            let metrics = sim.report()?;
            Ok(EvalEpisode { metrics, event_log: record.then(|| sim.take_event_log()), features: Vec::new() })
        }
        Evaluated::Agents(system) => {
            let o = if record {
                let mut s = (*system).clone();
                s.record_features = true;
                decentralized_execute(&s, net, trips, params, seed)?
            } else {
                decentralized_execute(system, net, trips, params, seed)?
            };
            Ok(EvalEpisode { metrics: o.metrics, event_log: o.event_log, features: o.features })
        }
    }
}

/// Flows evaluated by `eval`: the configured presets, else the training flow.
pub fn eval_flows(cfg: &ExperimentConfig, setup: &Setup) -> Vec<FlowConfig> {
    if cfg.training.eval_flows.is_empty() {
        vec![setup.flow.clone()]
    } else {
        cfg.training.eval_flows.iter().map(|n| FlowConfig::preset(n).expect("validated")).collect()
    }
}

/// Demand seed of evaluation repetition `rep` on flow number `flow_index`;
/// shared by every model so comparisons are paired.
pub fn eval_seed(cfg: &ExperimentConfig, flow_index: usize, rep: usize) -> u64 {
    derive_seed(cfg.training.eval_seed, ((flow_index as u64) << 32) | rep as u64)
}

/// Greedy evaluation over every evaluation flow and repetition. Writes per
/// run rows, the mean ± std table, the first repetition's time series and
/// the waiting-time histogram over all repetitions.
pub fn evaluate(cfg: &ExperimentConfig, setup: &Setup, what: &Evaluated, out: &Path) -> Result<Vec<EvalRow>, CliError> {
    let mut rows = Vec::new();
    let model = what.name();
    for (fi, flow) in eval_flows(cfg, setup).iter().enumerate() {
        let params = cfg.simulation.params(flow.horizon);
        let mut waits = Vec::new();
        for rep in 0..cfg.training.eval_repetitions {
            let seed = eval_seed(cfg, fi, rep);
            let first = rep == 0;
            let ep = evaluate_once(what, &setup.net, flow, &params, seed, first && (cfg.output.event_log || cfg.output.dump_features))?;
            if first {
                write_with(&out.join(format!("timeseries_{}.csv", flow.name)), |w| ep.metrics.write_time_series_csv(w))?;
                if let (true, Some(log)) = (cfg.output.event_log, &ep.event_log) {
                    write_with(&out.join(format!("events_{}.jsonl", flow.name)), |w| log.write_jsonl(w))?;
                }
                if cfg.output.dump_features && !ep.features.is_empty() {
                    write_with(&out.join(format!("features_{}.csv", flow.name)), |w| {
                        let width = ep.features[0].2.len();
                        let cols: Vec<String> = (0..width).map(|k| format!("x{k}")).collect();
                        writeln!(w, "t,node,{}", cols.join(","))?;
                        for (t, node, x) in &ep.features {
                            let vals: Vec<String> = x.iter().map(|&v| fmt_g6(v)).collect();
                            writeln!(w, "{},{},{}", fmt_g6(*t), node, vals.join(","))?;
                        }
                        Ok(())
                    })?;
                }
            }
            waits.extend_from_slice(&ep.metrics.wait_times);
            rows.push(EvalRow {
                flow: flow.name.clone(),
                model: model.into(),
                repetition: rep,
                seed,
                aql: ep.metrics.aql,
                awt: ep.metrics.awt,
                att: ep.metrics.att,
                completed: ep.metrics.completed,
            });
        }
        let bin = cfg.output.histogram_bin;
        write_with(&out.join(format!("wait_histogram_{}.csv", flow.name)), |w| {
            writeln!(w, "bin_start,bin_end,count")?;
            for (start, count) in histogram(&waits, bin) {
                writeln!(w, "{},{},{}", fmt_g6(start), fmt_g6(start + bin), count)?;
            }
            Ok(())
        })?;
    }
    write_eval_csv(&out.join("eval_runs.csv"), &rows)?;
    write_summary_csv(&out.join("eval_summary.csv"), &summarize(&rows))?;
    Ok(rows)
}

/// Evaluate the configured controller; learned models need a checkpoint.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>, out: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let started = Instant::now();
    let setup = Setup::new(cfg)?;
    let rows = match cfg.model.kind()? {
        ControllerKind::Learned(tag) => {
            let dir = checkpoint.ok_or_else(|| CliError::Config(format!("eval: {} needs --checkpoint", tag.name())))?;
            if !dir.join("manifest.json").exists() {
                return Err(CliError::Runtime(format!("missing checkpoint: {}", dir.display())));
            }
            let partition = partition_for_checkpoint(cfg, &setup, dir)?;
            let system = load_bundle::<f64>(dir, &setup.net, partition, cfg.training.trainer.clone())?;
            if system.tag() != tag {
                return Err(CliError::Config(format!("checkpoint holds {}, config asks for {}", system.tag().name(), tag.name())));
            }
            evaluate(cfg, &setup, &Evaluated::Agents(&system), out)?
        }
        kind => evaluate(cfg, &setup, &Evaluated::Baseline(kind), out)?,
    };
    write_timing(out, "eval", started)?;
    Ok(summarize(&rows))
}

/// The partition saved next to a checkpoint, else the configured one.
fn partition_for_checkpoint(cfg: &ExperimentConfig, setup: &Setup, ckpt: &Path) -> Result<RegionPartition, CliError> {
    for candidate in [ckpt.join("partition.json"), ckpt.parent().map(|p| p.join("partition.json")).unwrap_or_default()] {
        if candidate.is_file() {
            let text = fs::read_to_string(&candidate)?;
            return Ok(RegionPartition::from_json(&setup.net, &text)?);
        }
    }
    Ok(build_partition(cfg, setup)?.0)
}

/// Train every learned model of the sweep list per seed, evaluate all of
/// them on the evaluation flows and write one combined table.
pub fn cmd_sweep(cfg: &ExperimentConfig, seeds: &[u64], out: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let started = Instant::now();
    let setup = Setup::new(cfg)?;
    let mut all = Vec::new();
    let mut partition = None;
    for name in &cfg.sweep.models {
        match ControllerKind::parse(name)? {
            ControllerKind::Learned(tag) => {
                if partition.is_none() {
                    partition = Some(build_partition(cfg, &setup)?.0);
                }
                let part = partition.clone().expect("built above");
                for &seed in seeds {
                    let dir = seed_dir(out, tag.name(), seed);
                    let mut system = new_system(cfg, &setup, tag, part.clone(), seed)?;
                    let episodes = train(&mut system, &setup.net, &setup.flow, &setup.params, cfg.training.episodes, seed, 0)?;
                    finish_training_run(cfg, "sweep", &dir, &system, seed, episodes)?;
                    all.extend(evaluate(cfg, &setup, &Evaluated::Agents(&system), &dir.join("eval"))?);
                }
            }
            kind => all.extend(evaluate(cfg, &setup, &Evaluated::Baseline(kind), &out.join(kind.name()))?),
        }
    }
    let summary = summarize(&all);
    write_eval_csv(&out.join("sweep_runs.csv"), &all)?;
    write_summary_csv(&out.join("sweep_summary.csv"), &summary)?;
    write_timing(out, "sweep", started)?;
    Ok(summary)
}
