//! Simultaneous-perturbation stochastic approximation for the regional
//! reward coefficients, interleaved with training blocks.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctde::{decentralized_execute, derive_seed, train, EpisodeRecord, SemiCtde};
use crate::error::AgentError;
use crate::mesosim::{fmt_g6, generate_demand, FlowConfig, SimParams};
use crate::netmodel::RoadNetwork;
use crate::policies::ModelTag;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpsaSchedule {
    pub a: f64,
    pub big_a: f64,
    pub c: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub initial_episodes: usize,
    pub cycles: usize,
    pub train_episodes: usize,
}

impl Default for SpsaSchedule {
    fn default() -> Self {
        SpsaSchedule { a: 0.1, big_a: 10.0, c: 0.2, alpha: 0.602, gamma: 0.101, initial_episodes: 100, cycles: 10, train_episodes: 10 }
    }
}

impl SpsaSchedule {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.a > 0.0 && self.c > 0.0 && self.big_a >= 0.0) {
            return Err("spsa gains need a > 0, c > 0, A >= 0".into());
        }
        Ok(())
    }

    /// Step gain for the zero-based iteration `k`.
    pub fn a_k<S: Scalar>(&self, k: usize) -> S {
        S::of(self.a / (k as f64 + 1.0 + self.big_a).powf(self.alpha))
    }

    /// Perturbation size for the zero-based iteration `k`.
    pub fn c_k<S: Scalar>(&self, k: usize) -> S {
        S::of(self.c / (k as f64 + 1.0).powf(self.gamma))
    }
}

/// Independent ±1 entries.
pub fn rademacher<S: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<S> {
    (0..n).map(|_| if rng.random::<bool>() { S::one() } else { -S::one() }).collect()
}

/// `λ ± c·Δ`, each clamped at zero.
pub fn perturb<S: Scalar>(lambda: &[S], c_k: S, delta: &[S]) -> (Vec<S>, Vec<S>) {
    let plus = lambda.iter().zip(delta).map(|(&l, &d)| (l + c_k * d).max(S::zero())).collect();
    let minus = lambda.iter().zip(delta).map(|(&l, &d)| (l - c_k * d).max(S::zero())).collect();
    (plus, minus)
}

/// Two-sided estimate `(J+ - J-) / (2 c Δ_j)`; zero when `c` is zero.
pub fn gradient_estimate<S: Scalar>(j_plus: S, j_minus: S, c_k: S, delta: &[S]) -> Vec<S> {
    if c_k == S::zero() {
        return vec![S::zero(); delta.len()];
    }
    let two = S::of(2.0);
    delta.iter().map(|&d| (j_plus - j_minus) / (two * c_k * d)).collect()
}

/// Ascent step clamped at zero.
pub fn spsa_update<S: Scalar>(lambda: &[S], grad: &[S], a_k: S) -> Vec<S> {
    lambda.iter().zip(grad).map(|(&l, &g)| (l + a_k * g).max(S::zero())).collect()
}

/// Maximize `objective` from `start`; returns every iterate including the start.
pub fn maximize<S: Scalar, F: FnMut(&[S]) -> S>(
    mut objective: F,
    start: &[S],
    schedule: &SpsaSchedule,
    iterations: usize,
    seed: u64,
) -> Vec<Vec<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lambda = start.to_vec();
    let mut path = vec![lambda.clone()];
    for k in 0..iterations {
        let c_k = schedule.c_k::<S>(k);
        let delta = rademacher::<S, _>(lambda.len(), &mut rng);
        let (plus, minus) = perturb(&lambda, c_k, &delta);
        let g = gradient_estimate(objective(&plus), objective(&minus), c_k, &delta);
        lambda = spsa_update(&lambda, &g, schedule.a_k(k));
        path.push(lambda.clone());
    }
    path
}

/// One region's probe pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub region: usize,
    pub j_plus: f64,
    pub j_minus: f64,
    pub delta: [f64; 3],
    pub gradient: [f64; 3],
}

/// Gradient estimate per region from paired greedy episodes with frozen
/// agents. Region `r` is perturbed alone; both episodes of a pair share the
/// demand and the simulator seed.
pub fn spsa_probe<S: Scalar>(
    system: &SemiCtde<S>,
    net: &RoadNetwork,
    flow: &FlowConfig,
    params: &SimParams,
    c_k: f64,
    deltas: &[[f64; 3]],
    seed: u64,
) -> Result<Vec<ProbeResult>, AgentError> {
    let mut out = Vec::with_capacity(system.partition.len());
    for (region, delta) in deltas.iter().enumerate() {
        let (plus, minus) = perturb(&system.lambda[region], c_k, delta);
        let pair_seed = derive_seed(seed, region as u64);
        let trips = generate_demand(flow, net, pair_seed)?;
        let run = |lambda: Vec<f64>| -> Result<f64, AgentError> {
            let mut probe = system.clone();
            probe.lambda[region] = [lambda[0], lambda[1], lambda[2]];
            let p = SimParams { record_log: false, ..params.clone() };
            Ok(decentralized_execute(&probe, net, trips.clone(), p, pair_seed)?.regional_reward[region])
        };
        let j_plus = run(plus)?;
        let j_minus = run(minus)?;
        let g = gradient_estimate(j_plus, j_minus, c_k, delta);
        out.push(ProbeResult { region, j_plus, j_minus, delta: *delta, gradient: [g[0], g[1], g[2]] });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRecord {
    pub iteration: usize,
    pub region: usize,
    pub lambda: [f64; 3],
    pub j_plus: f64,
    pub j_minus: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TuneOutcome {
    pub history: Vec<LambdaRecord>,
    pub episodes: Vec<EpisodeRecord>,
}

/// Initial training block, then `cycles` of (training block, probe pair per
/// region, update). Exploration keeps decaying with training episodes only.
pub fn tune<S: Scalar>(
    system: &mut SemiCtde<S>,
    net: &RoadNetwork,
    flow: &FlowConfig,
    params: &SimParams,
    schedule: &SpsaSchedule,
    seed: u64,
) -> Result<TuneOutcome, AgentError> {
    if system.tag() != ModelTag::Regionwide {
        return Err(AgentError::UnknownModel(format!("{} has no tunable coefficients", system.tag().name())));
    }
    schedule.validate().map_err(AgentError::Manifest)?;
    let mut out = TuneOutcome::default();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5A5A));
    out.episodes.extend(train(system, net, flow, params, schedule.initial_episodes, seed, 0)?);
    let mut episode = schedule.initial_episodes;
    for (k, lambda) in system.lambda.iter().enumerate() {
        out.history.push(LambdaRecord { iteration: 0, region: k, lambda: *lambda, j_plus: 0.0, j_minus: 0.0 });
    }
    for cycle in 0..schedule.cycles {
        out.episodes.extend(train(system, net, flow, params, schedule.train_episodes, seed, episode)?);
        episode += schedule.train_episodes;
        let c_k = schedule.c_k::<f64>(cycle);
        let deltas: Vec<[f64; 3]> = (0..system.partition.len())
            .map(|_| {
                let d = rademacher::<f64, _>(3, &mut rng);
                [d[0], d[1], d[2]]
            })
            .collect();
        let probes = spsa_probe(system, net, flow, params, c_k, &deltas, derive_seed(seed, 0x7000 + cycle as u64))?;
        let a_k = schedule.a_k::<f64>(cycle);
        for p in probes {
            let next = spsa_update(&system.lambda[p.region], &p.gradient, a_k);
            system.lambda[p.region] = [next[0], next[1], next[2]];
            log::info!("spsa cycle {cycle} region {}: lambda {:?}", p.region, system.lambda[p.region]);
            out.history.push(LambdaRecord {
                iteration: cycle + 1,
                region: p.region,
                lambda: system.lambda[p.region],
                j_plus: p.j_plus,
                j_minus: p.j_minus,
            });
        }
    }
    Ok(out)
}

/// `iteration,region,lambda_spill,lambda_switch,lambda_out,j_plus,j_minus` rows.
pub fn write_lambda_csv<W: Write>(history: &[LambdaRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,region,lambda_spill,lambda_switch,lambda_out,j_plus,j_minus")?;
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.region,
            fmt_g6(r.lambda[0]),
            fmt_g6(r.lambda[1]),
            fmt_g6(r.lambda[2]),
            fmt_g6(r.j_plus),
            fmt_g6(r.j_minus)
        )?;
    }
    Ok(())
}
