//! Vehicle demand: entry times drawn from a named arrival law, uniform
//! origin/destination over boundary points, shortest-path routes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Weibull};
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::netmodel::{LinkId, Movement, RoadNetwork};

use super::DEFAULT_SATURATION_HEADWAY;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalLaw {
    Uniform,
    Gaussian,
    Weibull,
}

/// A traffic flow. `avg_rate` is a label carried with the preset and is
/// not checked against `total_vehicles / horizon`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub name: String,
    pub distribution: ArrivalLaw,
    pub total_vehicles: usize,
    /// Vehicles per second.
    pub avg_rate: f64,
    /// Seconds.
    pub horizon: f64,
    /// Gaussian mean (default horizon / 2).
    #[serde(default)]
    pub center: Option<f64>,
    /// Gaussian standard deviation (default horizon / 6).
    #[serde(default)]
    pub spread: Option<f64>,
    /// Weibull shape (default 2); scale is set so the mean is `center`.
    #[serde(default)]
    pub weibull_shape: Option<f64>,
}

pub const FULL_HORIZON: f64 = 18_000.0;

impl FlowConfig {
    pub fn new(name: &str, distribution: ArrivalLaw, total_vehicles: usize, avg_rate: f64, horizon: f64) -> Self {
        FlowConfig {
            name: name.to_string(),
            distribution,
            total_vehicles,
            avg_rate,
            horizon,
            center: None,
            spread: None,
            weibull_shape: None,
        }
    }

    /// Built-in flow presets over the 18 000 s horizon.
    pub fn preset(name: &str) -> Option<FlowConfig> {
        let (law, total, rate) = match name {
            "U1" => (ArrivalLaw::Uniform, 39_600, 2.2),
            "G1" => (ArrivalLaw::Gaussian, 10_800, 0.60),
            "G2" => (ArrivalLaw::Gaussian, 13_500, 0.75),
            "W1" => (ArrivalLaw::Weibull, 14_400, 0.60),
            "W2" => (ArrivalLaw::Weibull, 10_800, 0.70),
            "W3" => (ArrivalLaw::Weibull, 18_000, 1.0),
            "W4" => (ArrivalLaw::Weibull, 19_800, 1.1),
            _ => return None,
        };
        Some(FlowConfig::new(name, law, total, rate, FULL_HORIZON))
    }

    pub const PRESET_NAMES: [&'static str; 7] = ["U1", "G1", "G2", "W1", "W2", "W3", "W4"];

    /// Same arrival law compressed onto a shorter horizon with a vehicle
    /// count scaled by `demand_scale`.
    pub fn scaled(&self, horizon: f64, demand_scale: f64) -> FlowConfig {
        let total = ((self.total_vehicles as f64) * demand_scale * horizon / self.horizon).round() as usize;
        FlowConfig {
            name: self.name.clone(),
            distribution: self.distribution,
            total_vehicles: total.max(1),
            avg_rate: self.avg_rate * demand_scale,
            horizon,
            center: self.center.map(|c| c * horizon / self.horizon),
            spread: self.spread.map(|s| s * horizon / self.horizon),
            weibull_shape: self.weibull_shape,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.total_vehicles == 0 {
            return Err(SimError::InvalidFlow(format!("{}: total_vehicles must be positive", self.name)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SimError::InvalidFlow(format!("{}: horizon must be positive", self.name)));
        }
        if let Some(s) = self.spread {
            if !(s > 0.0) {
                return Err(SimError::InvalidFlow(format!("{}: spread must be positive", self.name)));
            }
        }
        if let Some(k) = self.weibull_shape {
            if !(k > 0.0) {
                return Err(SimError::InvalidFlow(format!("{}: weibull_shape must be positive", self.name)));
            }
        }
        Ok(())
    }

    pub fn center(&self) -> f64 {
        self.center.unwrap_or(self.horizon / 2.0)
    }

    pub fn spread(&self) -> f64 {
        self.spread.unwrap_or(self.horizon / 6.0)
    }

    pub fn weibull_shape(&self) -> f64 {
        self.weibull_shape.unwrap_or(2.0)
    }

    /// Weibull scale giving mean `center()`.
    pub fn weibull_scale(&self) -> f64 {
        let k = self.weibull_shape();
        self.center() / gamma(1.0 + 1.0 / k)
    }
}

/// One vehicle to inject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub entry_time: f64,
    pub origin: usize,
    pub destination: usize,
    pub route: Vec<LinkId>,
}

/// Sample `total_vehicles` trips. Entry times are sorted and lie in
/// `[0, horizon)`.
pub fn generate_demand(flow: &FlowConfig, network: &RoadNetwork, seed: u64) -> Result<Vec<Trip>, SimError> {
    flow.validate()?;
    let nb = network.boundaries.len();
    if nb < 2 {
        return Err(SimError::InvalidFlow("network needs at least two boundary points".into()));
    }
    let mut routes = vec![Vec::new(); nb * nb];
    for a in 0..nb {
        for b in 0..nb {
            if a != b {
                routes[a * nb + b] = network.shortest_route(a, b).ok_or(SimError::NoRoute { from: a, to: b })?;
            }
        }
    }

    warn_if_over_capacity(flow, network);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = sample_entry_times(flow, &mut rng);
    times.sort_by(f64::total_cmp);

    let trips = times
        .into_iter()
        .map(|t| {
            let origin = rng.random_range(0..nb);
            let mut destination = rng.random_range(0..nb - 1);
            if destination >= origin {
                destination += 1;
            }
            Trip { entry_time: t, origin, destination, route: routes[origin * nb + destination].clone() }
        })
        .collect();
    Ok(trips)
}

fn sample_entry_times(flow: &FlowConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let h = flow.horizon;
    let n = flow.total_vehicles;
    match flow.distribution {
        ArrivalLaw::Uniform => (0..n).map(|_| rng.random_range(0.0..h)).collect(),
        ArrivalLaw::Gaussian => {
            let law = Normal::new(flow.center(), flow.spread()).expect("validated spread");
            truncated(n, h, rng, |r| law.sample(r))
        }
        ArrivalLaw::Weibull => {
            let law = Weibull::new(flow.weibull_scale(), flow.weibull_shape()).expect("validated shape");
            truncated(n, h, rng, |r| law.sample(r))
        }
    }
}

fn truncated(n: usize, h: f64, rng: &mut ChaCha8Rng, mut draw: impl FnMut(&mut ChaCha8Rng) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = draw(rng);
        if (0.0..h).contains(&x) {
            out.push(x);
        }
    }
    out
}

fn warn_if_over_capacity(flow: &FlowConfig, network: &RoadNetwork) {
    let per_entry = flow.total_vehicles as f64 / flow.horizon / network.boundaries.len() as f64;
    for b in &network.boundaries {
        let link = &network.links[b.entry];
        let lanes: u32 = Movement::ALL.iter().map(|&m| link.group_lanes(m)).sum();
        let capacity = lanes as f64 / DEFAULT_SATURATION_HEADWAY;
        if per_entry > capacity {
            log::warn!(
                "flow {}: {:.3} veh/s per entry exceeds entry capacity {:.3} veh/s at boundary {}",
                flow.name,
                per_entry,
                capacity,
                b.id
            );
        }
    }
}

/// Lanczos approximation of the gamma function (g = 7, n = 9).
pub(crate) fn gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut a = COEF[0];
        let t = x + G + 0.5;
        for (i, c) in COEF.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }
}
