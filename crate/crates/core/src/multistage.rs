//! Repeated games on randomly sampled interaction networks.
//!
//! Each stage samples a directed network from pairwise probabilities, builds
//! weights from profiles gated on the stage-initial biases, solves the game,
//! and hands the final opinions to the next stage as its biases.
//!
//! Randomness comes from ChaCha20 seeded with the scenario seed. Stream 0
//! initializes the population (biases, confidences, fixed probabilities);
//! stream `s` drives stage `s` (probability draws first, then edges in
//! row-major pair order).

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{ExistenceReport, GameSpec, NashSolution, TrajectorySample};
use crate::matfun::DEFAULT_CRITICAL_TOL;
use crate::weights::{build_influence_root, build_stubbornness, square_to_weight, AgentProfile, GammaRule};

/// Margin that turns the open neutral interval into a closed one.
pub const OPEN_INTERVAL_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasInit {
    Fixed(Vec<f64>),
    /// Every issue drawn independently from `[low, high]`.
    Uniform { low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonInit {
    Fixed(f64),
    Uniform { low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub count: usize,
    #[serde(default)]
    pub attributes: Vec<f64>,
    pub epsilon: EpsilonInit,
    /// Correlation used for every issue pair.
    pub correlation: f64,
    #[serde(default = "one")]
    pub c: f64,
    pub stubborn_diag: Vec<f64>,
    pub bias: BiasInit,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_grid() -> usize {
    101
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoRule {
    Constant(f64),
    /// Drawn uniformly per pair.
    Interval { low: f64, high: f64 },
    /// Explicit `n x n` matrix; the diagonal is ignored.
    Matrix(Vec<Vec<f64>>),
}

/// Forces `ρ_ij = rho` for listeners `i` in `listener` and targets `j` in `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoOverride {
    pub listener: String,
    pub target: String,
    pub rho: f64,
    /// Also force the reverse direction.
    #[serde(default)]
    pub reciprocal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub groups: Vec<GroupSpec>,
    pub stages: usize,
    pub stage_horizon: f64,
    pub rho: RhoRule,
    #[serde(default)]
    pub overrides: Vec<RhoOverride>,
    /// Redraw interval probabilities at every stage.
    #[serde(default = "yes")]
    pub redraw_rho: bool,
    /// Draw one interval probability per unordered pair.
    #[serde(default)]
    pub symmetric_rho: bool,
    pub gamma: GammaRule,
    #[serde(default)]
    pub seed: u64,
    /// Trajectory samples per stage.
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    #[serde(default = "default_tol")]
    pub critical_tol: f64,
}

fn default_tol() -> f64 {
    DEFAULT_CRITICAL_TOL
}

impl ScenarioSpec {
    pub fn agents(&self) -> usize {
        self.groups.iter().map(|g| g.count).sum()
    }

    pub fn issues(&self) -> usize {
        self.groups.first().map_or(0, |g| g.stubborn_diag.len())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    /// Group index of each agent, agents laid out group by group.
    pub fn membership(&self) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(k, g)| std::iter::repeat_n(k, g.count))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |what: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{what} probability {p} outside [0, 1]")))
            }
        };
        if self.groups.is_empty() || self.agents() == 0 {
            return Err(Error::Invalid("scenario has no agents".into()));
        }
        if self.stages == 0 {
            return Err(Error::Invalid("scenario needs at least one stage".into()));
        }
        if !(self.stage_horizon > 0.0 && self.stage_horizon.is_finite()) {
            return Err(Error::Invalid(format!("stage horizon {} must be positive", self.stage_horizon)));
        }
        if self.grid_points < 2 {
            return Err(Error::Invalid("grid_points must be at least 2".into()));
        }
        let d = self.issues();
        for g in &self.groups {
            if g.stubborn_diag.len() != d {
                return Err(Error::Dimension(format!("group {} has {} issues, expected {d}", g.name, g.stubborn_diag.len())));
            }
            match &g.bias {
                BiasInit::Fixed(b) if b.len() != d => {
                    return Err(Error::Dimension(format!("group {} fixed bias has {} issues", g.name, b.len())))
                }
                BiasInit::Uniform { low, high } if !(low <= high) => {
                    return Err(Error::Invalid(format!("group {} bias interval is empty", g.name)))
                }
                _ => {}
            }
            if let EpsilonInit::Uniform { low, high } = g.epsilon {
                if !(0.0 <= low && low <= high) {
                    return Err(Error::Invalid(format!("group {} confidence interval is invalid", g.name)));
                }
            }
            if !(-1.0..=1.0).contains(&g.correlation) {
                return Err(Error::Invalid(format!("group {} correlation outside [-1, 1]", g.name)));
            }
        }
        match &self.rho {
            RhoRule::Constant(p) => prob("interaction", *p)?,
            RhoRule::Interval { low, high } => {
                prob("interaction", *low)?;
                prob("interaction", *high)?;
                if low > high {
                    return Err(Error::Invalid("interaction interval is empty".into()));
                }
            }
            RhoRule::Matrix(m) => {
                let n = self.agents();
                if m.len() != n || m.iter().any(|r| r.len() != n) {
                    return Err(Error::Dimension(format!("interaction matrix must be {n}x{n}")));
                }
                for p in m.iter().flatten() {
                    prob("interaction", *p)?;
                }
            }
        }
        for o in &self.overrides {
            prob("override", o.rho)?;
            for name in [&o.listener, &o.target] {
                if self.group_index(name).is_none() {
                    return Err(Error::Invalid(format!("override names unknown group {name}")));
                }
            }
        }
        Ok(())
    }
}

/// Directed interaction network; `(i, j)` means agent `i` listens to agent `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    pub agents: usize,
    pub edges: Vec<(usize, usize)>,
}

/// Dense row-major matrix of interaction probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities {
    n: usize,
    values: Vec<f64>,
}

impl Probabilities {
    pub fn constant(n: usize, p: f64) -> Self {
        Self { n, values: vec![p; n * n] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, p: f64) {
        self.values[i * self.n + j] = p;
    }

    pub fn agents(&self) -> usize {
        self.n
    }
}

/// Includes each ordered pair `(i, j)`, `i != j`, independently with
/// probability `ρ_ij`, drawing in row-major order.
pub fn sample_network(probs: &Probabilities, rng: &mut impl Rng) -> Network {
    let n = probs.agents();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let u: f64 = rng.random();
            if u < probs.get(i, j) {
                edges.push((i, j));
            }
        }
    }
    Network { agents: n, edges }
}

fn uniform(rng: &mut impl Rng, low: f64, high: f64) -> f64 {
    let u: f64 = rng.random();
    low + (high - low) * u
}

fn stream(seed: u64, s: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

/// Agents of a scenario with their stage-1 biases.
#[derive(Debug, Clone)]
pub struct Population {
    pub profiles: Vec<AgentProfile>,
    pub membership: Vec<usize>,
    pub biases: Vec<DVector<f64>>,
    /// Probabilities drawn once when `redraw_rho` is off.
    fixed_rho: Option<Probabilities>,
}

pub fn initialize(spec: &ScenarioSpec) -> Result<Population> {
    spec.validate()?;
    let mut rng = stream(spec.seed, 0);
    let d = spec.issues();
    let mut profiles = Vec::with_capacity(spec.agents());
    let mut biases = Vec::with_capacity(spec.agents());
    for g in &spec.groups {
        for _ in 0..g.count {
            let b = match &g.bias {
                BiasInit::Fixed(b) => b.clone(),
                BiasInit::Uniform { low, high } => (0..d).map(|_| uniform(&mut rng, *low, *high)).collect(),
            };
            let epsilon = match g.epsilon {
                EpsilonInit::Fixed(e) => e,
                EpsilonInit::Uniform { low, high } => uniform(&mut rng, low, high),
            };
            let profile = AgentProfile::uniform(g.attributes.clone(), epsilon, g.correlation, g.c, g.stubborn_diag.clone());
            profile.validate()?;
            profiles.push(profile);
            biases.push(DVector::from_vec(b));
        }
    }
    let membership = spec.membership();
    let fixed_rho = if spec.redraw_rho {
        None
    } else {
        Some(probabilities(spec, &membership, &mut rng))
    };
    Ok(Population {
        profiles,
        membership,
        biases,
        fixed_rho,
    })
}

fn probabilities(spec: &ScenarioSpec, membership: &[usize], rng: &mut impl Rng) -> Probabilities {
    let n = spec.agents();
    let mut probs = match &spec.rho {
        RhoRule::Constant(p) => Probabilities::constant(n, *p),
        RhoRule::Matrix(m) => Probabilities {
            n,
            values: m.iter().flatten().copied().collect(),
        },
        RhoRule::Interval { low, high } => {
            let mut probs = Probabilities::constant(n, 0.0);
            for i in 0..n {
                for j in 0..n {
                    if i == j || (spec.symmetric_rho && j < i) {
                        continue;
                    }
                    let p = uniform(rng, *low, *high);
                    probs.set(i, j, p);
                    if spec.symmetric_rho {
                        probs.set(j, i, p);
                    }
                }
            }
            probs
        }
    };
    for o in &spec.overrides {
        let (l, t) = (
            spec.group_index(&o.listener).expect("validated"),
            spec.group_index(&o.target).expect("validated"),
        );
        for i in 0..n {
            for j in 0..n {
                if membership[i] == l && membership[j] == t {
                    probs.set(i, j, o.rho);
                    if o.reciprocal {
                        probs.set(j, i, o.rho);
                    }
                }
            }
        }
    }
    probs
}

/// The stage game on `network` with weights gated on `biases`.
pub fn build_stage(
    spec: &ScenarioSpec,
    profiles: &[AgentProfile],
    network: &Network,
    biases: &[DVector<f64>],
) -> Result<GameSpec> {
    let stubbornness = profiles.iter().map(build_stubbornness).collect::<Result<Vec<_>>>()?;
    let mut influence = Vec::with_capacity(network.edges.len());
    for &(i, j) in &network.edges {
        let v = build_influence_root(
            i,
            j,
            &profiles[i],
            &profiles[j],
            biases[i].as_slice(),
            biases[j].as_slice(),
            &spec.gamma,
        )?;
        influence.push(((i, j), square_to_weight(&v)?));
    }
    GameSpec::new(
        spec.stage_horizon,
        stubbornness,
        influence,
        biases.iter().map(|b| b.as_slice().to_vec()).collect(),
    )
}

#[derive(Debug, Clone)]
pub struct StageRecord {
    /// 1-based stage number.
    pub stage: usize,
    pub network: Network,
    pub initial_biases: Vec<DVector<f64>>,
    pub final_opinions: Vec<DVector<f64>>,
    pub existence: ExistenceReport,
    pub trajectory: TrajectorySample,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub seed: u64,
    pub population: Population,
    pub stages: Vec<StageRecord>,
}

pub fn run_scenario(spec: &ScenarioSpec) -> Result<ScenarioRun> {
    let population = initialize(spec)?;
    let d = spec.issues();
    let mut biases = population.biases.clone();
    let mut stages = Vec::with_capacity(spec.stages);
    for s in 1..=spec.stages {
        let wrap = |e: Error| Error::Stage {
            stage: s,
            source: Box::new(e),
        };
        let mut rng = stream(spec.seed, s as u64);
        let probs = match &population.fixed_rho {
            Some(p) => p.clone(),
            None => probabilities(spec, &population.membership, &mut rng),
        };
        let network = sample_network(&probs, &mut rng);
        let game = build_stage(spec, &population.profiles, &network, &biases).map_err(wrap)?;
        let sol = NashSolution::with_tolerance(&game, spec.critical_tol).map_err(wrap)?;
        let trajectory = sol.sample(spec.grid_points).map_err(wrap)?;
        let final_opinions = crate::game::unstack(trajectory.final_state(), d);
        log::debug!("stage {s}: {} edges", network.edges.len());
        stages.push(StageRecord {
            stage: s,
            network,
            initial_biases: biases,
            final_opinions: final_opinions.clone(),
            existence: sol.existence().clone(),
            trajectory,
        });
        biases = final_opinions;
    }
    Ok(ScenarioRun {
        seed: spec.seed,
        population,
        stages,
    })
}

/// Largest Euclidean distance between two agents' opinion vectors.
pub fn opinion_spread(opinions: &[DVector<f64>]) -> f64 {
    let mut best = 0.0f64;
    for (a, x) in opinions.iter().enumerate() {
        for y in &opinions[a + 1..] {
            best = best.max((x - y).norm());
        }
    }
    best
}

/// Per-group mean and range of one issue at one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStat {
    /// 0 for the initial biases, else the stage whose final opinions are summarized.
    pub stage: usize,
    pub group: String,
    pub issue: usize,
    pub mean: f64,
    /// `max - min` over the group's members.
    pub spread: f64,
}

/// Group statistics (plus an `all` group) of the initial biases and every stage's final opinions.
pub fn group_summary(spec: &ScenarioSpec, run: &ScenarioRun) -> Vec<GroupStat> {
    let d = spec.issues();
    let membership = &run.population.membership;
    let mut snapshots = vec![(0, &run.population.biases)];
    snapshots.extend(run.stages.iter().map(|r| (r.stage, &r.final_opinions)));
    let mut groups: Vec<(String, Vec<usize>)> = spec
        .groups
        .iter()
        .enumerate()
        .map(|(k, g)| (g.name.clone(), (0..membership.len()).filter(|&i| membership[i] == k).collect()))
        .collect();
    groups.push(("all".into(), (0..membership.len()).collect()));
    let mut out = Vec::new();
    for (stage, x) in snapshots {
        for (name, members) in &groups {
            if members.is_empty() {
                continue;
            }
            for k in 0..d {
                let vals: Vec<f64> = members.iter().map(|&i| x[i][k]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                out.push(GroupStat {
                    stage,
                    group: name.clone(),
                    issue: k,
                    mean,
                    spread: hi - lo,
                });
            }
        }
    }
    out
}

fn group(
    name: &str,
    count: usize,
    status: f64,
    epsilon: EpsilonInit,
    correlation: f64,
    stubborn: f64,
    bias: BiasInit,
) -> GroupSpec {
    GroupSpec {
        name: name.into(),
        count,
        attributes: vec![status],
        epsilon,
        correlation,
        c: 1.0,
        stubborn_diag: vec![stubborn; 2],
        bias,
    }
}

/// Two parties with leaders, supporters and a neutral group; party A runs a
/// one-way propaganda campaign at the neutral group.
pub fn preset_parties() -> ScenarioSpec {
    let r = 0.5;
    let eps = EpsilonInit::Fixed(0.5);
    let u = |low: f64, high: f64| BiasInit::Uniform { low, high };
    ScenarioSpec {
        name: "parties".into(),
        groups: vec![
            group("leader_a", 1, 1.0, EpsilonInit::Fixed(0.1), r, 1.1, BiasInit::Fixed(vec![-1.0, -1.0])),
            group("leader_b", 1, 1.0, EpsilonInit::Fixed(0.1), r, 1.1, BiasInit::Fixed(vec![1.0, 1.0])),
            group("party_a", 25, 0.0, eps.clone(), r, 0.1, u(-1.5, -0.5)),
            group("party_b", 25, 0.0, eps.clone(), r, 0.1, u(0.5, 1.5)),
            group(
                "neutral",
                50,
                0.0,
                eps,
                r,
                0.1,
                u(-0.5 + OPEN_INTERVAL_MARGIN, 0.5 - OPEN_INTERVAL_MARGIN),
            ),
        ],
        stages: 5,
        stage_horizon: 5.0,
        rho: RhoRule::Constant(0.2),
        overrides: vec![RhoOverride {
            listener: "neutral".into(),
            target: "party_a".into(),
            rho: 1.0,
            reciprocal: false,
        }],
        redraw_rho: true,
        symmetric_rho: false,
        gamma: GammaRule::AffineInTargetStatus {
            alpha: 2.0,
            beta: 0.5,
            attribute: 0,
        },
        seed: 0,
        grid_points: default_grid(),
        critical_tol: DEFAULT_CRITICAL_TOL,
    }
}

/// Issue-correlation conception in the heterogeneous preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conception {
    /// Every agent sees the issues as positively correlated.
    Aligned,
    /// Agents 1-25 see positive, agents 26-50 negative correlation.
    Split,
}

/// Fifty agents with random confidence levels and interaction probabilities.
pub fn preset_heterogeneous(variant: Conception) -> ScenarioSpec {
    let second = match variant {
        Conception::Aligned => 1.0,
        Conception::Split => -1.0,
    };
    let eps = EpsilonInit::Uniform { low: 0.0, high: 1.0 };
    let bias = BiasInit::Uniform { low: -1.0, high: 1.0 };
    ScenarioSpec {
        name: match variant {
            Conception::Aligned => "heterogeneous-a".into(),
            Conception::Split => "heterogeneous-b".into(),
        },
        groups: vec![
            group("agents_1_25", 25, 0.0, eps.clone(), 1.0, 0.1, bias.clone()),
            group("agents_26_50", 25, 0.0, eps, second, 0.1, bias),
        ],
        stages: 10,
        stage_horizon: 5.0,
        rho: RhoRule::Interval { low: 0.3, high: 0.7 },
        overrides: Vec::new(),
        redraw_rho: true,
        symmetric_rho: false,
        gamma: GammaRule::Constant { value: 0.8 },
        seed: 0,
        grid_points: default_grid(),
        critical_tol: DEFAULT_CRITICAL_TOL,
    }
}

/// Preset by command-line name.
pub fn preset(name: &str) -> Option<ScenarioSpec> {
    match name {
        "parties" => Some(preset_parties()),
        "heterogeneous-a" => Some(preset_heterogeneous(Conception::Aligned)),
        "heterogeneous-b" => Some(preset_heterogeneous(Conception::Split)),
        _ => None,
    }
}

pub const PRESET_NAMES: [&str; 3] = ["parties", "heterogeneous-a", "heterogeneous-b"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extreme_probabilities() {
        let mut rng = stream(7, 1);
        assert!(sample_network(&Probabilities::constant(6, 0.0), &mut rng).edges.is_empty());
        let full = sample_network(&Probabilities::constant(6, 1.0), &mut rng);
        assert_eq!(full.edges.len(), 30);
        assert!(full.edges.iter().all(|(i, j)| i != j));
    }

    #[test]
    fn parties_layout() {
        let spec = preset_parties();
        assert_eq!(spec.agents(), 102);
        let pop = initialize(&spec).unwrap();
        assert_eq!(pop.profiles[0].stubborn_diag, vec![1.1, 1.1]);
        assert_eq!(pop.profiles[2].stubborn_diag, vec![0.1, 0.1]);
        assert!(pop.profiles.iter().all(|p| p.correlations[0][1] == 0.5));
        assert_eq!(pop.biases[1].as_slice(), &[1.0, 1.0]);
        for (i, b) in pop.biases.iter().enumerate().skip(52) {
            assert!(b.iter().all(|v| v.abs() < 0.5), "agent {i}");
        }
    }

    #[test]
    fn propaganda_is_one_way() {
        let spec = preset_parties();
        let m = spec.membership();
        let mut rng = stream(1, 1);
        let probs = probabilities(&spec, &m, &mut rng);
        assert_eq!(probs.get(60, 10), 1.0);
        assert_eq!(probs.get(10, 60), 0.2);
    }

    #[test]
    fn heterogeneous_variants() {
        let a = initialize(&preset_heterogeneous(Conception::Aligned)).unwrap();
        assert!(a.profiles.iter().all(|p| p.correlations[0][1] == 1.0));
        let b = initialize(&preset_heterogeneous(Conception::Split)).unwrap();
        assert!(b.profiles[..25].iter().all(|p| p.correlations[0][1] == 1.0));
        assert!(b.profiles[25..].iter().all(|p| p.correlations[0][1] == -1.0));
    }

    #[test]
    fn empty_network_keeps_biases() {
        let spec = preset_heterogeneous(Conception::Aligned);
        let pop = initialize(&spec).unwrap();
        let net = Network {
            agents: 50,
            edges: Vec::new(),
        };
        let game = build_stage(&spec, &pop.profiles, &net, &pop.biases).unwrap();
        let sol = NashSolution::new(&game).unwrap();
        let x = sol.state_at(2.5).unwrap();
        assert!((x - game.stacked_biases()).amax() < 1e-12);
    }

    #[test]
    fn symmetric_toggle() {
        let mut spec = preset_heterogeneous(Conception::Aligned);
        spec.symmetric_rho = true;
        let m = spec.membership();
        let probs = probabilities(&spec, &m, &mut stream(3, 1));
        assert_eq!(probs.get(4, 9), probs.get(9, 4));
        assert!((0.3..=0.7).contains(&probs.get(4, 9)));
    }
}
