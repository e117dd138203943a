//! TOML configs for single games and scenarios.
//!
//! Agents are numbered from 1 in every config file.
//!
//! A game config holds a horizon, one `[[agent]]` table per agent and one of
//! two weight sources. With `weights = "raw"` each agent lists its
//! `stubbornness` matrix and `[[influence]]` tables give `W_ij` explicitly.
//! With `weights = "profile"` each agent carries a `profile` table,
//! `[[edge]]` tables list who listens to whom, and a `[gamma]` table picks the
//! gain rule. A scenario config names a `preset` or carries a full
//! `[scenario]` table.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use opgame_core::multistage::{preset, ScenarioSpec};
use opgame_core::weights::{build_influence_root, build_stubbornness, square_to_weight, AgentProfile, GammaRule};
use opgame_core::{GameSpec, SquareMatrix};

use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    #[default]
    Raw,
    Profile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stubbornness: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<AgentProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluenceEntry {
    pub listener: usize,
    pub target: usize,
    pub weight: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub listener: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    #[serde(default)]
    pub name: String,
    pub horizon: f64,
    #[serde(default)]
    pub weights: WeightSource,
    #[serde(default, rename = "agent")]
    pub agents: Vec<AgentEntry>,
    #[serde(default, rename = "influence", skip_serializing_if = "Vec::is_empty")]
    pub influence: Vec<InfluenceEntry>,
    #[serde(default, rename = "edge", skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<EdgeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaRule>,
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, path: &str) -> Result<T> {
    if text.trim().is_empty() {
        return Err(CliError::config(path, "config is empty"));
    }
    toml::from_str(text).map_err(|e| CliError::config(path, e.to_string().trim_end().to_string()))
}

fn matrix(rows: &[Vec<f64>], d: usize, path: &str, field: &str) -> Result<SquareMatrix> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(CliError::config(path, format!("{field}: expected a {d}x{d} matrix")));
    }
    SquareMatrix::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
        .map_err(|e| CliError::config(path, format!("{field}: {e}")))
}

/// Converts a 1-based agent number to an index.
fn index(k: usize, n: usize, path: &str, field: &str) -> Result<usize> {
    if k == 0 || k > n {
        return Err(CliError::config(path, format!("{field}: agent {k} is not in 1..={n}")));
    }
    Ok(k - 1)
}

fn zero_based_gamma(rule: &GammaRule, n: usize, path: &str) -> Result<GammaRule> {
    let GammaRule::Table { entries } = rule else {
        return Ok(rule.clone());
    };
    let mut out = entries.clone();
    for (k, e) in out.iter_mut().enumerate() {
        let field = format!("gamma.entries[{}]", k + 1);
        e.agent = index(e.agent, n, path, &field)?;
        e.target = index(e.target, n, path, &field)?;
    }
    Ok(GammaRule::Table { entries: out })
}

impl GameConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        parse_toml(text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("game config serializes")
    }

    /// Validates the config and builds the game.
    pub fn to_spec(&self, path: &str) -> Result<GameSpec> {
        let n = self.agents.len();
        if n == 0 {
            return Err(CliError::config(path, "no [[agent]] tables"));
        }
        let d = self.agents[0].bias.len();
        if d == 0 {
            return Err(CliError::config(path, "agent[1].bias: empty"));
        }
        for (k, a) in self.agents.iter().enumerate() {
            if a.bias.len() != d {
                return Err(CliError::config(
                    path,
                    format!("agent[{}].bias: expected {d} issues, got {}", k + 1, a.bias.len()),
                ));
            }
        }
        let biases: Vec<Vec<f64>> = self.agents.iter().map(|a| a.bias.clone()).collect();
        let (stubbornness, influence) = match self.weights {
            WeightSource::Raw => self.raw_weights(n, d, path)?,
            WeightSource::Profile => self.profile_weights(n, d, path)?,
        };
        GameSpec::new(self.horizon, stubbornness, influence, biases).map_err(|e| CliError::config(path, e.to_string()))
    }

    #[allow(clippy::type_complexity)]
    fn raw_weights(
        &self,
        n: usize,
        d: usize,
        path: &str,
    ) -> Result<(Vec<SquareMatrix>, Vec<((usize, usize), SquareMatrix)>)> {
        if !self.edges.is_empty() || self.gamma.is_some() {
            return Err(CliError::config(path, "[[edge]] and [gamma] need weights = \"profile\""));
        }
        let mut stub = Vec::with_capacity(n);
        for (k, a) in self.agents.iter().enumerate() {
            let field = format!("agent[{}].stubbornness", k + 1);
            let rows = a
                .stubbornness
                .as_ref()
                .ok_or_else(|| CliError::config(path, format!("{field}: required with raw weights")))?;
            stub.push(matrix(rows, d, path, &field)?);
        }
        let mut influence = Vec::with_capacity(self.influence.len());
        for (k, e) in self.influence.iter().enumerate() {
            let field = format!("influence[{}]", k + 1);
            let i = index(e.listener, n, path, &field)?;
            let j = index(e.target, n, path, &field)?;
            influence.push(((i, j), matrix(&e.weight, d, path, &format!("{field}.weight"))?));
        }
        Ok((stub, influence))
    }

    #[allow(clippy::type_complexity)]
    fn profile_weights(
        &self,
        n: usize,
        d: usize,
        path: &str,
    ) -> Result<(Vec<SquareMatrix>, Vec<((usize, usize), SquareMatrix)>)> {
        if !self.influence.is_empty() {
            return Err(CliError::config(path, "[[influence]] needs weights = \"raw\""));
        }
        let gamma = self
            .gamma
            .as_ref()
            .ok_or_else(|| CliError::config(path, "gamma: required with profile weights"))?;
        let gamma = zero_based_gamma(gamma, n, path)?;
        let mut profiles = Vec::with_capacity(n);
        for (k, a) in self.agents.iter().enumerate() {
            let field = format!("agent[{}].profile", k + 1);
            let p = a
                .profile
                .as_ref()
                .ok_or_else(|| CliError::config(path, format!("{field}: required with profile weights")))?;
            if p.issues() != d {
                return Err(CliError::config(path, format!("{field}: expected {d} issues")));
            }
            p.validate().map_err(|e| CliError::config(path, format!("{field}: {e}")))?;
            profiles.push(p.clone());
        }
        let stub = profiles
            .iter()
            .map(build_stubbornness)
            .collect::<opgame_core::Result<Vec<_>>>()?;
        let mut influence = Vec::with_capacity(self.edges.len());
        for (k, e) in self.edges.iter().enumerate() {
            let field = format!("edge[{}]", k + 1);
            let i = index(e.listener, n, path, &field)?;
            let j = index(e.target, n, path, &field)?;
            let v = build_influence_root(
                i,
                j,
                &profiles[i],
                &profiles[j],
                &self.agents[i].bias,
                &self.agents[j].bias,
                &gamma,
            )
            .map_err(|e| CliError::config(path, format!("{field}: {e}")))?;
            influence.push(((i, j), square_to_weight(&v)?));
        }
        Ok((stub, influence))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
}

impl ScenarioConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        parse_toml(text, path)
    }

    pub fn from_preset(name: &str) -> Self {
        Self {
            preset: Some(name.to_string()),
            scenario: None,
            stages: None,
            grid_points: None,
        }
    }

    /// The scenario with overrides applied; gain tables are converted to 0-based agents.
    pub fn resolve(&self, path: &str) -> Result<ScenarioSpec> {
        let mut spec = match (&self.preset, &self.scenario) {
            (Some(name), None) => preset(name).ok_or_else(|| CliError::UnknownPreset(name.clone()))?,
            (None, Some(spec)) => {
                let mut spec = spec.clone();
                spec.gamma = zero_based_gamma(&spec.gamma, spec.agents(), path)?;
                spec
            }
            (Some(_), Some(_)) => return Err(CliError::config(path, "give either `preset` or [scenario], not both")),
            (None, None) => return Err(CliError::config(path, "missing `preset` or [scenario]")),
        };
        if let Some(s) = self.stages {
            spec.stages = s;
        }
        if let Some(g) = self.grid_points {
            spec.grid_points = g;
        }
        spec.validate().map_err(|e| CliError::config(path, e.to_string()))?;
        for (k, g) in spec.groups.iter().enumerate() {
            let p = AgentProfile::uniform(g.attributes.clone(), 0.0, g.correlation, g.c, g.stubborn_diag.clone());
            build_stubbornness(&p)
                .map_err(|e| CliError::config(path, format!("scenario.groups[{}] ({}): {e}", k + 1, g.name)))?;
        }
        Ok(spec)
    }
}
