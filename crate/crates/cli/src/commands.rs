use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use opgame_core::game::{assemble, check_existence_with_tol, Existence, ExistenceReport};
use opgame_core::multistage::{group_summary, run_scenario, ScenarioRun};
use opgame_core::{GameSpec, NashSolution};

use crate::config::{GameConfig, ScenarioConfig};
use crate::output::{self, RunManifest, SeedFailure};
use crate::{CliError, Result};

pub struct LoadedGame {
    pub spec: GameSpec,
    pub name: String,
    pub digest: String,
}

pub fn load_game(path: &Path) -> Result<LoadedGame> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let label = path.display().to_string();
    let cfg = GameConfig::parse(&text, &label)?;
    Ok(LoadedGame {
        spec: cfg.to_spec(&label)?,
        name: cfg.name,
        digest: output::sha256_hex(text.as_bytes()),
    })
}

pub fn format_report(name: &str, spec: &GameSpec, rep: &ExistenceReport) -> String {
    let mut s = String::new();
    let title = if name.is_empty() { "game" } else { name };
    let _ = writeln!(
        s,
        "{title}: {} agents, {} issues, T = {}",
        spec.agents(),
        spec.issues(),
        spec.horizon()
    );
    let verdict = match &rep.verdict {
        Existence::UniqueEquilibrium => "unique_equilibrium",
        Existence::NoneAtT(_) => "none_at_T",
    };
    let _ = writeln!(s, "verdict: {verdict}");
    let _ = writeln!(s, "eigenvalues of Q:");
    for z in &rep.eigenvalues {
        if z.im == 0.0 {
            let _ = writeln!(s, "  {:.6}", z.re);
        } else {
            let _ = writeln!(s, "  {:.6} {:+.6}i", z.re, z.im);
        }
    }
    let _ = writeln!(s, "critical horizons below 2T: {}", rep.critical_times);
    if let Existence::NoneAtT(hits) = &rep.verdict {
        for h in hits {
            let _ = writeln!(
                s,
                "  hit: r = {:.6} (r^2 = {:.6}), k = {}, critical T = {:.6}",
                h.r,
                h.r * h.r,
                h.k,
                h.time
            );
        }
    }
    let _ = writeln!(s, "condition of f(QT): {:e}", rep.condition);
    let _ = writeln!(s, "max 1/|cosh(sqrt(lambda) T)|: {:e}", rep.critical_gain);
    s
}

pub struct CheckOutcome {
    pub report: String,
    pub exists: bool,
}

pub fn check(path: &Path, tol: f64) -> Result<CheckOutcome> {
    let game = load_game(path)?;
    let rep = check_existence_with_tol(&assemble(&game.spec), game.spec.horizon(), tol)?;
    Ok(CheckOutcome {
        report: format_report(&game.name, &game.spec, &rep),
        exists: rep.exists(),
    })
}

pub struct SolveOutcome {
    pub trajectory: PathBuf,
    pub manifest: PathBuf,
    pub rows: usize,
}

pub fn solve(path: &Path, grid: usize, out: &Path, tol: f64) -> Result<SolveOutcome> {
    let started = output::timestamp();
    let game = load_game(path)?;
    let sol = match NashSolution::with_tolerance(&game.spec, tol) {
        Ok(s) => s,
        Err(opgame_core::Error::NoEquilibrium { horizon, critical }) => {
            return Err(CliError::NoEquilibrium { horizon, critical })
        }
        Err(e) => return Err(e.into()),
    };
    let sample = sol.sample(grid)?;
    let trajectory = out.join("trajectory.csv");
    let rows = output::write_trajectory(&trajectory, 0, &sample)?;
    let mut manifest = RunManifest::new("solve", game.digest, started);
    manifest.record(out, &trajectory, rows);
    let manifest = manifest.finish(out)?;
    Ok(SolveOutcome {
        trajectory,
        manifest,
        rows,
    })
}

pub struct ScenarioOptions {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub seeds: usize,
    pub seed: Option<u64>,
    pub grid: Option<usize>,
    pub tol_critical: Option<f64>,
    pub out: PathBuf,
}

pub struct ScenarioOutcome {
    pub manifest: PathBuf,
    pub completed: Vec<u64>,
    pub failures: Vec<SeedFailure>,
    /// Some failing seed hit a stage without an equilibrium.
    pub no_equilibrium: bool,
    /// Some failing seed stopped for another reason.
    pub other_failure: bool,
}

impl ScenarioOutcome {
    /// 0 when every seed completed, 1 on any failure other than non-existence, else 2.
    pub fn exit_code(&self) -> u8 {
        if self.other_failure {
            1
        } else if self.no_equilibrium {
            2
        } else {
            0
        }
    }
}

pub fn stage_file(out: &Path, seed: u64, stage: usize) -> PathBuf {
    out.join(format!("seed-{seed}")).join(format!("stage-{stage}.csv"))
}

/// Runs seeds `seed, seed + 1, ...` in parallel and writes their outputs in seed order.
pub fn scenario(opts: &ScenarioOptions) -> Result<ScenarioOutcome> {
    let started = output::timestamp();
    let (cfg, label, file_digest) = match (&opts.config, &opts.preset) {
        (Some(_), Some(_)) => {
            return Err(CliError::config("scenario", "give a config file or --preset, not both"))
        }
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let label = path.display().to_string();
            let digest = output::sha256_hex(text.as_bytes());
            (ScenarioConfig::parse(&text, &label)?, label, Some(digest))
        }
        (None, Some(name)) => (ScenarioConfig::from_preset(name), format!("preset {name}"), None),
        (None, None) => return Err(CliError::config("scenario", "a config file or --preset is required")),
    };
    let mut spec = cfg.resolve(&label)?;
    if let Some(g) = opts.grid {
        spec.grid_points = g;
    }
    if let Some(t) = opts.tol_critical {
        spec.critical_tol = t;
    }
    spec.validate().map_err(|e| CliError::config(&label, e.to_string()))?;
    let digest = file_digest
        .unwrap_or_else(|| output::sha256_hex(toml::to_string(&spec).expect("scenario serializes").as_bytes()));
    let first = opts.seed.unwrap_or(spec.seed);
    let seeds: Vec<u64> = (0..opts.seeds as u64).map(|k| first + k).collect();
    let runs: Vec<(u64, opgame_core::Result<ScenarioRun>)> =
        seeds.par_iter().map(|&s| (s, run_scenario(&spec.with_seed(s)))).collect();

    let mut manifest = RunManifest::new("scenario", digest, started);
    manifest.seeds = seeds.clone();
    let mut summary = Vec::new();
    let mut completed = Vec::new();
    let (mut no_equilibrium, mut other_failure) = (false, false);
    for (seed, run) in runs {
        match run {
            Ok(run) => {
                for st in &run.stages {
                    let path = stage_file(&opts.out, seed, st.stage);
                    let rows = output::write_trajectory(&path, st.stage, &st.trajectory)?;
                    manifest.record(&opts.out, &path, rows);
                }
                summary.extend(group_summary(&spec, &run).into_iter().map(|r| (seed, r)));
                completed.push(seed);
            }
            Err(e) => {
                log::warn!("seed {seed}: {e}");
                let inner = match &e {
                    opgame_core::Error::Stage { source, .. } => source.as_ref(),
                    other => other,
                };
                if matches!(inner, opgame_core::Error::NoEquilibrium { .. }) {
                    no_equilibrium = true;
                } else {
                    other_failure = true;
                }
                manifest.failures.push(SeedFailure {
                    seed,
                    message: e.to_string(),
                });
            }
        }
    }
    let path = opts.out.join("summary.csv");
    let rows = output::write_summary(&path, &summary)?;
    manifest.record(&opts.out, &path, rows);
    let failures = manifest.failures.clone();
    let manifest = manifest.finish(&opts.out)?;
    Ok(ScenarioOutcome {
        manifest,
        completed,
        failures,
        no_equilibrium,
        other_failure,
    })
}
