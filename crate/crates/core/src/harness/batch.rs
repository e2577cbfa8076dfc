//! Batch evaluation and metric aggregation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::grounding::Grounder;
use crate::pipeline::{mock_grounder, run_episode, EpisodeResult, NavigatorConfig};
use crate::simulator::Scenario;

pub const DEFAULT_TRIALS: u32 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub trial: u32,
    pub seed: u64,
    pub success: bool,
    pub ne: f64,
    pub time: f64,
    pub collided: bool,
    pub status: String,
    pub groundings: u64,
    pub replans: u64,
}

impl EpisodeRow {
    pub fn new(trial: u32, seed: u64, r: &EpisodeResult) -> Self {
        Self {
            trial,
            seed,
            success: r.success,
            ne: r.ne,
            time: r.time,
            collided: r.collided,
            status: r.status.label().to_string(),
            groundings: r.groundings,
            replans: r.replans,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub name: String,
    pub successes: u32,
    pub sr: f64,
    pub ne_mean: f64,
    pub time_mean: f64,
    pub episodes: Vec<EpisodeRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Success rate in percent.
    pub sr: f64,
    pub ne_mean: f64,
    pub time_mean: f64,
    pub episodes: u32,
    pub successes: u32,
    pub trials_per_scenario: u32,
    pub base_seed: u64,
    /// SHA-256 of the serialized configuration.
    pub fingerprint: String,
    pub config: NavigatorConfig,
    pub rows: Vec<ScenarioRow>,
}

impl MetricsReport {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// True when any episode failed.
    pub fn has_failures(&self) -> bool {
        self.successes < self.episodes
    }
}

pub fn config_fingerprint(config: &NavigatorConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Runs `trials` episodes per scenario with the mock grounder. Trial `i`
/// uses seed `base_seed + i`.
pub fn batch_eval(
    scenarios: &[(String, Scenario)],
    config: &NavigatorConfig,
    trials: u32,
    base_seed: u64,
) -> Result<MetricsReport, HarnessError> {
    batch_eval_with(scenarios, config, trials, base_seed, &|s, c, seed| {
        Box::new(mock_grounder(s, c, seed))
    })
}

/// [`batch_eval`] with a caller-supplied grounder per episode.
pub fn batch_eval_with(
    scenarios: &[(String, Scenario)],
    config: &NavigatorConfig,
    trials: u32,
    base_seed: u64,
    make_grounder: &dyn Fn(&Scenario, &NavigatorConfig, u64) -> Box<dyn Grounder>,
) -> Result<MetricsReport, HarnessError> {
    if scenarios.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    if trials == 0 {
        return Err(HarnessError::Config("trials must be at least 1".into()));
    }
    config.validate().map_err(HarnessError::Config)?;
    let mut groups = Vec::with_capacity(scenarios.len());
    for (name, scenario) in scenarios {
        let mut episodes = Vec::with_capacity(trials as usize);
        for trial in 0..trials {
            let seed = base_seed.wrapping_add(u64::from(trial));
            let mut grounder = make_grounder(scenario, config, seed);
            let result = run_episode(scenario, config, seed, grounder.as_mut())
                .map_err(|e| HarnessError::Episode(format!("{name} seed {seed}: {e}")))?;
            log::info!("{name} seed {seed}: {} ne {:.3}", result.status.label(), result.ne);
            episodes.push(EpisodeRow::new(trial, seed, &result));
        }
        groups.push((name.clone(), episodes));
    }
    Ok(aggregate(groups, config, trials, base_seed))
}

/// Builds a report from per-scenario episode rows.
pub fn aggregate(
    groups: Vec<(String, Vec<EpisodeRow>)>,
    config: &NavigatorConfig,
    trials: u32,
    base_seed: u64,
) -> MetricsReport {
    let rows: Vec<ScenarioRow> = groups
        .into_iter()
        .map(|(name, episodes)| {
            let successes = episodes.iter().filter(|e| e.success).count() as u32;
            ScenarioRow {
                name,
                successes,
                sr: percent(successes, episodes.len()),
                ne_mean: mean(episodes.iter().map(|e| e.ne)),
                time_mean: mean(episodes.iter().map(|e| e.time)),
                episodes,
            }
        })
        .collect();
    let all = || rows.iter().flat_map(|r| r.episodes.iter());
    let episodes = all().count();
    let successes = all().filter(|e| e.success).count() as u32;
    MetricsReport {
        sr: percent(successes, episodes),
        ne_mean: mean(all().map(|e| e.ne)),
        time_mean: mean(all().map(|e| e.time)),
        episodes: episodes as u32,
        successes,
        trials_per_scenario: trials,
        base_seed,
        fingerprint: config_fingerprint(config),
        config: *config,
        rows,
    }
}

fn percent(successes: u32, episodes: usize) -> f64 {
    if episodes == 0 {
        0.0
    } else {
        100.0 * f64::from(successes) / episodes as f64
    }
}
