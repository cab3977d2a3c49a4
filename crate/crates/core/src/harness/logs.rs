//! Newline-delimited JSON trajectory logs.
//!
//! Each episode starts with an `episode` line carrying everything metrics
//! need beyond positions (goals, tolerances, step cap), followed by one
//! `agent` line per agent per step.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{TrajectoryRecord, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeHeader {
    pub episode: usize,
    pub seed: u64,
    pub policy: String,
    pub config_fingerprint: String,
    pub n_robots: usize,
    pub n_pedestrians: usize,
    pub dt: f64,
    pub max_timesteps: usize,
    pub d_comfort: f64,
    pub goal_tolerance: f64,
    pub scenario_radius: f64,
    /// Robot goals, indexed by robot id.
    pub goals: Vec<[f64; 2]>,
}

impl EpisodeHeader {
    pub fn for_world(world: &WorldState, episode: usize, seed: u64, policy: &str, fingerprint: &str) -> Self {
        let c = &world.config;
        Self {
            episode,
            seed,
            policy: policy.to_string(),
            config_fingerprint: fingerprint.to_string(),
            n_robots: c.n_robots,
            n_pedestrians: c.n_pedestrians,
            dt: c.dt,
            max_timesteps: c.max_timesteps,
            d_comfort: c.d_comfort,
            goal_tolerance: c.goal_tolerance(),
            scenario_radius: c.scenario_radius,
            goals: world.robots.iter().map(|r| [r.state.goal.x, r.state.goal.y]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    /// Ordered by step, then robots before pedestrians, then id.
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogLine {
    Episode(EpisodeHeader),
    Agent(TrajectoryRecord),
}

pub fn write_logs(path: &Path, logs: &[EpisodeLog]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |line: &LogLine| -> Result<()> {
        let s = serde_json::to_string(line).map_err(|e| Error::contract(e.to_string()))?;
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))
    };
    for log in logs {
        put(&LogLine::Episode(log.header.clone()))?;
        for r in &log.records {
            put(&LogLine::Agent(r.clone()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_logs(path: &Path) -> Result<Vec<EpisodeLog>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    parse_logs(lines.iter().map(String::as_str))
}

/// Parses log lines; errors carry the 1-based line number.
pub fn parse_logs<'a>(lines: impl IntoIterator<Item = &'a str>) -> Result<Vec<EpisodeLog>> {
    let mut logs: Vec<EpisodeLog> = Vec::new();
    for (k, line) in lines.into_iter().enumerate() {
        let lineno = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        match parsed {
            LogLine::Episode(header) => {
                if header.goals.len() != header.n_robots {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("{} goals for {} robots", header.goals.len(), header.n_robots),
                    });
                }
                logs.push(EpisodeLog {
                    header,
                    records: Vec::new(),
                })
            }
            LogLine::Agent(rec) => {
                let log = logs.last_mut().ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: "agent record before any episode header".into(),
                })?;
                if rec.kind == crate::sim::AgentKind::Robot && rec.agent_id >= log.header.n_robots {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("robot id {} out of range", rec.agent_id),
                    });
                }
                if log.records.last().is_some_and(|p| p.step > rec.step) {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "steps go backwards".into(),
                    });
                }
                log.records.push(rec);
            }
        }
    }
    Ok(logs)
}
