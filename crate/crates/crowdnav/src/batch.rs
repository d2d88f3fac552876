//! Batch runs: many bots through one gateway, then a cohort report.
//!
//! Requests go out one at a time so host assignment follows the round
//! robin order exactly; the sessions then play concurrently.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Duration;

use crowdnav_core::metrics::{CohortReport, MetricsSummary};
use crowdnav_core::task::TaskParams;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::bots::{play_from, request_session, BotConfig, BotResult, BotRun, Policy};
use crate::host::SessionReply;
use crate::telemetry::{aggregate_dir, render_report, write_json_atomic};

#[derive(Debug, Clone)]
pub struct BatchPlan {
    pub base: String,
    pub bots: usize,
    pub user_prefix: String,
    /// Cycled over the bots.
    pub scenarios: Vec<String>,
    /// Cycled over the bots.
    pub policies: Vec<Policy>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub poll: Duration,
    pub max_wait: Duration,
    pub tasks: TaskParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub requested: usize,
    pub rejected: Vec<String>,
    /// host id → sessions it was given
    pub assignments: BTreeMap<String, usize>,
    pub runs: Vec<BotRun>,
    pub errors: Vec<String>,
    pub report: Option<CohortReport>,
    pub checks: Vec<Check>,
}

impl BatchOutcome {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }
}

fn check(name: &str, ok: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        ok,
        detail: detail.into(),
    }
}

pub async fn run_batch(plan: &BatchPlan) -> anyhow::Result<BatchOutcome> {
    anyhow::ensure!(!plan.scenarios.is_empty(), "no scenarios to play");
    anyhow::ensure!(!plan.policies.is_empty(), "no policies given");
    let summaries_dir = plan.out_dir.join("summaries");
    std::fs::create_dir_all(&summaries_dir)?;
    let http = reqwest::Client::new();

    let configs: Vec<BotConfig> = (0..plan.bots)
        .map(|i| BotConfig {
            base: plan.base.clone(),
            user_id: format!("{}-{:03}", plan.user_prefix, i + 1),
            scenario: plan.scenarios[i % plan.scenarios.len()].clone(),
            trial: 1,
            policy: plan.policies[i % plan.policies.len()],
            seed: plan.seed.wrapping_add(i as u64),
            poll: plan.poll,
            max_wait: plan.max_wait,
            tasks: plan.tasks,
        })
        .collect();

    let mut outcome = BatchOutcome {
        requested: plan.bots,
        rejected: Vec::new(),
        assignments: BTreeMap::new(),
        runs: Vec::new(),
        errors: Vec::new(),
        report: None,
        checks: Vec::new(),
    };

    let mut firsts = Vec::new();
    for cfg in &configs {
        match request_session(&http, cfg).await {
            Ok(first) => {
                match &first.1 {
                    SessionReply::Ready { host_id, .. } | SessionReply::Pending { host_id, .. } => {
                        *outcome.assignments.entry(host_id.clone()).or_default() += 1;
                    }
                    SessionReply::Full { .. } => outcome.rejected.push(cfg.user_id.clone()),
                    SessionReply::Rejected { error } => outcome.errors.push(format!("{}: {error}", cfg.user_id)),
                }
                firsts.push((cfg.clone(), first));
            }
            Err(e) => outcome.errors.push(format!("{}: {e}", cfg.user_id)),
        }
    }

    let tasks: Vec<_> = firsts
        .into_iter()
        .filter(|(_, f)| matches!(f.1, SessionReply::Ready { .. } | SessionReply::Pending { .. }))
        .map(|(cfg, first)| {
            let http = http.clone();
            tokio::spawn(async move {
                let r = play_from(&http, &cfg, first).await;
                (cfg, r)
            })
        })
        .collect();
    for t in tasks {
        match t.await? {
            (_, Ok(run)) => outcome.runs.push(run),
            (cfg, Err(e)) => outcome.errors.push(format!("{}: {e}", cfg.user_id)),
        }
    }

    // collect summaries through the same front door
    let mut fetched: Vec<MetricsSummary> = Vec::new();
    for run in &outcome.runs {
        let BotResult::Played { session_id, .. } = &run.result else { continue };
        match fetch_summary(&http, &plan.base, session_id, &run.user_id).await {
            Ok(s) => {
                write_json_atomic(&summaries_dir.join(format!("{session_id}.json")), &s)?;
                fetched.push(s);
            }
            Err(e) => outcome.errors.push(format!("{session_id}: summary: {e}")),
        }
    }
    match aggregate_dir(&summaries_dir) {
        Ok(r) => {
            std::fs::write(plan.out_dir.join("report.txt"), render_report(&r))?;
            outcome.report = Some(r);
        }
        Err(e) => outcome.errors.push(format!("aggregate: {e}")),
    }

    let played: Vec<&str> = outcome
        .runs
        .iter()
        .filter_map(|r| match &r.result {
            BotResult::Played { session_id, .. } => Some(session_id.as_str()),
            _ => None,
        })
        .collect();
    let unique: BTreeSet<&str> = played.iter().copied().collect();
    let ended = outcome
        .runs
        .iter()
        .filter(|r| matches!(&r.result, BotResult::Played { reason: Some(_), .. }))
        .count();
    outcome.checks = vec![
        check("no client errors", outcome.errors.is_empty(), outcome.errors.join("; ")),
        check(
            "every admitted bot played",
            played.len() + outcome.rejected.len() == plan.bots,
            format!("{} played, {} rejected, {} requested", played.len(), outcome.rejected.len(), plan.bots),
        ),
        check("session ids unique", unique.len() == played.len(), format!("{} ids", unique.len())),
        check("every session ended", ended == played.len(), format!("{ended}/{}", played.len())),
        check(
            "one summary per session",
            fetched.len() == played.len(),
            format!("{}/{}", fetched.len(), played.len()),
        ),
    ];
    write_json_atomic(&plan.out_dir.join("batch.json"), &outcome)?;
    Ok(outcome)
}

async fn fetch_summary(http: &reqwest::Client, base: &str, id: &str, user: &str) -> anyhow::Result<MetricsSummary> {
    let url = format!("{base}/summary?session_id={id}&user_id={user}");
    let mut last = String::new();
    for _ in 0..50 {
        let r = http.get(&url).send().await?;
        if r.status().is_success() {
            return Ok(r.json().await?);
        }
        last = r.status().to_string();
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    warn!(session = id, "summary never appeared");
    anyhow::bail!("no summary ({last})")
}
