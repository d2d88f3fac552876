use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use crowdnav::assets::{lint_scenario, AssetStore};
use crowdnav::batch::{run_batch, BatchPlan};
use crowdnav::bots::Policy;
use crowdnav::config::{ConfigFile, HostEndpoint, Pacing};
use crowdnav::telemetry::{aggregate_dir, read_log, recover_dir, render_report, write_json_atomic, DataLayout};
use crowdnav::{gateway, host, replay};

#[derive(Parser)]
#[command(name = "crowdnav", version, about = "Crowd navigation study platform")]
struct Cli {
    /// TOML file with `[host]` and `[gateway]` tables.
    #[arg(long, global = true, env = "CROWDNAV_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a service.
    #[command(subcommand)]
    Serve(Serve),
    /// Play many scripted participants through a gateway.
    Batch(BatchArgs),
    /// Check scenario files against the maps.
    Lint {
        files: Vec<PathBuf>,
        /// Extra maps and scenarios.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    /// Cohort rates over a data directory's summaries.
    Aggregate {
        data_dir: PathBuf,
        /// First summarize logs that have no summary, e.g. after a crash.
        #[arg(long)]
        recover: bool,
        /// Write report.json and report.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a session log as text.
    Replay {
        log: PathBuf,
        /// Show every n-th logged tick.
        #[arg(long, default_value_t = 20)]
        every: u64,
        /// Draw frames; needs the built-in or --assets map.
        #[arg(long)]
        draw: bool,
        #[arg(long)]
        assets: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Serve {
    Host(HostArgs),
    Gateway(GatewayArgs),
}

#[derive(Args)]
struct HostArgs {
    #[arg(long)]
    host_id: Option<String>,
    #[arg(long)]
    bind: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    max_sessions: Option<usize>,
    /// seconds
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long, value_parser = ["realtime", "lockstep"])]
    pacing: Option<String>,
    #[arg(long)]
    reap_period_ms: Option<u64>,
}

#[derive(Args)]
struct GatewayArgs {
    #[arg(long)]
    bind: Option<String>,
    /// `id=url`, repeatable; replaces the configured host list.
    #[arg(long = "host")]
    hosts: Vec<String>,
    #[arg(long)]
    health_period_ms: Option<u64>,
}

#[derive(Args)]
struct BatchArgs {
    /// Gateway base URL.
    #[arg(long, default_value = "http://127.0.0.1:7100")]
    gateway: String,
    #[arg(long, default_value_t = 10)]
    bots: usize,
    /// Repeatable; cycled over the bots. Defaults to every built-in scenario.
    #[arg(long = "scenario")]
    scenarios: Vec<String>,
    /// Repeatable; cycled over the bots.
    #[arg(long = "policy", value_enum)]
    policies: Vec<Policy>,
    #[arg(long, default_value = "bot")]
    user_prefix: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "batch-out")]
    out: PathBuf,
    /// Seconds to wait for a queued session.
    #[arg(long, default_value_t = 600)]
    max_wait: u64,
}

fn config(path: &Option<PathBuf>) -> anyhow::Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let file = config(&cli.config)?;
    match cli.cmd {
        Cmd::Serve(Serve::Host(a)) => {
            let mut s = file.host;
            s.apply_env(|k| std::env::var(k).ok())?;
            if let Some(v) = a.host_id {
                s.host_id = v;
            }
            if let Some(v) = a.bind {
                s.bind = v;
            }
            if let Some(v) = a.data_dir {
                s.data_dir = v;
            }
            if let Some(v) = a.max_sessions {
                s.max_sessions = v;
            }
            if let Some(v) = a.time_limit {
                s.time_limit = v;
            }
            if let Some(v) = a.reap_period_ms {
                s.reap_period_ms = v;
            }
            if let Some(v) = a.pacing {
                s.pacing = if v == "lockstep" { Pacing::Lockstep } else { Pacing::Realtime };
            }
            runtime()?.block_on(async {
                let listener = tokio::net::TcpListener::bind(&s.bind).await.with_context(|| format!("bind {}", s.bind))?;
                let state = host::prepare(s)?;
                println!("listening {}", listener.local_addr()?);
                host::serve(state, listener, host::shutdown_signal()).await
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Serve(Serve::Gateway(a)) => {
            let mut g = file.gateway;
            if let Some(v) = a.bind {
                g.bind = v;
            }
            if let Some(v) = a.health_period_ms {
                g.health_period_ms = v;
            }
            if !a.hosts.is_empty() {
                g.hosts = a
                    .hosts
                    .iter()
                    .map(|h| {
                        let (id, url) = h.split_once('=').with_context(|| format!("--host {h:?} is not id=url"))?;
                        Ok(HostEndpoint {
                            id: id.into(),
                            url: url.into(),
                        })
                    })
                    .collect::<anyhow::Result<_>>()?;
            }
            runtime()?.block_on(async {
                let listener = tokio::net::TcpListener::bind(&g.bind).await.with_context(|| format!("bind {}", g.bind))?;
                let state = gateway::GatewayState::new(g)?;
                println!("listening {}", listener.local_addr()?);
                gateway::serve(state, listener, host::shutdown_signal()).await
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Batch(a) => {
            let scenarios = if a.scenarios.is_empty() {
                AssetStore::builtin().scenarios().map(|s| s.id.clone()).collect()
            } else {
                a.scenarios
            };
            let plan = BatchPlan {
                base: a.gateway.trim_end_matches('/').to_owned(),
                bots: a.bots,
                user_prefix: a.user_prefix,
                scenarios,
                policies: if a.policies.is_empty() { vec![Policy::Compliant] } else { a.policies },
                seed: a.seed,
                out_dir: a.out,
                poll: Duration::from_millis(500),
                max_wait: Duration::from_secs(a.max_wait),
                tasks: file.host.tasks,
            };
            let outcome = runtime()?.block_on(run_batch(&plan))?;
            println!("assignments: {:?}", outcome.assignments);
            println!("rejected: {}", outcome.rejected.len());
            if let Some(r) = &outcome.report {
                print!("{}", render_report(r));
            }
            for c in &outcome.checks {
                println!("{} {}: {}", if c.ok { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            Ok(if outcome.ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Lint { files, assets } => {
            let mut store = AssetStore::builtin();
            if let Some(d) = &assets {
                store.load_dir(d)?;
            }
            let mut bad = 0;
            for f in &files {
                let text = std::fs::read_to_string(f).with_context(|| f.display().to_string())?;
                let r = lint_scenario(&store, &f.display().to_string(), &text, &file.host.nav);
                if r.ok() {
                    println!("ok   {}", r.file);
                } else {
                    bad += 1;
                    println!("FAIL {}", r.file);
                    for e in &r.errors {
                        println!("     {e}");
                    }
                }
            }
            Ok(if bad == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Aggregate { data_dir, recover, out } => {
            let layout = DataLayout::new(&data_dir);
            if recover {
                let n = recover_dir(&layout)?.len();
                eprintln!("recovered {n} logs");
            }
            let report = aggregate_dir(&layout.summaries())?;
            let text = render_report(&report);
            print!("{text}");
            if let Some(o) = out {
                std::fs::create_dir_all(&o)?;
                write_json_atomic(&o.join("report.json"), &report)?;
                std::fs::write(o.join("report.txt"), &text)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Replay { log, every, draw, assets } => {
            let parsed = read_log(&log).with_context(|| log.display().to_string())?;
            let mut store = AssetStore::builtin();
            if let Some(d) = &assets {
                store.load_dir(d)?;
            }
            let scenario = parsed.records.iter().find_map(|r| match r {
                crowdnav_core::metrics::LogRecord::Header(h) => store.scenario(&h.scenario_id).cloned(),
                _ => None,
            });
            let grid = scenario.as_ref().filter(|_| draw).and_then(|s| store.grid(&s.map));
            let landmark = scenario.as_ref().map(|s| (s.landmark.pose.x, s.landmark.pose.y));
            print!("{}", replay::render_log(&parsed, grid.as_deref(), landmark, every));
            Ok(ExitCode::SUCCESS)
        }
    }
}
