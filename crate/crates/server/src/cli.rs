use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use cocobo_core::dsl::{emit_program, parse_program, validate_program};
use cocobo_core::flowchart::{
    ast_to_graph, emit_mermaid, graph_to_ast, graph_to_render_json, parse_mermaid, render_json_to_graph,
};
use cocobo_core::llm::{ChainSettings, Script, ScriptedProvider};
use cocobo_core::session::{run_transcript, MemoryStore, ServiceConfig, SessionService, Transcript};
use cocobo_core::sim::bridge::{serve_bridge, BridgeOptions};
use cocobo_core::sim::{run_program, EventScript, WorldModel};
use cocobo_core::Diagnostics;

use crate::config::Config;

#[derive(Debug, Parser)]
#[command(name = "cocobo", version, about = "Conversational robot programming")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay a scripted authoring session and print the final program.
    Author {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        transcript: PathBuf,
        /// Places the chains may use.
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        max_repair_retries: u32,
        /// Also print each step's summary to stderr.
        #[arg(long)]
        verbose: bool,
    },
    /// Check that a program survives code, Mermaid and JSON conversions.
    Roundtrip { file: PathBuf },
    /// Run a program in the simulator and print its trace.
    Run {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        ask_timeout_ms: u64,
        /// One JSON object per line instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Start the API server, and a simulated bridge robot if configured.
    Serve {
        #[arg(long, default_value = "cocobo.toml")]
        config: PathBuf,
        /// Overrides `listen` from the config.
        #[arg(long)]
        listen: Option<String>,
    },
}

fn read_program(path: &Path) -> anyhow::Result<cocobo_core::dsl::RobotProgram> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_program(&text).map_err(|d| anyhow::anyhow!("{}:\n{d}", path.display()))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Author {
            script,
            transcript,
            world,
            max_repair_retries,
            verbose,
        } => {
            let provider = Arc::new(ScriptedProvider::new(Script::load(&script)?));
            let config = ServiceConfig {
                settings: ChainSettings {
                    max_repair_retries,
                    ..ChainSettings::default()
                },
                world: world.as_deref().map(WorldModel::load).transpose()?,
                ..ServiceConfig::default()
            };
            let service = SessionService::new(Arc::new(MemoryStore::new()), provider, config);
            let t = Transcript::load(&transcript)?;
            let result = run_transcript(&service, &t)?;
            if verbose {
                for s in &result.steps {
                    eprintln!("[{}] {}", s.step, s.summary);
                }
            }
            match result.final_code() {
                Some(code) => write!(out, "{code}")?,
                None => bail!("the session ended without a program"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Roundtrip { file } => {
            let program = read_program(&file)?;
            let graph = ast_to_graph(&program);
            let mut ok = true;
            let mut check = |name: &str, pass: bool| -> std::io::Result<()> {
                ok &= pass;
                writeln!(out, "{} {name}", if pass { "ok  " } else { "FAIL" })
            };
            check("code", parse_program(&emit_program(&program)).is_ok_and(|p| p == program))?;
            let via_mermaid = parse_mermaid(&emit_mermaid(&graph));
            check("mermaid", via_mermaid.as_ref().is_ok_and(|g| *g == graph))?;
            let via_json = render_json_to_graph(&graph_to_render_json(&graph));
            check("json", via_json.as_ref().is_ok_and(|g| *g == graph))?;
            check("graph", graph_to_ast(&graph).is_ok_and(|p| p == program))?;
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Run {
            program,
            world,
            events,
            ask_timeout_ms,
            json,
        } => {
            let program = read_program(&program)?;
            let world = WorldModel::load(&world)?;
            let events = match events {
                Some(p) => EventScript::load(&p)?,
                None => EventScript::default(),
            };
            let errors: Vec<_> = validate_program(&program, &world.catalog())
                .into_iter()
                .filter(|d| d.is_error())
                .collect();
            if !errors.is_empty() {
                bail!("{}", Diagnostics(errors));
            }
            let trace = run_program(&program, &world, &events, ask_timeout_ms)?;
            if json {
                for e in &trace.0 {
                    writeln!(out, "{}", serde_json::to_string(e)?)?;
                }
            } else {
                write!(out, "{}", trace.render())?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { config, listen } => {
            let mut config = Config::load(&config)?;
            if let Some(l) = listen {
                config.listen = l;
            }
            serve(config)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn serve(config: Config) -> anyhow::Result<()> {
    let service = Arc::new(config.service()?);
    let _bridge = match &config.bridge {
        Some(b) => {
            let world = config.world()?.context("a bridge needs `world` in the config")?;
            let server = serve_bridge(world, config.events()?, b.listen.as_str(), BridgeOptions {
                time_scale: b.time_scale,
            })?;
            log::info!("simulated robot bridge at {}", server.url());
            Some(server)
        }
        None => None,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&config.listen)
            .await
            .with_context(|| format!("binding {}", config.listen))?;
        log::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, crate::router(service))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
