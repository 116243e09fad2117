//! Batch pipeline behind the `framot` binary.

pub mod commands;
pub mod config;

use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use config::{keys_help, ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "framot", version, about = "Frame-rate-agnostic multi-object tracking experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration file (key=value lines).
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    /// Override one key; repeatable and applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for per-video work.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct WithModel {
    #[command(flatten)]
    common: Common,
    /// Use the fixed IoU/appearance rule instead of a checkpoint.
    #[arg(long)]
    trivial: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write every strided video of the benchmark at each k.
    Simulate(Common),
    /// Write randomly sampled videos and their gap statistics.
    Dynsim(Common),
    /// Write synthetic detections and embeddings per sequence.
    GenDetections(Common),
    /// Train the association network; writes the checkpoint and period logs.
    Train(Common),
    /// Track every video and write result files.
    Track(WithModel),
    /// Score result files against ground truth.
    Eval(Common),
    /// Write candidate-count curves.
    AnalyzeCandidates(Common),
    /// Write labelled affinity features with and without tracking patterns.
    ExportAffinity(WithModel),
}

/// Maps `f` over `items` on up to `jobs` threads; output order follows input.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut parts: Vec<(usize, R)> = std::thread::scope(|s| {
        let workers: Vec<_> = (0..jobs)
            .map(|_| {
                s.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(item) = items.get(i) else { break };
                        out.push((i, f(item)));
                    }
                    out
                })
            })
            .collect();
        workers.into_iter().flat_map(|w| w.join().expect("worker panicked")).collect()
    });
    parts.sort_by_key(|p| p.0);
    parts.into_iter().map(|p| p.1).collect()
}

fn load(common: &Common) -> anyhow::Result<RunConfig> {
    let text = match &common.config {
        Some(p) => Some(
            std::fs::read_to_string(p)
                .map_err(|e| ConfigError::Syntax(format!("cannot read config {}: {e}", p.display())))?,
        ),
        None => None,
    };
    Ok(RunConfig::load(text.as_deref(), &common.set)?)
}

fn dispatch(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Simulate(c) => commands::simulate(&load(&c)?),
        Cmd::Dynsim(c) => commands::dynsim(&load(&c)?),
        Cmd::GenDetections(c) => commands::gen_detections(&load(&c)?, c.jobs),
        Cmd::Train(c) => commands::train(&load(&c)?),
        Cmd::Track(m) => commands::track(&load(&m.common)?, m.common.jobs, m.trivial),
        Cmd::Eval(c) => commands::eval(&load(&c)?, c.jobs),
        Cmd::AnalyzeCandidates(c) => commands::analyze_candidates(&load(&c)?),
        Cmd::ExportAffinity(m) => commands::export_affinity(&load(&m.common)?, m.trivial),
    }
}

/// Runs one invocation; returns the process exit code (0 success, 1
/// pipeline error, 2 configuration or usage error).
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let help = keys_help();
    let command = Cli::command().after_help(help.clone()).mut_subcommands(|s| s.after_help(help.clone()));
    let cli = match command.try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("config error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order() {
        let items: Vec<u32> = (0..50).collect();
        assert_eq!(par_map(&items, 4, |x| x * 2), items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(par_map(&[] as &[u32], 3, |x| *x).is_empty());
    }
}
