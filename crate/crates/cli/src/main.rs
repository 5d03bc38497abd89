use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use decavg::config::load_config;
use decavg::engine::{inspect, run_experiment};
use decavg::graph::{connectivity_report, Topology, TopologyConfig};

#[derive(Parser)]
#[command(name = "decavg", version, about = "Decentralized federated averaging simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Er,
    Ba,
    Sbm,
}

#[derive(Subcommand)]
enum Command {
    /// Run every replicate of an experiment config.
    Run {
        config: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        /// Output root; defaults to the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a graph and write it as an edge list.
    GenGraph {
        #[arg(long, value_enum)]
        kind: Kind,
        /// Node count (er, ba).
        #[arg(long)]
        n: Option<usize>,
        /// Edge probability (er).
        #[arg(long)]
        p: Option<f64>,
        /// Edges per arriving node (ba).
        #[arg(long)]
        m: Option<usize>,
        /// Comma-separated block sizes (sbm).
        #[arg(long, value_delimiter = ',')]
        blocks: Vec<usize>,
        #[arg(long)]
        p_in: Option<f64>,
        #[arg(long)]
        p_out: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print summary statistics of a run directory.
    Inspect { dir: PathBuf },
}

fn need<T>(v: Option<T>, flag: &str) -> anyhow::Result<T> {
    v.with_context(|| format!("--{flag} is required for this graph kind"))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { config, replicates, out } => {
            let mut cfg = load_config(&config).context("stage config failed")?;
            if let Some(k) = replicates {
                if k == 0 {
                    bail!("stage config failed: --replicates must be >= 1");
                }
                cfg.replicates = k;
            }
            if let Some(dir) = out {
                cfg.output = dir;
            }
            let report = run_experiment(&cfg)?;
            let mut failed = false;
            for rep in &report.replicates {
                match &rep.result {
                    Ok(()) => println!("replicate {} ok: {}", rep.index, rep.dir.display()),
                    Err(e) => {
                        failed = true;
                        eprintln!("replicate {} failed at stage {}: {}", rep.index, e.stage, e.source);
                    }
                }
            }
            println!("{}", report.root.display());
            Ok(if failed { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::GenGraph { kind, n, p, m, blocks, p_in, p_out, seed, out } => {
            let topology = match kind {
                Kind::Er => Topology::Er { n: need(n, "n")?, p: need(p, "p")? },
                Kind::Ba => Topology::Ba { n: need(n, "n")?, m: need(m, "m")? },
                Kind::Sbm => {
                    if blocks.is_empty() {
                        bail!("--blocks is required for sbm");
                    }
                    Topology::planted_partition(blocks, need(p_in, "p-in")?, need(p_out, "p-out")?)
                }
            };
            let g = TopologyConfig { topology, seed }.build().context("stage graph failed")?;
            g.write_edge_list(&out).context("stage output failed")?;
            let c = connectivity_report(&g);
            println!(
                "{} nodes, {} edges, {} components, wrote {}",
                g.n(),
                g.edge_count(),
                c.components,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Inspect { dir } => {
            print!("{}", inspect(&dir).context("stage inspect failed")?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
