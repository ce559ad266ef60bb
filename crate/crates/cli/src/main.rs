use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hetroute::experiment::{
    cmd_eval, cmd_mobility, cmd_sweep, cmd_train, load_net, print_means, with_threads, Scenario, ScenarioConfig,
};

#[derive(Parser)]
#[command(name = "hetroute", version, about = "Multi-flow routing experiments for heterogeneous wireless networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "HETROUTE_OUT", default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Agent checkpoint, required when a scheme is `dqn`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of topology seeds; overrides `eval.seeds`.
    #[arg(long)]
    seeds: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write its checkpoint plus episode and loss logs.
    Train {
        #[command(flatten)]
        common: Common,
        /// Where to write the checkpoint [default: <out>/agent.hrqn].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue the run saved in this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Route every scheme on the evaluation seeds; write per-seed rates and CDFs.
    Eval(EvalArgs),
    /// Evaluate once per value of the `[sweep]` axis.
    Sweep(EvalArgs),
    /// Per-second sum rate under node mobility.
    Mobility(EvalArgs),
}

fn scenario(path: &Path, seeds: Option<usize>) -> Result<Scenario> {
    let mut cfg = ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(n) = seeds {
        if n == 0 {
            bail!("--seeds must be at least 1");
        }
        cfg.eval.seeds = n;
    }
    Ok(Scenario::new(cfg)?)
}

fn run(cli: Cli) -> Result<()> {
    let start = Instant::now();
    match cli.command {
        Command::Train { common, checkpoint, resume } => {
            let sc = scenario(&common.config, None)?;
            let ck = checkpoint.unwrap_or_else(|| common.out.join("agent.hrqn"));
            let out = with_threads(common.threads, || cmd_train(&sc, &common.out, &ck, resume.as_deref()))??;
            println!(
                "trained {} episodes ({} gradient steps) in {:.1}s; checkpoint {}",
                out.trainer.episode,
                out.loss_rows,
                start.elapsed().as_secs_f64(),
                out.checkpoint.display()
            );
        }
        Command::Eval(a) => {
            let sc = scenario(&a.common.config, a.seeds)?;
            let net = load_net(a.checkpoint.as_deref(), &sc)?;
            let seeds = sc.config.seeds();
            let rows = with_threads(a.common.threads, || cmd_eval(&sc, net.as_ref(), &seeds, &a.common.out))??;
            print_means(&rows, &sc.config.schemes(), &mut std::io::stdout())?;
            println!("{} topologies in {:.1}s; wrote {}", seeds.len(), start.elapsed().as_secs_f64(), a.common.out.display());
        }
        Command::Sweep(a) => {
            let sc = scenario(&a.common.config, a.seeds)?;
            let net = load_net(a.checkpoint.as_deref(), &sc)?;
            let seeds = sc.config.seeds();
            let rows = with_threads(a.common.threads, || cmd_sweep(&sc, net.as_ref(), &seeds, &a.common.out))??;
            for r in &rows {
                println!("{:>6} {:<24} {:>10.3} Mbps  ± {:.3}", r.value, r.scheme.name(), r.mean_bps / 1e6, r.stderr_bps / 1e6);
            }
        }
        Command::Mobility(a) => {
            let sc = scenario(&a.common.config, a.seeds)?;
            let net = load_net(a.checkpoint.as_deref(), &sc)?;
            let seeds = sc.config.seeds();
            let rows = with_threads(a.common.threads, || cmd_mobility(&sc, net.as_ref(), &seeds, &a.common.out))??;
            println!("{} rows over {} topologies; wrote {}", rows.len(), seeds.len(), a.common.out.join("mobility.csv").display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
