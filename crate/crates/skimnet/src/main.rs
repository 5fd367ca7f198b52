use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use skimnet::commands;

#[derive(Parser)]
#[command(name = "skimnet", about = "Audio-visual distillation and recurrent skimming benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset splits.
    Gen(Common),
    /// Train the teacher, then distill the image+audio student.
    Distill(Common),
    /// Train the recurrent skimmer on top of a distilled student.
    TrainSkim(Common),
    /// Evaluate the configured strategies on the test split.
    Eval(Common),
    /// Sweep an inference-budget axis and plot accuracy curves.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// subsample_factor or t_stop; both when omitted.
        #[arg(long)]
        axis: Option<String>,
    },
    /// Finite-difference checks over all differentiable modules.
    Gradcheck(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(c) => commands::cmd_gen(&c.config, c.seed, c.out.clone()),
        Command::Distill(c) => commands::cmd_distill(&c.config, c.seed, c.out.clone()),
        Command::TrainSkim(c) => commands::cmd_train_skim(&c.config, c.seed, c.out.clone()),
        Command::Eval(c) => commands::cmd_eval(&c.config, c.seed, c.out.clone()),
        Command::Sweep { common, axis } => {
            commands::cmd_sweep(&common.config, common.seed, common.out.clone(), axis.as_deref())
        }
        Command::Gradcheck(c) => commands::cmd_gradcheck(&c.config, c.seed, c.out.clone()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.category.exit_code() as u8)
        }
    }
}
