use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dnq::net::load_checkpoint;
use dnq::pipeline::{
    cmd_eval, cmd_export, cmd_quantize, cmd_search, cmd_train, dump_layout, uniform_plan, PipelineConfig,
    SequenceFile,
};
use dnq::quant::BitWidth;

#[derive(Parser, Debug)]
#[command(name = "dnq", version, about = "Per-layer bit-width search and iterative weight quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config value, e.g. `--set controller.reward.lambda=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig> {
        PipelineConfig::load(&self.config, &self.overrides).with_context(|| format!("loading {}", self.config.display()))
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the float baseline.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Learn a bit-width sequence with the policy-gradient controller.
    Search {
        #[command(flatten)]
        common: Common,
        /// Float checkpoint (default: the run directory's).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Quantize the float model to a bit-width plan and write the packed model.
    Quantize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sequence file from `search` (default: the run directory's).
        #[arg(long, conflicts_with = "uniform_bits")]
        sequence: Option<PathBuf>,
        /// Quantize every layer to this width instead of reading a sequence.
        #[arg(long, value_name = "BITS")]
        uniform_bits: Option<u8>,
    },
    /// Evaluate a packed model on the configured eval split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        packed: Option<PathBuf>,
    },
    /// Write a packed model back out as a dequantized float checkpoint.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        packed: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the per-layer bit budget of the packed file.
        #[arg(long)]
        dump_layout: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = common.load()?;
            let s = cmd_train(&cfg)?;
            println!(
                "trained {}: train_accuracy={:.4} eval_accuracy={:.4} train_loss={:.5}",
                s.checkpoint.display(),
                s.train_accuracy,
                s.eval_accuracy,
                s.train_loss
            );
        }
        Command::Search { common, checkpoint } => {
            let cfg = common.load()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.paths.checkpoint());
            let s = cmd_search(&cfg, &ckpt)?;
            println!(
                "best sequence {} (accuracy={:.4} ratio={:.3} reward={:.4}); greedy {}; {} distinct sequences evaluated",
                s.best.sequence, s.best.accuracy, s.best.ratio, s.best.reward, s.greedy, s.cached_sequences
            );
            println!("wrote {}", s.sequence_file.display());
        }
        Command::Quantize {
            common,
            checkpoint,
            sequence,
            uniform_bits,
        } => {
            let cfg = common.load()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.paths.checkpoint());
            let plan = match uniform_bits {
                Some(b) => {
                    let model = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
                    uniform_plan(&model, BitWidth::new(b)?)
                }
                None => {
                    let path = sequence.unwrap_or_else(|| cfg.paths.sequence());
                    SequenceFile::load(&path).with_context(|| format!("loading {}", path.display()))?
                }
            };
            let s = cmd_quantize(&cfg, &ckpt, &plan)?;
            println!(
                "quantized to {}: eval_accuracy={:.4} (float {:.4}) ratio={:.3} file_bytes={}",
                s.packed.display(),
                s.eval_accuracy,
                s.float_eval_accuracy,
                s.ratio,
                s.file_bytes
            );
        }
        Command::Eval { common, packed } => {
            let cfg = common.load()?;
            let packed = packed.unwrap_or_else(|| cfg.paths.packed());
            let r = cmd_eval(&cfg, &packed)?;
            let bits: Vec<String> = r
                .bits
                .iter()
                .map(|b| b.map_or_else(|| "f32".to_string(), |b| b.to_string()))
                .collect();
            println!("bits={} accuracy={:.4} ratio={:.3}", bits.join("-"), r.accuracy, r.ratio);
        }
        Command::Export {
            common,
            packed,
            out,
            dump_layout: dump,
        } => {
            let cfg = common.load()?;
            let packed = packed.unwrap_or_else(|| cfg.paths.packed());
            if dump {
                println!("{}", dump_layout(&packed)?);
            }
            let out = out.unwrap_or_else(|| cfg.paths.export());
            if out.exists() && out == packed {
                bail!("refusing to overwrite the packed input {}", packed.display());
            }
            let written = cmd_export(&cfg, &packed, &out)?;
            println!("exported {}", written.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
