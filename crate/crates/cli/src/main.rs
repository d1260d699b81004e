//! `scg`: sample, edit, extract rules, evaluate, train and verify from the
//! command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{parse_schedule, parse_selection, parse_window, RunConfig};

#[derive(Parser)]
#[command(
    name = "scg",
    version,
    about = "Rule-guided diffusion sampling with stochastic control guidance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw samples, guided when a loss or rule targets are given.
    Sample(RunArgs),
    /// Regenerate the unmasked part of a source roll.
    Edit(EditArgs),
    /// Extract pitch-histogram, note-density and chord targets from a roll.
    Rules(RulesArgs),
    /// Overlapping area and similarities between two directories of rolls.
    Eval(EvalArgs),
    /// Train a denoiser on a directory of rolls or the synthetic corpus.
    Train(TrainArgs),
    /// Run the acceptance battery; exits nonzero on any failure.
    Verify(VerifyArgs),
}

/// Flags shared by the sampling commands. Each overrides the same field of `--config`.
#[derive(Args, Debug)]
struct RunArgs {
    /// JSON run configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mixture JSON (.json) or denoiser file.
    #[arg(long)]
    backend: Option<PathBuf>,
    /// Linear schedule T,beta_1,beta_T (mixture backends).
    #[arg(long, value_parser = parse_schedule)]
    schedule: Option<scg_core::schedule::ScheduleSpec>,
    /// Candidates per guided step.
    #[arg(long)]
    n: Option<usize>,
    /// Guided window start:end (guided while end < t <= start).
    #[arg(long, value_parser = parse_window)]
    guide: Option<(usize, usize)>,
    #[arg(long)]
    every_k: Option<usize>,
    /// argmax or softmax:K.
    #[arg(long, value_parser = parse_selection)]
    selection: Option<scg_core::guidance::Selection>,
    /// Rule weights ph,nd,cp.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    weights: Option<Vec<f64>>,
    /// Rule-target JSON for piano-roll backends.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Mixture-backend loss: quadratic:c[,c..] or step:threshold,penalty.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step diagnostics (JSON lines); defaults to <out>/diagnostics.jsonl.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Stochastic DDIM noise scale.
    #[arg(long)]
    eta: Option<f64>,
    /// Stochastic DDIM subsequence length.
    #[arg(long)]
    steps: Option<usize>,
    /// Stop at this step and return the clean estimate.
    #[arg(long)]
    stop_at_t: Option<usize>,
    /// Samples to draw, on seeds seed, seed+1, ...
    #[arg(long)]
    num_samples: Option<usize>,
}

impl RunArgs {
    fn resolve(self, command: &str) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        c.command = command.to_string();
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { c.$field = Some(v); } )* };
        }
        take!(backend, rules, loss, seed, out, diagnostics, eta, steps);
        if let Some(s) = self.schedule {
            c.schedule = Some(s);
        }
        let g = &mut c.guidance;
        if let Some(n) = self.n {
            g.n = n;
        }
        if let Some((start, end)) = self.guide {
            g.guide_start_t = start;
            g.guide_end_t = end;
        }
        if let Some(k) = self.every_k {
            g.every_k = k;
        }
        if let Some(s) = self.selection {
            g.selection = s;
        }
        if let Some(w) = self.weights {
            g.weights = w;
        }
        if let Some(s) = self.stop_at_t {
            g.stop_at_t = Some(s);
        }
        if let Some(n) = self.num_samples {
            c.num_samples = n;
        }
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct EditArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Source roll (.mid or PR01).
    #[arg(long)]
    source: Option<PathBuf>,
    /// Cells to regenerate: all, none, time:START:END or pitch:LOW:HIGH.
    #[arg(long)]
    mask: Option<String>,
    /// Forward-diffusion step K the source is noised to.
    #[arg(long)]
    noise_level: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RulesArgs {
    /// Roll to analyse (.mid or PR01).
    pub input: PathBuf,
    /// Frames read from MIDI input.
    #[arg(long, default_value_t = 1024)]
    pub frames: usize,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Reference rolls (.mid or PR01 files).
    #[arg(long)]
    pub reference: PathBuf,
    /// Generated rolls, compared against the reference set.
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub frames: usize,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory of training rolls; the synthetic corpus when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Frames per training roll read from MIDI.
    #[arg(long, default_value_t = scg_core::toy::TOY_FRAMES)]
    pub frames: usize,
    /// Synthetic corpus size when no --data is given.
    #[arg(long, default_value_t = scg_core::toy::TOY_CORPUS_SIZE)]
    pub corpus_size: usize,
    #[arg(long, value_parser = parse_schedule)]
    pub schedule: Option<scg_core::schedule::ScheduleSpec>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub train_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output model file.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Criterion ids, comma separated; all when absent.
    #[arg(long, value_delimiter = ',')]
    pub criteria: Vec<u8>,
    /// Use this denoiser for the piano-roll criteria instead of training one.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Sample(a) => commands::sample(&a.resolve("sample")?).map(|_| true),
        Command::Edit(a) => {
            let mut c = a.run.resolve("edit")?;
            if a.source.is_some() {
                c.source = a.source;
            }
            if a.mask.is_some() {
                c.mask = a.mask;
            }
            if a.noise_level.is_some() {
                c.noise_level = a.noise_level;
            }
            commands::edit(&c).map(|_| true)
        }
        Command::Rules(a) => commands::rules(&a).map(|_| true),
        Command::Eval(a) => commands::eval(&a).map(|_| true),
        Command::Train(a) => commands::train(&a).map(|_| true),
        Command::Verify(a) => commands::verify(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
