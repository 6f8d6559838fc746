use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use harmosep::commands::{
    cmd_eval, cmd_separate, cmd_synth, cmd_train, cmd_transform, EvalArgs, SeparateArgs, SynthArgs, TrainArgs,
    TransformArgs,
};
use harmosep::config::RunConfig;
use harmosep::fixture::FixtureKind;
use harmosep::parallel::init_thread_pool;
use harmosep::{Error, Execution};

#[derive(Parser, Debug)]
#[command(name = "harmosep", version, about = "Blind separation of harmonic instruments in music recordings")]
struct Cli {
    /// TOML file with run settings; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for frame-parallel stages.
    #[arg(long, global = true, env = "HARMOSEP_THREADS")]
    threads: Option<usize>,

    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    /// Directory for output files.
    #[arg(long, short = 'o', global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the log-frequency spectrogram of a WAV file and cache it.
    Transform {
        input: PathBuf,
        /// Cache file to write.
        #[arg(long)]
        cache: PathBuf,
        /// Also write the log-frequency spectrogram as a PGM image.
        #[arg(long)]
        pgm: Option<PathBuf>,
        /// Also write the linear-frequency spectrogram as a PGM image.
        #[arg(long)]
        linear_pgm: Option<PathBuf>,
    },
    /// Learn a dictionary of instrument profiles from a cached spectrogram.
    Train {
        cache: PathBuf,
        /// Dictionary file to write.
        #[arg(long)]
        dict: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        n_trn: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Separate a recording into one WAV per instrument.
    Separate {
        input: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        /// Reuse the cache written by `transform` for this input.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        model: ModelFlags,
        /// Resynthesize the instrument models without spectral masking.
        #[arg(long)]
        no_mask: bool,
        #[arg(long)]
        gl_iters: Option<usize>,
    },
    /// Score estimated stems against references (SDR, SIR, SAR).
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        reference: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        estimate: Vec<PathBuf>,
    },
    /// Write a synthetic two-instrument mixture with its sources.
    Synth {
        #[arg(long, value_enum, default_value_t = Kind::Melody)]
        kind: Kind,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 48_000)]
        rate: u32,
        #[arg(long, default_value = "fixture")]
        stem: String,
    },
}

#[derive(Args, Debug)]
struct ModelFlags {
    #[arg(long)]
    n_ins: Option<usize>,
    #[arg(long)]
    n_spr: Option<usize>,
    #[arg(long)]
    n_har: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Kind {
    Melody,
    Octave,
}

fn apply_model(cfg: &mut RunConfig, m: &ModelFlags) {
    if let Some(v) = m.n_ins {
        cfg.n_ins = v;
    }
    if let Some(v) = m.n_spr {
        cfg.n_spr = v;
    }
    if let Some(v) = m.n_har {
        cfg.n_har = v;
    }
}

fn run(cli: Cli) -> harmosep::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(d) = &cli.out_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        init_thread_pool(t);
    }
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };

    match cli.command {
        Command::Transform {
            input,
            cache,
            pgm,
            linear_pgm,
        } => {
            cmd_transform(
                &TransformArgs {
                    input,
                    output: cache,
                    pgm,
                    linear_pgm,
                },
                &cfg,
                exec,
            )?;
        }
        Command::Train {
            cache,
            dict,
            model,
            n_trn,
            seed,
        } => {
            apply_model(&mut cfg, &model);
            if let Some(v) = n_trn {
                cfg.n_trn = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            let d = cmd_train(&TrainArgs { cache, output: dict }, &cfg)?;
            println!("kept columns: {:?}", d.kept);
        }
        Command::Separate {
            input,
            dict,
            cache,
            model,
            no_mask,
            gl_iters,
        } => {
            apply_model(&mut cfg, &model);
            if no_mask {
                cfg.use_mask = false;
            }
            if let Some(v) = gl_iters {
                cfg.gl_iters = v;
            }
            let out = cmd_separate(
                &SeparateArgs {
                    input,
                    dictionary: dict,
                    cache,
                },
                &cfg,
                exec,
            )?;
            for p in &out.stems {
                println!("{}", p.display());
            }
        }
        Command::Eval { reference, estimate } => {
            let scores = cmd_eval(&EvalArgs {
                references: reference,
                estimates: estimate,
            })?;
            print!("{}", scores.report());
        }
        Command::Synth {
            kind,
            duration,
            seed,
            rate,
            stem,
        } => {
            let kind = match kind {
                Kind::Melody => FixtureKind::Melody,
                Kind::Octave => FixtureKind::OctaveOverlap,
            };
            let out = cmd_synth(
                &SynthArgs {
                    kind,
                    duration_s: duration,
                    seed,
                    sample_rate_hz: rate,
                    stem,
                },
                &cfg,
            )?;
            println!("{}", out.mix.display());
            for p in &out.references {
                println!("{}", p.display());
            }
            println!("{}", out.dictionary.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("harmosep: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
