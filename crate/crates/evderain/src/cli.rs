//! Argument parsing for the `evderain` binary.
//!
//! Settings resolve in this order, later ones winning: built-in defaults,
//! the `--config` file, the `EVDERAIN_SEED` environment variable, then
//! command-line flags.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use evderain_core::curves::ScanMode;
use evderain_core::raingen::Background;

use crate::checkpoint::Checkpoint;
use crate::commands::{self, Kernel, Method};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{load_events, Format};

#[derive(Debug, Parser)]
#[command(name = "evderain", version, about = "Point-based deraining for event cameras")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving every output file.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed, overriding the config file and EVDERAIN_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::resolve(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

/// Window settings shared by commands that build clouds.
#[derive(Debug, Args)]
pub struct WindowArgs {
    /// Seconds per temporal window.
    #[arg(long)]
    pub window_duration: Option<f64>,
    /// Windows per cloud.
    #[arg(long)]
    pub windows: Option<usize>,
    /// Sensor width assumed for CSV input.
    #[arg(long)]
    pub sensor_width: Option<u32>,
    /// Sensor height assumed for CSV input.
    #[arg(long)]
    pub sensor_height: Option<u32>,
}

impl WindowArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.window.duration, self.window_duration);
        set(&mut cfg.window.count, self.windows);
        set(&mut cfg.sensor.width, self.sensor_width);
        set(&mut cfg.sensor.height, self.sensor_height);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn scan_mode(s: &str) -> std::result::Result<ScanMode, String> {
    ScanMode::parse(s).ok_or_else(|| {
        let names: Vec<&str> = ScanMode::ALL.iter().map(|m| m.name()).collect();
        format!("unknown scan mode `{s}` (expected one of {})", names.join(", "))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scene {
    StaticEdges,
    MovingBar,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize labeled rainy sequences.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sequences: Option<usize>,
        /// Rain intensity in mm/hr.
        #[arg(long)]
        intensity: Option<f64>,
        #[arg(long, value_enum)]
        scene: Option<Scene>,
        /// Use the events of this file as the clean background instead.
        #[arg(long, conflicts_with = "scene")]
        background: Option<PathBuf>,
        /// Sequence length in seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
        /// Background events per second.
        #[arg(long)]
        background_rate: Option<f64>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Also write the unlabeled rainy and clean streams.
        #[arg(long)]
        pairs: bool,
    },
    /// Label a rainy recording against a clean one by nearest neighbours.
    Label {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rainy: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        radius_px: Option<u32>,
        #[arg(long)]
        radius_us: Option<u64>,
    },
    /// Train the network.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        window: WindowArgs,
        /// Training files, replacing paths.train.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        train: Vec<PathBuf>,
        /// Validation files, replacing paths.val.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        val: Vec<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        weight_decay: Option<f64>,
        #[arg(long)]
        clip_norm: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Encoder widths, e.g. `16,32`.
        #[arg(long, value_delimiter = ',')]
        channels: Option<Vec<usize>>,
        #[arg(long)]
        grid_bits: Option<u32>,
        /// Use one scan mode for every block.
        #[arg(long, value_parser = scan_mode)]
        scan_mode: Option<ScanMode>,
        /// Ablation row: m1, m2, m3, m4 or full.
        #[arg(long)]
        ablation: Option<String>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop once this many updates have been applied in total.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Predict per-event labels.
    Infer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        input: Vec<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "model")]
        method: Method,
    },
    /// Score prediction files against labeled event files.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        predictions: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        labels: Vec<PathBuf>,
    },
    /// Power spectrum and run lengths of a label sequence.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        /// Order labels along this curve instead of by time.
        #[arg(long, value_parser = scan_mode)]
        scan_mode: Option<ScanMode>,
        #[arg(long)]
        grid_bits: Option<u32>,
    },
    /// Time the selective scan at several sequence lengths.
    BenchScan {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = [100_000usize, 200_000])]
        length: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        channels: usize,
        #[arg(long, default_value_t = 8)]
        state: usize,
        #[arg(long, value_enum, default_value = "reference")]
        kernel: Kernel,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
}

/// Rejects a checkpoint whose tensors do not fit the configured network.
fn check_fit(ck: &Checkpoint, cfg: &RunConfig, config_given: bool) -> Result<()> {
    if config_given {
        ck.params
            .check_against(&cfg.network)
            .map_err(|e| Error::Mismatch(e.to_string()))?;
    }
    Ok(())
}

fn run_command(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate {
            common,
            sequences,
            intensity,
            scene,
            background,
            duration,
            width,
            height,
            background_rate,
            format,
            pairs,
        } => {
            let mut cfg = common.resolve()?;
            let g = &mut cfg.generate;
            set(&mut g.sequences, sequences);
            set(&mut g.rain.intensity, intensity);
            set(&mut g.scene.duration, duration);
            set(&mut g.scene.sensor_width, width);
            set(&mut g.scene.sensor_height, height);
            set(&mut g.scene.background_rate, background_rate);
            set(&mut g.format, format);
            match scene {
                Some(Scene::StaticEdges) => g.scene.background = Background::StaticEdges,
                Some(Scene::MovingBar) => g.scene.background = Background::MovingBar,
                None => {}
            }
            if let Some(path) = background {
                g.scene.background = Background::Events(load_events(&path, Format::from_path(&path))?);
            }
            for f in commands::generate(&cfg, &common.out, pairs)? {
                println!(
                    "wrote {} events={} rain={} fraction={:.4}",
                    common.out.join(&f.file).display(),
                    f.events,
                    f.rain_events,
                    f.rain_fraction
                );
            }
        }
        Command::Label {
            common,
            rainy,
            clean,
            k,
            radius_px,
            radius_us,
        } => {
            let mut cfg = common.resolve()?;
            set(&mut cfg.knn.k, k);
            set(&mut cfg.knn.radius_px, radius_px);
            set(&mut cfg.knn.radius_us, radius_us);
            let r = commands::label(&rainy, &clean, cfg.knn.k, cfg.knn.radius(), &common.out)?;
            if r.empty_clean {
                eprintln!("evderain: warning kind=empty-clean reason=\"clean stream has no events; every event labeled rain\"");
            }
            println!("wrote {} events={} rain={}", r.path.display(), r.events, r.rain);
        }
        Command::Train {
            common,
            window,
            train,
            val,
            epochs,
            lr,
            batch_size,
            weight_decay,
            clip_norm,
            lambda,
            channels,
            grid_bits,
            scan_mode,
            ablation,
            resume,
            steps,
        } => {
            let mut cfg = common.resolve()?;
            window.apply(&mut cfg);
            if !train.is_empty() {
                cfg.paths.train = train;
            }
            if !val.is_empty() {
                cfg.paths.val = val;
            }
            set(&mut cfg.optim.epochs, epochs);
            set(&mut cfg.optim.lr, lr);
            set(&mut cfg.optim.batch_size, batch_size);
            set(&mut cfg.optim.weight_decay, weight_decay);
            set(&mut cfg.optim.clip_norm, clip_norm);
            set(&mut cfg.loss.lambda, lambda);
            set(&mut cfg.network.encoder_channels, channels);
            set(&mut cfg.network.grid_bits, grid_bits);
            if let Some(m) = scan_mode {
                cfg.network.scan_schedule = vec![m];
            }
            if let Some(name) = ablation {
                cfg.network = cfg
                    .network
                    .clone()
                    .ablation(&name)
                    .ok_or_else(|| Error::Usage(format!("unknown ablation `{name}` (expected m1..m4 or full)")))?;
            }
            if cfg.optim.min_lr > cfg.optim.lr {
                cfg.optim.min_lr = cfg.optim.lr;
            }
            cfg.validate()?;
            let resume = match resume {
                Some(p) => {
                    let ck = Checkpoint::load(&p)?;
                    check_fit(&ck, &cfg, common.config.is_some())?;
                    Some(ck)
                }
                None => None,
            };
            let s = commands::train(&cfg, &common.out, resume, steps)?;
            if let Some(last) = s.history.last() {
                println!("step {} of {} loss={:.6} ce={:.6}", last.step, s.total_steps, last.total, last.ce);
            }
            println!("wrote {}", s.checkpoint.display());
        }
        Command::Infer {
            common,
            window,
            input,
            checkpoint,
            method,
        } => {
            let mut cfg = common.resolve()?;
            window.apply(&mut cfg);
            cfg.validate()?;
            let ck = match &checkpoint {
                Some(p) => {
                    let ck = Checkpoint::load(p)?;
                    check_fit(&ck, &cfg, common.config.is_some())?;
                    ck.params
                        .check_against(&ck.meta.network)
                        .map_err(|e| Error::Mismatch(e.to_string()))?;
                    Some(ck)
                }
                None => None,
            };
            let net = match &ck {
                Some(ck) if common.config.is_none() => ck.meta.network.clone(),
                _ => cfg.network.clone(),
            };
            let model = ck.as_ref().map(|ck| (&net, &ck.params));
            for p in commands::infer(&input, method, model, &cfg, &cfg.filters, &common.out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Eval {
            common,
            predictions,
            labels,
        } => {
            let r = commands::eval(&predictions, &labels, &common.out)?;
            println!("sr={:.6} nr={:.6} da={:.6}", r.sr, r.nr, r.da);
            println!("wrote {}", common.out.join(commands::REPORT_FILE).display());
        }
        Command::Spectrum {
            common,
            window,
            input,
            bins,
            scan_mode,
            grid_bits,
        } => {
            let mut cfg = common.resolve()?;
            window.apply(&mut cfg);
            set(&mut cfg.network.grid_bits, grid_bits);
            cfg.validate()?;
            let s = commands::spectrum(&input, bins, scan_mode, &cfg, &common.out)?;
            println!(
                "peak_frequency={} median_run_length={}",
                s.peak_frequency.map_or("none".into(), |f| f.to_string()),
                s.median_run_length().map_or("none".into(), |m| m.to_string())
            );
        }
        Command::BenchScan {
            out,
            length,
            channels,
            state,
            kernel,
            repeats,
        } => {
            for (l, secs) in commands::bench_scan(&length, channels, state, kernel, repeats, &out)? {
                println!("length={l} seconds={secs:.6}");
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Errors are reported as one line on
/// stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("bad arguments")
                .trim_start_matches("error: ");
            let err = Error::Usage(first.to_string());
            eprintln!("{}", err.one_line());
            return err.exit_code();
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.one_line());
            e.exit_code()
        }
    }
}
