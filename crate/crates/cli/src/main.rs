use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gjsscc::channel::{self, ChannelSpec, CodingMode};
use gjsscc::classifier::{ExternalOracle, Oracle, PrototypeModel};
use gjsscc::imaging::{self, RegionMask, RegionSet};
use gjsscc::link::{BackgroundPolicy, LinkProfile};
use gjsscc::pipeline::{self, GridSpec, PartitionFile, RegionSetFile, Scheme, SchemeInputs, SweepConfig};
use gjsscc::shapley::{self, CoalitionGame, CodingProfile, EstimatorChoice};
use gjsscc::source_codec::SourceMode;

#[derive(Parser)]
#[command(
    name = "gjsscc",
    version,
    about = "Goal-oriented joint semantic source and channel coding simulator"
)]
struct Cli {
    /// Master seed for every random stream [default: 0, or the config's seed].
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Channel realizations per evaluation.
    #[arg(long, global = true)]
    trials: Option<usize>,

    /// `builtin:<model.json>` or `external:<command>`.
    #[arg(long, global = true)]
    oracle: Option<String>,

    /// Seconds to wait for each external oracle response.
    #[arg(long, global = true, default_value_t = 30)]
    oracle_timeout: u64,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid-split an object mask into regions.
    Segment {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        cols: usize,
    },
    /// Shapley values of the regions under a coding profile.
    Shapley {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        #[arg(long)]
        target: usize,
        #[command(flatten)]
        profile: ProfileArgs,
        /// Use the permutation sampler with this many permutations.
        #[arg(long)]
        permutations: Option<usize>,
    },
    /// Find the most important region and rank the rest.
    Extract {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        #[arg(long)]
        target: usize,
        #[arg(long)]
        p_th: f64,
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long, default_value_t = shapley::EXHAUSTIVE_LIMIT)]
        exhaustive_limit: usize,
        #[arg(long, default_value_t = shapley::DEFAULT_PERMUTATIONS)]
        permutations: usize,
    },
    /// Run one transmission scheme.
    Run {
        #[arg(long)]
        image: PathBuf,
        /// Partition written by `extract`.
        #[arg(long, conflicts_with_all = ["mask"])]
        partition: Option<PathBuf>,
        /// Object mask; regions are extracted on the fly.
        #[arg(long, requires = "p_th")]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        cols: usize,
        #[arg(long)]
        p_th: Option<f64>,
        #[arg(long)]
        target: usize,
        /// star | star_positive | star_negative | full
        #[arg(long, default_value = "star")]
        scheme: String,
        /// Coding mode for the protected group of this scheme.
        #[arg(long)]
        scheme_coding: Option<Coding>,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// Config-driven sweep; writes sweep.csv and sweep.json.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Minimum channel blocklength for K information bits.
    Na {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        ber_channel: f64,
        #[arg(long)]
        ber_target: f64,
        #[arg(long, value_enum, default_value_t = Coding::Na)]
        mode: Coding,
        /// Print the full result as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Coding {
    Na,
    Ideal,
}

impl From<Coding> for CodingMode {
    fn from(c: Coding) -> Self {
        match c {
            Coding::Na => CodingMode::Na,
            Coding::Ideal => CodingMode::Ideal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Codec,
    Uncompressed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Background {
    Transmit,
    Omit,
    Pristine,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long, default_value_t = 1)]
    q_b: u8,
    #[arg(long, default_value_t = 50)]
    q_t: u8,
    /// Raw channel bit error rate.
    #[arg(long)]
    eps_c: Option<f64>,
    /// Channel power gain; alternative to --eps-c.
    #[arg(long, conflicts_with = "eps_c")]
    h2: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    snr_scale: f64,
    #[arg(long)]
    eps_t: f64,
    #[arg(long, value_enum, default_value_t = Coding::Na)]
    coding: Coding,
    #[arg(long, value_enum, default_value_t = Source::Codec)]
    source: Source,
    #[arg(long, value_enum, default_value_t = Background::Transmit)]
    background: Background,
}

impl ProfileArgs {
    fn link(&self) -> gjsscc::Result<LinkProfile> {
        let eps_c = match (self.eps_c, self.h2) {
            (Some(e), _) => e,
            (None, Some(h2)) => ChannelSpec::with_scale(h2, self.snr_scale)?.ber(),
            (None, None) => return Err(gjsscc::Error::Config("one of --eps-c or --h2 is required".into())),
        };
        let p = LinkProfile {
            q_b: self.q_b,
            q_t: self.q_t,
            eps_c,
            eps_t: self.eps_t,
            coding: self.coding.into(),
            source: match self.source {
                Source::Codec => SourceMode::Codec,
                Source::Uncompressed => SourceMode::Uncompressed,
            },
            background: match self.background {
                Background::Transmit => BackgroundPolicy::Transmit,
                Background::Omit => BackgroundPolicy::Omit,
                Background::Pristine => BackgroundPolicy::Pristine,
            },
        };
        p.validate()?;
        Ok(p)
    }
}

fn load_oracle(spec: Option<&str>, timeout: Duration) -> anyhow::Result<Box<dyn Oracle>> {
    let spec = spec.ok_or_else(|| gjsscc::Error::Config("--oracle is required for this command".into()))?;
    if let Some(path) = spec.strip_prefix("builtin:") {
        Ok(Box::new(PrototypeModel::load(path)?))
    } else if let Some(cmd) = spec.strip_prefix("external:") {
        Ok(Box::new(ExternalOracle::spawn(cmd, timeout)?))
    } else {
        Err(gjsscc::Error::Config(format!("oracle spec {spec:?} must start with builtin: or external:")).into())
    }
}

fn load_regions(path: &Path) -> anyhow::Result<(RegionSet, RegionMask)> {
    let file: RegionSetFile = pipeline::read_json(path)?;
    Ok(file.decode()?)
}

fn write_out<T: serde::Serialize>(out: &Path, name: &str, value: &T) -> anyhow::Result<PathBuf> {
    let path = out.join(name);
    pipeline::write_json(&path, value)?;
    Ok(path)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let timeout = Duration::from_secs(cli.oracle_timeout);
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Segment { mask, rows, cols } => {
            let object = imaging::load_mask(mask)?;
            let (regions, background) = pipeline::presegment(
                &object,
                GridSpec {
                    rows: *rows,
                    cols: *cols,
                },
            )?;
            let path = write_out(&cli.out, "regions.json", &RegionSetFile::new(&regions, &background))?;
            println!("{} regions -> {}", regions.len(), path.display());
        }
        Command::Shapley {
            image,
            regions,
            target,
            profile,
            permutations,
        } => {
            let img = imaging::load_raster(image)?;
            let (regions, background) = load_regions(regions)?;
            let oracle = load_oracle(cli.oracle.as_deref(), timeout)?;
            let profile = CodingProfile::new(profile.link()?, cli.trials.unwrap_or(shapley::DEFAULT_TRIALS), seed)?;
            let game = CoalitionGame::new(&img, &regions, &background, profile, oracle.as_ref(), *target)?;
            let report = match permutations {
                Some(m) => shapley::shapley_sampled(&game, *m)?,
                None => shapley::shapley_exact(&game)?,
            };
            for (id, v) in &report.values {
                println!("{id}\t{v}");
            }
            write_out(&cli.out, "shapley.json", &report)?;
        }
        Command::Extract {
            image,
            regions,
            target,
            p_th,
            profile,
            exhaustive_limit,
            permutations,
        } => {
            let img = imaging::load_raster(image)?;
            let (regions, background) = load_regions(regions)?;
            let oracle = load_oracle(cli.oracle.as_deref(), timeout)?;
            let profile = CodingProfile::new(profile.link()?, cli.trials.unwrap_or(shapley::DEFAULT_TRIALS), seed)?;
            let choice = EstimatorChoice {
                exhaustive_limit: *exhaustive_limit,
                permutations: *permutations,
                force_sampling: false,
            };
            let (seg, partition) = shapley::extract(
                &img,
                &regions,
                &background,
                &profile,
                oracle.as_ref(),
                *target,
                *p_th,
                &choice,
            )?;
            let file = PartitionFile {
                regions: RegionSetFile::new(&seg.regions, &background),
                partition,
            };
            let path = write_out(&cli.out, "partition.json", &file)?;
            println!(
                "star {} (p_D = {:.6}), positive {:?}, negative {:?} -> {}",
                file.partition.star_id,
                file.partition.achieved_probability,
                file.partition.positive_ids,
                file.partition.negative_ids,
                path.display()
            );
        }
        Command::Run {
            image,
            partition,
            mask,
            rows,
            cols,
            p_th,
            target,
            scheme,
            scheme_coding,
            profile,
        } => {
            let img = imaging::load_raster(image)?;
            let link = profile.link()?;
            let stored = match (partition, mask) {
                (Some(path), _) => Ok(pipeline::read_json::<PartitionFile>(path)?),
                (None, Some(mask)) => Err(imaging::load_mask(mask)?),
                (None, None) => bail!(gjsscc::Error::Config("one of --partition or --mask is required".into())),
            };
            let oracle = load_oracle(cli.oracle.as_deref(), timeout)?;
            let file = match stored {
                Ok(file) => file,
                Err(object) => {
                    let (regions, background) = pipeline::presegment(
                        &object,
                        GridSpec {
                            rows: *rows,
                            cols: *cols,
                        },
                    )?;
                    let cp = CodingProfile::new(link, shapley::DEFAULT_TRIALS, seed)?;
                    let (seg, partition) = shapley::extract(
                        &img,
                        &regions,
                        &background,
                        &cp,
                        oracle.as_ref(),
                        *target,
                        p_th.expect("clap enforces --p-th with --mask"),
                        &EstimatorChoice::default(),
                    )?;
                    PartitionFile {
                        regions: RegionSetFile::new(&seg.regions, &background),
                        partition,
                    }
                }
            };
            let (regions, background, partition) = file.decode()?;
            let mut scheme = Scheme::preset(scheme)
                .ok_or_else(|| gjsscc::Error::Config(format!("unknown scheme {scheme:?}")))?
                .with_background(link.background);
            if let Some(c) = scheme_coding {
                scheme = scheme.with_coding((*c).into());
            }
            let inputs = SchemeInputs {
                img: &img,
                regions: &regions,
                background: &background,
                partition: &partition,
            };
            let result = pipeline::run_scheme(
                &inputs,
                &link,
                &scheme,
                oracle.as_ref(),
                *target,
                cli.trials.unwrap_or(1),
                seed,
            )?;
            println!(
                "{}: p_D = {:.6}, K = {}, N = {}, R = {:.6}, e = {:.6}",
                result.scheme, result.p_d, result.k, result.n, result.rate, result.efficiency
            );
            write_out(&cli.out, "run.json", &result)?;
        }
        Command::Sweep { config } => {
            let cfg = SweepConfig::load(config)?;
            let seed = cli.seed.unwrap_or(cfg.seed);
            let oracle = load_oracle(cli.oracle.as_deref().or(cfg.oracle.as_deref()), timeout)?;
            let img = imaging::load_raster(&cfg.image)?;
            let object = imaging::load_mask(&cfg.mask)?;
            let file = match &cfg.partition {
                Some(path) => pipeline::read_json::<PartitionFile>(path)?,
                None => {
                    let grid = cfg.grid.expect("validated on load");
                    let ex = cfg.extraction.expect("validated on load");
                    let (regions, background) = pipeline::presegment(&object, grid)?;
                    let cp = CodingProfile::new(cfg.profile, ex.trials, seed)?;
                    let (seg, partition) = shapley::extract(
                        &img,
                        &regions,
                        &background,
                        &cp,
                        oracle.as_ref(),
                        cfg.target,
                        ex.p_th,
                        &ex.estimator,
                    )?;
                    PartitionFile {
                        regions: RegionSetFile::new(&seg.regions, &background),
                        partition,
                    }
                }
            };
            let (regions, background, partition) = file.decode()?;
            let inputs = SchemeInputs {
                img: &img,
                regions: &regions,
                background: &background,
                partition: &partition,
            };
            let table = pipeline::run_sweep(
                &inputs,
                &cfg.profile,
                &cfg.sweep,
                &cfg.schemes()?,
                oracle.as_ref(),
                cfg.target,
                cli.trials.unwrap_or(cfg.trials),
                seed,
            )?;
            let csv = cli.out.join("sweep.csv");
            fs::write(&csv, table.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
            let json = cli.out.join("sweep.json");
            fs::write(&json, table.to_json() + "\n").with_context(|| format!("writing {}", json.display()))?;
            write_out(&cli.out, "partition.json", &file)?;
            println!("{} rows -> {}", table.rows.len(), csv.display());
        }
        Command::Na {
            k,
            ber_channel,
            ber_target,
            mode,
            json,
        } => {
            if *json {
                let r = channel::na_min_blocklength(*k, *ber_channel, *ber_target)?;
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                println!(
                    "{}",
                    pipeline::blocklength(*k, *ber_channel, *ber_target, (*mode).into())?
                );
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use gjsscc::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Oracle(_) | E::OracleTimeout(_)) => 3,
        Some(E::ThresholdUnachievable { .. }) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
