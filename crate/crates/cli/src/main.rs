#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use fleetlens_core::citystats;
use fleetlens_core::geo::GeoPoint;
use fleetlens_core::ingest::{write_snapshot_stream, TimelineStore};
use fleetlens_core::pipeline::{
    self, CityConfig, ClusterConfig, GridConfig, IngestConfig, ModalSplitConfig, PipelineConfig, PipelineError,
    ProviderConfig, ServiceConfig, Stage, TripsConfig,
};
use fleetlens_core::synth::{self, SynthConfig};
use fleetlens_core::tsclust::LocalCost;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "fleetlens",
    version,
    about = "Car-sharing fleet analytics from availability snapshots"
)]
struct Cli {
    /// Pipeline config for `run`, generator config for `synth`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse snapshot streams into per-vehicle timelines.
    Ingest(IngestArgs),
    /// Infer, enrich and classify trips.
    Trips(TripsArgs),
    /// Fleet KPIs per city.
    Metrics(MetricsArgs),
    /// Grid availability, empty-cell and pickup tables.
    Grid(GridArgs),
    /// Cluster grid cells by daily availability profile.
    Cluster(ClusterArgs),
    /// Pickup regularity per cell.
    Regularity(RegularityArgs),
    /// Rank cells by distinct vehicles parked within a window.
    ServiceAreas(ServiceArgs),
    /// PCA and k-means of city modal splits.
    ModalSplit(ModalArgs),
    /// Generate a synthetic snapshot stream with ground truth.
    Synth(SynthArgs),
    /// Run the configured pipeline end to end, or one stage of it.
    Run(RunArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// JSON city list or pipeline config supplying per-city bounds.
    #[arg(long)]
    bounds: PathBuf,
    #[arg(long, default_value_t = 60)]
    poll_period_s: i64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TripsArgs {
    #[arg(long)]
    timelines: PathBuf,
    /// `offline` or `fixture:<path>`.
    #[arg(long)]
    provider: Option<ProviderConfig>,
    /// JSON trip parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    trips: PathBuf,
    #[arg(long)]
    timelines: PathBuf,
    /// City indicator CSV for utilisation correlations.
    #[arg(long)]
    indicators: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    timelines: PathBuf,
    #[arg(long)]
    trips: PathBuf,
    /// City list supplying anchors, UTC offsets and holidays.
    #[arg(long)]
    bounds: Option<PathBuf>,
    #[arg(long, default_value_t = 500.0)]
    cell_side: f64,
    #[arg(long, default_value = "10min", value_parser = humantime::parse_duration)]
    bin: Duration,
    #[arg(long)]
    hull_cells: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// Directory written by `grid`.
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long, default_value_t = 6)]
    band: usize,
    #[arg(long, default_value_t = 2)]
    kmin: usize,
    #[arg(long, default_value_t = 8)]
    kmax: usize,
    #[arg(long)]
    absolute_cost: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegularityArgs {
    /// Directory written by `grid`.
    #[arg(long)]
    cells: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServiceArgs {
    #[arg(long)]
    timelines: PathBuf,
    #[arg(long)]
    bounds: Option<PathBuf>,
    #[arg(long, default_value_t = 500.0)]
    cell_side: f64,
    #[arg(long = "window", default_value = "30d", value_parser = humantime::parse_duration)]
    windows: Vec<Duration>,
    #[arg(long, default_value_t = 3)]
    top: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    slide: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModalArgs {
    #[arg(long)]
    indicators: PathBuf,
    #[arg(long)]
    raw: bool,
    #[arg(long, default_value_t = 6)]
    kmax: usize,
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    stage: Option<Stage>,
}

/// An error with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    fn config(self) -> Result<T, Failure>;
    fn stage(self, stage: Stage) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_CONFIG,
            error: e.into().context("configuration error"),
        })
    }

    fn stage(self, stage: Stage) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_STAGE,
            error: e.into().context(format!("stage {stage} failed")),
        })
    }
}

fn from_boxed(e: Box<dyn std::error::Error + Send + Sync>) -> anyhow::Error {
    anyhow!(e)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// City list from either a bare JSON array or a pipeline config.
fn read_cities(path: &Path) -> anyhow::Result<Vec<CityConfig>> {
    let value: serde_json::Value = read_json(path)?;
    let cities = match value.get("cities") {
        Some(c) => c.clone(),
        None => value,
    };
    serde_json::from_value(cities).with_context(|| format!("city list in {}", path.display()))
}

/// Cities for the timelines, taken from the given list or derived from the
/// extent of observed positions.
fn cities_for(store_path: &Path, list: Option<&Path>) -> Result<Vec<CityConfig>, Failure> {
    if let Some(p) = list {
        return read_cities(p).config();
    }
    let store = TimelineStore::load(store_path).map_err(anyhow::Error::from).config()?;
    let mut out = Vec::new();
    for (id, city) in &store.cities {
        let pts: Vec<GeoPoint> = city
            .vehicles
            .values()
            .flat_map(|tl| tl.intervals.iter().map(|iv| iv.position))
            .collect();
        let (mut lo, mut hi) = (GeoPoint::new(90.0, 180.0), GeoPoint::new(-90.0, -180.0));
        for p in &pts {
            lo = GeoPoint::new(lo.lat.min(p.lat), lo.lon.min(p.lon));
            hi = GeoPoint::new(hi.lat.max(p.lat), hi.lon.max(p.lon));
        }
        if pts.is_empty() {
            continue;
        }
        out.push(CityConfig {
            city_id: id.clone(),
            bounds: fleetlens_core::ingest::GeoBounds::new(lo.lat, hi.lat, lo.lon, hi.lon)
                .map_err(anyhow::Error::from)
                .config()?,
            utc_offset_s: 0,
            holidays: Default::default(),
            grid_anchor: None,
        });
    }
    Ok(out)
}

fn days_of(d: Duration) -> Result<u32, Failure> {
    let s = d.as_secs();
    if s == 0 || s % 86_400 != 0 {
        return Err(anyhow!(
            "window {} is not a whole number of days",
            humantime::format_duration(d)
        ))
        .config();
    }
    Ok((s / 86_400) as u32)
}

fn print_summary<T: serde::Serialize>(value: &T) {
    if let Ok(text) = serde_json::to_string(value) {
        println!("{text}");
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().config()?;
    }
    match cli.command {
        Command::Ingest(a) => {
            let cities = read_cities(&a.bounds).config()?;
            let params = IngestConfig {
                poll_period_s: a.poll_period_s,
                gap_tolerance_s: 3 * a.poll_period_s,
                ..IngestConfig::default()
            }
            .params();
            params.check().config()?;
            for p in &a.input {
                if !p.is_file() {
                    return Err(anyhow!("input {} does not exist", p.display())).config();
                }
            }
            let s = pipeline::ingest_stage(&a.input, &cities, params, &a.out)
                .map_err(from_boxed)
                .stage(Stage::Ingest)?;
            print_summary(&s);
        }
        Command::Trips(a) => {
            let mut cfg: TripsConfig = match &a.params {
                Some(p) => read_json(p).config()?,
                None => TripsConfig::default(),
            };
            if let Some(p) = a.provider {
                cfg.provider = p;
            }
            cfg.classifier.check().config()?;
            let s = pipeline::trips_stage(&a.timelines, &cfg, &a.out)
                .map_err(from_boxed)
                .stage(Stage::Trips)?;
            print_summary(&s);
        }
        Command::Metrics(a) => {
            let ind = match &a.indicators {
                Some(p) => Some(
                    File::open(p)
                        .map_err(anyhow::Error::from)
                        .and_then(|f| citystats::read_indicators(f).map_err(Into::into))
                        .config()?,
                ),
                None => None,
            };
            let s = pipeline::metrics_stage(&a.timelines, &a.trips, ind.as_deref(), &a.out)
                .map_err(from_boxed)
                .stage(Stage::Metrics)?;
            print_summary(&s.correlations);
        }
        Command::Grid(a) => {
            let cities = cities_for(&a.timelines, a.bounds.as_deref())?;
            let cfg = GridConfig {
                cell_side_m: a.cell_side,
                bin_s: a.bin.as_secs() as i64,
                active_cells: if a.hull_cells {
                    fleetlens_core::grid::ActiveCellRule::HullCovering
                } else {
                    fleetlens_core::grid::ActiveCellRule::Occupied
                },
            };
            if !(cfg.cell_side_m > 0.0) || cfg.bin_s <= 0 || 86_400 % cfg.bin_s != 0 {
                return Err(anyhow!("cell side must be positive and the bin must divide a day")).config();
            }
            let s = pipeline::grid_stage(&a.timelines, &a.trips, &cities, &cfg, &a.out)
                .map_err(from_boxed)
                .stage(Stage::Grid)?;
            print_summary(&s);
        }
        Command::Cluster(a) => {
            let cfg = ClusterConfig {
                band_radius: a.band,
                local_cost: if a.absolute_cost {
                    LocalCost::Absolute
                } else {
                    LocalCost::Squared
                },
                k_min: a.kmin,
                k_max: a.kmax,
            };
            if cfg.k_min < 2 || cfg.k_min > cfg.k_max {
                return Err(anyhow!("need 2 <= kmin <= kmax")).config();
            }
            let cache = a.out.parent().unwrap_or(Path::new(".")).join("cache");
            let s = pipeline::cluster_stage(&a.profiles, &cfg, &cache, &a.out)
                .map_err(from_boxed)
                .stage(Stage::Cluster)?;
            let ks: Vec<(&String, usize)> = s.cities.iter().map(|(c, m)| (c, m.k)).collect();
            print_summary(&ks);
        }
        Command::Regularity(a) => {
            let s = pipeline::regularity_stage(&a.cells, &a.out)
                .map_err(from_boxed)
                .stage(Stage::Regularity)?;
            print_summary(&s);
        }
        Command::ServiceAreas(a) => {
            let cities = cities_for(&a.timelines, a.bounds.as_deref())?;
            let cfg = ServiceConfig {
                window_days: a.windows.iter().map(|&d| days_of(d)).collect::<Result<_, _>>()?,
                top: a.top,
                threshold: a.threshold,
                slide: a.slide,
            };
            if !(0.0..=1.0).contains(&cfg.threshold) || !(a.cell_side > 0.0) {
                return Err(anyhow!("threshold must lie in [0, 1] and the cell side be positive")).config();
            }
            let s = pipeline::service_stage(&a.timelines, &cities, a.cell_side, &cfg, &a.out)
                .map_err(from_boxed)
                .stage(Stage::ServiceAreas)?;
            print_summary(&s.cities);
        }
        Command::ModalSplit(a) => {
            let cfg = ModalSplitConfig {
                standardize: !a.raw,
                k_max: a.kmax,
                restarts: a.restarts,
                ..ModalSplitConfig::default()
            };
            if cfg.k_max == 0 || cfg.restarts == 0 {
                return Err(anyhow!("kmax and restarts must be positive")).config();
            }
            if !a.indicators.is_file() {
                return Err(anyhow!("indicators {} do not exist", a.indicators.display())).config();
            }
            let s = pipeline::modal_split_stage(&a.indicators, &cfg, cli.seed.unwrap_or(0), &a.out)
                .map_err(from_boxed)
                .stage(Stage::ModalSplit)?;
            print_summary(&serde_json::json!({ "k": s.k, "clusters": s.clusters }));
        }
        Command::Synth(a) => {
            let mut cfg: SynthConfig = match &cli.config {
                Some(p) => read_json(p).config()?,
                None => SynthConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let (stream, truth) = synth::generate(&cfg).map_err(anyhow::Error::from).config()?;
            let write = || -> anyhow::Result<()> {
                if let Some(dir) = a.out.parent() {
                    fs::create_dir_all(dir)?;
                }
                let mut out = BufWriter::new(File::create(&a.out)?);
                for rec in stream {
                    write_snapshot_stream(&mut out, [&rec])?;
                }
                out.flush()?;
                if let Some(path) = &a.truth {
                    let mut w = BufWriter::new(File::create(path)?);
                    serde_json::to_writer(&mut w, &truth)?;
                    w.write_all(b"\n")?;
                    w.flush()?;
                }
                Ok(())
            };
            write().map_err(|e| Failure {
                code: EXIT_STAGE,
                error: e.context("synth failed"),
            })?;
            print_summary(&serde_json::json!({
                "records": truth.records_emitted,
                "trips": truth.trips.len(),
                "hub_visitors": truth.hub_visitors.len(),
            }));
        }
        Command::Run(a) => {
            let path = cli.config.ok_or_else(|| anyhow!("run needs --config")).config()?;
            let mut cfg = PipelineConfig::load(&path).config()?;
            if let Some(dir) = cli.out_dir {
                cfg.out_dir = dir;
            }
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            match pipeline::run_pipeline(&cfg, a.stage) {
                Ok(report) => {
                    for s in &report.stages {
                        println!("{}: {}", s.stage, s.outputs.join(", "));
                    }
                }
                Err(e @ PipelineError::Config(_)) => {
                    return Err(Failure {
                        code: EXIT_CONFIG,
                        error: e.into(),
                    })
                }
                Err(e @ PipelineError::Stage { .. }) => {
                    return Err(Failure {
                        code: EXIT_STAGE,
                        error: e.into(),
                    })
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
