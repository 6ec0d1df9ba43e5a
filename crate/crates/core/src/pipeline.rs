//! Config-driven batch pipeline. Each stage reads its inputs from files in
//! the output directory and writes its own outputs there, so any stage can be
//! rerun alone from cached upstream results.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{NaiveDate, TimeDelta};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::citystats::{self, CityIndicators};
use crate::geo::GeoPoint;
use crate::grid::{self, ActiveCellRule, BinAxis, CellId, CellSeries, GridSpec, WorkCalendar};
use crate::ingest::{GeoBounds, SnapshotReader, TimelineBuilder, TimelineParams, TimelineStore};
use crate::metrics;
use crate::service_areas::{self, ServiceWindow};
use crate::trips::{
    self, classify_trip, enrich_trips, fuel_distance_km, ClassifierParams, ConsumptionTable, FixtureProvider,
    GlitchParams, OfflineProvider, RoutingProvider, Trip,
};
use crate::tsclust::{self, CellProfile, DistanceMatrix, LocalCost};
use crate::SCHEMA_VERSION;

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage { stage: Stage, source: BoxError },
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Trips,
    Metrics,
    Grid,
    Cluster,
    Regularity,
    ServiceAreas,
    ModalSplit,
}

impl Stage {
    pub const ORDER: [Stage; 8] = [
        Stage::Ingest,
        Stage::Trips,
        Stage::Metrics,
        Stage::Grid,
        Stage::Cluster,
        Stage::Regularity,
        Stage::ServiceAreas,
        Stage::ModalSplit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Trips => "trips",
            Stage::Metrics => "metrics",
            Stage::Grid => "grid",
            Stage::Cluster => "cluster",
            Stage::Regularity => "regularity",
            Stage::ServiceAreas => "service-areas",
            Stage::ModalSplit => "modal-split",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ORDER
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityConfig {
    pub city_id: String,
    pub bounds: GeoBounds,
    #[serde(default)]
    pub utc_offset_s: i64,
    #[serde(default)]
    pub holidays: BTreeSet<NaiveDate>,
    /// Grid origin; defaults to the centre of the bounds.
    #[serde(default)]
    pub grid_anchor: Option<GeoPoint>,
}

impl CityConfig {
    pub fn anchor(&self) -> GeoPoint {
        self.grid_anchor.unwrap_or(GeoPoint::new(
            (self.bounds.min_lat + self.bounds.max_lat) / 2.0,
            (self.bounds.min_lon + self.bounds.max_lon) / 2.0,
        ))
    }

    pub fn calendar(&self) -> WorkCalendar {
        WorkCalendar {
            utc_offset_s: self.utc_offset_s,
            holidays: self.holidays.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub poll_period_s: i64,
    pub gap_tolerance_s: i64,
    pub jitter_radius_m: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        let p = TimelineParams::default();
        Self {
            poll_period_s: p.poll_period.num_seconds(),
            gap_tolerance_s: p.gap_tolerance.num_seconds(),
            jitter_radius_m: p.jitter_radius_m,
        }
    }
}

impl IngestConfig {
    pub fn params(&self) -> TimelineParams {
        TimelineParams {
            poll_period: TimeDelta::seconds(self.poll_period_s),
            gap_tolerance: TimeDelta::seconds(self.gap_tolerance_s),
            jitter_radius_m: self.jitter_radius_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Offline {
        #[serde(default = "default_detour")]
        detour_factor: f64,
        #[serde(default = "default_speed")]
        urban_speed_kmh: f64,
    },
    Fixture {
        path: PathBuf,
    },
}

fn default_detour() -> f64 {
    OfflineProvider::default().detour_factor
}

fn default_speed() -> f64 {
    OfflineProvider::default().urban_speed_kmh
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Offline {
            detour_factor: default_detour(),
            urban_speed_kmh: default_speed(),
        }
    }
}

impl FromStr for ProviderConfig {
    type Err = String;

    /// `offline` or `fixture:<path>`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "offline" => Ok(ProviderConfig::default()),
            Some(("fixture", path)) if !path.is_empty() => Ok(ProviderConfig::Fixture { path: path.into() }),
            _ => Err(format!("provider must be `offline` or `fixture:<path>`, got {s:?}")),
        }
    }
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Box<dyn RoutingProvider>, BoxError> {
        Ok(match self {
            ProviderConfig::Offline {
                detour_factor,
                urban_speed_kmh,
            } => Box::new(OfflineProvider {
                detour_factor: *detour_factor,
                urban_speed_kmh: *urban_speed_kmh,
            }),
            ProviderConfig::Fixture { path } => Box::new(FixtureProvider::load(path)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripsConfig {
    pub min_trip_duration_s: i64,
    pub min_displacement_m: f64,
    pub classifier: ClassifierParams,
    pub provider: ProviderConfig,
    /// Single consumption rate, fuel points per km, applied to every vehicle.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fuel_rate_per_km: Option<f64>,
}

impl Default for TripsConfig {
    fn default() -> Self {
        let g = GlitchParams::default();
        Self {
            min_trip_duration_s: g.min_trip_duration.num_seconds(),
            min_displacement_m: g.min_displacement_m,
            classifier: ClassifierParams::default(),
            provider: ProviderConfig::default(),
            fuel_rate_per_km: None,
        }
    }
}

impl TripsConfig {
    pub fn glitch_params(&self) -> GlitchParams {
        GlitchParams {
            min_trip_duration: TimeDelta::seconds(self.min_trip_duration_s),
            min_displacement_m: self.min_displacement_m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub cell_side_m: f64,
    pub bin_s: i64,
    pub active_cells: ActiveCellRule,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            cell_side_m: GridSpec::DEFAULT_CELL_SIDE_M,
            bin_s: 600,
            active_cells: ActiveCellRule::Occupied,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub band_radius: usize,
    pub local_cost: LocalCost,
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            band_radius: tsclust::DEFAULT_BAND_RADIUS,
            local_cost: LocalCost::Squared,
            k_min: 2,
            k_max: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub window_days: Vec<u32>,
    pub top: usize,
    pub threshold: f64,
    pub slide: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            window_days: vec![30, 15],
            top: 3,
            threshold: service_areas::DEFAULT_THRESHOLD,
            slide: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModalSplitConfig {
    pub standardize: bool,
    pub k_max: usize,
    pub restarts: usize,
    pub elbow_threshold: f64,
}

impl Default for ModalSplitConfig {
    fn default() -> Self {
        Self {
            standardize: true,
            k_max: 6,
            restarts: 20,
            elbow_threshold: citystats::DEFAULT_ELBOW_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub cities: Vec<CityConfig>,
    /// Snapshot streams, line-delimited JSON.
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub trips: TripsConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub clustering: ClusterConfig,
    #[serde(default)]
    pub service: ServiceConfig,
    /// City indicator CSV for the modal-split stage and metric correlations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indicators: Option<PathBuf>,
    #[serde(default)]
    pub modal_split: ModalSplitConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.inputs.iter_mut().for_each(resolve);
        resolve(&mut cfg.out_dir);
        if let Some(p) = cfg.indicators.as_mut() {
            resolve(p);
        }
        if let ProviderConfig::Fixture { path } = &mut cfg.trips.provider {
            resolve(path);
        }
        Ok(cfg)
    }

    /// Parameter checks that need no I/O.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.cities.is_empty() {
            return Err(config_err("no cities configured"));
        }
        let mut seen = BTreeSet::new();
        for c in &self.cities {
            if !seen.insert(&c.city_id) {
                return Err(config_err(format!("duplicate city {}", c.city_id)));
            }
            c.bounds
                .check()
                .map_err(|e| config_err(format!("city {}: {e}", c.city_id)))?;
        }
        self.ingest.params().check().map_err(|e| config_err(e.to_string()))?;
        self.trips.classifier.check().map_err(|e| config_err(e.to_string()))?;
        if self.trips.min_trip_duration_s < 0 || !(self.trips.min_displacement_m >= 0.0) {
            return Err(config_err("glitch thresholds must be non-negative"));
        }
        if let ProviderConfig::Offline {
            detour_factor,
            urban_speed_kmh,
        } = self.trips.provider
        {
            if !(detour_factor >= 1.0) || !(urban_speed_kmh > 0.0) {
                return Err(config_err(
                    "offline provider needs detour_factor >= 1 and a positive speed",
                ));
            }
        }
        if self.trips.fuel_rate_per_km.is_some_and(|r| !(r > 0.0)) {
            return Err(config_err("fuel_rate_per_km must be positive"));
        }
        if !(self.grid.cell_side_m > 0.0) {
            return Err(config_err("cell_side_m must be positive"));
        }
        if self.grid.bin_s <= 0 || 86_400 % self.grid.bin_s != 0 {
            return Err(config_err("grid bin_s must be a positive divisor of a day"));
        }
        let c = &self.clustering;
        if c.k_min < 2 || c.k_min > c.k_max {
            return Err(config_err("clustering needs 2 <= k_min <= k_max"));
        }
        let s = &self.service;
        if s.window_days.is_empty() || s.window_days.contains(&0) {
            return Err(config_err("service window_days must be positive"));
        }
        if !(0.0..=1.0).contains(&s.threshold) {
            return Err(config_err("service threshold must lie in [0, 1]"));
        }
        if self.modal_split.k_max == 0 || self.modal_split.restarts == 0 {
            return Err(config_err("modal_split needs positive k_max and restarts"));
        }
        Ok(())
    }

    /// Checks that the files the given stages read from outside the output
    /// directory exist.
    pub fn check_inputs(&self, stages: &[Stage]) -> Result<(), PipelineError> {
        if stages.contains(&Stage::Ingest) {
            if self.inputs.is_empty() {
                return Err(config_err("no input streams configured"));
            }
            for p in &self.inputs {
                if !p.is_file() {
                    return Err(config_err(format!("input {} does not exist", p.display())));
                }
            }
        }
        if stages.contains(&Stage::Trips) {
            if let ProviderConfig::Fixture { path } = &self.trips.provider {
                if !path.is_file() {
                    return Err(config_err(format!("routing fixture {} does not exist", path.display())));
                }
            }
        }
        if stages.contains(&Stage::ModalSplit) {
            if let Some(p) = &self.indicators {
                if !p.is_file() {
                    return Err(config_err(format!("indicators {} do not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    fn city(&self, id: &str) -> Option<&CityConfig> {
        self.cities.iter().find(|c| c.city_id == id)
    }

    fn grid_spec(&self, city: &CityConfig) -> GridSpec {
        GridSpec {
            anchor: city.anchor(),
            cell_side_m: self.grid.cell_side_m,
        }
    }
}

/// Standard output locations inside the output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn timelines(&self) -> PathBuf {
        self.root.join("timelines.json")
    }
    pub fn trips(&self) -> PathBuf {
        self.root.join("trips.jsonl")
    }
    pub fn kpis(&self) -> PathBuf {
        self.root.join("kpis.json")
    }
    pub fn grid_dir(&self) -> PathBuf {
        self.root.join("grid")
    }
    pub fn clusters(&self) -> PathBuf {
        self.root.join("clusters.json")
    }
    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }
    pub fn regularity(&self) -> PathBuf {
        self.root.join("regularity.csv")
    }
    pub fn service(&self) -> PathBuf {
        self.root.join("service.json")
    }
    pub fn modal(&self) -> PathBuf {
        self.root.join("modal.json")
    }
    pub fn summary(&self, stage: Stage) -> PathBuf {
        self.root.join("summaries").join(format!("{}.json", stage.name()))
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BoxError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BoxError> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_reader(BufReader::new(file)).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, BoxError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

fn load_store(path: &Path) -> Result<TimelineStore, BoxError> {
    TimelineStore::load(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn read_trip_file(path: &Path) -> Result<Vec<Trip>, BoxError> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(trips::read_trips(BufReader::new(file))?)
}

fn rel(layout: &Layout, p: &Path) -> String {
    p.strip_prefix(&layout.root)
        .unwrap_or(p)
        .to_string_lossy()
        .replace('\\', "/")
}

/// What a stage wrote, for the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub schema_version: u32,
    pub stage: Stage,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub stages: Vec<StageReport>,
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub report: crate::ingest::ParseReport,
    pub unknown_city_records: u64,
    pub vehicles: BTreeMap<String, usize>,
}

pub fn ingest_stage(
    inputs: &[PathBuf],
    cities: &[CityConfig],
    params: TimelineParams,
    out: &Path,
) -> Result<IngestSummary, BoxError> {
    let bounds: BTreeMap<&str, GeoBounds> = cities.iter().map(|c| (c.city_id.as_str(), c.bounds)).collect();
    let mut builder = TimelineBuilder::new(params)?;
    let mut report = crate::ingest::ParseReport::default();
    let mut unknown = 0u64;
    for path in inputs {
        let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut reader = SnapshotReader::new(BufReader::with_capacity(1 << 20, file));
        let mut rejected = 0usize;
        for rec in reader.by_ref() {
            let rec = rec?;
            match bounds.get(rec.city_id.as_str()) {
                Some(b) if b.contains(rec.position) => builder.push(&rec),
                Some(_) => rejected += 1,
                None => unknown += 1,
            }
        }
        let r = reader.report();
        report.records_read += r.records_read;
        report.records_parsed += r.records_parsed;
        report.records_discarded_malformed += r.records_discarded_malformed;
        report.record_rejections(rejected);
    }
    if unknown > 0 {
        log::warn!("skipped {unknown} records for cities missing from the configuration");
    }
    if report.records_parsed == 0 {
        log::warn!("ingest parsed no records");
    }
    let store = TimelineStore::new(params.poll_period, report, builder.finish());
    store.save(out)?;
    Ok(IngestSummary {
        report,
        unknown_city_records: unknown,
        vehicles: store.cities.iter().map(|(k, c)| (k.clone(), c.fleet_size())).collect(),
    })
}

// ----------------------------------------------------------------- trips

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityTripSummary {
    pub trips: usize,
    pub merged_glitches: usize,
    pub routing_failures: usize,
    pub maintenance_suspects: usize,
    pub kinds: trips::KindShares,
}

pub fn trips_stage(
    timelines: &Path,
    cfg: &TripsConfig,
    out: &Path,
) -> Result<BTreeMap<String, CityTripSummary>, BoxError> {
    let store = load_store(timelines)?;
    let provider = cfg.provider.build()?;
    let glitch = cfg.glitch_params();
    let table = match cfg.fuel_rate_per_km {
        Some(r) => Some(ConsumptionTable::new(BTreeMap::from([("default".to_string(), r)]))?),
        None => None,
    };
    let mut all = Vec::new();
    let mut summary = BTreeMap::new();
    for (city_id, city) in &store.cities {
        let per_vehicle: Vec<(Vec<Trip>, usize)> = city
            .vehicles
            .values()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|tl| {
                let (clean, merged) = trips::merge_glitches(tl, &glitch);
                (trips::trips_from_gaps(&clean), merged)
            })
            .collect();
        let merged_glitches = per_vehicle.iter().map(|(_, m)| m).sum();
        let mut city_trips: Vec<Trip> = per_vehicle.into_iter().flat_map(|(t, _)| t).collect();
        let routing_failures = enrich_trips(&mut city_trips, provider.as_ref());
        for t in &mut city_trips {
            t.kind = classify_trip(t, &cfg.classifier);
            if let Some(table) = &table {
                let est = fuel_distance_km(t, table, "default");
                t.fuel_distance_km = est.distance_km;
            }
        }
        summary.insert(
            city_id.clone(),
            CityTripSummary {
                trips: city_trips.len(),
                merged_glitches,
                routing_failures,
                maintenance_suspects: city_trips.iter().filter(|t| t.maintenance_suspect).count(),
                kinds: trips::trip_kind_shares(&city_trips),
            },
        );
        all.extend(city_trips);
    }
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    trips::write_trips(BufWriter::new(File::create(out)?), &all)?;
    Ok(summary)
}

// --------------------------------------------------------------- metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityMetrics {
    #[serde(flatten)]
    pub kpis: metrics::FleetKpis,
    pub durations: Option<metrics::DurationStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsOutput {
    pub schema_version: u32,
    pub cities: BTreeMap<String, CityMetrics>,
    /// Pearson correlation of utilisation with each indicator across cities.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub correlations: BTreeMap<String, f64>,
}

pub fn metrics_stage(
    timelines: &Path,
    trips_path: &Path,
    indicators: Option<&[CityIndicators]>,
    out: &Path,
) -> Result<MetricsOutput, BoxError> {
    let store = load_store(timelines)?;
    let all_trips = read_trip_file(trips_path)?;
    let mut by_city: BTreeMap<&str, Vec<Trip>> = BTreeMap::new();
    for t in &all_trips {
        by_city.entry(t.city_id.as_str()).or_default().push(t.clone());
    }
    let mut cities = BTreeMap::new();
    for (city_id, city) in &store.cities {
        let city_trips = by_city.remove(city_id.as_str()).unwrap_or_default();
        let days = metrics::observation_days(city.window.span(), store.poll_period());
        let kpis = metrics::fleet_kpis(city_id, city.vehicles.values(), city_trips.len(), days)?;
        let durations = metrics::rental_duration_stats(&city_trips).ok();
        cities.insert(city_id.clone(), CityMetrics { kpis, durations });
    }

    let mut correlations = BTreeMap::new();
    if let Some(ind) = indicators {
        let rows: Vec<(&CityIndicators, f64)> = ind
            .iter()
            .filter_map(|c| cities.get(&c.city).map(|m| (c, m.kpis.utilization_rate)))
            .collect();
        let columns: [(&str, fn(&CityIndicators) -> Option<f64>); 10] = [
            ("car", |c| Some(c.car)),
            ("moto", |c| Some(c.moto)),
            ("pt", |c| Some(c.pt)),
            ("bike", |c| Some(c.bike)),
            ("walk", |c| Some(c.walk)),
            ("gdp_per_capita", |c| c.gdp_per_capita),
            ("population", |c| c.population),
            ("area_km2", |c| c.area_km2),
            ("population_density", |c| c.population_density),
            ("education", |c| c.education),
        ];
        for (name, get) in columns {
            let (xs, ys): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|(c, u)| get(c).map(|x| (x, *u))).unzip();
            if let Ok(r) = metrics::pearson_correlation(&xs, &ys) {
                correlations.insert(name.to_string(), r);
            }
        }
    }
    let output = MetricsOutput {
        schema_version: SCHEMA_VERSION,
        cities,
        correlations,
    };
    write_json(out, &output)?;
    Ok(output)
}

// ------------------------------------------------------------------ grid

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub schema_version: u32,
    pub spec: GridSpec,
    pub axis: BinAxis,
    pub fleet_size: usize,
    pub active_cells: usize,
    pub working_days: Vec<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityGridSummary {
    pub cells: usize,
    pub active_cells: usize,
    pub bins: usize,
    pub working_days: usize,
    pub mean_empty_cell_fraction: f64,
    pub mean_available_fraction: f64,
}

fn city_grid_dir(grid_dir: &Path, city: &str) -> PathBuf {
    grid_dir.join(city)
}

pub fn grid_stage(
    timelines: &Path,
    trips_path: &Path,
    cities: &[CityConfig],
    cfg: &GridConfig,
    grid_dir: &Path,
) -> Result<BTreeMap<String, CityGridSummary>, BoxError> {
    let store = load_store(timelines)?;
    let all_trips = read_trip_file(trips_path)?;
    let per_city = store.cities.par_iter().map(
        |(city_id, city)| -> Result<Option<(String, CityGridSummary)>, BoxError> {
            let Some(city_cfg) = cities.iter().find(|c| &c.city_id == city_id) else {
                log::warn!("no configuration for city {city_id}; skipping grid");
                return Ok(None);
            };
            let spec = GridSpec::new(city_cfg.anchor(), cfg.cell_side_m)?;
            let axis = BinAxis::covering(
                &city.window,
                TimeDelta::seconds(cfg.bin_s),
                TimeDelta::seconds(city_cfg.utc_offset_s),
            )?;
            let series = grid::availability_series(city.vehicles.values(), &spec, &axis);
            let active = match cfg.active_cells {
                ActiveCellRule::Occupied => grid::occupied_cells(&series),
                ActiveCellRule::HullCovering => {
                    let positions: Vec<GeoPoint> = city
                        .vehicles
                        .values()
                        .flat_map(|tl| tl.intervals.iter().map(|iv| iv.position))
                        .collect();
                    grid::hull_covering_cells(&positions, &spec)
                }
            };
            let fleet = city.fleet_size();
            let parked = grid::parked_per_bin(&series, axis.n_bins);
            let dir = city_grid_dir(grid_dir, city_id);

            let mut w = csv_writer(&dir.join("availability.csv"))?;
            w.write_record(["schema_version", "ix", "iy", "bin", "count"])?;
            for s in series.values() {
                for (b, c) in s.counts.iter().enumerate() {
                    w.write_record([
                        SCHEMA_VERSION.to_string(),
                        s.cell.ix.to_string(),
                        s.cell.iy.to_string(),
                        b.to_string(),
                        c.to_string(),
                    ])?;
                }
            }
            w.flush()?;

            let mut w = csv_writer(&dir.join("fractions.csv"))?;
            w.write_record([
                "schema_version",
                "bin",
                "midpoint",
                "parked",
                "available_vehicle_fraction",
                "empty_cell_fraction",
            ])?;
            let (mut sum_empty, mut sum_avail, mut n_empty) = (0.0, 0.0, 0usize);
            for (b, p) in parked.iter().enumerate() {
                let avail = if fleet == 0 { 0.0 } else { *p as f64 / fleet as f64 };
                let empty = grid::empty_cell_fraction(&series, b, &active).ok();
                if let Some(e) = empty {
                    sum_empty += e;
                    n_empty += 1;
                }
                sum_avail += avail;
                w.write_record([
                    SCHEMA_VERSION.to_string(),
                    b.to_string(),
                    axis.midpoint(b).format("%Y-%m-%dT%H:%M:%SZ").to_string(),
                    p.to_string(),
                    avail.to_string(),
                    empty.map_or(String::new(), |e| e.to_string()),
                ])?;
            }
            w.flush()?;

            let calendar = city_cfg.calendar();
            let days = calendar.working_days(&city.window);
            let city_trips: Vec<Trip> = all_trips.iter().filter(|t| &t.city_id == city_id).cloned().collect();
            let pickups = grid::pickup_counts(&city_trips, &spec, &calendar, &days);
            let mut w = csv_writer(&dir.join("pickups.csv"))?;
            w.write_record(["schema_version", "ix", "iy", "day", "count"])?;
            // every active cell gets a row per working day, zero days included
            let cells: BTreeSet<CellId> = active.iter().copied().chain(pickups.keys().copied()).collect();
            for cell in &cells {
                for (i, d) in days.iter().enumerate() {
                    let c = pickups.get(cell).map_or(0, |v| v[i]);
                    w.write_record([
                        SCHEMA_VERSION.to_string(),
                        cell.ix.to_string(),
                        cell.iy.to_string(),
                        d.to_string(),
                        c.to_string(),
                    ])?;
                }
            }
            w.flush()?;

            write_json(
                &dir.join("meta.json"),
                &GridMeta {
                    schema_version: SCHEMA_VERSION,
                    spec,
                    axis,
                    fleet_size: fleet,
                    active_cells: active.len(),
                    working_days: days.clone(),
                },
            )?;
            Ok(Some((
                city_id.clone(),
                CityGridSummary {
                    cells: series.len(),
                    active_cells: active.len(),
                    bins: axis.n_bins,
                    working_days: days.len(),
                    mean_empty_cell_fraction: if n_empty == 0 { 0.0 } else { sum_empty / n_empty as f64 },
                    mean_available_fraction: if parked.is_empty() {
                        0.0
                    } else {
                        sum_avail / parked.len() as f64
                    },
                },
            )))
        },
    );
    let summaries: Vec<_> = per_city.collect::<Result<_, _>>()?;
    Ok(summaries.into_iter().flatten().collect())
}

fn grid_cities(grid_dir: &Path) -> Result<Vec<String>, BoxError> {
    let mut cities = Vec::new();
    for entry in fs::read_dir(grid_dir).map_err(|e| format!("{}: {e}", grid_dir.display()))? {
        let entry = entry?;
        if entry.path().join("meta.json").is_file() {
            cities.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    cities.sort();
    Ok(cities)
}

#[derive(Deserialize)]
struct CountRow {
    ix: i64,
    iy: i64,
    #[serde(alias = "day")]
    bin: String,
    count: u32,
}

/// Cell series of one city as written by the grid stage.
pub fn read_availability(city_dir: &Path) -> Result<(GridMeta, BTreeMap<CellId, CellSeries>), BoxError> {
    let meta: GridMeta = read_json(&city_dir.join("meta.json"))?;
    let mut series: BTreeMap<CellId, CellSeries> = BTreeMap::new();
    for row in csv::Reader::from_path(city_dir.join("availability.csv"))?.deserialize() {
        let row: CountRow = row?;
        let cell = CellId::new(row.ix, row.iy);
        let b: usize = row.bin.parse()?;
        let s = series.entry(cell).or_insert_with(|| CellSeries {
            cell,
            counts: vec![0; meta.axis.n_bins],
        });
        *s.counts.get_mut(b).ok_or("bin index beyond the grid axis")? = row.count;
    }
    Ok((meta, series))
}

fn read_pickups(city_dir: &Path, meta: &GridMeta) -> Result<BTreeMap<CellId, Vec<u32>>, BoxError> {
    let index: BTreeMap<String, usize> = meta
        .working_days
        .iter()
        .enumerate()
        .map(|(i, d)| (d.to_string(), i))
        .collect();
    let mut out: BTreeMap<CellId, Vec<u32>> = BTreeMap::new();
    for row in csv::Reader::from_path(city_dir.join("pickups.csv"))?.deserialize() {
        let row: CountRow = row?;
        let i = *index
            .get(&row.bin)
            .ok_or("pickup day is not a working day of the grid")?;
        out.entry(CellId::new(row.ix, row.iy))
            .or_insert_with(|| vec![0; index.len()])[i] = row.count;
    }
    Ok(out)
}

// --------------------------------------------------------------- cluster

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MatrixCache {
    schema_version: u32,
    band_radius: usize,
    local_cost: LocalCost,
    profiles: Vec<CellProfile>,
    matrix: DistanceMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityClusters {
    pub k: usize,
    pub medoids: Vec<CellId>,
    pub assignment: Vec<(CellId, usize)>,
    /// (k, mean silhouette, total cost) per evaluated k.
    pub silhouettes: Vec<(usize, f64, f64)>,
    pub mean_profiles: Vec<Vec<f64>>,
    pub excluded_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersOutput {
    pub schema_version: u32,
    pub band_radius: usize,
    pub local_cost: LocalCost,
    pub cities: BTreeMap<String, CityClusters>,
}

/// Distance matrix for the profiles, reusing a cached one computed from
/// identical inputs.
fn cached_matrix(
    cache: &Path,
    profiles: &[CellProfile],
    band_radius: usize,
    local_cost: LocalCost,
) -> Result<DistanceMatrix, BoxError> {
    if let Ok(hit) = read_json::<MatrixCache>(cache) {
        if hit.schema_version == SCHEMA_VERSION
            && hit.band_radius == band_radius
            && hit.local_cost == local_cost
            && hit.profiles == profiles
        {
            log::info!("reusing cached distance matrix {}", cache.display());
            return Ok(hit.matrix);
        }
    }
    let values: Vec<Vec<f64>> = profiles.iter().map(|p| p.values.clone()).collect();
    let matrix = tsclust::dtw_matrix(&values, band_radius, local_cost)?;
    write_json(
        cache,
        &MatrixCache {
            schema_version: SCHEMA_VERSION,
            band_radius,
            local_cost,
            profiles: profiles.to_vec(),
            matrix: matrix.clone(),
        },
    )?;
    Ok(matrix)
}

pub fn cluster_stage(
    grid_dir: &Path,
    cfg: &ClusterConfig,
    cache_dir: &Path,
    out: &Path,
) -> Result<ClustersOutput, BoxError> {
    let mut cities = BTreeMap::new();
    for city in grid_cities(grid_dir)? {
        let (meta, series) = read_availability(&city_grid_dir(grid_dir, &city))?;
        let per_day = (86_400 / meta.axis.bin_s) as usize;
        let days = meta.axis.n_bins / per_day;
        if days == 0 {
            log::warn!("city {city} has less than one full day of data; skipping clustering");
            continue;
        }
        let profiles = tsclust::build_profiles(series.values(), per_day, days)?;
        if profiles.len() < cfg.k_min + 1 {
            log::warn!(
                "city {city} has only {} profiled cells; skipping clustering",
                profiles.len()
            );
            continue;
        }
        let d = cached_matrix(
            &cache_dir.join(format!("dtw-{city}.json")),
            &profiles,
            cfg.band_radius,
            cfg.local_cost,
        )?;
        let sel = tsclust::select_k(&d, cfg.k_min, cfg.k_max)?;
        cities.insert(
            city.clone(),
            CityClusters {
                k: sel.k,
                medoids: sel.model.medoids.iter().map(|&m| profiles[m].cell).collect(),
                assignment: profiles
                    .iter()
                    .zip(&sel.model.assignment)
                    .map(|(p, &a)| (p.cell, a))
                    .collect(),
                silhouettes: sel.table.clone(),
                mean_profiles: tsclust::cluster_mean_profiles(&profiles, &sel.model),
                excluded_cells: series.len() - profiles.len(),
            },
        );
    }
    let output = ClustersOutput {
        schema_version: SCHEMA_VERSION,
        band_radius: cfg.band_radius,
        local_cost: cfg.local_cost,
        cities,
    };
    write_json(out, &output)?;
    Ok(output)
}

// ------------------------------------------------------------ regularity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityRegularitySummary {
    pub cells: usize,
    pub active_cells: usize,
    pub outlier_cells: usize,
    pub median_cv: Option<f64>,
}

pub fn regularity_stage(grid_dir: &Path, out: &Path) -> Result<BTreeMap<String, CityRegularitySummary>, BoxError> {
    let mut w = csv_writer(out)?;
    w.write_record([
        "schema_version",
        "city",
        "ix",
        "iy",
        "days",
        "mean",
        "cv",
        "outlier",
        "active",
    ])?;
    let mut summary = BTreeMap::new();
    for city in grid_cities(grid_dir)? {
        let dir = city_grid_dir(grid_dir, &city);
        let meta: GridMeta = read_json(&dir.join("meta.json"))?;
        if meta.working_days.len() < grid::MIN_REGULARITY_DAYS {
            log::warn!(
                "city {city} has {} working days; regularity needs {}",
                meta.working_days.len(),
                grid::MIN_REGULARITY_DAYS
            );
            continue;
        }
        let pickups = read_pickups(&dir, &meta)?;
        let mut cvs = Vec::new();
        let (mut active, mut outliers) = (0, 0);
        for (cell, counts) in &pickups {
            let s = grid::regularity_stats(*cell, counts)?;
            active += usize::from(s.active);
            outliers += usize::from(s.outlier);
            cvs.extend(s.cv);
            w.write_record([
                SCHEMA_VERSION.to_string(),
                city.clone(),
                cell.ix.to_string(),
                cell.iy.to_string(),
                counts.len().to_string(),
                s.mean.to_string(),
                s.cv.map_or(String::new(), |c| c.to_string()),
                s.outlier.to_string(),
                s.active.to_string(),
            ])?;
        }
        cvs.sort_by(f64::total_cmp);
        summary.insert(
            city,
            CityRegularitySummary {
                cells: pickups.len(),
                active_cells: active,
                outlier_cells: outliers,
                median_cv: (!cvs.is_empty()).then(|| metrics::quantile_sorted(&cvs, 0.5)),
            },
        );
    }
    w.flush()?;
    Ok(summary)
}

// --------------------------------------------------------- service areas

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub window_days: u32,
    pub slide: bool,
    pub top: Vec<service_areas::CellCoverage>,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceOutput {
    pub schema_version: u32,
    pub threshold: f64,
    pub cities: BTreeMap<String, Vec<WindowResult>>,
}

pub fn service_stage(
    timelines: &Path,
    cities: &[CityConfig],
    cell_side_m: f64,
    cfg: &ServiceConfig,
    out: &Path,
) -> Result<ServiceOutput, BoxError> {
    let store = load_store(timelines)?;
    let per_city = store
        .cities
        .par_iter()
        .map(|(city_id, city)| -> Result<(String, Vec<WindowResult>), BoxError> {
            let anchor = cities
                .iter()
                .find(|c| &c.city_id == city_id)
                .map(|c| c.anchor())
                .ok_or_else(|| format!("no configuration for city {city_id}"))?;
            let spec = GridSpec::new(anchor, cell_side_m)?;
            let fleet: Vec<_> = city.vehicles.values().cloned().collect();
            let mut windows = Vec::new();
            for &days in &cfg.window_days {
                let coverage = if cfg.slide {
                    service_areas::sliding_max_coverage(&fleet, &spec, days, &city.window)?
                } else {
                    let w = ServiceWindow::new(city.window.first, days)?;
                    service_areas::distinct_vehicles_per_cell(&fleet, &spec, &w, &city.window)?
                };
                let top = service_areas::top_service_cells(&coverage, cfg.top);
                let feasible = top
                    .first()
                    .is_some_and(|c| service_areas::feasible(c.fraction, cfg.threshold));
                windows.push(WindowResult {
                    window_days: days,
                    slide: cfg.slide,
                    top,
                    feasible,
                });
            }
            Ok((city_id.clone(), windows))
        });
    let output = ServiceOutput {
        schema_version: SCHEMA_VERSION,
        threshold: cfg.threshold,
        cities: per_city.collect::<Result<_, _>>()?,
    };
    write_json(out, &output)?;
    Ok(output)
}

// ----------------------------------------------------------- modal split

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalOutput {
    pub schema_version: u32,
    pub standardized: bool,
    pub modes: Vec<String>,
    /// Row per mode, column per component.
    pub loadings: Vec<Vec<f64>>,
    pub explained_ratio: Vec<f64>,
    pub scores: BTreeMap<String, Vec<f64>>,
    pub k: usize,
    pub wss: Vec<(usize, f64)>,
    pub clusters: BTreeMap<String, usize>,
}

pub fn modal_split_stage(
    indicators: &Path,
    cfg: &ModalSplitConfig,
    seed: u64,
    out: &Path,
) -> Result<ModalOutput, BoxError> {
    let cities =
        citystats::read_indicators(File::open(indicators).map_err(|e| format!("{}: {e}", indicators.display()))?)?;
    let data = citystats::modal_matrix(&cities);
    let pca = citystats::pca(&data, cfg.standardize)?;
    let points: Vec<Vec<f64>> = cities.iter().map(|c| c.shares().to_vec()).collect();
    let sel = citystats::select_k_wss(&points, 1, cfg.k_max, cfg.restarts, seed, cfg.elbow_threshold)?;
    let p = pca.loadings.ncols();
    let output = ModalOutput {
        schema_version: SCHEMA_VERSION,
        standardized: cfg.standardize,
        modes: citystats::MODES.iter().map(|m| m.to_string()).collect(),
        loadings: (0..pca.loadings.nrows())
            .map(|i| (0..p).map(|j| pca.loadings[(i, j)]).collect())
            .collect(),
        explained_ratio: pca.explained_ratio(),
        scores: cities
            .iter()
            .enumerate()
            .map(|(i, c)| (c.city.clone(), (0..p).map(|j| pca.scores[(i, j)]).collect()))
            .collect(),
        k: sel.k,
        wss: sel.wss.clone(),
        clusters: cities
            .iter()
            .zip(&sel.model.assignment)
            .map(|(c, &a)| (c.city.clone(), a))
            .collect(),
    };
    write_json(out, &output)?;
    Ok(output)
}

// ----------------------------------------------------------- orchestration

fn stage_err(stage: Stage) -> impl FnOnce(BoxError) -> PipelineError {
    move |source| PipelineError::Stage { stage, source }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("summaries serialise")
}

/// Runs one stage against the files in the output directory.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<StageReport, PipelineError> {
    let layout = Layout::new(&cfg.out_dir);
    let wrap = stage_err(stage);
    let (outputs, summary) = (|| -> Result<(Vec<PathBuf>, serde_json::Value), BoxError> {
        fs::create_dir_all(&layout.root)?;
        Ok(match stage {
            Stage::Ingest => {
                let s = ingest_stage(&cfg.inputs, &cfg.cities, cfg.ingest.params(), &layout.timelines())?;
                (vec![layout.timelines()], to_value(&s))
            }
            Stage::Trips => {
                let s = trips_stage(&layout.timelines(), &cfg.trips, &layout.trips())?;
                (vec![layout.trips()], to_value(&s))
            }
            Stage::Metrics => {
                let ind = match &cfg.indicators {
                    Some(p) => Some(citystats::read_indicators(File::open(p)?)?),
                    None => None,
                };
                let s = metrics_stage(&layout.timelines(), &layout.trips(), ind.as_deref(), &layout.kpis())?;
                (vec![layout.kpis()], to_value(&s.correlations))
            }
            Stage::Grid => {
                let s = grid_stage(
                    &layout.timelines(),
                    &layout.trips(),
                    &cfg.cities,
                    &cfg.grid,
                    &layout.grid_dir(),
                )?;
                let mut outputs = Vec::new();
                for city in s.keys() {
                    let d = city_grid_dir(&layout.grid_dir(), city);
                    for f in ["availability.csv", "fractions.csv", "pickups.csv", "meta.json"] {
                        outputs.push(d.join(f));
                    }
                }
                (outputs, to_value(&s))
            }
            Stage::Cluster => {
                let s = cluster_stage(
                    &layout.grid_dir(),
                    &cfg.clustering,
                    &layout.cache_dir(),
                    &layout.clusters(),
                )?;
                let ks: BTreeMap<&String, usize> = s.cities.iter().map(|(c, m)| (c, m.k)).collect();
                (vec![layout.clusters()], to_value(&ks))
            }
            Stage::Regularity => {
                let s = regularity_stage(&layout.grid_dir(), &layout.regularity())?;
                (vec![layout.regularity()], to_value(&s))
            }
            Stage::ServiceAreas => {
                let s = service_stage(
                    &layout.timelines(),
                    &cfg.cities,
                    cfg.grid.cell_side_m,
                    &cfg.service,
                    &layout.service(),
                )?;
                let feasible: BTreeMap<&String, Vec<(u32, bool)>> = s
                    .cities
                    .iter()
                    .map(|(c, ws)| (c, ws.iter().map(|w| (w.window_days, w.feasible)).collect()))
                    .collect();
                (vec![layout.service()], to_value(&feasible))
            }
            Stage::ModalSplit => match &cfg.indicators {
                Some(p) => {
                    let s = modal_split_stage(p, &cfg.modal_split, cfg.seed, &layout.modal())?;
                    (vec![layout.modal()], to_value(&serde_json::json!({ "k": s.k })))
                }
                None => {
                    log::info!("no indicators configured; modal split skipped");
                    (Vec::new(), serde_json::json!({ "skipped": true }))
                }
            },
        })
    })()
    .map_err(wrap)?;
    let report = StageReport {
        schema_version: SCHEMA_VERSION,
        stage,
        outputs: outputs.iter().map(|p| rel(&layout, p)).collect(),
        summary,
    };
    write_json(&layout.summary(stage), &report).map_err(stage_err(stage))?;
    Ok(report)
}

/// Validates the configuration, then runs either the given stage or every
/// stage in order, writing the run report for full runs.
pub fn run_pipeline(cfg: &PipelineConfig, only: Option<Stage>) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let stages: Vec<Stage> = match only {
        Some(s) => vec![s],
        None => Stage::ORDER.to_vec(),
    };
    cfg.check_inputs(&stages)?;
    let mut reports = Vec::new();
    for stage in stages {
        log::info!("running stage {stage}");
        reports.push(run_stage(cfg, stage)?);
    }
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        stages: reports,
    };
    if only.is_none() {
        let layout = Layout::new(&cfg.out_dir);
        write_json(&layout.report(), &report).map_err(stage_err(Stage::ModalSplit))?;
    }
    Ok(report)
}

impl PipelineConfig {
    /// A single-city configuration matching a synthetic fleet.
    pub fn for_synth(synth: &crate::synth::SynthConfig, input: PathBuf, out_dir: PathBuf) -> Self {
        PipelineConfig {
            cities: vec![CityConfig {
                city_id: synth.city_id.clone(),
                bounds: synth.bounds(),
                utc_offset_s: synth.utc_offset_s,
                holidays: BTreeSet::new(),
                grid_anchor: Some(synth.center),
            }],
            inputs: vec![input],
            out_dir,
            seed: synth.seed,
            ingest: IngestConfig {
                poll_period_s: synth.poll_period_s,
                gap_tolerance_s: 3 * synth.poll_period_s,
                ..IngestConfig::default()
            },
            trips: TripsConfig::default(),
            grid: GridConfig::default(),
            clustering: ClusterConfig::default(),
            service: ServiceConfig::default(),
            indicators: None,
            modal_split: ModalSplitConfig::default(),
        }
    }

    pub fn city_config(&self, id: &str) -> Option<&CityConfig> {
        self.city(id)
    }

    pub fn spec_for(&self, id: &str) -> Option<GridSpec> {
        self.city(id).map(|c| self.grid_spec(c))
    }
}
