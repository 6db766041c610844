//! End-to-end runs: simulate, track, evaluate, compare.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::PixelTracker;
use crate::io::{self, DetectionFrame, IoError};
use crate::measurement::LidarDepthObs;
use crate::metrics::{errors_csv, evaluate, EvalReport, MetricsError, DEFAULT_MATCH_RADIUS};
use crate::sim::{simulate, GtRecord, Scenario, SimError, SimRun};
use crate::tracker::{FrameInput, TrackOutput, Tracker, TrackerConfig, TrackerError, TrackingEngine};

pub const TOOL_NAME: &str = "s3kf";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(IoError),
    #[error("schema error: {0}")]
    Schema(String),
}

impl PipelineError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Io(_) => 3,
            Self::Schema(_) => 4,
        }
    }
}

impl From<IoError> for PipelineError {
    fn from(e: IoError) -> Self {
        match e {
            e @ IoError::Schema { .. } => Self::Schema(e.to_string()),
            e => Self::Io(e),
        }
    }
}

impl From<SimError> for PipelineError {
    fn from(e: SimError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<TrackerError> for PipelineError {
    fn from(e: TrackerError) -> Self {
        match e {
            TrackerError::Config(s) => Self::Config(s),
            e => Self::Schema(format!("input stream: {e}")),
        }
    }
}

impl From<MetricsError> for PipelineError {
    fn from(e: MetricsError) -> Self {
        Self::Schema(e.to_string())
    }
}

/// Which tracker to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Spherical,
    Pixel,
}

impl EngineKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Spherical => "spherical",
            Self::Pixel => "pixel",
        }
    }

    pub fn build(self, cfg: TrackerConfig) -> Result<Box<dyn TrackingEngine>, TrackerError> {
        Ok(match self {
            Self::Spherical => Box::new(Tracker::new(cfg)?),
            Self::Pixel => Box::new(PixelTracker::new(cfg)?),
        })
    }
}

impl std::str::FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spherical" => Ok(Self::Spherical),
            "pixel" => Ok(Self::Pixel),
            _ => Err(format!("unknown engine {s:?} (expected spherical or pixel)")),
        }
    }
}

/// Per-step latency summary, microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub steps: usize,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl LatencyStats {
    pub fn from_durations(d: &[Duration]) -> Self {
        let mut us: Vec<f64> = d.iter().map(|x| x.as_secs_f64() * 1e6).collect();
        us.sort_by(f64::total_cmp);
        let pick = |q: f64| -> f64 {
            if us.is_empty() {
                return 0.0;
            }
            us[((us.len() - 1) as f64 * q).round() as usize]
        };
        let mean = if us.is_empty() { 0.0 } else { us.iter().sum::<f64>() / us.len() as f64 };
        Self {
            steps: us.len(),
            mean_us: mean,
            p50_us: pick(0.5),
            p90_us: pick(0.9),
            p99_us: pick(0.99),
            max_us: pick(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_s: f64,
    pub step_latency: LatencyStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRef {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRef {
    /// File name only, so manifests do not depend on where a run lives.
    pub file: String,
    pub sha256: String,
}

/// Provenance of one output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub scenarios: Vec<ScenarioRef>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub engine: Option<EngineKind>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config: Option<TrackerConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_sha256: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub inputs: Vec<InputRef>,
    pub outputs: Vec<String>,
    /// Only for commands whose outputs are otherwise reproducible bit for bit
    /// regardless of timing (`track`).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<Timing>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            command: command.into(),
            scenarios: Vec::new(),
            seed: None,
            engine: None,
            config: None,
            config_sha256: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timing: None,
        }
    }

    pub fn with_config(mut self, cfg: &TrackerConfig) -> Self {
        self.config_sha256 = Some(config_sha256(cfg));
        self.config = Some(*cfg);
        self
    }
}

pub fn config_sha256(cfg: &TrackerConfig) -> String {
    io::sha256_hex(&serde_json::to_vec(cfg).expect("config serializes"))
}

/// Loads a tracker configuration; a missing path means all defaults.
pub fn load_config(path: Option<&Path>) -> Result<TrackerConfig, PipelineError> {
    let cfg: TrackerConfig = match path {
        None => TrackerConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| IoError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    Scenario::from_json(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

/// Tracker configuration matched to a scenario's camera.
pub fn config_for(scenario: &Scenario, base: &TrackerConfig) -> TrackerConfig {
    let mut cfg = *base;
    cfg.camera.img_h = scenario.img_h;
    cfg
}

/// Groups LiDAR returns with the first camera frame at or after them.
/// Returns stamped after the last frame are dropped.
pub fn assemble_frames(
    detections: Vec<DetectionFrame>,
    mut lidar: Vec<LidarDepthObs>,
) -> Result<Vec<FrameInput>, PipelineError> {
    if let Some(w) = detections.windows(2).find(|w| w[1].t < w[0].t) {
        return Err(PipelineError::Schema(format!(
            "detection frames are not time-sorted ({} after {})",
            w[1].t, w[0].t
        )));
    }
    lidar.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut frames = Vec::with_capacity(detections.len());
    let mut next = 0;
    for d in detections {
        let start = next;
        while next < lidar.len() && lidar[next].t <= d.t {
            next += 1;
        }
        frames.push(FrameInput {
            t: d.t,
            detections: d.detections,
            lidar_obs: lidar[start..next].to_vec(),
            sensor_pose: None,
        });
    }
    Ok(frames)
}

/// Runs an engine over a frame stream, timing each step.
pub fn run_engine(
    engine: &mut dyn TrackingEngine,
    frames: &[FrameInput],
) -> Result<(Vec<TrackOutput>, Vec<Duration>), TrackerError> {
    let mut out = Vec::new();
    let mut lat = Vec::with_capacity(frames.len());
    for f in frames {
        let start = Instant::now();
        let o = engine.step(f)?;
        lat.push(start.elapsed());
        out.extend(o);
    }
    Ok((out, lat))
}

fn gt_line_records(run: &SimRun) -> impl Iterator<Item = &GtRecord> {
    run.gt.iter()
}

/// Writes `gt.jsonl`, `detections.jsonl` and `lidar.jsonl` for a run.
pub fn write_sim_files(run: &SimRun, out: &Path) -> Result<Vec<String>, PipelineError> {
    io::write_jsonl(&out.join("gt.jsonl"), gt_line_records(run))?;
    io::write_jsonl(
        &out.join("detections.jsonl"),
        run.frames.iter().map(|f| DetectionFrame { t: f.t, detections: f.detections.clone() }),
    )?;
    io::write_jsonl(&out.join("lidar.jsonl"), run.frames.iter().flat_map(|f| f.lidar_obs.iter()))?;
    Ok(vec!["gt.jsonl".into(), "detections.jsonl".into(), "lidar.jsonl".into()])
}

/// `simulate`: ground truth and sensor streams for one scenario.
pub fn cmd_simulate(scenario: &Scenario, seed: u64, out: &Path) -> Result<SimRun, PipelineError> {
    let run = simulate(scenario, seed);
    let mut manifest = RunManifest::new("simulate");
    manifest.scenarios.push(ScenarioRef { name: scenario.name.clone(), sha256: scenario.sha256() });
    manifest.seed = Some(seed);
    manifest.outputs = write_sim_files(&run, out)?;
    io::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(run)
}

/// Inputs to `cmd_track`.
#[derive(Debug, Clone)]
pub struct TrackInputs {
    pub detections: PathBuf,
    pub lidar: Option<PathBuf>,
}

/// `track`: runs one engine over recorded streams.
pub fn cmd_track(
    inputs: &TrackInputs,
    cfg: &TrackerConfig,
    engine: EngineKind,
    out: &Path,
) -> Result<Vec<TrackOutput>, PipelineError> {
    let detections: Vec<DetectionFrame> = io::read_jsonl(&inputs.detections)?;
    let lidar: Vec<LidarDepthObs> = match &inputs.lidar {
        Some(p) => io::read_jsonl(p)?,
        None => Vec::new(),
    };
    let frames = assemble_frames(detections, lidar)?;
    let mut eng = engine.build(*cfg)?;
    let start = Instant::now();
    let (tracks, lat) = run_engine(eng.as_mut(), &frames)?;
    let wall = start.elapsed().as_secs_f64();

    io::write_jsonl(&out.join("tracks.jsonl"), tracks.iter())?;
    let mut manifest = RunManifest::new("track").with_config(cfg);
    manifest.engine = Some(engine);
    let mut files = vec![&inputs.detections];
    files.extend(inputs.lidar.as_ref());
    for p in files {
        manifest.inputs.push(InputRef {
            file: p.file_name().map_or_else(|| p.display().to_string(), |f| f.to_string_lossy().into_owned()),
            sha256: io::sha256_file(p)?,
        });
    }
    manifest.outputs = vec!["tracks.jsonl".into()];
    manifest.timing = Some(Timing { wall_clock_s: wall, step_latency: LatencyStats::from_durations(&lat) });
    io::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(tracks)
}

/// Writes `metrics.json` and `errors.csv` for one evaluation.
fn write_eval(tracks: &[TrackOutput], gt: &[GtRecord], out: &Path) -> Result<EvalReport, PipelineError> {
    let (report, log) = evaluate(tracks, gt, DEFAULT_MATCH_RADIUS)?;
    io::write_json(&out.join("metrics.json"), &report)?;
    io::write_atomic(&out.join("errors.csv"), errors_csv(&log).as_bytes())?;
    Ok(report)
}

/// `eval`: metrics of a track log against ground truth.
pub fn cmd_eval(tracks_path: &Path, gt_path: &Path, out: &Path) -> Result<EvalReport, PipelineError> {
    let tracks: Vec<TrackOutput> = io::read_jsonl(tracks_path)?;
    let gt: Vec<GtRecord> = io::read_jsonl(gt_path)?;
    let report = write_eval(&tracks, &gt, out)?;
    let mut manifest = RunManifest::new("eval");
    for p in [tracks_path, gt_path] {
        manifest.inputs.push(InputRef {
            file: p.file_name().map_or_else(|| p.display().to_string(), |f| f.to_string_lossy().into_owned()),
            sha256: io::sha256_file(p)?,
        });
    }
    manifest.outputs = vec!["metrics.json".into(), "errors.csv".into()];
    io::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(report)
}

/// Headline numbers of one engine on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSummary {
    pub max_id_total: usize,
    pub total_switches: u32,
    /// Per-target planar RMSE, meters; `None` for targets never matched.
    pub rmse: Vec<Option<f64>>,
    pub min_coverage_after_first_match: f64,
}

impl From<&EvalReport> for EngineSummary {
    fn from(r: &EvalReport) -> Self {
        Self {
            max_id_total: r.max_id_total,
            total_switches: r.total_switches,
            rmse: r.targets.iter().map(|t| t.rmse).collect(),
            min_coverage_after_first_match: r
                .targets
                .iter()
                .map(|t| t.coverage_after_first_match)
                .fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub targets: usize,
    pub spherical: EngineSummary,
    pub pixel: EngineSummary,
}

/// Side-by-side identity statistics of both engines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
    pub spherical_max_id_total: usize,
    pub pixel_max_id_total: usize,
    pub note: String,
}

const CANVAS_NOTE: &str =
    "pixel engine: image-plane tracker on an equirectangular canvas (4*img_h x 2*img_h) without azimuth wrap-around; \
     it stands in for a 2D detector-space tracker and is not a port of any specific implementation";

/// Runs one scenario through both engines, writing per-engine outputs.
pub fn compare_scenario(
    scenario: &Scenario,
    seed: u64,
    base: &TrackerConfig,
    out: &Path,
) -> Result<ComparisonRow, PipelineError> {
    let run = simulate(scenario, seed);
    write_sim_files(&run, out)?;
    let cfg = config_for(scenario, base);
    let mut summaries = Vec::new();
    for kind in [EngineKind::Spherical, EngineKind::Pixel] {
        let dir = out.join(kind.name());
        let mut eng = kind.build(cfg)?;
        let (tracks, _) = run_engine(eng.as_mut(), &run.frames)?;
        io::write_jsonl(&dir.join("tracks.jsonl"), tracks.iter())?;
        summaries.push(EngineSummary::from(&write_eval(&tracks, &run.gt, &dir)?));
    }
    let pixel = summaries.pop().expect("two engines");
    let spherical = summaries.pop().expect("two engines");
    Ok(ComparisonRow { scenario: scenario.name.clone(), targets: scenario.targets.len(), spherical, pixel })
}

/// `compare`: both engines on every scenario, one subdirectory each.
pub fn cmd_compare(
    scenarios: &[Scenario],
    seed: u64,
    base: &TrackerConfig,
    out: &Path,
) -> Result<Comparison, PipelineError> {
    if scenarios.is_empty() {
        return Err(PipelineError::Config("compare needs at least one scenario".into()));
    }
    let mut names = std::collections::BTreeSet::new();
    for s in scenarios {
        if !names.insert(s.name.as_str()) {
            return Err(PipelineError::Config(format!("duplicate scenario name {:?}", s.name)));
        }
    }
    base.validate()?;
    let mut rows = Vec::new();
    for s in scenarios {
        log::info!("compare: {}", s.name);
        rows.push(compare_scenario(s, seed, base, &out.join(&s.name))?);
    }
    let cmp = Comparison {
        seed,
        spherical_max_id_total: rows.iter().map(|r| r.spherical.max_id_total).sum(),
        pixel_max_id_total: rows.iter().map(|r| r.pixel.max_id_total).sum(),
        rows,
        note: CANVAS_NOTE.into(),
    };
    io::write_json(&out.join("comparison.json"), &cmp)?;
    let mut manifest = RunManifest::new("compare").with_config(base);
    manifest.scenarios = scenarios.iter().map(|s| ScenarioRef { name: s.name.clone(), sha256: s.sha256() }).collect();
    manifest.seed = Some(seed);
    manifest.outputs = vec!["comparison.json".into()];
    manifest.outputs.extend(scenarios.iter().map(|s| format!("{}/", s.name)));
    io::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::canned;

    #[test]
    fn latency_percentiles() {
        let d: Vec<Duration> = (1..=100).map(Duration::from_micros).collect();
        let s = LatencyStats::from_durations(&d);
        assert_eq!(s.steps, 100);
        assert!((s.p50_us - 51.0).abs() < 1e-6 || (s.p50_us - 50.0).abs() < 1e-6);
        assert!((s.max_us - 100.0).abs() < 1e-6);
        assert!((s.mean_us - 50.5).abs() < 1e-6);
    }

    #[test]
    fn frames_from_files_match_simulation() {
        let mut s = canned("seq1_static").unwrap();
        s.duration = 3.0;
        let run = simulate(&s, 5);
        let dets = run.frames.iter().map(|f| DetectionFrame { t: f.t, detections: f.detections.clone() }).collect();
        let lidar = run.frames.iter().flat_map(|f| f.lidar_obs.clone()).collect();
        assert_eq!(assemble_frames(dets, lidar).unwrap(), run.frames);
    }

    #[test]
    fn unsorted_frames_are_a_schema_error() {
        let f = |t| DetectionFrame { t, detections: vec![] };
        let e = assemble_frames(vec![f(1.0), f(0.5)], vec![]).unwrap_err();
        assert_eq!(e.exit_code(), 4);
    }

    #[test]
    fn engine_names_parse() {
        assert_eq!("pixel".parse::<EngineKind>(), Ok(EngineKind::Pixel));
        assert!("bytetrack".parse::<EngineKind>().is_err());
    }

    #[test]
    fn bad_config_file_is_exit_code_two() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"association": {"tau_high": 0.01}}"#).unwrap();
        let e = load_config(Some(&p)).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("tau_high"));
        let e = load_config(Some(&dir.path().join("missing.json"))).unwrap_err();
        assert_eq!(e.exit_code(), 3);
    }
}
