//! Config-driven batch pipeline: mam2sos -> simulate -> invert -> adapt ->
//! metrics.
//!
//! Stages hand data to each other through files under `output_dir`:
//!
//! | stage    | writes                                                        |
//! |----------|---------------------------------------------------------------|
//! | mam2sos  | `intensity/<stem>.f32`, `sos/<stem>.f32`                      |
//! | simulate | `shots/<stem>.f32`, `shots/<stem>_geometry.json`              |
//! | invert   | `fwi/<stem>.f32`, `fwi/<stem>_intensity.f32`, `fwi/<stem>_objective.csv` |
//! | adapt    | `adapted/<stem>_beta<b>.f32`, `adapted/targets/*.f32`, `adapted/adapt_manifest.json` |
//! | metrics  | `metrics/metrics.csv`                                         |
//!
//! Files are written as `<name>.partial` and renamed when their stage
//! finishes, so a failed stage leaves only `.partial` files behind.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fourier::{beta_sweep, Pairing, SwapMode, REFERENCE_BETAS};
use crate::fwi::{invert_with, make_initial_model, FwiConfig, FwiProblem};
use crate::grid::ImageGrid;
use crate::io::{encode_f32_raw, load_image, ImageFormat};
use crate::metrics::MetricReport;
use crate::phantom::{phantom, speckle_texture, PhantomKind};
use crate::tissue::{hu_to_sound_speed, intensity_to_hu, TissueTable, DEFAULT_HU_BOUNDS};
use crate::wave::{
    make_curvilinear_array, make_linear_array, AcousticModel, AcquisitionGeometry, ArrayKind, ShotRecord,
    SolverSettings, WaveSolver, DEFAULT_CENTRAL_FREQUENCY, LINEAR_ARRAY_MARGIN,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARTIAL_SUFFIX: &str = ".partial";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Mam2sos,
    Simulate,
    Invert,
    Adapt,
    Metrics,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Mam2sos,
        Stage::Simulate,
        Stage::Invert,
        Stage::Adapt,
        Stage::Metrics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Mam2sos => "mam2sos",
            Stage::Simulate => "simulate",
            Stage::Invert => "invert",
            Stage::Adapt => "adapt",
            Stage::Metrics => "metrics",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub mam2sos: bool,
    pub simulate: bool,
    pub invert: bool,
    pub adapt: bool,
    pub metrics: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            mam2sos: true,
            simulate: true,
            invert: true,
            adapt: true,
            metrics: true,
        }
    }
}

impl StageToggles {
    pub fn enabled(&self, stage: Stage) -> bool {
        match stage {
            Stage::Mam2sos => self.mam2sos,
            Stage::Simulate => self.simulate,
            Stage::Invert => self.invert,
            Stage::Adapt => self.adapt,
            Stage::Metrics => self.metrics,
        }
    }
}

/// Synthetic intensity inputs used when no `input_dir` is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub size: usize,
    pub count: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            kind: PhantomKind::BreastLike,
            size: 64,
            count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransducerConfig {
    pub array_kind: ArrayKind,
    pub num_elements: usize,
    pub frequency_hz: f64,
    /// Zero picks a duration covering the longest element-to-element path.
    pub duration_s: f64,
    /// Zero picks the stable step.
    pub dt_s: f64,
    /// Curvilinear radius as a fraction of `min(h, w) - 1`.
    pub ring_radius_fraction: f64,
    pub arc_rad: f64,
    /// Row of a linear array.
    pub depth_row: usize,
    pub source_amplitude: f64,
}

impl Default for TransducerConfig {
    fn default() -> Self {
        Self {
            array_kind: ArrayKind::Curvilinear,
            num_elements: 16,
            frequency_hz: DEFAULT_CENTRAL_FREQUENCY,
            duration_s: 0.0,
            dt_s: 0.0,
            ring_radius_fraction: 0.42,
            arc_rad: std::f64::consts::TAU,
            depth_row: LINEAR_ARRAY_MARGIN,
            source_amplitude: 1.0,
        }
    }
}

impl TransducerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_elements < 2 {
            return Err(Error::invalid("transducer needs at least two elements"));
        }
        if !(self.frequency_hz > 0.0) {
            return Err(Error::invalid("frequency_hz must be positive"));
        }
        if !(self.duration_s >= 0.0) || !(self.dt_s >= 0.0) {
            return Err(Error::invalid("duration_s and dt_s must be >= 0"));
        }
        if !(self.ring_radius_fraction > 0.0 && self.ring_radius_fraction <= 0.5) {
            return Err(Error::invalid("ring_radius_fraction must lie in (0, 0.5]"));
        }
        if !self.source_amplitude.is_finite() {
            return Err(Error::invalid("source_amplitude must be finite"));
        }
        Ok(())
    }

    /// Geometry for a `dims` grid whose speeds stay within `(c_lo, c_hi)`.
    pub fn build(&self, dims: (usize, usize), dx: f64, (c_lo, c_hi): (f64, f64)) -> Result<AcquisitionGeometry> {
        self.validate()?;
        let (h, w) = dims;
        let geometry = match self.array_kind {
            ArrayKind::Linear => make_linear_array(self.num_elements, self.depth_row, dims)?,
            ArrayKind::Curvilinear => {
                let radius = self.ring_radius_fraction * (h.min(w) - 1) as f64;
                let center = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
                make_curvilinear_array(self.num_elements, radius, center, self.arc_rad, dims)?
            }
        };
        let duration = if self.duration_s > 0.0 {
            self.duration_s
        } else {
            let span = max_element_distance(&geometry.element_positions);
            3.0 / self.frequency_hz + 1.1 * span * dx / c_lo
        };
        let mut geometry = geometry
            .with_timing(self.frequency_hz, duration, self.dt_s)
            .with_amplitude(self.source_amplitude);
        geometry.fit_time_step(c_hi, dx);
        geometry.validate(h, w)?;
        Ok(geometry)
    }
}

fn max_element_distance(positions: &[(usize, usize)]) -> f64 {
    let mut best = 0.0f64;
    for &(r1, c1) in positions {
        for &(r2, c2) in positions {
            best = best.max((r1 as f64 - r2 as f64).hypot(c1 as f64 - c2 as f64));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdaConfig {
    pub betas: Vec<f64>,
    pub mode: SwapMode,
    /// Pairing and synthetic-target seed; falls back to the run seed.
    pub seed: Option<u64>,
    /// Real target-domain images; seeded speckle is generated when absent.
    pub target_dir: Option<PathBuf>,
    pub num_targets: usize,
}

impl Default for FdaConfig {
    fn default() -> Self {
        Self {
            betas: REFERENCE_BETAS.to_vec(),
            mode: SwapMode::Amplitude,
            seed: None,
            target_dir: None,
            num_targets: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub dynamic_range: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { dynamic_range: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub stages: StageToggles,
    /// Directory of intensity images; phantoms are generated when absent.
    pub input_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub phantom: PhantomSpec,
    pub tissue_table: Option<PathBuf>,
    pub hu_bounds: (f64, f64),
    pub grid_spacing_m: f64,
    pub transducer: TransducerConfig,
    pub solver: SolverSettings,
    pub fwi: FwiConfig,
    pub fda: FdaConfig,
    pub metrics: MetricsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stages: StageToggles::default(),
            input_dir: None,
            output_dir: PathBuf::from("wavesono_out"),
            phantom: PhantomSpec::default(),
            tissue_table: None,
            hu_bounds: DEFAULT_HU_BOUNDS,
            grid_spacing_m: 5e-4,
            transducer: TransducerConfig::default(),
            solver: SolverSettings::default(),
            fwi: FwiConfig::default(),
            fda: FdaConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            context: "pipeline config".into(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the serialized config.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn fda_seed(&self) -> u64 {
        self.fda.seed.unwrap_or(self.seed)
    }

    fn tissue(&self) -> Result<TissueTable> {
        match &self.tissue_table {
            Some(path) => TissueTable::load(path),
            None => Ok(TissueTable::default()),
        }
    }

    /// Checks parameters, referenced paths, and that every input of an
    /// enabled stage is produced upstream or already on disk.
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.hu_bounds;
        if !(lo < hi) {
            return Err(Error::invalid(format!("hu_bounds ({lo}, {hi}) are not ordered")));
        }
        if !(self.grid_spacing_m > 0.0) {
            return Err(Error::invalid("grid_spacing_m must be positive"));
        }
        if self.phantom.count == 0 {
            return Err(Error::invalid("phantom.count must be at least 1"));
        }
        self.transducer.validate()?;
        self.fwi.validate()?;
        self.tissue()?;
        if let Some(dir) = &self.input_dir {
            require_dir(dir, "input_dir")?;
        }
        if let Some(dir) = &self.fda.target_dir {
            require_dir(dir, "fda.target_dir")?;
            if list_images(dir)?.is_empty() {
                return Err(Error::invalid(format!("fda.target_dir {} holds no images", dir.display())));
            }
        }
        if self.stages.adapt || self.stages.metrics {
            if self.fda.betas.is_empty() {
                return Err(Error::invalid("fda.betas must not be empty"));
            }
            for &b in &self.fda.betas {
                if !(0.0..=1.0).contains(&b) {
                    return Err(Error::invalid(format!("beta {b} outside [0, 1]")));
                }
            }
            if self.fda.target_dir.is_none() && self.fda.num_targets == 0 {
                return Err(Error::invalid("fda.num_targets must be at least 1"));
            }
        }
        if !(self.metrics.dynamic_range > 0.0) {
            return Err(Error::invalid("metrics.dynamic_range must be positive"));
        }

        let layout = Layout::new(&self.output_dir);
        let stems = self.stems()?;
        let mut available: BTreeSet<PathBuf> = BTreeSet::new();
        for stage in Stage::ALL {
            if !self.stages.enabled(stage) {
                continue;
            }
            for path in layout.required(stage, &stems, &self.fda.betas) {
                if !available.contains(&path) && !path.is_file() {
                    return Err(Error::invalid(format!(
                        "stage `{}` needs {} which is neither produced upstream nor present",
                        stage.name(),
                        path.display()
                    )));
                }
            }
            available.extend(layout.produced(stage, &stems, &self.fda.betas));
        }
        Ok(())
    }

    /// Item names flowing through the stages.
    pub fn stems(&self) -> Result<Vec<String>> {
        if self.stages.mam2sos {
            match &self.input_dir {
                Some(dir) => list_images(dir)?.iter().map(|p| file_stem(p)).collect(),
                None => Ok((0..self.phantom.count).map(|k| format!("phantom_{k:03}")).collect()),
            }
        } else {
            let dir = Layout::new(&self.output_dir).intensity;
            if !dir.is_dir() {
                return Err(Error::invalid(format!(
                    "mam2sos is disabled but {} does not exist",
                    dir.display()
                )));
            }
            let stems: Vec<String> = list_images(&dir)?.iter().map(|p| file_stem(p)).collect::<Result<_>>()?;
            if stems.is_empty() {
                return Err(Error::invalid(format!("{} holds no images", dir.display())));
            }
            Ok(stems)
        }
    }
}

fn require_dir(dir: &Path, what: &str) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} {} is not a directory", dir.display())))
    }
}

fn file_stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::invalid(format!("cannot name {}", path.display())))
}

/// Image files (`pgm`, `png`, `f32`, `raw`) directly inside `dir`, sorted.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && ImageFormat::from_path(&path).is_some() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Load an image, picking the format from its extension.
pub fn load_any(path: &Path) -> Result<ImageGrid> {
    let format = ImageFormat::from_path(path)
        .ok_or_else(|| Error::invalid(format!("unknown image extension: {}", path.display())))?;
    load_image(path, format)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn beta_label(beta: f64) -> String {
    format!("beta{beta}")
}

/// File locations under one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
    pub intensity: PathBuf,
    pub sos: PathBuf,
    pub shots: PathBuf,
    pub fwi: PathBuf,
    pub adapted: PathBuf,
    pub targets: PathBuf,
    pub metrics: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        let adapted = root.join("adapted");
        Self {
            root: root.to_path_buf(),
            intensity: root.join("intensity"),
            sos: root.join("sos"),
            shots: root.join("shots"),
            fwi: root.join("fwi"),
            targets: adapted.join("targets"),
            adapted,
            metrics: root.join("metrics"),
        }
    }

    pub fn intensity_file(&self, stem: &str) -> PathBuf {
        self.intensity.join(format!("{stem}.f32"))
    }
    pub fn sos_file(&self, stem: &str) -> PathBuf {
        self.sos.join(format!("{stem}.f32"))
    }
    pub fn shots_file(&self, stem: &str) -> PathBuf {
        self.shots.join(format!("{stem}.f32"))
    }
    pub fn geometry_file(&self, stem: &str) -> PathBuf {
        self.shots.join(format!("{stem}_geometry.json"))
    }
    pub fn fwi_file(&self, stem: &str) -> PathBuf {
        self.fwi.join(format!("{stem}.f32"))
    }
    pub fn fwi_intensity_file(&self, stem: &str) -> PathBuf {
        self.fwi.join(format!("{stem}_intensity.f32"))
    }
    pub fn objective_file(&self, stem: &str) -> PathBuf {
        self.fwi.join(format!("{stem}_objective.csv"))
    }
    pub fn adapted_file(&self, stem: &str, beta: f64) -> PathBuf {
        self.adapted.join(format!("{stem}_{}.f32", beta_label(beta)))
    }
    pub fn adapt_manifest_file(&self) -> PathBuf {
        self.adapted.join("adapt_manifest.json")
    }
    pub fn metrics_file(&self) -> PathBuf {
        self.metrics.join("metrics.csv")
    }

    fn required(&self, stage: Stage, stems: &[String], betas: &[f64]) -> Vec<PathBuf> {
        let per = |f: &dyn Fn(&str) -> Vec<PathBuf>| stems.iter().flat_map(|s| f(s)).collect::<Vec<_>>();
        match stage {
            Stage::Mam2sos => Vec::new(),
            Stage::Simulate => per(&|s| vec![self.sos_file(s)]),
            Stage::Invert => per(&|s| vec![self.shots_file(s), self.geometry_file(s), self.sos_file(s)]),
            Stage::Adapt => per(&|s| vec![self.fwi_intensity_file(s)]),
            Stage::Metrics => per(&|s| {
                let mut v = vec![self.intensity_file(s), self.fwi_intensity_file(s)];
                v.extend(betas.iter().map(|&b| self.adapted_file(s, b)));
                v
            }),
        }
    }

    fn produced(&self, stage: Stage, stems: &[String], betas: &[f64]) -> Vec<PathBuf> {
        let per = |f: &dyn Fn(&str) -> Vec<PathBuf>| stems.iter().flat_map(|s| f(s)).collect::<Vec<_>>();
        match stage {
            Stage::Mam2sos => per(&|s| vec![self.intensity_file(s), self.sos_file(s)]),
            Stage::Simulate => per(&|s| vec![self.shots_file(s), self.geometry_file(s)]),
            Stage::Invert => per(&|s| vec![self.fwi_file(s), self.fwi_intensity_file(s), self.objective_file(s)]),
            Stage::Adapt => {
                let mut v = per(&|s| betas.iter().map(|&b| self.adapted_file(s, b)).collect());
                v.push(self.adapt_manifest_file());
                v
            }
            Stage::Metrics => vec![self.metrics_file()],
        }
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }
}

/// Collects a stage's outputs as `.partial` files and publishes them only
/// when the stage completes.
#[derive(Debug, Default)]
pub struct StageWriter {
    written: Vec<PathBuf>,
}

fn partial_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(PARTIAL_SUFFIX);
    PathBuf::from(os)
}

impl StageWriter {
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if self.written.iter().any(|p| p == path) {
            return Err(Error::invalid(format!("{} written twice in one stage", path.display())));
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = partial_path(path);
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    pub fn write_grid(&mut self, path: &Path, grid: &ImageGrid) -> Result<()> {
        self.write(path, &encode_f32_raw(grid))
    }

    /// Rename every partial file into place and return the final paths.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        for path in &self.written {
            let tmp = partial_path(path);
            fs::rename(&tmp, path).map_err(|e| Error::io(&tmp, e))?;
        }
        Ok(self.written)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the output directory when inside it.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub ran: bool,
    pub inputs: Vec<String>,
    pub outputs: Vec<FileRecord>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn output_files(&self) -> impl Iterator<Item = &FileRecord> {
        self.stages.iter().flat_map(|s| s.outputs.iter())
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })
    }
}

/// Speed-of-sound map from an X-ray intensity image.
pub fn mam2sos(intensity: &ImageGrid, table: &TissueTable, hu_bounds: (f64, f64)) -> Result<ImageGrid> {
    let hu = intensity_to_hu(intensity, hu_bounds.0, hu_bounds.1)?;
    hu_to_sound_speed(&hu, table)
}

/// Map speeds in `[lo, hi]` onto `[0, 1]`, clamping outside.
pub fn speed_to_intensity(speed: &ImageGrid, (lo, hi): (f64, f64)) -> ImageGrid {
    speed.map(|c| ((c - lo) / (hi - lo)).clamp(0.0, 1.0)).with_value_range(1.0)
}

pub fn objective_csv(history: &[f64]) -> String {
    let mut out = String::from("iteration,objective\n");
    for (k, phi) in history.iter().enumerate() {
        out.push_str(&format!("{k},{phi:e}\n"));
    }
    out
}

/// Entry of the adaptation manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptRecord {
    pub source: String,
    pub target: String,
    pub beta: f64,
    pub seed: u64,
    pub mode: SwapMode,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub recon: String,
    pub truth: String,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-pair metrics plus mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
    pub std: MetricRow,
}

pub const SUMMARY_MEAN: &str = "mean";
pub const SUMMARY_STD: &str = "std";

/// Mean and population standard deviation. Identical values (infinities
/// included) have zero spread.
fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.iter().all(|&v| v == values[0]) {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricsTable {
    pub fn from_rows(rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("no metric pairs"));
        }
        let col = |f: fn(&MetricRow) -> f64| mean_std(&rows.iter().map(f).collect::<Vec<_>>());
        let (mse_m, mse_s) = col(|r| r.mse);
        let (psnr_m, psnr_s) = col(|r| r.psnr);
        let (ssim_m, ssim_s) = col(|r| r.ssim);
        let summary = |name: &str, mse, psnr, ssim| MetricRow {
            recon: name.into(),
            truth: String::new(),
            mse,
            psnr,
            ssim,
        };
        Ok(Self {
            mean: summary(SUMMARY_MEAN, mse_m, psnr_m, ssim_m),
            std: summary(SUMMARY_STD, mse_s, psnr_s, ssim_s),
            rows,
        })
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.rows.iter().chain([&self.mean, &self.std]) {
            w.serialize(row).map_err(|e| Error::invalid(format!("csv: {e}")))?;
        }
        w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))
    }

    /// Parse CSV written by [`MetricsTable::to_csv`]; the last two rows are
    /// the summary.
    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let mut rows: Vec<MetricRow> = r
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("csv: {e}")))?;
        if rows.len() < 3 {
            return Err(Error::invalid("metrics csv needs at least one row and two summary rows"));
        }
        let std = rows.pop().expect("length checked");
        let mean = rows.pop().expect("length checked");
        if mean.recon != SUMMARY_MEAN || std.recon != SUMMARY_STD {
            return Err(Error::invalid("metrics csv is missing its summary rows"));
        }
        Ok(Self { rows, mean, std })
    }
}

/// MSE, PSNR and SSIM for each `(recon, truth)` pair of image files.
pub fn report_metrics(pairs: &[(PathBuf, PathBuf)], dynamic_range: f64, exec: Execution) -> Result<MetricsTable> {
    let rows = exec.try_map(pairs, |(recon, truth)| {
        let a = load_any(recon)?;
        let b = load_any(truth)?;
        let m = MetricReport::compute(&a, &b, dynamic_range)?;
        Ok::<_, Error>(MetricRow {
            recon: recon.to_string_lossy().into_owned(),
            truth: truth.to_string_lossy().into_owned(),
            mse: m.mse,
            psnr: m.psnr,
            ssim: m.ssim,
        })
    })?;
    MetricsTable::from_rows(rows)
}

/// Run every enabled stage in order and write `manifest.json`.
pub fn run_pipeline(config: &PipelineConfig, exec: Execution) -> Result<RunManifest> {
    config.validate()?;
    let layout = Layout::new(&config.output_dir);
    fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;
    let stems = config.stems()?;

    let mut stages = Vec::with_capacity(Stage::ALL.len());
    for stage in Stage::ALL {
        if !config.stages.enabled(stage) {
            stages.push(StageRecord {
                name: stage.name().into(),
                ran: false,
                inputs: Vec::new(),
                outputs: Vec::new(),
                wall_clock_s: 0.0,
            });
            continue;
        }
        log::info!("stage {} on {} item(s)", stage.name(), stems.len());
        let start = Instant::now();
        let mut writer = StageWriter::default();
        let inputs = run_stage(stage, config, &layout, &stems, &mut writer, exec).map_err(|e| Error::Stage {
            stage: stage.name().into(),
            source: Box::new(e),
        })?;
        let outputs = writer.commit()?;
        let mut records = Vec::with_capacity(outputs.len());
        for path in outputs {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            records.push(FileRecord {
                path: layout.relative(&path),
                sha256: sha256_hex(&bytes),
            });
        }
        stages.push(StageRecord {
            name: stage.name().into(),
            ran: true,
            inputs: inputs.iter().map(|p| layout.relative(p)).collect(),
            outputs: records,
            wall_clock_s: start.elapsed().as_secs_f64(),
        });
    }

    let manifest = RunManifest {
        software_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config.hash(),
        seed: config.seed,
        stages,
    };
    let path = layout.root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn run_stage(
    stage: Stage,
    config: &PipelineConfig,
    layout: &Layout,
    stems: &[String],
    writer: &mut StageWriter,
    exec: Execution,
) -> Result<Vec<PathBuf>> {
    let dx = config.grid_spacing_m;
    let bounds = config.fwi.model_bounds;
    let mut inputs = Vec::new();
    match stage {
        Stage::Mam2sos => {
            let table = config.tissue()?;
            let files = match &config.input_dir {
                Some(dir) => list_images(dir)?.into_iter().map(Some).collect(),
                None => vec![None; stems.len()],
            };
            for (k, (stem, file)) in stems.iter().zip(files).enumerate() {
                let intensity = match file {
                    Some(path) => {
                        let grid = load_any(&path)?;
                        inputs.push(path);
                        grid
                    }
                    None => phantom(config.phantom.kind, config.phantom.size, config.seed.wrapping_add(k as u64))?,
                };
                let sos = mam2sos(&intensity, &table, config.hu_bounds)?;
                writer.write_grid(&layout.intensity_file(stem), &intensity)?;
                writer.write_grid(&layout.sos_file(stem), &sos)?;
            }
        }
        Stage::Simulate => {
            for stem in stems {
                let path = layout.sos_file(stem);
                let model = AcousticModel::new(load_any(&path)?, dx)?;
                inputs.push(path);
                let c_hi = model.max_speed().max(bounds.1);
                let c_lo = model.min_speed().min(bounds.0);
                let geometry = config.transducer.build(model.dims(), dx, (c_lo, c_hi))?;
                let solver = WaveSolver::new(&model, &geometry, &config.solver)?;
                let record = solver.simulate(exec)?;
                writer.write_grid(&layout.shots_file(stem), &record.to_grid())?;
                let json = serde_json::to_string_pretty(&geometry).expect("geometry serializes");
                writer.write(&layout.geometry_file(stem), json.as_bytes())?;
            }
        }
        Stage::Invert => {
            for stem in stems {
                let (shots, geo, sos) = (layout.shots_file(stem), layout.geometry_file(stem), layout.sos_file(stem));
                let text = fs::read_to_string(&geo).map_err(|e| Error::io(&geo, e))?;
                let geometry: AcquisitionGeometry = serde_json::from_str(&text).map_err(|source| Error::Json {
                    context: geo.display().to_string(),
                    source,
                })?;
                let observed = ShotRecord::from_grid(&load_any(&shots)?, geometry.num_shots(), geometry.dt)?;
                let truth = load_any(&sos)?;
                inputs.extend([shots, geo, sos]);
                let init = make_initial_model(&truth, config.fwi.init_blur_sigma, dx)?;
                let problem = FwiProblem::new(geometry, observed)
                    .with_settings(config.solver.clone())
                    .with_execution(exec);
                let (model, state) = invert_with(&problem, &config.fwi, init, |s| {
                    log::debug!("{stem}: iteration {} objective {:e}", s.iteration, s.objective_history.last().copied().unwrap_or(f64::NAN));
                })?;
                writer.write_grid(&layout.fwi_file(stem), model.speed())?;
                writer.write_grid(&layout.fwi_intensity_file(stem), &speed_to_intensity(model.speed(), bounds))?;
                writer.write(&layout.objective_file(stem), objective_csv(&state.objective_history).as_bytes())?;
            }
        }
        Stage::Adapt => {
            let seed = config.fda_seed();
            let mut sources = Vec::with_capacity(stems.len());
            for stem in stems {
                let path = layout.fwi_intensity_file(stem);
                sources.push(load_any(&path)?);
                inputs.push(path);
            }
            let (h, w) = sources[0].dims();
            let (targets, target_names): (Vec<ImageGrid>, Vec<String>) = match &config.fda.target_dir {
                Some(dir) => {
                    let mut t = Vec::new();
                    let mut names = Vec::new();
                    for path in list_images(dir)? {
                        t.push(load_any(&path)?);
                        names.push(layout.relative(&path));
                        inputs.push(path);
                    }
                    (t, names)
                }
                None => {
                    let mut t = Vec::new();
                    let mut names = Vec::new();
                    for k in 0..config.fda.num_targets {
                        let grid = speckle_texture(h, w, seed.wrapping_add(k as u64))?;
                        let path = layout.targets.join(format!("speckle_{k:03}.f32"));
                        writer.write_grid(&path, &grid)?;
                        names.push(layout.relative(&path));
                        t.push(grid);
                    }
                    (t, names)
                }
            };
            let adapted = beta_sweep(
                &sources,
                &targets,
                &config.fda.betas,
                config.fda.mode,
                Pairing::RandomSeeded { seed },
                exec,
            )?;
            let mut records = Vec::with_capacity(adapted.len());
            for a in &adapted {
                let stem = &stems[a.source_index];
                let out = layout.adapted_file(stem, a.beta);
                writer.write_grid(&out, &a.image)?;
                records.push(AdaptRecord {
                    source: layout.relative(&layout.fwi_intensity_file(stem)),
                    target: target_names[a.target_index].clone(),
                    beta: a.beta,
                    seed,
                    mode: config.fda.mode,
                    output: layout.relative(&out),
                });
            }
            let json = serde_json::to_string_pretty(&records).expect("records serialize");
            writer.write(&layout.adapt_manifest_file(), json.as_bytes())?;
        }
        Stage::Metrics => {
            let mut pairs = Vec::new();
            for stem in stems {
                let truth = layout.intensity_file(stem);
                pairs.push((layout.fwi_intensity_file(stem), truth.clone()));
                for &b in &config.fda.betas {
                    pairs.push((layout.adapted_file(stem, b), truth.clone()));
                }
            }
            let mut table = report_metrics(&pairs, config.metrics.dynamic_range, exec)?;
            for row in &mut table.rows {
                row.recon = layout.relative(Path::new(&row.recon));
                row.truth = layout.relative(Path::new(&row.truth));
            }
            inputs.extend(pairs.into_iter().flat_map(|(a, b)| [a, b]).collect::<BTreeSet<_>>());
            writer.write(&layout.metrics_file(), &table.to_csv()?)?;
        }
    }
    Ok(inputs)
}
