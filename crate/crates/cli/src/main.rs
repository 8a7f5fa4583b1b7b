//! `wavesono`: command-line front end for the X-ray to ultrasound pipeline.
//!
//! Every subcommand reads its defaults from the pipeline config given with
//! `--config`; flags override individual fields.
//!
//! Exit status: 0 on success, 2 for invalid input or configuration, 3 when
//! the numerics fail (CFL violation, blow-up, non-finite objective).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use wavesono::fourier::{beta_sweep, Pairing, SwapMode};
use wavesono::fwi::{invert_with, make_initial_model, FwiProblem};
use wavesono::io::{save_image, ImageFormat};
use wavesono::losses::{LossReport, LossWeights, PerceptualSlot};
use wavesono::phantom::{phantom, PhantomKind};
use wavesono::pipeline::{
    beta_label, list_images, load_any, mam2sos, objective_csv, report_metrics, run_pipeline, AdaptRecord,
    PipelineConfig, MANIFEST_FILE,
};
use wavesono::tissue::TissueTable;
use wavesono::wave::{AcousticModel, AcquisitionGeometry, ArrayKind, ShotRecord, WaveSolver};
use wavesono::{Execution, ImageGrid};

const EXIT_INVALID: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "wavesono", version, about = "X-ray to ultrasound simulation, inversion and adaptation")]
struct Cli {
    /// Pipeline config JSON supplying defaults for every subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run batch loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ArrayArg {
    Linear,
    Curvilinear,
}

impl From<ArrayArg> for ArrayKind {
    fn from(a: ArrayArg) -> Self {
        match a {
            ArrayArg::Linear => ArrayKind::Linear,
            ArrayArg::Curvilinear => ArrayKind::Curvilinear,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert intensity images to speed-of-sound maps.
    Mam2sos {
        /// Image file or directory of images.
        input: PathBuf,
        /// Output directory for `<stem>.f32` speed maps.
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_name = "FILE")]
        tissue_table: Option<PathBuf>,
        /// Intensity-to-HU bounds as `lo,hi`.
        #[arg(long, value_name = "LO,HI", value_parser = parse_pair)]
        hu_bounds: Option<(f64, f64)>,
    },
    /// Simulate one shot per element over a speed map.
    Simulate {
        /// Speed-of-sound map in m/s.
        model: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        elements: Option<usize>,
        #[arg(long, value_enum)]
        array: Option<ArrayArg>,
        #[arg(long, value_name = "HZ")]
        frequency: Option<f64>,
        /// Grid spacing in metres.
        #[arg(long)]
        dx: Option<f64>,
        /// Also write the wavefield of this shot, cropped to the model.
        #[arg(long, value_name = "SHOT")]
        dump_wavefield: Option<usize>,
        /// Keep every n-th stored time step of the dump.
        #[arg(long, default_value_t = 10)]
        dump_every: usize,
    },
    /// Recover a speed map from recorded shots.
    Invert {
        #[arg(long)]
        shots: PathBuf,
        #[arg(long)]
        geometry: PathBuf,
        /// Speed map blurred into the starting model.
        #[arg(long)]
        init: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        blur_sigma: Option<f64>,
        #[arg(long)]
        dx: Option<f64>,
    },
    /// Swap low-frequency spectra of sources with paired targets.
    Adapt {
        /// Directory of source images.
        sources: PathBuf,
        /// Directory of target-domain images.
        targets: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Band fraction; repeat for several.
        #[arg(long)]
        beta: Vec<f64>,
        #[arg(long)]
        mode: Option<SwapMode>,
    },
    /// Print the loss terms for one image pair as JSON.
    Losses {
        recon: PathBuf,
        truth: PathBuf,
        #[arg(long, default_value = "0,10,1")]
        weights: LossWeights,
        #[arg(long, default_value = "pyramid")]
        slot: PerceptualSlot,
        #[arg(long, default_value_t = 0.0)]
        adversarial: f64,
    },
    /// MSE, PSNR and SSIM between reconstructions and references.
    Metrics {
        /// Image file, or directory paired with `truth` by file stem.
        recon: PathBuf,
        truth: PathBuf,
        /// CSV destination; stdout when absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dynamic_range: Option<f64>,
    },
    /// Run all enabled stages of the config.
    Pipeline {
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Write synthetic phantoms.
    Phantom {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value = "breast-like")]
        kind: PhantomKind,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value = "f32")]
        format: ImageFormat,
    },
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `lo,hi`")?;
    let a = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let b = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((a, b))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<wavesono::Error>())
        .any(wavesono::Error::is_numerical);
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };

    match cli.command {
        Command::Mam2sos {
            input,
            out,
            tissue_table,
            hu_bounds,
        } => {
            let table = match tissue_table.or(config.tissue_table.clone()) {
                Some(path) => TissueTable::load(path)?,
                None => TissueTable::default(),
            };
            let bounds = hu_bounds.unwrap_or(config.hu_bounds);
            let files = if input.is_dir() {
                list_images(&input)?
            } else {
                vec![input]
            };
            if files.is_empty() {
                bail!("no images to convert");
            }
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for file in files {
                let sos = mam2sos(&load_any(&file)?, &table, bounds)?;
                save_image(&sos, out.join(format!("{}.f32", stem(&file)?)), ImageFormat::F32Raw)?;
            }
        }
        Command::Simulate {
            model,
            out,
            elements,
            array,
            frequency,
            dx,
            dump_wavefield,
            dump_every,
        } => {
            let mut transducer = config.transducer.clone();
            if let Some(n) = elements {
                transducer.num_elements = n;
            }
            if let Some(a) = array {
                transducer.array_kind = a.into();
            }
            if let Some(f) = frequency {
                transducer.frequency_hz = f;
            }
            if dump_every == 0 {
                bail!("--dump-every must be at least 1");
            }
            let dx = dx.unwrap_or(config.grid_spacing_m);
            let speed = AcousticModel::new(load_any(&model)?, dx)?;
            let (lo, hi) = config.fwi.model_bounds;
            let bounds = (speed.min_speed().min(lo), speed.max_speed().max(hi));
            let geometry = transducer.build(speed.dims(), dx, bounds)?;
            let solver = WaveSolver::new(&speed, &geometry, &config.solver)?;
            let record = solver.simulate(exec)?;

            let name = stem(&model)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            save_image(&record.to_grid(), out.join(format!("{name}.f32")), ImageFormat::F32Raw)?;
            let json = serde_json::to_string_pretty(&geometry)?;
            fs::write(out.join(format!("{name}_geometry.json")), json)?;

            if let Some(shot) = dump_wavefield {
                if shot >= geometry.num_shots() {
                    bail!("shot {shot} out of range (0..{})", geometry.num_shots());
                }
                let dir = out.join(format!("{name}_wavefield"));
                fs::create_dir_all(&dir)?;
                let snapshots = solver.forward(shot, true)?.snapshots.unwrap_or_default();
                for snap in snapshots.iter().step_by(dump_every) {
                    let field = solver.physical_region(&snap.field);
                    save_image(&field, dir.join(format!("t{:05}.f32", snap.time_index)), ImageFormat::F32Raw)?;
                }
            }
        }
        Command::Invert {
            shots,
            geometry,
            init,
            out,
            iterations,
            step_size,
            blur_sigma,
            dx,
        } => {
            let mut fwi = config.fwi.clone();
            if let Some(n) = iterations {
                fwi.num_iterations = n;
            }
            if let Some(s) = step_size {
                fwi.step_size = s;
            }
            if let Some(s) = blur_sigma {
                fwi.init_blur_sigma = s;
            }
            fwi.validate()?;
            let dx = dx.unwrap_or(config.grid_spacing_m);
            let text = fs::read_to_string(&geometry).with_context(|| format!("reading {}", geometry.display()))?;
            let geometry: AcquisitionGeometry =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", geometry.display()))?;
            let observed = ShotRecord::from_grid(&load_any(&shots)?, geometry.num_shots(), geometry.dt)?;
            let start = make_initial_model(&load_any(&init)?, fwi.init_blur_sigma, dx)?;
            let problem = FwiProblem::new(geometry, observed)
                .with_settings(config.solver.clone())
                .with_execution(exec);
            let (model, state) = invert_with(&problem, &fwi, start, |s| {
                log::info!(
                    "iteration {} objective {:e}",
                    s.iteration,
                    s.objective_history.last().copied().unwrap_or(f64::NAN)
                );
            })?;
            let name = stem(&shots)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            save_image(model.speed(), out.join(format!("{name}.f32")), ImageFormat::F32Raw)?;
            fs::write(out.join(format!("{name}_objective.csv")), objective_csv(&state.objective_history))?;
        }
        Command::Adapt {
            sources,
            targets,
            out,
            beta,
            mode,
        } => {
            let betas = if beta.is_empty() { config.fda.betas.clone() } else { beta };
            for &b in &betas {
                if !(0.0..=1.0).contains(&b) {
                    bail!("beta {b} outside [0, 1]");
                }
            }
            let mode = mode.unwrap_or(config.fda.mode);
            let seed = config.fda_seed();
            let source_files = list_images(&sources)?;
            let target_files = list_images(&targets)?;
            if source_files.is_empty() || target_files.is_empty() {
                bail!("source and target directories must both hold images");
            }
            let src = load_all(&source_files)?;
            let tgt = load_all(&target_files)?;
            let adapted = beta_sweep(&src, &tgt, &betas, mode, Pairing::RandomSeeded { seed }, exec)?;

            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut records = Vec::with_capacity(adapted.len());
            for a in &adapted {
                let source = &source_files[a.source_index];
                let path = out.join(format!("{}_{}.f32", stem(source)?, beta_label(a.beta)));
                save_image(&a.image, &path, ImageFormat::F32Raw)?;
                records.push(AdaptRecord {
                    source: source.display().to_string(),
                    target: target_files[a.target_index].display().to_string(),
                    beta: a.beta,
                    seed,
                    mode,
                    output: path.display().to_string(),
                });
            }
            fs::write(out.join("adapt_manifest.json"), serde_json::to_string_pretty(&records)?)?;
        }
        Command::Losses {
            recon,
            truth,
            weights,
            slot,
            adversarial,
        } => {
            let report = LossReport::compute(&load_any(&recon)?, &load_any(&truth)?, &weights, slot, adversarial)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Metrics {
            recon,
            truth,
            out,
            dynamic_range,
        } => {
            let pairs = metric_pairs(&recon, &truth)?;
            let range = dynamic_range.unwrap_or(config.metrics.dynamic_range);
            let table = report_metrics(&pairs, range, exec)?;
            let csv = table.to_csv()?;
            match out {
                Some(path) => fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{}", String::from_utf8(csv)?),
            }
        }
        Command::Pipeline { output_dir } => {
            if let Some(dir) = output_dir {
                config.output_dir = dir;
            }
            let manifest = run_pipeline(&config, exec)?;
            for stage in &manifest.stages {
                let state = if stage.ran { "ran" } else { "skipped" };
                println!("{:<9}{state:<8}{:>4} file(s) {:>8.2} s", stage.name, stage.outputs.len(), stage.wall_clock_s);
            }
            println!("manifest: {}", config.output_dir.join(MANIFEST_FILE).display());
        }
        Command::Phantom {
            out,
            kind,
            size,
            count,
            format,
        } => {
            if kind.is_speed() && format != ImageFormat::F32Raw {
                bail!("{kind} holds speeds in m/s; write it as f32");
            }
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for k in 0..count {
                let grid = phantom(kind, size, config.seed.wrapping_add(k as u64))?;
                save_image(&grid, out.join(format!("{kind}_{k:03}.{}", format.extension())), format)?;
            }
        }
    }
    Ok(())
}

fn stem(path: &Path) -> anyhow::Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .with_context(|| format!("cannot name {}", path.display()))
}

fn load_all(files: &[PathBuf]) -> anyhow::Result<Vec<ImageGrid>> {
    files.iter().map(|f| Ok(load_any(f)?)).collect()
}

fn metric_pairs(recon: &Path, truth: &Path) -> anyhow::Result<Vec<(PathBuf, PathBuf)>> {
    match (recon.is_dir(), truth.is_dir()) {
        (false, false) => Ok(vec![(recon.to_path_buf(), truth.to_path_buf())]),
        (true, true) => {
            let mut refs = BTreeMap::new();
            for path in list_images(truth)? {
                refs.insert(stem(&path)?, path);
            }
            let mut pairs = Vec::new();
            for path in list_images(recon)? {
                let name = stem(&path)?;
                let reference = refs
                    .get(&name)
                    .with_context(|| format!("no reference for {} in {}", path.display(), truth.display()))?;
                pairs.push((path, reference.clone()));
            }
            if pairs.is_empty() {
                bail!("{} holds no images", recon.display());
            }
            Ok(pairs)
        }
        _ => bail!("recon and truth must both be files or both be directories"),
    }
}
