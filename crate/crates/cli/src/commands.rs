//! Subcommand implementations.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use st3d::evalmot::{ablation_table, SimilaritySpec};
use st3d::image::Image;
use st3d::io::{ground_truth_records, read_jsonl_file, read_trajectories, write_jsonl_file, SolveLogRecord};
use st3d::optim::TemporalMode;
use st3d::pipeline::{anonymize, track_frames, TrackingRun};
use st3d::scenesim::{generate_scenario, render_frame, ScenarioSpec};
use st3d::tracker::FrameInput;
use st3d::{DenseCueFrame, StereoFrame};

use crate::config::{ExperimentConfig, SpatialMode};
use crate::error::{CliError, CliResult, ErrorKind};
use crate::plot::{bev_svg, trajectories_csv};

pub const GT_FILE: &str = "gt.jsonl";
pub const CUES_FILE: &str = "cues.jsonl";
pub const SCENARIO_FILE: &str = "scenario.toml";
pub const CONFIG_FILE: &str = "config.toml";
pub const HYP_FILE: &str = "hyp.jsonl";
pub const SOLVE_LOG_FILE: &str = "solve_log.jsonl";

pub fn image_path(dir: &Path, side: &str, frame: usize) -> PathBuf {
    dir.join("images").join(format!("{side}_{frame:06}.pgm"))
}

pub fn parse_temporal(s: &str) -> Result<TemporalMode, String> {
    match s {
        "repro" => Ok(TemporalMode::Repro),
        "coord" => Ok(TemporalMode::Coord),
        "none" => Ok(TemporalMode::None),
        _ => Err(format!("expected repro, coord or none, got {s:?}")),
    }
}

fn load_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn output_dir(flag: Option<PathBuf>, config: &ExperimentConfig) -> CliResult<PathBuf> {
    let dir = flag.or_else(|| config.output.clone()).ok_or_else(|| CliError::usage("no output directory: pass --out"))?;
    fs::create_dir_all(&dir).map_err(|e| CliError::from(e).context(dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::from(e).context(path.display()))
}

fn data<T>(path: &Path, r: st3d::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::data(e.to_string()).context(path.display()))
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip writing the stereo images.
    #[arg(long)]
    pub no_images: bool,
}

/// Generates a scenario, renders every frame and writes the artifacts.
pub fn simulate(args: SimulateArgs) -> CliResult<PathBuf> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let config = config.finalize()?;
    let out = output_dir(args.out, &config)?;
    let spec = config.scenario_spec()?;
    let scenario = generate_scenario(&spec, config.seed)?;

    if !args.no_images {
        fs::create_dir_all(out.join("images"))?;
    }
    let mut cues: Vec<DenseCueFrame> = Vec::new();
    for f in 0..scenario.frames {
        let (stereo, frame_cues) = render_frame(&scenario, f, &config.noise, &config.render)?;
        if !args.no_images {
            write(&image_path(&out, "left", f), stereo.left.to_pgm16())?;
            write(&image_path(&out, "right", f), stereo.right.to_pgm16())?;
        }
        cues.extend(frame_cues);
    }
    write_jsonl_file(&out.join(GT_FILE), &ground_truth_records(&scenario))?;
    write_jsonl_file(&out.join(CUES_FILE), &cues)?;
    write(&out.join(SCENARIO_FILE), spec.to_toml())?;
    write(&out.join(CONFIG_FILE), config.to_toml())?;
    println!("simulated {} frames, {} objects, {} cue records -> {}", scenario.frames, scenario.objects.len(), cues.len(), out.display());
    Ok(out)
}

#[derive(Debug, Clone, Args)]
pub struct TrackArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Experiment config; defaults to the scenario's own config.toml.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_temporal)]
    pub temporal: Option<TemporalMode>,
    #[arg(long, value_enum)]
    pub spatial: Option<SpatialMode>,
    /// Exit with code 4 when any solve fails to converge.
    #[arg(long)]
    pub strict: bool,
}

fn read_image(path: &Path) -> CliResult<Image> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    data(path, Image::from_pgm(&bytes))
}

/// Tracks the cue records of a simulated scenario directory.
pub fn track(args: TrackArgs) -> CliResult<TrackingRun> {
    let dir = &args.scenario;
    let default_config = dir.join(CONFIG_FILE);
    let config_path = args.config.clone().or_else(|| default_config.exists().then_some(default_config));
    let mut config = load_config(config_path.as_deref())?;
    if let Some(t) = args.temporal {
        config.temporal = t;
    }
    if let Some(s) = args.spatial {
        config.spatial = s;
    }
    let config = config.finalize()?;
    let out = output_dir(args.out, &config)?;

    let spec_path = dir.join(SCENARIO_FILE);
    let spec_text = fs::read_to_string(&spec_path).map_err(|e| CliError::data(format!("{}: {e}", spec_path.display())))?;
    let spec = data(&spec_path, ScenarioSpec::from_toml(&spec_text))?;
    let rig = data(&spec_path, spec.camera.rig())?;

    let cues_path = dir.join(CUES_FILE);
    let mut by_frame: BTreeMap<usize, Vec<DenseCueFrame>> = BTreeMap::new();
    for c in data(&cues_path, read_jsonl_file::<DenseCueFrame>(&cues_path))? {
        if c.frame >= spec.frames {
            return Err(CliError::data(format!("cue record for frame {} beyond {} frames", c.frame, spec.frames)).context(cues_path.display()));
        }
        by_frame.entry(c.frame).or_default().push(c);
    }

    let frames = (0..spec.frames).map(|f| {
        let left = read_image(&image_path(dir, "left", f))?;
        let right = read_image(&image_path(dir, "right", f))?;
        let detections = anonymize(by_frame.remove(&f).unwrap_or_default());
        Ok(FrameInput { frame: f, stereo: Arc::new(StereoFrame { frame: f, left, right }), detections })
    });
    let mut failure = None;
    let frames = frames.map_while(|r: CliResult<FrameInput>| match r {
        Ok(input) => Some(Ok(input)),
        Err(e) => {
            failure = Some(e);
            None
        }
    });
    let run = track_frames(rig, config.tracker_config(), frames);
    if let Some(e) = failure {
        return Err(e);
    }
    let run = run?;

    write_jsonl_file(&out.join(HYP_FILE), &run.trajectories)?;
    write_jsonl_file::<SolveLogRecord>(&out.join(SOLVE_LOG_FILE), &run.solve_log)?;
    write(&out.join(CONFIG_FILE), config.to_toml())?;
    let failed = run.solve_log.iter().filter(|r| !r.report.converged).count();
    println!(
        "tracked {} frames: {} boxes, {} solves, {} not converged -> {}",
        spec.frames,
        run.trajectories.len(),
        run.solve_log.len(),
        failed,
        out.display()
    );
    if args.strict && failed > 0 {
        return Err(CliError {
            kind: ErrorKind::NonConvergence,
            message: format!("{failed} of {} solves did not converge", run.solve_log.len()),
        });
    }
    Ok(run)
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Ground-truth trajectories (JSON lines).
    #[arg(long)]
    pub gt: PathBuf,
    /// Hypothesis trajectories as `[NAME=]PATH`; repeatable.
    #[arg(long, required = true)]
    pub hyp: Vec<String>,
    /// 3D IoU threshold; repeatable.
    #[arg(long)]
    pub iou3d: Vec<f64>,
    /// Centroid distance threshold in meters; repeatable.
    #[arg(long)]
    pub distance: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated run names whose MOTA must strictly increase.
    #[arg(long, value_delimiter = ',')]
    pub expect_order: Vec<String>,
}

/// Result of `eval`: the rendered table and one PASS/FAIL line per ordering check.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub table: st3d::evalmot::AblationTable,
    pub orderings: Vec<(String, bool)>,
}

fn parse_hyp(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => (arg.to_string(), PathBuf::from(arg)),
    }
}

pub fn eval(args: EvalArgs) -> CliResult<EvalOutput> {
    let mut sims: Vec<SimilaritySpec> = args.iou3d.iter().map(|t| SimilaritySpec::iou3d(*t)).collect();
    sims.extend(args.distance.iter().map(|m| SimilaritySpec::distance(*m)));
    if sims.is_empty() {
        sims.push(SimilaritySpec::iou3d(0.5));
    }
    for s in &sims {
        s.validate().map_err(|e| CliError::usage(e.to_string()))?;
    }
    let mut names = HashSet::new();
    let hyps: Vec<(String, PathBuf)> = args.hyp.iter().map(|h| parse_hyp(h)).collect();
    for (name, _) in &hyps {
        if !names.insert(name.clone()) {
            return Err(CliError::usage(format!("duplicate run name {name:?}")));
        }
    }
    for name in &args.expect_order {
        if !names.contains(name) {
            return Err(CliError::usage(format!("--expect-order names unknown run {name:?}")));
        }
    }

    let gt = data(&args.gt, read_trajectories(&args.gt))?;
    let mut runs = Vec::new();
    for (name, path) in hyps {
        runs.push((name, data(&path, read_trajectories(&path))?));
    }
    let table = ablation_table(&runs, &gt, &sims).map_err(|e| CliError::data(e.to_string()))?;

    let mut orderings = Vec::new();
    if args.expect_order.len() >= 2 {
        let order: Vec<&str> = args.expect_order.iter().map(String::as_str).collect();
        for s in &sims {
            let values: Vec<String> = order.iter().map(|r| format!("{r} {:.2}", table.mota(r, s).unwrap_or(f64::NAN))).collect();
            let ok = table.strictly_increasing(&order, s);
            orderings.push((format!("ordering {}: {} {}", s.label(), values.join(" < "), if ok { "PASS" } else { "FAIL" }), ok));
        }
    }

    let mut text = table.to_text();
    for (line, _) in &orderings {
        text.push_str(line);
        text.push('\n');
    }
    print!("{text}");
    if let Some(out) = args.out {
        fs::create_dir_all(&out).map_err(|e| CliError::from(e).context(out.display()))?;
        write(&out.join("report.csv"), table.to_csv())?;
        write(&out.join("report.txt"), &text)?;
    }
    Ok(EvalOutput { table, orderings })
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub hyp: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes `bev.svg` and `trajectories.csv`.
pub fn plot(args: PlotArgs) -> CliResult<()> {
    let gt = data(&args.gt, read_trajectories(&args.gt))?;
    let hyp = match &args.hyp {
        Some(p) => data(p, read_trajectories(p))?,
        None => Vec::new(),
    };
    fs::create_dir_all(&args.out).map_err(|e| CliError::from(e).context(args.out.display()))?;
    write(&args.out.join("bev.svg"), bev_svg(&gt, &hyp))?;
    write(&args.out.join("trajectories.csv"), trajectories_csv(&gt, &hyp))?;
    println!("plotted {} gt and {} hyp boxes -> {}", gt.len(), hyp.len(), args.out.display());
    Ok(())
}
