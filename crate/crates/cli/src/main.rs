use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use humtrack::metrics::{summarize, write_report_csv, EvalRow, SuccessMode};
use humtrack::motion::{load_clip_with, save_clip, synth, LoadOptions, MotionClip, SkeletonSpec};
use humtrack::planner::{MotionLibrary, PlanRequest, Planner};
use humtrack::reward::{push_schedule, sample_dr};
use humtrack::rl::train::{write_log_csv_file, TrainConfig, Trainer};
use humtrack::runtime::{run_batch, track_clip, write_csv, write_jsonl, KinematicFollower, NeuralPolicy, Policy, TraceEvent, TrackOptions};
use humtrack::service::{self, ingest_dataset, reference_mismatches, write_manifest, Config, IngestOptions, Profile, SteerCommand, SteerMode};
use humtrack::token::checkpoint::Checkpoint;
use humtrack::token::{synced_samples, train_alignment, AlignTrainConfig, TokenConfig, TokenModel};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Humanoid motion tracking at desk scale: evaluation, planning, training
/// and the steering server.
#[derive(Parser)]
#[command(name = "humtrack", version)]
struct Cli {
    /// Base hyperparameter profile; overrides the one named in the config file.
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    /// TOML file merged over the profile.
    #[arg(long, global = true, env = "HUMTRACK_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, env = "HUMTRACK_LOG", default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Paper,
    Desk,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Desk => Profile::Desk,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Strict,
    Relaxed,
}

impl From<ModeArg> for SuccessMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Strict => SuccessMode::Strict,
            ModeArg::Relaxed => SuccessMode::Relaxed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Track a set of clips in closed loop and report success and errors.
    Eval(EvalArgs),
    /// Track one clip and export the tracked motion and the runtime trace.
    Track(TrackArgs),
    /// Plan one segment from a standing start for a steering command.
    Plan(PlanArgs),
    /// Train the token model's alignment networks on clips.
    TrainToken(TrainTokenArgs),
    /// Run PPO on the token policy.
    TrainRl(TrainRlArgs),
    /// Print domain-randomization draws as JSON lines.
    SampleDr(SampleDrArgs),
    /// Run the steering server.
    Serve(ServeArgs),
    /// Validate a clip directory and write its manifest.
    Ingest(IngestArgs),
    /// Write synthetic demo clips.
    Synth(SynthArgs),
    /// Print the effective configuration.
    ShowConfig,
}

#[derive(Args)]
struct PolicyArgs {
    /// Token-model checkpoint; the kinematic follower is used without one.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Check the profile against the reference hyperparameter values and exit.
    #[arg(long)]
    self_test: bool,
    /// Clip files; a synthetic suite is used when none are given.
    clips: Vec<PathBuf>,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, value_enum, default_value = "strict")]
    mode: ModeArg,
    /// Per-clip CSV report.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    threads: usize,
}

#[derive(Args)]
struct TrackArgs {
    clip: PathBuf,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, value_enum, default_value = "strict")]
    mode: ModeArg,
    /// Stop at the first failing frame.
    #[arg(long)]
    early_stop: bool,
    /// Apply one domain-randomization draw and its push schedule.
    #[arg(long)]
    dr: bool,
    /// Tracked motion output (`.mclp` or `.jsonl`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Runtime trace output; `.csv` for CSV, JSON lines otherwise.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long, value_enum, default_value = "walk")]
    mode: SteerModeArg,
    #[arg(long, default_value_t = 1.0)]
    velocity: f64,
    /// Compass direction, degrees.
    #[arg(long, default_value_t = 0.0)]
    direction: f64,
    #[arg(long)]
    style: Option<String>,
    #[arg(long, default_value_t = 0.8)]
    height: f64,
    /// Planned segment output (`.mclp` or `.jsonl`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SteerModeArg {
    Walk,
    Run,
    Crawl,
    Squat,
    Kneel,
    Box,
}

impl From<SteerModeArg> for SteerMode {
    fn from(m: SteerModeArg) -> Self {
        match m {
            SteerModeArg::Walk => SteerMode::Walk,
            SteerModeArg::Run => SteerMode::Run,
            SteerModeArg::Crawl => SteerMode::Crawl,
            SteerModeArg::Squat => SteerMode::Squat,
            SteerModeArg::Kneel => SteerMode::Kneel,
            SteerModeArg::Box => SteerMode::Box,
        }
    }
}

#[derive(Args)]
struct TrainTokenArgs {
    /// Clip files; synthetic clips are used when none are given.
    clips: Vec<PathBuf>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Seconds between training samples within a clip.
    #[arg(long, default_value_t = 0.1)]
    stride: f64,
    #[arg(long, default_value = "token.ckpt")]
    out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct TrainRlArgs {
    clips: Vec<PathBuf>,
    /// Starting checkpoint; a fresh model otherwise.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    /// Train under domain randomization.
    #[arg(long)]
    dr: bool,
    #[arg(long, default_value = "policy.ckpt")]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct SampleDrArgs {
    #[arg(long, default_value_t = 5)]
    count: usize,
    /// Episode length for the push schedule, seconds.
    #[arg(long, default_value_t = 20.0)]
    episode: f64,
}

#[derive(Args)]
struct ServeArgs {
    /// Stop after this many seconds; runs until killed otherwise.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct IngestArgs {
    dir: PathBuf,
    /// Resample clips recorded at other rates to 50 Hz.
    #[arg(long)]
    resample: bool,
    /// Only report; do not write manifest.json.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct SynthArgs {
    dir: PathBuf,
    /// Write JSON-lines clips instead of binary ones.
    #[arg(long)]
    text: bool,
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp_millis().init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref(), cli.profile.map(Profile::from))?;
    let seed = cli.seed;
    match cli.command {
        Command::Eval(a) => eval(&cfg, a),
        Command::Track(a) => track(&cfg, a, seed),
        Command::Plan(a) => plan(&cfg, a, seed),
        Command::TrainToken(a) => train_token(&cfg, a, seed),
        Command::TrainRl(a) => train_rl(&cfg, a, seed),
        Command::SampleDr(a) => sample(&cfg, a, seed),
        Command::Serve(a) => serve(&cfg, a, seed),
        Command::Ingest(a) => ingest(&cfg, a),
        Command::Synth(a) => write_synth(&cfg, a),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml_string());
            Ok(())
        }
    }
}

fn print_line(line: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{line}") {
        // reader went away (`| head`)
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    print_line(&serde_json::to_string_pretty(value)?)
}

fn load_clips(paths: &[PathBuf], skeleton: &SkeletonSpec) -> Result<Vec<MotionClip>> {
    let opts = LoadOptions { expected_skeleton: Some(skeleton), resample: true };
    paths.iter().map(|p| load_clip_with(p, &opts).with_context(|| format!("loading {}", p.display()))).collect()
}

/// Slow clips the kinematic follower can track.
fn synthetic_suite(skeleton: &Arc<SkeletonSpec>) -> Vec<MotionClip> {
    let mut out = Vec::new();
    for (i, (speed, amp, heading)) in [(0.3, 0.2, 0.0), (0.4, 0.25, 1.0), (0.5, 0.2, -2.0), (0.6, 0.3, 2.5)].into_iter().enumerate() {
        let mut c = synth::wave_with_heading(skeleton.clone(), 6.0, speed, amp, heading, 0.2);
        c.name = format!("wave_{i:02}");
        out.push(c);
    }
    let mut idle = synth::idle(skeleton.clone(), 4.0);
    idle.name = "idle_00".into();
    out.push(idle);
    out
}

fn make_policy(args: &PolicyArgs, skeleton: &SkeletonSpec) -> Result<Box<dyn Policy>> {
    Ok(match &args.checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            Box::new(NeuralPolicy::new(TokenModel::from_checkpoint(&ck)?, skeleton))
        }
        None => Box::new(KinematicFollower),
    })
}

fn eval(cfg: &Config, a: EvalArgs) -> Result<()> {
    if a.self_test {
        let bad = reference_mismatches(cfg);
        for m in &bad {
            print_line(&format!("MISMATCH {m}"))?;
        }
        if !bad.is_empty() {
            bail!("{} values differ from the reference hyperparameters", bad.len());
        }
        print_line("all reference hyperparameters match")?;
        return Ok(());
    }
    let skeleton = cfg.load_skeleton()?;
    let clips = if a.clips.is_empty() { synthetic_suite(&skeleton) } else { load_clips(&a.clips, &skeleton)? };
    let mode = SuccessMode::from(a.mode);
    let results = run_batch(clips.len(), a.threads, |i| -> Result<EvalRow> {
        let policy = make_policy(&a.policy, &skeleton)?;
        let out = track_clip(&clips[i], policy, &TrackOptions { mode, ..Default::default() })?;
        if let Some(reason) = &out.aborted {
            warn!("{} aborted: {reason}", clips[i].name);
        }
        let r = out.report;
        Ok(EvalRow {
            name: clips[i].name.clone(),
            success: r.success && out.aborted.is_none(),
            failure_time: r.failure_time,
            mpjpe_mm: r.mpjpe_mm,
            e_vel_mm_per_frame: r.e_vel_mm_per_frame,
            e_acc_mm_per_frame2: r.e_acc_mm_per_frame2,
        })
    })?;
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = summarize(&rows);
    if let Some(path) = &a.report {
        write_report_csv(path, &rows, &summary)?;
    }
    print_json(&serde_json::json!({ "rows": rows, "summary": summary }))
}

fn write_trace(path: &Path, trace: &[TraceEvent]) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    if path.extension().is_some_and(|e| e == "csv") {
        write_csv(trace, f)?;
    } else {
        write_jsonl(trace, f)?;
    }
    Ok(())
}

fn track(cfg: &Config, a: TrackArgs, seed: u64) -> Result<()> {
    let skeleton = cfg.load_skeleton()?;
    let clip = load_clips(std::slice::from_ref(&a.clip), &skeleton)?.remove(0);
    let mut options = TrackOptions { mode: a.mode.into(), early_stop: a.early_stop, ..Default::default() };
    if a.dr {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        options.dr = Some(sample_dr(&cfg.dr, skeleton.joint_count(), &mut rng));
        options.pushes = push_schedule(&cfg.dr, clip.duration(), &mut rng);
    }
    let out = track_clip(&clip, make_policy(&a.policy, &skeleton)?, &options)?;
    if let Some(path) = &a.out {
        save_clip(&out.actual, path)?;
    }
    if let Some(path) = &a.trace {
        write_trace(path, &out.trace)?;
    }
    print_json(&serde_json::json!({ "report": out.report, "aborted": out.aborted, "frames": out.actual.len() }))
}

fn planner_for(cfg: &Config, seed: u64) -> Result<Planner> {
    let skeleton = cfg.load_skeleton()?;
    let library = match cfg.library_dir() {
        Some(dir) => MotionLibrary::load(dir)?.0,
        None => service::demo_library(&skeleton),
    };
    Ok(Planner::with_retrieval(cfg.planner.params.clone(), skeleton, library, seed)?)
}

fn plan(cfg: &Config, a: PlanArgs, seed: u64) -> Result<()> {
    let planner = planner_for(cfg, seed)?;
    let steer = SteerCommand { mode: a.mode.into(), style: a.style, height: a.height, ..SteerCommand::navigate(1, a.velocity, a.direction) };
    let (command, clamped) = steer.to_plan_command().map_err(anyhow::Error::msg)?;
    if clamped {
        warn!("command clamped into its envelope: {command:?}");
    }
    let context = synth::idle(planner.skeleton.clone(), 0.1).frames[..4].to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seg = planner.plan(&PlanRequest { context, command, seq: 1 }, &mut rng)?;
    if let Some(path) = &a.out {
        save_clip(&seg.clip, path)?;
    }
    print_json(&serde_json::json!({
        "duration": seg.duration,
        "frames": seg.clip.len(),
        "tokens": seg.tokens.len(),
        "target": seg.target,
        "anchor": seg.anchor,
        "clamped": seg.clamped || clamped,
    }))
}

fn training_clips(paths: &[PathBuf], skeleton: &Arc<SkeletonSpec>) -> Result<Vec<MotionClip>> {
    if paths.is_empty() {
        Ok(synthetic_suite(skeleton))
    } else {
        load_clips(paths, skeleton)
    }
}

fn token_config(cfg: &Config, skeleton: &SkeletonSpec) -> TokenConfig {
    let mut tc = TokenConfig::for_skeleton(skeleton, cfg.token.nets);
    tc.fsq = cfg.token.fsq;
    tc.init_noise_std = cfg.ppo.init_noise_std;
    tc.std_min = cfg.ppo.std_min;
    tc.std_max = cfg.ppo.std_max;
    tc
}

fn train_token(cfg: &Config, a: TrainTokenArgs, seed: u64) -> Result<()> {
    let skeleton = cfg.load_skeleton()?;
    let clips = training_clips(&a.clips, &skeleton)?;
    let mut data = Vec::new();
    for c in &clips {
        // leave room for the longest command window
        let usable = c.duration() - 1.0;
        let n = (usable / a.stride).floor().max(0.0) as usize;
        let times: Vec<f64> = (0..=n).map(|k| c.start_time() + k as f64 * a.stride).collect();
        data.extend(synced_samples(c, &times)?);
    }
    if data.is_empty() {
        bail!("clips are too short to sample");
    }
    let mut model = TokenModel::new(token_config(cfg, &skeleton), seed)?;
    let log = train_alignment(&mut model, &data, &AlignTrainConfig { epochs: a.epochs, lr: a.lr, seed, ..Default::default() })?;
    if let Some(path) = &a.log {
        let mut w = csv::Writer::from_path(path)?;
        for row in &log {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    model.to_checkpoint().save(&a.out)?;
    let (first, last) = (log.first().expect("initial row"), log.last().expect("initial row"));
    info!("alignment loss {:.5} -> {:.5}", first.total, last.total);
    print_json(&serde_json::json!({ "samples": data.len(), "initial": first, "final": last, "checkpoint": a.out }))
}

fn train_rl(cfg: &Config, a: TrainRlArgs, seed: u64) -> Result<()> {
    let skeleton = cfg.load_skeleton()?;
    let clips = training_clips(&a.clips, &skeleton)?;
    let model = match &a.init {
        Some(p) => TokenModel::from_checkpoint(&Checkpoint::load(p)?)?,
        None => TokenModel::new(token_config(cfg, &skeleton), seed)?,
    };
    let tc = TrainConfig {
        ppo: cfg.ppo.clone(),
        sampler: cfg.sampler.clone(),
        reward: cfg.reward,
        dr: a.dr.then(|| cfg.dr.clone()),
        iterations: a.iterations,
        seed,
        ..Default::default()
    };
    let mut trainer = Trainer::new(tc, model, clips)?;
    let before = trainer.evaluate(2)?;
    let rows = trainer.train()?;
    let after = trainer.evaluate(2)?;
    if let Some(path) = &a.log {
        write_log_csv_file(&rows, path)?;
    }
    trainer.model.to_checkpoint().save(&a.out)?;
    print_json(&serde_json::json!({ "iterations": rows.len(), "eval_reward_before": before, "eval_reward_after": after, "checkpoint": a.out }))
}

fn sample(cfg: &Config, a: SampleDrArgs, seed: u64) -> Result<()> {
    let skeleton = cfg.load_skeleton()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..a.count {
        let draw = sample_dr(&cfg.dr, skeleton.joint_count(), &mut rng);
        let pushes = push_schedule(&cfg.dr, a.episode, &mut rng);
        print_line(&serde_json::json!({ "physics": draw, "pushes": pushes }).to_string())?;
    }
    Ok(())
}

fn serve(cfg: &Config, a: ServeArgs, seed: u64) -> Result<()> {
    static STOP: AtomicBool = AtomicBool::new(false);
    if let Some(d) = a.duration {
        std::thread::spawn(move || {
            std::thread::sleep(std::time::Duration::from_secs_f64(d.max(0.0)));
            STOP.store(true, std::sync::atomic::Ordering::Release);
        });
    }
    let stats = service::serve(cfg, seed, &STOP)?;
    print_json(&stats)
}

fn ingest(cfg: &Config, a: IngestArgs) -> Result<()> {
    let skeleton = cfg.load_skeleton()?;
    let report = ingest_dataset(&a.dir, &IngestOptions { expected_skeleton: Some(&skeleton), resample: a.resample, skill_hop: 5 })?;
    for r in &report.rejected {
        warn!("rejected {}: {}", r.file, r.reason);
    }
    if !a.dry_run {
        let path = write_manifest(&a.dir, &report.manifest)?;
        info!("wrote {}", path.display());
    }
    print_json(&serde_json::json!({ "manifest": report.manifest, "rejected": report.rejected, "warnings": report.warnings }))
}

fn write_synth(cfg: &Config, a: SynthArgs) -> Result<()> {
    let skeleton = cfg.load_skeleton()?;
    std::fs::create_dir_all(&a.dir)?;
    let ext = if a.text { "jsonl" } else { "mclp" };
    let mut clips = vec![
        ("walk_01", synth::wave(skeleton.clone(), 6.0, 1.0, 0.3)),
        ("walk_02", synth::wave(skeleton.clone(), 6.0, 0.5, 0.2)),
        ("run_01", synth::wave(skeleton.clone(), 6.0, 3.0, 0.4)),
        ("stand_01", synth::idle(skeleton.clone(), 4.0)),
    ];
    if skeleton.name == SkeletonSpec::desk_7dof().name {
        clips.push(("squat_01", synth::desk_squat(skeleton.clone(), 4.0, 1.0)));
    }
    let mut written = Vec::new();
    for (name, mut clip) in clips {
        clip.name = name.into();
        let path = a.dir.join(format!("{name}.{ext}"));
        save_clip(&clip, &path)?;
        written.push(path);
    }
    print_json(&written)
}
