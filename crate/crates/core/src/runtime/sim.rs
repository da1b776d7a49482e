use std::sync::Arc;

use rayon::prelude::*;

use super::clock::{default_tasks, seconds, Scheduler, TaskId, TaskSpec};
use super::plant::{Plant, PlantConfig, RootTarget};
use super::policy::Policy;
use super::tasks::{Bus, CommandMsg, InputTask, PlannerTask, PolicyTask, Reference, StreamerTask};
use super::trace::TraceEvent;
use super::RuntimeError;
use crate::metrics::{check_success, frame_failure, FailureReason, SuccessMode, TrackingReport};
use crate::motion::{MotionClip, PoseFrame};
use crate::planner::Planner;
use crate::reward::{DrSample, PushEvent};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub tasks: Vec<TaskSpec>,
    /// Run the planner right after the input stage forwards a new command,
    /// in addition to its periodic ticks.
    pub immediate_replan: bool,
    /// Record a `Tick` event for every task activation.
    pub trace_ticks: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { tasks: default_tasks(), immediate_replan: false, trace_ticks: true }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        for id in TaskId::ALL {
            if self.tasks.iter().filter(|t| t.id == id).count() != 1 {
                return Err(RuntimeError::Config(format!("need exactly one {} task", id.name())));
            }
        }
        if self.tasks.iter().any(|t| t.period == 0) {
            return Err(RuntimeError::Config("task period must be positive".into()));
        }
        Ok(())
    }

    fn period(&self, id: TaskId) -> u64 {
        self.tasks.iter().find(|t| t.id == id).map(|t| t.period).expect("validated")
    }
}

/// An external command published at `tick`, after every task due then.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedCommand {
    pub tick: u64,
    pub msg: CommandMsg,
}

/// The task graph driven by a single-threaded discrete-event loop.
pub struct Simulation {
    pub config: SimConfig,
    pub bus: Arc<Bus>,
    pub streamer: StreamerTask,
    pub input: InputTask,
    pub policy: PolicyTask,
    pub planner: Option<PlannerTask>,
    pub trace: Vec<TraceEvent>,
    /// First tick not yet simulated.
    pub now: u64,
}

impl Simulation {
    pub fn new(config: SimConfig, plant: Plant, policy: Box<dyn Policy>, reference: Reference, t0: f64, planner: Option<PlannerTask>) -> Result<Self, RuntimeError> {
        config.validate()?;
        let dt = seconds(config.period(TaskId::Streamer));
        let root = RootTarget::of(&plant.frame());
        Ok(Self {
            input: InputTask::new(config.immediate_replan),
            streamer: StreamerTask::new(plant, dt, root),
            policy: PolicyTask::new(policy, reference, t0),
            planner,
            bus: Bus::new(),
            trace: Vec::new(),
            now: 0,
            config,
        })
    }

    /// Simulate `[now, end)`. Script entries before `end` that are not yet
    /// published are published at their tick (or at `now` if earlier).
    pub fn run_until(&mut self, end: u64, script: &[ScriptedCommand]) -> Result<(), RuntimeError> {
        let mut pending: Vec<&ScriptedCommand> = script.iter().filter(|c| c.tick >= self.now && c.tick < end).collect();
        pending.sort_by_key(|c| c.tick);
        let mut pending = pending.into_iter().peekable();
        let events: Vec<(u64, usize)> = Scheduler::starting_at(&self.config.tasks, self.now, end).collect();
        for (tick, i) in events {
            while let Some(c) = pending.next_if(|c| c.tick < tick) {
                self.publish_external(c);
            }
            let id = self.config.tasks[i].id;
            if self.config.trace_ticks {
                self.trace.push(TraceEvent::Tick { tick, task: id });
            }
            if let Err(reason) = self.run_task(id, tick) {
                self.trace.push(TraceEvent::Abort { tick, task: id, reason: reason.clone() });
                self.now = tick;
                return Err(RuntimeError::Aborted { tick, task: id, reason });
            }
        }
        for c in pending {
            self.publish_external(c);
        }
        self.now = end;
        Ok(())
    }

    fn publish_external(&mut self, c: &ScriptedCommand) {
        let seq = self.bus.external.publish(c.msg.clone(), c.tick);
        self.trace.push(TraceEvent::Command { tick: c.tick, cmd_seq: seq });
    }

    fn run_task(&mut self, id: TaskId, tick: u64) -> Result<(), String> {
        let bus = &*self.bus;
        match id {
            TaskId::Streamer => self.streamer.tick(tick, bus, &mut self.trace),
            TaskId::Input => {
                self.input.tick(tick, bus, &mut self.trace);
                if bus.wake.swap(false, std::sync::atomic::Ordering::AcqRel) {
                    if let Some(p) = self.planner.as_mut() {
                        if self.config.trace_ticks {
                            self.trace.push(TraceEvent::Tick { tick, task: TaskId::Planner });
                        }
                        p.tick(tick, bus, &mut self.trace);
                    }
                }
                Ok(())
            }
            TaskId::Policy => self.policy.tick(tick, bus, &mut self.trace),
            TaskId::Planner => {
                if let Some(p) = self.planner.as_mut() {
                    p.tick(tick, bus, &mut self.trace);
                }
                Ok(())
            }
        }
    }

    /// Tick of the `k`-th policy activation.
    pub fn policy_tick(&self, k: u64) -> u64 {
        let t = self.config.tasks.iter().find(|t| t.id == TaskId::Policy).expect("validated");
        t.phase + k * t.period
    }

    pub fn realized(&self) -> &[PoseFrame] {
        &self.policy.realized
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOptions {
    pub plant: PlantConfig,
    pub dr: Option<DrSample>,
    pub pushes: Vec<PushEvent>,
    pub mode: SuccessMode,
    /// Stop at the first failing frame.
    pub early_stop: bool,
    pub sim: SimConfig,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self { plant: PlantConfig::default(), dr: None, pushes: Vec::new(), mode: SuccessMode::Strict, early_stop: false, sim: SimConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub struct TrackOutcome {
    pub actual: MotionClip,
    /// Metrics over the frames actually run.
    pub report: TrackingReport,
    pub trace: Vec<TraceEvent>,
    /// Set when a task failed; the report then covers the frames before it.
    pub aborted: Option<String>,
}

/// Track `clip` in closed loop: the plant starts on the first frame and the
/// policy runs once per clip frame.
pub fn track_clip(clip: &MotionClip, policy: Box<dyn Policy>, options: &TrackOptions) -> Result<TrackOutcome, RuntimeError> {
    clip.validate()?;
    let mut plant = Plant::new(clip.skeleton.clone(), options.plant, &clip.frames[0]);
    if let Some(dr) = &options.dr {
        plant = plant.with_dr(dr.clone(), options.pushes.clone());
    } else if !options.pushes.is_empty() {
        let dr = plant.dr.clone();
        plant = plant.with_dr(dr, options.pushes.clone());
    }
    let reference = Reference::Clip(Arc::new(clip.clone()));
    let mut sim = Simulation::new(options.sim.clone(), plant, policy, reference, clip.start_time(), None)?;
    let mut aborted = None;
    for k in 0..clip.len() as u64 {
        if let Err(e) = sim.run_until(sim.policy_tick(k) + 1, &[]) {
            aborted = Some(e.to_string());
            break;
        }
        if options.early_stop {
            let n = sim.realized().len();
            let (_, reason) = frame_failure(&clip.frames[n - 1], &sim.realized()[n - 1], options.mode);
            if reason != FailureReason::None {
                break;
            }
        }
    }
    let frames = sim.realized().to_vec();
    if frames.is_empty() {
        return Err(RuntimeError::Aborted { tick: 0, task: TaskId::Policy, reason: aborted.unwrap_or_else(|| "no frames".into()) });
    }
    let n = frames.len();
    let actual = MotionClip::new(format!("{}_tracked", clip.name), clip.fps, clip.skeleton.clone(), frames)?;
    let reference = MotionClip { frames: clip.frames[..n].to_vec(), ..clip.clone() };
    let report = check_success(&reference, &actual, options.mode)?;
    Ok(TrackOutcome { actual, report, trace: std::mem::take(&mut sim.trace), aborted })
}

/// Build a steering simulation: the follower tracks whatever the planner
/// publishes, starting from `start`.
pub fn steering(config: SimConfig, planner: Planner, start: &PoseFrame, plant: PlantConfig, seed: u64) -> Result<Simulation, RuntimeError> {
    let p = Plant::new(planner.skeleton.clone(), plant, start);
    Simulation::new(config, p, Box::new(super::policy::KinematicFollower), Reference::Plans, start.time, Some(PlannerTask::new(planner, seed)))
}

/// Run independent jobs on a pool of `threads` workers. Results come back
/// in job order regardless of the thread count.
pub fn run_batch<T, F>(jobs: usize, threads: usize, job: F) -> Result<Vec<T>, RuntimeError>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().map_err(|e| RuntimeError::Config(e.to_string()))?;
    Ok(pool.install(|| (0..jobs).into_par_iter().map(&job).collect()))
}
