use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::clock::{seconds, TaskId};
use super::mailbox::Mailbox;
use super::plant::{Plant, RootTarget};
use super::policy::{Policy, PolicyInput};
use super::trace::TraceEvent;
use crate::motion::{MotionClip, PoseFrame};
use crate::planner::{context_from, PlanCommand, PlanRequest, PlanSegment, Planner};

/// A steering command as it enters the runtime.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandMsg {
    pub command: PlanCommand,
    /// Sequence number chosen by the client, echoed back in state updates.
    pub client_seq: u64,
}

/// A command after the input stage, tagged with the external sequence
/// number it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Forwarded {
    pub msg: CommandMsg,
    pub cmd_seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanMsg {
    pub segment: Arc<PlanSegment>,
    pub cmd_seq: u64,
    pub client_seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionMsg {
    pub targets: Vec<f64>,
    pub root: RootTarget,
    pub cmd_seq: u64,
    pub client_seq: u64,
}

/// Consistent view of the plant taken by the streamer at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeSnapshot {
    pub tick: u64,
    pub frame: PoseFrame,
    /// Sequence numbers of the action being applied and the newest command
    /// it reflects.
    pub action_seq: u64,
    pub cmd_seq: u64,
    pub client_seq: u64,
}

/// Every mailbox shared between tasks.
#[derive(Debug, Default)]
pub struct Bus {
    /// Written from outside (clients, scripts).
    pub external: Mailbox<CommandMsg>,
    pub command: Mailbox<Forwarded>,
    pub plan: Mailbox<PlanMsg>,
    pub history: Mailbox<Vec<PoseFrame>>,
    pub action: Mailbox<ActionMsg>,
    pub state: Mailbox<RuntimeSnapshot>,
    /// Set by the input stage when a new command should replan at once.
    pub wake: AtomicBool,
    /// Ticks at which a task started later than one period after its deadline.
    pub deadline_misses: AtomicU64,
}

impl Bus {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }
}

/// 500 Hz: apply the newest action, publish the state, integrate one step.
#[derive(Debug, Clone)]
pub struct StreamerTask {
    pub plant: Plant,
    pub dt: f64,
    targets: Vec<f64>,
    root: RootTarget,
    applied: (u64, u64, u64),
}

impl StreamerTask {
    pub fn new(plant: Plant, dt: f64, root: RootTarget) -> Self {
        Self { targets: plant.q.clone(), plant, dt, root, applied: (0, 0, 0) }
    }

    pub fn tick(&mut self, tick: u64, bus: &Bus, trace: &mut Vec<TraceEvent>) -> Result<(), String> {
        if let Some(a) = bus.action.read() {
            if a.seq > self.applied.0 {
                self.targets.clone_from(&a.value.targets);
                self.root = a.value.root;
                self.applied = (a.seq, a.value.cmd_seq, a.value.client_seq);
                trace.push(TraceEvent::Actuate { tick, action_seq: a.seq, cmd_seq: a.value.cmd_seq });
            }
        }
        let mut frame = self.plant.frame();
        frame.time = seconds(tick);
        let (action_seq, cmd_seq, client_seq) = self.applied;
        let seq = bus.state.publish(RuntimeSnapshot { tick, frame, action_seq, cmd_seq, client_seq }, tick);
        trace.push(TraceEvent::Publish { tick, task: TaskId::Streamer, mailbox: "state".into(), seq, cmd_seq });
        self.plant.step(self.dt, &self.targets, &self.root);
        if !self.plant.is_finite() {
            return Err("plant state is not finite".into());
        }
        Ok(())
    }
}

/// 100 Hz: forward the newest external command.
#[derive(Debug, Clone, Default)]
pub struct InputTask {
    seen: u64,
    pub immediate_replan: bool,
}

impl InputTask {
    pub fn new(immediate_replan: bool) -> Self {
        Self { seen: 0, immediate_replan }
    }

    pub fn tick(&mut self, tick: u64, bus: &Bus, trace: &mut Vec<TraceEvent>) {
        if let Some(c) = bus.external.read() {
            if c.seq > self.seen {
                self.seen = c.seq;
                let seq = bus.command.publish(Forwarded { msg: c.value.clone(), cmd_seq: c.seq }, tick);
                trace.push(TraceEvent::Publish { tick, task: TaskId::Input, mailbox: "command".into(), seq, cmd_seq: c.seq });
                if self.immediate_replan {
                    bus.wake.store(true, Ordering::Release);
                }
            }
        }
    }
}

/// Where the policy's reference motion comes from.
#[derive(Debug, Clone)]
pub enum Reference {
    Clip(Arc<MotionClip>),
    /// The newest published plan; before the first plan the robot holds its
    /// initial pose.
    Plans,
}

/// 50 Hz: read the state, record it, act against the reference.
pub struct PolicyTask {
    pub policy: Box<dyn Policy>,
    pub reference: Reference,
    /// Reference time at tick 0.
    pub t0: f64,
    pub realized: Vec<PoseFrame>,
}

impl PolicyTask {
    pub fn new(policy: Box<dyn Policy>, reference: Reference, t0: f64) -> Self {
        Self { policy, reference, t0, realized: Vec::new() }
    }

    pub fn tick(&mut self, tick: u64, bus: &Bus, trace: &mut Vec<TraceEvent>) -> Result<(), String> {
        let snap = bus.state.read().ok_or("no plant state published yet")?;
        let t = self.t0 + seconds(tick);
        let mut frame = snap.value.frame.clone();
        frame.time = t;
        self.realized.push(frame);
        let n = self.realized.len();
        let recent = self.realized[n.saturating_sub(4)..].to_vec();
        bus.history.publish(recent, tick);
        let plan = bus.plan.read();
        let (clip, cmd_seq, client_seq) = match (&self.reference, &plan) {
            (Reference::Clip(c), _) => (c.clone(), 0, 0),
            (Reference::Plans, Some(p)) => (Arc::new(p.value.segment.clip.clone()), p.value.cmd_seq, p.value.client_seq),
            (Reference::Plans, None) => return Ok(()),
        };
        let state = &self.realized[n - 1];
        let targets = self.policy.act(&PolicyInput { time: t, state, reference: &clip }).map_err(|e| e.to_string())?;
        if targets.iter().any(|x| !x.is_finite()) {
            return Err(format!("non-finite action at t = {t:.3}"));
        }
        let root = RootTarget::of(clip.frame_at(t).expect("clip has frames"));
        let seq = bus.action.publish(ActionMsg { targets, root, cmd_seq, client_seq }, tick);
        trace.push(TraceEvent::Publish { tick, task: TaskId::Policy, mailbox: "action".into(), seq, cmd_seq });
        Ok(())
    }
}

/// 10 Hz (and on wake): replan from the realized history and the newest
/// command.
pub struct PlannerTask {
    pub planner: Planner,
    rng: ChaCha8Rng,
}

impl PlannerTask {
    pub fn new(planner: Planner, seed: u64) -> Self {
        Self { planner, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn tick(&mut self, tick: u64, bus: &Bus, trace: &mut Vec<TraceEvent>) {
        let (Some(cmd), Some(hist)) = (bus.command.read(), bus.history.read()) else {
            return;
        };
        let Ok(context) = context_from(&hist.value) else {
            return;
        };
        let cmd_seq = cmd.value.cmd_seq;
        let req = PlanRequest { context, command: cmd.value.msg.command.clone(), seq: cmd_seq };
        match self.planner.plan(&req, &mut self.rng) {
            Ok(seg) => {
                let seq = bus.plan.publish(PlanMsg { segment: Arc::new(seg), cmd_seq, client_seq: cmd.value.msg.client_seq }, tick);
                trace.push(TraceEvent::Publish { tick, task: TaskId::Planner, mailbox: "plan".into(), seq, cmd_seq });
            }
            Err(e) => warn!("planning failed at tick {tick}: {e}"),
        }
    }
}
