use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{error, warn};
use serde::{Deserialize, Serialize};

use super::clock::{seconds, TaskId};
use super::sim::Simulation;
use super::tasks::{Bus, CommandMsg};
use super::trace::TraceEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub task: TaskId,
    pub activations: u64,
    /// Activations that started more than one period after their deadline.
    pub deadline_misses: u64,
    pub max_lateness_ms: f64,
    pub aborted: Option<String>,
}

/// Maps the monotonic clock to virtual ticks of a running runtime.
#[derive(Debug, Clone, Copy)]
pub struct LiveClock {
    start: Instant,
}

impl LiveClock {
    pub fn tick(&self) -> u64 {
        super::clock::to_tick(self.start.elapsed().as_secs_f64())
    }
}

type Wake = Arc<(Mutex<()>, Condvar)>;

/// The simulation's task graph on one thread per task, paced by the
/// monotonic clock. Tasks share only the bus.
pub struct LiveRuntime {
    bus: Arc<Bus>,
    stop: Arc<AtomicBool>,
    wake: Wake,
    start: Instant,
    handles: Vec<JoinHandle<TaskStats>>,
}

impl LiveRuntime {
    /// Take the tasks out of `sim` and start them. The simulation's virtual
    /// tick 0 is mapped to now.
    pub fn start(sim: Simulation) -> Self {
        let Simulation { config, bus, mut streamer, mut input, mut policy, planner, .. } = sim;
        let stop = Arc::new(AtomicBool::new(false));
        let wake: Wake = Arc::new((Mutex::new(()), Condvar::new()));
        let start = Instant::now();
        let period = |id: TaskId| config.tasks.iter().find(|t| t.id == id).map(|t| t.period).expect("validated");
        let mut handles = Vec::new();
        let ctx = Ctx { bus: bus.clone(), stop: stop.clone(), start };

        let c = ctx.clone();
        let p = period(TaskId::Streamer);
        handles.push(std::thread::spawn(move || c.paced(TaskId::Streamer, p, None, |tick, bus, tr| streamer.tick(tick, bus, tr))));

        let c = ctx.clone();
        let p = period(TaskId::Input);
        let w = wake.clone();
        handles.push(std::thread::spawn(move || {
            c.paced(TaskId::Input, p, None, |tick, bus, tr| {
                input.tick(tick, bus, tr);
                if bus.wake.load(Ordering::Acquire) {
                    w.1.notify_all();
                }
                Ok(())
            })
        }));

        let c = ctx.clone();
        let p = period(TaskId::Policy);
        handles.push(std::thread::spawn(move || c.paced(TaskId::Policy, p, None, |tick, bus, tr| policy.tick(tick, bus, tr))));

        if let Some(mut planner) = planner {
            let c = ctx.clone();
            let p = period(TaskId::Planner);
            let w = config.immediate_replan.then(|| wake.clone());
            handles.push(std::thread::spawn(move || {
                c.paced(TaskId::Planner, p, w, |tick, bus, tr| {
                    planner.tick(tick, bus, tr);
                    Ok(())
                })
            }));
        }
        Self { bus, stop, wake, start, handles }
    }

    pub fn bus(&self) -> &Arc<Bus> {
        &self.bus
    }

    /// Current virtual tick.
    pub fn tick(&self) -> u64 {
        self.clock().tick()
    }

    pub fn clock(&self) -> LiveClock {
        LiveClock { start: self.start }
    }

    /// Publish an external command; returns its sequence number.
    pub fn publish(&self, msg: CommandMsg) -> u64 {
        self.bus.external.publish(msg, self.tick())
    }

    pub fn stop(self) -> Vec<TaskStats> {
        self.stop.store(true, Ordering::Release);
        self.wake.1.notify_all();
        self.handles.into_iter().filter_map(|h| h.join().map_err(|_| error!("runtime task panicked")).ok()).collect()
    }
}

#[derive(Clone)]
struct Ctx {
    bus: Arc<Bus>,
    stop: Arc<AtomicBool>,
    start: Instant,
}

impl Ctx {
    /// Run `f` every `period` ticks until stopped. With `wake`, also run as
    /// soon as the bus wake flag is raised.
    fn paced<F>(&self, task: TaskId, period: u64, wake: Option<Wake>, mut f: F) -> TaskStats
    where
        F: FnMut(u64, &Bus, &mut Vec<TraceEvent>) -> Result<(), String>,
    {
        let mut stats = TaskStats { task, activations: 0, deadline_misses: 0, max_lateness_ms: 0.0, aborted: None };
        let mut scratch = Vec::new();
        let mut k: u64 = 0;
        let at = |tick: u64| self.start + Duration::from_secs_f64(seconds(tick));
        while !self.stop.load(Ordering::Acquire) {
            let deadline = at(k * period);
            let now = Instant::now();
            let mut tick = k * period;
            if now < deadline {
                match &wake {
                    Some(w) => {
                        let guard = w.0.lock().unwrap_or_else(|e| e.into_inner());
                        let (_g, _) = w
                            .1
                            .wait_timeout_while(guard, deadline - now, |_| !self.bus.wake.load(Ordering::Acquire) && !self.stop.load(Ordering::Acquire))
                            .unwrap_or_else(|e| e.into_inner());
                        if self.stop.load(Ordering::Acquire) {
                            break;
                        }
                        if self.bus.wake.swap(false, Ordering::AcqRel) && Instant::now() < deadline {
                            // off-grid activation; the periodic one still follows
                            tick = super::clock::to_tick(self.start.elapsed().as_secs_f64());
                            self.activate(&mut stats, &mut scratch, tick, 0.0, &mut f);
                            if stats.aborted.is_some() {
                                break;
                            }
                            continue;
                        }
                    }
                    None => std::thread::sleep(deadline - now),
                }
            }
            let late = Instant::now().saturating_duration_since(deadline).as_secs_f64();
            if late > seconds(period) {
                stats.deadline_misses += 1;
                self.bus.deadline_misses.fetch_add(1, Ordering::Relaxed);
                warn!("{} missed its deadline by {:.1} ms", task.name(), late * 1000.0);
            }
            self.activate(&mut stats, &mut scratch, tick, late, &mut f);
            if stats.aborted.is_some() {
                break;
            }
            k += 1;
            // skip deadlines that already passed
            let behind = super::clock::to_tick(self.start.elapsed().as_secs_f64()) / period;
            if behind > k {
                stats.deadline_misses += behind - k;
                self.bus.deadline_misses.fetch_add(behind - k, Ordering::Relaxed);
                k = behind;
            }
        }
        stats
    }

    fn activate<F>(&self, stats: &mut TaskStats, scratch: &mut Vec<TraceEvent>, tick: u64, late: f64, f: &mut F)
    where
        F: FnMut(u64, &Bus, &mut Vec<TraceEvent>) -> Result<(), String>,
    {
        stats.activations += 1;
        stats.max_lateness_ms = stats.max_lateness_ms.max(late * 1000.0);
        if let Err(e) = f(tick, &self.bus, scratch) {
            error!("{} aborted at tick {tick}: {e}", stats.task.name());
            stats.aborted = Some(e);
        }
        scratch.clear();
    }
}
