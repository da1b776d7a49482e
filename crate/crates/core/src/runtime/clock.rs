use serde::{Deserialize, Serialize};

/// Virtual time unit: every task period is an integer number of these.
pub const TICKS_PER_SECOND: u64 = 3000;

pub fn seconds(tick: u64) -> f64 {
    tick as f64 / TICKS_PER_SECOND as f64
}

/// Nearest tick to `t` seconds.
pub fn to_tick(t: f64) -> u64 {
    (t * TICKS_PER_SECOND as f64).round().max(0.0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    Streamer,
    Input,
    Policy,
    Planner,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [TaskId::Streamer, TaskId::Input, TaskId::Policy, TaskId::Planner];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Streamer => "streamer",
            TaskId::Input => "input",
            TaskId::Policy => "policy",
            TaskId::Planner => "planner",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub period: u64,
    pub phase: u64,
    /// Lower runs first among tasks due at the same tick.
    pub priority: u8,
}

impl TaskSpec {
    pub fn hz(id: TaskId, rate: u64, priority: u8) -> Self {
        assert!(rate > 0 && TICKS_PER_SECOND % rate == 0, "rate {rate} Hz is not on the tick grid");
        Self { id, period: TICKS_PER_SECOND / rate, phase: 0, priority }
    }

    /// First tick of this task strictly after `tick`.
    pub fn next_after(&self, tick: u64) -> u64 {
        if tick < self.phase {
            return self.phase;
        }
        self.phase + ((tick - self.phase) / self.period + 1) * self.period
    }

    /// First tick at or after `tick`.
    pub fn next_at_or_after(&self, tick: u64) -> u64 {
        if tick <= self.phase {
            return self.phase;
        }
        self.next_after(tick - 1)
    }

    /// Ticks in `[0, end)`.
    pub fn count_before(&self, end: u64) -> u64 {
        if end <= self.phase {
            0
        } else {
            (end - 1 - self.phase) / self.period + 1
        }
    }
}

/// Streamer 500 Hz, input 100 Hz, policy 50 Hz, planner 10 Hz, in that
/// priority order.
pub fn default_tasks() -> Vec<TaskSpec> {
    vec![
        TaskSpec::hz(TaskId::Streamer, 500, 0),
        TaskSpec::hz(TaskId::Input, 100, 1),
        TaskSpec::hz(TaskId::Policy, 50, 2),
        TaskSpec::hz(TaskId::Planner, 10, 3),
    ]
}

/// Events `(tick, task index)` in `[0, end)` in total order: tick, then
/// priority, then registration order.
#[derive(Debug, Clone)]
pub struct Scheduler {
    tasks: Vec<TaskSpec>,
    next: Vec<u64>,
    end: u64,
}

impl Scheduler {
    pub fn new(tasks: &[TaskSpec], end: u64) -> Self {
        Self::starting_at(tasks, 0, end)
    }

    /// Events in `[start, end)`.
    pub fn starting_at(tasks: &[TaskSpec], start: u64, end: u64) -> Self {
        assert!(tasks.iter().all(|t| t.period > 0), "task periods must be positive");
        Self { tasks: tasks.to_vec(), next: tasks.iter().map(|t| t.next_at_or_after(start)).collect(), end }
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }
}

impl Iterator for Scheduler {
    type Item = (u64, usize);

    fn next(&mut self) -> Option<(u64, usize)> {
        let mut best: Option<usize> = None;
        for i in 0..self.tasks.len() {
            best = match best {
                None => Some(i),
                Some(b) => {
                    let key = |k: usize| (self.next[k], self.tasks[k].priority);
                    if key(i) < key(b) {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        let i = best?;
        let tick = self.next[i];
        if tick >= self.end {
            return None;
        }
        self.next[i] += self.tasks[i].period;
        Some((tick, i))
    }
}

/// Event counts per task over `[0, end)` by running the scheduler.
pub fn tick_counts(tasks: &[TaskSpec], end: u64) -> Vec<u64> {
    let mut counts = vec![0; tasks.len()];
    for (_, i) in Scheduler::new(tasks, end) {
        counts[i] += 1;
    }
    counts
}
