use std::collections::VecDeque;

use super::Stage;

#[derive(Debug, Clone, Copy)]
pub(crate) struct InService {
    pub start: f64,
    pub duration: f64,
    pub work: f64,
}

/// One FCFS single-server stage. The sub-task in service stays at the front
/// of `queue` until it completes.
#[derive(Debug, Default)]
pub(crate) struct StageQueue {
    pub queue: VecDeque<usize>,
    pub in_service: Option<InService>,
    /// Work (cycles) of every queued sub-task, including the one in service.
    pub queued_work: f64,
    pub busy_until: f64,
    /// Time integral of the queue length.
    pub length_area: f64,
    pub last_change: f64,
    pub served: u64,
}

impl StageQueue {
    fn account(&mut self, now: f64) {
        self.length_area += self.queue.len() as f64 * (now - self.last_change);
        self.last_change = now;
    }

    pub fn push(&mut self, subtask: usize, work: f64, now: f64) {
        self.account(now);
        self.queue.push_back(subtask);
        self.queued_work += work;
    }

    pub fn pop(&mut self, work: f64, now: f64) -> Option<usize> {
        self.account(now);
        let head = self.queue.pop_front()?;
        self.in_service = None;
        self.served += 1;
        if self.queue.is_empty() {
            self.queued_work = 0.0;
        } else {
            self.queued_work -= work;
        }
        Some(head)
    }

    pub fn is_idle(&self) -> bool {
        self.in_service.is_none()
    }

    /// Pending cycles at `at`, with linear progress of the sub-task in service.
    pub fn backlog(&self, at: f64) -> f64 {
        let done = match self.in_service {
            Some(s) if s.duration > 0.0 => s.work * ((at - s.start) / s.duration).clamp(0.0, 1.0),
            Some(s) => s.work,
            None => 0.0,
        };
        (self.queued_work - done).max(0.0)
    }

    pub fn mean_length(&self, until: f64) -> f64 {
        if until <= 0.0 {
            return 0.0;
        }
        let area = self.length_area + self.queue.len() as f64 * (until - self.last_change);
        area / until
    }
}

/// Uplink, compute and downlink queues of one edge server.
#[derive(Debug, Default)]
pub(crate) struct TandemNode {
    pub stages: [StageQueue; 3],
}

impl TandemNode {
    pub fn stage(&self, stage: Stage) -> &StageQueue {
        &self.stages[stage.index()]
    }

    pub fn stage_mut(&mut self, stage: Stage) -> &mut StageQueue {
        &mut self.stages[stage.index()]
    }
}
