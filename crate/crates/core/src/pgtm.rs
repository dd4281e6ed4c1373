//! Priority-guided task matching: delayed agents keep their tasks and go
//! first, then idle agents are greedily paired with the nearest pickups.

use std::cmp::Ordering;

use crate::grid::{heuristic_with, Cell, DEFAULT_TIE_BREAK};
use crate::instance::TaskId;
use crate::token::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueEntry {
    pub agent: AgentId,
    pub task: Option<TaskId>,
    /// Task carried over from before a delay.
    pub preserved: bool,
}

pub type AssignmentQueue = Vec<QueueEntry>;

/// Builds the planning queue. `delayed` pairs keep their task; `idle` agents
/// and `unassigned` tasks (pickup cells) are matched by ascending heuristic,
/// ties broken by agent id then task id.
pub fn assign(
    delayed: &[(AgentId, TaskId)],
    idle: &[(AgentId, Cell)],
    unassigned: &[(TaskId, Cell)],
) -> AssignmentQueue {
    assign_with(delayed, idle, unassigned, DEFAULT_TIE_BREAK)
}

pub fn assign_with(
    delayed: &[(AgentId, TaskId)],
    idle: &[(AgentId, Cell)],
    unassigned: &[(TaskId, Cell)],
    tie_break: f64,
) -> AssignmentQueue {
    let mut queue = Vec::with_capacity(delayed.len() + idle.len());
    let mut prefix = delayed.to_vec();
    prefix.sort_by_key(|&(a, _)| a);
    queue.extend(prefix.into_iter().map(|(agent, task)| QueueEntry {
        agent,
        task: Some(task),
        preserved: true,
    }));

    let mut pairs = Vec::with_capacity(idle.len() * unassigned.len());
    for &(agent, loc) in idle {
        for &(task, pickup) in unassigned {
            pairs.push((heuristic_with(loc, pickup, tie_break), agent, task));
        }
    }
    pairs.sort_by(|&a, &b| pair_order(a, b));

    let mut agents_taken: Vec<AgentId> = Vec::new();
    let mut tasks_taken: Vec<TaskId> = Vec::new();
    let limit = idle.len().min(unassigned.len());
    for (_, agent, task) in pairs {
        if agents_taken.len() == limit {
            break;
        }
        if agents_taken.contains(&agent) || tasks_taken.contains(&task) {
            continue;
        }
        agents_taken.push(agent);
        tasks_taken.push(task);
        queue.push(QueueEntry {
            agent,
            task: Some(task),
            preserved: false,
        });
    }

    let mut rest: Vec<AgentId> = idle
        .iter()
        .map(|&(a, _)| a)
        .filter(|a| !agents_taken.contains(a))
        .collect();
    rest.sort();
    queue.extend(rest.into_iter().map(|agent| QueueEntry {
        agent,
        task: None,
        preserved: false,
    }));
    queue
}

/// Orders heuristic values the way the matcher does.
pub fn pair_order(a: (f64, AgentId, TaskId), b: (f64, AgentId, TaskId)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}
