//! Resumable experiment plans. One task = one (dataset, method, shots,
//! seed) cell; task identity is a hash of its inputs, and completed tasks
//! are never re-executed unless forced.

use crate::CliError;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Task {
    /// Hash of (config hash, dataset, method, shots, seed).
    pub id: String,
    pub dataset: String,
    pub method: String,
    pub shots: usize,
    pub seed: u64,
    pub status: TaskStatus,
}

impl Task {
    pub fn identity(config_hash: &str, dataset: &str, method: &str, shots: usize, seed: u64) -> String {
        rsprompt_backbone::archive::digest_bytes(
            format!("task|{config_hash}|{dataset}|{method}|{shots}|{seed}").as_bytes(),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub config_hash: String,
    pub tasks: Vec<Task>,
}

impl ExperimentPlan {
    /// Enumerate the full grid in a stable order.
    pub fn enumerate(
        config_hash: &str,
        datasets: &[String],
        methods: &[String],
        shots: &[usize],
        seeds: &[u64],
    ) -> Self {
        let mut tasks = Vec::new();
        for dataset in datasets {
            for method in methods {
                for &k in shots {
                    for &seed in seeds {
                        tasks.push(Task {
                            id: Task::identity(config_hash, dataset, method, k, seed),
                            dataset: dataset.clone(),
                            method: method.clone(),
                            shots: k,
                            seed,
                            status: TaskStatus::Pending,
                        });
                    }
                }
            }
        }
        ExperimentPlan {
            config_hash: config_hash.to_string(),
            tasks,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Merge statuses from a previous run of the same configuration: tasks
    /// whose identity matches keep their completion state.
    pub fn resume_from(&mut self, previous: &ExperimentPlan) {
        if previous.config_hash != self.config_hash {
            log::warn!("previous plan was built from a different config; starting fresh");
            return;
        }
        for task in &mut self.tasks {
            if let Some(old) = previous.tasks.iter().find(|t| t.id == task.id) {
                if old.status == TaskStatus::Done {
                    task.status = TaskStatus::Done;
                }
            }
        }
    }

    pub fn pending(&self) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(|t| t.status == TaskStatus::Pending)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_enumeration_counts() {
        let plan = ExperimentPlan::enumerate(
            "h",
            &(0..9).map(|i| format!("d{i}")).collect::<Vec<_>>(),
            &["coop".into(), "cocoop".into(), "maple".into(), "promptsrc".into()],
            &[1, 2, 4, 8, 16],
            &[1, 2, 3],
        );
        assert_eq!(plan.tasks.len(), 9 * 4 * 5 * 3);
        assert_eq!(plan.tasks.len(), 540);
    }

    #[test]
    fn task_identity_depends_on_all_inputs() {
        let a = Task::identity("h", "d", "coop", 1, 1);
        assert_ne!(a, Task::identity("h", "d", "coop", 1, 2));
        assert_ne!(a, Task::identity("h", "d", "coop", 2, 1));
        assert_ne!(a, Task::identity("h", "d", "maple", 1, 1));
        assert_ne!(a, Task::identity("g", "d", "coop", 1, 1));
        assert_eq!(a, Task::identity("h", "d", "coop", 1, 1));
    }

    #[test]
    fn resume_restores_done_states() {
        let mut fresh = ExperimentPlan::enumerate(
            "h",
            &["d".into()],
            &["coop".into()],
            &[1, 2],
            &[1],
        );
        let mut old = fresh.clone();
        old.tasks[0].status = TaskStatus::Done;
        fresh.resume_from(&old);
        assert_eq!(fresh.tasks[0].status, TaskStatus::Done);
        assert_eq!(fresh.tasks[1].status, TaskStatus::Pending);
        assert_eq!(fresh.pending().count(), 1);
    }

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let plan = ExperimentPlan::enumerate("h", &["d".into()], &["coop".into()], &[1], &[1]);
        let path = dir.path().join("plan.json");
        plan.save(&path).unwrap();
        let back = ExperimentPlan::load(&path).unwrap();
        assert_eq!(back.tasks.len(), 1);
        assert_eq!(back.config_hash, "h");
    }
}
