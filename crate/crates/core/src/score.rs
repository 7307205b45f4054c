//! Sequence and action scoring of predicted command sequences against gold.
//!
//! Both scores are binary per task. The sequence score checks only that the
//! predicted verb sequence equals gold, in order, ignoring every argument.
//! The action score additionally requires the right element (the predicted
//! target's click point inside the gold box, or matching ids when no box is
//! given) and matching parameters — so action score ≤ sequence score always.
//! Aggregation is the unweighted mean over tasks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{parse_action, resolve_target, ActionCommand, ActionError, Dialect};
use crate::model::{BoundingBox, EnvironmentState, ModelError};
use crate::ordering::OrderedView;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("gold command {index} carries a target box but no state was supplied")]
    MissingState { index: usize },
    #[error("cannot aggregate an empty task set")]
    EmptySet,
    #[error("malformed {what} file: {message}")]
    MalformedFile { what: &'static str, message: String },
    #[error("task {task}: {source}")]
    BadAction {
        task: String,
        #[source]
        source: ActionError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One gold command plus, optionally, the box its target must land in.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldCommand {
    pub command: ActionCommand,
    pub target_box: Option<BoundingBox>,
}

/// A task's gold command sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldTask {
    pub id: String,
    pub commands: Vec<GoldCommand>,
}

/// Resolution context for coordinate checks: the state the predictions were
/// emitted against and the view that assigned their ids.
pub type Resolution<'a> = (&'a EnvironmentState, &'a OrderedView);

/// 1 iff the predicted verb sequence equals the gold verb sequence,
/// order-sensitive, arguments and targets ignored.
pub fn sequence_score(pred: &[ActionCommand], gold: &GoldTask) -> u8 {
    let same = pred.len() == gold.commands.len()
        && pred
            .iter()
            .zip(&gold.commands)
            .all(|(p, g)| p.verb == g.command.verb);
    u8::from(same)
}

fn args_match(pred: &ActionCommand, gold: &ActionCommand) -> bool {
    if pred.args.len() != gold.args.len() {
        return false;
    }
    pred.args.iter().zip(&gold.args).all(|(p, g)| {
        if pred.verb.args_are_keys() {
            p.eq_ignore_ascii_case(g)
        } else {
            p == g
        }
    })
}

fn target_matches(
    index: usize,
    pred: &ActionCommand,
    gold: &GoldCommand,
    resolution: Option<Resolution<'_>>,
) -> Result<bool, ScoreError> {
    match &gold.target_box {
        Some(gold_box) => {
            let (state, view) = resolution.ok_or(ScoreError::MissingState { index })?;
            let Some(id) = pred.target_id else {
                return Ok(false);
            };
            match resolve_target(id, view, state) {
                Ok((_, (x, y))) => Ok(gold_box.contains_point(f64::from(x), f64::from(y))),
                // a prediction aimed at a nonexistent element is wrong, not
                // an evaluation failure
                Err(ActionError::UnknownId { .. }) => Ok(false),
                Err(_) => Ok(false),
            }
        }
        None => Ok(pred.target_id == gold.command.target_id),
    }
}

/// 1 iff the sequence score is 1 and every position also matches on element
/// and parameters. Key-name arguments compare case-insensitively, free text
/// exactly.
pub fn action_score(
    pred: &[ActionCommand],
    gold: &GoldTask,
    resolution: Option<Resolution<'_>>,
) -> Result<u8, ScoreError> {
    if sequence_score(pred, gold) == 0 {
        return Ok(0);
    }
    for (index, (p, g)) in pred.iter().zip(&gold.commands).enumerate() {
        if !target_matches(index, p, g, resolution)? {
            return Ok(0);
        }
        if !args_match(p, &g.command) {
            return Ok(0);
        }
    }
    Ok(1)
}

/// Scores for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: String,
    pub sequence: u8,
    pub action: u8,
}

/// Per-task scores plus unweighted means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub tasks: Vec<TaskScore>,
    pub sequence_mean: f64,
    pub action_mean: f64,
}

impl ScoreReport {
    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let width = self
            .tasks
            .iter()
            .map(|t| t.task_id.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut out = String::new();
        out.push_str(&format!("{:<width$}  sequence  action\n", "task"));
        for task in &self.tasks {
            out.push_str(&format!(
                "{:<width$}  {:>8}  {:>6}\n",
                task.task_id, task.sequence, task.action
            ));
        }
        out.push_str(&format!(
            "{:<width$}  {:>8.4}  {:>6.4}\n",
            "mean", self.sequence_mean, self.action_mean
        ));
        out
    }
}

/// Unweighted means over per-task scores.
pub fn aggregate(tasks: Vec<TaskScore>) -> Result<ScoreReport, ScoreError> {
    if tasks.is_empty() {
        return Err(ScoreError::EmptySet);
    }
    let n = tasks.len() as f64;
    let sequence_mean = tasks.iter().map(|t| f64::from(t.sequence)).sum::<f64>() / n;
    let action_mean = tasks.iter().map(|t| f64::from(t.action)).sum::<f64>() / n;
    Ok(ScoreReport {
        tasks,
        sequence_mean,
        action_mean,
    })
}

// ---------------------------------------------------------------------------
// Gold and prediction file schemas
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoldFile {
    dialect: Dialect,
    tasks: Vec<GoldTaskRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoldTaskRecord {
    id: String,
    commands: Vec<GoldCommandRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoldCommandRecord {
    /// Grammar line, e.g. `click [1]`.
    action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_box: Option<[f64; 4]>,
}

/// Parsed gold file: the dialect and the task list.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldSet {
    pub dialect: Dialect,
    pub tasks: Vec<GoldTask>,
}

pub fn load_gold(path: &Path) -> Result<GoldSet, ScoreError> {
    let raw = std::fs::read_to_string(path)?;
    parse_gold(&raw)
}

pub fn parse_gold(raw: &str) -> Result<GoldSet, ScoreError> {
    let file: GoldFile = serde_json::from_str(raw).map_err(|e| ScoreError::MalformedFile {
        what: "gold",
        message: e.to_string(),
    })?;
    let mut tasks = Vec::with_capacity(file.tasks.len());
    for record in file.tasks {
        let mut commands = Vec::with_capacity(record.commands.len());
        for c in record.commands {
            let command =
                parse_action(&c.action, file.dialect).map_err(|e| ScoreError::BadAction {
                    task: record.id.clone(),
                    source: e,
                })?;
            let target_box = match c.target_box {
                Some([x1, y1, x2, y2]) => Some(BoundingBox::new(x1, y1, x2, y2)?),
                None => None,
            };
            commands.push(GoldCommand {
                command,
                target_box,
            });
        }
        tasks.push(GoldTask {
            id: record.id,
            commands,
        });
    }
    Ok(GoldSet {
        dialect: file.dialect,
        tasks,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredFile {
    tasks: Vec<PredTaskRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredTaskRecord {
    id: String,
    /// Grammar lines in execution order.
    actions: Vec<String>,
    /// Ordering in force when the prediction was made (one-based element
    /// indices); identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    perm: Option<Vec<usize>>,
}

/// One task's predicted actions plus the ordering they were made under.
#[derive(Debug, Clone, PartialEq)]
pub struct PredTask {
    pub id: String,
    pub actions: Vec<String>,
    pub perm: Option<Vec<usize>>,
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredTask>, ScoreError> {
    let raw = std::fs::read_to_string(path)?;
    let file: PredFile = serde_json::from_str(&raw).map_err(|e| ScoreError::MalformedFile {
        what: "prediction",
        message: e.to_string(),
    })?;
    Ok(file
        .tasks
        .into_iter()
        .map(|t| PredTask {
            id: t.id,
            actions: t.actions,
            perm: t.perm,
        })
        .collect())
}

/// Scores every gold task against the matching prediction (by task id).
/// Tasks without a prediction score zero. When a task needs coordinate
/// resolution, the state plus the task's recorded ordering (or the supplied
/// default view) are used.
pub fn score_tasks(
    gold: &GoldSet,
    predictions: &[PredTask],
    state: Option<&EnvironmentState>,
    default_view: Option<&OrderedView>,
) -> Result<ScoreReport, ScoreError> {
    let by_id: BTreeMap<&str, &PredTask> = predictions
        .iter()
        .map(|p| (p.id.as_str(), p))
        .collect();
    let mut tasks = Vec::with_capacity(gold.tasks.len());
    for gold_task in &gold.tasks {
        let Some(pred_task) = by_id.get(gold_task.id.as_str()) else {
            tasks.push(TaskScore {
                task_id: gold_task.id.clone(),
                sequence: 0,
                action: 0,
            });
            continue;
        };
        let mut pred = Vec::with_capacity(pred_task.actions.len());
        let mut parse_failed = false;
        for line in &pred_task.actions {
            match parse_action(line, gold.dialect) {
                Ok(cmd) => pred.push(cmd),
                // an unparseable prediction cannot match gold
                Err(_) => {
                    parse_failed = true;
                    break;
                }
            }
        }
        if parse_failed {
            tasks.push(TaskScore {
                task_id: gold_task.id.clone(),
                sequence: 0,
                action: 0,
            });
            continue;
        }

        let task_view = match (&pred_task.perm, state) {
            (Some(one_based), Some(state)) => {
                let perm = crate::model::Permutation::from_one_based(one_based).map_err(|e| {
                    ScoreError::MalformedFile {
                        what: "prediction",
                        message: format!("task {}: bad perm: {e}", pred_task.id),
                    }
                })?;
                Some(crate::ordering::apply_ordering(state, &perm).map_err(|e| {
                    ScoreError::MalformedFile {
                        what: "prediction",
                        message: format!("task {}: bad perm: {e}", pred_task.id),
                    }
                })?)
            }
            _ => None,
        };
        let resolution: Option<Resolution<'_>> = match (state, task_view.as_ref(), default_view) {
            (Some(s), Some(v), _) => Some((s, v)),
            (Some(s), None, Some(v)) => Some((s, v)),
            _ => None,
        };

        let sequence = sequence_score(&pred, gold_task);
        let action = action_score(&pred, gold_task, resolution)?;
        tasks.push(TaskScore {
            task_id: gold_task.id.clone(),
            sequence,
            action,
        });
    }
    aggregate(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Element, Permutation, Viewport};
    use crate::ordering::apply_ordering;
    use std::collections::BTreeSet;

    fn button(x1: f64, y1: f64, x2: f64, y2: f64) -> Element {
        Element {
            interactable: true,
            bbox: BoundingBox::new(x1, y1, x2, y2).unwrap(),
            actions: BTreeSet::from(["click".to_string()]),
            tag: Some("BUTTON".to_string()),
            text: None,
            alt_text: None,
            caption: None,
            is_static_text: false,
        }
    }

    fn two_button_state() -> EnvironmentState {
        EnvironmentState {
            elements: vec![button(0.0, 0.0, 10.0, 10.0), button(100.0, 100.0, 120.0, 120.0)],
            viewport: Viewport::new(200, 200),
            screenshot_path: None,
        }
    }

    fn gold_click_in_box(bbox: [f64; 4]) -> GoldTask {
        GoldTask {
            id: "t".to_string(),
            commands: vec![GoldCommand {
                command: ActionCommand::click(1),
                target_box: Some(BoundingBox::new(bbox[0], bbox[1], bbox[2], bbox[3]).unwrap()),
            }],
        }
    }

    #[test]
    fn sequence_ignores_elements_and_parameters() {
        let gold = GoldTask {
            id: "t".to_string(),
            commands: vec![GoldCommand {
                command: ActionCommand::click(1),
                target_box: None,
            }],
        };
        assert_eq!(sequence_score(&[ActionCommand::click(2)], &gold), 1);
        let type_cmd = parse_action("type [a]", Dialect::OmniAct).unwrap();
        assert_eq!(sequence_score(&[type_cmd], &gold), 0);
    }

    #[test]
    fn sequence_is_length_sensitive() {
        let gold = GoldTask {
            id: "t".to_string(),
            commands: vec![GoldCommand {
                command: ActionCommand::click(1),
                target_box: None,
            }],
        };
        let press = parse_action("press [enter]", Dialect::OmniAct).unwrap();
        assert_eq!(sequence_score(&[ActionCommand::click(1), press], &gold), 0);
    }

    #[test]
    fn action_degrades_when_center_outside_gold_box() {
        let state = two_button_state();
        let view = apply_ordering(&state, &Permutation::identity(2)).unwrap();
        // gold box covers element 1 only; prediction clicks element 2
        let gold = gold_click_in_box([0.0, 0.0, 10.0, 10.0]);
        let pred = [ActionCommand::click(2)];
        assert_eq!(sequence_score(&pred, &gold), 1);
        assert_eq!(action_score(&pred, &gold, Some((&state, &view))).unwrap(), 0);
        // clicking element 1 scores
        let pred = [ActionCommand::click(1)];
        assert_eq!(action_score(&pred, &gold, Some((&state, &view))).unwrap(), 1);
    }

    #[test]
    fn action_requires_state_for_box_checks() {
        let gold = gold_click_in_box([0.0, 0.0, 10.0, 10.0]);
        assert!(matches!(
            action_score(&[ActionCommand::click(1)], &gold, None),
            Err(ScoreError::MissingState { index: 0 })
        ));
    }

    #[test]
    fn identical_pred_and_gold_scores_one() {
        let gold = GoldTask {
            id: "t".to_string(),
            commands: vec![
                GoldCommand {
                    command: ActionCommand::click(1),
                    target_box: None,
                },
                GoldCommand {
                    command: parse_action("write [hello]", Dialect::OmniAct).unwrap(),
                    target_box: None,
                },
            ],
        };
        let pred = vec![
            ActionCommand::click(1),
            parse_action("write [hello]", Dialect::OmniAct).unwrap(),
        ];
        assert_eq!(action_score(&pred, &gold, None).unwrap(), 1);
    }

    #[test]
    fn free_text_is_case_sensitive_keys_are_not() {
        let gold = GoldTask {
            id: "t".to_string(),
            commands: vec![GoldCommand {
                command: parse_action("write [hello]", Dialect::OmniAct).unwrap(),
                target_box: None,
            }],
        };
        let upper = parse_action("write [Hello]", Dialect::OmniAct).unwrap();
        assert_eq!(action_score(&[upper], &gold, None).unwrap(), 0);

        let gold = GoldTask {
            id: "t".to_string(),
            commands: vec![GoldCommand {
                command: parse_action("press [enter]", Dialect::OmniAct).unwrap(),
                target_box: None,
            }],
        };
        let upper = parse_action("press [Enter]", Dialect::OmniAct).unwrap();
        assert_eq!(action_score(&[upper], &gold, None).unwrap(), 1);
    }

    #[test]
    fn unknown_predicted_id_scores_zero_not_error() {
        let state = two_button_state();
        let view = apply_ordering(&state, &Permutation::identity(2)).unwrap();
        let gold = gold_click_in_box([0.0, 0.0, 10.0, 10.0]);
        let pred = [ActionCommand::click(99)];
        assert_eq!(action_score(&pred, &gold, Some((&state, &view))).unwrap(), 0);
    }

    #[test]
    fn aggregate_means() {
        let tasks: Vec<TaskScore> = [(1, 1), (1, 0), (0, 0), (1, 0)]
            .iter()
            .enumerate()
            .map(|(k, &(sequence, action))| TaskScore {
                task_id: format!("t{k}"),
                sequence,
                action,
            })
            .collect();
        let report = aggregate(tasks).unwrap();
        assert!((report.sequence_mean - 0.75).abs() < 1e-15);
        assert!((report.action_mean - 0.25).abs() < 1e-15);

        let single = aggregate(vec![TaskScore {
            task_id: "only".to_string(),
            sequence: 1,
            action: 1,
        }])
        .unwrap();
        assert_eq!(single.sequence_mean, 1.0);
        assert_eq!(single.action_mean, 1.0);

        assert!(matches!(aggregate(vec![]), Err(ScoreError::EmptySet)));
    }

    #[test]
    fn aggregate_three_task_hand_example() {
        let tasks: Vec<TaskScore> = [(1, 1), (1, 0), (0, 0)]
            .iter()
            .enumerate()
            .map(|(k, &(sequence, action))| TaskScore {
                task_id: format!("t{k}"),
                sequence,
                action,
            })
            .collect();
        let report = aggregate(tasks).unwrap();
        assert!((report.action_mean - 1.0 / 3.0).abs() < 1e-12);
        assert!((report.sequence_mean - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gold_and_pred_files_score_end_to_end() {
        let gold = parse_gold(
            r#"{
                "dialect": "omniact",
                "tasks": [
                    {"id": "a", "commands": [
                        {"action": "click [1]", "target_box": [0, 0, 10, 10]},
                        {"action": "write [hi]"}
                    ]},
                    {"id": "b", "commands": [{"action": "press [enter]"}]}
                ]
            }"#,
        )
        .unwrap();
        let state = two_button_state();
        let view = apply_ordering(&state, &Permutation::identity(2)).unwrap();
        let predictions = vec![
            PredTask {
                id: "a".to_string(),
                actions: vec!["click [1]".to_string(), "write [hi]".to_string()],
                perm: None,
            },
            PredTask {
                id: "b".to_string(),
                actions: vec!["press [return]".to_string()],
                perm: None,
            },
        ];
        let report = score_tasks(&gold, &predictions, Some(&state), Some(&view)).unwrap();
        assert_eq!(report.tasks[0].sequence, 1);
        assert_eq!(report.tasks[0].action, 1);
        assert_eq!(report.tasks[1].sequence, 1);
        assert_eq!(report.tasks[1].action, 0, "return != enter");
        assert!((report.sequence_mean - 1.0).abs() < 1e-15);
        assert!((report.action_mean - 0.5).abs() < 1e-15);
    }

    #[test]
    fn per_task_perm_reassigns_ids() {
        let gold = parse_gold(
            r#"{
                "dialect": "omniact",
                "tasks": [
                    {"id": "a", "commands": [
                        {"action": "click [1]", "target_box": [100, 100, 120, 120]}
                    ]}
                ]
            }"#,
        )
        .unwrap();
        let state = two_button_state();
        // under the reversed ordering, id 1 is the second element, whose
        // center (110,110) lands in the gold box
        let predictions = vec![PredTask {
            id: "a".to_string(),
            actions: vec!["click [1]".to_string()],
            perm: Some(vec![2, 1]),
        }];
        let report = score_tasks(&gold, &predictions, Some(&state), None).unwrap();
        assert_eq!(report.tasks[0].action, 1);
    }

    #[test]
    fn missing_prediction_scores_zero() {
        let gold = parse_gold(
            r#"{"dialect": "omniact", "tasks": [{"id": "a", "commands": [{"action": "click [1]"}]}]}"#,
        )
        .unwrap();
        let report = score_tasks(&gold, &[], None, None).unwrap();
        assert_eq!(report.tasks[0].sequence, 0);
        assert_eq!(report.tasks[0].action, 0);
    }
}
