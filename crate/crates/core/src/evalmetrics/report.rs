use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scenedata::SceneGraph;
use crate::trainer::{PredictionSet, Task};

use super::{
    corpus_recall_at_k, mean_recall_at_k, node_accuracy, occlusion_split_recall, score_wtd, wmap, WmapMode,
};

pub const RECALL_KS: [usize; 3] = [20, 50, 100];

/// All metrics for one task, as fractions. `None` marks a metric with
/// nothing to measure (e.g. an empty occlusion split).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMetrics {
    pub task: Task,
    pub recall: [Option<f64>; 3],
    pub mean_recall: [Option<f64>; 3],
    pub occluded_recall: [Option<f64>; 3],
    pub clear_recall: [Option<f64>; 3],
    pub wmap_rel: Option<f64>,
    pub wmap_phr: Option<f64>,
    pub score_wtd: Option<f64>,
    pub node_accuracy: Option<f64>,
}

impl TaskMetrics {
    fn empty(task: Task) -> Self {
        Self {
            task,
            recall: [None; 3],
            mean_recall: [None; 3],
            occluded_recall: [None; 3],
            clear_recall: [None; 3],
            wmap_rel: None,
            wmap_phr: None,
            score_wtd: None,
            node_accuracy: None,
        }
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        RECALL_KS.iter().position(|&x| x == k).and_then(|i| self.recall[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Mean per-scene homophily of the evaluated scenes.
    pub homophily: Option<f64>,
    pub tasks: Vec<TaskMetrics>,
}

pub fn evaluate(preds: &PredictionSet, scenes: &[SceneGraph]) -> Result<TaskMetrics> {
    let mut m = TaskMetrics::empty(preds.task);
    for (i, &k) in RECALL_KS.iter().enumerate() {
        m.recall[i] = corpus_recall_at_k(preds, scenes, k)?;
        m.mean_recall[i] = mean_recall_at_k(preds, scenes, k)?;
        let (c, s) = occlusion_split_recall(preds, scenes, k)?;
        m.occluded_recall[i] = c;
        m.clear_recall[i] = s;
    }
    m.wmap_rel = wmap(preds, scenes, WmapMode::Rel)?;
    m.wmap_phr = wmap(preds, scenes, WmapMode::Phr)?;
    m.score_wtd = match (m.recall[1], m.wmap_rel, m.wmap_phr) {
        (Some(r), Some(a), Some(b)) => Some(score_wtd(r, a, b)),
        _ => None,
    };
    m.node_accuracy = node_accuracy(preds, scenes)?;
    Ok(m)
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{:.1}", 100.0 * x))
}

impl MetricsReport {
    pub fn task(&self, task: Task) -> Option<&TaskMetrics> {
        self.tasks.iter().find(|t| t.task == task)
    }

    /// `metric,task,K,value` rows; values are fractions, `NA` when undefined.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,task,K,value\n");
        let _ = writeln!(s, "homophily,all,,{}", fmt_value(self.homophily));
        for t in &self.tasks {
            let name = t.task.name();
            for (metric, vals) in [
                ("R", &t.recall),
                ("mR", &t.mean_recall),
                ("C-R", &t.occluded_recall),
                ("S-R", &t.clear_recall),
            ] {
                for (k, v) in RECALL_KS.iter().zip(vals) {
                    let _ = writeln!(s, "{metric},{name},{k},{}", fmt_value(*v));
                }
            }
            for (metric, v) in [
                ("wmAP_rel", t.wmap_rel),
                ("wmAP_phr", t.wmap_phr),
                ("score_wtd", t.score_wtd),
                ("node_acc", t.node_accuracy),
            ] {
                let _ = writeln!(s, "{metric},{name},,{}", fmt_value(v));
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut report = MetricsReport { homophily: None, tasks: Vec::new() };
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if n == 0 || line.is_empty() {
                if n == 0 && line != "metric,task,K,value" {
                    return Err(Error::Parse { line: 1, msg: format!("unexpected header `{line}`") });
                }
                continue;
            }
            let err = |msg: String| Error::Parse { line: n + 1, msg };
            let cols: Vec<&str> = line.split(',').collect();
            let [metric, task, k, value] = cols[..] else {
                return Err(err(format!("expected 4 columns, got {}", cols.len())));
            };
            let value = match value {
                "NA" => None,
                v => Some(v.parse::<f64>().map_err(|_| err(format!("bad value `{v}`")))?),
            };
            if metric == "homophily" {
                report.homophily = value;
                continue;
            }
            let task = Task::parse(task).map_err(|e| err(e.to_string()))?;
            let idx = match report.tasks.iter().position(|t| t.task == task) {
                Some(i) => i,
                None => {
                    report.tasks.push(TaskMetrics::empty(task));
                    report.tasks.len() - 1
                }
            };
            let t = &mut report.tasks[idx];
            let slot = |k: &str| -> Result<usize> {
                let k: usize = k.parse().map_err(|_| err(format!("bad K `{k}`")))?;
                RECALL_KS.iter().position(|&x| x == k).ok_or_else(|| err(format!("unsupported K {k}")))
            };
            match metric {
                "R" => t.recall[slot(k)?] = value,
                "mR" => t.mean_recall[slot(k)?] = value,
                "C-R" => t.occluded_recall[slot(k)?] = value,
                "S-R" => t.clear_recall[slot(k)?] = value,
                "wmAP_rel" => t.wmap_rel = value,
                "wmAP_phr" => t.wmap_phr = value,
                "score_wtd" => t.score_wtd = value,
                "node_acc" => t.node_accuracy = value,
                other => return Err(err(format!("unknown metric `{other}`"))),
            }
        }
        Ok(report)
    }

    /// Percent scale, one decimal.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "homophily: {}", self.homophily.map_or("NA".into(), |h| format!("{h:.3}")));
        let _ = writeln!(
            s,
            "{:<8} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>8} {:>8} {:>9} {:>8}",
            "task", "R@20", "R@50", "R@100", "mR@20", "mR@50", "mR@100", "C-R@50", "S-R@50", "wmAPrel", "wmAPphr",
            "scoreWtd", "nodeAcc"
        );
        for t in &self.tasks {
            let _ = writeln!(
                s,
                "{:<8} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>8} {:>8} {:>9} {:>8}",
                t.task.name(),
                pct(t.recall[0]),
                pct(t.recall[1]),
                pct(t.recall[2]),
                pct(t.mean_recall[0]),
                pct(t.mean_recall[1]),
                pct(t.mean_recall[2]),
                pct(t.occluded_recall[1]),
                pct(t.clear_recall[1]),
                pct(t.wmap_rel),
                pct(t.wmap_phr),
                pct(t.score_wtd),
                pct(t.node_accuracy),
            );
        }
        s
    }
}
