//! Task Success Rate and per-role accuracy over predicted vs ground-truth
//! triplet sequences, plus the aggregated table report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{triplet_equals, ActionTriplet, InstanceId, ReasonerMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "1P")]
    OnePerson,
    #[serde(rename = "2P")]
    TwoPersons,
    #[serde(rename = "1P+R")]
    OnePersonRobot,
    #[serde(rename = "2P+R")]
    TwoPersonsRobot,
}

impl Setting {
    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::OnePerson => "1P",
            Setting::TwoPersons => "2P",
            Setting::OnePersonRobot => "1P+R",
            Setting::TwoPersonsRobot => "2P+R",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SortingFruits,
    Pouring,
    Handover,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::SortingFruits => "sorting_fruits",
            Scenario::Pouring => "pouring",
            Scenario::Handover => "handover",
        }
    }
}

/// One recording's ordered triplets with its identifying tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletSequence {
    pub recording: String,
    pub scenario: Scenario,
    pub setting: Setting,
    pub triplets: Vec<ActionTriplet>,
}

impl TripletSequence {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsrReport {
    pub tsr: f64,
    pub matched: usize,
    pub gt_len: usize,
    pub pred_len: usize,
    /// Predicted triplets left unmatched by the alignment.
    pub insertions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleAccuracyReport {
    pub action_acc: f64,
    pub object_acc: f64,
    /// Denominator: per-actor index pairs plus unpaired leftovers.
    pub pairs: usize,
}

/// Longest common subsequence between the two sequences under the given
/// equality; among maximum matchings, the lexicographically smallest list
/// of (gt index, pred index) pairs is returned.
pub fn lcs_align<F>(gt: &[ActionTriplet], pred: &[ActionTriplet], eq: F) -> Vec<(usize, usize)>
where
    F: Fn(&ActionTriplet, &ActionTriplet) -> bool,
{
    let n = gt.len();
    let m = pred.len();
    // lcs[i][j] = LCS length of gt[i..], pred[j..]
    let mut lcs = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if eq(&gt[i], &pred[j]) {
                1 + lcs[i + 1][j + 1]
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }
    let mut pairs = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < n && j < m && lcs[i][j] > 0 {
        if eq(&gt[i], &pred[j]) && lcs[i][j] == 1 + lcs[i + 1][j + 1] {
            pairs.push((i, j));
            i += 1;
            j += 1;
        } else if lcs[i][j + 1] == lcs[i][j] {
            // keep gt[i], look for a smaller pred index later
            j += 1;
        } else {
            i += 1;
        }
    }
    pairs
}

/// TSR = matched / |gt| under the order-preserving alignment. Unmatched
/// predictions are reported as insertions, not folded into the rate.
pub fn compute_tsr(gt: &TripletSequence, pred: &TripletSequence) -> TsrReport {
    let matched = lcs_align(&gt.triplets, &pred.triplets, triplet_equals).len();
    let gt_len = gt.len();
    let pred_len = pred.len();
    let tsr = if gt_len == 0 {
        if pred_len == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        matched as f64 / gt_len as f64
    };
    TsrReport { tsr, matched, gt_len, pred_len, insertions: pred_len - matched }
}

/// Pair gt and pred triplets per actor by temporal index; over all pairs,
/// count equal actions and equal (object, on) pairs. Leftovers on either
/// side count as misses in both denominators.
pub fn compute_role_accuracy(gt: &TripletSequence, pred: &TripletSequence) -> RoleAccuracyReport {
    let mut by_actor: BTreeMap<InstanceId, (Vec<&ActionTriplet>, Vec<&ActionTriplet>)> =
        BTreeMap::new();
    for t in &gt.triplets {
        by_actor.entry(t.actor).or_default().0.push(t);
    }
    for t in &pred.triplets {
        by_actor.entry(t.actor).or_default().1.push(t);
    }
    let mut denom = 0usize;
    let mut action_hits = 0usize;
    let mut object_hits = 0usize;
    for (_, (gts, preds)) in by_actor {
        denom += gts.len().max(preds.len());
        for (g, p) in gts.iter().zip(&preds) {
            if g.action == p.action {
                action_hits += 1;
            }
            if g.object == p.object && g.on == p.on {
                object_hits += 1;
            }
        }
    }
    if denom == 0 {
        return RoleAccuracyReport { action_acc: 1.0, object_acc: 1.0, pairs: 0 };
    }
    RoleAccuracyReport {
        action_acc: action_hits as f64 / denom as f64,
        object_acc: object_hits as f64 / denom as f64,
        pairs: denom,
    }
}

/// One evaluated recording, tagged for aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingResult {
    pub recording: String,
    pub scenario: Scenario,
    pub setting: Setting,
    pub mode: ReasonerMode,
    pub tsr: TsrReport,
    pub roles: RoleAccuracyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub scenario: Scenario,
    pub setting: Setting,
    pub mode: ReasonerMode,
    pub mean_tsr: f64,
    pub runs: usize,
}

/// Mean TSR per scenario x setting x mode cell plus the overall mean per
/// mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub cells: Vec<TableCell>,
    pub overall: Vec<(ReasonerMode, f64)>,
}

pub fn report_table(results: &[RecordingResult]) -> TableReport {
    let mut groups: BTreeMap<(ReasonerMode, Scenario, Setting), Vec<f64>> = BTreeMap::new();
    let mut per_mode: BTreeMap<ReasonerMode, Vec<f64>> = BTreeMap::new();
    for r in results {
        groups.entry((r.mode, r.scenario, r.setting)).or_default().push(r.tsr.tsr);
        per_mode.entry(r.mode).or_default().push(r.tsr.tsr);
    }
    let cells = groups
        .into_iter()
        .map(|((mode, scenario, setting), vals)| TableCell {
            scenario,
            setting,
            mode,
            mean_tsr: mean(&vals),
            runs: vals.len(),
        })
        .collect();
    let overall = per_mode.into_iter().map(|(mode, vals)| (mode, mean(&vals))).collect();
    TableReport { cells, overall }
}

fn mean(vals: &[f64]) -> f64 {
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Aligned text rendering of the aggregate report.
pub fn render_table(report: &TableReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<20} {:<16} {:<8} {:>6} {:>8}\n",
        "mode", "scenario", "setting", "runs", "tsr"
    ));
    for cell in &report.cells {
        out.push_str(&format!(
            "{:<20} {:<16} {:<8} {:>6} {:>8.3}\n",
            cell.mode.as_str(),
            cell.scenario.as_str(),
            cell.setting.as_str(),
            cell.runs,
            cell.mean_tsr
        ));
    }
    for (mode, tsr) in &report.overall {
        out.push_str(&format!("{:<20} {:<16} {:<8} {:>6} {:>8.3}\n", mode.as_str(), "all", "-", "", tsr));
    }
    out
}
