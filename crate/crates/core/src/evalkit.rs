//! Cosine scoring of trials, EER/AUC, bootstrap confidence intervals and
//! the cross-task table.
//!
//! EER is the crossing of the false-acceptance and false-rejection sweeps
//! (accept when score ≥ threshold, higher score = more likely same source),
//! with linear interpolation between the bracketing operating points. AUC is
//! the Mann–Whitney probability that a random positive outscores a random
//! negative, ties counted ½.

use crate::error::{Error, Result};
use crate::protocol::Trial;
use crate::util::{mix_seed, seeded_rng};
use ndarray::Array1;
use rand::Rng;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub enrol: String,
    pub test: String,
    pub target: bool,
    pub score: f64,
}

/// EER, AUC and their ±2σ bootstrap half-widths for one trial list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub eer: f64,
    pub auc: f64,
    pub eer_ci_halfwidth: f64,
    pub auc_ci_halfwidth: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_replicates: usize,
    pub skipped_replicates: usize,
    pub seed: u64,
}

/// Cosine scores for a trial list; order preserved.
pub fn score_trials(
    embeddings: &BTreeMap<String, Array1<f64>>,
    trials: &[Trial],
) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::with_capacity(trials.len());
    for t in trials {
        let e = embeddings
            .get(&t.enrol)
            .ok_or_else(|| Error::Lookup(format!("no embedding for '{}'", t.enrol)))?;
        let s = embeddings
            .get(&t.test)
            .ok_or_else(|| Error::Lookup(format!("no embedding for '{}'", t.test)))?;
        if e.len() != s.len() {
            return Err(Error::DimensionMismatch {
                left: e.len(),
                right: s.len(),
            });
        }
        let score = e.dot(s);
        if !score.is_finite() || score.abs() > 1.0 + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "cosine score {score} out of range for pair ({}, {})",
                t.enrol, t.test
            )));
        }
        out.push(ScoreRecord {
            enrol: t.enrol.clone(),
            test: t.test.clone(),
            target: t.target,
            score,
        });
    }
    Ok(out)
}

fn split_scores(scores: &[ScoreRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for s in scores {
        if !s.score.is_finite() {
            return Err(Error::InvalidArgument("non-finite score".into()));
        }
        if s.target {
            pos.push(s.score);
        } else {
            neg.push(s.score);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UndefinedMetric(
            "need at least one positive and one negative trial".into(),
        ));
    }
    Ok((pos, neg))
}

pub fn compute_eer(scores: &[ScoreRecord]) -> Result<f64> {
    let (pos, neg) = split_scores(scores)?;
    Ok(eer_from(&pos, &neg))
}

pub fn compute_auc(scores: &[ScoreRecord]) -> Result<f64> {
    let (pos, neg) = split_scores(scores)?;
    Ok(auc_from(&pos, &neg))
}

fn eer_from(pos: &[f64], neg: &[f64]) -> f64 {
    let mut pos_sorted = pos.to_vec();
    let mut neg_sorted = neg.to_vec();
    pos_sorted.sort_by(f64::total_cmp);
    neg_sorted.sort_by(f64::total_cmp);
    let np = pos_sorted.len() as f64;
    let nn = neg_sorted.len() as f64;

    // thresholds swept from +∞ down through every distinct score
    let mut thresholds: Vec<f64> = pos_sorted.iter().chain(neg_sorted.iter()).cloned().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.reverse();

    // far(t) = #(neg ≥ t)/nn, frr(t) = #(pos < t)/np
    let op = |t: f64| -> (f64, f64) {
        let below_pos = pos_sorted.partition_point(|&s| s < t);
        let below_neg = neg_sorted.partition_point(|&s| s < t);
        (
            (neg_sorted.len() - below_neg) as f64 / nn,
            below_pos as f64 / np,
        )
    };

    let (mut far1, mut frr1) = (0.0, 1.0); // t = +∞
    for &t in &thresholds {
        let (far2, frr2) = op(t);
        let d1 = frr1 - far1;
        let d2 = frr2 - far2;
        if d1 >= 0.0 && d2 <= 0.0 {
            let denom = d1 - d2;
            return if denom == 0.0 {
                far1
            } else {
                far1 + (d1 / denom) * (far2 - far1)
            };
        }
        far1 = far2;
        frr1 = frr2;
    }
    // frr − far is non-increasing from +1 at t=∞ to −1 at the lowest
    // threshold, so the sweep always brackets a crossing
    unreachable!("EER sweep must cross the diagonal")
}

fn auc_from(pos: &[f64], neg: &[f64]) -> f64 {
    // Mann–Whitney via average ranks, ties counted half
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for item in &all[i..=j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let np = pos.len() as f64;
    let nn = neg.len() as f64;
    (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn)
}

/// Metrics of one bootstrap replicate, or `None` when the resample collapses
/// to a single class. The stream depends only on `(seed, replicate)`, so
/// replicates can be evaluated in any order with identical results.
pub fn bootstrap_replicate(
    scores: &[ScoreRecord],
    seed: u64,
    replicate: u64,
) -> Option<(f64, f64)> {
    let mut rng = seeded_rng(mix_seed(seed, &[0x626f_6f74, replicate]));
    let n = scores.len();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for _ in 0..n {
        let s = &scores[rng.random_range(0..n)];
        if s.target {
            pos.push(s.score);
        } else {
            neg.push(s.score);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    Some((eer_from(&pos, &neg), auc_from(&pos, &neg)))
}

/// Resamples the trial list with replacement `n_replicates` times and
/// reports ±2σ half-widths. Replicates that degenerate to one class are
/// skipped; more than 10% skipped is an error.
pub fn bootstrap_ci(
    scores: &[ScoreRecord],
    n_replicates: usize,
    seed: u64,
) -> Result<ScoreReport> {
    if n_replicates < 1 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let (pos, neg) = split_scores(scores)?;
    let point_eer = eer_from(&pos, &neg);
    let point_auc = auc_from(&pos, &neg);

    let mut eers = Vec::with_capacity(n_replicates);
    let mut aucs = Vec::with_capacity(n_replicates);
    let mut skipped = 0usize;
    for r in 0..n_replicates {
        match bootstrap_replicate(scores, seed, r as u64) {
            Some((e, a)) => {
                eers.push(e);
                aucs.push(a);
            }
            None => skipped += 1,
        }
    }
    if skipped * 10 > n_replicates {
        return Err(Error::BootstrapDegenerate(format!(
            "{skipped} of {n_replicates} replicates lost a class"
        )));
    }
    let halfwidth = |v: &[f64]| -> f64 {
        if v.len() < 2 {
            return 0.0;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        2.0 * var.sqrt()
    };
    Ok(ScoreReport {
        eer: point_eer,
        auc: point_auc,
        eer_ci_halfwidth: halfwidth(&eers),
        auc_ci_halfwidth: halfwidth(&aucs),
        n_pos: pos.len(),
        n_neg: neg.len(),
        n_replicates,
        skipped_replicates: skipped,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub tpr: f64,
}

/// Operating points of the ROC sweep, for plotting.
pub fn roc_points(scores: &[ScoreRecord]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = split_scores(scores)?;
    let mut pos_sorted = pos;
    let mut neg_sorted = neg;
    pos_sorted.sort_by(f64::total_cmp);
    neg_sorted.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = pos_sorted.iter().chain(neg_sorted.iter()).cloned().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.reverse();
    let np = pos_sorted.len() as f64;
    let nn = neg_sorted.len() as f64;
    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        tpr: 0.0,
    }];
    for &t in &thresholds {
        let below_pos = pos_sorted.partition_point(|&s| s < t);
        let below_neg = neg_sorted.partition_point(|&s| s < t);
        out.push(RocPoint {
            threshold: t,
            far: (neg_sorted.len() - below_neg) as f64 / nn,
            tpr: (pos_sorted.len() - below_pos) as f64 / np,
        });
    }
    Ok(out)
}

/// The 2×2 cross-task table: rows are embedding extractors (source first,
/// speaker second), columns are tasks (source verification first, speaker
/// verification second).
#[derive(Debug, Clone)]
pub struct CrossTaskTable {
    pub cells: [[ScoreReport; 2]; 2],
}

pub const CROSS_TASK_EXTRACTORS: [&str; 2] = ["source", "speaker"];
pub const CROSS_TASK_TASKS: [&str; 2] = ["source", "speaker"];

/// Evaluates each embedding type on each task.
pub fn cross_task_report(
    source_embeds: &BTreeMap<String, Array1<f64>>,
    speaker_embeds: &BTreeMap<String, Array1<f64>>,
    source_trials: &[Trial],
    speaker_trials: &[Trial],
    n_replicates: usize,
    seed: u64,
) -> Result<CrossTaskTable> {
    let mut cells: Vec<ScoreReport> = Vec::with_capacity(4);
    for (row, embeds) in [source_embeds, speaker_embeds].into_iter().enumerate() {
        for (col, trials) in [source_trials, speaker_trials].into_iter().enumerate() {
            let scores = score_trials(embeds, trials)?;
            cells.push(bootstrap_ci(
                &scores,
                n_replicates,
                mix_seed(seed, &[row as u64, col as u64]),
            )?);
        }
    }
    let mut it = cells.into_iter();
    Ok(CrossTaskTable {
        cells: [
            [it.next().unwrap(), it.next().unwrap()],
            [it.next().unwrap(), it.next().unwrap()],
        ],
    })
}

// --- report writers ---------------------------------------------------------

pub fn write_score_file(path: &Path, scores: &[ScoreRecord]) -> Result<()> {
    let mut out = String::new();
    for s in scores {
        out.push_str(&format!("{} {} {}\n", s.enrol, s.test, s.score));
    }
    fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

/// `key = value` lines, one block per labeled report.
pub fn format_report_txt(reports: &[(String, ScoreReport)]) -> String {
    let mut out = String::new();
    for (name, r) in reports {
        out.push_str(&format!("{name}.eer = {:.6}\n", r.eer));
        out.push_str(&format!("{name}.eer_ci = {:.6}\n", r.eer_ci_halfwidth));
        out.push_str(&format!("{name}.auc = {:.6}\n", r.auc));
        out.push_str(&format!("{name}.auc_ci = {:.6}\n", r.auc_ci_halfwidth));
        out.push_str(&format!("{name}.n_pos = {}\n", r.n_pos));
        out.push_str(&format!("{name}.n_neg = {}\n", r.n_neg));
        out.push_str(&format!("{name}.bootstrap_runs = {}\n", r.n_replicates));
        out.push_str(&format!("{name}.seed = {}\n", r.seed));
    }
    out
}

/// Fixed-column machine-readable table. The `average` row carries the
/// arithmetic mean of the per-protocol metrics.
pub fn format_report_csv(reports: &[(String, ScoreReport)], with_average: bool) -> String {
    let mut out = String::from("protocol,eer,eer_ci,auc,auc_ci,n_pos,n_neg\n");
    for (name, r) in reports {
        out.push_str(&format!(
            "{name},{:.6},{:.6},{:.6},{:.6},{},{}\n",
            r.eer, r.eer_ci_halfwidth, r.auc, r.auc_ci_halfwidth, r.n_pos, r.n_neg
        ));
    }
    if with_average && !reports.is_empty() {
        let n = reports.len() as f64;
        let mean = |f: fn(&ScoreReport) -> f64| reports.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
        out.push_str(&format!(
            "average,{:.6},{:.6},{:.6},{:.6},{},{}\n",
            mean(|r| r.eer),
            mean(|r| r.eer_ci_halfwidth),
            mean(|r| r.auc),
            mean(|r| r.auc_ci_halfwidth),
            reports.iter().map(|(_, r)| r.n_pos).sum::<usize>(),
            reports.iter().map(|(_, r)| r.n_neg).sum::<usize>(),
        ));
    }
    out
}

pub fn write_roc_csv(path: &Path, scores: &[ScoreRecord]) -> Result<()> {
    let mut out = String::from("threshold,far,tpr\n");
    for p in roc_points(scores)? {
        out.push_str(&format!("{},{:.6},{:.6}\n", p.threshold, p.far, p.tpr));
    }
    fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

pub fn format_cross_task_csv(table: &CrossTaskTable) -> String {
    let mut out = String::from("extractor,task,eer,eer_ci,auc,auc_ci,n_pos,n_neg\n");
    for (i, row) in table.cells.iter().enumerate() {
        for (j, r) in row.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{},{}\n",
                CROSS_TASK_EXTRACTORS[i],
                CROSS_TASK_TASKS[j],
                r.eer,
                r.eer_ci_halfwidth,
                r.auc,
                r.auc_ci_halfwidth,
                r.n_pos,
                r.n_neg
            ));
        }
    }
    out
}
