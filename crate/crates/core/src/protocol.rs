//! Evaluation protocols P-I..P-IV: seen/unseen source crossed with
//! same/different pseudo-speaker, each exactly 1:1 balanced between
//! same-source positives and different-source negatives.
//!
//! Pseudo-speaker labels come from thresholding pairwise cosine similarity
//! of the frozen speaker embeddings and taking connected components, so a
//! chain of above-threshold pairs lands in one cluster.

use crate::error::{Error, Result};
use crate::synthdata::{CorpusTable, Split};
use crate::util::{mix_seed, seeded_rng};
use ndarray::ArrayView2;
use rand::Rng;
use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

pub const PROTOCOL_NAMES: [&str; 4] = ["P-I", "P-II", "P-III", "P-IV"];
pub const PROTOCOL_FILES: [&str; 4] = ["P1.trials", "P2.trials", "P3.trials", "P4.trials"];
pub const META_FILE: &str = "protocols.meta";

/// Default pseudo-speaker cosine threshold; the similarity histogram has a
/// clear valley there on low-noise corpora.
pub const DEFAULT_SPEAKER_THRESHOLD: f64 = 0.5;

/// One verification trial; `target` means both sides share a source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enrol: String,
    pub test: String,
    pub target: bool,
}

impl Trial {
    pub fn new(enrol: String, test: String, target: bool) -> Result<Self> {
        if enrol == test {
            return Err(Error::InvalidArgument(format!(
                "self-pair '{enrol}' is not a valid trial"
            )));
        }
        Ok(Trial {
            enrol,
            test,
            target,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSet {
    trials: [Vec<Trial>; 4],
    seed: u64,
    threshold: f64,
}

impl ProtocolSet {
    pub fn trials(&self, protocol: usize) -> &[Trial] {
        &self.trials[protocol]
    }

    pub fn all(&self) -> &[Vec<Trial>; 4] {
        &self.trials
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn counts(&self, protocol: usize) -> (usize, usize) {
        let pos = self.trials[protocol].iter().filter(|t| t.target).count();
        (pos, self.trials[protocol].len() - pos)
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[rb.max(ra)] = rb.min(ra);
        }
    }
}

/// Connected components of the graph with an edge wherever cosine ≥
/// `threshold`; component ids are numbered by order of first appearance in
/// the input.
pub fn assign_pseudo_speakers(
    ids: &[String],
    embeddings: ArrayView2<'_, f64>,
    threshold: f64,
) -> Result<HashMap<String, usize>> {
    if ids.len() != embeddings.nrows() {
        return Err(Error::DimensionMismatch {
            left: ids.len(),
            right: embeddings.nrows(),
        });
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be in (0,1), got {threshold}"
        )));
    }
    for (i, row) in embeddings.rows().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "embedding {} not unit-norm (‖x‖ = {n})",
                ids[i]
            )));
        }
    }
    let n = ids.len();
    let mut ds = DisjointSet::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if embeddings.row(i).dot(&embeddings.row(j)) >= threshold {
                ds.union(i, j);
            }
        }
    }
    let mut next = 0usize;
    let mut root_to_id: HashMap<usize, usize> = HashMap::new();
    let mut out = HashMap::with_capacity(n);
    for (i, id) in ids.iter().enumerate() {
        let root = ds.find(i);
        let pid = *root_to_id.entry(root).or_insert_with(|| {
            let v = next;
            next += 1;
            v
        });
        out.insert(id.clone(), pid);
    }
    Ok(out)
}

/// Builds the four protocols over the corpus' eval split. For each protocol
/// it samples, without replacement, `pairs_per_protocol` same-source
/// positives and as many different-source negatives satisfying that
/// protocol's speaker condition.
pub fn build_protocols(
    corpus: &CorpusTable,
    pseudo: &HashMap<String, usize>,
    pairs_per_protocol: usize,
    seed: u64,
    threshold: f64,
) -> Result<ProtocolSet> {
    if pairs_per_protocol == 0 {
        return Err(Error::InvalidArgument(
            "pairs_per_protocol must be ≥ 1".into(),
        ));
    }
    let eval_idx: Vec<usize> = (0..corpus.len())
        .filter(|&i| corpus.splits[i] == Split::Eval)
        .collect();
    for &i in &eval_idx {
        if !pseudo.contains_key(&corpus.ids[i]) {
            return Err(Error::Lookup(format!(
                "no pseudo-speaker label for eval utterance '{}'",
                corpus.ids[i]
            )));
        }
    }
    let seen_count = eval_idx.iter().filter(|&&i| corpus.seen[i]).count();
    if seen_count < 2 || eval_idx.len() - seen_count < 2 {
        return Err(Error::ProtocolInfeasible(
            "need at least 2 seen-source and 2 unseen-source eval utterances".into(),
        ));
    }

    let mut trials: [Vec<Trial>; 4] = Default::default();
    for (p, trials_p) in trials.iter_mut().enumerate() {
        let want_seen = p < 2; // P-I, P-II
        let want_same_speaker = p % 2 == 0; // P-I, P-III
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for (a, &i) in eval_idx.iter().enumerate() {
            if corpus.seen[i] != want_seen {
                continue;
            }
            for &j in &eval_idx[(a + 1)..] {
                if corpus.seen[j] != want_seen {
                    continue;
                }
                let same_speaker = pseudo[&corpus.ids[i]] == pseudo[&corpus.ids[j]];
                if same_speaker != want_same_speaker {
                    continue;
                }
                if corpus.sources[i] == corpus.sources[j] {
                    positives.push((i, j));
                } else {
                    negatives.push((i, j));
                }
            }
        }
        for (cell, pool) in [("positives", &mut positives), ("negatives", &mut negatives)] {
            if pool.len() < pairs_per_protocol {
                return Err(Error::ProtocolInfeasible(format!(
                    "{} {cell}: {} eligible pairs, need {pairs_per_protocol}",
                    PROTOCOL_NAMES[p],
                    pool.len()
                )));
            }
            let mut rng = seeded_rng(mix_seed(seed, &[p as u64, (cell == "positives") as u64]));
            partial_shuffle(pool, pairs_per_protocol, &mut rng);
            pool.truncate(pairs_per_protocol);
        }
        for (kind, pool) in [(true, &positives), (false, &negatives)] {
            for &(i, j) in pool {
                trials_p.push(Trial {
                    enrol: corpus.ids[i].clone(),
                    test: corpus.ids[j].clone(),
                    target: kind,
                });
            }
        }
    }
    Ok(ProtocolSet {
        trials,
        seed,
        threshold,
    })
}

/// Balanced speaker-verification trials over the eval split (key = shared
/// pseudo-speaker), for the cross-task table.
pub fn build_speaker_trials(
    corpus: &CorpusTable,
    pseudo: &HashMap<String, usize>,
    pairs: usize,
    seed: u64,
) -> Result<Vec<Trial>> {
    let eval_idx: Vec<usize> = (0..corpus.len())
        .filter(|&i| corpus.splits[i] == Split::Eval)
        .collect();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (a, &i) in eval_idx.iter().enumerate() {
        for &j in &eval_idx[(a + 1)..] {
            if pseudo[&corpus.ids[i]] == pseudo[&corpus.ids[j]] {
                positives.push((i, j));
            } else {
                negatives.push((i, j));
            }
        }
    }
    for (cell, pool) in [("positives", &mut positives), ("negatives", &mut negatives)] {
        if pool.len() < pairs {
            return Err(Error::ProtocolInfeasible(format!(
                "speaker-task {cell}: {} eligible pairs, need {pairs}",
                pool.len()
            )));
        }
        let mut rng = seeded_rng(mix_seed(seed, &[17, (cell == "positives") as u64]));
        partial_shuffle(pool, pairs, &mut rng);
        pool.truncate(pairs);
    }
    let mut trials = Vec::with_capacity(2 * pairs);
    for (kind, pool) in [(true, &positives), (false, &negatives)] {
        for &(i, j) in pool {
            trials.push(Trial {
                enrol: corpus.ids[i].clone(),
                test: corpus.ids[j].clone(),
                target: kind,
            });
        }
    }
    Ok(trials)
}

fn partial_shuffle<T>(pool: &mut [T], k: usize, rng: &mut impl Rng) {
    let n = pool.len();
    for i in 0..k.min(n.saturating_sub(1)) {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
}

/// Writes `P1.trials`..`P4.trials` plus a sidecar manifest with the counts
/// and the generating seed.
pub fn write_trials(dir: &Path, set: &ProtocolSet) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (p, file) in PROTOCOL_FILES.iter().enumerate() {
        let mut out = String::new();
        for t in set.trials(p) {
            out.push_str(&format!(
                "{} {} {}\n",
                t.enrol,
                t.test,
                if t.target { 1 } else { 0 }
            ));
        }
        fs::File::create(dir.join(file))?.write_all(out.as_bytes())?;
    }
    let mut meta = String::from("# sdml-protocols v1\n");
    meta.push_str(&format!("seed = {}\n", set.seed));
    meta.push_str(&format!("threshold = {}\n", set.threshold));
    for p in 0..4 {
        let (pos, neg) = set.counts(p);
        meta.push_str(&format!("P{}_positives = {pos}\n", p + 1));
        meta.push_str(&format!("P{}_negatives = {neg}\n", p + 1));
    }
    fs::File::create(dir.join(META_FILE))?.write_all(meta.as_bytes())?;
    Ok(())
}

/// Reads a trial list in the `enrol test key` line format.
pub fn read_trial_file(path: &Path) -> Result<Vec<Trial>> {
    let text = fs::read_to_string(path)?;
    let mut trials = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 'enrol test key', found {} fields", parts.len()),
            });
        }
        let target = match parts[2] {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("key must be 0 or 1, found '{other}'"),
                })
            }
        };
        let trial =
            Trial::new(parts[0].to_string(), parts[1].to_string(), target).map_err(|e| {
                Error::Parse {
                    line: lineno,
                    msg: e.to_string(),
                }
            })?;
        trials.push(trial);
    }
    Ok(trials)
}

pub fn read_trials(dir: &Path) -> Result<ProtocolSet> {
    let meta = fs::read_to_string(dir.join(META_FILE))?;
    let mut seed = None;
    let mut threshold = None;
    for line in meta.lines() {
        if let Some((k, v)) = line.split_once('=') {
            match k.trim() {
                "seed" => seed = v.trim().parse::<u64>().ok(),
                "threshold" => threshold = v.trim().parse::<f64>().ok(),
                _ => {}
            }
        }
    }
    let seed = seed.ok_or_else(|| Error::Parse {
        line: 0,
        msg: "protocols.meta missing seed".into(),
    })?;
    let threshold = threshold.ok_or_else(|| Error::Parse {
        line: 0,
        msg: "protocols.meta missing threshold".into(),
    })?;
    let mut trials: [Vec<Trial>; 4] = Default::default();
    for (p, file) in PROTOCOL_FILES.iter().enumerate() {
        trials[p] = read_trial_file(&dir.join(file))?;
    }
    Ok(ProtocolSet {
        trials,
        seed,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{SynthConfig, SyntheticCorpus};
    use ndarray::{array, Array2};
    use std::sync::OnceLock;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("u{i:03}")).collect()
    }

    #[test]
    fn mutually_similar_vectors_form_one_component() {
        let e = array![[1.0, 0.0], [0.8, 0.6], [0.6, 0.8]];
        let map = assign_pseudo_speakers(&ids(3), e.view(), 0.5).unwrap();
        assert_eq!(map["u000"], 0);
        assert_eq!(map["u001"], 0);
        assert_eq!(map["u002"], 0);
    }

    #[test]
    fn orthogonal_clusters_stay_separate() {
        let e = array![[1.0, 0.0], [0.995, 0.0998749217771909], [0.0, 1.0]];
        let map = assign_pseudo_speakers(&ids(3), e.view(), 0.5).unwrap();
        assert_eq!(map["u000"], map["u001"]);
        assert_ne!(map["u000"], map["u002"]);
        assert_eq!(map["u002"], 1);
    }

    #[test]
    fn chains_close_transitively() {
        // cos(a,b) = 0.6, cos(b,c) = 0.6, cos(a,c) = 0.1
        let a = array![1.0f64, 0.0, 0.0];
        let b = array![0.6f64, 0.8, 0.0];
        let cy = (0.6 - 0.6 * 0.1) / 0.8;
        let c = array![0.1, cy, (1.0f64 - 0.01 - cy * cy).sqrt()];
        assert!((a.dot(&b) - 0.6).abs() < 1e-12);
        assert!((b.dot(&c) - 0.6).abs() < 1e-12);
        assert!((a.dot(&c) - 0.1).abs() < 1e-12);
        let mut e = Array2::zeros((3, 3));
        e.row_mut(0).assign(&a);
        e.row_mut(1).assign(&b);
        e.row_mut(2).assign(&c);
        let map = assign_pseudo_speakers(&ids(3), e.view(), 0.5).unwrap();

        // independent oracle: breadth-first transitive closure on the
        // explicit edge list
        let edges = [(0usize, 1usize), (1, 2)];
        let mut comp = [usize::MAX; 3];
        let mut next = 0;
        for s in 0..3 {
            if comp[s] != usize::MAX {
                continue;
            }
            let mut queue = vec![s];
            comp[s] = next;
            while let Some(v) = queue.pop() {
                for &(x, y) in &edges {
                    let other = if x == v {
                        y
                    } else if y == v {
                        x
                    } else {
                        continue;
                    };
                    if comp[other] == usize::MAX {
                        comp[other] = next;
                        queue.push(other);
                    }
                }
            }
            next += 1;
        }
        for i in 0..3 {
            assert_eq!(map[&format!("u{i:03}")], comp[i]);
        }
    }

    #[test]
    fn empty_input_gives_empty_map() {
        let e = Array2::zeros((0, 4));
        let map = assign_pseudo_speakers(&[], e.view(), 0.5).unwrap();
        assert!(map.is_empty());
    }

    fn shared_corpus() -> &'static (SyntheticCorpus, HashMap<String, usize>) {
        static CORPUS: OnceLock<(SyntheticCorpus, HashMap<String, usize>)> = OnceLock::new();
        CORPUS.get_or_init(|| {
            let corpus = SyntheticCorpus::generate(&SynthConfig::default()).unwrap();
            let table = corpus.to_oracle_table();
            let eval: Vec<usize> = (0..table.len())
                .filter(|&i| table.splits[i] == Split::Eval)
                .collect();
            let ids: Vec<String> = eval.iter().map(|&i| table.ids[i].clone()).collect();
            let mut embs = Array2::zeros((eval.len(), table.dim()));
            for (r, &i) in eval.iter().enumerate() {
                embs.row_mut(r).assign(&table.vectors.row(i));
            }
            let pseudo =
                assign_pseudo_speakers(&ids, embs.view(), DEFAULT_SPEAKER_THRESHOLD).unwrap();
            (corpus, pseudo)
        })
    }

    #[test]
    fn pseudo_speakers_recover_ground_truth_on_low_noise_corpus() {
        let (corpus, pseudo) = shared_corpus();
        // majority ground-truth speaker per component
        let mut votes: HashMap<(usize, usize), usize> = HashMap::new();
        let mut total = 0usize;
        for u in corpus.utterances() {
            if u.split != Split::Eval {
                continue;
            }
            *votes.entry((pseudo[&u.id], u.speaker)).or_default() += 1;
            total += 1;
        }
        let mut majority: HashMap<usize, (usize, usize)> = HashMap::new();
        for (&(comp, spk), &count) in &votes {
            let best = majority.entry(comp).or_insert((spk, count));
            if count > best.1 {
                *best = (spk, count);
            }
        }
        let mut agree = 0usize;
        for u in corpus.utterances() {
            if u.split != Split::Eval {
                continue;
            }
            if majority[&pseudo[&u.id]].0 == u.speaker {
                agree += 1;
            }
        }
        assert!(
            agree as f64 / total as f64 >= 0.99,
            "agreement {}/{total}",
            agree
        );
    }

    #[test]
    fn protocols_are_balanced_pure_and_deterministic() {
        let (corpus, pseudo) = shared_corpus();
        let table = corpus.to_feature_table();
        let set = build_protocols(&table, pseudo, 200, 7, 0.5).unwrap();
        let again = build_protocols(&table, pseudo, 200, 7, 0.5).unwrap();
        assert_eq!(set, again);

        let by_id: HashMap<&str, usize> = table
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        for p in 0..4 {
            let (pos, neg) = set.counts(p);
            assert_eq!(pos, 200, "{}", PROTOCOL_NAMES[p]);
            assert_eq!(neg, 200, "{}", PROTOCOL_NAMES[p]);
            let want_seen = p < 2;
            let want_same = p % 2 == 0;
            let mut dedup = std::collections::HashSet::new();
            for t in set.trials(p) {
                let i = by_id[t.enrol.as_str()];
                let j = by_id[t.test.as_str()];
                assert_ne!(t.enrol, t.test);
                let key = if t.enrol < t.test {
                    (t.enrol.clone(), t.test.clone())
                } else {
                    (t.test.clone(), t.enrol.clone())
                };
                assert!(dedup.insert(key), "duplicate unordered pair");
                assert_eq!(table.splits[i], Split::Eval);
                assert_eq!(table.splits[j], Split::Eval);
                assert_eq!(table.seen[i], want_seen);
                assert_eq!(table.seen[j], want_seen);
                assert_eq!(pseudo[&t.enrol] == pseudo[&t.test], want_same);
                assert_eq!(t.target, table.sources[i] == table.sources[j]);
            }
        }
    }

    #[test]
    fn infeasible_cell_is_named() {
        let (corpus, pseudo) = shared_corpus();
        let table = corpus.to_feature_table();
        match build_protocols(&table, pseudo, 10_000_000, 7, 0.5) {
            Err(Error::ProtocolInfeasible(msg)) => {
                assert!(msg.starts_with("P-I"), "got message '{msg}'")
            }
            other => panic!("expected infeasible error, got {other:?}"),
        }
    }

    #[test]
    fn trial_files_round_trip() {
        let (corpus, pseudo) = shared_corpus();
        let table = corpus.to_feature_table();
        let set = build_protocols(&table, pseudo, 50, 11, 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_trials(dir.path(), &set).unwrap();
        let loaded = read_trials(dir.path()).unwrap();
        assert_eq!(set, loaded);
    }

    #[test]
    fn trial_lines_parse_and_reject_self_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("ok.trials");
        fs::write(&good, "u001 u002 1\nu003 u004 0\n").unwrap();
        let trials = read_trial_file(&good).unwrap();
        assert_eq!(trials.len(), 2);
        assert!(trials[0].target);
        assert!(!trials[1].target);

        let bad = dir.path().join("bad.trials");
        fs::write(&bad, "u001 u001 1\n").unwrap();
        assert!(matches!(
            read_trial_file(&bad),
            Err(Error::Parse { line: 1, .. })
        ));
        let badkey = dir.path().join("badkey.trials");
        fs::write(&badkey, "u001 u002 2\n").unwrap();
        assert!(read_trial_file(&badkey).is_err());
    }

    #[test]
    fn speaker_trials_are_balanced() {
        let (corpus, pseudo) = shared_corpus();
        let table = corpus.to_feature_table();
        let trials = build_speaker_trials(&table, pseudo, 100, 3).unwrap();
        let pos = trials.iter().filter(|t| t.target).count();
        assert_eq!(pos, 100);
        assert_eq!(trials.len(), 200);
        for t in &trials {
            assert_eq!(t.target, pseudo[&t.enrol] == pseudo[&t.test]);
        }
    }
}
