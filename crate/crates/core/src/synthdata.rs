//! Synthetic corpus with a controllable source/speaker entanglement dial,
//! plus a frozen speaker-embedding oracle.
//!
//! Every utterance is `x = α·u_source + β·v_speaker + ε` with fixed seeded
//! latent directions per source and speaker. A seeded fraction of sources is
//! held out of training entirely. The oracle returns the normalized speaker
//! latent plus a small per-utterance observation noise, fixed at generation
//! time and never trained.

use crate::error::{Error, Result};
use crate::util::{l2_norm, mix_seed, normalize_rows, normalized, seeded_rng};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_sources: usize,
    pub n_speakers: usize,
    pub utterances_per_pair: usize,
    pub feature_dim: usize,
    /// α: weight of the source latent.
    pub source_strength: f64,
    /// β: weight of the speaker latent.
    pub speaker_strength: f64,
    pub noise_sigma: f64,
    pub unseen_source_fraction: f64,
    pub oracle_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sources: 12,
            n_speakers: 20,
            utterances_per_pair: 25,
            feature_dim: 32,
            source_strength: 1.0,
            speaker_strength: 1.0,
            noise_sigma: 0.3,
            unseen_source_fraction: 1.0 / 3.0,
            oracle_noise_sigma: 0.05,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sources < 4 {
            return Err(Error::Config("need at least 4 sources".into()));
        }
        if self.n_speakers < 4 {
            return Err(Error::Config("need at least 4 speakers".into()));
        }
        if self.utterances_per_pair < 1 {
            return Err(Error::Config("need at least 1 utterance per pair".into()));
        }
        if self.feature_dim < 2 {
            return Err(Error::Config("feature_dim must be ≥ 2".into()));
        }
        for (name, v) in [
            ("source_strength", self.source_strength),
            ("speaker_strength", self.speaker_strength),
            ("noise_sigma", self.noise_sigma),
            ("oracle_noise_sigma", self.oracle_noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        if self.source_strength == 0.0 && self.speaker_strength == 0.0 {
            return Err(Error::Config(
                "at least one of source/speaker strength must be positive".into(),
            ));
        }
        if !(self.unseen_source_fraction > 0.0 && self.unseen_source_fraction < 1.0) {
            return Err(Error::Config(format!(
                "unseen_source_fraction must be in (0,1), got {}",
                self.unseen_source_fraction
            )));
        }
        let unseen = self.n_unseen();
        if unseen < 2 || self.n_sources - unseen < 2 {
            return Err(Error::Config(format!(
                "split infeasible: {} unseen of {} sources leaves fewer than 2 on a side",
                unseen, self.n_sources
            )));
        }
        Ok(())
    }

    pub fn n_unseen(&self) -> usize {
        (self.n_sources as f64 * self.unseen_source_fraction).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub source: usize,
    pub speaker: usize,
    pub split: Split,
    pub seen_source: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    config: SynthConfig,
    utterances: Vec<Utterance>,
    features: Array2<f64>,
    oracle: Array2<f64>,
    source_latents: Array2<f64>,
    speaker_latents: Array2<f64>,
    unseen_sources: Vec<usize>,
    id_index: HashMap<String, usize>,
}

/// Fraction of each seen-source cell held out for evaluation.
const SEEN_EVAL_FRACTION: f64 = 0.2;

impl SyntheticCorpus {
    pub fn generate(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let dim = config.feature_dim;

        // independent substreams so each piece is reproducible in isolation
        let mut rng_src = seeded_rng(mix_seed(config.seed, &[1]));
        let mut rng_spk = seeded_rng(mix_seed(config.seed, &[2]));
        let mut rng_unseen = seeded_rng(mix_seed(config.seed, &[3]));
        let mut rng_noise = seeded_rng(mix_seed(config.seed, &[4]));
        let mut rng_oracle = seeded_rng(mix_seed(config.seed, &[5]));

        let mut source_latents =
            Array2::from_shape_fn((config.n_sources, dim), |_| StandardNormal.sample(&mut rng_src));
        normalize_rows(&mut source_latents);

        // near-orthogonal speaker directions keep the pseudo-speaker cosine
        // valley wide; Gram-Schmidt when the dimension allows it
        let mut speaker_latents = Array2::from_shape_fn((config.n_speakers, dim), |_| {
            StandardNormal.sample(&mut rng_spk)
        });
        if config.n_speakers <= dim {
            orthonormalize_rows(&mut speaker_latents);
        } else {
            normalize_rows(&mut speaker_latents);
        }

        let mut order: Vec<usize> = (0..config.n_sources).collect();
        order.shuffle(&mut rng_unseen);
        let mut unseen_sources: Vec<usize> = order[..config.n_unseen()].to_vec();
        unseen_sources.sort_unstable();

        let n = config.n_sources * config.n_speakers * config.utterances_per_pair;
        let mut features = Array2::zeros((n, dim));
        let mut oracle = Array2::zeros((n, dim));
        let mut utterances = Vec::with_capacity(n);
        let upp = config.utterances_per_pair;
        let eval_per_cell = if upp >= 2 {
            ((upp as f64 * SEEN_EVAL_FRACTION).round() as usize).clamp(1, upp - 1)
        } else {
            0
        };

        let mut idx = 0usize;
        for source in 0..config.n_sources {
            let seen = !unseen_sources.contains(&source);
            for speaker in 0..config.n_speakers {
                for r in 0..upp {
                    for d in 0..dim {
                        let eps: f64 = StandardNormal.sample(&mut rng_noise);
                        features[[idx, d]] = config.source_strength * source_latents[[source, d]]
                            + config.speaker_strength * speaker_latents[[speaker, d]]
                            + config.noise_sigma * eps;
                    }
                    let mut v = Array1::zeros(dim);
                    for d in 0..dim {
                        let eta: f64 = StandardNormal.sample(&mut rng_oracle);
                        v[d] =
                            speaker_latents[[speaker, d]] + config.oracle_noise_sigma * eta;
                    }
                    let v = normalized(v.view());
                    oracle.row_mut(idx).assign(&v);

                    let split = if !seen || r >= upp - eval_per_cell {
                        Split::Eval
                    } else {
                        Split::Train
                    };
                    utterances.push(Utterance {
                        id: format!("u{idx:06}"),
                        source,
                        speaker,
                        split,
                        seen_source: seen,
                    });
                    idx += 1;
                }
            }
        }

        // unseen sources never reach the train split
        debug_assert!(utterances
            .iter()
            .all(|u| u.seen_source || u.split == Split::Eval));

        let id_index = utterances
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id.clone(), i))
            .collect();

        Ok(SyntheticCorpus {
            config: config.clone(),
            utterances,
            features,
            oracle,
            source_latents,
            speaker_latents,
            unseen_sources,
            id_index,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn oracle_embeddings(&self) -> ArrayView2<'_, f64> {
        self.oracle.view()
    }

    pub fn unseen_sources(&self) -> &[usize] {
        &self.unseen_sources
    }

    pub fn source_latents(&self) -> ArrayView2<'_, f64> {
        self.source_latents.view()
    }

    pub fn speaker_latents(&self) -> ArrayView2<'_, f64> {
        self.speaker_latents.view()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.id_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("unknown utterance id '{id}'")))
    }

    /// Frozen speaker embedding of an utterance, by id.
    pub fn speaker_oracle_embed(&self, id: &str) -> Result<ArrayView1<'_, f64>> {
        Ok(self.oracle.row(self.index_of(id)?))
    }

    /// Frozen speaker embedding looked up by the exact feature vector the
    /// generator produced.
    pub fn speaker_oracle_embed_for_features(
        &self,
        features: ArrayView1<'_, f64>,
    ) -> Result<ArrayView1<'_, f64>> {
        for (i, row) in self.features.rows().into_iter().enumerate() {
            if row == features {
                return Ok(self.oracle.row(i));
            }
        }
        Err(Error::Lookup(
            "feature vector does not belong to this corpus".into(),
        ))
    }

    pub fn to_feature_table(&self) -> CorpusTable {
        self.make_table(self.features.view())
    }

    pub fn to_oracle_table(&self) -> CorpusTable {
        self.make_table(self.oracle.view())
    }

    fn make_table(&self, vectors: ArrayView2<'_, f64>) -> CorpusTable {
        CorpusTable {
            ids: self.utterances.iter().map(|u| u.id.clone()).collect(),
            sources: self
                .utterances
                .iter()
                .map(|u| format!("s{:02}", u.source))
                .collect(),
            speakers: self
                .utterances
                .iter()
                .map(|u| format!("p{:02}", u.speaker))
                .collect(),
            splits: self.utterances.iter().map(|u| u.split).collect(),
            seen: self.utterances.iter().map(|u| u.seen_source).collect(),
            vectors: vectors.to_owned(),
        }
    }
}

fn orthonormalize_rows(m: &mut Array2<f64>) {
    let rows = m.nrows();
    for i in 0..rows {
        for j in 0..i {
            let proj = m.row(i).dot(&m.row(j));
            let prev = m.row(j).to_owned();
            let mut row = m.row_mut(i);
            row.scaled_add(-proj, &prev);
        }
        let n = l2_norm(m.row(i));
        m.row_mut(i).mapv_inplace(|v| v / n);
    }
}

/// One labeled vector per row: utterance id, source id, speaker id, split,
/// seen/unseen flag, then the comma-separated values. The same format
/// carries generated features, oracle embeddings and imported embeddings.
#[derive(Debug, Clone)]
pub struct CorpusTable {
    pub ids: Vec<String>,
    pub sources: Vec<String>,
    pub speakers: Vec<String>,
    pub splits: Vec<Split>,
    pub seen: Vec<bool>,
    pub vectors: Array2<f64>,
}

impl CorpusTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn write(&self, path: &Path, kind_tag: &str) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("# sdml-{kind_tag} v1\n"));
        for i in 0..self.len() {
            let values: Vec<String> = self.vectors.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&format!(
                "{} {} {} {} {} {}\n",
                self.ids[i],
                self.sources[i],
                self.speakers[i],
                self.splits[i],
                if self.seen[i] { "seen" } else { "unseen" },
                values.join(",")
            ));
        }
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut ids = Vec::new();
        let mut sources = Vec::new();
        let mut speakers = Vec::new();
        let mut splits = Vec::new();
        let mut seen = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut dim = None;
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 6 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected 6 fields, found {}", parts.len()),
                });
            }
            let split = match parts[3] {
                "train" => Split::Train,
                "eval" => Split::Eval,
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("bad split '{other}'"),
                    })
                }
            };
            let seen_flag = match parts[4] {
                "seen" => true,
                "unseen" => false,
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("bad visibility flag '{other}'"),
                    })
                }
            };
            let values: Vec<f64> = parts[5]
                .split(',')
                .map(|v| {
                    v.parse::<f64>().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("bad float '{v}'"),
                    })
                })
                .collect::<Result<_>>()?;
            if let Some(d) = dim {
                if values.len() != d {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("expected {d} values, found {}", values.len()),
                    });
                }
            } else {
                dim = Some(values.len());
            }
            ids.push(parts[0].to_string());
            sources.push(parts[1].to_string());
            speakers.push(parts[2].to_string());
            splits.push(split);
            seen.push(seen_flag);
            rows.push(values);
        }
        let d = dim.unwrap_or(0);
        let mut vectors = Array2::zeros((rows.len(), d));
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                vectors[[i, j]] = v;
            }
        }
        Ok(CorpusTable {
            ids,
            sources,
            speakers,
            splits,
            seen,
            vectors,
        })
    }
}
