//! Seeded synthetic SLU corpora.
//!
//! Each token owns a fixed random unit-vector prototype; an utterance renders
//! every token of its transcript as a run of noisy copies of that prototype.
//! The intent is the action group of the first token combined with the
//! scenario group of the last token, so labels are exact functions of the
//! transcript.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Sample;
use crate::nn::Tensor;
use crate::seed::{derive_seed, rng_for, sha256_hex};

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub min_frames_per_token: usize,
    pub max_frames_per_token: usize,
    pub noise_sigma: f64,
    pub num_actions: usize,
    pub num_scenarios: usize,
    /// Token → action group. Empty means `token % num_actions`.
    pub action_groups: Vec<usize>,
    /// Token → scenario group. Empty means `(token / num_actions) % num_scenarios`.
    pub scenario_groups: Vec<usize>,
    pub train_size: usize,
    pub valid_size: usize,
    pub test_size: usize,
    /// Frames of the silence prototype inserted between tokens.
    pub gap_frames: usize,
    /// Allow the same token twice in a row. Without gaps such repeats are
    /// acoustically indistinguishable from one long token.
    pub allow_adjacent_repeats: bool,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            vocab_size: 20,
            feature_dim: 16,
            min_tokens: 2,
            max_tokens: 8,
            min_frames_per_token: 4,
            max_frames_per_token: 8,
            noise_sigma: 0.3,
            num_actions: 3,
            num_scenarios: 3,
            action_groups: Vec::new(),
            scenario_groups: Vec::new(),
            train_size: 2000,
            valid_size: 200,
            test_size: 500,
            gap_frames: 0,
            allow_adjacent_repeats: false,
            seed: 1234,
        }
    }
}

impl CorpusConfig {
    pub fn num_labels(&self) -> usize {
        self.num_actions * self.num_scenarios
    }

    pub fn action_of(&self, token: usize) -> usize {
        self.action_groups
            .get(token)
            .copied()
            .unwrap_or(token % self.num_actions)
    }

    pub fn scenario_of(&self, token: usize) -> usize {
        self.scenario_groups
            .get(token)
            .copied()
            .unwrap_or((token / self.num_actions) % self.num_scenarios)
    }

    pub fn split_size(&self, split: &str) -> usize {
        match split {
            "train" => self.train_size,
            "valid" => self.valid_size,
            "test" => self.test_size,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.vocab_size < 2 || self.feature_dim == 0 {
            return bad("vocab_size must be at least 2 and feature_dim positive".into());
        }
        if self.min_tokens < 2 {
            return bad(format!(
                "min_tokens = {} breaks group coverage: first and last token must be distinct draws (need ≥ 2)",
                self.min_tokens
            ));
        }
        if self.max_tokens < self.min_tokens {
            return bad("max_tokens below min_tokens".into());
        }
        if self.min_frames_per_token < 3 {
            return bad(format!(
                "min_frames_per_token = {} cannot guarantee CTC feasibility after subsampling (need ≥ 3)",
                self.min_frames_per_token
            ));
        }
        if self.max_frames_per_token < self.min_frames_per_token {
            return bad("max_frames_per_token below min_frames_per_token".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be a finite non-negative number".into());
        }
        if self.num_actions == 0 || self.num_scenarios == 0 {
            return bad("num_actions and num_scenarios must be positive".into());
        }
        for (name, map, groups) in [
            ("action_groups", &self.action_groups, self.num_actions),
            ("scenario_groups", &self.scenario_groups, self.num_scenarios),
        ] {
            if !map.is_empty() && map.len() != self.vocab_size {
                return bad(format!("{name} must map every one of {} tokens", self.vocab_size));
            }
            if let Some(g) = map.iter().find(|&&g| g >= groups) {
                return bad(format!("{name} references group {g} of {groups}"));
            }
        }
        if self.train_size == 0 || self.valid_size == 0 || self.test_size == 0 {
            return bad("every split needs at least one utterance".into());
        }
        // Every intent needs a token of its action group and one of its scenario group.
        for intent in 0..self.num_labels() {
            let (a, s) = (intent / self.num_scenarios, intent % self.num_scenarios);
            let has_action = (0..self.vocab_size).any(|t| self.action_of(t) == a);
            let has_scenario = (0..self.vocab_size).any(|t| self.scenario_of(t) == s);
            if !(has_action && has_scenario) {
                return bad(format!("intent {} is unreachable", self.label_name(intent)));
            }
        }
        Ok(())
    }

    pub fn token_name(&self, token: usize) -> String {
        format!("w{token:02}")
    }

    pub fn label_name(&self, label: usize) -> String {
        format!(
            "action{}_scenario{}",
            label / self.num_scenarios,
            label % self.num_scenarios
        )
    }

    pub fn vocab(&self) -> Vec<String> {
        (0..self.vocab_size).map(|t| self.token_name(t)).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.num_labels()).map(|l| self.label_name(l)).collect()
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// `action(first) · num_scenarios + scenario(last)`.
pub fn label_of(transcript: &[usize], config: &CorpusConfig) -> Result<usize> {
    let (Some(&first), Some(&last)) = (transcript.first(), transcript.last()) else {
        return Err(Error::InvalidInput("label of an empty transcript".into()));
    };
    Ok(config.action_of(first) * config.num_scenarios + config.scenario_of(last))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub frames: Tensor,
    pub transcript: Vec<usize>,
    pub label: usize,
}

impl Utterance {
    pub fn sample(&self) -> Sample<'_> {
        Sample {
            frames: &self.frames,
            transcript: &self.transcript,
            label: self.label,
        }
    }
}

/// Fixed per-token unit vectors plus the silence prototype (last row).
pub fn prototypes(config: &CorpusConfig) -> Vec<Vec<f64>> {
    (0..=config.vocab_size)
        .map(|t| {
            let mut rng = rng_for(config.seed, &["prototype", &t.to_string()]);
            loop {
                let v: Vec<f64> = (0..config.feature_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-6 {
                    break v.into_iter().map(|x| x / norm).collect();
                }
            }
        })
        .collect()
}

pub fn utterance_seed(config: &CorpusConfig, split: &str, index: usize) -> u64 {
    derive_seed(config.seed, &["utterance", split, &index.to_string()])
}

fn sample_transcript(config: &CorpusConfig, rng: &mut impl Rng) -> Vec<usize> {
    let len = rng.random_range(config.min_tokens..=config.max_tokens);
    let mut out: Vec<usize> = Vec::with_capacity(len);
    while out.len() < len {
        let t = rng.random_range(0..config.vocab_size);
        if !config.allow_adjacent_repeats && out.last() == Some(&t) {
            continue;
        }
        out.push(t);
    }
    out
}

/// Frames for `transcript`: one noisy run of `[f_min, f_max]` frames per token.
pub fn render_utterance(
    transcript: &[usize],
    config: &CorpusConfig,
    protos: &[Vec<f64>],
    utterance_seed: u64,
) -> Result<Tensor> {
    if transcript.is_empty() {
        return Err(Error::InvalidInput("cannot render an empty transcript".into()));
    }
    if let Some(&bad) = transcript.iter().find(|&&t| t >= config.vocab_size) {
        return Err(Error::InvalidInput(format!("token {bad} outside vocabulary")));
    }
    let mut rng = rng_for(utterance_seed, &["render"]);
    let noise = Normal::new(0.0, config.noise_sigma)
        .map_err(|e| Error::Config(format!("noise: {e}")))?;
    let silence = &protos[config.vocab_size];
    let mut values = Vec::new();
    let mut frames = 0;
    for (i, &tok) in transcript.iter().enumerate() {
        if i > 0 {
            for _ in 0..config.gap_frames {
                values.extend(silence.iter().map(|&p| p + noise.sample(&mut rng)));
                frames += 1;
            }
        }
        let run = rng.random_range(config.min_frames_per_token..=config.max_frames_per_token);
        for _ in 0..run {
            values.extend(protos[tok].iter().map(|&p| p + noise.sample(&mut rng)));
            frames += 1;
        }
    }
    Tensor::new(vec![frames, config.feature_dim], values)
}

pub fn generate_utterance(
    config: &CorpusConfig,
    protos: &[Vec<f64>],
    split: &str,
    index: usize,
) -> Result<Utterance> {
    let seed = utterance_seed(config, split, index);
    let mut rng = rng_for(seed, &["transcript"]);
    let transcript = sample_transcript(config, &mut rng);
    let frames = render_utterance(&transcript, config, protos, seed)?;
    let label = label_of(&transcript, config)?;
    Ok(Utterance {
        id: format!("{split}-{index:06}"),
        frames,
        transcript,
        label,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub vocab: Vec<String>,
    pub labels: Vec<String>,
    pub train: Vec<Utterance>,
    pub valid: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl Corpus {
    pub fn split(&self, name: &str) -> Result<&[Utterance]> {
        match name {
            "train" => Ok(&self.train),
            "valid" => Ok(&self.valid),
            "test" => Ok(&self.test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let protos = prototypes(config);
    let gen_split = |split: &str| -> Result<Vec<Utterance>> {
        (0..config.split_size(split))
            .map(|i| generate_utterance(config, &protos, split, i))
            .collect()
    };
    let train = gen_split("train")?;
    let mut seen = vec![false; config.num_labels()];
    for u in &train {
        seen[u.label] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::Config(format!(
            "intent {} never occurs in the training split",
            config.label_name(missing)
        )));
    }
    Ok(Corpus {
        vocab: config.vocab(),
        labels: config.labels(),
        train,
        valid: gen_split("valid")?,
        test: gen_split("test")?,
        config: config.clone(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    transcript: Vec<String>,
    label: String,
    frames: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: CorpusConfig,
    pub config_hash: String,
    pub files: BTreeMap<String, String>,
}

fn split_bytes(utts: &[Utterance], vocab: &[String], labels: &[String]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for u in utts {
        let record = Record {
            id: u.id.clone(),
            transcript: u.transcript.iter().map(|&t| vocab[t].clone()).collect(),
            label: labels[u.label].clone(),
            frames: u.frames.to_rows(),
        };
        serde_json::to_writer(&mut buf, &record)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

fn lines_bytes(items: &[String]) -> Vec<u8> {
    let mut buf = Vec::new();
    for item in items {
        buf.extend_from_slice(item.as_bytes());
        buf.push(b'\n');
    }
    buf
}

/// Writes `{train,valid,test}.jsonl`, `vocab.txt`, `labels.txt` and
/// `manifest.json` into `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut files = BTreeMap::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        fs::write(dir.join(&name), &bytes)?;
        files.insert(name, sha256_hex(&bytes));
        Ok(())
    };
    for split in SPLITS {
        put(
            format!("{split}.jsonl"),
            split_bytes(corpus.split(split)?, &corpus.vocab, &corpus.labels)?,
        )?;
    }
    put("vocab.txt".into(), lines_bytes(&corpus.vocab))?;
    put("labels.txt".into(), lines_bytes(&corpus.labels))?;
    let manifest = Manifest {
        config: corpus.config.clone(),
        config_hash: corpus.config.config_hash(),
        files,
    };
    let mut w = BufWriter::new(fs::File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(manifest)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Reads one split file, resolving token and label strings to ids.
pub fn read_split(path: &Path, vocab: &[String], labels: &[String]) -> Result<Vec<Utterance>> {
    let file = fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let token_ids: BTreeMap<&str, usize> = vocab.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let label_ids: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let where_ = || format!("{}:{}", path.display(), lineno + 1);
        let record: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}: {e}", where_())))?;
        let transcript = record
            .transcript
            .iter()
            .map(|t| {
                token_ids
                    .get(t.as_str())
                    .copied()
                    .ok_or_else(|| Error::Data(format!("{}: unknown token {t:?}", where_())))
            })
            .collect::<Result<Vec<_>>>()?;
        let label = *label_ids
            .get(record.label.as_str())
            .ok_or_else(|| Error::Data(format!("{}: unknown label {:?}", where_(), record.label)))?;
        let frames = Tensor::from_rows(&record.frames)
            .map_err(|e| Error::Data(format!("{}: frames: {e}", where_())))?;
        out.push(Utterance {
            id: record.id,
            frames,
            transcript,
            label,
        });
    }
    Ok(out)
}

/// Loads a corpus directory written by [`write_corpus`].
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_slice(
        &fs::read(&manifest_path).map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?,
    )
    .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    let vocab = read_lines(&dir.join("vocab.txt"))?;
    let labels = read_lines(&dir.join("labels.txt"))?;
    let mut splits = Vec::new();
    for split in SPLITS {
        splits.push(read_split(&dir.join(format!("{split}.jsonl")), &vocab, &labels)?);
    }
    let [train, valid, test]: [Vec<Utterance>; 3] = splits.try_into().expect("three splits");
    Ok(Corpus {
        config: manifest.config,
        vocab,
        labels,
        train,
        valid,
        test,
    })
}
