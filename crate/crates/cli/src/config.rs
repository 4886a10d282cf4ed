//! Layered run configuration: defaults, then a TOML file, then the
//! `CTC_SLU_SEED` environment variable, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use ctc_slu::model::ModelConfig;
use ctc_slu::synth::CorpusConfig;
use ctc_slu::trainer::TrainConfig;

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "CTC_SLU_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutConfig {
    /// Dataset directory read by training and written by `gen`.
    pub data_dir: PathBuf,
    /// Parent of the per-run directories.
    pub runs_dir: PathBuf,
}

impl Default for OutConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            runs_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub out: OutConfig,
}

impl RunConfig {
    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.runs_dir.join(self.train.ablation.name())
    }

    pub fn write_echo(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), self.to_toml()?)?;
        Ok(())
    }
}

/// One `section.key=value` override; the value is parsed as TOML and falls
/// back to a bare string.
pub fn parse_assignment(text: &str) -> CliResult<(Vec<String>, Value)> {
    let (path, raw) = text
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {text:?} is not key=value")))?;
    let path: Vec<String> = path.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("bad key in override {text:?}")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> CliResult<()> {
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut cur = table;
    for key in parents {
        let entry = cur.entry(key.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{} is not a section", path.join("."))))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn has_path(table: &Table, path: &[&str]) -> bool {
    let mut cur = table;
    for (i, key) in path.iter().enumerate() {
        match cur.get(*key) {
            Some(Value::Table(t)) if i + 1 < path.len() => cur = t,
            Some(_) if i + 1 == path.len() => return true,
            _ => return false,
        }
    }
    false
}

fn merge(base: &mut Table, overlay: Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Sources of a resolved configuration, lowest precedence first.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    pub file: Option<PathBuf>,
    pub env_seed: Option<String>,
    pub overrides: Vec<(Vec<String>, Value)>,
}

impl ConfigSources {
    pub fn from_env(file: Option<PathBuf>, overrides: Vec<(Vec<String>, Value)>) -> Self {
        Self {
            file,
            env_seed: std::env::var(SEED_ENV).ok(),
            overrides,
        }
    }
}

pub fn resolve(sources: &ConfigSources) -> CliResult<RunConfig> {
    let defaults = toml::Table::try_from(RunConfig::default())
        .map_err(|e| CliError::Config(format!("cannot serialize defaults: {e}")))?;
    let mut layers: Vec<Table> = Vec::new();
    if let Some(path) = &sources.file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        layers.push(
            text.parse::<Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        );
    }
    if let Some(raw) = &sources.env_seed {
        let seed: i64 = raw
            .trim()
            .parse()
            .ok()
            .filter(|s| *s >= 0)
            .ok_or_else(|| CliError::Config(format!("{SEED_ENV}={raw:?} is not a non-negative integer")))?;
        let mut t = Table::new();
        set_path(&mut t, &["corpus".into(), "seed".into()], Value::Integer(seed))?;
        set_path(&mut t, &["train".into(), "seed".into()], Value::Integer(seed))?;
        layers.push(t);
    }
    let mut flags = Table::new();
    for (path, value) in &sources.overrides {
        set_path(&mut flags, path, value.clone())?;
    }
    layers.push(flags);

    let explicit = |path: &[&str]| layers.iter().any(|l| has_path(l, path));
    let sets_vocab = explicit(&["model", "vocab_size"]);
    let sets_labels = explicit(&["model", "num_labels"]);
    let sets_features = explicit(&["model", "feature_dim"]);

    let mut merged = defaults;
    for layer in layers {
        merge(&mut merged, layer);
    }
    let mut config: RunConfig = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    if !sets_vocab {
        config.model.vocab_size = config.corpus.vocab_size;
    }
    if !sets_labels {
        config.model.num_labels = config.corpus.num_labels();
    }
    if !sets_features {
        config.model.feature_dim = config.corpus.feature_dim;
    }
    config.corpus.validate()?;
    config.model.validate()?;
    config.train.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn over(items: &[&str]) -> Vec<(Vec<String>, Value)> {
        items.iter().map(|s| parse_assignment(s).unwrap()).collect()
    }

    #[test]
    fn defaults_resolve() {
        let c = resolve(&ConfigSources::default()).unwrap();
        assert_eq!(c.corpus, CorpusConfig::default());
        assert_eq!(c.model.num_labels, 9);
    }

    #[test]
    fn precedence_is_file_then_env_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "[train]\nseed = 5\nlr = 0.01\n[corpus]\ntrain_size = 50\n").unwrap();
        let mut s = ConfigSources { file: Some(file), ..Default::default() };
        let c = resolve(&s).unwrap();
        assert_eq!((c.train.seed, c.train.lr, c.corpus.train_size), (5, 0.01, 50));

        s.env_seed = Some("11".into());
        let c = resolve(&s).unwrap();
        assert_eq!((c.train.seed, c.corpus.seed), (11, 11));

        s.overrides = over(&["train.seed=3", "train.ablation=no_ctc"]);
        let c = resolve(&s).unwrap();
        assert_eq!((c.train.seed, c.corpus.seed), (3, 11));
        assert_eq!(c.train.ablation.name(), "no_ctc");
    }

    #[test]
    fn echo_round_trips() {
        let s = ConfigSources { overrides: over(&["train.lr=0.003", "corpus.noise_sigma=0.1"]), ..Default::default() };
        let c = resolve(&s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        c.write_echo(dir.path()).unwrap();
        let again = resolve(&ConfigSources { file: Some(dir.path().join("config.toml")), ..Default::default() }).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        let s = ConfigSources { overrides: over(&["train.nonsense=1"]), ..Default::default() };
        assert!(matches!(resolve(&s), Err(CliError::Config(_))));
        let s = ConfigSources { overrides: over(&["corpus.min_tokens=1"]), ..Default::default() };
        let err = resolve(&s).unwrap_err();
        assert!(err.to_string().contains("min_tokens"), "{err}");
        let s = ConfigSources { env_seed: Some("abc".into()), ..Default::default() };
        assert!(matches!(resolve(&s), Err(CliError::Config(_))));
        assert!(parse_assignment("novalue").is_err());
    }

    #[test]
    fn assignment_values_parse_as_toml() {
        assert_eq!(parse_assignment("a.b=3").unwrap().1, Value::Integer(3));
        assert_eq!(parse_assignment("a=[0.25, 0.5]").unwrap().1.as_array().unwrap().len(), 2);
        assert_eq!(parse_assignment("a=full").unwrap().1, Value::String("full".into()));
    }
}
