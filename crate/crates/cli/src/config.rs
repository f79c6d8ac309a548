//! Experiment configuration: flat `key = value` files with dotted
//! keys, command-line overrides, canonical serialization, and the
//! stable config hash.

use micro_core::dataset::{SplitMode, SplitSpec, SynthSpec};
use micro_core::error::{Error, Result};
use micro_core::model::{Backbone, Precision, TrainerConfig};
use micro_core::rng::derive_seed;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Default)]
pub struct DatasetConfig {
    pub interactions: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    /// (modality name, feature path), ordered by name.
    pub features: Vec<(String, PathBuf)>,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub split: SplitSpec,
    pub trainer: TrainerConfig,
    pub synth: SynthSpec,
    pub eval_ks: Vec<usize>,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            split: SplitSpec::default(),
            trainer: TrainerConfig::default(),
            synth: SynthSpec::default(),
            eval_ks: vec![20],
            cache_dir: None,
        }
    }
}

fn parse_kv_text(path_label: &str, text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: path_label.to_string(),
                line: lineno + 1,
                message: "expected `key = value`".into(),
            });
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Loads a config file, applies `--set key=value` overrides (bare keys
/// are shorthand for `trainer.<key>`), and resolves derived seeds.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> Result<ExperimentConfig> {
    let mut map = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::io(p.display().to_string(), e))?;
            parse_kv_text(&p.display().to_string(), &text)?
        }
        None => BTreeMap::new(),
    };
    for s in sets {
        let Some((key, value)) = s.split_once('=') else {
            return Err(Error::Config(format!("--set expects key=value, got `{s}`")));
        };
        let key = key.trim();
        let full = if key.contains('.') {
            key.to_string()
        } else if matches!(key, "seed" | "out" | "precision") {
            key.to_string()
        } else {
            format!("trainer.{key}")
        };
        map.insert(full, value.trim().to_string());
    }
    from_map(map)
}

fn from_map(mut map: BTreeMap<String, String>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();

    fn take(map: &mut BTreeMap<String, String>, key: &str) -> Option<String> {
        map.remove(key)
    }
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse::<T>()
            .map_err(|_| Error::Config(format!("bad value `{value}` for key `{key}`")))
    }
    fn parse_bool(key: &str, value: &str) -> Result<bool> {
        match value {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(Error::Config(format!("bad boolean `{value}` for key `{key}`"))),
        }
    }

    if let Some(v) = take(&mut map, "seed") {
        config.seed = parse("seed", &v)?;
    }
    if let Some(v) = take(&mut map, "out") {
        config.out = PathBuf::from(v);
    }
    if let Some(v) = take(&mut map, "precision") {
        config.trainer.precision = match v.as_str() {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            _ => return Err(Error::Config(format!("bad precision `{v}`"))),
        };
    }
    if let Some(v) = take(&mut map, "cache_dir") {
        config.cache_dir = Some(PathBuf::from(v));
    }

    if let Some(v) = take(&mut map, "dataset.interactions") {
        config.dataset.interactions = Some(PathBuf::from(v));
    }
    if let Some(v) = take(&mut map, "dataset.manifest") {
        config.dataset.manifest = Some(PathBuf::from(v));
    }
    let feature_keys: Vec<String> = map
        .keys()
        .filter(|k| k.starts_with("dataset.feature."))
        .cloned()
        .collect();
    for key in feature_keys {
        let name = key.trim_start_matches("dataset.feature.").to_string();
        let path = PathBuf::from(map.remove(&key).unwrap());
        config.dataset.features.push((name, path));
    }

    if let Some(v) = take(&mut map, "split.mode") {
        config.split.mode = match v.as_str() {
            "warm" => SplitMode::Warm,
            "cold" => SplitMode::Cold,
            _ => return Err(Error::Config(format!("bad split.mode `{v}`"))),
        };
    }
    if let Some(v) = take(&mut map, "split.train_ratio") {
        config.split.train_ratio = parse("split.train_ratio", &v)?;
    }
    if let Some(v) = take(&mut map, "split.valid_ratio") {
        config.split.valid_ratio = parse("split.valid_ratio", &v)?;
    }
    if let Some(v) = take(&mut map, "split.test_ratio") {
        config.split.test_ratio = parse("split.test_ratio", &v)?;
    }
    if let Some(v) = take(&mut map, "split.cold_fraction") {
        config.split.cold_fraction = parse("split.cold_fraction", &v)?;
    }
    let explicit_split_seed = take(&mut map, "split.seed");

    let t = &mut config.trainer;
    if let Some(v) = take(&mut map, "trainer.d") {
        t.embedding_dim = parse("trainer.d", &v)?;
    }
    if let Some(v) = take(&mut map, "trainer.lr") {
        t.learning_rate = parse("trainer.lr", &v)?;
    }
    if let Some(v) = take(&mut map, "trainer.l2") {
        t.l2 = parse("trainer.l2", &v)?;
    }
    if let Some(v) = take(&mut map, "trainer.batch") {
        t.batch_size = parse("trainer.batch", &v)?;
    }
    if let Some(v) = take(&mut map, "trainer.k") {
        t.knn_k = parse("trainer.k", &v)?;
    }
    if let Some(v) = take(&mut map, "trainer.lambda") {
        t.lambda = parse("trainer.lambda", &v)?;
    }
    if let Some(v) = take(&mut map, "trainer.tau") {
        t.tau = parse("trainer.tau", &v)?;
    }
    if let Some(v) = take(&mut map, "trainer.beta") {
        t.beta = parse("trainer.beta", &v)?;
    }
    if let Some(v) = take(&mut map, "trainer.layers") {
        t.layers = parse("trainer.layers", &v)?;
    }
    if let Some(v) = take(&mut map, "trainer.patience") {
        t.patience = parse("trainer.patience", &v)?;
    }
    if let Some(v) = take(&mut map, "trainer.max_epochs") {
        t.max_epochs = parse("trainer.max_epochs", &v)?;
    }
    if let Some(v) = take(&mut map, "trainer.backbone") {
        t.backbone = v.parse::<Backbone>()?;
    }
    if let Some(v) = take(&mut map, "trainer.lightgcn_layers") {
        t.lightgcn_layers = parse("trainer.lightgcn_layers", &v)?;
    }
    if let Some(v) = take(&mut map, "trainer.modalities") {
        t.modalities = if v.is_empty() {
            Vec::new()
        } else {
            v.split(',').map(|s| s.trim().to_string()).collect()
        };
    }
    for (key, field) in [
        ("trainer.no_contrast", 0usize),
        ("trainer.cf_plus_feats", 1),
        ("trainer.micro_over_feats", 2),
        ("trainer.plain_cf", 3),
        ("trainer.keep_self_loops", 4),
        ("trainer.symmetric_negatives", 5),
        ("trainer.separate_item_table", 6),
        ("trainer.full_catalog_contrast", 7),
        ("trainer.refresh_selection_per_epoch", 8),
    ] {
        if let Some(v) = take(&mut map, key) {
            let b = parse_bool(key, &v)?;
            match field {
                0 => t.no_contrast = b,
                1 => t.cf_plus_feats = b,
                2 => t.micro_over_feats = b,
                3 => t.plain_cf = b,
                4 => t.keep_self_loops = b,
                5 => t.symmetric_negatives = b,
                6 => t.separate_item_table = b,
                7 => t.full_catalog_contrast = b,
                _ => t.refresh_selection_per_epoch = b,
            }
        }
    }

    if let Some(v) = take(&mut map, "eval.k") {
        config.eval_ks = v
            .split(',')
            .map(|s| parse::<usize>("eval.k", s.trim()))
            .collect::<Result<_>>()?;
        if config.eval_ks.is_empty() {
            return Err(Error::Config("eval.k must list at least one cutoff".into()));
        }
    }

    let s = &mut config.synth;
    if let Some(v) = take(&mut map, "synth.users") {
        s.users = parse("synth.users", &v)?;
    }
    if let Some(v) = take(&mut map, "synth.items") {
        s.items = parse("synth.items", &v)?;
    }
    if let Some(v) = take(&mut map, "synth.rank") {
        s.rank = parse("synth.rank", &v)?;
    }
    if let Some(v) = take(&mut map, "synth.noise") {
        s.noise = parse("synth.noise", &v)?;
    }
    if let Some(v) = take(&mut map, "synth.saturation") {
        s.saturation = parse("synth.saturation", &v)?;
    }
    if let Some(v) = take(&mut map, "synth.clusters") {
        s.clusters = parse("synth.clusters", &v)?;
    }
    if let Some(v) = take(&mut map, "synth.exposure_skew") {
        s.exposure_skew = parse("synth.exposure_skew", &v)?;
    }
    if let Some(v) = take(&mut map, "synth.interactions_min") {
        s.interactions_per_user.0 = parse("synth.interactions_min", &v)?;
    }
    if let Some(v) = take(&mut map, "synth.interactions_max") {
        s.interactions_per_user.1 = parse("synth.interactions_max", &v)?;
    }
    let modality_keys: Vec<String> = map
        .keys()
        .filter(|k| k.starts_with("synth.modality."))
        .cloned()
        .collect();
    if !modality_keys.is_empty() {
        s.modalities.clear();
        for key in modality_keys {
            let name = key.trim_start_matches("synth.modality.").to_string();
            let dim: usize = parse(&key, &map.remove(&key).unwrap())?;
            s.modalities.push((name, dim));
        }
    }
    let explicit_synth_seed = take(&mut map, "synth.seed");

    if let Some(stray) = map.keys().next() {
        return Err(Error::Config(format!("unknown config key `{stray}`")));
    }

    // All randomness flows from the master seed unless a subsystem
    // seed is pinned explicitly.
    config.trainer.seed = config.seed;
    config.split.seed = match explicit_split_seed {
        Some(v) => parse("split.seed", &v)?,
        None => derive_seed(config.seed, "split"),
    };
    config.synth.seed = match explicit_synth_seed {
        Some(v) => parse("synth.seed", &v)?,
        None => derive_seed(config.seed, "synth"),
    };

    // Environment-provided graph cache location.
    if config.cache_dir.is_none() {
        if let Ok(dir) = std::env::var("MICRO_CACHE_DIR") {
            if !dir.is_empty() {
                config.cache_dir = Some(PathBuf::from(dir));
            }
        }
    }
    Ok(config)
}

impl ExperimentConfig {
    /// Canonical flat serialization; parsing it back yields the same
    /// resolved config.
    pub fn to_canonical_text(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        lines.push(format!("seed = {}", self.seed));
        lines.push(format!("out = {}", self.out.display()));
        if let Some(dir) = &self.cache_dir {
            lines.push(format!("cache_dir = {}", dir.display()));
        }
        if let Some(p) = &self.dataset.interactions {
            lines.push(format!("dataset.interactions = {}", p.display()));
        }
        if let Some(p) = &self.dataset.manifest {
            lines.push(format!("dataset.manifest = {}", p.display()));
        }
        for (name, path) in &self.dataset.features {
            lines.push(format!("dataset.feature.{name} = {}", path.display()));
        }
        lines.push(format!(
            "split.mode = {}",
            match self.split.mode {
                SplitMode::Warm => "warm",
                SplitMode::Cold => "cold",
            }
        ));
        lines.push(format!("split.train_ratio = {}", self.split.train_ratio));
        lines.push(format!("split.valid_ratio = {}", self.split.valid_ratio));
        lines.push(format!("split.test_ratio = {}", self.split.test_ratio));
        lines.push(format!("split.cold_fraction = {}", self.split.cold_fraction));
        lines.push(format!("split.seed = {}", self.split.seed));
        let t = &self.trainer;
        lines.push(format!("trainer.d = {}", t.embedding_dim));
        lines.push(format!("trainer.lr = {}", t.learning_rate));
        lines.push(format!("trainer.l2 = {}", t.l2));
        lines.push(format!("trainer.batch = {}", t.batch_size));
        lines.push(format!("trainer.k = {}", t.knn_k));
        lines.push(format!("trainer.lambda = {}", t.lambda));
        lines.push(format!("trainer.tau = {}", t.tau));
        lines.push(format!("trainer.beta = {}", t.beta));
        lines.push(format!("trainer.layers = {}", t.layers));
        lines.push(format!("trainer.patience = {}", t.patience));
        lines.push(format!("trainer.max_epochs = {}", t.max_epochs));
        lines.push(format!(
            "trainer.backbone = {}",
            match t.backbone {
                Backbone::Mf => "mf",
                Backbone::Lightgcn => "lightgcn",
            }
        ));
        lines.push(format!("trainer.lightgcn_layers = {}", t.lightgcn_layers));
        lines.push(format!("trainer.modalities = {}", t.modalities.join(",")));
        lines.push(format!("trainer.no_contrast = {}", t.no_contrast));
        lines.push(format!("trainer.cf_plus_feats = {}", t.cf_plus_feats));
        lines.push(format!("trainer.micro_over_feats = {}", t.micro_over_feats));
        lines.push(format!("trainer.plain_cf = {}", t.plain_cf));
        lines.push(format!("trainer.keep_self_loops = {}", t.keep_self_loops));
        lines.push(format!("trainer.symmetric_negatives = {}", t.symmetric_negatives));
        lines.push(format!("trainer.separate_item_table = {}", t.separate_item_table));
        lines.push(format!(
            "trainer.full_catalog_contrast = {}",
            t.full_catalog_contrast
        ));
        lines.push(format!(
            "trainer.refresh_selection_per_epoch = {}",
            t.refresh_selection_per_epoch
        ));
        lines.push(format!(
            "precision = {}",
            match t.precision {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            }
        ));
        lines.push(format!(
            "eval.k = {}",
            self.eval_ks
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        let s = &self.synth;
        lines.push(format!("synth.users = {}", s.users));
        lines.push(format!("synth.items = {}", s.items));
        lines.push(format!("synth.rank = {}", s.rank));
        lines.push(format!("synth.noise = {}", s.noise));
        lines.push(format!("synth.saturation = {}", s.saturation));
        lines.push(format!("synth.clusters = {}", s.clusters));
        lines.push(format!("synth.exposure_skew = {}", s.exposure_skew));
        lines.push(format!("synth.interactions_min = {}", s.interactions_per_user.0));
        lines.push(format!("synth.interactions_max = {}", s.interactions_per_user.1));
        for (name, dim) in &s.modalities {
            lines.push(format!("synth.modality.{name} = {dim}"));
        }
        lines.push(format!("synth.seed = {}", s.seed));
        lines.join("\n") + "\n"
    }

    /// 64-bit digest of the semantically meaningful configuration
    /// (everything except output/cache locations), hex-encoded.
    pub fn hash(&self) -> String {
        let text = self.to_canonical_text();
        let semantic: String = text
            .lines()
            .filter(|l| !l.starts_with("out = ") && !l.starts_with("cache_dir = "))
            .collect::<Vec<_>>()
            .join("\n");
        let digest = Sha256::digest(semantic.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
