//! Configuration file and the `augment` / `evaluate` / `train` / `compare`
//! commands built on it.
//!
//! Relative paths in a config file resolve against the file's directory.
//! The top-level `seed` drives everything: the k-shot draw, augmentation,
//! service backoff jitter and training (it replaces `train.seed`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{
    Amount, AugmentSpec, AugmentedSet, Augmenter, ConfusionTable, KeyboardLayout, Method,
    MisspellTable, NoAugmentation, Resources, RuleAugmenter, Thesaurus,
};
use crate::corpus::{k_shot_sample, load_dataset, merge_augmented, Dataset, Fields, Format, Role};
use crate::embed::{load_sentence_vectors, load_vectors, EmbeddingStore, VectorFormat};
use crate::error::PipelineError;
use crate::llm::{LlmAugmenter, LlmClient, LlmServiceConfig};
use crate::metrics::{report, Aggregation, QualityReport, DEFAULT_EPSILON};
use crate::synth::{SynthConfig, SynthWorld};
use crate::trainer::{run_algorithm1, train_on_augmented, TrainConfig, TrainRun};

pub const DEFAULT_VARIANTS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub base: PathBuf,
    pub novel: PathBuf,
    /// Held-out novel samples. Without it the novel samples not drawn into
    /// the k-shot set form the test split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// `jsonl` or `csv`; inferred from each file's extension when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default = "text_field")]
    pub text_field: String,
    #[serde(default = "label_field")]
    pub label_field: String,
    #[serde(default = "id_field")]
    pub id_field: String,
}

fn text_field() -> String {
    "text".into()
}
fn label_field() -> String {
    "label".into()
}
fn id_field() -> String {
    "id".into()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// word2vec text format.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub word_vectors: Option<PathBuf>,
    /// JSONL of `{"id": ..., "vector": [...]}`; overrides pooling for those ids.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentence_vectors: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppdb: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wordnet: Option<PathBuf>,
    /// word2vec text format.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counter_fitted: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keyboard: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ocr: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misspellings: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_neighbors: Option<usize>,
}

/// One `[[methods]]` entry. `rate` and `count` are exclusive; with neither
/// the rate is 0.1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default = "default_variants")]
    pub n_variants: usize,
}

fn default_variants() -> usize {
    DEFAULT_VARIANTS
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        MethodConfig {
            method: method.name().into(),
            rate: None,
            count: None,
            n_variants: DEFAULT_VARIANTS,
        }
    }

    fn amount(&self) -> Result<Amount, PipelineError> {
        match (self.rate, self.count) {
            (Some(_), Some(_)) => Err(PipelineError::Config(format!(
                "method {}: set rate or count, not both",
                self.method
            ))),
            (Some(r), None) => Ok(Amount::Rate(r)),
            (None, Some(c)) => Ok(Amount::Count(c)),
            (None, None) => Ok(Amount::default()),
        }
    }
}

/// A method name on the command line: a real method or the `raw`
/// no-augmentation baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodChoice {
    Raw,
    Method(Method),
}

impl MethodChoice {
    pub fn name(self) -> &'static str {
        match self {
            MethodChoice::Raw => "raw",
            MethodChoice::Method(m) => m.name(),
        }
    }
}

impl FromStr for MethodChoice {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "raw" | "none" => Ok(MethodChoice::Raw),
            other => Method::from_str(other)
                .map(MethodChoice::Method)
                .map_err(|e| PipelineError::Usage(e.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_k_shot")]
    pub k_shot: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
    /// Points every service endpoint at one host, e.g. a local mock server.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_base_url: Option<String>,
    pub data: DataConfig,
    #[serde(default)]
    pub embeddings: EmbeddingConfig,
    #[serde(default)]
    pub resources: ResourceConfig,
    #[serde(default)]
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub llm: LlmServiceConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_k_shot() -> usize {
    2
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

/// Command-line values that replace config entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub k_shot: Option<usize>,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub offline: bool,
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn existing(root: &Path, p: &mut PathBuf, what: &str) -> Result<(), PipelineError> {
    *p = resolve(root, p);
    if !p.exists() {
        return Err(PipelineError::Config(format!(
            "{what}: {} does not exist",
            p.display()
        )));
    }
    Ok(())
}

impl PipelineConfig {
    /// Reads, resolves and validates a config file, then applies `overrides`.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let root = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(root)?;
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, root: &Path) -> Result<(), PipelineError> {
        existing(root, &mut self.data.base, "data.base")?;
        existing(root, &mut self.data.novel, "data.novel")?;
        if let Some(p) = &mut self.data.test {
            existing(root, p, "data.test")?;
        }
        let e = &mut self.embeddings;
        for (p, what) in [
            (&mut e.word_vectors, "embeddings.word_vectors"),
            (&mut e.sentence_vectors, "embeddings.sentence_vectors"),
        ] {
            if let Some(p) = p {
                existing(root, p, what)?;
            }
        }
        let r = &mut self.resources;
        for (p, what) in [
            (&mut r.ppdb, "resources.ppdb"),
            (&mut r.wordnet, "resources.wordnet"),
            (&mut r.counter_fitted, "resources.counter_fitted"),
            (&mut r.keyboard, "resources.keyboard"),
            (&mut r.ocr, "resources.ocr"),
            (&mut r.misspellings, "resources.misspellings"),
        ] {
            if let Some(p) = p {
                existing(root, p, what)?;
            }
        }
        if let Some(d) = &self.llm.cache_dir {
            self.llm.cache_dir = Some(resolve(root, d));
        }
        self.out_dir = resolve(root, &self.out_dir);
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(k) = o.k_shot {
            self.k_shot = k;
        }
        if let Some(l) = o.lambda {
            self.train.lambda = l;
        }
        if let Some(e) = o.epsilon {
            self.epsilon = e;
        }
        if o.offline {
            self.llm.offline = true;
        }
        if let Some(base) = &self.service_base_url {
            self.llm = self.llm.clone().with_base_url(base);
        }
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg_err = |e: String| PipelineError::Config(e);
        if self.k_shot == 0 {
            return Err(cfg_err("k_shot must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(cfg_err(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.embeddings.word_vectors.is_none() && self.embeddings.sentence_vectors.is_none() {
            return Err(cfg_err(
                "embeddings: set word_vectors, sentence_vectors or both".into(),
            ));
        }
        for m in &self.methods {
            self.method_spec(&m.method)?;
        }
        self.train.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.llm.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(())
    }

    /// The configured `[[methods]]` entry for `name`, or the defaults.
    pub fn method_config(&self, method: Method) -> MethodConfig {
        self.methods
            .iter()
            .find(|m| Method::from_str(&m.method).ok() == Some(method))
            .cloned()
            .unwrap_or_else(|| MethodConfig::new(method))
    }

    fn method_spec(&self, name: &str) -> Result<(Method, Amount, usize), PipelineError> {
        let method = Method::from_str(name).map_err(|e| PipelineError::Config(e.to_string()))?;
        let mc = self.method_config(method);
        let amount = mc.amount()?;
        AugmentSpec::new(method, amount, self.seed, mc.n_variants)
            .map_err(|e| PipelineError::Config(format!("method {name}: {e}")))?;
        Ok((method, amount, mc.n_variants))
    }

    /// Configured methods in file order.
    pub fn method_choices(&self) -> Result<Vec<MethodChoice>, PipelineError> {
        self.methods
            .iter()
            .map(|m| {
                self.method_spec(&m.method)
                    .map(|(m, _, _)| MethodChoice::Method(m))
            })
            .collect()
    }

    pub fn fields(&self) -> Fields {
        Fields {
            text: self.data.text_field.clone(),
            label: self.data.label_field.clone(),
            id: self.data.id_field.clone(),
        }
    }

    fn format_of(&self, path: &Path) -> Format {
        self.data
            .format
            .unwrap_or_else(|| format_from_extension(path))
    }
}

pub fn format_from_extension(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
        _ => Format::Jsonl,
    }
}

/// Loaded datasets, embeddings and resources for one config.
pub struct Workspace {
    pub config: PipelineConfig,
    pub base: Dataset,
    pub novel: Dataset,
    pub test: Option<Dataset>,
    pub store: Arc<EmbeddingStore>,
    pub resources: Arc<Resources>,
    llm: Mutex<Option<Arc<LlmClient>>>,
}

fn table_err<E: std::fmt::Display>(e: E) -> PipelineError {
    PipelineError::Config(e.to_string())
}

impl Workspace {
    pub fn open(config: PipelineConfig) -> Result<Self, PipelineError> {
        let fields = config.fields();
        let d = &config.data;
        let base = load_dataset(&d.base, config.format_of(&d.base), &fields)?.with_role(Role::Base);
        let novel = load_dataset(&d.novel, config.format_of(&d.novel), &fields)?;
        let test = match &d.test {
            Some(p) => Some(load_dataset(p, config.format_of(p), &fields)?),
            None => None,
        };
        base.ensure_disjoint(&novel).map_err(table_err)?;

        let e = &config.embeddings;
        let mut store = match &e.word_vectors {
            Some(p) => load_vectors(p, VectorFormat::Word2vecText)?.0,
            None => {
                load_vectors(
                    e.sentence_vectors.as_ref().expect("validated"),
                    VectorFormat::JsonlIdVector,
                )?
                .0
            }
        };
        if let (Some(_), Some(p)) = (&e.word_vectors, &e.sentence_vectors) {
            store = store.with_sentence_vectors(load_sentence_vectors(p)?.0)?;
        }
        let store = Arc::new(store);

        let r = &config.resources;
        let mut res = Resources::default();
        if let Some(p) = &r.keyboard {
            res.keyboard = KeyboardLayout::from_file(p).map_err(table_err)?;
        }
        if let Some(p) = &r.ocr {
            res.ocr = ConfusionTable::from_file(p).map_err(table_err)?;
        }
        if let Some(p) = &r.misspellings {
            res.misspellings = MisspellTable::from_file(p).map_err(table_err)?;
        }
        if let Some(p) = &r.ppdb {
            res.ppdb = Some(Arc::new(
                Thesaurus::from_file(p, "ppdb").map_err(table_err)?,
            ));
        }
        if let Some(p) = &r.wordnet {
            res.wordnet = Some(Arc::new(
                Thesaurus::from_file(p, "wordnet").map_err(table_err)?,
            ));
        }
        if let Some(p) = &r.counter_fitted {
            res.counter_fitted = Some(Arc::new(load_vectors(p, VectorFormat::Word2vecText)?.0));
        }
        if e.word_vectors.is_some() {
            res.embeddings = Some(store.clone());
        }
        if let Some(n) = r.n_neighbors {
            res.n_neighbors = n;
        }
        Ok(Workspace {
            config,
            base,
            novel,
            test,
            store,
            resources: Arc::new(res),
            llm: Mutex::new(None),
        })
    }

    /// The k-shot training set and the evaluation set.
    pub fn split(&self) -> Result<(Dataset, Dataset), PipelineError> {
        let draw = k_shot_sample(&self.novel, self.config.k_shot, self.config.seed)?;
        let (few, rest) = draw.split(&self.novel);
        Ok((few, self.test.clone().unwrap_or(rest)))
    }

    pub fn llm_client(&self) -> Result<Arc<LlmClient>, PipelineError> {
        let mut slot = self.llm.lock().expect("llm client lock");
        if let Some(c) = slot.as_ref() {
            return Ok(c.clone());
        }
        let c = Arc::new(
            LlmClient::new(self.config.llm.clone(), self.config.seed)
                .map_err(|e| PipelineError::Config(e.to_string()))?,
        );
        *slot = Some(c.clone());
        Ok(c)
    }

    pub fn augmenter(&self, choice: MethodChoice) -> Result<Box<dyn Augmenter>, PipelineError> {
        let method = match choice {
            MethodChoice::Raw => return Ok(Box::new(NoAugmentation)),
            MethodChoice::Method(m) => m,
        };
        let (_, amount, n) = self.config.method_spec(method.name())?;
        if method.is_rule_based() {
            let a =
                RuleAugmenter::new(method, amount, n, self.resources.clone()).map_err(table_err)?;
            Ok(Box::new(a))
        } else {
            let a = LlmAugmenter::new(method, self.llm_client()?)
                .and_then(|a| a.with_amount(amount, n))
                .map_err(table_err)?;
            Ok(Box::new(a))
        }
    }

    fn out_path(&self, name: &str) -> Result<PathBuf, PipelineError> {
        fs::create_dir_all(&self.config.out_dir)?;
        Ok(self.config.out_dir.join(name))
    }
}

/// Augments `input` (default: the k-shot draw) and writes JSONL to `out`
/// (default: `{out_dir}/augmented_{method}.jsonl`).
pub fn cmd_augment(
    ws: &Workspace,
    method: MethodChoice,
    input: Option<&Path>,
    out: Option<&Path>,
) -> Result<(AugmentedSet, PathBuf), PipelineError> {
    let data = match input {
        Some(p) => load_dataset(p, ws.config.format_of(p), &ws.config.fields())?,
        None => ws.split()?.0,
    };
    let set = ws
        .augmenter(method)?
        .augment_dataset(&data, ws.config.seed)?;
    let path = match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            p.to_path_buf()
        }
        None => ws.out_path(&format!("augmented_{}.jsonl", method.name()))?,
    };
    set.write_jsonl(&path)?;
    Ok((set, path))
}

/// Scores each method in an augmented file against `reference` (default:
/// the test split) and writes `quality.json` and `quality.csv`.
pub fn cmd_evaluate(
    ws: &Workspace,
    augmented: &Path,
    reference: Option<&Path>,
) -> Result<Vec<QualityReport>, PipelineError> {
    let set = AugmentedSet::read_jsonl(augmented)?;
    let reference = match reference {
        Some(p) => load_dataset(p, ws.config.format_of(p), &ws.config.fields())?,
        None => ws.split()?.1,
    };
    let (eps, agg) = (ws.config.epsilon, ws.config.aggregation);
    let methods = set.methods();
    let reports = if methods.is_empty() {
        vec![report("raw", &set, &reference, &ws.store, eps, agg)?]
    } else {
        methods
            .into_iter()
            .map(|m| {
                report(
                    m.name(),
                    &set.filter_method(m),
                    &reference,
                    &ws.store,
                    eps,
                    agg,
                )
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    fs::write(
        ws.out_path("quality.json")?,
        serde_json::to_string_pretty(&reports)? + "\n",
    )?;
    let mut buf = Vec::new();
    QualityReport::write_csv(&reports, &mut buf)?;
    fs::write(ws.out_path("quality.csv")?, buf)?;
    Ok(reports)
}

/// Runs the two-phase schedule with `method` and writes
/// `{out_dir}/train_{method}.json`.
pub fn cmd_train(
    ws: &Workspace,
    method: MethodChoice,
) -> Result<(TrainRun, PathBuf), PipelineError> {
    let (few, test) = ws.split()?;
    let augmenter = ws.augmenter(method)?;
    let run = run_algorithm1(
        &ws.base,
        &few,
        &test,
        augmenter.as_ref(),
        &ws.store,
        &ws.config.train,
    )?;
    let path = ws.out_path(&format!("train_{}.json", method.name()))?;
    fs::write(&path, run.to_json()? + "\n")?;
    Ok((run, path))
}

/// One row of the comparison table. `accuracy_ce` trains with λ = 0,
/// `accuracy_ce_cl` with the configured λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub faithfulness: Option<f64>,
    pub transrate: f64,
    pub accuracy_ce: f64,
    pub accuracy_ce_cl: f64,
}

fn compare_one(
    ws: &Workspace,
    choice: MethodChoice,
    few: &Dataset,
    test: &Dataset,
) -> Result<CompareRow, PipelineError> {
    let cfg = &ws.config;
    let set = ws.augmenter(choice)?.augment_dataset(few, cfg.seed)?;
    let q = report(
        choice.name(),
        &set,
        test,
        &ws.store,
        cfg.epsilon,
        cfg.aggregation,
    )?;
    let train = merge_augmented(few, &set)?;
    let ce_only = TrainConfig {
        lambda: 0.0,
        ..cfg.train.clone()
    };
    let ce = train_on_augmented(&ws.base, &train, test, &ws.store, &ce_only, choice.name())?;
    let both = train_on_augmented(&ws.base, &train, test, &ws.store, &cfg.train, choice.name())?;
    Ok(CompareRow {
        method: choice.name().into(),
        faithfulness: q.faithfulness,
        transrate: q.transrate,
        accuracy_ce: ce.eval_accuracy,
        accuracy_ce_cl: both.eval_accuracy,
    })
}

/// Augment, score and train for each method plus the `raw` baseline; rows
/// are sorted by method name and written to `{out_dir}/compare.csv`.
pub fn cmd_compare(
    ws: &Workspace,
    methods: &[MethodChoice],
) -> Result<(Vec<CompareRow>, PathBuf), PipelineError> {
    let mut choices: BTreeMap<&'static str, MethodChoice> = BTreeMap::new();
    choices.insert("raw", MethodChoice::Raw);
    let listed = if methods.is_empty() {
        ws.config.method_choices()?
    } else {
        methods.to_vec()
    };
    for c in listed {
        choices.insert(c.name(), c);
    }
    let (few, test) = ws.split()?;
    let rows = choices
        .into_values()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&c| compare_one(ws, c, &few, &test))
        .collect::<Result<Vec<_>, _>>()?;
    let path = ws.out_path("compare.csv")?;
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok((rows, path))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

/// Fixed-width text rendering of comparison rows.
pub fn render_table(rows: &[CompareRow]) -> String {
    let header = [
        "method",
        "faithfulness",
        "transrate",
        "accuracy_ce",
        "accuracy_ce_cl",
    ];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                fmt_opt(r.faithfulness),
                format!("{:.4}", r.transrate),
                format!("{:.4}", r.accuracy_ce),
                format!("{:.4}", r.accuracy_ce_cl),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[&str]| {
        for (i, (c, w)) in row.iter().zip(width).enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}");
            } else {
                let _ = write!(out, "  {c:>w$}");
            }
        }
        out.push('\n');
    };
    line(&mut out, &header);
    let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
    line(
        &mut out,
        &rule.iter().map(String::as_str).collect::<Vec<_>>(),
    );
    for row in &cells {
        line(
            &mut out,
            &row.iter().map(String::as_str).collect::<Vec<_>>(),
        );
    }
    out
}

/// Training settings that move a linear head on the synthetic world within
/// 150 + 150 epochs of plain SGD.
pub fn synthetic_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        seed,
        ..TrainConfig::default()
    }
}

/// Writes a synthetic world and a ready-to-run `config.toml` into `dir`.
pub fn cmd_synth(dir: &Path, seed: u64) -> Result<PathBuf, PipelineError> {
    let world = SynthWorld::generate(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })?;
    let files = world.write(dir)?;
    let name = |p: &Path| PathBuf::from(p.file_name().expect("synth file name"));
    // One character edit per variant keeps most tokens in vocabulary.
    let mut methods = vec![MethodConfig {
        count: Some(1),
        ..MethodConfig::new(Method::SwapChar)
    }];
    for m in [
        Method::SwapWord,
        Method::WordnetSynonym,
        Method::CounterFitted,
    ] {
        methods.push(MethodConfig {
            rate: Some(0.3),
            ..MethodConfig::new(m)
        });
    }
    let cfg = PipelineConfig {
        seed,
        out_dir: default_out_dir(),
        k_shot: 2,
        epsilon: DEFAULT_EPSILON,
        aggregation: Aggregation::Max,
        service_base_url: None,
        data: DataConfig {
            base: name(&files.base),
            novel: name(&files.novel),
            test: None,
            format: None,
            text_field: text_field(),
            label_field: label_field(),
            id_field: id_field(),
        },
        embeddings: EmbeddingConfig {
            word_vectors: Some(name(&files.vectors)),
            sentence_vectors: None,
        },
        resources: ResourceConfig {
            ppdb: Some(name(&files.synonyms)),
            wordnet: Some(name(&files.synonyms)),
            counter_fitted: Some(name(&files.counter_fitted)),
            ..ResourceConfig::default()
        },
        methods,
        llm: LlmServiceConfig {
            offline: true,
            ..LlmServiceConfig::default()
        },
        train: synthetic_train_config(seed),
    };
    let path = dir.join("config.toml");
    let text = toml::to_string(&cfg).map_err(|e| PipelineError::Runtime(e.to_string()))?;
    fs::write(&path, text)?;
    Ok(path)
}
