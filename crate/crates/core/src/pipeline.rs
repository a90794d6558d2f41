//! End-to-end orchestration: configuration, artifact loading, the per-message
//! inference path and the batch stages behind the command-line tool.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    self, preprocess, read_jsonl, write_jsonl, CorpusError, MessagePair, PairRecord, PreprocessConfig,
    PreprocessError, RawMessage, TokenizedMessage, Vocabulary,
};
use crate::diversity::{diversify, SuggestionList, DEFAULT_LAMBDA};
use crate::eval::{self, BowConfig, EvalError, RankingMetrics, Report};
use crate::response_space::{
    apply_validation, build_draft, build_intent_graph, collect_frequent_responses, discover_clusters,
    GraphOptions, PropagationParams, ResponseSet, ResponseSpaceError, SeedList,
};
use crate::scoring::{
    train_katz, train_recurrent, AnyScorer, RecurrentConfig, Scorer, ScoringError, UniformScorer,
};
use crate::search::{beam_match_rate, beam_search, build_trie, ResponseTrie, SearchError};
use crate::trigger::{
    should_trigger, train_trigger, trigger_label, TriggerConfig, TriggerError, TriggerFeatures, TriggerModel,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl PipelineError {
    fn stage<E: std::error::Error + Send + Sync + 'static>(stage: &'static str) -> impl FnOnce(E) -> Self {
        move |e| PipelineError::Stage {
            stage,
            source: Box::new(e),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw messages, JSON lines.
    pub corpus: PathBuf,
    /// Raw `(original, reply)` links, JSON lines.
    pub pairs: PathBuf,
    /// Preprocessed pairs written by ingestion.
    pub processed_pairs: PathBuf,
    pub vocab: PathBuf,
    pub response_set: PathBuf,
    pub scorer_model: PathBuf,
    pub trigger_model: PathBuf,
    pub seeds: PathBuf,
    /// Optional rater verdicts; skipped when the file does not exist.
    pub ratings: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "corpus.jsonl".into(),
            pairs: "pairs.jsonl".into(),
            processed_pairs: "processed_pairs.jsonl".into(),
            vocab: "vocab.json".into(),
            response_set: "response_set.json".into(),
            scorer_model: "scorer.rfsm".into(),
            trigger_model: "trigger.rfsm".into(),
            seeds: "seeds.json".into(),
            ratings: "ratings.tsv".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub max_vocab: usize,
    pub english_threshold: f64,
    pub include_subject: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        let p = PreprocessConfig::default();
        IngestConfig {
            max_vocab: 20_000,
            english_threshold: p.english_threshold,
            include_subject: p.include_subject,
        }
    }
}

impl IngestConfig {
    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            english_threshold: self.english_threshold,
            include_subject: self.include_subject,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseSetConfig {
    /// Minimum reply frequency to enter the graph.
    pub min_count: u64,
    pub max_tokens: usize,
    /// Members kept per cluster.
    pub top_k: usize,
    pub binary_weights: bool,
    pub message_edge_weight: f64,
    /// Drop entries nobody rated.
    pub strict_validation: bool,
    pub propagation: PropagationParams,
}

impl Default for ResponseSetConfig {
    fn default() -> Self {
        ResponseSetConfig {
            min_count: 3,
            max_tokens: 12,
            top_k: 20,
            binary_weights: false,
            message_edge_weight: 1.0,
            strict_validation: false,
            propagation: PropagationParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Recurrent,
    Katz,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    pub katz_order: usize,
    pub recurrent: RecurrentConfig,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            kind: ScorerKind::Recurrent,
            katz_order: 5,
            recurrent: RecurrentConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuggestConfig {
    pub beam: usize,
    pub max_len: usize,
    pub lambda: f64,
    /// Overrides the threshold stored in the trigger model.
    pub threshold: Option<f64>,
}

impl Default for SuggestConfig {
    fn default() -> Self {
        SuggestConfig {
            beam: 15,
            max_len: 30,
            lambda: DEFAULT_LAMBDA,
            threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Leading share of pairs and messages used for training.
    pub train_fraction: f64,
    /// Trigger rate the calibration step aims for.
    pub target_trigger_rate: f64,
    pub beam_sizes: Vec<usize>,
    /// Test originals used for the beam curve.
    pub beam_messages: usize,
    pub bow: BowConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            train_fraction: 0.8,
            target_trigger_rate: 0.11,
            beam_sizes: vec![1, 2, 4, 8, 16],
            beam_messages: 200,
            bow: BowConfig::default(),
        }
    }
}

/// Everything the tool needs, read from one TOML file. Relative paths are
/// resolved against the directory of that file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub rng_seed: u64,
    pub paths: Paths,
    pub ingest: IngestConfig,
    pub response_set: ResponseSetConfig,
    pub scorer: ScorerConfig,
    pub trigger: TriggerConfig,
    pub suggest: SuggestConfig,
    pub eval: EvalConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rng_seed: 1,
            paths: Paths::default(),
            ingest: IngestConfig::default(),
            response_set: ResponseSetConfig::default(),
            scorer: ScorerConfig::default(),
            trigger: TriggerConfig::default(),
            suggest: SuggestConfig::default(),
            eval: EvalConfig::default(),
            base_dir: PathBuf::new(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_toml(&text)?;
        c.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(c)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Overrides every seed in the configuration with `seed`.
    pub fn set_seed(&mut self, seed: u64) {
        self.rng_seed = seed;
        self.scorer.recurrent.rng_seed = seed;
        self.trigger.rng_seed = seed;
        self.eval.bow.train.rng_seed = seed;
    }
}

/// Stage wall times in milliseconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub preprocess_ms: f64,
    pub trigger_ms: f64,
    pub response_selection_ms: f64,
    pub diversity_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineResult {
    pub id: String,
    pub triggered: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trigger_score: Option<f64>,
    /// Why no suggestions were produced before the trigger ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    pub suggestions: SuggestionList,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

/// Loaded, immutable inference artifacts.
pub struct Artifacts<S = AnyScorer> {
    pub vocab: Vocabulary,
    pub set: ResponseSet,
    pub trie: ResponseTrie,
    pub scorer: S,
    pub trigger: TriggerModel,
    pub preprocess: PreprocessConfig,
    pub suggest: SuggestConfig,
}

impl<S: Scorer> Artifacts<S> {
    pub fn new(
        vocab: Vocabulary,
        set: ResponseSet,
        scorer: S,
        trigger: TriggerModel,
        preprocess: PreprocessConfig,
        suggest: SuggestConfig,
    ) -> Self {
        let trie = build_trie(&set, &vocab);
        Artifacts {
            vocab,
            set,
            trie,
            scorer,
            trigger,
            preprocess,
            suggest,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.suggest.threshold.unwrap_or(self.trigger.threshold)
    }
}

impl Artifacts {
    pub fn load(config: &PipelineConfig) -> Result<Self, PipelineError> {
        let p = &config.paths;
        let vocab = Vocabulary::load(&config.resolve(&p.vocab)).map_err(PipelineError::stage("load vocabulary"))?;
        let set = ResponseSet::load(&config.resolve(&p.response_set)).map_err(PipelineError::stage("load response set"))?;
        let scorer =
            AnyScorer::load(&config.resolve(&p.scorer_model), &vocab).map_err(PipelineError::stage("load scorer"))?;
        let trigger =
            TriggerModel::load(&config.resolve(&p.trigger_model)).map_err(PipelineError::stage("load trigger"))?;
        Ok(Self::new(
            vocab,
            set,
            scorer,
            trigger,
            config.ingest.preprocess(),
            config.suggest.clone(),
        ))
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Preprocess, trigger, beam selection, diversity selection. A message that
/// is not English is answered with `triggered = false`.
pub fn run_pipeline<S: Scorer>(msg: &RawMessage, art: &Artifacts<S>) -> Result<PipelineResult, PipelineError> {
    let mut timings = StageTimings::default();
    let mut result = PipelineResult {
        id: msg.id.clone(),
        triggered: false,
        trigger_score: None,
        skipped: None,
        suggestions: SuggestionList::default(),
        timings: None,
    };

    let t = Instant::now();
    let tm = match preprocess(msg, &art.vocab, &art.preprocess) {
        Ok(tm) => tm,
        Err(e @ PreprocessError::NonEnglish { .. }) => {
            timings.preprocess_ms = ms(t);
            result.skipped = Some(e.to_string());
            result.timings = Some(timings);
            return Ok(result);
        }
        Err(e) => return Err(PipelineError::stage("preprocess")(e)),
    };
    timings.preprocess_ms = ms(t);

    let t = Instant::now();
    let score = art.trigger.score(&art.trigger.features(&tm, msg));
    result.trigger_score = Some(score);
    result.triggered = should_trigger(score, art.threshold());
    timings.trigger_ms = ms(t);
    if !result.triggered {
        result.timings = Some(timings);
        return Ok(result);
    }

    let s = &art.suggest;
    let original = art.vocab.encode(&tm.scorer_input(art.preprocess.include_subject));
    let t = Instant::now();
    let ranked = beam_search(&art.scorer, &original, &art.trie, s.beam, s.max_len, None)
        .map_err(PipelineError::stage("response selection"))?;
    timings.response_selection_ms = ms(t);

    let t = Instant::now();
    result.suggestions = diversify(ranked, &art.scorer, &art.trie, &art.set, &original, s.beam, s.max_len, s.lambda)
        .map_err(PipelineError::stage("diversity"))?;
    timings.diversity_ms = ms(t);
    result.timings = Some(timings);
    Ok(result)
}

/// Runs many messages on the current rayon pool; output order follows input.
pub fn run_batch<S: Scorer>(msgs: &[RawMessage], art: &Artifacts<S>) -> Vec<Result<PipelineResult, PipelineError>> {
    use rayon::prelude::*;
    msgs.par_iter().map(|m| run_pipeline(m, art)).collect()
}

// Batch stages.

pub struct IngestOutput {
    pub vocab: Vocabulary,
    pub pairs: Vec<MessagePair>,
    pub stats: corpus::IngestStats,
}

/// Reads the raw corpus and pairs, writes the vocabulary and the
/// preprocessed pairs.
pub fn ingest_stage(config: &PipelineConfig) -> Result<IngestOutput, PipelineError> {
    let p = &config.paths;
    let err = PipelineError::stage::<CorpusError>;
    let messages = read_jsonl::<RawMessage>(&config.resolve(&p.corpus)).map_err(err("ingest"))?;
    corpus::validate_corpus(&messages).map_err(err("ingest"))?;
    let raw_pairs: Vec<PairRecord> = read_jsonl(&config.resolve(&p.pairs)).map_err(err("ingest"))?;
    let out = corpus::ingest(&messages, &raw_pairs, config.ingest.max_vocab, &config.ingest.preprocess())
        .map_err(err("ingest"))?;
    out.vocab.save(&config.resolve(&p.vocab)).map_err(err("ingest"))?;
    let records: Vec<PairRecord> = out.pairs.iter().map(MessagePair::to_record).collect();
    write_jsonl(&config.resolve(&p.processed_pairs), &records).map_err(err("ingest"))?;
    Ok(IngestOutput {
        vocab: out.vocab,
        pairs: out.pairs,
        stats: out.stats,
    })
}

pub fn load_pairs(config: &PipelineConfig) -> Result<Vec<MessagePair>, PipelineError> {
    let recs: Vec<PairRecord> = read_jsonl(&config.resolve(&config.paths.processed_pairs))
        .map_err(PipelineError::stage("load pairs"))?;
    Ok(recs.iter().map(MessagePair::from_record).collect())
}

pub fn load_vocab(config: &PipelineConfig) -> Result<Vocabulary, PipelineError> {
    Vocabulary::load(&config.resolve(&config.paths.vocab)).map_err(PipelineError::stage("load vocabulary"))
}

fn train_part<T: Clone>(items: &[T], fraction: f64) -> (Vec<T>, Vec<T>) {
    let cut = ((items.len() as f64 * fraction).round() as usize).min(items.len());
    (items[..cut].to_vec(), items[cut..].to_vec())
}

#[derive(Clone, Debug, Serialize)]
pub struct ResponseSetSummary {
    pub candidates: usize,
    pub clusters: usize,
    pub new_clusters: usize,
    pub entries: usize,
    pub phases: usize,
    pub converged: bool,
}

/// Frequent replies, the intent graph, cluster discovery, the draft set and
/// rater validation when a ratings file exists.
pub fn build_response_set(
    pairs: &[MessagePair],
    seeds: &SeedList,
    ratings: Option<&str>,
    config: &ResponseSetConfig,
    rng_seed: u64,
) -> Result<(ResponseSet, ResponseSetSummary), ResponseSpaceError> {
    let responses = collect_frequent_responses(pairs, config.min_count, config.max_tokens);
    // Replies to the same original are linked.
    let index: HashMap<&[String], usize> =
        responses.iter().enumerate().map(|(i, r)| (r.surface.as_slice(), i)).collect();
    let mut by_original: HashMap<&str, Vec<usize>> = HashMap::new();
    for p in pairs {
        if let Some(&r) = index.get(p.response.as_slice()) {
            by_original.entry(p.original_id.as_str()).or_default().push(r);
        }
    }
    let mut links: Vec<(usize, usize)> = Vec::new();
    let mut groups: Vec<&Vec<usize>> = by_original.values().collect();
    groups.sort();
    for g in groups {
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                links.push((g[i], g[j]));
            }
        }
    }
    let options = GraphOptions {
        binary_weights: config.binary_weights,
        message_edge_weight: config.message_edge_weight,
    };
    let graph = build_intent_graph(&responses, seeds, &links, options)?;
    for w in &graph.warnings {
        log::warn!("{w}");
    }
    let discovery = discover_clusters(&graph, &config.propagation, rng_seed)?;
    let mut set = build_draft(&graph, &responses, &discovery, config.top_k)?;
    if let Some(r) = ratings {
        set = apply_validation(&set, r, config.strict_validation)?;
    }
    let summary = ResponseSetSummary {
        candidates: responses.len(),
        clusters: discovery.clusters().len(),
        new_clusters: discovery.new_clusters.len(),
        entries: set.len(),
        phases: discovery.phases,
        converged: discovery.converged,
    };
    Ok((set, summary))
}

pub fn build_response_set_stage(config: &PipelineConfig) -> Result<ResponseSetSummary, PipelineError> {
    let pairs = load_pairs(config)?;
    let (train, _) = train_part(&pairs, config.eval.train_fraction);
    let p = &config.paths;
    let err = PipelineError::stage::<ResponseSpaceError>;
    let seeds_path = config.resolve(&p.seeds);
    let seeds_text = std::fs::read_to_string(&seeds_path)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", seeds_path.display())))?;
    let seeds = SeedList::from_json(&seeds_text).map_err(err("build response set"))?;
    let ratings_path = config.resolve(&p.ratings);
    let ratings = std::fs::read_to_string(&ratings_path).ok();
    let (set, summary) = build_response_set(&train, &seeds, ratings.as_deref(), &config.response_set, config.rng_seed)
        .map_err(err("build response set"))?;
    set.save(&config.resolve(&p.response_set)).map_err(err("build response set"))?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub kind: String,
    pub train_pairs: usize,
    pub epoch_loss: Vec<f64>,
}

pub fn train_scorer_stage(config: &PipelineConfig, kind: ScorerKind) -> Result<TrainSummary, PipelineError> {
    let vocab = load_vocab(config)?;
    let pairs = load_pairs(config)?;
    let (train, _) = train_part(&pairs, config.eval.train_fraction);
    let path = config.resolve(&config.paths.scorer_model);
    let err = PipelineError::stage::<ScoringError>;
    let epoch_loss = match kind {
        ScorerKind::Recurrent => {
            let (m, log) = train_recurrent(&train, &vocab, &config.scorer.recurrent).map_err(err("train scorer"))?;
            m.save(&path).map_err(err("train scorer"))?;
            log.epoch_loss
        }
        ScorerKind::Katz => {
            let m = train_katz(&train, &vocab, config.scorer.katz_order).map_err(err("train scorer"))?;
            m.save(&path).map_err(err("train scorer"))?;
            Vec::new()
        }
    };
    Ok(TrainSummary {
        kind: format!("{kind:?}").to_lowercase(),
        train_pairs: train.len(),
        epoch_loss,
    })
}

/// Labeled trigger examples from the raw corpus, in corpus order. Messages
/// without a label or that fail preprocessing are skipped.
pub fn trigger_examples(
    messages: &[RawMessage],
    vocab: &Vocabulary,
    preprocess_config: &PreprocessConfig,
    model: &TriggerModel,
) -> Vec<(TriggerFeatures, bool)> {
    messages
        .iter()
        .filter_map(|m| {
            let y = trigger_label(m)?;
            let tm: TokenizedMessage = preprocess(m, vocab, preprocess_config).ok()?;
            Some((model.features(&tm, m), y))
        })
        .collect()
}

fn load_messages(config: &PipelineConfig) -> Result<Vec<RawMessage>, PipelineError> {
    read_jsonl(&config.resolve(&config.paths.corpus)).map_err(PipelineError::stage("load corpus"))
}

pub fn train_trigger_stage(config: &PipelineConfig) -> Result<TrainSummary, PipelineError> {
    let vocab = load_vocab(config)?;
    let messages = load_messages(config)?;
    let probe = TriggerModel::zeros(&config.trigger);
    let examples = trigger_examples(&messages, &vocab, &config.ingest.preprocess(), &probe);
    let (train, _) = train_part(&examples, config.eval.train_fraction);
    let err = PipelineError::stage::<TriggerError>;
    let (model, losses) = train_trigger(&train, &config.trigger).map_err(err("train trigger"))?;
    model.save(&config.resolve(&config.paths.trigger_model)).map_err(err("train trigger"))?;
    Ok(TrainSummary {
        kind: "trigger".into(),
        train_pairs: train.len(),
        epoch_loss: losses,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationSummary {
    pub threshold: f64,
    pub target: f64,
    pub achieved: f64,
    pub held_out: usize,
}

/// Sets the model threshold so `target` of the held-out messages trigger.
pub fn calibrate_trigger_stage(config: &PipelineConfig, target: f64) -> Result<CalibrationSummary, PipelineError> {
    let vocab = load_vocab(config)?;
    let messages = load_messages(config)?;
    let path = config.resolve(&config.paths.trigger_model);
    let err = PipelineError::stage::<TriggerError>;
    let mut model = TriggerModel::load(&path).map_err(err("calibrate trigger"))?;
    let examples = trigger_examples(&messages, &vocab, &config.ingest.preprocess(), &model);
    let (_, held_out) = train_part(&examples, config.eval.train_fraction);
    if held_out.is_empty() {
        return Err(PipelineError::stage("calibrate trigger")(EvalError::EmptyInput));
    }
    let scores: Vec<f64> = held_out.iter().map(|(f, _)| model.score(f)).collect();
    model.threshold = crate::trigger::calibrate_threshold(&scores, target);
    let achieved = scores.iter().filter(|&&s| should_trigger(s, model.threshold)).count() as f64 / scores.len() as f64;
    model.save(&path).map_err(err("calibrate trigger"))?;
    Ok(CalibrationSummary {
        threshold: model.threshold,
        target,
        achieved,
        held_out: scores.len(),
    })
}

/// Perplexities, ranking metrics with the three baselines, trigger AUC and
/// the beam match-rate curve, all on the held-out tail of the data.
pub fn eval_stage(config: &PipelineConfig) -> Result<Report, PipelineError> {
    let art = Artifacts::load(config)?;
    let pairs = load_pairs(config)?;
    let split = eval::temporal_split(&pairs, config.eval.train_fraction);
    let err = PipelineError::stage::<EvalError>;
    let mut report = Report::default();

    report
        .perplexity
        .insert(art.scorer.kind().to_string(), eval::perplexity(&art.scorer, &split.test).map_err(err("eval"))?);
    report.perplexity.insert(
        "uniform".into(),
        eval::perplexity(&UniformScorer::new(art.vocab.clone()), &split.test).map_err(err("eval"))?,
    );

    let index = eval::set_index(&art.set);
    let in_set: Vec<MessagePair> =
        split.test.iter().filter(|p| index.contains_key(&p.response.join(" "))).cloned().collect();
    report.n = in_set.len();
    if !in_set.is_empty() {
        let ranks = eval::ranks_for(&art.scorer, &in_set, &art.set, &art.trie).map_err(err("eval"))?;
        report.ranking.insert("smart_reply".into(), RankingMetrics::from_ranks(&ranks).map_err(err("eval"))?);
        match eval::baseline_multiclass_bow(&split.train, &art.set, &art.vocab, &config.eval.bow) {
            Ok(bow) => {
                let r = bow.ranks(&in_set, &art.set).map_err(err("eval"))?;
                report.ranking.insert("multiclass_bow".into(), RankingMetrics::from_ranks(&r).map_err(err("eval"))?);
            }
            Err(e) => log::warn!("multiclass BOW baseline skipped: {e}"),
        }
        let truth: Vec<usize> = in_set.iter().map(|p| index[&p.response.join(" ")]).collect();
        let freq = eval::baseline_frequency(&art.set);
        let r: Vec<usize> = truth.iter().map(|&t| eval::rank_in(&freq, t).expect("entry ranked")).collect();
        report.ranking.insert("frequency".into(), RankingMetrics::from_ranks(&r).map_err(err("eval"))?);
        let r: Vec<usize> = truth
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let perm = eval::baseline_random(&art.set, config.rng_seed.wrapping_add(i as u64));
                eval::rank_in(&perm, t).expect("entry ranked")
            })
            .collect();
        report.ranking.insert("random".into(), RankingMetrics::from_ranks(&r).map_err(err("eval"))?);
    }

    let messages = load_messages(config)?;
    let examples = trigger_examples(&messages, &art.vocab, &art.preprocess, &art.trigger);
    let (_, held_out) = train_part(&examples, config.eval.train_fraction);
    let scores: Vec<f64> = held_out.iter().map(|(f, _)| art.trigger.score(f)).collect();
    let labels: Vec<bool> = held_out.iter().map(|e| e.1).collect();
    match eval::auc(&scores, &labels) {
        Ok(a) => report.auc = Some(a),
        Err(e) => log::warn!("trigger AUC skipped: {e}"),
    }

    let originals: Vec<_> = split
        .test
        .iter()
        .take(config.eval.beam_messages)
        .map(|p| art.vocab.encode(&p.original))
        .collect();
    if !originals.is_empty() && !art.set.is_empty() {
        report.beam_curve = beam_match_rate(
            &art.scorer,
            &originals,
            &art.set,
            &art.trie,
            &config.eval.beam_sizes,
            config.suggest.max_len,
        )
        .map_err(PipelineError::stage::<SearchError>("eval"))?;
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct BeamPoint {
    pub beam: usize,
    pub match_rate: f64,
    /// Mean scorer steps per message.
    pub mean_steps: f64,
}

/// Match rate against the exhaustive oracle and scorer step counts per beam
/// size.
pub fn bench_beam_stage(config: &PipelineConfig, beams: &[usize]) -> Result<Vec<BeamPoint>, PipelineError> {
    let art = Artifacts::load(config)?;
    let pairs = load_pairs(config)?;
    let split = eval::temporal_split(&pairs, config.eval.train_fraction);
    let originals: Vec<_> = split
        .test
        .iter()
        .take(config.eval.beam_messages)
        .map(|p| art.vocab.encode(&p.original))
        .collect();
    if originals.is_empty() {
        return Err(PipelineError::stage("bench beam")(EvalError::EmptyInput));
    }
    let err = PipelineError::stage::<SearchError>;
    let curve = beam_match_rate(&art.scorer, &originals, &art.set, &art.trie, beams, config.suggest.max_len)
        .map_err(err("bench beam"))?;
    let mut out = Vec::new();
    for (b, rate) in curve {
        let counter = crate::scoring::CountingScorer::new(&art.scorer);
        for o in &originals {
            beam_search(&counter, o, &art.trie, b, config.suggest.max_len, None).map_err(err("bench beam"))?;
        }
        out.push(BeamPoint {
            beam: b,
            match_rate: rate,
            mean_steps: counter.advances() as f64 / originals.len() as f64,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let mut c = PipelineConfig::default();
        c.suggest.threshold = Some(0.25);
        c.response_set.propagation.score_floor = Some(0.4);
        c.scorer.kind = ScorerKind::Katz;
        let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
        assert!(PipelineConfig::from_toml("nonsense = 3").is_err());
    }
}
