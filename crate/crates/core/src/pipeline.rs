//! Stage orchestration over on-disk artifacts.
//!
//! Every stage reads the artifacts of earlier stages from the output
//! directory and writes its own; nothing is kept in memory between stages.
//! Outputs contain no timestamps, so re-running a stage on unchanged inputs
//! rewrites identical bytes. The LLM audit log under `logs/` is the one
//! append-only file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{
    annotate_batch, AnnotateSettings, ChatEndpoint, ConceptLabel, EndpointConfig, HttpEndpoint, PromptVariant,
    SamplingConfig, WordMode,
};
use crate::annotate::mock::MockLlmServer;
use crate::cluster::{ward_cluster, ClusterConfig, Clustering, Concept};
use crate::corpus::{ingest_corpus, read_corpus, FilterConfig, TokenDataset};
use crate::embedstore::{layer_file, read_embeddings, write_embeddings, EmbeddingMatrix, EmbeddingSidecar};
use crate::evaluate::{
    agreement_markdown, agreement_report, distribution_table, read_judgments, simulate_judgments, write_judgments,
    Question, CONCEPT_TYPES,
};
use crate::neurons::{
    alignment_score, build_super_concept, elasticnet_ranking, probeless_ranking, random_concept_set,
    summarize_alignment, AlignmentRow, ElasticNetConfig, NeuronRanking,
};
use crate::probe::{build_probe_dataset, evaluate_probe, ProbeResult, TrainConfig};
use crate::report::{alignment_table, build_records, probe_table, word_cloud, write_concept_net, ProbeTableRow, Table};
use crate::synthetic::{synthetic_embeddings, SyntheticEmbeddingConfig};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateStageConfig {
    pub variant: PromptVariant,
    pub mode: WordMode,
    pub max_words: Option<usize>,
    pub max_in_flight: usize,
}

impl Default for AnnotateStageConfig {
    fn default() -> Self {
        AnnotateStageConfig {
            variant: PromptVariant::Default,
            mode: WordMode::Tokens,
            max_words: None,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeStageConfig {
    /// Negatives per positive.
    pub neg_ratio: f64,
    /// Probe only the first N concepts (by tag); `None` probes all.
    pub max_concepts: Option<usize>,
}

impl Default for ProbeStageConfig {
    fn default() -> Self {
        ProbeStageConfig {
            neg_ratio: 1.0,
            max_concepts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronStageConfig {
    pub top_k: usize,
    /// Label substrings; each one groups matching concepts into a super
    /// concept.
    pub super_concepts: Vec<String>,
    pub max_concepts: Option<usize>,
}

impl Default for NeuronStageConfig {
    fn default() -> Self {
        NeuronStageConfig {
            top_k: 10,
            super_concepts: Vec::new(),
            max_concepts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateStageConfig {
    /// CSV with `item_id,rater_id,question,category`. Without it, seeded
    /// simulated ratings are generated.
    pub judgments: Option<PathBuf>,
    /// CSV with `item_id,category` for the concept-type distribution.
    pub concept_types: Option<PathBuf>,
    pub simulated_raters: usize,
    pub simulated_agreement: f64,
}

impl Default for EvaluateStageConfig {
    fn default() -> Self {
        EvaluateStageConfig {
            judgments: None,
            concept_types: None,
            simulated_raters: 3,
            simulated_agreement: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticStageConfig {
    /// Generate stand-in embeddings as part of `pipeline`.
    pub enabled: bool,
    pub d: usize,
    pub groups: usize,
}

impl Default for SyntheticStageConfig {
    fn default() -> Self {
        SyntheticStageConfig {
            enabled: false,
            d: 32,
            groups: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub embedding_dir: PathBuf,
    pub output_dir: PathBuf,
    pub layers: Vec<u32>,
    pub model_name: String,
    pub seed: u64,
    pub jobs: usize,
    pub mock_llm: bool,
    pub filter: FilterConfig,
    pub cluster: ClusterConfig,
    pub sampling: SamplingConfig,
    pub train: TrainConfig,
    pub elastic_net: ElasticNetConfig,
    pub endpoint: EndpointConfig,
    pub annotate: AnnotateStageConfig,
    pub probe: ProbeStageConfig,
    pub neurons: NeuronStageConfig,
    pub evaluate: EvaluateStageConfig,
    pub synthetic: SyntheticStageConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: "corpus.txt".into(),
            embedding_dir: "embeddings".into(),
            output_dir: "out".into(),
            layers: (0..=12).collect(),
            model_name: "bert-base-cased".into(),
            seed: 0,
            jobs: 1,
            mock_llm: false,
            filter: FilterConfig::default(),
            cluster: ClusterConfig::default(),
            sampling: SamplingConfig::default(),
            train: TrainConfig::default(),
            elastic_net: ElasticNetConfig::default(),
            endpoint: EndpointConfig::default(),
            annotate: AnnotateStageConfig::default(),
            probe: ProbeStageConfig::default(),
            neurons: NeuronStageConfig::default(),
            evaluate: EvaluateStageConfig::default(),
            synthetic: SyntheticStageConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub layers: Vec<u32>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub endpoint: Option<String>,
    pub mock_llm: bool,
}

impl PipelineConfig {
    /// Parse a TOML config. Relative paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.embedding_dir);
        fix(&mut self.output_dir);
        if let Some(p) = self.evaluate.judgments.as_mut() {
            fix(p);
        }
        if let Some(p) = self.evaluate.concept_types.as_mut() {
            fix(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if !o.layers.is_empty() {
            self.layers = o.layers.clone();
        }
        if let Some(k) = o.k {
            self.cluster.k = k;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        if let Some(url) = &o.endpoint {
            self.endpoint.base_url = url.clone();
        }
        self.mock_llm |= o.mock_llm;
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("no layers selected".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        if self.cluster.k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if self.annotate.max_in_flight == 0 {
            return Err(Error::Config("annotate.max_in_flight must be >= 1".into()));
        }
        if self.neurons.top_k == 0 {
            return Err(Error::Config("neurons.top_k must be >= 1".into()));
        }
        self.filter.validate()?;
        self.sampling.validate()?;
        self.train.validate()?;
        Ok(())
    }

    fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            seed: seed::derive(self.seed, "filter"),
            ..self.filter
        }
    }

    fn train_config(&self, purpose: &str, layer: u32, tag: &str) -> TrainConfig {
        TrainConfig {
            seed: seed::derive(self.seed, &format!("{purpose}/{layer}/{tag}")),
            ..self.train.clone()
        }
    }
}

/// Artifact locations inside the output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_owned() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.json")
    }

    pub fn clusters(&self, layer: u32) -> PathBuf {
        self.root.join("clusters").join(format!("layer_{layer:02}.json"))
    }

    pub fn cluster_map(&self, layer: u32) -> PathBuf {
        self.root.join("clusters").join(format!("layer_{layer:02}.map.txt"))
    }

    pub fn labels(&self, layer: u32) -> PathBuf {
        self.root.join("labels").join(format!("layer_{layer:02}.json"))
    }

    pub fn probes(&self, layer: u32) -> PathBuf {
        self.root.join("probes").join(format!("layer_{layer:02}.json"))
    }

    pub fn rankings(&self, layer: u32) -> PathBuf {
        self.root.join("neurons").join(format!("layer_{layer:02}.json"))
    }

    pub fn alignment(&self, layer: u32) -> PathBuf {
        self.root.join("neurons").join(format!("alignment_layer_{layer:02}.json"))
    }

    pub fn evaluation_dir(&self) -> PathBuf {
        self.root.join("evaluation")
    }

    pub fn concept_net(&self) -> PathBuf {
        self.root.join("concept_net.jsonl")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn audit_log(&self) -> PathBuf {
        self.root.join("logs").join("llm_audit.jsonl")
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn require(stage: &'static str, producer: &'static str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            stage,
            producer,
            missing: path.to_owned(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    SynthEmbeddings,
    Cluster,
    Annotate,
    Probe,
    Neurons,
    Evaluate,
    Export,
    Report,
    Pipeline,
}

pub fn run(stage: Stage, config: &PipelineConfig) -> Result<()> {
    config.validate()?;
    let runner = Runner {
        config,
        layout: Layout::new(&config.output_dir),
    };
    match stage {
        Stage::Ingest => runner.ingest(),
        Stage::SynthEmbeddings => runner.synth_embeddings(),
        Stage::Cluster => runner.cluster(),
        Stage::Annotate => runner.annotate(),
        Stage::Probe => runner.probe(),
        Stage::Neurons => runner.neurons(),
        Stage::Evaluate => runner.evaluate(),
        Stage::Export => runner.export(),
        Stage::Report => runner.report(),
        Stage::Pipeline => {
            runner.ingest()?;
            if config.synthetic.enabled {
                runner.synth_embeddings()?;
            }
            runner.cluster()?;
            runner.annotate()?;
            runner.probe()?;
            runner.neurons()?;
            runner.evaluate()?;
            runner.export()?;
            runner.report()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStageOutput {
    pub layer: u32,
    pub results: Vec<ProbeResult>,
    /// Concepts that could not be probed, with the reason.
    pub skipped: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingStageOutput {
    pub layer: u32,
    pub top_k: usize,
    pub probeless: Vec<NeuronRanking>,
    pub elastic_net: Vec<NeuronRanking>,
    pub skipped: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStageOutput {
    pub layer: u32,
    pub top_k: usize,
    pub per_sub_concept: Vec<AlignmentRow>,
    pub summary: Vec<crate::neurons::AlignmentSummary>,
    pub unmatched_patterns: Vec<String>,
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    layout: Layout,
}

impl Runner<'_> {
    fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }

    fn load_dataset(&self, stage: &'static str) -> Result<TokenDataset> {
        let path = self.layout.dataset();
        require(stage, "ingest", &path)?;
        TokenDataset::load(&path)
    }

    fn load_embeddings(&self, stage: &'static str, dataset: &TokenDataset, layer: u32) -> Result<EmbeddingMatrix> {
        let dir = &self.config.embedding_dir;
        let sidecar_path = dir.join(crate::embedstore::SIDECAR_FILE);
        require(stage, "synth-embeddings (or the extraction adapter)", &sidecar_path)?;
        let sidecar = EmbeddingSidecar::load(dir)?;
        sidecar.check_dataset(&dataset.checksum()?)?;
        let path = layer_file(dir, layer);
        require(stage, "synth-embeddings (or the extraction adapter)", &path)?;
        let matrix = read_embeddings(&path)?;
        if matrix.n() != dataset.len() {
            return Err(Error::Validation(format!(
                "{} has {} rows for {} occurrences",
                path.display(),
                matrix.n(),
                dataset.len()
            )));
        }
        Ok(matrix)
    }

    fn load_clustering(&self, stage: &'static str, layer: u32) -> Result<Clustering> {
        let path = self.layout.clusters(layer);
        require(stage, "cluster", &path)?;
        Clustering::load(&path)
    }

    fn load_labels(&self, stage: &'static str, layer: u32) -> Result<Vec<ConceptLabel>> {
        let path = self.layout.labels(layer);
        require(stage, "annotate", &path)?;
        read_json(&path)
    }

    fn ingest(&self) -> Result<()> {
        let corpus = &self.config.corpus;
        if !corpus.exists() {
            return Err(Error::Config(format!("corpus {} does not exist", corpus.display())));
        }
        let sentences = read_corpus(corpus)?;
        let dataset = ingest_corpus(sentences, self.config.filter_config())?;
        ensure_dir(&self.layout.root)?;
        dataset.save(&self.layout.dataset())?;
        log::info!(
            "ingest: {} occurrences of {} types from {} sentences",
            dataset.len(),
            dataset.type_count(),
            dataset.sentences.len()
        );
        Ok(())
    }

    fn synth_embeddings(&self) -> Result<()> {
        let dataset = self.load_dataset("synth-embeddings")?;
        let dir = &self.config.embedding_dir;
        ensure_dir(dir)?;
        let synth = SyntheticEmbeddingConfig {
            d: self.config.synthetic.d,
            groups: self.config.synthetic.groups,
            seed: seed::derive(self.config.seed, "synthetic"),
            ..Default::default()
        };
        for &layer in &self.config.layers {
            let matrix = synthetic_embeddings(&dataset, layer, &synth)?;
            write_embeddings(&matrix, &layer_file(dir, layer))?;
        }
        EmbeddingSidecar {
            dataset_checksum: dataset.checksum()?,
            model_name: self.config.model_name.clone(),
            layers: self.config.layers.clone(),
            n: dataset.len(),
            d: synth.d,
            aggregation: "synthetic".into(),
        }
        .save(dir)
    }

    fn cluster(&self) -> Result<()> {
        let dataset = self.load_dataset("cluster")?;
        for &layer in &self.config.layers {
            let matrix = self.load_embeddings("cluster", &dataset, layer)?;
            if self.config.cluster.k > matrix.n() {
                return Err(Error::Config(format!(
                    "K={} exceeds the {} occurrences of layer {layer}",
                    self.config.cluster.k,
                    matrix.n()
                )));
            }
            let clustering = ward_cluster(&matrix, &self.config.cluster)?;
            ensure_dir(self.layout.clusters(layer).parent().unwrap())?;
            clustering.save(&self.layout.clusters(layer))?;
            write_bytes(&self.layout.cluster_map(layer), clustering.cluster_map(&dataset).as_bytes())?;
            log::info!("cluster: layer {layer}, {} concepts", clustering.tags.len());
        }
        Ok(())
    }

    fn annotate(&self) -> Result<()> {
        let dataset = self.load_dataset("annotate")?;
        let clusterings = self
            .config
            .layers
            .iter()
            .map(|&l| self.load_clustering("annotate", l))
            .collect::<Result<Vec<_>>>()?;

        let mock = if self.config.mock_llm {
            Some(MockLlmServer::deterministic_labeler().map_err(|e| Error::Http(format!("mock server: {e}")))?)
        } else {
            None
        };
        let mut endpoint_config = self.config.endpoint.clone();
        if let Some(server) = &mock {
            endpoint_config.base_url = server.base_url();
            endpoint_config.api_key_env = None;
        }
        let audit = self.layout.audit_log();
        ensure_dir(audit.parent().unwrap())?;
        let endpoint = HttpEndpoint::new(&endpoint_config)?.with_audit_log(&audit)?;

        let settings = AnnotateSettings {
            variant: self.config.annotate.variant,
            mode: self.config.annotate.mode,
            sampling: self.config.sampling.clone(),
            max_words: self.config.annotate.max_words,
        };
        let in_flight = self.config.annotate.max_in_flight.min(self.config.jobs.max(1));
        for clustering in &clusterings {
            let concepts = clustering.concepts(&dataset);
            let labels = annotate_batch(&endpoint as &dyn ChatEndpoint, &concepts, Some(&dataset), &settings, in_flight)?;
            write_json(&self.layout.labels(clustering.layer), &labels)?;
            let labeled = labels.iter().filter(|l| l.status == crate::annotate::LabelStatus::Labeled).count();
            log::info!("annotate: layer {}, {labeled}/{} labeled", clustering.layer, labels.len());
        }
        Ok(())
    }

    fn selected<'c>(&self, concepts: &'c [Concept], cap: Option<usize>) -> &'c [Concept] {
        &concepts[..cap.unwrap_or(concepts.len()).min(concepts.len())]
    }

    fn probe(&self) -> Result<()> {
        let dataset = self.load_dataset("probe")?;
        let pool = self.thread_pool()?;
        for &layer in &self.config.layers {
            let clustering = self.load_clustering("probe", layer)?;
            let labels = self.load_labels("probe", layer)?;
            let matrix = self.load_embeddings("probe", &dataset, layer)?;
            let concepts = clustering.concepts(&dataset);
            let chosen = self.selected(&concepts, self.config.probe.max_concepts);

            let outcomes: Vec<Result<ProbeResult>> = pool.install(|| {
                chosen
                    .par_iter()
                    .map(|concept| {
                        let data = build_probe_dataset(
                            concept,
                            &dataset,
                            &matrix,
                            self.config.probe.neg_ratio,
                            seed::derive(self.config.seed, &format!("probe-data/{layer}/{}", concept.tag)),
                        )?;
                        evaluate_probe(&data, &dataset, &self.config.train_config("probe", layer, &concept.tag))
                    })
                    .collect()
            });

            let mut results = Vec::new();
            let mut skipped = Vec::new();
            for (concept, outcome) in chosen.iter().zip(outcomes) {
                match outcome {
                    Ok(r) => results.push(r),
                    Err(e @ (Error::Degenerate(_) | Error::Training(_))) => {
                        skipped.push((concept.tag.clone(), e.to_string()))
                    }
                    Err(e) => return Err(e),
                }
            }
            let rows: Vec<ProbeTableRow> = results
                .iter()
                .map(|r| ProbeTableRow::from_result(r, &label_text(&labels, &r.concept_tag)))
                .collect();
            let table = probe_table(&rows);
            let out = self.layout.probes(layer);
            write_json(&out, &ProbeStageOutput { layer, results, skipped })?;
            write_table(&out, &table)?;
            log::info!("probe: layer {layer}, {} probes", rows.len());
        }
        Ok(())
    }

    fn neurons(&self) -> Result<()> {
        let dataset = self.load_dataset("neurons")?;
        let pool = self.thread_pool()?;
        for &layer in &self.config.layers {
            let clustering = self.load_clustering("neurons", layer)?;
            let labels = self.load_labels("neurons", layer)?;
            let matrix = self.load_embeddings("neurons", &dataset, layer)?;
            let concepts = clustering.concepts(&dataset);
            let chosen = self.selected(&concepts, self.config.neurons.max_concepts);
            let top_k = self.config.neurons.top_k.min(matrix.d());
            let random_seed = |tag: &str| seed::derive(self.config.seed, &format!("random-set/{layer}/{tag}"));

            let ranked: Vec<Result<(NeuronRanking, NeuronRanking)>> = pool.install(|| {
                chosen
                    .par_iter()
                    .map(|concept| {
                        let random = random_concept_set(&concept.member_ids, matrix.n(), concept.len(), random_seed(&concept.tag));
                        let probeless = probeless_ranking(&matrix, &concept.member_ids, &random, &concept.tag)?;
                        let data = build_probe_dataset(
                            concept,
                            &dataset,
                            &matrix,
                            self.config.probe.neg_ratio,
                            seed::derive(self.config.seed, &format!("probe-data/{layer}/{}", concept.tag)),
                        )?;
                        let enet = ElasticNetConfig {
                            train: self.config.train_config("elastic-net", layer, &concept.tag),
                            ..self.config.elastic_net.clone()
                        };
                        Ok((probeless, elasticnet_ranking(&data, &enet)?))
                    })
                    .collect()
            });

            let mut probeless = Vec::new();
            let mut elastic = Vec::new();
            let mut skipped = Vec::new();
            for (concept, outcome) in chosen.iter().zip(ranked) {
                match outcome {
                    Ok((p, e)) => {
                        probeless.push(p);
                        elastic.push(e);
                    }
                    Err(e @ (Error::Degenerate(_) | Error::Training(_) | Error::Validation(_))) => {
                        skipped.push((concept.tag.clone(), e.to_string()))
                    }
                    Err(e) => return Err(e),
                }
            }

            // Super concepts: Probeless ranking of the union vs. each member.
            let mut rows = Vec::new();
            let mut unmatched = Vec::new();
            for pattern in &self.config.neurons.super_concepts {
                let sup = match build_super_concept(&concepts, &labels, pattern) {
                    Ok(s) => s,
                    Err(Error::Validation(_)) => {
                        unmatched.push(pattern.clone());
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let sup_concept = sup.as_concept(layer);
                let random = random_concept_set(&sup.union_members, matrix.n(), sup.union_members.len(), random_seed(&sup_concept.tag));
                if random.is_empty() {
                    unmatched.push(pattern.clone());
                    continue;
                }
                let sup_rank = probeless_ranking(&matrix, &sup.union_members, &random, &sup_concept.tag)?;
                for sub in &sup.member_concepts {
                    let concept = concepts.iter().find(|c| &c.tag == sub).expect("sub-concept exists");
                    let random = random_concept_set(&concept.member_ids, matrix.n(), concept.len(), random_seed(sub));
                    let sub_rank = probeless_ranking(&matrix, &concept.member_ids, &random, sub)?;
                    rows.push(AlignmentRow {
                        super_concept: sup.name.clone(),
                        sub_concept: sub.clone(),
                        sub_label: label_text(&labels, sub),
                        alignment: alignment_score(&sup_rank, &sub_rank, top_k)?,
                    });
                }
            }
            let summary = summarize_alignment(&rows);

            write_json(
                &self.layout.rankings(layer),
                &RankingStageOutput { layer, top_k, probeless, elastic_net: elastic, skipped },
            )?;
            let out = self.layout.alignment(layer);
            write_table(&out, &alignment_table(&summary))?;
            write_json(
                &out,
                &AlignmentStageOutput { layer, top_k, per_sub_concept: rows, summary, unmatched_patterns: unmatched },
            )?;
        }
        Ok(())
    }

    fn evaluate(&self) -> Result<()> {
        let dir = self.layout.evaluation_dir();
        ensure_dir(&dir)?;
        let records = match &self.config.evaluate.judgments {
            Some(path) => {
                if !path.exists() {
                    return Err(Error::Config(format!("judgments file {} does not exist", path.display())));
                }
                read_judgments(path)?
            }
            None => {
                let mut items = Vec::new();
                for &layer in &self.config.layers {
                    let labels = self.load_labels("evaluate", layer)?;
                    items.extend(labels.iter().map(|l| format!("{layer}:{}", l.concept_tag)));
                }
                let simulated = simulate_judgments(
                    &items,
                    self.config.evaluate.simulated_raters,
                    self.config.evaluate.simulated_agreement,
                    seed::derive(self.config.seed, "judgments"),
                );
                write_judgments(&dir.join("judgments.csv"), &simulated)?;
                simulated
            }
        };
        let reports = Question::ALL
            .iter()
            .filter(|q| records.iter().any(|r| r.question == **q))
            .map(|q| agreement_report(&records, *q))
            .collect::<Result<Vec<_>>>()?;
        write_json(&dir.join("agreement.json"), &reports)?;
        let mut markdown = agreement_markdown(&reports);

        if let Some(path) = &self.config.evaluate.concept_types {
            if !path.exists() {
                return Err(Error::Config(format!("concept type file {} does not exist", path.display())));
            }
            let mut reader = csv::Reader::from_path(path)?;
            let mut categorized = BTreeMap::new();
            for row in reader.deserialize::<(String, String)>() {
                let (item, category) = row?;
                categorized.insert(item, category);
            }
            let table = distribution_table(&categorized, &CONCEPT_TYPES);
            write_json(&dir.join("distribution.json"), &table)?;
            markdown.push_str("\n| Type | % |\n|---|---|\n");
            for (cat, pct) in &table.percentages {
                markdown.push_str(&format!("| {cat} | {pct:.1} |\n"));
            }
            markdown.push_str(&format!("| (uncategorized) | {:.1} |\n", table.uncategorized));
        }
        write_bytes(&dir.join("agreement.md"), markdown.as_bytes())
    }

    fn export(&self) -> Result<()> {
        let dataset = self.load_dataset("export")?;
        let mut records = Vec::new();
        for &layer in &self.config.layers {
            let clustering = self.load_clustering("export", layer)?;
            let labels = self.load_labels("export", layer)?;
            records.extend(build_records(&self.config.model_name, &clustering.concepts(&dataset), &labels, &dataset)?);
        }
        write_concept_net(&self.layout.concept_net(), &records)?;
        log::info!("export: {} concept records", records.len());
        Ok(())
    }

    fn report(&self) -> Result<()> {
        let dataset = self.load_dataset("report")?;
        let dir = self.layout.report_dir();
        for &layer in &self.config.layers {
            let clustering = self.load_clustering("report", layer)?;
            let labels = self.load_labels("report", layer)?;
            let clouds = dir.join("wordclouds").join(format!("layer_{layer:02}"));
            ensure_dir(&clouds)?;
            for concept in clustering.concepts(&dataset) {
                let label = label_text(&labels, &concept.tag);
                write_bytes(&clouds.join(format!("{}.svg", concept.tag)), word_cloud(&concept, &label).as_bytes())?;
            }
            let probes = self.layout.probes(layer);
            if probes.exists() {
                let out: ProbeStageOutput = read_json(&probes)?;
                let rows: Vec<ProbeTableRow> = out
                    .results
                    .iter()
                    .map(|r| ProbeTableRow::from_result(r, &label_text(&labels, &r.concept_tag)))
                    .collect();
                write_table(&dir.join(format!("probes_layer_{layer:02}.json")), &probe_table(&rows))?;
            }
            let alignment = self.layout.alignment(layer);
            if alignment.exists() {
                let out: AlignmentStageOutput = read_json(&alignment)?;
                write_table(&dir.join(format!("alignment_layer_{layer:02}.json")), &alignment_table(&out.summary))?;
            }
        }
        Ok(())
    }
}

fn label_text(labels: &[ConceptLabel], tag: &str) -> String {
    labels
        .iter()
        .find(|l| l.concept_tag == tag)
        .map(|l| l.label_text.clone())
        .unwrap_or_default()
}

/// Write `table` as `.csv` and `.md` siblings of `json_path`.
fn write_table(json_path: &Path, table: &Table) -> Result<()> {
    write_bytes(&json_path.with_extension("csv"), table.to_csv()?.as_bytes())?;
    write_bytes(&json_path.with_extension("md"), table.to_markdown().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_experimental_setup() {
        let c = PipelineConfig::default();
        assert_eq!(c.cluster.k, 600);
        assert_eq!(c.train.batch_size, 512);
        assert_eq!(c.train.epochs, 10);
        assert_eq!(c.sampling.temperature, 0.0);
        assert_eq!(c.sampling.top_p, 0.95);
        assert_eq!(c.filter.min_type_frequency, 10);
        assert_eq!(c.filter.max_occurrences_per_type, 10);
    }

    #[test]
    fn overrides_win() {
        let mut c = PipelineConfig::default();
        c.apply(&Overrides {
            layers: vec![3],
            k: Some(7),
            seed: Some(99),
            jobs: Some(2),
            endpoint: Some("http://x".into()),
            mock_llm: true,
        });
        assert_eq!((c.layers.clone(), c.cluster.k, c.seed, c.jobs), (vec![3], 7, 99, 2));
        assert_eq!(c.endpoint.base_url, "http://x");
        assert!(c.mock_llm);
    }

    #[test]
    fn parses_partial_toml() {
        let c: PipelineConfig = toml::from_str("layers = [1]\n[cluster]\nk = 5\n").unwrap();
        assert_eq!(c.layers, vec![1]);
        assert_eq!(c.cluster.k, 5);
        assert_eq!(c.train.batch_size, 512);
        assert!(toml::from_str::<PipelineConfig>("bogus = 1").is_err());
    }
}
