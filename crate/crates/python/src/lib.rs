//! Python bindings for the latent concept pipeline.

use std::collections::BTreeMap;
use std::path::PathBuf;

use latent_concepts::annotate::{clean_label as clean, render_prompt as render, PromptTemplate, PromptVariant};
use latent_concepts::cluster::{self, ClusterConfig};
use latent_concepts::corpus::{self, FilterConfig};
use latent_concepts::embedstore::{self, EmbeddingMatrix};
use latent_concepts::neurons::{self, NeuronRanking as CoreRanking};
use latent_concepts::pipeline::{self, Overrides, PipelineConfig, Stage};
use latent_concepts::probe::{self, TrainConfig};
use latent_concepts::synthetic::{self, SyntheticEmbeddingConfig};
use latent_concepts::{evaluate, Error};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Config(_)
        | Error::Validation(_)
        | Error::DimensionMismatch { .. }
        | Error::OutOfRange(_)
        | Error::UnknownTag(_)
        | Error::Degenerate(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Frequency-filtered token occurrences and their sentences.
#[pyclass(module = "latent_concepts", frozen)]
struct TokenDataset {
    inner: corpus::TokenDataset,
}

#[pymethods]
impl TokenDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        corpus::TokenDataset::load(&path).map(|inner| TokenDataset { inner }).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Word of every occurrence, by occurrence id.
    #[getter]
    fn words(&self) -> Vec<String> {
        self.inner.occurrences.iter().map(|o| o.word.clone()).collect()
    }

    /// Occurrence ids per word type.
    #[getter]
    fn types(&self) -> BTreeMap<String, Vec<usize>> {
        self.inner.type_index.clone()
    }

    fn sentence(&self, occurrence_id: usize) -> PyResult<String> {
        if occurrence_id >= self.inner.len() {
            return Err(PyValueError::new_err(format!("occurrence {occurrence_id} of {}", self.inner.len())));
        }
        Ok(self.inner.sentence_text(occurrence_id))
    }

    fn checksum(&self) -> PyResult<String> {
        self.inner.checksum().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("TokenDataset(occurrences={}, types={})", self.inner.len(), self.inner.type_count())
    }
}

/// One layer's occurrence-by-dimension f32 matrix.
#[pyclass(module = "latent_concepts", frozen)]
struct Embeddings {
    inner: EmbeddingMatrix,
}

#[pymethods]
impl Embeddings {
    #[new]
    fn new(layer: u32, rows: Vec<Vec<f32>>) -> PyResult<Self> {
        let d = rows.first().map_or(0, Vec::len);
        EmbeddingMatrix::from_rows(layer, d, &rows).map(|inner| Embeddings { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        embedstore::read_embeddings(&path).map(|inner| Embeddings { inner }).map_err(to_py)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        embedstore::write_embeddings(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn layer(&self) -> u32 {
        self.inner.layer
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f32>> {
        if i >= self.inner.n() {
            return Err(PyValueError::new_err(format!("row {i} of {}", self.inner.n())));
        }
        Ok(self.inner.row(i).to_vec())
    }

    fn rows(&self) -> Vec<Vec<f32>> {
        self.inner.rows().map(<[f32]>::to_vec).collect()
    }

    fn __repr__(&self) -> String {
        format!("Embeddings(layer={}, n={}, d={})", self.inner.layer, self.inner.n(), self.inner.d())
    }
}

/// Ward clustering of one layer, cut at `k` concepts.
#[pyclass(module = "latent_concepts", frozen)]
struct Clustering {
    inner: cluster::Clustering,
}

#[pymethods]
impl Clustering {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        cluster::Clustering::load(&path).map(|inner| Clustering { inner }).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn tags(&self) -> Vec<String> {
        self.inner.tags.clone()
    }

    /// Concept index per occurrence.
    #[getter]
    fn assignments(&self) -> Vec<usize> {
        self.inner.assignments.clone()
    }

    /// `(left, right, new_id, cost, size)` per merge, in merge order.
    #[getter]
    fn merge_history(&self) -> Vec<(usize, usize, usize, f64, usize)> {
        self.inner.merge_history.iter().map(|m| (m.left, m.right, m.new_id, m.cost, m.size)).collect()
    }

    /// Assignments at `k` clusters; `k` may not be below the clustering's own.
    fn cut(&self, k: usize) -> PyResult<Vec<usize>> {
        self.inner.cut(k).map_err(to_py)
    }

    /// Occurrence ids per concept, in tag order.
    fn members(&self) -> Vec<Vec<usize>> {
        self.inner.members()
    }

    fn __repr__(&self) -> String {
        format!("Clustering(layer={}, n={}, k={})", self.inner.layer, self.inner.n, self.inner.k)
    }
}

/// Per-neuron scores for one concept and the neuron order they induce.
#[pyclass(module = "latent_concepts", frozen)]
struct NeuronRanking {
    inner: CoreRanking,
}

#[pymethods]
impl NeuronRanking {
    #[new]
    #[pyo3(signature = (scores, concept_tag = "concept"))]
    fn new(scores: Vec<f64>, concept_tag: &str) -> Self {
        NeuronRanking { inner: CoreRanking::from_scores(concept_tag, scores) }
    }

    #[getter]
    fn scores(&self) -> Vec<f64> {
        self.inner.scores.clone()
    }

    #[getter]
    fn order(&self) -> Vec<usize> {
        self.inner.order.clone()
    }

    fn top_k(&self, k: usize) -> PyResult<Vec<usize>> {
        neurons::top_k(&self.inner, k).map(|s| s.into_iter().collect()).map_err(to_py)
    }
}

#[pyfunction]
fn read_corpus(path: PathBuf) -> PyResult<Vec<Vec<String>>> {
    corpus::read_corpus(&path).map_err(to_py)
}

/// Build the occurrence dataset from tokenized sentences.
#[pyfunction]
#[pyo3(signature = (sentences, min_type_frequency = 10, max_occurrences_per_type = 10, seed = 0))]
fn ingest(
    sentences: Vec<Vec<String>>,
    min_type_frequency: usize,
    max_occurrences_per_type: usize,
    seed: u64,
) -> PyResult<TokenDataset> {
    let config = FilterConfig { min_type_frequency, max_occurrences_per_type, seed };
    corpus::ingest_corpus(sentences, config).map(|inner| TokenDataset { inner }).map_err(to_py)
}

/// Seeded stand-in embeddings in which words sharing a hash group cluster.
#[pyfunction]
#[pyo3(signature = (dataset, layer, d = 32, groups = 12, seed = 0))]
fn synthetic_embeddings(dataset: &TokenDataset, layer: u32, d: usize, groups: usize, seed: u64) -> PyResult<Embeddings> {
    let config = SyntheticEmbeddingConfig { d, groups, seed, ..Default::default() };
    synthetic::synthetic_embeddings(&dataset.inner, layer, &config).map(|inner| Embeddings { inner }).map_err(to_py)
}

#[pyfunction]
fn ward_cluster(py: Python<'_>, embeddings: &Embeddings, k: usize) -> PyResult<Clustering> {
    let config = ClusterConfig { k, ..Default::default() };
    py.detach(|| cluster::ward_cluster(&embeddings.inner, &config))
        .map(|inner| Clustering { inner })
        .map_err(to_py)
}

/// Increase in within-cluster sum of squares from merging two clusters.
#[pyfunction]
fn ward_distance(centroid_a: Vec<f64>, size_a: usize, centroid_b: Vec<f64>, size_b: usize) -> PyResult<f64> {
    cluster::ward_distance(&centroid_a, size_a, &centroid_b, size_b).map_err(to_py)
}

/// Fleiss' kappa from an item-by-category count matrix.
#[pyfunction]
fn fleiss_kappa(counts: Vec<Vec<usize>>, n_raters: usize) -> PyResult<f64> {
    evaluate::fleiss_kappa(&counts, n_raters).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (embeddings, concept_ids, random_ids, concept_tag = "concept"))]
fn probeless_ranking(
    embeddings: &Embeddings,
    concept_ids: Vec<usize>,
    random_ids: Vec<usize>,
    concept_tag: &str,
) -> PyResult<NeuronRanking> {
    neurons::probeless_ranking(&embeddings.inner, &concept_ids, &random_ids, concept_tag)
        .map(|inner| NeuronRanking { inner })
        .map_err(to_py)
}

/// Share of the top-`k` neurons two rankings have in common.
#[pyfunction]
fn alignment_score(a: &NeuronRanking, b: &NeuronRanking, k: usize) -> PyResult<f64> {
    neurons::alignment_score(&a.inner, &b.inner, k).map_err(to_py)
}

/// Train a probe for the occurrences in `member_ids` and its control task;
/// returns accuracies and selectivity on dev and test.
#[pyfunction]
#[pyo3(signature = (dataset, embeddings, member_ids, neg_ratio = 1.0, epochs = 10, batch_size = 512, seed = 0))]
fn probe_concept(
    py: Python<'_>,
    dataset: &TokenDataset,
    embeddings: &Embeddings,
    member_ids: Vec<usize>,
    neg_ratio: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> PyResult<BTreeMap<String, f64>> {
    let concept = synthetic::concept_from_ids("concept", &dataset.inner, member_ids);
    let config = TrainConfig { epochs, batch_size, seed, ..Default::default() };
    let r = py
        .detach(|| {
            let data = probe::build_probe_dataset(&concept, &dataset.inner, &embeddings.inner, neg_ratio, seed)?;
            probe::evaluate_probe(&data, &dataset.inner, &config)
        })
        .map_err(to_py)?;
    Ok(BTreeMap::from([
        ("accuracy_dev".to_string(), r.accuracy_dev),
        ("accuracy_test".to_string(), r.accuracy_test),
        ("control_accuracy_dev".to_string(), r.control_accuracy_dev),
        ("control_accuracy_test".to_string(), r.control_accuracy_test),
        ("selectivity_dev".to_string(), r.selectivity_dev),
        ("selectivity_test".to_string(), r.selectivity_test),
    ]))
}

/// `(system, user)` messages for a word list under one prompt variant.
#[pyfunction]
#[pyo3(signature = (variant, words, context = None))]
fn render_prompt(variant: &str, words: Vec<String>, context: Option<Vec<String>>) -> PyResult<(String, String)> {
    let variant = PromptVariant::ALL
        .into_iter()
        .find(|v| v.name() == variant)
        .ok_or_else(|| PyValueError::new_err(format!("unknown prompt variant `{variant}`")))?;
    let messages = render(&PromptTemplate::new(variant), &words, context.as_deref()).map_err(to_py)?;
    Ok((messages[0].content.clone(), messages[1].content.clone()))
}

#[pyfunction]
fn clean_label(raw: &str) -> String {
    clean(raw)
}

/// Run one stage (or `pipeline` for all of them) from a TOML config.
#[pyfunction]
#[pyo3(signature = (config_path, stage = "pipeline", mock_llm = false))]
fn run_stage(py: Python<'_>, config_path: PathBuf, stage: &str, mock_llm: bool) -> PyResult<()> {
    let stage = match stage {
        "ingest" => Stage::Ingest,
        "synth-embeddings" => Stage::SynthEmbeddings,
        "cluster" => Stage::Cluster,
        "annotate" => Stage::Annotate,
        "probe" => Stage::Probe,
        "neurons" => Stage::Neurons,
        "evaluate" => Stage::Evaluate,
        "export" => Stage::Export,
        "report" => Stage::Report,
        "pipeline" => Stage::Pipeline,
        other => return Err(PyValueError::new_err(format!("unknown stage `{other}`"))),
    };
    let mut config = PipelineConfig::load(&config_path).map_err(to_py)?;
    config.apply(&Overrides { mock_llm, ..Default::default() });
    py.detach(|| pipeline::run(stage, &config)).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "latent_concepts")]
fn bindings(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<TokenDataset>()?;
    m.add_class::<Embeddings>()?;
    m.add_class::<Clustering>()?;
    m.add_class::<NeuronRanking>()?;
    m.add_function(wrap_pyfunction!(read_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(ingest, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(ward_cluster, m)?)?;
    m.add_function(wrap_pyfunction!(ward_distance, m)?)?;
    m.add_function(wrap_pyfunction!(fleiss_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(probeless_ranking, m)?)?;
    m.add_function(wrap_pyfunction!(alignment_score, m)?)?;
    m.add_function(wrap_pyfunction!(probe_concept, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(clean_label, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage, m)?)?;
    Ok(())
}
