//! Concept labelling through a chat-completion LLM.

mod client;
pub mod mock;
mod prompt;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use client::{ChatEndpoint, ChatRequest, EndpointConfig, HttpEndpoint, HttpReply};
pub use prompt::{
    quote_words, render_prompt, ChatMessage, PromptTemplate, PromptVariant, Role, CONTEXT_LIMIT, SYSTEM_TEXT,
};

use crate::cluster::Concept;
use crate::corpus::TokenDataset;
use crate::{Error, Result};
use client::{is_content_policy, parse_completion, Completion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_retries: u32,
    /// First backoff delay; attempt `i` waits `backoff_base_ms * 2^i`.
    pub backoff_base_ms: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 0.0,
            top_p: 0.95,
            max_retries: 5,
            backoff_base_ms: 1000,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::Config(format!("temperature {} must be >= 0", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p {} must lie in (0, 1]", self.top_p)));
        }
        Ok(())
    }

    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1u64 << attempt.min(20)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelStatus {
    Labeled,
    ContentFiltered,
    Failed,
    NA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelSource {
    LLM,
    Human,
}

/// How a concept's words are listed in the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordMode {
    /// Every occurrence's surface form, so frequent types repeat.
    #[default]
    Tokens,
    /// Each type once.
    Types,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptLabel {
    pub concept_tag: String,
    pub label_text: String,
    pub status: LabelStatus,
    pub variant: PromptVariant,
    pub source: LabelSource,
    pub raw_response: String,
}

impl ConceptLabel {
    fn new(tag: &str, variant: PromptVariant, status: LabelStatus, label: String, raw: String) -> Self {
        ConceptLabel {
            concept_tag: tag.to_owned(),
            label_text: label,
            status,
            variant,
            source: LabelSource::LLM,
            raw_response: raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateSettings {
    pub variant: PromptVariant,
    pub mode: WordMode,
    pub sampling: SamplingConfig,
    /// Cap on the number of listed words; `None` lists them all.
    pub max_words: Option<usize>,
}

impl Default for AnnotateSettings {
    fn default() -> Self {
        AnnotateSettings {
            variant: PromptVariant::Default,
            mode: WordMode::Tokens,
            sampling: SamplingConfig::default(),
            max_words: None,
        }
    }
}

/// Words listed for a concept. Types are ordered by frequency (descending,
/// then alphabetical); token mode repeats each type by its count.
pub fn concept_words(concept: &Concept, mode: WordMode, max_words: Option<usize>) -> Vec<String> {
    let types = concept.types_by_frequency();
    let mut words: Vec<String> = match mode {
        WordMode::Types => types.iter().map(|(w, _)| w.to_string()).collect(),
        WordMode::Tokens => types
            .iter()
            .flat_map(|(w, c)| std::iter::repeat_n(w.to_string(), *c))
            .collect(),
    };
    if let Some(cap) = max_words {
        words.truncate(cap);
    }
    words
}

/// Up to [`CONTEXT_LIMIT`] distinct sentences the concept's members occur in.
pub fn context_sentences(concept: &Concept, dataset: &TokenDataset) -> Vec<String> {
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for &id in &concept.member_ids {
        let sid = dataset.occurrences[id].sentence_id;
        if !seen.contains(&sid) {
            seen.push(sid);
            out.push(dataset.sentence_text(id));
            if out.len() == CONTEXT_LIMIT {
                break;
            }
        }
    }
    out
}

/// Strip whitespace and one layer of surrounding quotes.
pub fn clean_label(raw: &str) -> String {
    const QUOTES: [(char, char); 5] = [('"', '"'), ('\'', '\''), ('`', '`'), ('\u{201c}', '\u{201d}'), ('\u{2018}', '\u{2019}')];
    let mut text = raw.trim();
    for (open, close) in QUOTES {
        if text.len() >= 2 && text.starts_with(open) && text.ends_with(close) {
            text = text[open.len_utf8()..text.len() - close.len_utf8()].trim();
            break;
        }
    }
    text.to_owned()
}

/// Label one concept. Never returns an error: every failure mode is recorded
/// in the label's status.
pub fn annotate_concept(
    endpoint: &dyn ChatEndpoint,
    concept: &Concept,
    context: &[String],
    settings: &AnnotateSettings,
) -> ConceptLabel {
    let variant = settings.variant;
    let failed = |raw: String| ConceptLabel::new(&concept.tag, variant, LabelStatus::Failed, String::new(), raw);

    if concept.is_empty() {
        return failed("empty concept".into());
    }
    let words = concept_words(concept, settings.mode, settings.max_words);
    let messages = match render_prompt(&PromptTemplate::new(variant), &words, Some(context)) {
        Ok(m) => m,
        Err(e) => return failed(e.to_string()),
    };
    let request = ChatRequest {
        model: endpoint.model().to_owned(),
        messages,
        temperature: settings.sampling.temperature,
        top_p: settings.sampling.top_p,
    };

    let sampling = &settings.sampling;
    let mut attempt = 0u32;
    loop {
        let transient = match endpoint.send(&request) {
            Ok(reply) if (200..300).contains(&reply.status) => {
                return match parse_completion(&reply.body) {
                    Ok(Completion::Filtered) => ConceptLabel::new(
                        &concept.tag,
                        variant,
                        LabelStatus::ContentFiltered,
                        String::new(),
                        reply.body,
                    ),
                    Ok(Completion::Text(text)) => {
                        let label = clean_label(&text);
                        let status = if variant.allows_na() && label.trim_end_matches('.') == "NA" {
                            LabelStatus::NA
                        } else if label.is_empty() {
                            LabelStatus::Failed
                        } else {
                            LabelStatus::Labeled
                        };
                        let label = if status == LabelStatus::Labeled { label } else { String::new() };
                        ConceptLabel::new(&concept.tag, variant, status, label, text)
                    }
                    Err(why) => failed(format!("{why}: {}", reply.body)),
                };
            }
            Ok(reply) if reply.status == 429 || reply.status >= 500 => format!("HTTP {}: {}", reply.status, reply.body),
            Ok(reply) => {
                let status = if is_content_policy(&reply.body) {
                    LabelStatus::ContentFiltered
                } else {
                    LabelStatus::Failed
                };
                return ConceptLabel::new(&concept.tag, variant, status, String::new(), reply.body);
            }
            Err(transport) => transport,
        };
        if attempt >= sampling.max_retries {
            return failed(transient);
        }
        log::debug!("{}: transient failure ({transient}), retry {}", concept.tag, attempt + 1);
        std::thread::sleep(sampling.backoff(attempt));
        attempt += 1;
    }
}

/// Label many concepts with at most `max_in_flight` requests outstanding.
/// Output order matches input order.
pub fn annotate_batch(
    endpoint: &dyn ChatEndpoint,
    concepts: &[Concept],
    dataset: Option<&TokenDataset>,
    settings: &AnnotateSettings,
    max_in_flight: usize,
) -> Result<Vec<ConceptLabel>> {
    if max_in_flight == 0 {
        return Err(Error::Config("max_in_flight must be >= 1".into()));
    }
    if settings.variant == PromptVariant::WithContext && dataset.is_none() {
        return Err(Error::Config("the with-context prompt needs the dataset for sentences".into()));
    }
    settings.sampling.validate()?;

    let slots: Vec<Mutex<Option<ConceptLabel>>> = concepts.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.min(concepts.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(concept) = concepts.get(i) else { break };
                let context = dataset.map(|d| context_sentences(concept, d)).unwrap_or_default();
                let label = annotate_concept(endpoint, concept, &context, settings);
                *slots[i].lock().unwrap() = Some(label);
            });
        }
    });
    Ok(slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every slot is filled"))
        .collect())
}
