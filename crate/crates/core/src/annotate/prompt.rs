//! Prompt templates for concept labelling.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    /// Short, concise label for the word list.
    Default,
    /// Three keywords instead of one label.
    Keyword3,
    /// Label the shared n-gram; may answer `NA`.
    LexicalNgram,
    /// Label the shared Penn Treebank tag; may answer `NA`.
    PartOfSpeech,
    /// Default prompt followed by up to ten context sentences.
    WithContext,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 5] = [
        PromptVariant::Default,
        PromptVariant::Keyword3,
        PromptVariant::LexicalNgram,
        PromptVariant::PartOfSpeech,
        PromptVariant::WithContext,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptVariant::Default => "default",
            PromptVariant::Keyword3 => "keyword3",
            PromptVariant::LexicalNgram => "lexical_ngram",
            PromptVariant::PartOfSpeech => "part_of_speech",
            PromptVariant::WithContext => "with_context",
        }
    }

    /// Variants whose instructions allow an `NA` answer.
    pub fn allows_na(self) -> bool {
        matches!(self, PromptVariant::LexicalNgram | PromptVariant::PartOfSpeech)
    }
}

impl std::str::FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PromptVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s) || format!("{v:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown prompt variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

pub const SYSTEM_TEXT: &str = "Assistant is a large language model trained by OpenAI.";
pub const CONTEXT_LIMIT: usize = 10;

const LABEL_INSTRUCTIONS: &str =
    "When asked for labels, only the labels and nothing else should be returned.";
const KEYWORD_INSTRUCTIONS: &str = "When asked for keywords, only the keywords and nothing else should be returned.\n\
If asked for 3 keywords, the keywords should be returned in the form of [keyword_1, keyword_2, keyword_3]";

const WORDS: &str = "{words}";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub variant: PromptVariant,
    pub system_text: String,
    pub instruction_text: String,
    /// User message; `{words}` is replaced by the quoted word list.
    pub body_template: String,
}

impl PromptTemplate {
    pub fn new(variant: PromptVariant) -> Self {
        let (instructions, body) = match variant {
            PromptVariant::Default | PromptVariant::WithContext => (
                LABEL_INSTRUCTIONS,
                "Give a short and concise label that best describes the following list of words: {words}",
            ),
            PromptVariant::Keyword3 => (
                KEYWORD_INSTRUCTIONS,
                "Give 3 keywords that best describe the following list of words: {words}",
            ),
            PromptVariant::LexicalNgram => (
                LABEL_INSTRUCTIONS,
                "Give a short and concise label describing the common ngrams between the words of the given list: {words}\n\
                 Note: Only one common ngram should be returned. If there is no common ngram reply with 'NA'",
            ),
            PromptVariant::PartOfSpeech => (
                LABEL_INSTRUCTIONS,
                "Give a short and concise label describing the common part of speech tag between the words of the given list: {words}\n\
                 Note: The part of speech tag should be chosen from the Penn Treebank. If there's no common part of speech tag reply with 'NA'",
            ),
        };
        PromptTemplate {
            variant,
            system_text: SYSTEM_TEXT.to_owned(),
            instruction_text: instructions.to_owned(),
            body_template: body.to_owned(),
        }
    }

    fn system_message(&self) -> String {
        format!("{}\nInstructions:\n{}", self.system_text, self.instruction_text)
    }
}

/// `["w1", "w2", ...]`, each word as a JSON string literal.
pub fn quote_words(words: &[String]) -> String {
    let quoted: Vec<String> = words
        .iter()
        .map(|w| serde_json::to_string(w).expect("strings always serialize"))
        .collect();
    format!("[{}]", quoted.join(", "))
}

/// Render the (system, user) message pair for a concept's words.
pub fn render_prompt(
    template: &PromptTemplate,
    concept_words: &[String],
    context_sentences: Option<&[String]>,
) -> Result<Vec<ChatMessage>> {
    if concept_words.is_empty() {
        return Err(Error::Validation("cannot label an empty word list".into()));
    }
    let mut user = template.body_template.replace(WORDS, &quote_words(concept_words));
    if template.variant == PromptVariant::WithContext {
        let sentences = context_sentences
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Config("the with-context prompt needs context sentences".into()))?;
        user.push_str("\nContext sentences:");
        for (i, sentence) in sentences.iter().take(CONTEXT_LIMIT).enumerate() {
            user.push_str(&format!("\n{}. {}", i + 1, sentence));
        }
    }
    Ok(vec![
        ChatMessage {
            role: Role::System,
            content: template.system_message(),
        },
        ChatMessage {
            role: Role::User,
            content: user,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(list: &[&str]) -> Vec<String> {
        list.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn default_prompt_ends_with_word_list() {
        let msgs = render_prompt(&PromptTemplate::new(PromptVariant::Default), &words(&["run", "jump"]), None)
            .unwrap();
        assert_eq!(msgs.len(), 2);
        assert!(msgs[0].content.starts_with("Assistant is a large language model trained by OpenAI"));
        assert!(msgs[0].content.contains("only the labels and nothing else should be returned"));
        assert!(msgs[1].content.ends_with(r#"["run", "jump"]"#));
    }

    #[test]
    fn lexical_and_pos_escape_clauses() {
        let lex = render_prompt(&PromptTemplate::new(PromptVariant::LexicalNgram), &words(&["a"]), None).unwrap();
        assert!(lex[1].content.contains("common ngrams"));
        assert!(lex[1].content.contains("reply with 'NA'"));
        let pos = render_prompt(&PromptTemplate::new(PromptVariant::PartOfSpeech), &words(&["a"]), None).unwrap();
        assert!(pos[1].content.contains("chosen from the Penn Treebank"));
    }

    #[test]
    fn context_variant_needs_sentences() {
        let t = PromptTemplate::new(PromptVariant::WithContext);
        assert!(matches!(render_prompt(&t, &words(&["a"]), None), Err(Error::Config(_))));
        let many: Vec<String> = (0..15).map(|i| format!("sentence {i}")).collect();
        let msgs = render_prompt(&t, &words(&["a"]), Some(&many)).unwrap();
        assert!(msgs[1].content.contains("\n10. sentence 9"));
        assert!(!msgs[1].content.contains("sentence 10"));
    }

    #[test]
    fn every_word_appears_once_quoted() {
        let list = words(&["alpha", "beta", "say \"hi\""]);
        for v in PromptVariant::ALL {
            let ctx = vec!["ctx".to_string()];
            let msgs = render_prompt(&PromptTemplate::new(v), &list, Some(&ctx)).unwrap();
            for w in &list {
                let quoted = serde_json::to_string(w).unwrap();
                assert_eq!(msgs[1].content.matches(&quoted).count(), 1, "{v:?} {w}");
            }
        }
    }

    #[test]
    fn empty_words_rejected() {
        let t = PromptTemplate::new(PromptVariant::Default);
        assert!(render_prompt(&t, &[], None).is_err());
    }

    #[test]
    fn variant_names_parse() {
        for v in PromptVariant::ALL {
            assert_eq!(v.name().parse::<PromptVariant>().unwrap(), v);
        }
        assert!("nope".parse::<PromptVariant>().is_err());
    }
}
