//! Contrastive evidence contexts and the probe prompts rendered from them.
//!
//! Every builder keeps document order fixed and varies only the language in
//! which individual documents are shown.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus::{normalize_field, render_document_blocks, DocumentSet, LanguageTag, Query, TranslationStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// Cited document in the variant language, all others English.
    CitedInLanguage,
    AllTarget,
    AllTargetCitedEn,
    AllEn,
    AllEnCitedTarget,
    RelEnIrrEn,
    RelTgtIrrEn,
    RelEnIrrTgt,
}

impl VariantKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::CitedInLanguage => "cited_in_language",
            VariantKind::AllTarget => "all_target",
            VariantKind::AllTargetCitedEn => "all_target_cited_en",
            VariantKind::AllEn => "all_en",
            VariantKind::AllEnCitedTarget => "all_en_cited_target",
            VariantKind::RelEnIrrEn => "rel_en_irr_en",
            VariantKind::RelTgtIrrEn => "rel_tgt_irr_en",
            VariantKind::RelEnIrrTgt => "rel_en_irr_tgt",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextVariant {
    pub kind: VariantKind,
    pub language: LanguageTag,
}

impl ContextVariant {
    pub fn cited_in(language: LanguageTag) -> Self {
        ContextVariant { kind: VariantKind::CitedInLanguage, language }
    }

    pub fn is_english_baseline(&self) -> bool {
        self.kind == VariantKind::CitedInLanguage && self.language.is_en()
    }
}

impl fmt::Display for ContextVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.language)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PositionLabel {
    First,
    Middle,
    Last,
}

impl PositionLabel {
    pub const ALL: [PositionLabel; 3] = [PositionLabel::First, PositionLabel::Middle, PositionLabel::Last];

    pub fn as_str(self) -> &'static str {
        match self {
            PositionLabel::First => "First",
            PositionLabel::Middle => "Middle",
            PositionLabel::Last => "Last",
        }
    }
}

/// Where the cited document sits among `k_docs`; a single document is `First`.
pub fn label_position(k_docs: usize, ordinal: usize) -> Result<PositionLabel> {
    if ordinal == 0 || ordinal > k_docs {
        return Err(Error::domain(format!("ordinal {ordinal} outside 1..={k_docs}")));
    }
    Ok(match ordinal {
        1 => PositionLabel::First,
        o if o == k_docs => PositionLabel::Last,
        _ => PositionLabel::Middle,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveContext {
    pub query: Query,
    /// Language per document, in document-set order.
    pub assignments: Vec<(u8, LanguageTag)>,
    pub cited_id: u8,
    pub variant: ContextVariant,
    pub position: PositionLabel,
}

impl ContrastiveContext {
    pub fn language_of(&self, doc_id: u8) -> Option<&LanguageTag> {
        self.assignments.iter().find(|(id, _)| *id == doc_id).map(|(_, l)| l)
    }
}

fn ensure_translation(
    docs: &DocumentSet,
    translations: &TranslationStore,
    doc_id: u8,
    lang: &LanguageTag,
) -> Result<()> {
    let doc = docs.get(doc_id).ok_or_else(|| Error::domain(format!("doc {doc_id} not in set {}", docs.query_id())))?;
    if &doc.language == lang || translations.lookup(docs.query_id(), doc_id, lang).is_some() {
        Ok(())
    } else {
        Err(Error::MissingTranslation { doc_id, language: lang.to_string() })
    }
}

fn assemble(
    query: &Query,
    docs: &DocumentSet,
    translations: &TranslationStore,
    cited_id: u8,
    variant: ContextVariant,
    lang_for: impl Fn(u8) -> LanguageTag,
) -> Result<ContrastiveContext> {
    let ordinal = docs
        .ordinal_of(cited_id)
        .ok_or_else(|| Error::domain(format!("cited doc {cited_id} not in set {}", docs.query_id())))?;
    let assignments = docs
        .docs()
        .iter()
        .map(|d| {
            let lang = lang_for(d.doc_id);
            ensure_translation(docs, translations, d.doc_id, &lang)?;
            Ok((d.doc_id, lang))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContrastiveContext {
        query: query.clone(),
        assignments,
        cited_id,
        variant,
        position: label_position(docs.len(), ordinal)?,
    })
}

/// Cited document in `lang`, every other document in English.
pub fn build_contrastive_context(
    query: &Query,
    docs: &DocumentSet,
    translations: &TranslationStore,
    cited_id: u8,
    lang: &LanguageTag,
) -> Result<ContrastiveContext> {
    let variant = ContextVariant::cited_in(lang.clone());
    assemble(query, docs, translations, cited_id, variant, |id| {
        if id == cited_id {
            lang.clone()
        } else {
            LanguageTag::en()
        }
    })
}

/// The four query-language variants, in the order `all_target`,
/// `all_target_cited_en`, `all_en`, `all_en_cited_target`. `query` must
/// already be in `qlang`.
pub fn build_query_language_variants(
    query: &Query,
    docs: &DocumentSet,
    translations: &TranslationStore,
    cited_id: u8,
    qlang: &LanguageTag,
) -> Result<Vec<ContrastiveContext>> {
    if &query.language != qlang {
        return Err(Error::domain(format!("query {} is in {}, expected {qlang}", query.id, query.language)));
    }
    let en = LanguageTag::en();
    let plan = [
        (VariantKind::AllTarget, qlang, qlang),
        (VariantKind::AllTargetCitedEn, &en, qlang),
        (VariantKind::AllEn, &en, &en),
        (VariantKind::AllEnCitedTarget, qlang, &en),
    ];
    plan.iter()
        .map(|(kind, cited_lang, other_lang)| {
            let variant = ContextVariant { kind: *kind, language: qlang.clone() };
            assemble(query, docs, translations, cited_id, variant, |id| {
                if id == cited_id {
                    (*cited_lang).clone()
                } else {
                    (*other_lang).clone()
                }
            })
        })
        .collect()
}

/// Relevance-versus-language variants over one relevant and one irrelevant
/// document: both English, relevant in `lang`, irrelevant in `lang`.
pub fn build_relevance_variants(
    query: &Query,
    docs: &DocumentSet,
    translations: &TranslationStore,
    lang: &LanguageTag,
) -> Result<Vec<ContrastiveContext>> {
    let relevant: Vec<u8> = docs.docs().iter().filter(|d| d.relevant).map(|d| d.doc_id).collect();
    let irrelevant: Vec<u8> = docs.docs().iter().filter(|d| !d.relevant).map(|d| d.doc_id).collect();
    let (rel, irr) = match (relevant.as_slice(), irrelevant.as_slice()) {
        ([rel], [irr]) => (*rel, *irr),
        _ => {
            return Err(Error::domain(format!(
                "relevance variants need exactly one relevant and one irrelevant document in {}",
                docs.query_id()
            )))
        }
    };
    let en = LanguageTag::en();
    let plan = [
        (VariantKind::RelEnIrrEn, &en, &en),
        (VariantKind::RelTgtIrrEn, lang, &en),
        (VariantKind::RelEnIrrTgt, &en, lang),
    ];
    plan.iter()
        .map(|(kind, rel_lang, irr_lang)| {
            let variant = ContextVariant { kind: *kind, language: lang.clone() };
            assemble(query, docs, translations, rel, variant, |id| {
                if id == irr {
                    (*irr_lang).clone()
                } else {
                    (*rel_lang).clone()
                }
            })
        })
        .collect()
}

/// Rendered probe input: `context_text` followed by `prefix` is the prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub context_text: String,
    pub prefix: String,
    pub citation_token_candidates: Vec<String>,
    /// Byte range of each document's title and content within `context_text`.
    pub doc_spans: Vec<(u8, Range<usize>)>,
}

impl PromptBundle {
    pub fn full_text(&self) -> String {
        let mut s = String::with_capacity(self.context_text.len() + self.prefix.len());
        s.push_str(&self.context_text);
        s.push_str(&self.prefix);
        s
    }

    pub fn span_of(&self, doc_id: u8) -> Option<Range<usize>> {
        self.doc_spans.iter().find(|(id, _)| *id == doc_id).map(|(_, r)| r.clone())
    }
}

/// Title and content of `doc_id` as shown under `context`.
fn shown_fields(
    context: &ContrastiveContext,
    docs: &DocumentSet,
    translations: &TranslationStore,
    doc_id: u8,
) -> Result<(String, String)> {
    let doc = docs.get(doc_id).ok_or_else(|| Error::domain(format!("doc {doc_id} not in set {}", docs.query_id())))?;
    let lang =
        context.language_of(doc_id).ok_or_else(|| Error::domain(format!("doc {doc_id} has no language assignment")))?;
    if &doc.language == lang {
        return Ok((doc.title.clone(), doc.content.clone()));
    }
    let rec = translations
        .lookup(docs.query_id(), doc_id, lang)
        .ok_or(Error::MissingTranslation { doc_id, language: lang.to_string() })?;
    Ok((rec.title_translated, rec.content_translated))
}

fn check_alignment(context: &ContrastiveContext, docs: &DocumentSet) -> Result<()> {
    let same = context.assignments.len() == docs.len()
        && context.assignments.iter().zip(docs.docs()).all(|((id, _), d)| *id == d.doc_id);
    if same && context.query.id == docs.query_id() {
        Ok(())
    } else {
        Err(Error::domain(format!("context does not match document set {}", docs.query_id())))
    }
}

fn instruction_block(query: &Query) -> String {
    format!(
        "Using the above information, the response is the answer to the query or task: {} in a single sentence.\n\
You MUST cite the most relevant document by including only its Document ID in brackets at the end of the sentence (e.g., [Document ID]).\n\
Do NOT include any additional words inside or outside the brackets.\n\
Please output ONLY the number of the Document ID that is most relevant to the sentence.\n\
\n\
Response: ",
        normalize_field(&query.text)
    )
}

/// Renders the next-token citation prompt for `statement` under `context`.
///
/// The prefix ends with the statement, one space, and an opening bracket.
pub fn render_prompt(
    context: &ContrastiveContext,
    statement: &str,
    docs: &DocumentSet,
    translations: &TranslationStore,
) -> Result<PromptBundle> {
    check_alignment(context, docs)?;
    let fields = context
        .assignments
        .iter()
        .map(|(id, _)| shown_fields(context, docs, translations, *id).map(|f| (*id, f)))
        .collect::<Result<Vec<_>>>()?;
    let (blocks, spans) = render_document_blocks(fields.iter().map(|(id, (t, c))| (*id, t.as_str(), c.as_str())));
    const HEADER: &str = "Information:\n";
    let doc_spans = spans.into_iter().map(|(id, r)| (id, r.start + HEADER.len()..r.end + HEADER.len())).collect();
    let prefix = format!("{}{} [", instruction_block(&context.query), normalize_field(statement));
    Ok(PromptBundle {
        context_text: format!("{HEADER}{blocks}"),
        prefix,
        citation_token_candidates: (1..=docs.len()).map(|i| i.to_string()).collect(),
        doc_spans,
    })
}

/// One ablatable unit of the evidence context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextSentence {
    pub doc_id: u8,
    pub text: String,
}

/// Splits every shown document's content into sentences, in context order.
pub fn context_sentences(
    context: &ContrastiveContext,
    docs: &DocumentSet,
    translations: &TranslationStore,
) -> Result<Vec<ContextSentence>> {
    check_alignment(context, docs)?;
    let mut out = Vec::new();
    for (id, _) in &context.assignments {
        let (_, content) = shown_fields(context, docs, translations, *id)?;
        out.extend(
            normalize_field(&content)
                .split_sentence_bounds()
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| ContextSentence { doc_id: *id, text: s.to_owned() }),
        );
    }
    Ok(out)
}

/// Prompt for scoring the statement as a continuation under a sentence
/// mask; masked-out sentences are omitted entirely. Returns the prompt
/// ending in `"Response: "`.
pub fn render_ablation_prompt(
    context: &ContrastiveContext,
    docs: &DocumentSet,
    translations: &TranslationStore,
    sentences: &[ContextSentence],
    mask: &[bool],
) -> Result<String> {
    if sentences.len() != mask.len() {
        return Err(Error::domain(format!("mask length {} does not match {} sentences", mask.len(), sentences.len())));
    }
    check_alignment(context, docs)?;
    let mut fields = Vec::new();
    for (id, _) in &context.assignments {
        let (title, _) = shown_fields(context, docs, translations, *id)?;
        let kept: Vec<&str> = sentences
            .iter()
            .zip(mask)
            .filter(|(s, keep)| s.doc_id == *id && **keep)
            .map(|(s, _)| s.text.as_str())
            .collect();
        fields.push((*id, title, kept.join(" ")));
    }
    let (blocks, _) = render_document_blocks(fields.iter().map(|(id, t, c)| (*id, t.as_str(), c.as_str())));
    Ok(format!("Information:\n{blocks}{}", instruction_block(&context.query)))
}
