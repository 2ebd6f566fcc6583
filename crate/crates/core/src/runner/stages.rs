use std::collections::HashMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::analysis::{analyze, AttributionRecord, TraceRecord};
use super::config::Experiment;
use super::emit::emit_tables;
use super::store::{file_digest, read_jsonl, statement_seed, write_json, write_jsonl, RunManifest};
use super::{build, Runner};
use crate::contextlab::{
    build_contrastive_context, build_query_language_variants, build_relevance_variants, context_sentences,
    render_ablation_prompt, render_prompt, ContextVariant, ContrastiveContext,
};
use crate::corpus::{
    generate_reference_report, load_dataset, score_translation_quality, translate_document_set, translate_query,
    translated_document_set, DatasetEntry, DocumentSet, EvidenceDocument, LanguageTag, Query, Report,
    TranslationRecord, TranslationStore,
};
use crate::error::{Error, Result};
use crate::filtergate::{build_statement_pool, PoolEntry, PoolInput};
use crate::metrics::{attribution_scores, fit_surrogate, sample_masks};
use crate::probe::{
    ablation_logit_prob, check_single_token_ids, layer_trace, next_citation_distribution, AblationSample,
    CitationPrediction, PredictionKey, ProbeCache, Prober,
};

/// Relevant document renumbered to 1 in the relevance design.
pub(crate) const RELEVANT_ID: u8 = 1;

fn missing(what: &str, stage: &'static str) -> Error {
    Error::MissingStage { missing: what.to_owned(), stage }
}

/// One relevant document (id 1) and one seeded irrelevant document (id 2).
fn relevance_pair(entry: &DatasetEntry, seed: u64) -> Result<DatasetEntry> {
    let qid = entry.query.id.clone();
    let relevant: Vec<&EvidenceDocument> = entry.docs.docs().iter().filter(|d| d.relevant).collect();
    let irrelevant: Vec<&EvidenceDocument> = entry.docs.docs().iter().filter(|d| !d.relevant).collect();
    let ([rel], false) = (relevant.as_slice(), irrelevant.is_empty()) else {
        return Err(Error::Constraint {
            query_id: qid,
            message: "relevance design needs one relevant and at least one irrelevant document".into(),
        });
    };
    let mut rng = ChaCha8Rng::seed_from_u64(statement_seed(seed, &qid, usize::MAX));
    let irr = irrelevant[rng.gen_range(0..irrelevant.len())];
    let docs = DocumentSet::new(
        qid,
        vec![
            EvidenceDocument { doc_id: RELEVANT_ID, ..(*rel).clone() },
            EvidenceDocument { doc_id: RELEVANT_ID + 1, ..irr.clone() },
        ],
    )?;
    Ok(DatasetEntry { query: entry.query.clone(), docs })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct QueryTranslation {
    query_id: String,
    language: LanguageTag,
    text: String,
}

/// Shared lookups built from the dataset and translation outputs.
struct Corpus {
    entries: Vec<DatasetEntry>,
    by_id: HashMap<String, usize>,
    store: TranslationStore,
    queries: HashMap<(String, LanguageTag), Query>,
}

impl Corpus {
    fn entry(&self, query_id: &str) -> Result<&DatasetEntry> {
        self.by_id
            .get(query_id)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::domain(format!("query {query_id} is not in the dataset")))
    }

    fn query_in(&self, query_id: &str, language: &LanguageTag) -> Result<Query> {
        let entry = self.entry(query_id)?;
        if &entry.query.language == language {
            return Ok(entry.query.clone());
        }
        self.queries
            .get(&(query_id.to_owned(), language.clone()))
            .cloned()
            .ok_or_else(|| missing(&format!("query {query_id} in {language}"), "translate"))
    }

    fn docs_in(&self, query_id: &str, language: &LanguageTag) -> Result<DocumentSet> {
        translated_document_set(&self.entry(query_id)?.docs, language, &self.store)
    }
}

struct ProbeTask<'c> {
    entry: &'c PoolEntry,
    docs: &'c DocumentSet,
    context: ContrastiveContext,
}

impl Runner {
    pub(crate) fn entries(&self) -> Result<Vec<DatasetEntry>> {
        let mut entries = load_dataset(&self.config.dataset, self.config.format()?)?;
        if let Some(max) = self.config.max_queries {
            entries.truncate(max);
        }
        if self.config.experiment == Experiment::RelevanceVsLanguage {
            entries = entries.iter().map(|e| relevance_pair(e, self.config.seed)).collect::<Result<_>>()?;
        }
        Ok(entries)
    }

    /// Cache file shared by runs that agree on translator, dataset and document selection.
    fn translation_cache(&self) -> Result<PathBuf> {
        let mut h = Sha256::new();
        h.update(self.config.translator.as_bytes());
        h.update([0]);
        h.update(file_digest(&self.config.dataset)?.as_bytes());
        if self.config.experiment == Experiment::RelevanceVsLanguage {
            h.update(format!("relevance:{}", self.config.seed).as_bytes());
        }
        let tag = hex::encode(&h.finalize()[..8]);
        Ok(self.config.cache_dir.join("translations").join(format!("{tag}.jsonl")))
    }

    fn corpus(&self) -> Result<Corpus> {
        let entries = self.entries()?;
        let by_id = entries.iter().enumerate().map(|(i, e)| (e.query.id.clone(), i)).collect();
        let path = self.layout.translations();
        if !path.exists() {
            return Err(missing("translations", "translate"));
        }
        let store = TranslationStore::load(&path)?;
        let mut queries = HashMap::new();
        if self.config.experiment == Experiment::QueryLanguage {
            let qpath = self.layout.query_translations();
            if !qpath.exists() {
                return Err(missing("query translations", "translate"));
            }
            for q in read_jsonl::<QueryTranslation>(&qpath)? {
                let query = Query::new(q.query_id.clone(), q.text, q.language.clone())?;
                queries.insert((q.query_id, q.language), query);
            }
        }
        Ok(Corpus { entries, by_id, store, queries })
    }

    pub(crate) fn stage_translate(&mut self, manifest: &mut RunManifest) -> Result<Vec<PathBuf>> {
        let entries = self.entries()?;
        let targets = self.config.targets();
        let retries = self.config.retries;
        if self.translator.is_none() {
            self.translator = Some(build::translator(&self.config.translator)?);
        }
        if self.quality_estimator.is_none() {
            if let Some(spec) = &self.config.quality_estimator {
                self.quality_estimator = Some(build::quality_estimator(spec)?);
            }
        }
        let translator = self.translator.as_deref().expect("built above");
        let cache_path = self.translation_cache()?;
        let cache = if cache_path.exists() { TranslationStore::load(&cache_path)? } else { TranslationStore::new() };

        let mut records: Vec<TranslationRecord> = Vec::new();
        for entry in &entries {
            for lang in &targets {
                let mut recs = translate_document_set(&entry.docs, lang, translator, &cache, retries)?;
                if let Some(qe) = self.quality_estimator.as_deref() {
                    for rec in recs.iter_mut().filter(|r| r.qe_score.is_none()) {
                        let source = &entry.docs.get(rec.doc_id).expect("record from this set").content;
                        match score_translation_quality(source, &rec.content_translated, qe, retries) {
                            Ok(score) => {
                                cache.set_qe_score(&rec.key(), score)?;
                                rec.qe_score = Some(score);
                            }
                            Err(e) => manifest.notice(format!(
                                "quality estimation failed for {}#{} in {lang}: {e}",
                                rec.query_id, rec.doc_id
                            )),
                        }
                    }
                }
                records.extend(recs);
            }
        }
        cache.save(&cache_path)?;
        let out = TranslationStore::from_records(records)?;
        out.save(&self.layout.translations())?;
        let mut outputs = vec![self.layout.translations()];

        if self.config.experiment == Experiment::QueryLanguage {
            let mut queries = Vec::new();
            for entry in &entries {
                for lang in &targets {
                    let q = translate_query(&entry.query, lang, translator, retries)?;
                    queries.push(QueryTranslation { query_id: q.id, language: q.language, text: q.text });
                }
            }
            write_jsonl(&self.layout.query_translations(), &queries)?;
            outputs.push(self.layout.query_translations());
        }
        Ok(outputs)
    }

    pub(crate) fn stage_generate_reports(&mut self) -> Result<Vec<PathBuf>> {
        if self.generator.is_none() {
            self.generator = Some(build::generator(&self.config.generator)?);
        }
        let generator = self.generator.as_deref().expect("built above");
        let (words, retries) = (self.config.total_words, self.config.retries);
        let jobs: Vec<(Query, DocumentSet)> = if self.config.experiment == Experiment::QueryLanguage {
            let corpus = self.corpus()?;
            let mut jobs = Vec::new();
            for entry in &corpus.entries {
                for lang in self.config.targets() {
                    jobs.push((corpus.query_in(&entry.query.id, &lang)?, corpus.docs_in(&entry.query.id, &lang)?));
                }
            }
            jobs
        } else {
            self.entries()?.into_iter().map(|e| (e.query, e.docs)).collect()
        };
        let reports: Vec<Report> = jobs
            .par_iter()
            .map(|(q, d)| generate_reference_report(q, d, generator, words, retries))
            .collect::<Result<_>>()?;
        write_jsonl(&self.layout.reports(), &reports)?;
        Ok(vec![self.layout.reports()])
    }

    pub(crate) fn stage_filter(&mut self) -> Result<Vec<PathBuf>> {
        if !self.layout.reports().exists() {
            return Err(missing("reports", "generate_reports"));
        }
        let reports: Vec<Report> = read_jsonl(&self.layout.reports())?;
        let corpus = self.corpus()?;
        if self.judges.is_none() {
            self.judges = Some(self.config.judges.iter().map(|s| build::judge(s)).collect::<Result<_>>()?);
        }
        if self.nli.is_none() {
            self.nli = Some(build::nli(&self.config.nli)?);
        }
        let contexts = reports
            .iter()
            .map(|r| Ok((corpus.query_in(&r.query_id, &r.language)?, corpus.docs_in(&r.query_id, &r.language)?)))
            .collect::<Result<Vec<_>>>()?;
        let inputs: Vec<PoolInput<'_>> =
            reports.iter().zip(&contexts).map(|(report, (query, docs))| PoolInput { report, query, docs }).collect();
        let pool = build_statement_pool(
            &inputs,
            self.judges.as_deref().expect("built above"),
            self.nli.as_deref().expect("built above"),
            self.config.retries,
        )?;
        write_jsonl(&self.layout.pool(), &pool.pool)?;
        write_jsonl(&self.layout.filter_outcomes(), &pool.outcomes)?;
        write_json(&self.layout.pool_stats(), &pool.stats)?;
        Ok(vec![self.layout.pool(), self.layout.filter_outcomes(), self.layout.pool_stats()])
    }

    /// Probe cells in output order, each with its statements.
    fn probe_plan<'c>(
        &self,
        corpus: &'c Corpus,
        pool: &'c [PoolEntry],
    ) -> Result<Vec<(ContextVariant, Vec<ProbeTask<'c>>)>> {
        let mut cells: Vec<(ContextVariant, Vec<ProbeTask<'c>>)> = Vec::new();
        let mut push = |context: ContrastiveContext, entry: &'c PoolEntry, docs: &'c DocumentSet| {
            let task = ProbeTask { entry, docs, context };
            match cells.iter_mut().find(|(v, _)| *v == task.context.variant) {
                Some((_, tasks)) => tasks.push(task),
                None => cells.push((task.context.variant.clone(), vec![task])),
            }
        };
        match self.config.experiment {
            Experiment::QueryLanguage => {
                for lang in self.config.targets() {
                    for entry in pool.iter().filter(|e| e.language == lang) {
                        let dataset = corpus.entry(&entry.query_id)?;
                        let query = corpus.query_in(&entry.query_id, &lang)?;
                        let cited = entry.statement.citation_id;
                        for ctx in build_query_language_variants(&query, &dataset.docs, &corpus.store, cited, &lang)? {
                            push(ctx, entry, &dataset.docs);
                        }
                    }
                }
            }
            Experiment::RelevanceVsLanguage => {
                for lang in self.config.targets() {
                    for entry in pool.iter().filter(|e| e.statement.citation_id == RELEVANT_ID) {
                        let dataset = corpus.entry(&entry.query_id)?;
                        for ctx in build_relevance_variants(&dataset.query, &dataset.docs, &corpus.store, &lang)? {
                            push(ctx, entry, &dataset.docs);
                        }
                    }
                }
            }
            _ => {
                for lang in self.config.eval_languages() {
                    for entry in pool {
                        let dataset = corpus.entry(&entry.query_id)?;
                        let cited = entry.statement.citation_id;
                        let ctx =
                            build_contrastive_context(&dataset.query, &dataset.docs, &corpus.store, cited, &lang)?;
                        push(ctx, entry, &dataset.docs);
                    }
                }
            }
        }
        // Sort within each cell so outputs do not depend on pool order.
        for (_, tasks) in &mut cells {
            tasks.sort_by(|a, b| {
                (&a.entry.query_id, a.entry.statement.index).cmp(&(&b.entry.query_id, b.entry.statement.index))
            });
        }
        Ok(cells)
    }

    pub(crate) fn stage_probe(&mut self, manifest: &mut RunManifest) -> Result<Vec<PathBuf>> {
        if !self.layout.pool().exists() {
            return Err(missing("statement pool", "filter"));
        }
        let pool: Vec<PoolEntry> = read_jsonl(&self.layout.pool())?;
        let corpus = self.corpus()?;
        if self.backend.is_none() {
            self.backend = Some(build::backend(&self.config.backend)?);
        }
        let backend = self.backend.as_deref().expect("built above");
        manifest.backend_model_id = Some(backend.model_id().to_owned());
        manifest.pool_digest = Some(file_digest(&self.layout.pool())?);

        let k_max = corpus.entries.iter().map(|e| e.docs.len()).max().unwrap_or(0);
        if backend.capabilities().tokenizer {
            if !check_single_token_ids(backend, k_max)? {
                return Err(Error::Config(format!(
                    "citation ids 1..={k_max} are not single tokens for {}",
                    backend.model_id()
                )));
            }
        } else {
            manifest.notice(format!("{} exposes no tokenizer; single-token id check skipped", backend.model_id()));
        }

        let design = self.config.experiment;
        let want_traces = design == Experiment::LayerAnalysis;
        let want_attr = design == Experiment::Attribution;
        let caps = backend.capabilities();
        let traces_on = want_traces && caps.layer_trace;
        let attr_on = want_attr && caps.sequence_logprob;
        if want_traces && !traces_on {
            manifest.notice(format!("{} lacks layer_trace; layer analysis skipped", backend.model_id()));
        }
        if want_attr && !attr_on {
            manifest.notice(format!("{} lacks sequence_logprob; attribution skipped", backend.model_id()));
        }

        let cache = ProbeCache::open(&self.config.cache_dir.join("probe"))?;
        let prober = Prober::new(backend, Some(&cache), self.config.retries);
        let threads = rayon::ThreadPoolBuilder::new()
            .num_threads(backend.max_in_flight().max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build probe thread pool: {e}")))?;
        let (seed, mask_count, lambda) = (self.config.seed, self.config.mask_count, self.config.lambda);

        let plan = self.probe_plan(&corpus, &pool)?;
        let mut predictions = Vec::new();
        let mut traces = Vec::new();
        let mut attributions = Vec::new();
        for (variant, tasks) in &plan {
            type Out = (CitationPrediction, Option<TraceRecord>, Option<AttributionRecord>);
            let results: Vec<Out> = threads.install(|| {
                tasks
                    .par_iter()
                    .map(|task| -> Result<Out> {
                        let st = &task.entry.statement;
                        let key = PredictionKey {
                            query_id: task.entry.query_id.clone(),
                            statement_index: st.index,
                            variant: variant.clone(),
                        };
                        let bundle = render_prompt(&task.context, &st.text, task.docs, &corpus.store)?;
                        let pred = next_citation_distribution(
                            &prober,
                            &bundle,
                            st.citation_id,
                            &key,
                            Some(task.context.position),
                        )?;
                        let trace = if traces_on {
                            let trace = layer_trace(&prober, &bundle, st.citation_id, &key)?;
                            Some(TraceRecord { trace, k_docs: task.docs.len() })
                        } else {
                            None
                        };
                        let attr = if attr_on {
                            let sentences = context_sentences(&task.context, task.docs, &corpus.store)?;
                            let masks = sample_masks(
                                sentences.len(),
                                mask_count,
                                statement_seed(seed, &key.query_id, st.index),
                            )?;
                            let samples = masks
                                .into_iter()
                                .map(|mask| {
                                    let prompt = render_ablation_prompt(
                                        &task.context,
                                        task.docs,
                                        &corpus.store,
                                        &sentences,
                                        &mask,
                                    )?;
                                    let logit_prob = ablation_logit_prob(&prober, &prompt, &st.text, &mask)?;
                                    Ok(AblationSample { mask, logit_prob })
                                })
                                .collect::<Result<Vec<_>>>()?;
                            let surrogate = fit_surrogate(&samples, lambda)?;
                            let sentence_docs: Vec<u8> = sentences.iter().map(|s| s.doc_id).collect();
                            let scores = attribution_scores(&surrogate, &sentence_docs, st.citation_id)?;
                            Some(AttributionRecord {
                                query_id: key.query_id.clone(),
                                statement_index: st.index,
                                variant: variant.clone(),
                                cited_id: st.citation_id,
                                sentence_docs,
                                surrogate,
                                scores,
                            })
                        } else {
                            None
                        };
                        Ok((pred, trace, attr))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            for (p, t, a) in results {
                predictions.push(p);
                traces.extend(t);
                attributions.extend(a);
            }
            manifest.cells.insert(variant.to_string(), true);
            write_json(&self.layout.manifest(), manifest)?;
            log::info!("probe: cell {variant} done ({} statements)", tasks.len());
        }
        self.probe_calls = prober.backend_calls();

        write_jsonl(&self.layout.predictions(), &predictions)?;
        let mut outputs = vec![self.layout.predictions()];
        for (on, path, written) in [
            (traces_on, self.layout.traces(), write_jsonl(&self.layout.traces(), &traces)),
            (attr_on, self.layout.attributions(), write_jsonl(&self.layout.attributions(), &attributions)),
        ] {
            written?;
            if on {
                outputs.push(path);
            } else {
                let _ = std::fs::remove_file(&path);
            }
        }
        Ok(outputs)
    }

    pub(crate) fn stage_analyze(&mut self, manifest: &mut RunManifest) -> Result<Vec<PathBuf>> {
        if !self.layout.predictions().exists() {
            return Err(missing("predictions", "probe"));
        }
        let predictions: Vec<CitationPrediction> = read_jsonl(&self.layout.predictions())?;
        let read_optional = |path: PathBuf| -> Result<Option<PathBuf>> { Ok(path.exists().then_some(path)) };
        let traces: Vec<TraceRecord> = match read_optional(self.layout.traces())? {
            Some(p) => read_jsonl(&p)?,
            None => Vec::new(),
        };
        let attributions: Vec<AttributionRecord> = match read_optional(self.layout.attributions())? {
            Some(p) => read_jsonl(&p)?,
            None => Vec::new(),
        };
        let mut results = analyze(
            self.config.experiment,
            &self.config.model_id,
            self.config.effective_family_size(),
            self.config.test,
            &predictions,
            &traces,
            &attributions,
        )?;
        results.notices.extend(manifest.notices.iter().cloned());
        for n in &results.notices {
            log::warn!("{n}");
        }
        write_json(&self.layout.results(), &results)?;
        emit_tables(std::slice::from_ref(&results), &self.layout.metrics(), &self.layout.table())?;
        Ok(vec![self.layout.results(), self.layout.metrics(), self.layout.table()])
    }
}
