use std::collections::HashSet;

use log::warn;
use serde::{Deserialize, Serialize};
use spatex_nn::{AdamW, AdamWConfig, ParamId, ParamStore, Tape, Var};

use super::config::{ConfigError, ElementSource, HybridConfig};
use super::window::{build_window, encode_s2s, DocAnalysis, Window};
use super::PipelineError;
use crate::analysis::{provider_by_name, AnalysisProvider};
use crate::cls_model::{pool_words, ClsHead, DualEncoder, EncoderDims};
use crate::corpus::{CanonicalLink, Document, LinkType};
use crate::cte::{gold_elements, gold_span_links, label_candidates, TaggedElement, Tagger, TaggerConfig};
use crate::gen_model::{
    build_target_sentence, coref_pair, gen_loss, ground_slots, parse_blocks, render_blocks, GenHead, GenerationOutput,
    TargetSentence, DELIMITER, NULL_SLOT,
};
use crate::rfx::{batch_rfx, invert_sentence, rfx_loss, AntonymLexicon};
use crate::vocab::{split_target, TargetVocab, WordPieceVocab};

/// The three vocabularies a model is built over.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabs {
    pub mlm: WordPieceVocab,
    pub s2s: WordPieceVocab,
    pub target: TargetVocab,
}

impl Vocabs {
    /// Encoder vocabularies from the training words; the target vocabulary
    /// covers the template, every training word and every gold target.
    pub fn build(config: &HybridConfig, docs: &[Document]) -> Self {
        let words = || docs.iter().flat_map(|d| d.tokens.iter().map(|t| t.text.as_str()));
        let mlm = WordPieceVocab::build(words(), config.mlm_min_freq, config.max_vocab, true);
        let s2s = WordPieceVocab::build(words(), config.s2s_min_freq, config.max_vocab, false);

        let mut pieces: Vec<String> = Vec::new();
        let skeleton = build_target_sentence(LinkType::Qslink, [Some("x"), None, None], Some(("x", "x")));
        let mut skeleton_text = render_blocks(&[skeleton.clone(), skeleton]);
        for t in LinkType::RELATIONS {
            skeleton_text.push(' ');
            skeleton_text.push_str(crate::gen_model::relation_name(t));
        }
        pieces.extend(split_target(&skeleton_text));
        pieces.extend(split_target(DELIMITER));
        pieces.extend(split_target(NULL_SLOT));
        for w in words() {
            pieces.extend(split_target(w));
            pieces.extend(split_target(&format!("``{w}''")));
        }
        for d in docs {
            for text in document_targets(d) {
                pieces.extend(split_target(&text));
            }
        }
        Self {
            mlm,
            s2s,
            target: TargetVocab::build(pieces),
        }
    }

    pub fn reindex(&mut self) {
        self.mlm.reindex();
        self.s2s.reindex();
        self.target.reindex();
    }
}

fn text_of(doc: &Document, (s, e): (usize, usize)) -> String {
    doc.tokens[s..e]
        .iter()
        .map(|t| t.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Sentence that owns a gold link for generation: the latest sentence among
/// its filled slots.
fn link_sentence(doc: &Document, slots: &[Option<(usize, usize)>; 3]) -> Option<usize> {
    slots.iter().flatten().map(|&(s, _)| doc.sentence_of_token(s)).max()
}

fn target_text(doc: &Document, window: &Window) -> String {
    let words = window.word_refs();
    let mut targets: Vec<TargetSentence> = Vec::new();
    for (ty, slots) in gold_span_links(doc) {
        if link_sentence(doc, &slots) != Some(window.sentence_id) {
            continue;
        }
        let local = slots.map(|s| s.and_then(|(a, b)| window.local(a, b)));
        let pair = coref_pair(local, &window.clusters, &words);
        let texts = slots.map(|s| s.map(|s| text_of(doc, s)));
        targets.push(build_target_sentence(
            ty,
            [texts[0].as_deref(), texts[1].as_deref(), texts[2].as_deref()],
            pair.as_ref().map(|(p, n)| (p.as_str(), n.as_str())),
        ));
    }
    render_blocks(&targets)
}

/// Gold target strings of a document without coreference prefixes, used to
/// seed the target vocabulary.
fn document_targets(doc: &Document) -> Vec<String> {
    gold_span_links(doc)
        .into_iter()
        .map(|(ty, slots)| {
            let texts = slots.map(|s| s.map(|s| text_of(doc, s)));
            render_blocks(&[build_target_sentence(
                ty,
                [texts[0].as_deref(), texts[1].as_deref(), texts[2].as_deref()],
                None,
            )])
        })
        .collect()
}

/// One training unit: a window with its candidate labels, generation
/// target and inverted sentences.
#[derive(Clone, Debug)]
pub struct Example {
    pub window: Window,
    pub labels: Vec<usize>,
    pub target_text: String,
    pub target: Vec<usize>,
    pub inverted: Vec<Vec<usize>>,
}

/// Per-step loss terms. Disabled or empty terms are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub total: f64,
    pub cls: Option<f64>,
    pub gen: Option<f64>,
    pub rfx: Option<f64>,
}

/// Links produced for one document, per branch and merged.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DocumentPrediction {
    pub doc_id: String,
    pub cls: Vec<CanonicalLink>,
    pub gen: Vec<CanonicalLink>,
    pub links: Vec<CanonicalLink>,
    pub generations: Vec<GenerationOutput>,
}

/// Set union preserving first occurrence order.
pub fn union_links(branches: &[&[CanonicalLink]]) -> Vec<CanonicalLink> {
    let mut seen: HashSet<&CanonicalLink> = HashSet::new();
    let mut out = Vec::new();
    for l in branches.iter().flat_map(|b| b.iter()) {
        if seen.insert(l) {
            out.push(l.clone());
        }
    }
    out
}

pub fn load_lexicon(config: &HybridConfig) -> Result<AntonymLexicon, PipelineError> {
    if config.lexicon_path == "builtin" {
        return Ok(AntonymLexicon::builtin());
    }
    if !config.use_rfx && config.lexicon_path.trim().is_empty() {
        return Ok(AntonymLexicon::default());
    }
    Ok(AntonymLexicon::load(std::path::Path::new(&config.lexicon_path))?)
}

pub struct HybridModel {
    pub config: HybridConfig,
    pub vocabs: Vocabs,
    pub params: ParamStore,
    pub encoder: DualEncoder,
    pub cls: ClsHead,
    pub gen: GenHead,
    pub tagger: Option<Tagger>,
    pub lexicon: AntonymLexicon,
    provider: Box<dyn AnalysisProvider>,
}

impl HybridModel {
    pub fn new(config: HybridConfig, vocabs: Vocabs) -> Result<Self, PipelineError> {
        config.validate()?;
        let provider =
            provider_by_name(&config.provider).ok_or_else(|| ConfigError::Provider(config.provider.clone()))?;
        let lexicon = load_lexicon(&config)?;
        let dims = encoder_dims(&config);
        let mut params = ParamStore::new(config.seed);
        let encoder = DualEncoder::new(
            &mut params,
            &dims,
            vocabs.mlm.len(),
            vocabs.s2s.len(),
            config.use_cross_attention,
        );
        let cls = ClsHead::new(&mut params, config.hidden_size, config.gcn_layers, config.use_gcn);
        let gen = GenHead::new(
            &mut params,
            vocabs.target.len(),
            config.hidden_size,
            config.attention_heads,
            config.decoder_layers,
            config.ffn_size,
            config.max_decode_len,
        );
        Ok(Self {
            config,
            vocabs,
            params,
            encoder,
            cls,
            gen,
            tagger: None,
            lexicon,
            provider,
        })
    }

    /// Fresh model with vocabularies built from `docs`.
    pub fn from_training_docs(config: HybridConfig, docs: &[Document]) -> Result<Self, PipelineError> {
        let vocabs = Vocabs::build(&config, docs);
        Self::new(config, vocabs)
    }

    pub fn provider(&self) -> &dyn AnalysisProvider {
        self.provider.as_ref()
    }

    pub fn tagger_config(&self) -> TaggerConfig {
        let c = &self.config;
        TaggerConfig {
            hidden: c.hidden_size,
            heads: c.attention_heads,
            layers: c.encoder_layers,
            ffn: c.ffn_size,
            max_len: c.max_seq_len,
            window_overlap: c.window_overlap.min(c.max_seq_len / 2),
            learning_rate: c.tagger_learning_rate,
            epochs: c.tagger_epochs,
            batch_size: c.batch_size,
            seed: c.seed,
        }
    }

    /// Train the element and role tagger on `docs` and attach it.
    pub fn fit_tagger(&mut self, docs: &[Document]) -> Vec<f64> {
        let mut tagger = Tagger::new(self.tagger_config(), self.vocabs.mlm.clone());
        let history = tagger.fit(docs);
        self.tagger = Some(tagger);
        history
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW::new(AdamWConfig {
            lr: self.config.learning_rate,
            weight_decay: self.config.weight_decay,
            max_grad_norm: (self.config.max_grad_norm > 0.0).then_some(self.config.max_grad_norm),
            ..AdamWConfig::default()
        })
    }

    /// Elements of every sentence, from gold annotation or the tagger.
    fn elements_by_sentence(&self, doc: &Document, source: ElementSource) -> Vec<Vec<TaggedElement>> {
        doc.sentences
            .iter()
            .map(|s| match (source, &self.tagger) {
                (ElementSource::Tagger, Some(tagger)) => tagger.predict_elements(doc, s.id),
                _ => gold_elements(doc, s.id),
            })
            .collect()
    }

    /// Windows of every sentence that has at least one element.
    pub fn windows(&self, doc: &Document, source: ElementSource) -> Vec<Window> {
        let elements = self.elements_by_sentence(doc, source);
        let analysis = DocAnalysis::run(doc, self.provider.as_ref());
        doc.sentences
            .iter()
            .filter(|s| !elements[s.id].is_empty())
            .map(|s| build_window(doc, s.id, &elements, &analysis, &self.vocabs.mlm, &self.vocabs.s2s))
            .collect()
    }

    /// Training examples over gold elements. Inversion seeds advance from
    /// the configured seed in example order.
    pub fn examples(&self, docs: &[Document]) -> Vec<Example> {
        let mut counter = 0u64;
        let mut out = Vec::new();
        for doc in docs {
            let gold = gold_span_links(doc);
            for window in self.windows(doc, ElementSource::Gold) {
                let labels: Vec<usize> = label_candidates(&window.candidates, &window.elements, &gold)
                    .into_iter()
                    .map(LinkType::class_index)
                    .collect();
                let target_text = target_text(doc, &window);
                let target = self.vocabs.target.encode(&target_text);
                let mut inverted = Vec::new();
                if self.config.use_rfx {
                    let words = window.word_refs();
                    for (c, &label) in window.candidates.iter().zip(&labels) {
                        if self.config.rfx_positive_only && label == LinkType::Null.class_index() {
                            continue;
                        }
                        let [tm, tr, lg] = c.slots().map(|i| window.spans[i]);
                        let seed = self.config.seed.wrapping_add(counter);
                        counter += 1;
                        if let Ok(inv) = invert_sentence(&words, tm, tr, lg, &self.lexicon, seed) {
                            let refs: Vec<&str> = inv.tokens.iter().map(String::as_str).collect();
                            inverted.push(encode_s2s(&self.vocabs.s2s, &refs));
                        }
                    }
                }
                out.push(Example {
                    window,
                    labels,
                    target_text,
                    target,
                    inverted,
                });
            }
        }
        out
    }

    fn needs_mlm(&self, rfx_items: usize) -> bool {
        self.config.use_cls || (self.config.use_rfx && self.config.use_cross_attention && rfx_items > 0)
    }

    /// Classifier logits of every candidate of `window`, or `None` when it
    /// has no candidates.
    fn cls_logits(&self, t: &mut Tape, window: &Window, cb: Var) -> Result<Option<Var>, PipelineError> {
        if window.candidates.is_empty() {
            return Ok(None);
        }
        let words = pool_words(t, cb, &window.mlm_words, &self.cls.word_scorer)?;
        let ns = self.cls.node_states(t, words, &window.spans, &window.graph)?;
        let rows = window
            .candidates
            .iter()
            .map(|c| self.cls.triplet_input(t, words, &window.spans, ns, c.slots()))
            .collect::<Result<Vec<_>, _>>()?;
        let inputs = t.concat_rows(&rows);
        Ok(Some(self.cls.classify(t, inputs)))
    }

    /// Weighted joint loss of a batch on `t`, with the value of each term.
    pub fn batch_loss(&self, t: &mut Tape, batch: &[&Example]) -> Result<Option<(Var, StepLosses)>, PipelineError> {
        let c = &self.config;
        let mut logits = Vec::new();
        let mut labels = Vec::new();
        let mut gen_parts = Vec::new();
        let mut rfx_terms = Vec::new();
        for ex in batch {
            let w = &ex.window;
            let et = self.encoder.encode_s2s(t, &w.s2s_ids);
            let (cb, ct) = if self.needs_mlm(ex.inverted.len()) {
                let eb = self.encoder.mlm.forward_windowed(t, &w.mlm_ids, c.window_overlap);
                let (cb, ct) = self.encoder.cross_attend(t, eb, et);
                (Some(cb), ct)
            } else {
                (None, et)
            };
            if c.use_cls {
                if let Some(l) = self.cls_logits(t, w, cb.expect("mlm stream encoded"))? {
                    logits.push(l);
                    labels.extend_from_slice(&ex.labels);
                }
            }
            if c.use_gen {
                gen_parts.push(self.gen.token_nll(t, et, &ex.target, self.vocabs.target.bos()));
            }
            if c.use_rfx {
                for ivs in &ex.inverted {
                    let ivt = self.encoder.encode_s2s(t, ivs);
                    rfx_terms.push(rfx_loss(t, ct, ivt)?);
                }
            }
        }

        let mut terms: Vec<Var> = Vec::new();
        let mut out = StepLosses::default();
        if !logits.is_empty() {
            let stacked = t.concat_rows(&logits);
            let l = t.cross_entropy(stacked, &labels);
            out.cls = Some(t.scalar(l));
            terms.push(t.scale(l, c.loss_weight_cls));
        }
        if let Some(l) = gen_loss(t, &gen_parts) {
            out.gen = Some(t.scalar(l));
            terms.push(t.scale(l, c.loss_weight_gen));
        }
        if !rfx_terms.is_empty() {
            let l = batch_rfx(t, &rfx_terms);
            out.rfx = Some(t.scalar(l));
            terms.push(t.scale(l, c.loss_weight_rfx));
        }
        if terms.is_empty() {
            return Ok(None);
        }
        let stacked = t.concat_rows(&terms);
        let total = t.sum_all(stacked);
        out.total = t.scalar(total);
        Ok(Some((total, out)))
    }

    /// One optimiser step. Returns `None` when the batch contributes no
    /// loss term. A non-finite loss leaves the weights untouched.
    pub fn train_step(&mut self, opt: &mut AdamW, batch: &[&Example]) -> Result<Option<StepLosses>, PipelineError> {
        let (losses, grads) = {
            let mut t = Tape::new(&self.params);
            let Some((total, losses)) = self.batch_loss(&mut t, batch)? else {
                return Ok(None);
            };
            if !losses.total.is_finite() {
                return Err(PipelineError::Diverged {
                    losses,
                    batch: batch
                        .iter()
                        .map(|e| format!("{}#{}", e.window.doc_id, e.window.sentence_id))
                        .collect(),
                });
            }
            let grads: std::collections::HashMap<ParamId, _> = t.backward(total).into_params();
            (losses, grads)
        };
        opt.step(&mut self.params, &grads);
        Ok(Some(losses))
    }

    /// Argmax class of every candidate of `window`.
    pub fn predict_labels(&self, window: &Window) -> Result<Vec<LinkType>, PipelineError> {
        let mut t = Tape::new(&self.params);
        let et = self.encoder.encode_s2s(&mut t, &window.s2s_ids);
        let eb = self
            .encoder
            .mlm
            .forward_windowed(&mut t, &window.mlm_ids, self.config.window_overlap);
        let (cb, _) = self.encoder.cross_attend(&mut t, eb, et);
        let Some(logits) = self.cls_logits(&mut t, window, cb)? else {
            return Ok(Vec::new());
        };
        Ok(t.value(logits)
            .rows()
            .into_iter()
            .map(|r| {
                let best = (0..r.len()).fold(0, |b, i| if r[i] > r[b] { i } else { b });
                LinkType::from_class_index(best)
            })
            .collect())
    }

    /// Greedy decode of the target text for `window`.
    pub fn generate_text(&self, window: &Window) -> String {
        let memory = {
            let mut t = Tape::new(&self.params);
            let et = self.encoder.encode_s2s(&mut t, &window.s2s_ids);
            t.value(et).clone()
        };
        let ids = self.gen.generate(&self.params, &memory, &self.vocabs.target);
        self.vocabs.target.decode(&ids)
    }

    fn canonical(doc: &Document, window: &Window, ty: LinkType, slots: [Option<(usize, usize)>; 3]) -> CanonicalLink {
        let span = |s: Option<(usize, usize)>| s.map(|(a, b)| doc.span_chars(window.offset + a, window.offset + b));
        CanonicalLink {
            doc_id: doc.doc_id.clone(),
            link_type: ty,
            tm: span(slots[0]),
            tr: span(slots[1]),
            lg: span(slots[2]),
        }
    }

    /// Predictions of both enabled branches for one document.
    pub fn decode_document(&self, doc: &Document) -> Result<DocumentPrediction, PipelineError> {
        let mut pred = DocumentPrediction {
            doc_id: doc.doc_id.clone(),
            ..Default::default()
        };
        for window in self.windows(doc, self.config.decode_elements) {
            if self.config.use_cls {
                for (c, ty) in window.candidates.iter().zip(self.predict_labels(&window)?) {
                    if ty != LinkType::Null {
                        let slots = c.slots().map(|i| Some(window.spans[i]));
                        pred.cls.push(Self::canonical(doc, &window, ty, slots));
                    }
                }
            }
            if self.config.use_gen {
                let decoded = self.generate_text(&window);
                let words = window.word_refs();
                let mut parsed = Vec::new();
                let mut failures = Vec::new();
                for block in parse_blocks(&decoded) {
                    match block.and_then(|t| ground_slots(&t, &words, &window.spans).map(|g| (t, g))) {
                        Ok((t, slots)) => {
                            pred.gen.push(Self::canonical(doc, &window, t.relation, slots));
                            parsed.push(t);
                        }
                        Err(e) => failures.push(e.to_string()),
                    }
                }
                if !failures.is_empty() {
                    warn!(
                        "{}#{}: {} generated block(s) dropped",
                        doc.doc_id,
                        window.sentence_id,
                        failures.len()
                    );
                }
                pred.generations.push(GenerationOutput {
                    doc_id: doc.doc_id.clone(),
                    sentence_id: window.sentence_id,
                    decoded,
                    parsed,
                    failures,
                });
            }
        }
        pred.links = union_links(&[&pred.cls, &pred.gen]);
        Ok(pred)
    }

    /// Decode every document, in parallel across documents.
    pub fn decode(&self, docs: &[Document]) -> Result<Vec<DocumentPrediction>, PipelineError> {
        use rayon::prelude::*;
        docs.par_iter().map(|d| self.decode_document(d)).collect()
    }
}

pub fn encoder_dims(config: &HybridConfig) -> EncoderDims {
    EncoderDims {
        hidden: config.hidden_size,
        heads: config.attention_heads,
        layers: config.encoder_layers,
        ffn: config.ffn_size,
        max_len: config.max_seq_len,
        window_overlap: config.window_overlap.min(config.max_seq_len / 2),
    }
}
