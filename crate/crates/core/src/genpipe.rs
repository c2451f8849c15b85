//! Dataset generation: underspecification injection, labeling, stratified
//! sampling and splitting.

use std::collections::HashSet;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bio::{derive_bio_tags, tags_from_spans, SlotBinding};
use crate::corpus::TableCorpus;
use crate::instance::{QAInstance, Split};
use crate::labels::{Category, ConditionLabel, ScopeErrorType, ScopeLabel};
use crate::llm::{prompts, ChatRequest, LlmBackend, Message, Stage};
use crate::registry::UNKNOWN_INTENT;
use crate::scope::{joint_count, slot_search, unmatch_attribution};
use crate::seed;
use crate::templates::{instantiate, substitute, SeedTemplate, TemplatePack, UnderspecClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub specified: usize,
    pub select: usize,
    pub from: usize,
    #[serde(rename = "where")]
    pub where_: usize,
    pub mixed: usize,
}

impl Counts {
    pub fn get(&self, c: Category) -> usize {
        match c {
            Category::Specified => self.specified,
            Category::Select => self.select,
            Category::From => self.from,
            Category::Where => self.where_,
            Category::Mixed => self.mixed,
        }
    }

    pub fn total(&self) -> usize {
        Category::ALL.iter().map(|c| self.get(*c)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    /// Split sizes for `n` items by largest remainder.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let w = [self.train, self.validation, self.test];
        let exact: Vec<f64> = w.iter().map(|r| r * n as f64).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut left = n - sizes.iter().sum::<usize>();
        for i in order {
            if left == 0 {
                break;
            }
            sizes[i] += 1;
            left -= 1;
        }
        [sizes[0], sizes[1], sizes[2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbbrevMode {
    #[default]
    Rule,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub counts: Counts,
    #[serde(default)]
    pub split: SplitRatios,
    pub seed: u64,
    #[serde(default)]
    pub abbreviation: AbbrevMode,
    /// Paraphrase intent-underspecified questions through the model.
    #[serde(default)]
    pub paraphrase: bool,
    /// Bindings sampled per requested instance before giving up.
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn default_attempts() -> usize {
    200
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let r = self.split;
        if [r.train, r.validation, r.test].iter().any(|x| *x < 0.0)
            || (r.train + r.validation + r.test - 1.0).abs() > 1e-9
        {
            return Err(GenError::Config(format!(
                "split ratios must be nonnegative and sum to 1, got {} {} {}",
                r.train, r.validation, r.test
            )));
        }
        if self.max_attempts == 0 {
            return Err(GenError::Config("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("config: {0}")]
    Config(String),
    #[error("template {template}: {message}")]
    Inject { template: String, message: String },
    #[error("empty name")]
    EmptyName,
    #[error("could not reach stratum targets: {}", describe_shortfall(.0))]
    Shortfall(Vec<Shortfall>, Box<Dataset>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortfall {
    pub category: Category,
    pub wanted: usize,
    pub got: usize,
}

fn describe_shortfall(s: &[Shortfall]) -> String {
    s.iter()
        .map(|x| format!("{} {}/{}", x.category.as_str(), x.got, x.wanted))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InjectError {
    #[error("template {0} is not SELECT-underspecified")]
    NotSelect(String),
    #[error("instance has no scope slot in its question")]
    NoScopeSlot,
    #[error("no variant of group {0} omits a scope slot")]
    NoMissingVariant(String),
    #[error("Unmatch needs two scope slots; the instance has {0}")]
    UnmatchImpossible(usize),
    #[error("no valid value forms an unmatched combination")]
    NoUnmatchSwap,
    #[error("no perturbation of {0:?} left the corpus within the attempt budget")]
    PerturbationFailed(String),
    #[error("no condition entity with an abbreviation")]
    NoAbbreviation,
    #[error("template {0} not in pack")]
    UnknownTemplate(String),
    #[error("{0}")]
    Render(String),
}

/// Re-renders the question of `inst` from `t` and a binding.
fn render(inst: &mut QAInstance, t: &SeedTemplate, binding: &SlotBinding) -> Result<(), InjectError> {
    let (question, spans) =
        substitute(&t.question_template, binding).map_err(|s| InjectError::Render(format!("binding lacks {s}")))?;
    inst.bio = tags_from_spans(&question, &spans).map_err(|e| InjectError::Render(e.to_string()))?;
    inst.question = question;
    inst.template_id = t.id.clone();
    Ok(())
}

/// The values the question currently mentions, plus anything else from
/// `full` (needed for slots the question omits).
fn question_binding(inst: &QAInstance, full: &SlotBinding) -> SlotBinding {
    let mut b = full.clone();
    for (k, v) in inst.question_slots() {
        b.insert(k, v);
    }
    b
}

fn refresh_category(inst: &mut QAInstance) {
    inst.category = inst.computed_category();
}

fn template_of<'a>(inst: &QAInstance, pack: &'a TemplatePack) -> Result<&'a SeedTemplate, InjectError> {
    pack.get(&inst.template_id)
        .ok_or_else(|| InjectError::UnknownTemplate(inst.template_id.clone()))
}

/// Swaps in the vague SELECT phrasing of `t`. Gold SQL is left alone.
pub fn inject_select(mut inst: QAInstance, t: &SeedTemplate, binding: &SlotBinding) -> Result<QAInstance, InjectError> {
    if t.underspec_class != UnderspecClass::Select {
        return Err(InjectError::NotSelect(t.id.clone()));
    }
    let b = question_binding(&inst, binding);
    render(&mut inst, t, &b)?;
    inst.intents = vec![UNKNOWN_INTENT.to_string()];
    inst.intent_underspec = true;
    inst.select_clarification = t.select_clarification.clone();
    refresh_category(&mut inst);
    Ok(inst)
}

/// Single-character substitution within the same character class.
pub fn perturb(value: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    let chars: Vec<char> = value.chars().collect();
    let positions: Vec<usize> = (0..chars.len()).filter(|&i| chars[i].is_ascii_alphanumeric()).collect();
    let &pos = positions.choose(rng)?;
    let c = chars[pos];
    let pool: Vec<char> = if c.is_ascii_digit() {
        ('0'..='9').collect()
    } else if c.is_ascii_uppercase() {
        ('A'..='Z').collect()
    } else {
        ('a'..='z').collect()
    };
    let pool: Vec<char> = pool.into_iter().filter(|&x| x != c).collect();
    let mut out = chars;
    out[pos] = *pool.choose(rng)?;
    Some(out.into_iter().collect())
}

const PERTURB_ATTEMPTS: usize = 10;

/// Injects one FROM underspecification.
///
/// `binding` is the full binding the instance was generated from; the
/// correct value of the affected slot is stored in `from_clarification`.
pub fn inject_from(
    mut inst: QAInstance,
    pack: &TemplatePack,
    binding: &SlotBinding,
    kind: ScopeErrorType,
    rng: &mut ChaCha8Rng,
    corpus: &TableCorpus,
) -> Result<QAInstance, InjectError> {
    let registry = corpus.slots().map_err(|e| InjectError::Render(e.to_string()))?;
    let t = template_of(&inst, pack)?;
    let mut qb = question_binding(&inst, binding);
    let in_question: Vec<String> = t
        .scope_slots()
        .into_iter()
        .filter(|s| t.question_slots().contains(s))
        .collect();
    let domain = inst.domain;
    match kind {
        ScopeErrorType::Missing => {
            let variants: Vec<&SeedTemplate> = pack
                .templates()
                .iter()
                .filter(|v| {
                    v.group == t.group
                        && v.underspec_class == UnderspecClass::From
                        && !v.omitted_scope_slots().is_empty()
                        && v.intents == inst.intents
                })
                .collect();
            let v = *variants
                .choose(rng)
                .ok_or_else(|| InjectError::NoMissingVariant(t.group.clone()))?;
            let omitted = v.omitted_scope_slots();
            render(&mut inst, v, &qb)?;
            for s in omitted {
                let label = registry.label(&s).to_string();
                inst.scope_labels.push(ScopeLabel::missing(&label));
                inst.from_clarification.insert(label, binding[&s].clone());
            }
        }
        ScopeErrorType::Error => {
            let slot = in_question.choose(rng).ok_or(InjectError::NoScopeSlot)?.clone();
            let original = qb[&slot].clone();
            let mut bad = None;
            for _ in 0..PERTURB_ATTEMPTS {
                let Some(p) = perturb(&original, rng) else { break };
                let hits = slot_search(&[p.as_str()], domain.as_str(), corpus).expect("known domain")[p.as_str()];
                if hits == 0 && !corpus.value_exists(domain, &slot, &p).unwrap_or(true) {
                    bad = Some(p);
                    break;
                }
            }
            let bad = bad.ok_or(InjectError::PerturbationFailed(original.clone()))?;
            qb.insert(slot.clone(), bad.clone());
            render(&mut inst, t, &qb)?;
            let label = registry.label(&slot).to_string();
            inst.scope_labels
                .push(ScopeLabel::new(bad, &label, ScopeErrorType::Error).expect("nonempty"));
            inst.from_clarification.insert(label, original);
        }
        ScopeErrorType::Unmatch => {
            if in_question.len() < 2 {
                return Err(InjectError::UnmatchImpossible(in_question.len()));
            }
            let mut swaps: Vec<(String, String)> = Vec::new();
            for slot in &in_question {
                for candidate in corpus.slot_values(domain, slot) {
                    if candidate == qb[slot] {
                        continue;
                    }
                    let mut trial = qb.clone();
                    trial.insert(slot.clone(), candidate.clone());
                    let values: Vec<&str> = in_question.iter().map(|s| trial[s].as_str()).collect();
                    if joint_count(&values, domain, corpus) != 0 {
                        continue;
                    }
                    let counts = slot_search(&values, domain.as_str(), corpus).expect("known domain");
                    if values.iter().any(|v| counts[*v] == 0) {
                        continue;
                    }
                    let entries: Vec<(String, usize)> = in_question
                        .iter()
                        .map(|s| (s.clone(), counts[trial[s].as_str()]))
                        .collect();
                    let blamed = unmatch_attribution(&entries).expect("nonempty");
                    if in_question[blamed] == *slot {
                        swaps.push((slot.clone(), candidate));
                    }
                }
            }
            let (slot, value) = swaps.choose(rng).ok_or(InjectError::NoUnmatchSwap)?.clone();
            let original = qb[&slot].clone();
            qb.insert(slot.clone(), value.clone());
            render(&mut inst, t, &qb)?;
            let label = registry.label(&slot).to_string();
            inst.scope_labels
                .push(ScopeLabel::new(value, &label, ScopeErrorType::Unmatch).expect("nonempty"));
            inst.from_clarification.insert(label, original);
        }
    }
    refresh_category(&mut inst);
    Ok(inst)
}

/// Full entity name → abbreviation, in corpus order.
pub type AbbrevMap = IndexMap<String, String>;

/// Trailing words that designate a legal form, phase or building rather
/// than the entity itself.
const SUFFIX_DESIGNATORS: &[&str] = &[
    "inc",
    "inc.",
    "ltd",
    "ltd.",
    "co",
    "co.",
    "corp",
    "corp.",
    "company",
    "group",
    "holdings",
    "limited",
    "residences",
    "tower",
    "towers",
    "phase",
    "block",
    "wing",
    "plaza",
    "court",
    "estate",
    "one",
    "two",
    "three",
    "a",
    "b",
    "c",
    "north",
    "south",
    "east",
    "west",
];

/// Leading tokens up to half the name length, minus trailing designators.
pub fn rule_abbreviation(name: &str) -> Result<Option<String>, GenError> {
    let name = name.trim();
    if name.is_empty() {
        return Err(GenError::EmptyName);
    }
    let tokens: Vec<&str> = name.split_whitespace().collect();
    if tokens.len() < 2 {
        return Ok(None);
    }
    let half = name.chars().count() as f64 / 2.0;
    let mut kept: Vec<&str> = Vec::new();
    for tok in &tokens {
        let mut len = kept.iter().map(|t| t.chars().count()).sum::<usize>() + kept.len();
        len += tok.chars().count();
        if len as f64 > half {
            break;
        }
        kept.push(tok);
    }
    while kept
        .last()
        .is_some_and(|t| SUFFIX_DESIGNATORS.contains(&t.to_lowercase().as_str()))
    {
        kept.pop();
    }
    if kept.is_empty() || kept.len() == tokens.len() {
        return Ok(None);
    }
    Ok(Some(kept.join(" ")))
}

fn llm_abbreviation(name: &str, llm: &dyn LlmBackend) -> Option<String> {
    let req = ChatRequest::new(
        Stage::Paraphrase,
        vec![Message::system(prompts::ABBREVIATE), Message::user(name)],
    );
    let out = llm.complete(&req).ok()?;
    let line = out.lines().next().unwrap_or("").trim().to_string();
    (!line.is_empty() && line != name.trim() && line.len() < name.trim().len()).then_some(line)
}

/// Abbreviations for every entity value in the corpus. Candidates that
/// still exist in the corpus for their slot type are dropped.
pub fn build_abbrev_map(
    corpus: &TableCorpus,
    mode: AbbrevMode,
    llm: Option<&dyn LlmBackend>,
) -> Result<AbbrevMap, GenError> {
    let registry = corpus.slots().map_err(|e| GenError::Config(e.to_string()))?;
    if mode == AbbrevMode::Llm && llm.is_none() {
        return Err(GenError::Config("llm abbreviation mode needs a backend".into()));
    }
    let mut map = AbbrevMap::new();
    for slot in registry.entity_types() {
        let spec = registry.get(slot).expect("registered");
        for domain in spec.domains.keys() {
            for name in corpus.slot_values(*domain, slot) {
                if map.contains_key(&name) {
                    continue;
                }
                let candidate = match mode {
                    AbbrevMode::Rule => rule_abbreviation(&name)?,
                    AbbrevMode::Llm => llm_abbreviation(&name, llm.expect("checked")),
                };
                let Some(abbrev) = candidate else { continue };
                let exists = spec
                    .domains
                    .keys()
                    .any(|d| corpus.value_exists(*d, slot, &abbrev).unwrap_or(true));
                if !exists {
                    map.insert(name, abbrev);
                }
            }
        }
    }
    Ok(map)
}

/// Replaces the first condition entity of the question that has an
/// abbreviation. The full name goes to `where_clarification`.
pub fn inject_where(
    mut inst: QAInstance,
    pack: &TemplatePack,
    binding: &SlotBinding,
    abbrev: &AbbrevMap,
    corpus: &TableCorpus,
) -> Result<QAInstance, InjectError> {
    let registry = corpus.slots().map_err(|e| InjectError::Render(e.to_string()))?;
    let t = template_of(&inst, pack)?;
    let mut qb = question_binding(&inst, binding);
    let entity = t
        .question_slots()
        .into_iter()
        .filter(|s| registry.get(s).is_some_and(|x| x.entity))
        .find(|s| abbrev.contains_key(&qb[s]))
        .ok_or(InjectError::NoAbbreviation)?;
    let full = qb[&entity].clone();
    let short = abbrev[&full].clone();
    qb.insert(entity.clone(), short.clone());
    render(&mut inst, t, &qb)?;
    let label = registry.label(&entity).to_string();
    inst.condition_labels
        .push(ConditionLabel::new(short, &label).expect("nonempty"));
    inst.where_clarification.insert(label, full);
    refresh_category(&mut inst);
    Ok(inst)
}

/// Asks the model for a paraphrase that avoids every forbidden string and
/// keeps every slot value verbatim. Returns the original on failure, with
/// `false`.
pub fn paraphrase(inst: QAInstance, llm: &dyn LlmBackend, forbidden: &[String]) -> (QAInstance, bool) {
    const ATTEMPTS: u64 = 2;
    let slots = inst.question_slots();
    let system = prompts::fill(prompts::PARAPHRASE, &[("forbidden", &forbidden.join(", "))]);
    for attempt in 0..ATTEMPTS {
        let req = ChatRequest::new(
            Stage::Paraphrase,
            vec![Message::system(system.clone()), Message::user(inst.question.clone())],
        )
        .with_seed(attempt);
        let Ok(out) = llm.complete(&req) else { continue };
        let candidate = out.trim();
        if candidate.is_empty() || contains_forbidden(candidate, forbidden) {
            continue;
        }
        if !slots.values().all(|v| candidate.contains(v.as_str())) {
            continue;
        }
        let Ok(bio) = derive_bio_tags(candidate, &slots) else {
            continue;
        };
        let mut out = inst;
        out.question = candidate.to_string();
        out.bio = bio;
        return (out, true);
    }
    (inst, false)
}

pub fn contains_forbidden(text: &str, forbidden: &[String]) -> bool {
    let lower = text.to_lowercase();
    forbidden
        .iter()
        .filter(|f| !f.trim().is_empty())
        .any(|f| lower.contains(&f.to_lowercase()))
}

/// What a requested instance should carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recipe {
    pub select: bool,
    pub from: Option<ScopeErrorType>,
    pub where_: bool,
}

impl Recipe {
    const fn new(select: bool, from: Option<ScopeErrorType>, where_: bool) -> Self {
        Self { select, from, where_ }
    }

    pub fn category(&self) -> Category {
        Category::classify(self.select, self.from.is_some(), self.where_)
    }

    fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.select {
            parts.push("select".to_string());
        }
        if let Some(k) = self.from {
            parts.push(k.as_str().to_lowercase());
        }
        if self.where_ {
            parts.push("where".to_string());
        }
        if parts.is_empty() {
            parts.push("specified".into());
        }
        parts.join("+")
    }
}

const FROM_CYCLE: [ScopeErrorType; 3] = [ScopeErrorType::Missing, ScopeErrorType::Error, ScopeErrorType::Unmatch];

const MIXED_CYCLE: [Recipe; 5] = [
    Recipe::new(false, Some(ScopeErrorType::Missing), true),
    Recipe::new(false, Some(ScopeErrorType::Error), true),
    Recipe::new(true, None, true),
    Recipe::new(false, Some(ScopeErrorType::Unmatch), true),
    Recipe::new(true, Some(ScopeErrorType::Error), false),
];

/// The recipe of the `i`-th requested instance of a stratum.
pub fn recipe_for(category: Category, i: usize) -> Recipe {
    match category {
        Category::Specified => Recipe::new(false, None, false),
        Category::Select => Recipe::new(true, None, false),
        Category::From => Recipe::new(false, Some(FROM_CYCLE[i % 3]), false),
        Category::Where => Recipe::new(false, None, true),
        Category::Mixed => MIXED_CYCLE[i % MIXED_CYCLE.len()],
    }
}

/// Base templates able to carry a recipe, in pack order. Select recipes
/// start from the group's specified template and borrow the select
/// variant's phrasing.
fn candidates<'a>(pack: &'a TemplatePack, recipe: &Recipe, corpus: &TableCorpus) -> Vec<&'a SeedTemplate> {
    let Ok(registry) = corpus.slots() else {
        return Vec::new();
    };
    pack.templates()
        .iter()
        .filter(|t| t.underspec_class == UnderspecClass::Specified)
        .filter(|t| {
            let group_has = |class: UnderspecClass| {
                pack.templates()
                    .iter()
                    .any(|v| v.group == t.group && v.underspec_class == class)
            };
            let select_t = pack
                .templates()
                .iter()
                .find(|v| v.group == t.group && v.underspec_class == UnderspecClass::Select);
            let phrasing = if recipe.select { select_t } else { Some(*t) };
            let Some(phrasing) = phrasing else { return false };
            let q = phrasing.question_slots();
            let scope_in_q = phrasing.scope_slots().iter().filter(|s| q.contains(s)).count();
            let ok_from = match recipe.from {
                None => true,
                Some(ScopeErrorType::Missing) => !recipe.select && group_has(UnderspecClass::From),
                Some(ScopeErrorType::Error) => scope_in_q >= 1,
                Some(ScopeErrorType::Unmatch) => scope_in_q >= 2,
            };
            let ok_where = !recipe.where_ || q.iter().any(|s| registry.get(s).is_some_and(|x| x.entity));
            ok_from && ok_where
        })
        .collect()
}

/// Random row of a random table of the template's domain, projected onto
/// the template's slots.
fn sample_binding(t: &SeedTemplate, corpus: &TableCorpus, rng: &mut ChaCha8Rng) -> Option<SlotBinding> {
    let registry = corpus.slots().ok()?;
    let caption = corpus.list_captions(t.domain).choose(rng)?;
    let schema = corpus.schema(caption)?;
    let rows = corpus.table_rows(caption)?;
    let row = rows.choose(rng)?;
    let mut b = SlotBinding::new();
    for slot in &t.required_slots {
        let col = registry
            .columns(slot, t.domain)?
            .iter()
            .find_map(|c| schema.column_index(c))?;
        let v = row[col].render();
        if v.is_empty() {
            return None;
        }
        b.insert(slot.clone(), v);
    }
    Some(b)
}

struct Context<'a> {
    corpus: &'a TableCorpus,
    pack: &'a TemplatePack,
    abbrev: &'a AbbrevMap,
    llm: Option<&'a dyn LlmBackend>,
    forbidden: Vec<String>,
    paraphrase: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenStats {
    pub sampled: usize,
    pub rejected_quality: usize,
    pub rejected_duplicate: usize,
    /// Injection failures by reason, e.g. an Unmatch request on a
    /// single-scope-slot template.
    pub skipped: IndexMap<String, usize>,
    pub paraphrased: usize,
    pub paraphrase_rejected: usize,
}

fn build_one(
    ctx: &Context,
    base: &SeedTemplate,
    recipe: &Recipe,
    rng: &mut ChaCha8Rng,
    stats: &mut GenStats,
) -> Option<QAInstance> {
    stats.sampled += 1;
    let binding = sample_binding(base, ctx.corpus, rng)?;
    let mut inst = match instantiate(base, &binding, ctx.corpus) {
        Ok(i) => i,
        Err(_) => {
            stats.rejected_quality += 1;
            return None;
        }
    };
    if recipe.select {
        let st = ctx
            .pack
            .templates()
            .iter()
            .find(|v| v.group == base.group && v.underspec_class == UnderspecClass::Select)?;
        inst = match inject_select(inst, st, &binding) {
            Ok(i) => i,
            Err(e) => return note_skip(e, stats),
        };
    }
    if let Some(kind) = recipe.from {
        inst = match inject_from(inst, ctx.pack, &binding, kind, rng, ctx.corpus) {
            Ok(i) => i,
            Err(e) => return note_skip(e, stats),
        };
    }
    if recipe.where_ {
        inst = match inject_where(inst, ctx.pack, &binding, ctx.abbrev, ctx.corpus) {
            Ok(i) => i,
            Err(e) => return note_skip(e, stats),
        };
    }
    if ctx.paraphrase && inst.intent_underspec {
        if let Some(llm) = ctx.llm {
            let (p, ok) = paraphrase(inst, llm, &ctx.forbidden);
            if ok {
                stats.paraphrased += 1;
            } else {
                stats.paraphrase_rejected += 1;
            }
            inst = p;
        }
    }
    Some(inst)
}

fn note_skip(e: InjectError, stats: &mut GenStats) -> Option<QAInstance> {
    let key = match e {
        InjectError::UnmatchImpossible(_) => "unmatch_impossible",
        InjectError::NoUnmatchSwap => "no_unmatch_swap",
        InjectError::PerturbationFailed(_) => "perturbation_failed",
        InjectError::NoAbbreviation => "no_abbreviation",
        InjectError::NoMissingVariant(_) => "no_missing_variant",
        _ => "other",
    };
    *stats.skipped.entry(key.to_string()).or_default() += 1;
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub instances: Vec<QAInstance>,
    pub stats: GenStats,
}

impl Dataset {
    pub fn count(&self, c: Category) -> usize {
        self.instances.iter().filter(|i| i.category == c).count()
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for i in &self.instances {
            out[i.split as usize] += 1;
        }
        out
    }
}

/// Builds the whole dataset. Instances come out grouped by stratum in a
/// fixed order; every random stream is derived from the config seed.
pub fn generate_dataset(
    corpus: &TableCorpus,
    pack: &TemplatePack,
    config: &DatasetConfig,
    llm: Option<&dyn LlmBackend>,
) -> Result<Dataset, GenError> {
    config.validate()?;
    if config.paraphrase && llm.is_none() {
        return Err(GenError::Config("paraphrase needs a model backend".into()));
    }
    let abbrev = build_abbrev_map(corpus, config.abbreviation, llm)?;
    let ctx = Context {
        corpus,
        pack,
        abbrev: &abbrev,
        llm,
        forbidden: pack.all_headers(),
        paraphrase: config.paraphrase,
    };
    let mut stats = GenStats::default();
    let mut seen: HashSet<String> = HashSet::new();
    let mut instances = Vec::new();
    let mut shortfalls = Vec::new();
    for category in Category::ALL {
        let wanted = config.counts.get(category);
        let mut got = 0;
        for i in 0..wanted {
            let recipe = recipe_for(category, i);
            let pool = candidates(pack, &recipe, corpus);
            if pool.is_empty() {
                *stats
                    .skipped
                    .entry(format!("no_template:{}", recipe.label()))
                    .or_default() += 1;
                continue;
            }
            let mut made = None;
            for attempt in 0..config.max_attempts {
                // Rotate templates when one keeps failing.
                let base = pool[(i + attempt / 25) % pool.len()];
                let mut rng = seed::rng(
                    config.seed,
                    &[category.as_str(), &base.group, &i.to_string(), &attempt.to_string()],
                );
                let Some(inst) = build_one(&ctx, base, &recipe, &mut rng, &mut stats) else {
                    continue;
                };
                if !seen.insert(inst.question.clone()) {
                    stats.rejected_duplicate += 1;
                    continue;
                }
                made = Some(inst);
                break;
            }
            if let Some(inst) = made {
                got += 1;
                instances.push(inst);
            }
        }
        if got < wanted {
            shortfalls.push(Shortfall { category, wanted, got });
        }
    }
    for (n, inst) in instances.iter_mut().enumerate() {
        inst.id = format!("q{:04}", n + 1);
    }
    assign_splits(&mut instances, &config.split, config.seed);
    let dataset = Dataset { instances, stats };
    if shortfalls.is_empty() {
        Ok(dataset)
    } else {
        Err(GenError::Shortfall(shortfalls, Box::new(dataset)))
    }
}

/// Stratified split: each template group is shuffled with its own seed,
/// groups are laid end to end, and a smooth weighted round-robin deals
/// the sequence out so that every split gets its exact target size and
/// every group is spread in proportion.
pub fn assign_splits(instances: &mut [QAInstance], ratios: &SplitRatios, seed: u64) {
    let sizes = ratios.sizes(instances.len());
    let mut groups: IndexMap<String, Vec<usize>> = IndexMap::new();
    for (i, inst) in instances.iter().enumerate() {
        groups.entry(inst.strata_key.clone()).or_default().push(i);
    }
    groups.sort_keys();
    let mut order = Vec::with_capacity(instances.len());
    for (group, mut members) in groups {
        members.shuffle(&mut seed::rng(seed, &["split", &group]));
        order.extend(members);
    }
    let total = instances.len() as i64;
    let mut current = [0i64; 3];
    for idx in order {
        for k in 0..3 {
            current[k] += sizes[k] as i64;
        }
        let pick = (0..3)
            .max_by(|&a, &b| current[a].cmp(&current[b]).then(b.cmp(&a)))
            .unwrap();
        current[pick] -= total;
        instances[idx].split = Split::ALL[pick];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn abbreviation_rule() {
        assert_eq!(
            rule_abbreviation("Sunrise Garden Phase Two Residences")
                .unwrap()
                .as_deref(),
            Some("Sunrise Garden")
        );
        assert_eq!(
            rule_abbreviation("Golden Bay International Plaza Tower A")
                .unwrap()
                .as_deref(),
            Some("Golden Bay")
        );
        assert_eq!(rule_abbreviation("Vanke").unwrap(), None);
        assert!(rule_abbreviation("  ").is_err());
    }

    #[test]
    fn perturbation_keeps_class_and_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = perturb("Pudong2021", &mut rng).unwrap();
            assert_eq!(p.len(), 10);
            let diffs: Vec<(char, char)> = "Pudong2021".chars().zip(p.chars()).filter(|(a, b)| a != b).collect();
            assert_eq!(diffs.len(), 1);
            let (a, b) = diffs[0];
            assert_eq!(a.is_ascii_digit(), b.is_ascii_digit());
            assert_eq!(a.is_ascii_uppercase(), b.is_ascii_uppercase());
        }
    }

    #[test]
    fn split_sizes_by_largest_remainder() {
        let r = SplitRatios::default();
        assert_eq!(r.sizes(80), [48, 16, 16]);
        assert_eq!(r.sizes(7), [4, 2, 1]);
        assert_eq!(r.sizes(0), [0, 0, 0]);
    }

    #[test]
    fn forbidden_scan_is_case_insensitive() {
        let f = vec!["green coverage ratio".to_string()];
        assert!(contains_forbidden("What is the Green Coverage Ratio?", &f));
        assert!(!contains_forbidden("How green is it?", &f));
    }

    #[test]
    fn mixed_recipes_need_two_families() {
        for i in 0..10 {
            assert_eq!(recipe_for(Category::Mixed, i).category(), Category::Mixed);
        }
        assert_eq!(recipe_for(Category::From, 2).from, Some(ScopeErrorType::Unmatch));
    }
}
