//! Multiple-choice prompt rendering.
//!
//! A prompt has three parts: a task instruction, a block describing the
//! source entity, and the candidate options labelled `A`, `B`, `C`, ... in
//! the order the caller passes them. Past `Z` labels continue with `AA`,
//! `AB`, ... as in spreadsheet columns. Knowledge-driven prompts show names
//! only; attribute-aware and relation-aware prompts add the selected triples
//! of each entity as `name | predicate | object` lines. Rendering is a pure
//! function of its inputs. The only text transformation is truncation of
//! long literal values.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg_store::{label_from_uri, EntityId, KnowledgeGraph};
use crate::triple_selector::{PromptSelections, SelectedTriple, SelectedTriples, TripleKind};

pub const INSTRUCTION: &str = "You are given a source entity and a list of candidate entities. \
Select the candidate that refers to the same real-world entity as the source. \
Answer with the option letter only.";

/// Literal values longer than this many characters are cut.
pub const MAX_LITERAL_CHARS: usize = 120;
pub const ELLIPSIS: char = '…';
/// Labels `A` through `ZZ`.
pub const MAX_OPTIONS: usize = 26 + 26 * 26;

pub const NO_ATTRIBUTES: &str = "(no attributes available)";
pub const NO_RELATIONS: &str = "(no relations available)";

const DEFAULT_TEMPLATE: &str =
    "{instruction}\n\n{source_block}\n\nCandidate entities:\n{options}\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    KnowledgeDriven,
    AttributeAware,
    RelationAware,
}

impl PromptKind {
    pub fn triple_kind(self) -> Option<TripleKind> {
        match self {
            PromptKind::KnowledgeDriven => None,
            PromptKind::AttributeAware => Some(TripleKind::Attribute),
            PromptKind::RelationAware => Some(TripleKind::Relation),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::KnowledgeDriven => "knowledge_driven",
            PromptKind::AttributeAware => "attribute_aware",
            PromptKind::RelationAware => "relation_aware",
        }
    }
}

impl std::str::FromStr for PromptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Self::KnowledgeDriven, Self::AttributeAware, Self::RelationAware]
            .into_iter()
            .find(|k| k.as_str() == s.replace('-', "_"))
            .ok_or_else(|| {
                format!("unknown prompt kind '{s}' (expected knowledge_driven, attribute_aware or relation_aware)")
            })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ForgeError {
    #[error("no candidates to render")]
    EmptyCandidates,
    #[error("{0} options exceed the available labels")]
    TooManyOptions(usize),
    #[error("no triple selection for entity {0}")]
    MissingSelections(EntityId),
    #[error("selection kind does not match a {0:?} prompt")]
    KindMismatch(PromptKind),
    #[error("template is missing the {0} placeholder")]
    TemplateMissing(&'static str),
    #[error("cannot read template {path}: {message}")]
    TemplateIo { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOption {
    pub label: String,
    pub target: EntityId,
    /// Display name of the candidate.
    pub name: String,
    pub block: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub kind: PromptKind,
    pub source: EntityId,
    pub instruction: String,
    pub source_block: String,
    pub options: Vec<PromptOption>,
    pub rendered: String,
}

impl Prompt {
    pub fn option_targets(&self) -> Vec<EntityId> {
        self.options.iter().map(|o| o.target).collect()
    }
}

pub fn option_label_for(index: usize) -> Result<String, ForgeError> {
    if index >= MAX_OPTIONS {
        return Err(ForgeError::TooManyOptions(index + 1));
    }
    let letter = |i: usize| (b'A' + i as u8) as char;
    Ok(if index < 26 {
        letter(index).to_string()
    } else {
        let i = index - 26;
        [letter(i / 26), letter(i % 26)].iter().collect()
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Instruction,
    SourceBlock,
    Options,
}

/// A prompt layout with `{instruction}`, `{source_block}` and `{options}`
/// placeholders. Substitution is single-pass, so placeholder-like text inside
/// entity data is never expanded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    segments: Vec<Segment>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("built-in template is valid")
    }
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, ForgeError> {
        const NAMES: [(&str, Segment); 3] = [
            ("{instruction}", Segment::Instruction),
            ("{source_block}", Segment::SourceBlock),
            ("{options}", Segment::Options),
        ];
        let mut segments = Vec::new();
        let mut rest = text;
        let mut literal = String::new();
        while !rest.is_empty() {
            if let Some((name, seg)) = NAMES.iter().find(|(n, _)| rest.starts_with(n)) {
                if !literal.is_empty() {
                    segments.push(Segment::Text(std::mem::take(&mut literal)));
                }
                segments.push(seg.clone());
                rest = &rest[name.len()..];
            } else {
                let ch = rest.chars().next().expect("non-empty");
                literal.push(ch);
                rest = &rest[ch.len_utf8()..];
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Text(literal));
        }
        for (name, seg) in NAMES {
            if !segments.contains(&seg) {
                return Err(ForgeError::TemplateMissing(name));
            }
        }
        Ok(Self { segments })
    }

    pub fn from_file(path: &Path) -> Result<Self, ForgeError> {
        let text = std::fs::read_to_string(path).map_err(|e| ForgeError::TemplateIo {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn render(&self, instruction: &str, source_block: &str, options: &str) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Instruction => out.push_str(instruction),
                Segment::SourceBlock => out.push_str(source_block),
                Segment::Options => out.push_str(options),
            }
        }
        out
    }
}

/// Cut a literal to [`MAX_LITERAL_CHARS`] characters plus an ellipsis.
pub fn truncate_literal(value: &str) -> String {
    match value.char_indices().nth(MAX_LITERAL_CHARS) {
        Some((cut, _)) => {
            let mut s = value[..cut].to_string();
            s.push(ELLIPSIS);
            s
        }
        None => value.to_string(),
    }
}

fn triple_lines(out: &mut String, name: &str, sel: &SelectedTriples, graph: &KnowledgeGraph) {
    if sel.is_empty() {
        out.push('\n');
        out.push_str(match sel.kind {
            TripleKind::Attribute => NO_ATTRIBUTES,
            TripleKind::Relation => NO_RELATIONS,
        });
        return;
    }
    for t in &sel.triples {
        out.push('\n');
        match &t.triple {
            SelectedTriple::Attribute(a) => {
                let pred = graph
                    .attribute_uri(a.attribute)
                    .map(label_from_uri)
                    .unwrap_or_else(|| a.attribute.to_string());
                let _ = write!(out, "{name} | {pred} | {}", truncate_literal(&a.value));
            }
            SelectedTriple::Relation(r) => {
                let pred = graph
                    .relation_uri(r.relation)
                    .map(label_from_uri)
                    .unwrap_or_else(|| r.relation.to_string());
                let _ = write!(out, "{name} | {pred} | {}", graph.label(r.tail));
            }
        }
    }
}

/// Render one multiple-choice prompt. `candidates` is shown in the given
/// order; option `i` always refers to `candidates[i]`.
pub fn build_prompt(
    kind: PromptKind,
    source: EntityId,
    candidates: &[EntityId],
    source_kg: &KnowledgeGraph,
    target_kg: &KnowledgeGraph,
    selections: Option<&PromptSelections>,
    template: &PromptTemplate,
) -> Result<Prompt, ForgeError> {
    if candidates.is_empty() {
        return Err(ForgeError::EmptyCandidates);
    }
    if candidates.len() > MAX_OPTIONS {
        return Err(ForgeError::TooManyOptions(candidates.len()));
    }
    let selections = match kind.triple_kind() {
        None => None,
        Some(tk) => {
            let sel = selections.ok_or(ForgeError::MissingSelections(source))?;
            if sel.kind != tk {
                return Err(ForgeError::KindMismatch(kind));
            }
            Some(sel)
        }
    };

    let source_name = source_kg.label(source);
    let mut source_block = format!("Source entity: {source_name}");
    if let Some(sel) = selections {
        triple_lines(&mut source_block, &source_name, &sel.source, source_kg);
    }

    let mut options = Vec::with_capacity(candidates.len());
    for (i, &target) in candidates.iter().enumerate() {
        let label = option_label_for(i)?;
        let name = target_kg.label(target);
        let mut block = format!("{label}. {name}");
        if let Some(sel) = selections {
            let cand = sel
                .candidates
                .get(&target)
                .ok_or(ForgeError::MissingSelections(target))?;
            triple_lines(&mut block, &name, cand, target_kg);
        }
        options.push(PromptOption {
            label,
            target,
            name,
            block,
        });
    }

    let options_text = options
        .iter()
        .map(|o| o.block.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let rendered = template.render(INSTRUCTION, &source_block, &options_text);
    Ok(Prompt {
        kind,
        source,
        instruction: INSTRUCTION.to_string(),
        source_block,
        options,
        rendered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg_store::{
        build_graph, AttributeId, AttributeTriple, EntityRef, RelationId, RelationalTriple,
    };
    use crate::triple_selector::TripleSelector;

    fn graphs() -> (KnowledgeGraph, KnowledgeGraph) {
        let src = build_graph(
            [
                (0, "http://zh.dbpedia.org/resource/宾士镇市"),
                (1, "http://zh.dbpedia.org/resource/悉尼"),
            ]
            .into_iter()
            .map(|(i, u)| (EntityId(i), EntityRef::new(EntityId(i), u)))
            .collect(),
            [(
                RelationId(0),
                "http://dbpedia.org/property/nearbyCity".to_string(),
            )]
            .into(),
            [
                (
                    AttributeId(0),
                    "http://dbpedia.org/property/state".to_string(),
                ),
                (
                    AttributeId(1),
                    "http://dbpedia.org/property/area".to_string(),
                ),
            ]
            .into(),
            vec![RelationalTriple {
                head: EntityId(0),
                relation: RelationId(0),
                tail: EntityId(1),
            }],
            vec![
                AttributeTriple {
                    head: EntityId(0),
                    attribute: AttributeId(0),
                    value: "New South Wales".into(),
                },
                AttributeTriple {
                    head: EntityId(0),
                    attribute: AttributeId(1),
                    value: "x".repeat(130),
                },
            ],
        )
        .unwrap();
        let tgt = build_graph(
            [
                (10, "http://dbpedia.org/resource/City_of_Fairfield"),
                (11, "http://dbpedia.org/resource/City_of_Bankstown"),
                (12, "http://dbpedia.org/resource/Hornsby_Shire"),
                (13, "http://dbpedia.org/resource/Sydney"),
            ]
            .into_iter()
            .map(|(i, u)| (EntityId(i), EntityRef::new(EntityId(i), u)))
            .collect(),
            [(
                RelationId(0),
                "http://dbpedia.org/property/nearbyCity".to_string(),
            )]
            .into(),
            [(
                AttributeId(0),
                "http://dbpedia.org/property/state".to_string(),
            )]
            .into(),
            vec![RelationalTriple {
                head: EntityId(11),
                relation: RelationId(0),
                tail: EntityId(13),
            }],
            vec![AttributeTriple {
                head: EntityId(11),
                attribute: AttributeId(0),
                value: "New South Wales".into(),
            }],
        )
        .unwrap();
        (src, tgt)
    }

    const CANDS: [EntityId; 3] = [EntityId(10), EntityId(11), EntityId(12)];

    #[test]
    fn labels() {
        assert_eq!(option_label_for(0).unwrap(), "A");
        assert_eq!(option_label_for(9).unwrap(), "J");
        assert_eq!(option_label_for(26).unwrap(), "AA");
        assert_eq!(option_label_for(27).unwrap(), "AB");
        assert_eq!(option_label_for(MAX_OPTIONS - 1).unwrap(), "ZZ");
        assert_eq!(
            option_label_for(MAX_OPTIONS),
            Err(ForgeError::TooManyOptions(MAX_OPTIONS + 1))
        );
    }

    #[test]
    fn knowledge_driven_names_only() {
        let (s, t) = graphs();
        let p = build_prompt(
            PromptKind::KnowledgeDriven,
            EntityId(0),
            &CANDS,
            &s,
            &t,
            None,
            &PromptTemplate::default(),
        )
        .unwrap();
        assert_eq!(
            p.options
                .iter()
                .map(|o| o.label.as_str())
                .collect::<String>(),
            "ABC"
        );
        assert_eq!(p.options[1].block, "B. City of Bankstown");
        assert_eq!(
            p.rendered,
            format!(
                "{INSTRUCTION}\n\nSource entity: 宾士镇市\n\nCandidate entities:\n\
                 A. City of Fairfield\nB. City of Bankstown\nC. Hornsby Shire\n"
            )
        );
    }

    #[test]
    fn attribute_aware_with_empty_candidate_selection() {
        let (s, t) = graphs();
        let sel = TripleSelector::new(&s, &t)
            .select_for_prompt(EntityId(0), &CANDS, TripleKind::Attribute, 5)
            .unwrap();
        let p = build_prompt(
            PromptKind::AttributeAware,
            EntityId(0),
            &CANDS,
            &s,
            &t,
            Some(&sel),
            &PromptTemplate::default(),
        )
        .unwrap();
        assert!(p
            .source_block
            .contains("宾士镇市 | state | New South Wales"));
        let long = format!("宾士镇市 | area | {}{ELLIPSIS}", "x".repeat(120));
        assert!(p.source_block.contains(&long));
        assert_eq!(
            p.options[0].block,
            format!("A. City of Fairfield\n{NO_ATTRIBUTES}")
        );
        assert_eq!(
            p.options[1].block,
            "B. City of Bankstown\nCity of Bankstown | state | New South Wales"
        );
    }

    #[test]
    fn relation_aware_shows_neighbor_names() {
        let (s, t) = graphs();
        let sel = TripleSelector::new(&s, &t)
            .select_for_prompt(EntityId(0), &CANDS, TripleKind::Relation, 5)
            .unwrap();
        let p = build_prompt(
            PromptKind::RelationAware,
            EntityId(0),
            &CANDS,
            &s,
            &t,
            Some(&sel),
            &PromptTemplate::default(),
        )
        .unwrap();
        assert!(p.source_block.contains("宾士镇市 | nearbyCity | 悉尼"));
        assert!(p.options[1]
            .block
            .contains("City of Bankstown | nearbyCity | Sydney"));
        assert!(p.options[2].block.contains(NO_RELATIONS));
    }

    #[test]
    fn errors() {
        let (s, t) = graphs();
        let tpl = PromptTemplate::default();
        assert_eq!(
            build_prompt(
                PromptKind::KnowledgeDriven,
                EntityId(0),
                &[],
                &s,
                &t,
                None,
                &tpl
            ),
            Err(ForgeError::EmptyCandidates)
        );
        let many = vec![EntityId(10); MAX_OPTIONS + 1];
        assert_eq!(
            build_prompt(
                PromptKind::KnowledgeDriven,
                EntityId(0),
                &many,
                &s,
                &t,
                None,
                &tpl
            ),
            Err(ForgeError::TooManyOptions(MAX_OPTIONS + 1))
        );
        assert_eq!(
            build_prompt(
                PromptKind::AttributeAware,
                EntityId(0),
                &CANDS,
                &s,
                &t,
                None,
                &tpl
            ),
            Err(ForgeError::MissingSelections(EntityId(0)))
        );
        let rel = TripleSelector::new(&s, &t)
            .select_for_prompt(EntityId(0), &CANDS, TripleKind::Relation, 5)
            .unwrap();
        assert_eq!(
            build_prompt(
                PromptKind::AttributeAware,
                EntityId(0),
                &CANDS,
                &s,
                &t,
                Some(&rel),
                &tpl
            ),
            Err(ForgeError::KindMismatch(PromptKind::AttributeAware))
        );
    }

    #[test]
    fn custom_template_is_single_pass() {
        let tpl = PromptTemplate::parse("Q: {instruction}|{source_block}|{options}").unwrap();
        assert_eq!(tpl.render("i", "{options}", "o"), "Q: i|{options}|o");
        assert_eq!(
            PromptTemplate::parse("{instruction} {options}"),
            Err(ForgeError::TemplateMissing("{source_block}"))
        );
    }

    #[test]
    fn truncation_counts_characters() {
        let s: String = "宾".repeat(121);
        let t = truncate_literal(&s);
        assert_eq!(t.chars().count(), 121);
        assert!(t.ends_with(ELLIPSIS));
        assert_eq!(truncate_literal(&"a".repeat(120)), "a".repeat(120));
    }
}
