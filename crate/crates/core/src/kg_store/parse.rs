use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{
    AttributeId, AttributeMap, AttributeTriple, EntityId, EntityMap, EntityRef, KgError,
    KnowledgeGraph, RelationId, RelationMap, RelationalTriple,
};

/// Gold alignment: source entity id to target entity id.
pub type GoldAlignment = BTreeMap<EntityId, EntityId>;

/// Result of reading an attribute-triple file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttributeParse {
    pub attributes: AttributeMap,
    pub triples: Vec<AttributeTriple>,
    /// Lines whose entity is not part of the entity map.
    pub skipped: usize,
}

fn open(path: &Path) -> Result<BufReader<File>, KgError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| KgError::io(path, e))
}

/// Iterate non-empty lines with 1-based line numbers. CR before LF is dropped.
fn for_each_line<R: BufRead>(
    reader: R,
    path: &Path,
    mut f: impl FnMut(usize, &str) -> Result<(), KgError>,
) -> Result<(), KgError> {
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| KgError::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        f(i + 1, line)?;
    }
    Ok(())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> KgError {
    KgError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_id(path: &Path, line: usize, field: &str) -> Result<u32, KgError> {
    field.trim().parse::<u32>().map_err(|_| {
        parse_err(
            path,
            line,
            format!("expected a non-negative integer id, got {field:?}"),
        )
    })
}

fn strip_angle(uri: &str) -> &str {
    let uri = uri.trim();
    uri.strip_prefix('<')
        .and_then(|u| u.strip_suffix('>'))
        .unwrap_or(uri)
}

pub fn parse_entity_file(path: impl AsRef<Path>) -> Result<EntityMap, KgError> {
    let path = path.as_ref();
    parse_entity_lines(open(path)?, path)
}

/// Parse `id TAB uri` lines.
pub fn parse_entity_lines<R: BufRead>(reader: R, path: &Path) -> Result<EntityMap, KgError> {
    let mut map = EntityMap::new();
    for_each_line(reader, path, |n, line| {
        let (id, uri) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, n, "expected `id<TAB>uri`"))?;
        let id = parse_id(path, n, id)?;
        let uri = strip_angle(uri);
        if uri.is_empty() {
            return Err(parse_err(path, n, "empty uri"));
        }
        if map.contains_key(&EntityId(id)) {
            return Err(KgError::DuplicateId {
                path: path.to_path_buf(),
                line: n,
                id,
            });
        }
        map.insert(EntityId(id), EntityRef::new(EntityId(id), uri));
        Ok(())
    })?;
    Ok(map)
}

/// Parse a `rel_ids_*` file (`id TAB uri`).
pub fn parse_relation_file(path: impl AsRef<Path>) -> Result<RelationMap, KgError> {
    let path = path.as_ref();
    let mut map = RelationMap::new();
    for_each_line(open(path)?, path, |n, line| {
        let (id, uri) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, n, "expected `id<TAB>uri`"))?;
        let id = parse_id(path, n, id)?;
        if map
            .insert(RelationId(id), strip_angle(uri).to_string())
            .is_some()
        {
            return Err(KgError::DuplicateId {
                path: path.to_path_buf(),
                line: n,
                id,
            });
        }
        Ok(())
    })?;
    Ok(map)
}

/// Uri given to relation ids that appear in a triple file without a
/// `rel_ids_*` entry.
pub(crate) fn synthesized_relation_uri(id: RelationId) -> String {
    format!("http://kgalign.invalid/relation/r{id}")
}

pub fn parse_relational_triples(
    path: impl AsRef<Path>,
    entities: &EntityMap,
    relations: &mut RelationMap,
) -> Result<Vec<RelationalTriple>, KgError> {
    let path = path.as_ref();
    parse_relational_triples_from(open(path)?, path, entities, relations)
}

/// Parse `head TAB relation TAB tail` lines.
pub fn parse_relational_triples_from<R: BufRead>(
    reader: R,
    path: &Path,
    entities: &EntityMap,
    relations: &mut RelationMap,
) -> Result<Vec<RelationalTriple>, KgError> {
    let mut triples = Vec::new();
    for_each_line(reader, path, |n, line| {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                n,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let head = parse_id(path, n, fields[0])?;
        let relation = RelationId(parse_id(path, n, fields[1])?);
        let tail = parse_id(path, n, fields[2])?;
        for id in [head, tail] {
            if !entities.contains_key(&EntityId(id)) {
                return Err(KgError::DanglingReference {
                    path: path.to_path_buf(),
                    line: n,
                    id,
                });
            }
        }
        relations
            .entry(relation)
            .or_insert_with(|| synthesized_relation_uri(relation));
        triples.push(RelationalTriple {
            head: EntityId(head),
            relation,
            tail: EntityId(tail),
        });
        Ok(())
    })?;
    Ok(triples)
}

pub fn parse_attribute_triples(
    path: impl AsRef<Path>,
    entities: &EntityMap,
) -> Result<AttributeParse, KgError> {
    let path = path.as_ref();
    parse_attribute_triples_from(open(path)?, path, entities)
}

/// Parse `entity TAB attribute_uri TAB literal` lines.
///
/// The entity column may hold a uri or a numeric id. Lines naming an entity
/// outside `entities` are skipped and counted. Extra columns belong to the
/// literal and are re-joined with TAB. Lines without a TAB that look like
/// N-Triples (`<s> <p> "literal"@lang .`) are accepted too, which is how the
/// raw DBP15K attribute dumps are written.
pub fn parse_attribute_triples_from<R: BufRead>(
    reader: R,
    path: &Path,
    entities: &EntityMap,
) -> Result<AttributeParse, KgError> {
    let by_uri: HashMap<&str, EntityId> =
        entities.values().map(|e| (e.uri.as_str(), e.id)).collect();
    let mut interned: HashMap<String, AttributeId> = HashMap::new();
    let mut out = AttributeParse::default();

    for_each_line(reader, path, |n, line| {
        let ntriple;
        let fields: Vec<&str> = if !line.contains('\t') && line.starts_with('<') {
            ntriple = split_ntriple(line)
                .ok_or_else(|| parse_err(path, n, "malformed N-Triples line"))?;
            vec![ntriple.0, ntriple.1, ntriple.2.as_str()]
        } else {
            line.split('\t').collect()
        };
        if fields.len() < 3 {
            return Err(parse_err(
                path,
                n,
                format!(
                    "expected at least 3 tab-separated fields, found {}",
                    fields.len()
                ),
            ));
        }
        let key = strip_angle(fields[0]);
        let head = match key.parse::<u32>() {
            Ok(id) if entities.contains_key(&EntityId(id)) => Some(EntityId(id)),
            _ => by_uri.get(key).copied(),
        };
        let Some(head) = head else {
            out.skipped += 1;
            return Ok(());
        };
        let attr_uri = strip_angle(fields[1]);
        let next = AttributeId(interned.len() as u32);
        let attribute = *interned.entry(attr_uri.to_string()).or_insert_with(|| {
            out.attributes.insert(next, attr_uri.to_string());
            next
        });
        out.triples.push(AttributeTriple {
            head,
            attribute,
            value: fields[2..].join("\t"),
        });
        Ok(())
    })?;
    Ok(out)
}

/// `<s> <p> object .` into subject, predicate and the object's lexical form.
/// Quoted literals lose their quotes, language tag and datatype; escapes
/// are kept as written.
fn split_ntriple(line: &str) -> Option<(&str, &str, String)> {
    let line = line.trim_end();
    let line = line.strip_suffix('.').unwrap_or(line).trim_end();
    let s_end = line.find('>')?;
    let subject = &line[..=s_end];
    let rest = line[s_end + 1..].trim_start();
    if !rest.starts_with('<') {
        return None;
    }
    let p_end = rest.find('>')?;
    let predicate = &rest[..=p_end];
    let object = rest[p_end + 1..].trim();
    let value = match object.strip_prefix('"') {
        Some(quoted) => {
            let close = quoted.rfind('"')?;
            quoted[..close].to_string()
        }
        None => strip_angle(object).to_string(),
    };
    Some((subject, predicate, value))
}

pub fn parse_gold(path: impl AsRef<Path>) -> Result<GoldAlignment, KgError> {
    let path = path.as_ref();
    parse_gold_lines(open(path)?, path)
}

/// Parse `source_id TAB target_id` lines.
pub fn parse_gold_lines<R: BufRead>(reader: R, path: &Path) -> Result<GoldAlignment, KgError> {
    let mut gold = GoldAlignment::new();
    for_each_line(reader, path, |n, line| {
        let (s, t) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, n, "expected `source_id<TAB>target_id`"))?;
        let s = parse_id(path, n, s)?;
        let t = parse_id(path, n, t)?;
        if gold.insert(EntityId(s), EntityId(t)).is_some() {
            return Err(KgError::DuplicateId {
                path: path.to_path_buf(),
                line: n,
                id: s,
            });
        }
        Ok(())
    })?;
    Ok(gold)
}

fn create(path: &Path) -> Result<BufWriter<File>, KgError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| KgError::io(path, e))
}

/// File names of one graph side inside a dataset directory.
#[derive(Debug, Clone)]
pub struct SideFiles {
    pub entities: PathBuf,
    pub relations: PathBuf,
    pub rel_triples: PathBuf,
    pub att_triples: PathBuf,
}

impl SideFiles {
    /// DBP15K naming: side 1 is the source graph, side 2 the target.
    pub fn in_dir(dir: &Path, side: u8) -> Self {
        Self {
            entities: dir.join(format!("ent_ids_{side}")),
            relations: dir.join(format!("rel_ids_{side}")),
            rel_triples: dir.join(format!("triples_{side}")),
            att_triples: dir.join(format!("att_triples_{side}")),
        }
    }
}

/// Read one graph side. `rel_ids_*` is optional.
pub fn read_side(files: &SideFiles) -> Result<(KnowledgeGraph, usize), KgError> {
    let entities = parse_entity_file(&files.entities)?;
    let mut relations = if files.relations.exists() {
        parse_relation_file(&files.relations)?
    } else {
        RelationMap::new()
    };
    let rel_triples = parse_relational_triples(&files.rel_triples, &entities, &mut relations)?;
    let attrs = parse_attribute_triples(&files.att_triples, &entities)?;
    let graph = super::build_graph(
        entities,
        relations,
        attrs.attributes,
        rel_triples,
        attrs.triples,
    )?;
    Ok((graph, attrs.skipped))
}

/// Write a graph side in the same layout [`read_side`] reads. Attribute
/// lines are keyed by entity uri.
pub fn write_side(graph: &KnowledgeGraph, files: &SideFiles) -> Result<(), KgError> {
    fn wrap(path: &Path) -> impl FnOnce(io::Error) -> KgError + '_ {
        move |e| KgError::io(path, e)
    }

    let mut w = create(&files.entities)?;
    for e in graph.entities().values() {
        writeln!(w, "{}\t{}", e.id, e.uri).map_err(wrap(&files.entities))?;
    }
    w.flush().map_err(wrap(&files.entities))?;

    let mut w = create(&files.relations)?;
    for (id, uri) in graph.relations() {
        writeln!(w, "{id}\t{uri}").map_err(wrap(&files.relations))?;
    }
    w.flush().map_err(wrap(&files.relations))?;

    let mut w = create(&files.rel_triples)?;
    for t in graph.rel_triples() {
        writeln!(w, "{}\t{}\t{}", t.head, t.relation, t.tail).map_err(wrap(&files.rel_triples))?;
    }
    w.flush().map_err(wrap(&files.rel_triples))?;

    let mut w = create(&files.att_triples)?;
    for t in graph.att_triples() {
        let uri = &graph.entities()[&t.head].uri;
        let attr = &graph.attributes()[&t.attribute];
        writeln!(w, "{uri}\t{attr}\t{}", t.value).map_err(wrap(&files.att_triples))?;
    }
    w.flush().map_err(wrap(&files.att_triples))?;
    Ok(())
}

pub fn write_gold(gold: &GoldAlignment, path: &Path) -> Result<(), KgError> {
    let mut w = create(path)?;
    for (s, t) in gold {
        writeln!(w, "{s}\t{t}").map_err(|e| KgError::io(path, e))?;
    }
    w.flush().map_err(|e| KgError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn entity_line_yields_label() {
        let map = parse_entity_lines(
            Cursor::new("0\thttp://zh.dbpedia.org/resource/宾士镇市\n"),
            p(),
        )
        .unwrap();
        assert_eq!(map.len(), 1);
        assert_eq!(map[&EntityId(0)].label, "宾士镇市");
    }

    #[test]
    fn empty_entity_file() {
        assert!(parse_entity_lines(Cursor::new(""), p()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_entity_id() {
        let err =
            parse_entity_lines(Cursor::new("7\thttp://a/x\n7\thttp://a/y\n"), p()).unwrap_err();
        assert!(matches!(err, KgError::DuplicateId { id: 7, line: 2, .. }));
    }

    #[test]
    fn malformed_entity_line_reports_line_number() {
        let err = parse_entity_lines(Cursor::new("0\thttp://a/x\nnot-a-line\n"), p()).unwrap_err();
        assert!(matches!(err, KgError::Parse { line: 2, .. }));
    }

    fn two_entities() -> EntityMap {
        parse_entity_lines(
            Cursor::new("0\thttp://x/resource/A\n5\thttp://x/resource/B\n"),
            p(),
        )
        .unwrap()
    }

    #[test]
    fn relational_triple_direct_mapping() {
        let mut rels = RelationMap::new();
        let t = parse_relational_triples_from(
            Cursor::new("0\t3\t5\n"),
            p(),
            &two_entities(),
            &mut rels,
        )
        .unwrap();
        assert_eq!(
            t,
            vec![RelationalTriple {
                head: EntityId(0),
                relation: RelationId(3),
                tail: EntityId(5)
            }]
        );
        assert!(rels.contains_key(&RelationId(3)));
    }

    #[test]
    fn relational_triple_dangling_tail() {
        let mut rels = RelationMap::new();
        let err = parse_relational_triples_from(
            Cursor::new("0\t3\t99\n"),
            p(),
            &two_entities(),
            &mut rels,
        )
        .unwrap_err();
        assert!(matches!(err, KgError::DanglingReference { id: 99, .. }));
    }

    #[test]
    fn attribute_value_and_skips() {
        let ents = parse_entity_lines(
            Cursor::new("0\thttp://zh.dbpedia.org/resource/宾士镇市\n"),
            p(),
        )
        .unwrap();
        let input = "http://zh.dbpedia.org/resource/宾士镇市\thttp://zh.dbpedia.org/property/state\tNew South Wales\n\
                     http://zh.dbpedia.org/resource/Other\thttp://zh.dbpedia.org/property/state\tX\n\
                     0\thttp://zh.dbpedia.org/property/motto\tpart one\tpart two\n";
        let out = parse_attribute_triples_from(Cursor::new(input), p(), &ents).unwrap();
        assert_eq!(out.skipped, 1);
        assert_eq!(out.triples.len(), 2);
        assert_eq!(out.triples[0].value, "New South Wales");
        assert_eq!(out.triples[1].value, "part one\tpart two");
        assert_eq!(out.attributes.len(), 2);
        assert_eq!(out.triples[1].attribute, AttributeId(1));
    }

    #[test]
    fn attribute_ntriples_lines() {
        let ents = parse_entity_lines(
            Cursor::new("0\thttp://zh.dbpedia.org/resource/宾士镇市\n"),
            p(),
        )
        .unwrap();
        let input = "<http://zh.dbpedia.org/resource/宾士镇市> <http://zh.dbpedia.org/property/state> \"New South Wales\"@zh .\n\
                     <http://zh.dbpedia.org/resource/宾士镇市> <http://zh.dbpedia.org/property/area> \"72.2\"^^<http://www.w3.org/2001/XMLSchema#double> .\n\
                     <http://zh.dbpedia.org/resource/宾士镇市> <http://zh.dbpedia.org/property/seat> <http://zh.dbpedia.org/resource/X> .\n";
        let out = parse_attribute_triples_from(Cursor::new(input), p(), &ents).unwrap();
        let values: Vec<&str> = out.triples.iter().map(|t| t.value.as_str()).collect();
        assert_eq!(
            values,
            [
                "New South Wales",
                "72.2",
                "http://zh.dbpedia.org/resource/X"
            ]
        );
        assert_eq!(
            out.attributes[&AttributeId(0)],
            "http://zh.dbpedia.org/property/state"
        );
        assert!(parse_attribute_triples_from(Cursor::new("<a> oops\n"), p(), &ents).is_err());
    }

    #[test]
    fn attribute_line_too_short() {
        let err = parse_attribute_triples_from(Cursor::new("0\tonly-two\n"), p(), &two_entities())
            .unwrap_err();
        assert!(matches!(err, KgError::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_literal_is_kept() {
        let out =
            parse_attribute_triples_from(Cursor::new("0\thttp://x/p/a\t\n"), p(), &two_entities())
                .unwrap();
        assert_eq!(out.triples[0].value, "");
    }

    #[test]
    fn gold_pairs() {
        let g = parse_gold_lines(Cursor::new("0\t10\n1\t11\n"), p()).unwrap();
        assert_eq!(g[&EntityId(1)], EntityId(11));
    }
}
