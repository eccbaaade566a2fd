use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{
    AttributeId, AttributeMap, AttributeTriple, EntityId, EntityMap, EntityRef, KgError,
    RelationId, RelationMap, RelationalTriple,
};

/// Positions (into the graph's triple lists) of every triple touching one entity.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityIndex {
    pub attributes: Vec<usize>,
    pub outgoing: Vec<usize>,
    pub incoming: Vec<usize>,
}

/// Immutable store for one side of an alignment task.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: EntityMap,
    relations: RelationMap,
    attributes: AttributeMap,
    rel_triples: Vec<RelationalTriple>,
    att_triples: Vec<AttributeTriple>,
    by_entity: HashMap<EntityId, EntityIndex>,
    by_uri: HashMap<String, EntityId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub entity_count: usize,
    pub relation_count: usize,
    pub attribute_count: usize,
    pub rel_triple_count: usize,
    pub att_triple_count: usize,
}

static EMPTY_INDEX: EntityIndex = EntityIndex {
    attributes: Vec::new(),
    outgoing: Vec::new(),
    incoming: Vec::new(),
};

/// Validate referential integrity and freeze the inputs into a graph.
pub fn build_graph(
    entities: EntityMap,
    relations: RelationMap,
    attributes: AttributeMap,
    rel_triples: Vec<RelationalTriple>,
    att_triples: Vec<AttributeTriple>,
) -> Result<KnowledgeGraph, KgError> {
    let mut by_uri = HashMap::with_capacity(entities.len());
    for (id, entity) in &entities {
        if entity.id != *id {
            return Err(KgError::Integrity(format!(
                "entity keyed {id} carries id {}",
                entity.id
            )));
        }
        if entity.uri.is_empty() {
            return Err(KgError::Integrity(format!("entity {id} has an empty uri")));
        }
        by_uri.entry(entity.uri.clone()).or_insert(*id);
    }

    let mut by_entity: HashMap<EntityId, EntityIndex> = HashMap::new();
    for (pos, t) in rel_triples.iter().enumerate() {
        for end in [t.head, t.tail] {
            if !entities.contains_key(&end) {
                return Err(KgError::Integrity(format!(
                    "relational triple #{pos} references unknown entity {end}"
                )));
            }
        }
        if !relations.contains_key(&t.relation) {
            return Err(KgError::Integrity(format!(
                "relational triple #{pos} references unknown relation {}",
                t.relation
            )));
        }
        by_entity.entry(t.head).or_default().outgoing.push(pos);
        by_entity.entry(t.tail).or_default().incoming.push(pos);
    }
    for (pos, t) in att_triples.iter().enumerate() {
        if !entities.contains_key(&t.head) {
            return Err(KgError::Integrity(format!(
                "attribute triple #{pos} references unknown entity {}",
                t.head
            )));
        }
        if !attributes.contains_key(&t.attribute) {
            return Err(KgError::Integrity(format!(
                "attribute triple #{pos} references unknown attribute {}",
                t.attribute
            )));
        }
        by_entity.entry(t.head).or_default().attributes.push(pos);
    }

    Ok(KnowledgeGraph {
        entities,
        relations,
        attributes,
        rel_triples,
        att_triples,
        by_entity,
        by_uri,
    })
}

impl KnowledgeGraph {
    pub fn empty() -> Self {
        build_graph(
            BTreeMap::new(),
            BTreeMap::new(),
            BTreeMap::new(),
            Vec::new(),
            Vec::new(),
        )
        .expect("empty graph is consistent")
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            entity_count: self.entities.len(),
            relation_count: self.relations.len(),
            attribute_count: self.attributes.len(),
            rel_triple_count: self.rel_triples.len(),
            att_triple_count: self.att_triples.len(),
        }
    }

    pub fn entities(&self) -> &EntityMap {
        &self.entities
    }

    pub fn relations(&self) -> &RelationMap {
        &self.relations
    }

    pub fn attributes(&self) -> &AttributeMap {
        &self.attributes
    }

    pub fn rel_triples(&self) -> &[RelationalTriple] {
        &self.rel_triples
    }

    pub fn att_triples(&self) -> &[AttributeTriple] {
        &self.att_triples
    }

    pub fn entity(&self, id: EntityId) -> Option<&EntityRef> {
        self.entities.get(&id)
    }

    pub fn contains(&self, id: EntityId) -> bool {
        self.entities.contains_key(&id)
    }

    pub fn entity_by_uri(&self, uri: &str) -> Option<EntityId> {
        self.by_uri.get(uri).copied()
    }

    /// Label of an entity, or its decimal id if the entity is unknown.
    pub fn label(&self, id: EntityId) -> String {
        self.entities
            .get(&id)
            .map(|e| e.label.clone())
            .unwrap_or_else(|| id.to_string())
    }

    pub fn relation_uri(&self, id: RelationId) -> Option<&str> {
        self.relations.get(&id).map(String::as_str)
    }

    pub fn attribute_uri(&self, id: AttributeId) -> Option<&str> {
        self.attributes.get(&id).map(String::as_str)
    }

    pub fn entity_index(&self, id: EntityId) -> &EntityIndex {
        self.by_entity.get(&id).unwrap_or(&EMPTY_INDEX)
    }

    /// Attribute triples of `id` in file order.
    pub fn attribute_triples_of(
        &self,
        id: EntityId,
    ) -> impl Iterator<Item = (usize, &AttributeTriple)> {
        self.entity_index(id)
            .attributes
            .iter()
            .map(move |&pos| (pos, &self.att_triples[pos]))
    }

    /// Relational triples with `id` in head position, in file order.
    pub fn outgoing_of(&self, id: EntityId) -> impl Iterator<Item = (usize, &RelationalTriple)> {
        self.entity_index(id)
            .outgoing
            .iter()
            .map(move |&pos| (pos, &self.rel_triples[pos]))
    }

    pub fn incoming_of(&self, id: EntityId) -> impl Iterator<Item = (usize, &RelationalTriple)> {
        self.entity_index(id)
            .incoming
            .iter()
            .map(move |&pos| (pos, &self.rel_triples[pos]))
    }

    pub fn has_attributes(&self, id: EntityId) -> bool {
        !self.entity_index(id).attributes.is_empty()
    }

    pub fn has_outgoing(&self, id: EntityId) -> bool {
        !self.entity_index(id).outgoing.is_empty()
    }

    /// Break the graph back into the inputs of [`build_graph`].
    pub fn into_parts(
        self,
    ) -> (
        EntityMap,
        RelationMap,
        AttributeMap,
        Vec<RelationalTriple>,
        Vec<AttributeTriple>,
    ) {
        (
            self.entities,
            self.relations,
            self.attributes,
            self.rel_triples,
            self.att_triples,
        )
    }
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        // indexes are a function of the rest
        self.entities == other.entities
            && self.relations == other.relations
            && self.attributes == other.attributes
            && self.rel_triples == other.rel_triples
            && self.att_triples == other.att_triples
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> KnowledgeGraph {
        let mut entities = BTreeMap::new();
        entities.insert(
            EntityId(0),
            EntityRef::new(EntityId(0), "http://x.org/resource/A"),
        );
        entities.insert(
            EntityId(1),
            EntityRef::new(EntityId(1), "http://x.org/resource/B"),
        );
        let mut relations = BTreeMap::new();
        relations.insert(RelationId(0), "http://x.org/prop/near".to_string());
        let mut attributes = BTreeMap::new();
        attributes.insert(AttributeId(0), "http://x.org/prop/area".to_string());
        build_graph(
            entities,
            relations,
            attributes,
            vec![RelationalTriple {
                head: EntityId(0),
                relation: RelationId(0),
                tail: EntityId(1),
            }],
            vec![AttributeTriple {
                head: EntityId(0),
                attribute: AttributeId(0),
                value: "12".into(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn index_lists_exactly_own_triples() {
        let g = tiny();
        let idx = g.entity_index(EntityId(0));
        assert_eq!(idx.attributes, vec![0]);
        assert_eq!(idx.outgoing, vec![0]);
        assert!(idx.incoming.is_empty());
        let idx1 = g.entity_index(EntityId(1));
        assert!(idx1.attributes.is_empty());
        assert_eq!(idx1.incoming, vec![0]);
        assert_eq!(
            g.entity_by_uri("http://x.org/resource/B"),
            Some(EntityId(1))
        );
    }

    #[test]
    fn empty_graph_has_zero_stats() {
        assert_eq!(KnowledgeGraph::empty().stats(), GraphStats::default());
    }

    #[test]
    fn dangling_triple_is_rejected() {
        let (e, r, a, mut rel, att) = tiny().into_parts();
        rel.push(RelationalTriple {
            head: EntityId(0),
            relation: RelationId(0),
            tail: EntityId(9),
        });
        assert!(matches!(
            build_graph(e, r, a, rel, att),
            Err(KgError::Integrity(_))
        ));
    }

    #[test]
    fn unknown_attribute_is_rejected() {
        let (e, r, a, rel, mut att) = tiny().into_parts();
        att.push(AttributeTriple {
            head: EntityId(1),
            attribute: AttributeId(5),
            value: String::new(),
        });
        assert!(matches!(
            build_graph(e, r, a, rel, att),
            Err(KgError::Integrity(_))
        ));
    }
}
