//! Shared generators for randomized property tests.

use std::collections::BTreeSet;

use proptest::prelude::*;

use acd_core::ontology::{
    ArtifactClass, DefensiveCategory, DefensiveTechnique, KnowledgeBase, OffensiveCategory,
    OffensiveTechnique, Restriction,
};

pub const CLASS_POOL: [&str; 6] = ["Alpha", "Beta", "Gamma", "Delta", "Epsilon", "Zeta"];
pub const OFF_PROP_POOL: [&str; 4] = ["opA", "opB", "opC", "shared"];
pub const DEF_PROP_POOL: [&str; 4] = ["dpA", "dpB", "dpC", "shared"];

fn off_category() -> impl Strategy<Value = OffensiveCategory> {
    prop_oneof![
        Just(OffensiveCategory::Alter),
        Just(OffensiveCategory::Generate),
        Just(OffensiveCategory::Exploit),
        Just(OffensiveCategory::Remove),
    ]
}

fn def_category() -> impl Strategy<Value = DefensiveCategory> {
    prop_oneof![
        Just(DefensiveCategory::Evict),
        Just(DefensiveCategory::Isolate),
        Just(DefensiveCategory::Restore),
    ]
}

/// A small well-formed knowledge base: a random class forest (each class may
/// parent to an earlier one, so cycles are impossible), random property
/// categories, and techniques with 1..=3 restrictions each.
pub fn kb_strategy() -> impl Strategy<Value = KnowledgeBase> {
    let props = (
        proptest::collection::vec(off_category(), OFF_PROP_POOL.len()),
        proptest::collection::vec(def_category(), DEF_PROP_POOL.len()),
    );
    let classes =
        proptest::collection::vec(proptest::option::of(0usize..CLASS_POOL.len()), CLASS_POOL.len());
    let dts = proptest::collection::vec(
        proptest::collection::vec((0..DEF_PROP_POOL.len(), 0..CLASS_POOL.len()), 1..=3),
        2..=6,
    );
    let ots = proptest::collection::vec(
        proptest::collection::vec(
            (0..OFF_PROP_POOL.len(), 0..CLASS_POOL.len(), proptest::bool::ANY),
            1..=3,
        ),
        1..=3,
    );
    (props, classes, dts, ots).prop_map(|((off_cats, def_cats), parents, dts, ots)| {
        let mut kb = KnowledgeBase::default();
        for (name, cat) in OFF_PROP_POOL.iter().zip(off_cats) {
            kb.offensive_properties.insert(name.to_string(), cat);
        }
        for (name, cat) in DEF_PROP_POOL.iter().zip(def_cats) {
            kb.defensive_properties.insert(name.to_string(), cat);
        }
        for (i, name) in CLASS_POOL.iter().enumerate() {
            // Only earlier classes may be parents; index 0 is always a root.
            let parent = parents[i].filter(|p| *p < i).map(|p| CLASS_POOL[p].to_string());
            kb.artifact_classes.insert(
                name.to_string(),
                ArtifactClass { name: name.to_string(), parent, required_attributes: vec![] },
            );
        }
        for (i, restrictions) in dts.into_iter().enumerate() {
            let id = format!("d3f:DT{i}");
            let set: BTreeSet<Restriction> = restrictions
                .into_iter()
                .map(|(p, c)| Restriction::new(DEF_PROP_POOL[p], CLASS_POOL[c]))
                .collect();
            kb.defensive_techniques.insert(
                id.clone(),
                DefensiveTechnique { id, name: format!("Defense {i}"), restrictions: set },
            );
        }
        for (i, restrictions) in ots.into_iter().enumerate() {
            let id = format!("T90{i}");
            let set: BTreeSet<Restriction> = restrictions
                .into_iter()
                .map(|(p, c, optional)| Restriction {
                    property: OFF_PROP_POOL[p].to_string(),
                    artifact_class: CLASS_POOL[c].to_string(),
                    optional,
                })
                .collect();
            kb.offensive_techniques.insert(
                id.clone(),
                OffensiveTechnique { id, name: format!("Attack {i}"), restrictions: set },
            );
        }
        kb
    })
}
