//! In-memory knowledge base of offensive/defensive techniques, digital-artifact
//! classes, and the property restrictions linking them.
//!
//! The knowledge base answers the queries the intent pipeline is built on:
//! which restrictions of an offensive technique are valid for a concrete
//! attack, which defensive techniques can counter an engaged artifact, and
//! which defensive techniques share an objective (equivalence classes).

mod parser;

pub use parser::load_knowledge_base;

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Semantic role of an offensive property (how the technique engages an artifact).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OffensiveCategory {
    /// Modifies existing digital artifacts.
    Alter,
    /// Creates new digital artifacts.
    Generate,
    /// Leverages existing digital artifacts.
    Exploit,
    /// Removes existing digital artifacts.
    Remove,
}

impl fmt::Display for OffensiveCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OffensiveCategory::Alter => "Alter",
            OffensiveCategory::Generate => "Generate",
            OffensiveCategory::Exploit => "Exploit",
            OffensiveCategory::Remove => "Remove",
        };
        f.write_str(s)
    }
}

impl OffensiveCategory {
    pub const ALL: [OffensiveCategory; 4] = [
        OffensiveCategory::Alter,
        OffensiveCategory::Generate,
        OffensiveCategory::Exploit,
        OffensiveCategory::Remove,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Alter" => Some(OffensiveCategory::Alter),
            "Generate" => Some(OffensiveCategory::Generate),
            "Exploit" => Some(OffensiveCategory::Exploit),
            "Remove" => Some(OffensiveCategory::Remove),
            _ => None,
        }
    }
}

/// Incident-response tactic of a defensive property.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DefensiveCategory {
    /// Removes artifacts through which attackers establish their presence.
    Evict,
    /// Creates barriers that prevent adversary access to artifacts.
    Isolate,
    /// Restores artifacts to a known better state.
    Restore,
}

impl fmt::Display for DefensiveCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DefensiveCategory::Evict => "Evict",
            DefensiveCategory::Isolate => "Isolate",
            DefensiveCategory::Restore => "Restore",
        };
        f.write_str(s)
    }
}

impl DefensiveCategory {
    pub const ALL: [DefensiveCategory; 3] =
        [DefensiveCategory::Evict, DefensiveCategory::Isolate, DefensiveCategory::Restore];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Evict" => Some(DefensiveCategory::Evict),
            "Isolate" => Some(DefensiveCategory::Isolate),
            "Restore" => Some(DefensiveCategory::Restore),
            _ => None,
        }
    }
}

/// Whether a property carries offensive or defensive semantics. The two
/// property spaces overlap by name, so a name alone does not identify a
/// property; the (name, side) pair does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Offensive,
    Defensive,
}

/// A declared property: name plus its side-specific category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyDef {
    pub name: String,
    pub category: PropertyCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropertyCategory {
    Offensive(OffensiveCategory),
    Defensive(DefensiveCategory),
}

impl PropertyCategory {
    pub fn side(&self) -> Side {
        match self {
            PropertyCategory::Offensive(_) => Side::Offensive,
            PropertyCategory::Defensive(_) => Side::Defensive,
        }
    }
}

/// A digital-artifact class in a single-inheritance taxonomy.
///
/// `required_attributes` lists the attribute names an instance needs before a
/// defensive technique can operate on it; the effective set of a class also
/// includes everything inherited from its ancestors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactClass {
    pub name: String,
    pub parent: Option<String>,
    pub required_attributes: Vec<String>,
}

/// A property-over-artifact constraint of a technique. `optional` is the
/// may- qualifier and is only meaningful on offensive restrictions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Restriction {
    pub property: String,
    pub artifact_class: String,
    pub optional: bool,
}

impl Restriction {
    pub fn new(property: &str, artifact_class: &str) -> Self {
        Restriction {
            property: property.to_string(),
            artifact_class: artifact_class.to_string(),
            optional: false,
        }
    }

    pub fn may(property: &str, artifact_class: &str) -> Self {
        Restriction {
            property: property.to_string(),
            artifact_class: artifact_class.to_string(),
            optional: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffensiveTechnique {
    pub id: String,
    pub name: String,
    pub restrictions: BTreeSet<Restriction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefensiveTechnique {
    pub id: String,
    pub name: String,
    pub restrictions: BTreeSet<Restriction>,
}

/// Closed-world knowledge base. Immutable after load; safe to share
/// read-only across workers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub offensive_properties: BTreeMap<String, OffensiveCategory>,
    pub defensive_properties: BTreeMap<String, DefensiveCategory>,
    pub artifact_classes: BTreeMap<String, ArtifactClass>,
    pub offensive_techniques: BTreeMap<String, OffensiveTechnique>,
    pub defensive_techniques: BTreeMap<String, DefensiveTechnique>,
}

/// How artifact classes are matched in lookups. `Taxonomic` is the default;
/// `Exact` disables subclass walking (useful to pin tests down).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactMatch {
    Taxonomic,
    Exact,
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate identifier `{id}` at line {line}")]
    Duplicate { id: String, line: usize },
    #[error("dangling reference to `{id}` ({context})")]
    DanglingReference { id: String, context: String },
    #[error("invalid knowledge base: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("`({property}, {artifact_class})` is not a restriction of `{technique}`")]
    UnknownRestriction { technique: String, property: String, artifact_class: String },
}

/// A single invariant violation found by [`KnowledgeBase::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Identifier of the offending entity.
    pub entity: String,
    /// Human-readable rule that was broken.
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

/// Compatibility of a defensive property category against an offensive one.
///
/// Eviction and isolation cannot undo a removal; restoration cannot undo the
/// generation of a new artifact (there is no prior state to restore).
pub fn compatible(off: OffensiveCategory, def: DefensiveCategory) -> bool {
    use DefensiveCategory::*;
    use OffensiveCategory::*;
    !matches!((def, off), (Evict, Remove) | (Isolate, Remove) | (Restore, Generate))
}

impl KnowledgeBase {
    pub fn offensive_category(&self, property: &str) -> Option<OffensiveCategory> {
        self.offensive_properties.get(property).copied()
    }

    pub fn defensive_category(&self, property: &str) -> Option<DefensiveCategory> {
        self.defensive_properties.get(property).copied()
    }

    /// All declared properties as (name, side, category) definitions.
    pub fn properties(&self) -> Vec<PropertyDef> {
        let mut out: Vec<PropertyDef> = self
            .offensive_properties
            .iter()
            .map(|(n, c)| PropertyDef {
                name: n.clone(),
                category: PropertyCategory::Offensive(*c),
            })
            .collect();
        out.extend(self.defensive_properties.iter().map(|(n, c)| PropertyDef {
            name: n.clone(),
            category: PropertyCategory::Defensive(*c),
        }));
        out
    }

    /// True if `sub` equals `sup` or is a descendant of it in the taxonomy.
    /// Walks at most `artifact_classes.len()` links, so cycles cannot hang it.
    pub fn is_subclass_of(&self, sub: &str, sup: &str) -> bool {
        let mut current = sub;
        for _ in 0..=self.artifact_classes.len() {
            if current == sup {
                return true;
            }
            match self.artifact_classes.get(current).and_then(|c| c.parent.as_deref()) {
                Some(parent) => current = parent,
                None => return false,
            }
        }
        false
    }

    /// Effective required attributes of a class, including inherited ones.
    pub fn required_attributes(&self, class: &str) -> Result<BTreeSet<&str>, QueryError> {
        if !self.artifact_classes.contains_key(class) {
            return Err(QueryError::UnknownIdentifier(class.to_string()));
        }
        let mut out = BTreeSet::new();
        let mut current = Some(class);
        let mut steps = 0;
        while let Some(name) = current {
            let Some(ac) = self.artifact_classes.get(name) else { break };
            out.extend(ac.required_attributes.iter().map(String::as_str));
            current = ac.parent.as_deref();
            steps += 1;
            if steps > self.artifact_classes.len() {
                break; // cycle; validate() reports it
            }
        }
        Ok(out)
    }

    /// The restrictions of `ot` that are valid for a concrete attack instance:
    /// every mandatory restriction, plus each optional restriction whose
    /// (property, artifact class) pair the instance actually engaged. The
    /// may- qualifier is dropped in the result.
    pub fn valid_restrictions(
        &self,
        ot: &OffensiveTechnique,
        engaged: &[(String, String)],
    ) -> Result<BTreeSet<Restriction>, QueryError> {
        for (prop, class) in engaged {
            let known =
                ot.restrictions.iter().any(|r| &r.property == prop && &r.artifact_class == class);
            if !known {
                return Err(QueryError::UnknownRestriction {
                    technique: ot.id.clone(),
                    property: prop.clone(),
                    artifact_class: class.clone(),
                });
            }
        }
        let mut out = BTreeSet::new();
        for r in &ot.restrictions {
            let is_engaged =
                engaged.iter().any(|(p, c)| p == &r.property && c == &r.artifact_class);
            if !r.optional || is_engaged {
                out.insert(Restriction::new(&r.property, &r.artifact_class));
            }
        }
        Ok(out)
    }

    /// Inverse property lookup: all defensive techniques with a restriction
    /// (`def_property`, C) where C is `artifact_class` or one of its
    /// subclasses.
    pub fn inverse_defensive_lookup(
        &self,
        artifact_class: &str,
        def_property: &str,
    ) -> Result<Vec<&DefensiveTechnique>, QueryError> {
        self.inverse_defensive_lookup_with(artifact_class, def_property, ArtifactMatch::Taxonomic)
    }

    pub fn inverse_defensive_lookup_with(
        &self,
        artifact_class: &str,
        def_property: &str,
        mode: ArtifactMatch,
    ) -> Result<Vec<&DefensiveTechnique>, QueryError> {
        if !self.defensive_properties.contains_key(def_property) {
            return Err(QueryError::UnknownIdentifier(def_property.to_string()));
        }
        if !self.artifact_classes.contains_key(artifact_class) {
            return Err(QueryError::UnknownIdentifier(artifact_class.to_string()));
        }
        let matches = |c: &str| match mode {
            ArtifactMatch::Taxonomic => self.is_subclass_of(c, artifact_class),
            ArtifactMatch::Exact => c == artifact_class,
        };
        Ok(self
            .defensive_techniques
            .values()
            .filter(|dt| {
                dt.restrictions
                    .iter()
                    .any(|r| r.property == def_property && matches(&r.artifact_class))
            })
            .collect())
    }

    /// The equivalence class of `dt`: the intersection of the inverse
    /// lookups of all its restrictions. Techniques in one class pursue the
    /// same defensive objective with different implementation strategies.
    /// Always contains `dt` itself.
    pub fn equivalence_class(&self, dt: &DefensiveTechnique) -> Vec<&DefensiveTechnique> {
        self.equivalence_class_with(dt, ArtifactMatch::Taxonomic)
    }

    pub fn equivalence_class_with(
        &self,
        dt: &DefensiveTechnique,
        mode: ArtifactMatch,
    ) -> Vec<&DefensiveTechnique> {
        let mut members: Option<BTreeSet<&str>> = None;
        for r in &dt.restrictions {
            let found = self
                .inverse_defensive_lookup_with(&r.artifact_class, &r.property, mode)
                .unwrap_or_default();
            let ids: BTreeSet<&str> = found.iter().map(|d| d.id.as_str()).collect();
            members = Some(match members {
                None => ids,
                Some(acc) => acc.intersection(&ids).copied().collect(),
            });
        }
        let ids = members.unwrap_or_default();
        self.defensive_techniques
            .values()
            .filter(|d| ids.contains(d.id.as_str()) || d.id == dt.id)
            .collect()
    }

    /// Defensive techniques that may invalidate `ot` through the artifact it
    /// engages via `(property, artifact_class)`.
    ///
    /// The pair must correspond to a restriction of `ot`; an engaged class
    /// that specializes a declared restriction class is accepted. A counter
    /// is any (DT, defensive property) where the DT restricts the engaged
    /// class or a superclass of it and the property categories are
    /// compatible.
    pub fn counter_techniques(
        &self,
        ot: &OffensiveTechnique,
        property: &str,
        artifact_class: &str,
    ) -> Result<Vec<(&DefensiveTechnique, &str)>, QueryError> {
        self.counter_techniques_with(ot, property, artifact_class, ArtifactMatch::Taxonomic)
    }

    pub fn counter_techniques_with(
        &self,
        ot: &OffensiveTechnique,
        property: &str,
        artifact_class: &str,
        mode: ArtifactMatch,
    ) -> Result<Vec<(&DefensiveTechnique, &str)>, QueryError> {
        let off_cat = self
            .offensive_category(property)
            .ok_or_else(|| QueryError::UnknownIdentifier(property.to_string()))?;
        if !self.artifact_classes.contains_key(artifact_class) {
            return Err(QueryError::UnknownIdentifier(artifact_class.to_string()));
        }
        let engages_declared = ot.restrictions.iter().any(|r| {
            r.property == property
                && match mode {
                    ArtifactMatch::Taxonomic => {
                        self.is_subclass_of(artifact_class, &r.artifact_class)
                    }
                    ArtifactMatch::Exact => r.artifact_class == artifact_class,
                }
        });
        if !engages_declared {
            return Err(QueryError::UnknownRestriction {
                technique: ot.id.clone(),
                property: property.to_string(),
                artifact_class: artifact_class.to_string(),
            });
        }
        let covers = |c: &str| match mode {
            ArtifactMatch::Taxonomic => self.is_subclass_of(artifact_class, c),
            ArtifactMatch::Exact => c == artifact_class,
        };
        let mut out = Vec::new();
        for dt in self.defensive_techniques.values() {
            for r in &dt.restrictions {
                if !covers(&r.artifact_class) {
                    continue;
                }
                let Some(def_cat) = self.defensive_category(&r.property) else { continue };
                if compatible(off_cat, def_cat) {
                    out.push((dt, r.property.as_str()));
                }
            }
        }
        Ok(out)
    }

    /// Checks every type invariant and returns the violations found.
    /// Violations are data, not errors: an empty list means the KB is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();

        for (name, class) in &self.artifact_classes {
            if let Some(parent) = &class.parent {
                if !self.artifact_classes.contains_key(parent) {
                    out.push(Violation {
                        entity: name.clone(),
                        rule: format!("unknown parent artifact class `{parent}`"),
                    });
                }
            }
            // Cycle detection: walk up; if we take more steps than there are
            // classes, we must have looped.
            let mut current = class.parent.as_deref();
            let mut steps = 0;
            while let Some(p) = current {
                steps += 1;
                if p == name || steps > self.artifact_classes.len() {
                    out.push(Violation {
                        entity: name.clone(),
                        rule: "artifact-class parent links form a cycle".to_string(),
                    });
                    break;
                }
                current = self.artifact_classes.get(p).and_then(|c| c.parent.as_deref());
            }
        }

        for ot in self.offensive_techniques.values() {
            if ot.restrictions.is_empty() {
                out.push(Violation {
                    entity: ot.id.clone(),
                    rule: "offensive technique has no restrictions".to_string(),
                });
            }
            for r in &ot.restrictions {
                if !self.offensive_properties.contains_key(&r.property) {
                    out.push(Violation {
                        entity: ot.id.clone(),
                        rule: format!("unknown offensive property `{}`", r.property),
                    });
                }
                if !self.artifact_classes.contains_key(&r.artifact_class) {
                    out.push(Violation {
                        entity: ot.id.clone(),
                        rule: format!("unknown artifact class `{}`", r.artifact_class),
                    });
                }
            }
        }

        for dt in self.defensive_techniques.values() {
            if dt.restrictions.is_empty() {
                out.push(Violation {
                    entity: dt.id.clone(),
                    rule: "defensive technique has no restrictions".to_string(),
                });
            }
            for r in &dt.restrictions {
                if r.optional {
                    out.push(Violation {
                        entity: dt.id.clone(),
                        rule: format!(
                            "defensive restriction `{}` on `{}` carries the may- qualifier",
                            r.property, r.artifact_class
                        ),
                    });
                }
                if !self.defensive_properties.contains_key(&r.property) {
                    out.push(Violation {
                        entity: dt.id.clone(),
                        rule: format!("unknown defensive property `{}`", r.property),
                    });
                }
                if !self.artifact_classes.contains_key(&r.artifact_class) {
                    out.push(Violation {
                        entity: dt.id.clone(),
                        rule: format!("unknown artifact class `{}`", r.artifact_class),
                    });
                }
            }
        }

        out
    }

    /// Serializes to the KB text format. `load_knowledge_base` on the output
    /// reproduces the same knowledge base.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, cat) in &self.offensive_properties {
            out.push_str(&format!("property {name} offensive {cat}\n"));
        }
        for (name, cat) in &self.defensive_properties {
            out.push_str(&format!("property {name} defensive {cat}\n"));
        }
        for class in self.artifact_classes.values() {
            out.push_str(&format!("artifact {}", class.name));
            if let Some(parent) = &class.parent {
                out.push_str(&format!(" extends {parent}"));
            }
            if !class.required_attributes.is_empty() {
                out.push_str(&format!(" requires {}", class.required_attributes.join(",")));
            }
            out.push('\n');
        }
        for ot in self.offensive_techniques.values() {
            out.push_str(&format!("offensive_technique {} \"{}\" {{\n", ot.id, ot.name));
            for r in &ot.restrictions {
                let may = if r.optional { "may-" } else { "" };
                out.push_str(&format!("  {may}{} {};\n", r.property, r.artifact_class));
            }
            out.push_str("}\n");
        }
        for dt in self.defensive_techniques.values() {
            out.push_str(&format!("defensive_technique {} \"{}\" {{\n", dt.id, dt.name));
            for r in &dt.restrictions {
                out.push_str(&format!("  {} {};\n", r.property, r.artifact_class));
            }
            out.push_str("}\n");
        }
        out
    }
}
