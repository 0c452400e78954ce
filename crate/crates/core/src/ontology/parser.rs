//! Loader for the KB text format.
//!
//! One document per knowledge base, UTF-8, `#` comments, order-independent
//! declarations:
//!
//! ```text
//! property <name> offensive|defensive <Category>
//! artifact <name> [extends <parent>] [requires attr1,attr2,...]
//! offensive_technique <id> "<name>" { [may-]<property> <artifact>; ... }
//! defensive_technique <id> "<name>" { <property> <artifact>; ... }
//! ```

use std::collections::BTreeSet;

use super::{
    ArtifactClass, DefensiveCategory, DefensiveTechnique, KbError, KnowledgeBase,
    OffensiveCategory, OffensiveTechnique, Restriction, Side,
};

/// Parses and fully resolves a knowledge base. References may point forward;
/// resolution happens after the whole document is read.
pub fn load_knowledge_base(source: &str) -> Result<KnowledgeBase, KbError> {
    let mut kb = KnowledgeBase::default();
    let mut open: Option<OpenTechnique> = None;

    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw);
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(tech) = open.as_mut() {
            if tech.feed(line, line_no)? {
                let tech = open.take().unwrap();
                tech.close(&mut kb)?;
            }
            continue;
        }
        let (keyword, rest) = split_first_token(line);
        match keyword {
            "property" => parse_property(rest, line_no, &mut kb)?,
            "artifact" => parse_artifact(rest, line_no, &mut kb)?,
            "offensive_technique" => {
                let mut tech = OpenTechnique::parse_header(rest, Side::Offensive, line_no)?;
                check_duplicate_technique(&kb, &tech.id, line_no)?;
                if tech.consume_body_remainder()? {
                    tech.close(&mut kb)?;
                } else {
                    open = Some(tech);
                }
            }
            "defensive_technique" => {
                let mut tech = OpenTechnique::parse_header(rest, Side::Defensive, line_no)?;
                check_duplicate_technique(&kb, &tech.id, line_no)?;
                if tech.consume_body_remainder()? {
                    tech.close(&mut kb)?;
                } else {
                    open = Some(tech);
                }
            }
            other => {
                return Err(KbError::Parse {
                    line: line_no,
                    message: format!("unknown directive `{other}`"),
                })
            }
        }
    }

    if let Some(tech) = open {
        return Err(KbError::Parse {
            line: tech.header_line,
            message: format!("unterminated technique block for `{}`", tech.id),
        });
    }

    resolve_references(&kb)?;
    if let Some(v) = kb.validate().into_iter().next() {
        return Err(KbError::Invalid(v.to_string()));
    }
    Ok(kb)
}

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

fn split_first_token(s: &str) -> (&str, &str) {
    let s = s.trim_start();
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], s[i..].trim_start()),
        None => (s, ""),
    }
}

fn parse_property(rest: &str, line: usize, kb: &mut KnowledgeBase) -> Result<(), KbError> {
    let tokens: Vec<&str> = rest.split_whitespace().collect();
    let [name, side, category] = tokens.as_slice() else {
        return Err(KbError::Parse {
            line,
            message: "expected `property <name> offensive|defensive <category>`".to_string(),
        });
    };
    match *side {
        "offensive" => {
            let cat = OffensiveCategory::parse(category).ok_or_else(|| KbError::Parse {
                line,
                message: format!("unknown offensive category `{category}`"),
            })?;
            if kb.offensive_properties.insert(name.to_string(), cat).is_some() {
                return Err(KbError::Duplicate { id: name.to_string(), line });
            }
        }
        "defensive" => {
            let cat = DefensiveCategory::parse(category).ok_or_else(|| KbError::Parse {
                line,
                message: format!("unknown defensive category `{category}`"),
            })?;
            if kb.defensive_properties.insert(name.to_string(), cat).is_some() {
                return Err(KbError::Duplicate { id: name.to_string(), line });
            }
        }
        other => {
            return Err(KbError::Parse {
                line,
                message: format!("expected `offensive` or `defensive`, got `{other}`"),
            })
        }
    }
    Ok(())
}

fn parse_artifact(rest: &str, line: usize, kb: &mut KnowledgeBase) -> Result<(), KbError> {
    let (name, mut rest) = split_first_token(rest);
    if name.is_empty() {
        return Err(KbError::Parse { line, message: "artifact name missing".to_string() });
    }
    let mut parent = None;
    let mut required = Vec::new();
    loop {
        let (keyword, tail) = split_first_token(rest);
        match keyword {
            "" => break,
            "extends" => {
                let (p, tail) = split_first_token(tail);
                if p.is_empty() {
                    return Err(KbError::Parse {
                        line,
                        message: "`extends` needs a parent class".to_string(),
                    });
                }
                parent = Some(p.to_string());
                rest = tail;
            }
            "requires" => {
                required = tail
                    .split(',')
                    .map(|a| a.trim().to_string())
                    .filter(|a| !a.is_empty())
                    .collect();
                rest = "";
            }
            other => {
                return Err(KbError::Parse {
                    line,
                    message: format!("unexpected token `{other}` in artifact declaration"),
                })
            }
        }
    }
    let class = ArtifactClass { name: name.to_string(), parent, required_attributes: required };
    if kb.artifact_classes.insert(name.to_string(), class).is_some() {
        return Err(KbError::Duplicate { id: name.to_string(), line });
    }
    Ok(())
}

fn check_duplicate_technique(kb: &KnowledgeBase, id: &str, line: usize) -> Result<(), KbError> {
    if kb.offensive_techniques.contains_key(id) || kb.defensive_techniques.contains_key(id) {
        return Err(KbError::Duplicate { id: id.to_string(), line });
    }
    Ok(())
}

struct OpenTechnique {
    side: Side,
    id: String,
    name: String,
    restrictions: BTreeSet<Restriction>,
    /// Entry text carried over between lines until a `;` completes it.
    pending: String,
    header_line: usize,
    /// Unconsumed text after `{` on the header line.
    remainder: String,
}

impl OpenTechnique {
    fn parse_header(rest: &str, side: Side, line: usize) -> Result<Self, KbError> {
        let (id, rest) = split_first_token(rest);
        if id.is_empty() {
            return Err(KbError::Parse { line, message: "technique id missing".to_string() });
        }
        let rest = rest.trim_start();
        if !rest.starts_with('"') {
            return Err(KbError::Parse {
                line,
                message: "technique name must be quoted".to_string(),
            });
        }
        let Some(end) = rest[1..].find('"') else {
            return Err(KbError::Parse {
                line,
                message: "unterminated technique name".to_string(),
            });
        };
        let name = rest[1..=end].to_string();
        let after = rest[end + 2..].trim_start();
        let Some(body) = after.strip_prefix('{') else {
            return Err(KbError::Parse {
                line,
                message: "expected `{` after technique name".to_string(),
            });
        };
        Ok(OpenTechnique {
            side,
            id: id.to_string(),
            name,
            restrictions: BTreeSet::new(),
            pending: String::new(),
            header_line: line,
            remainder: body.to_string(),
        })
    }

    /// Processes body text left on the header line. Returns true when the
    /// block already closed there.
    fn consume_body_remainder(&mut self) -> Result<bool, KbError> {
        let text = std::mem::take(&mut self.remainder);
        self.feed(&text, self.header_line)
    }

    /// Feeds one line of body text; returns true when `}` closed the block.
    fn feed(&mut self, text: &str, line: usize) -> Result<bool, KbError> {
        let (body, closed) = match text.find('}') {
            Some(i) => {
                if !text[i + 1..].trim().is_empty() {
                    return Err(KbError::Parse {
                        line,
                        message: "unexpected text after `}`".to_string(),
                    });
                }
                (&text[..i], true)
            }
            None => (text, false),
        };
        self.pending.push_str(body);
        self.pending.push(' ');
        while let Some(i) = self.pending.find(';') {
            let entry = self.pending[..i].trim().to_string();
            self.pending = self.pending[i + 1..].to_string();
            if !entry.is_empty() {
                self.push_entry(&entry, line)?;
            }
        }
        if closed && !self.pending.trim().is_empty() {
            return Err(KbError::Parse {
                line,
                message: format!("restriction `{}` is missing `;`", self.pending.trim()),
            });
        }
        Ok(closed)
    }

    fn push_entry(&mut self, entry: &str, line: usize) -> Result<(), KbError> {
        let tokens: Vec<&str> = entry.split_whitespace().collect();
        let [prop, artifact] = tokens.as_slice() else {
            return Err(KbError::Parse {
                line,
                message: format!("expected `<property> <artifact>;`, got `{entry}`"),
            });
        };
        let (prop, optional) = match prop.strip_prefix("may-") {
            Some(p) => (p, true),
            None => (*prop, false),
        };
        if optional && self.side == Side::Defensive {
            return Err(KbError::Parse {
                line,
                message: "defensive restrictions cannot carry the may- qualifier".to_string(),
            });
        }
        self.restrictions.insert(Restriction {
            property: prop.to_string(),
            artifact_class: artifact.to_string(),
            optional,
        });
        Ok(())
    }

    fn close(self, kb: &mut KnowledgeBase) -> Result<(), KbError> {
        match self.side {
            Side::Offensive => {
                kb.offensive_techniques.insert(
                    self.id.clone(),
                    OffensiveTechnique {
                        id: self.id,
                        name: self.name,
                        restrictions: self.restrictions,
                    },
                );
            }
            Side::Defensive => {
                kb.defensive_techniques.insert(
                    self.id.clone(),
                    DefensiveTechnique {
                        id: self.id,
                        name: self.name,
                        restrictions: self.restrictions,
                    },
                );
            }
        }
        Ok(())
    }
}

/// Closed-world check: every identifier used by a declaration must resolve.
fn resolve_references(kb: &KnowledgeBase) -> Result<(), KbError> {
    for class in kb.artifact_classes.values() {
        if let Some(parent) = &class.parent {
            if !kb.artifact_classes.contains_key(parent) {
                return Err(KbError::DanglingReference {
                    id: parent.clone(),
                    context: format!("parent of artifact class `{}`", class.name),
                });
            }
        }
    }
    for ot in kb.offensive_techniques.values() {
        for r in &ot.restrictions {
            if !kb.offensive_properties.contains_key(&r.property) {
                return Err(KbError::DanglingReference {
                    id: r.property.clone(),
                    context: format!("offensive property in `{}`", ot.id),
                });
            }
            if !kb.artifact_classes.contains_key(&r.artifact_class) {
                return Err(KbError::DanglingReference {
                    id: r.artifact_class.clone(),
                    context: format!("artifact class in `{}`", ot.id),
                });
            }
        }
    }
    for dt in kb.defensive_techniques.values() {
        for r in &dt.restrictions {
            if !kb.defensive_properties.contains_key(&r.property) {
                return Err(KbError::DanglingReference {
                    id: r.property.clone(),
                    context: format!("defensive property in `{}`", dt.id),
                });
            }
            if !kb.artifact_classes.contains_key(&r.artifact_class) {
                return Err(KbError::DanglingReference {
                    id: r.artifact_class.clone(),
                    context: format!("artifact class in `{}`", dt.id),
                });
            }
        }
    }
    Ok(())
}
