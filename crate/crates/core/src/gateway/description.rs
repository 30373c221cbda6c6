//! Description sets and the `### class` / `- line` output grammar.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Visual descriptors for one class, produced at one tree node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionSet {
    pub class_id: String,
    pub node_id: String,
    lines: Vec<String>,
}

impl DescriptionSet {
    /// Trims lines, drops blanks and duplicates (first occurrence wins).
    pub fn new(
        class_id: impl Into<String>,
        node_id: impl Into<String>,
        lines: impl IntoIterator<Item = impl AsRef<str>>,
    ) -> Result<Self, GatewayError> {
        let class_id = class_id.into();
        let mut kept: Vec<String> = Vec::new();
        for line in lines {
            let line = line.as_ref().trim();
            if !line.is_empty() && !kept.iter().any(|k| k == line) {
                kept.push(line.to_string());
            }
        }
        if kept.is_empty() {
            return Err(GatewayError::ParseFailure(format!(
                "no description lines for class {class_id:?}"
            )));
        }
        Ok(Self {
            class_id,
            node_id: node_id.into(),
            lines: kept,
        })
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }
}

fn bullet_content(line: &str) -> Option<&str> {
    let t = line.trim();
    for marker in ["- ", "* ", "• ", "-\t", "*\t"] {
        if let Some(rest) = t.strip_prefix(marker) {
            return Some(rest.trim());
        }
    }
    // "1. foo" / "2) foo"
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(rest) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return Some(rest.trim());
        }
    }
    None
}

/// Bullet lines of a free-form list response.
pub fn parse_bullets(raw: &str) -> Vec<String> {
    raw.lines()
        .filter_map(bullet_content)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

fn heading_text(line: &str) -> Option<&str> {
    let t = line.trim_start();
    let rest = t.strip_prefix("###")?;
    Some(rest.trim_start_matches('#').trim())
}

fn normalize_name(name: &str) -> String {
    let stripped = name
        .trim()
        .trim_end_matches(':')
        .trim_matches(|c| matches!(c, '*' | '`' | '"' | '\''))
        .trim();
    stripped
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Parses a comparison response into one set per expected class.
///
/// Text outside `### class` blocks and non-bullet lines inside them are
/// ignored. Headings naming classes outside `expected_classes` are skipped.
pub fn parse_description_list(
    raw: &str,
    expected_classes: &[String],
    node_id: &str,
) -> Result<BTreeMap<String, DescriptionSet>, GatewayError> {
    if raw.trim().is_empty() {
        return Err(GatewayError::ParseFailure("empty response".into()));
    }
    let resolve = |heading: &str| -> Option<usize> {
        expected_classes
            .iter()
            .position(|c| c.trim() == heading)
            .or_else(|| {
                let norm = normalize_name(heading);
                expected_classes
                    .iter()
                    .position(|c| normalize_name(c) == norm)
            })
    };

    let mut collected: Vec<Vec<String>> = vec![Vec::new(); expected_classes.len()];
    let mut saw_heading = false;
    // Some(Some(i)): inside block for class i; Some(None): inside an unknown block
    let mut current: Option<Option<usize>> = None;
    for line in raw.lines() {
        if let Some(heading) = heading_text(line) {
            saw_heading = true;
            current = Some(resolve(heading));
            continue;
        }
        if let (Some(Some(i)), Some(content)) = (current, bullet_content(line)) {
            if !content.is_empty() {
                collected[i].push(content.to_string());
            }
        }
    }
    if !saw_heading {
        return Err(GatewayError::ParseFailure(
            "response contains no '### <class>' headings".into(),
        ));
    }

    let mut out = BTreeMap::new();
    for (class, lines) in expected_classes.iter().zip(collected) {
        if lines.is_empty() {
            return Err(GatewayError::MissingClassInResponse(class.clone()));
        }
        out.insert(
            class.clone(),
            DescriptionSet::new(class.clone(), node_id, lines)?,
        );
    }
    Ok(out)
}

/// Renders sets in the grammar accepted by [`parse_description_list`].
pub fn render_description_list<'a>(sets: impl IntoIterator<Item = &'a DescriptionSet>) -> String {
    let mut out = String::new();
    for set in sets {
        out.push_str("### ");
        out.push_str(&set.class_id);
        out.push('\n');
        for line in &set.lines {
            out.push_str("- ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}
