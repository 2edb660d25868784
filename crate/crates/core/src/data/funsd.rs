//! Conversion of FUNSD-style annotations (`{"form": [...]}` with word
//! boxes, entity labels and linking pairs) into [`Document`]s.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;

use super::document::{BlockId, Document, EntityAnnotation, TextBlock};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct FunsdPage {
    form: Vec<FunsdEntity>,
}

#[derive(Debug, Deserialize)]
struct FunsdEntity {
    id: u64,
    label: String,
    #[serde(default)]
    words: Vec<FunsdWord>,
    #[serde(default)]
    linking: Vec<[u64; 2]>,
}

#[derive(Debug, Deserialize)]
struct FunsdWord {
    text: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

/// Words become blocks in annotation order; entities with a label in
/// `classes` become gold entities; links are kept between such entities
/// and deduplicated. Without an explicit page size the page is the
/// bounding box of all words.
pub fn from_funsd(json: &str, classes: &[&str], page: Option<(f64, f64)>) -> Result<Document> {
    let parsed: FunsdPage = serde_json::from_str(json).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut blocks = Vec::new();
    let mut entities = Vec::new();
    let mut heads: BTreeMap<u64, BlockId> = BTreeMap::new();
    for ent in &parsed.form {
        let mut ids = Vec::new();
        for w in ent.words.iter().filter(|w| !w.text.trim().is_empty()) {
            let id = blocks.len() as BlockId;
            let [x0, y0, x1, y1] = w.bbox;
            blocks.push(TextBlock::rect(id, w.text.trim(), x0, y0, x1, y1));
            ids.push(id);
        }
        if !ids.is_empty() && classes.contains(&ent.label.as_str()) {
            heads.insert(ent.id, ids[0]);
            entities.push(EntityAnnotation::new(ent.label.clone(), ids));
        }
    }
    let mut seen = BTreeSet::new();
    let mut links = Vec::new();
    for ent in &parsed.form {
        for &[a, b] in &ent.linking {
            if let (Some(&ha), Some(&hb)) = (heads.get(&a), heads.get(&b)) {
                if ha != hb && seen.insert((ha, hb)) {
                    links.push([ha, hb]);
                }
            }
        }
    }
    let (w, h) = match page {
        Some(p) => p,
        None => blocks.iter().fold((1.0f64, 1.0f64), |(w, h), b: &TextBlock| {
            let (_, _, x1, y1) = b.bounds();
            (w.max(x1), h.max(y1))
        }),
    };
    let mut doc = Document::new(w, h);
    doc.order = blocks.iter().map(|b| b.id).collect();
    doc.blocks = blocks;
    doc.entities = entities;
    doc.links = links;
    doc.validate()?;
    Ok(doc)
}
