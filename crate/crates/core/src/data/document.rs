use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::spatial::{normalize_box, Point, QuadBox};

pub type BlockId = u32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub w: f64,
    pub h: f64,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// One OCR-style unit of text with its pixel quad
/// `[x1, y1, x2, y2, x3, y3, x4, y4]` in tl, tr, br, bl order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextBlock {
    pub id: BlockId,
    pub text: String,
    pub quad: [f64; 8],
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl TextBlock {
    pub fn rect(id: BlockId, text: impl Into<String>, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        TextBlock {
            id,
            text: text.into(),
            quad: [x0, y0, x1, y0, x1, y1, x0, y1],
            extra: Map::new(),
        }
    }

    pub fn vertices(&self) -> [Point; 4] {
        std::array::from_fn(|k| Point::new(self.quad[2 * k], self.quad[2 * k + 1]))
    }

    /// Pixel bounds `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let v = self.vertices();
        (
            v.iter().map(|p| p.x).fold(f64::INFINITY, f64::min),
            v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min),
            v.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max),
            v.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub class: String,
    pub block_ids: Vec<BlockId>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl EntityAnnotation {
    pub fn new(class: impl Into<String>, block_ids: Vec<BlockId>) -> Self {
        EntityAnnotation {
            class: class.into(),
            block_ids,
            extra: Map::new(),
        }
    }

    pub fn head(&self) -> Option<BlockId> {
        self.block_ids.first().copied()
    }
}

/// A page with text blocks, a serialization order, gold entities and
/// links between entity heads (by head block id).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub page: Page,
    pub blocks: Vec<TextBlock>,
    pub order: Vec<BlockId>,
    pub entities: Vec<EntityAnnotation>,
    pub links: Vec<[BlockId; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Document {
    pub fn new(w: f64, h: f64) -> Self {
        Document {
            id: None,
            page: Page {
                w,
                h,
                extra: Map::new(),
            },
            blocks: Vec::new(),
            order: Vec::new(),
            entities: Vec::new(),
            links: Vec::new(),
            split: None,
            extra: Map::new(),
        }
    }

    pub fn block_index(&self) -> HashMap<BlockId, usize> {
        self.blocks.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn block(&self, id: BlockId) -> Option<&TextBlock> {
        self.blocks.iter().find(|b| b.id == id)
    }

    /// Normalized box of every block, keyed by id.
    pub fn normalized_boxes(&self) -> Result<BTreeMap<BlockId, QuadBox>> {
        self.blocks
            .iter()
            .map(|b| Ok((b.id, normalize_box(&b.quad, self.page.w, self.page.h)?)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Data(m));
        if !(self.page.w > 0.0 && self.page.h > 0.0) {
            return bad(format!("page size {}×{} not positive", self.page.w, self.page.h));
        }
        let ids: BTreeSet<BlockId> = self.blocks.iter().map(|b| b.id).collect();
        if ids.len() != self.blocks.len() {
            return bad("duplicate block ids".into());
        }
        if let Some(b) = self.blocks.iter().find(|b| b.text.trim().is_empty()) {
            return bad(format!("block {} has empty text", b.id));
        }
        let order: BTreeSet<BlockId> = self.order.iter().copied().collect();
        if order.len() != self.order.len() || order != ids {
            return bad("order is not a permutation of block ids".into());
        }
        let mut heads = BTreeSet::new();
        let mut used = BTreeSet::new();
        for e in &self.entities {
            if e.block_ids.is_empty() {
                return bad(format!("entity of class {} has no blocks", e.class));
            }
            for id in &e.block_ids {
                if !ids.contains(id) {
                    return bad(format!("entity references unknown block {id}"));
                }
                if !used.insert(*id) {
                    return bad(format!("block {id} belongs to two entities"));
                }
            }
            heads.insert(e.block_ids[0]);
        }
        for [a, b] in &self.links {
            if !heads.contains(a) || !heads.contains(b) {
                return bad(format!("link {a}→{b} does not join entity heads"));
            }
            if a == b {
                return bad(format!("self link on {a}"));
            }
        }
        Ok(())
    }

    /// Digest over everything except the serialization order.
    pub fn content_hash(&self) -> String {
        let mut copy = self.clone();
        copy.order.clear();
        let bytes = serde_json::to_vec(&copy).expect("document serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
