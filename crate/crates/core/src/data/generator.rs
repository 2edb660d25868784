use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::document::{BlockId, Document, EntityAnnotation, TextBlock};
use super::pools::{self, ValueKind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutFamily {
    #[default]
    FormKv,
    Receipt,
    Table,
    MultiColumn,
}

impl LayoutFamily {
    pub fn classes(self) -> &'static [&'static str] {
        match self {
            LayoutFamily::FormKv | LayoutFamily::MultiColumn => &["header", "question", "answer"],
            LayoutFamily::Receipt => &["menu_name", "menu_count", "menu_price"],
            LayoutFamily::Table => &["header_cell", "cell"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub family: LayoutFamily,
    /// Inclusive pixel ranges.
    pub page_width: [u32; 2],
    pub page_height: [u32; 2],
    pub blocks_per_doc: [usize; 2],
    pub char_width: [u32; 2],
    /// Maximum vertical displacement of a block from its line, in pixels.
    pub jitter: u32,
    /// Probability that a form field has no value.
    pub empty_value_prob: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            family: LayoutFamily::FormKv,
            page_width: [760, 860],
            page_height: [980, 1100],
            blocks_per_doc: [40, 72],
            char_width: [7, 9],
            jitter: 2,
            empty_value_prob: 0.1,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [u32; 2]| r[0] > 0 && r[0] <= r[1];
        if !ordered(self.page_width) || !ordered(self.page_height) || !ordered(self.char_width) {
            return Err(Error::Config("page and character size ranges must be non-empty and positive".into()));
        }
        if self.blocks_per_doc[0] == 0 || self.blocks_per_doc[0] > self.blocks_per_doc[1] {
            return Err(Error::Config("blocks_per_doc range must be non-empty and positive".into()));
        }
        if !(0.0..1.0).contains(&self.empty_value_prob) {
            return Err(Error::Config("empty_value_prob must lie in [0, 1)".into()));
        }
        if self.page_width[0] < 300 || self.page_height[0] < 300 {
            return Err(Error::Config("pages narrower than 300 pixels cannot hold a layout".into()));
        }
        Ok(())
    }
}

const MAX_ATTEMPTS: usize = 32;

/// Documents `0..n` of the stream defined by the config seed.
pub fn generate(config: &GeneratorConfig, n: usize) -> Result<Vec<Document>> {
    generate_range(config, 0..n)
}

/// Documents with the given stream indices. Each index owns an
/// independent generator stream, so ranges can be produced separately.
pub fn generate_range(config: &GeneratorConfig, range: Range<usize>) -> Result<Vec<Document>> {
    config.validate()?;
    range
        .into_par_iter()
        .map(|index| generate_one(config, index))
        .collect()
}

pub fn generate_one(config: &GeneratorConfig, index: usize) -> Result<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    for _ in 0..MAX_ATTEMPTS {
        let doc = match config.family {
            LayoutFamily::FormKv => form(&mut rng, config, false),
            LayoutFamily::MultiColumn => form(&mut rng, config, true),
            LayoutFamily::Receipt => receipt(&mut rng, config),
            LayoutFamily::Table => table(&mut rng, config),
        };
        if let Some(mut doc) = doc {
            doc.id = Some(format!("doc-{index:06}"));
            debug_assert!(doc.validate().is_ok());
            return Ok(doc);
        }
    }
    Err(Error::Generation(format!(
        "document {index}: no feasible {:?} layout after {MAX_ATTEMPTS} attempts",
        config.family
    )))
}

/// Page under construction with overlap-checked placement.
struct Canvas {
    doc: Document,
    rects: Vec<[i64; 4]>,
    cw: i64,
    lh: i64,
    margin: i64,
    jitter: i64,
    target: usize,
}

impl Canvas {
    fn new<R: Rng>(rng: &mut R, cfg: &GeneratorConfig) -> Self {
        let w = rng.gen_range(cfg.page_width[0]..=cfg.page_width[1]) as i64;
        let h = rng.gen_range(cfg.page_height[0]..=cfg.page_height[1]) as i64;
        let cw = rng.gen_range(cfg.char_width[0]..=cfg.char_width[1]) as i64;
        Canvas {
            doc: Document::new(w as f64, h as f64),
            rects: Vec::new(),
            cw,
            lh: (cw * 2).max(4),
            margin: rng.gen_range(30..=60),
            jitter: cfg.jitter as i64,
            target: rng.gen_range(cfg.blocks_per_doc[0]..=cfg.blocks_per_doc[1]),
        }
    }

    fn w(&self) -> i64 {
        self.doc.page.w as i64
    }

    fn h(&self) -> i64 {
        self.doc.page.h as i64
    }

    fn line_step(&self) -> i64 {
        self.lh + self.lh / 2 + 2 * self.jitter + 2
    }

    fn remaining(&self) -> usize {
        self.target.saturating_sub(self.doc.blocks.len())
    }

    fn word_width(&self, word: &str) -> i64 {
        word.chars().count() as i64 * self.cw
    }

    fn space(&self) -> i64 {
        self.cw
    }

    fn phrase_width(&self, words: &[String]) -> i64 {
        let ws: i64 = words.iter().map(|w| self.word_width(w)).sum();
        ws + self.space() * (words.len() as i64 - 1).max(0)
    }

    /// Place words left to right starting at `(x, y)`; nothing is placed
    /// unless every word fits inside the page without overlap.
    fn place<R: Rng>(&mut self, rng: &mut R, words: &[String], x: i64, y: i64) -> Option<Vec<BlockId>> {
        let mut rects = Vec::with_capacity(words.len());
        let mut cx = x;
        for word in words {
            let dy = if self.jitter > 0 { rng.gen_range(-self.jitter..=self.jitter) } else { 0 };
            let r = [cx, y + dy, cx + self.word_width(word), y + dy + self.lh];
            if r[0] < 0 || r[1] < 0 || r[2] > self.w() || r[3] > self.h() {
                return None;
            }
            if self.rects.iter().chain(rects.iter()).any(|o| overlaps(o, &r)) {
                return None;
            }
            rects.push(r);
            cx = r[2] + self.space();
        }
        let mut ids = Vec::with_capacity(words.len());
        for (word, r) in words.iter().zip(rects) {
            let id = self.doc.blocks.len() as BlockId;
            self.doc.blocks.push(TextBlock::rect(
                id,
                word.clone(),
                r[0] as f64,
                r[1] as f64,
                r[2] as f64,
                r[3] as f64,
            ));
            self.doc.order.push(id);
            self.rects.push(r);
            ids.push(id);
        }
        Some(ids)
    }

    fn entity(&mut self, class: &str, ids: Vec<BlockId>) -> BlockId {
        let head = ids[0];
        self.doc.entities.push(EntityAnnotation::new(class, ids));
        head
    }

    fn link(&mut self, a: BlockId, b: BlockId) {
        self.doc.links.push([a, b]);
    }

    fn footer<R: Rng>(&mut self, rng: &mut R, phrases: &[&str], y_min: i64) {
        let words = split(phrases.choose(rng).unwrap());
        let width = self.phrase_width(&words);
        let y = self.h() - self.margin - self.lh;
        if y <= y_min || width + 2 * self.margin >= self.w() {
            return;
        }
        let x = rng.gen_range(self.margin..=self.w() - self.margin - width);
        let _ = self.place(rng, &words, x, y);
    }
}

fn overlaps(a: &[i64; 4], b: &[i64; 4]) -> bool {
    a[0] < b[2] && b[0] < a[2] && a[1] < b[3] && b[1] < a[3]
}

fn split(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).unwrap()
}

fn value_words<R: Rng>(rng: &mut R, kind: ValueKind) -> Vec<String> {
    let v: Vec<String> = match kind {
        ValueKind::Name => {
            let mut v = vec![pick(rng, pools::FIRST_NAMES)];
            if rng.gen_bool(0.2) {
                v.push(pick(rng, pools::FIRST_NAMES));
            }
            v.push(pick(rng, pools::LAST_NAMES));
            return v.into_iter().map(str::to_string).collect();
        }
        ValueKind::Date => vec![
            rng.gen_range(1..=28).to_string(),
            pick(rng, pools::MONTHS).to_string(),
            rng.gen_range(1990..=2025).to_string(),
        ],
        ValueKind::Code => vec![pick(rng, pools::CODES).to_string()],
        ValueKind::Amount => vec![pick(rng, pools::AMOUNTS).to_string()],
        ValueKind::Address => vec![
            (1 + 7 * rng.gen_range(0..57)).to_string(),
            pick(rng, pools::STREET_NAMES).to_string(),
            pick(rng, pools::STREET_KINDS).to_string(),
        ],
        ValueKind::City => vec![pick(rng, pools::CITIES).to_string()],
        ValueKind::Phone => vec![pick(rng, pools::PHONES).to_string()],
        ValueKind::Company => vec![
            pick(rng, pools::COMPANY_WORDS).to_string(),
            pick(rng, pools::COMPANY_SUFFIX).to_string(),
        ],
        ValueKind::Choice => vec![pick(rng, pools::CHOICES).to_string()],
        ValueKind::Count => vec![rng.gen_range(1..=31).to_string()],
    };
    v
}

fn form<R: Rng>(rng: &mut R, cfg: &GeneratorConfig, two_columns: bool) -> Option<Document> {
    let mut c = Canvas::new(rng, cfg);
    let mut y = c.margin + rng.gen_range(0..=20);

    let title = split(pick(rng, pools::FORM_TITLES));
    let tw = c.phrase_width(&title);
    let tx = (c.w() - tw) / 2 + rng.gen_range(-40..=40);
    let ids = c.place(rng, &title, tx.max(c.margin), y)?;
    c.entity("header", ids);
    y += 2 * c.line_step();

    let mut keys: Vec<&(&str, ValueKind)> = pools::FORM_KEYS.iter().collect();
    keys.shuffle(rng);
    let mut keys = keys.into_iter();
    let bottom = c.h() - c.margin - 2 * c.line_step();
    let mut fields = 0;
    let col_w = (c.w() - 2 * c.margin) / 2;

    while c.remaining() > 0 && y < bottom {
        let columns = if two_columns || rng.gen_bool(0.3) { 2 } else { 1 };
        let mut line_rows = 1;
        for col in 0..columns {
            if c.remaining() == 0 {
                break;
            }
            let &(key, kind) = match keys.next() {
                Some(k) => k,
                None => break,
            };
            let key = split(key);
            let x0 = c.margin + col as i64 * col_w + rng.gen_range(0..=16);
            let right = if columns == 2 { x0 + col_w - 24 } else { c.w() - c.margin };
            let Some(kids) = c.place(rng, &key, x0, y) else { continue };
            let q = c.entity("question", kids);
            fields += 1;
            if rng.gen_bool(cfg.empty_value_prob) {
                continue;
            }
            let value = value_words(rng, kind);
            let vw = c.phrase_width(&value);
            let gap = c.cw * rng.gen_range(2..=6);
            let inline_x = x0 + c.phrase_width(&key) + gap;
            let below = rng.gen_bool(0.3) || inline_x + vw > right;
            let placed = if below {
                line_rows = 2;
                let indent = rng.gen_range(0..=3) * c.cw;
                c.place(rng, &value, x0 + indent, y + c.line_step())
            } else {
                c.place(rng, &value, inline_x, y)
            };
            if let Some(vids) = placed {
                let a = c.entity("answer", vids);
                c.link(q, a);
            }
        }
        y += line_rows * c.line_step() + rng.gen_range(0..=c.lh / 2);
    }
    if fields < 2 {
        return None;
    }
    if rng.gen_bool(0.6) {
        c.footer(rng, pools::FOOTER_PHRASES, y);
    }
    Some(c.doc)
}

fn receipt<R: Rng>(rng: &mut R, cfg: &GeneratorConfig) -> Option<Document> {
    let mut c = Canvas::new(rng, cfg);
    let content_w = (c.w() * 11 / 20).max(300);
    let left = (c.w() - content_w) / 2 + rng.gen_range(-20..=20);
    let right = left + content_w;
    let mut y = c.margin + rng.gen_range(0..=20);

    let store = split(pick(rng, pools::STORE_NAMES));
    let sx = (left + right - c.phrase_width(&store)) / 2;
    c.place(rng, &store, sx, y)?;
    y += 2 * c.line_step();

    let count_x = left + content_w * 11 / 20;
    let bottom = c.h() - c.margin - 4 * c.line_step();
    let mut items = 0;
    let mut menu: Vec<&str> = pools::MENU_ITEMS.to_vec();
    menu.shuffle(rng);
    for name in menu {
        if c.remaining() < 6 || y >= bottom {
            break;
        }
        let name = split(name);
        let nids = c.place(rng, &name, left, y)?;
        let n = c.entity("menu_name", nids);
        if rng.gen_bool(0.75) {
            let count = vec![pick(rng, pools::MENU_COUNTS).to_string()];
            let cids = c.place(rng, &count, count_x, y)?;
            let k = c.entity("menu_count", cids);
            c.link(n, k);
        }
        let price = vec![pick(rng, pools::AMOUNTS).to_string()];
        let px = right - c.phrase_width(&price);
        let pids = c.place(rng, &price, px, y)?;
        let p = c.entity("menu_price", pids);
        c.link(n, p);
        items += 1;
        y += c.line_step();
    }
    if items < 2 {
        return None;
    }
    y += c.line_step() / 2;
    for label in ["SUBTOTAL", "TOTAL"] {
        if c.remaining() < 2 {
            break;
        }
        let amount = vec![pick(rng, pools::AMOUNTS).to_string()];
        c.place(rng, &[label.to_string()], left, y)?;
        c.place(rng, &amount, right - c.phrase_width(&amount), y)?;
        y += c.line_step();
    }
    if c.remaining() > 0 {
        let thanks = split(pick(rng, &["THANK YOU", "PLEASE COME AGAIN"]));
        let x = (left + right - c.phrase_width(&thanks)) / 2;
        let _ = c.place(rng, &thanks, x, y + c.line_step());
    }
    Some(c.doc)
}

fn table<R: Rng>(rng: &mut R, cfg: &GeneratorConfig) -> Option<Document> {
    let mut c = Canvas::new(rng, cfg);
    let cols = rng.gen_range(2..=4usize);
    let rows_fit = c.target / cols;
    if rows_fit < 3 {
        return None;
    }
    let rows = rng.gen_range(3..=rows_fit.min(12));
    let width = c.w() - 2 * c.margin;
    let cell_w = width / cols as i64;
    let mut y = c.margin + rng.gen_range(0..=40);

    let caption = vec![pools::TABLE_CAPTION.to_string(), rng.gen_range(1..=9).to_string()];
    c.place(rng, &caption, c.margin, y)?;
    y += 2 * c.line_step();

    let mut header: Vec<&str> = pools::TABLE_COLUMNS.to_vec();
    header.shuffle(rng);
    let mut grid: Vec<Vec<BlockId>> = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut row = Vec::with_capacity(cols);
        for (k, col_name) in header.iter().take(cols).enumerate() {
            let words = if r == 0 {
                vec![col_name.to_string()]
            } else if k == 0 {
                let mut w = vec![pick(rng, pools::TABLE_WORDS).to_string()];
                if rng.gen_bool(0.3) {
                    w.push(pick(rng, pools::TABLE_WORDS).to_string());
                }
                w
            } else {
                vec![pick(rng, pools::TABLE_NUMBERS).to_string()]
            };
            let x = c.margin + k as i64 * cell_w + rng.gen_range(0..=8);
            let ids = c.place(rng, &words, x, y)?;
            let class = if r == 0 { "header_cell" } else { "cell" };
            row.push(c.entity(class, ids));
        }
        grid.push(row);
        y += c.line_step() + rng.gen_range(0..=c.lh / 3);
    }
    for r in 0..rows {
        for k in 0..cols {
            if k + 1 < cols {
                c.link(grid[r][k], grid[r][k + 1]);
            }
            if r + 1 < rows {
                c.link(grid[r][k], grid[r + 1][k]);
            }
        }
    }
    Some(c.doc)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::data::vocab::Vocab;

    fn families() -> [LayoutFamily; 4] {
        [LayoutFamily::FormKv, LayoutFamily::Receipt, LayoutFamily::Table, LayoutFamily::MultiColumn]
    }

    #[test]
    fn zero_documents() {
        assert!(generate(&GeneratorConfig::default(), 0).unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_documents() {
        for family in families() {
            let cfg = GeneratorConfig {
                family,
                seed: 7,
                ..Default::default()
            };
            let a = serde_json::to_string(&generate(&cfg, 12).unwrap()).unwrap();
            let b = serde_json::to_string(&generate(&cfg, 12).unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ranges_match_full_stream() {
        let cfg = GeneratorConfig::default();
        let all = generate(&cfg, 6).unwrap();
        let tail = generate_range(&cfg, 3..6).unwrap();
        assert_eq!(&all[3..], &tail[..]);
    }

    #[test]
    fn documents_are_valid_and_non_overlapping() {
        for family in families() {
            let cfg = GeneratorConfig {
                family,
                seed: 11,
                ..Default::default()
            };
            for doc in generate(&cfg, 40).unwrap() {
                doc.validate().unwrap();
                let b: Vec<_> = doc.blocks.iter().map(|b| b.bounds()).collect();
                for i in 0..b.len() {
                    let (x0, y0, x1, y1) = b[i];
                    assert!(x0 >= 0.0 && y0 >= 0.0 && x1 <= doc.page.w && y1 <= doc.page.h);
                    for j in 0..i {
                        let (u0, v0, u1, v1) = b[j];
                        assert!(!(x0 < u1 && u0 < x1 && y0 < v1 && v0 < y1), "{family:?} blocks {i} and {j} overlap");
                    }
                }
                for e in &doc.entities {
                    assert!(family.classes().contains(&e.class.as_str()));
                }
            }
        }
    }

    #[test]
    fn form_answers_have_exactly_one_question() {
        let cfg = GeneratorConfig {
            seed: 3,
            ..Default::default()
        };
        for doc in generate(&cfg, 50).unwrap() {
            let class: BTreeMap<_, _> = doc.entities.iter().map(|e| (e.block_ids[0], e.class.as_str())).collect();
            for e in doc.entities.iter().filter(|e| e.class == "answer") {
                let sources: Vec<_> = doc.links.iter().filter(|l| l[1] == e.block_ids[0]).collect();
                assert_eq!(sources.len(), 1);
                assert_eq!(class[&sources[0][0]], "question");
            }
        }
    }

    #[test]
    fn generated_words_are_in_vocabulary() {
        let v = Vocab::standard();
        for family in families() {
            let cfg = GeneratorConfig {
                family,
                ..Default::default()
            };
            for doc in generate(&cfg, 30).unwrap() {
                for b in &doc.blocks {
                    assert!(v.id(&b.text).is_some(), "{:?}", b.text);
                }
            }
        }
    }

    #[test]
    fn block_counts_respect_range() {
        let cfg = GeneratorConfig::default();
        for doc in generate(&cfg, 40).unwrap() {
            assert!(doc.blocks.len() <= cfg.blocks_per_doc[1] + 12, "{}", doc.blocks.len());
        }
    }

    #[test]
    fn invalid_ranges_rejected() {
        let cfg = GeneratorConfig {
            blocks_per_doc: [10, 5],
            ..Default::default()
        };
        assert!(matches!(generate(&cfg, 1), Err(Error::Config(_))));
    }
}
