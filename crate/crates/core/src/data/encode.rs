use std::collections::BTreeMap;

use super::document::{BlockId, Document};
use super::vocab::{Vocab, CLS, SEP};
use crate::encoder::TokenInput;
use crate::error::{Error, Result};
use crate::spatial::QuadBox;

/// Order-independent key of `[CLS]`.
pub const CLS_KEY: usize = 0;
/// Order-independent key of `[SEP]`.
pub const SEP_KEY: usize = usize::MAX;

/// Key of piece `piece` of block `block`; depends on content only, never
/// on the serialization order.
pub fn token_key(block: BlockId, piece: usize) -> usize {
    ((block as usize + 1) << 16) | piece
}

/// A document turned into model input, in its serialization order.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDocument {
    pub input: TokenInput,
    /// Source block of each position; `None` for specials.
    pub token_blocks: Vec<Option<BlockId>>,
    pub token_keys: Vec<usize>,
    /// Positions of each kept block's pieces, in piece order.
    pub block_positions: BTreeMap<BlockId, Vec<usize>>,
    /// Blocks dropped because the token budget ran out.
    pub truncated_blocks: usize,
}

impl EncodedDocument {
    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    /// Positions covering the given blocks in order, or `None` if any
    /// block was truncated away.
    pub fn positions_of(&self, blocks: &[BlockId]) -> Option<Vec<usize>> {
        let mut out = Vec::new();
        for b in blocks {
            out.extend(self.block_positions.get(b)?);
        }
        Some(out)
    }

    /// The same tokens sorted by key: `[CLS]`, blocks by id, `[SEP]`.
    /// Every serialization of one document maps to the same canonical
    /// sequence.
    pub fn canonical(&self) -> EncodedDocument {
        let mut perm: Vec<usize> = (0..self.len()).collect();
        perm.sort_by_key(|&i| self.token_keys[i]);
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut input = TokenInput::new(
            perm.iter().map(|&i| self.input.ids[i]).collect(),
            perm.iter().map(|&i| self.input.boxes[i]).collect(),
        );
        input.mask = perm.iter().map(|&i| self.input.mask[i]).collect();
        EncodedDocument {
            input,
            token_blocks: perm.iter().map(|&i| self.token_blocks[i]).collect(),
            token_keys: perm.iter().map(|&i| self.token_keys[i]).collect(),
            block_positions: self
                .block_positions
                .iter()
                .map(|(&b, pos)| (b, pos.iter().map(|&p| inverse[p]).collect()))
                .collect(),
            truncated_blocks: self.truncated_blocks,
        }
    }

    /// Position of the first piece of a block.
    pub fn head_position(&self, block: BlockId) -> Option<usize> {
        self.block_positions.get(&block).and_then(|p| p.first().copied())
    }
}

/// Token ids with the shared block box per token, in block order,
/// bracketed by `[CLS]` and `[SEP]` carrying the zero box.
pub fn assign_token_boxes(doc: &Document, vocab: &Vocab) -> Result<(Vec<usize>, Vec<QuadBox>)> {
    let enc = encode_document(doc, vocab, usize::MAX)?;
    Ok((enc.input.ids, enc.input.boxes))
}

/// Tokenize blocks in `doc.order`. Whole blocks that would push the
/// sequence past `max_tokens` (specials included) are dropped.
pub fn encode_document(doc: &Document, vocab: &Vocab, max_tokens: usize) -> Result<EncodedDocument> {
    if max_tokens < 2 {
        return Err(Error::Config(format!("max_tokens {max_tokens} cannot hold [CLS] and [SEP]")));
    }
    let boxes = doc.normalized_boxes()?;
    let mut ids = vec![CLS];
    let mut bxs = vec![QuadBox::ZERO];
    let mut token_blocks = vec![None];
    let mut keys = vec![CLS_KEY];
    let mut block_positions = BTreeMap::new();
    let mut truncated = 0;
    for &bid in &doc.order {
        let bx = *boxes
            .get(&bid)
            .ok_or_else(|| Error::Data(format!("order references unknown block {bid}")))?;
        let text = &doc.block(bid).expect("box implies block").text;
        let pieces = vocab.tokenize(text);
        if pieces.is_empty() || ids.len() + pieces.len() + 1 > max_tokens {
            truncated += 1;
            continue;
        }
        let mut pos = Vec::with_capacity(pieces.len());
        for (k, id) in pieces.into_iter().enumerate() {
            pos.push(ids.len());
            ids.push(id);
            bxs.push(bx);
            token_blocks.push(Some(bid));
            keys.push(token_key(bid, k));
        }
        block_positions.insert(bid, pos);
    }
    ids.push(SEP);
    bxs.push(QuadBox::ZERO);
    token_blocks.push(None);
    keys.push(SEP_KEY);
    Ok(EncodedDocument {
        input: TokenInput::new(ids, bxs),
        token_blocks,
        token_keys: keys,
        block_positions,
        truncated_blocks: truncated,
    })
}
