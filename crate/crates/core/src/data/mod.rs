//! Documents, synthetic generation, tokenization, serialization and
//! reading-order transforms.

pub mod document;
pub mod encode;
pub mod funsd;
pub mod generator;
pub mod jsonl;
pub mod pools;
pub mod transform;
pub mod vocab;

pub use document::{BlockId, Document, EntityAnnotation, Page, TextBlock};
pub use encode::{assign_token_boxes, encode_document, token_key, EncodedDocument};
pub use funsd::from_funsd;
pub use generator::{generate, generate_one, generate_range, GeneratorConfig, LayoutFamily};
pub use jsonl::{parse_jsonl, read_jsonl, to_jsonl, write_atomic, write_jsonl};
pub use transform::{rotate, transform_order, OrderMode};
pub use vocab::Vocab;
