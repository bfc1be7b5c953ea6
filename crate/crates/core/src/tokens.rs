//! Token counting.
//!
//! Gate thresholds and every efficiency metric are measured with a
//! [`Tokenizer`]. The default [`WordSymbolTokenizer`] is an approximation
//! that needs no vocabulary file; exact model tokenizers plug in through the
//! same trait.

use std::sync::Arc;

pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Counts whitespace-delimited words plus every non-alphanumeric,
/// non-whitespace character.
///
/// `"a b c"` is 3 tokens, `"foo(bar)"` is 1 word + 2 symbols = 3 tokens.
/// This is an approximation of a subword tokenizer, not a replacement for one.
#[derive(Debug, Default, Clone, Copy)]
pub struct WordSymbolTokenizer;

impl Tokenizer for WordSymbolTokenizer {
    fn count(&self, text: &str) -> usize {
        let words = text.split_whitespace().count();
        let symbols = text
            .chars()
            .filter(|c| !c.is_alphanumeric() && !c.is_whitespace())
            .count();
        words + symbols
    }
}

pub type SharedTokenizer = Arc<dyn Tokenizer>;

pub fn default_tokenizer() -> SharedTokenizer {
    Arc::new(WordSymbolTokenizer)
}
