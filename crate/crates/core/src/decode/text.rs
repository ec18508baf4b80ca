use crate::error::{Error, Result};

/// Output symbols after blank (index 0): space, a-z, apostrophe, hyphen,
/// digits and a few punctuation marks; 45 labels in total.
pub const LABELS: &str = " abcdefghijklmnopqrstuvwxyz'-0123456789.,?!&_";

pub fn symbol_char(symbol: usize) -> Option<char> {
    symbol.checked_sub(1).and_then(|i| LABELS.chars().nth(i))
}

pub fn labels_to_text(labels: &[usize]) -> String {
    labels.iter().filter_map(|&s| symbol_char(s)).collect()
}

/// Maps text to label indices (1-based; blank is never produced).
/// Letters are lower-cased.
pub fn text_to_labels(text: &str) -> Result<Vec<usize>> {
    text.chars()
        .map(|c| {
            let c = c.to_ascii_lowercase();
            LABELS
                .chars()
                .position(|l| l == c)
                .map(|i| i + 1)
                .ok_or_else(|| Error::Decode(format!("character {c:?} is not in the output alphabet")))
        })
        .collect()
}
