//! Fixed byte-level tokenizer over printable ASCII plus newline.
//!
//! | id      | symbol                         |
//! |---------|--------------------------------|
//! | 0       | PAD                            |
//! | 1       | BOS                            |
//! | 2       | EOS                            |
//! | 3       | `\n`                           |
//! | 4 ..=98 | bytes `0x20` (space) ..= `0x7E` (`~`) |

use crate::error::{Result, XtfError};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const NEWLINE: usize = 3;
const FIRST_PRINTABLE: usize = 4;
/// Size of the printable alphabet (95 printable bytes + newline).
pub const ALPHABET_SIZE: usize = 96;
pub const NUM_SPECIALS: usize = 3;
pub const VOCAB_SIZE: usize = ALPHABET_SIZE + NUM_SPECIALS;

pub fn encode_char(c: char) -> Option<usize> {
    match c {
        '\n' => Some(NEWLINE),
        ' '..='~' => Some(c as usize - 0x20 + FIRST_PRINTABLE),
        _ => None,
    }
}

pub fn decode_id(id: usize) -> Option<char> {
    match id {
        NEWLINE => Some('\n'),
        FIRST_PRINTABLE..=98 => Some((id - FIRST_PRINTABLE + 0x20) as u8 as char),
        _ => None,
    }
}

/// Encodes text; `context` names the record in the error.
pub fn encode(text: &str, context: &str) -> Result<Vec<usize>> {
    text.chars()
        .map(|c| {
            encode_char(c).ok_or_else(|| {
                XtfError::Input(format!("record {context}: character {c:?} outside the alphabet"))
            })
        })
        .collect()
}

/// Decodes ids back to text, skipping specials.
pub fn decode(ids: &[usize]) -> String {
    ids.iter().filter_map(|&i| decode_id(i)).collect()
}
