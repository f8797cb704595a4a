//! Character alphabets. Class index 0 is always the CTC blank; the i-th
//! alphabet character (0-based) has class index i + 1.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class index reserved for the blank symbol.
pub const BLANK: usize = 0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Alphabet {
    chars: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, usize>,
}

impl Alphabet {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let chars: Vec<char> = chars.into_iter().collect();
        if chars.is_empty() {
            return Err(Error::invalid("alphabet is empty"));
        }
        let mut index = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if index.insert(c, i + 1).is_some() {
                return Err(Error::invalid(format!("duplicate alphabet character {c:?}")));
            }
        }
        Ok(Alphabet { chars, index })
    }

    /// Parses the one-character-per-line alphabet file format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut chars = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => {
                    return Err(Error::invalid(format!(
                        "alphabet line {}: expected exactly one character, got {line:?}",
                        lineno + 1
                    )))
                }
            }
        }
        Self::new(chars)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for c in &self.chars {
            out.push(*c);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    /// Number of characters, excluding blank.
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Number of classifier outputs: characters plus blank.
    pub fn num_classes(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn label_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn char_of(&self, label: usize) -> Option<char> {
        label.checked_sub(1).and_then(|i| self.chars.get(i)).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| self.label_of(c).ok_or(Error::UnknownSymbol(c)))
            .collect()
    }

    /// Maps labels back to text; out-of-range labels render as U+FFFD.
    pub fn decode(&self, labels: &[usize]) -> String {
        labels
            .iter()
            .map(|&l| self.char_of(l).unwrap_or('\u{FFFD}'))
            .collect()
    }

    /// True when every character is ASCII alphanumeric and the class count is
    /// 37, i.e. the case-collapsed English set.
    pub fn is_case_collapsed_english(&self) -> bool {
        self.num_classes() == 37 && self.chars.iter().all(|c| c.is_ascii_alphanumeric())
    }
}

impl TryFrom<String> for Alphabet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Alphabet::new(s.chars())
    }
}

impl From<Alphabet> for String {
    fn from(a: Alphabet) -> String {
        a.chars.into_iter().collect()
    }
}
