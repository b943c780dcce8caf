use serde::{Deserialize, Serialize};

/// Token as a character-offset range `[start, end)`. Serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Token {
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

impl From<(usize, usize)> for Token {
    fn from((start, end): (usize, usize)) -> Self {
        Self { start, end }
    }
}

impl From<Token> for (usize, usize) {
    fn from(t: Token) -> Self {
        (t.start, t.end)
    }
}

/// Reference tokenizer: maximal alphanumeric runs form one token, every other
/// non-whitespace character is a token of its own, whitespace is dropped.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut run_start: Option<usize> = None;
    let mut pos = 0;
    for c in text.chars() {
        if c.is_alphanumeric() {
            run_start.get_or_insert(pos);
        } else {
            if let Some(start) = run_start.take() {
                tokens.push(Token::new(start, pos));
            }
            if !c.is_whitespace() {
                tokens.push(Token::new(pos, pos + 1));
            }
        }
        pos += 1;
    }
    if let Some(start) = run_start {
        tokens.push(Token::new(start, pos));
    }
    tokens
}
