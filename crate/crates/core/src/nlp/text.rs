//! Tokenization and normalization shared by dictionary compilation and matching.
//!
//! A token is a maximal run of non-whitespace characters with leading and
//! trailing non-alphanumeric characters removed; tokens that are pure
//! punctuation are dropped. The normalized form of a token is its lowercase
//! core, and the normalized form of a phrase is its token cores joined by a
//! single space.

/// Words that mark the mention following them as negated.
pub const NEGATION_TRIGGERS: [&str; 4] = ["no", "denies", "without", "not"];

/// How many tokens before a mention are searched for a trigger.
pub const NEGATION_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Lowercased core.
    pub norm: String,
    pub char_start: usize,
    pub char_end: usize,
    pub byte_start: usize,
    pub byte_end: usize,
}

fn is_boundary_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Splits `text` into tokens, with offsets counted in both Unicode scalar
/// values and bytes.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    // (char index, byte index) of each char inside the current whitespace-delimited run
    let mut run: Vec<(usize, usize, char)> = Vec::new();
    let flush = |run: &mut Vec<(usize, usize, char)>, tokens: &mut Vec<Token>| {
        let first = run.iter().position(|&(_, _, c)| !is_boundary_punct(c));
        let last = run.iter().rposition(|&(_, _, c)| !is_boundary_punct(c));
        if let (Some(a), Some(b)) = (first, last) {
            let (cs, bs, _) = run[a];
            let (ce, be, ch) = run[b];
            let norm: String = run[a..=b].iter().flat_map(|&(_, _, c)| c.to_lowercase()).collect();
            tokens.push(Token {
                norm,
                char_start: cs,
                char_end: ce + 1,
                byte_start: bs,
                byte_end: be + ch.len_utf8(),
            });
        }
        run.clear();
    };
    for (ci, (bi, ch)) in text.char_indices().enumerate() {
        if ch.is_whitespace() {
            flush(&mut run, &mut tokens);
        } else {
            run.push((ci, bi, ch));
        }
    }
    flush(&mut run, &mut tokens);
    tokens
}

/// Normalized form of a phrase: lowercase, token-boundary punctuation
/// stripped, whitespace collapsed.
pub fn normalize(text: &str) -> String {
    tokenize(text).into_iter().map(|t| t.norm).collect::<Vec<_>>().join(" ")
}

/// Whether any of the `NEGATION_WINDOW` tokens before `token_index` is a trigger.
pub fn negated_at(tokens: &[Token], token_index: usize) -> bool {
    let from = token_index.saturating_sub(NEGATION_WINDOW);
    tokens[from..token_index]
        .iter()
        .any(|t| NEGATION_TRIGGERS.contains(&t.norm.as_str()))
}

/// The substring of `text` between two char offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut idx = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b0 = idx.nth(start).unwrap_or(text.len());
    let b1 = if end > start {
        idx.nth(end - start - 1).unwrap_or(text.len())
    } else {
        b0
    };
    &text[b0..b1]
}
