//! Tokenization and normalization of post text.
//!
//! Rules, applied in order: lowercase; split on Unicode whitespace; peel a
//! trailing run of `.,!?;:` off each chunk into its own token; strip leading
//! `#`; drop user handles and URLs; cap character repetitions at three;
//! truncate to [`MAX_TOKENS`].

/// Posts are cut after this many tokens.
pub const MAX_TOKENS: usize = 32;

/// Stands in for posts with no tokens left. Embeds to the zero vector.
pub const EMPTY_TOKEN: &str = "<empty>";

const MAX_REPEAT: usize = 3;
const TRAILING_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':'];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub truncated: bool,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The tokens the embedder sees: `[EMPTY_TOKEN]` for empty posts.
    pub fn model_tokens(&self) -> Vec<String> {
        if self.tokens.is_empty() {
            vec![EMPTY_TOKEN.to_string()]
        } else {
            self.tokens.clone()
        }
    }
}

pub fn is_url(token: &str) -> bool {
    let lower = token.to_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

/// Collapses every run of more than three identical characters to three.
pub fn limit_repetitions(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut prev = None;
    let mut run = 0;
    for c in s.chars() {
        if Some(c) == prev {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if run <= MAX_REPEAT {
            out.push(c);
        }
    }
    out
}

/// Normalizes the core of a chunk (punctuation already peeled). `None` drops it.
fn normalize_core(core: &str) -> Option<String> {
    let stripped = core.trim_start_matches('#');
    if stripped.is_empty() || stripped.starts_with('@') || is_url(stripped) {
        return None;
    }
    Some(limit_repetitions(stripped))
}

pub fn normalize_and_tokenize(raw_text: &str) -> TokenSequence {
    let lower = raw_text.to_lowercase();
    let mut tokens = Vec::new();
    for chunk in lower.split_whitespace() {
        let core = chunk.trim_end_matches(TRAILING_PUNCT);
        let punct = &chunk[core.len()..];
        if let Some(tok) = normalize_core(core) {
            tokens.push(tok);
        }
        if !punct.is_empty() {
            tokens.push(limit_repetitions(punct));
        }
    }
    let truncated = tokens.len() > MAX_TOKENS;
    tokens.truncate(MAX_TOKENS);
    TokenSequence { tokens, truncated }
}

pub fn is_empty_after_preprocess(seq: &TokenSequence) -> bool {
    seq.tokens.is_empty()
}

#[derive(Debug, thiserror::Error)]
pub enum TokenFileError {
    #[error("token file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("post id {0:?} cannot be written to a token file")]
    BadId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Writes one line per post: `<post id>\t<tok> <tok> ...`, using
/// [`EMPTY_TOKEN`] for posts without tokens.
pub fn write_token_file<'a>(
    mut w: impl std::io::Write,
    entries: impl IntoIterator<Item = (&'a str, &'a TokenSequence)>,
) -> Result<(), TokenFileError> {
    for (id, seq) in entries {
        if id.is_empty() || id.contains(['\t', '\n', '\r']) {
            return Err(TokenFileError::BadId(id.to_string()));
        }
        writeln!(w, "{id}\t{}", seq.model_tokens().join(" "))?;
    }
    Ok(())
}

/// Reads a token file back into `(post id, tokens)` pairs in file order.
pub fn read_token_file(r: impl std::io::BufRead) -> Result<Vec<(String, Vec<String>)>, TokenFileError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let parse = |message: &str| TokenFileError::Parse {
            line: i + 1,
            message: message.to_string(),
        };
        let (id, rest) = line.split_once('\t').ok_or_else(|| parse("missing tab separator"))?;
        if id.is_empty() {
            return Err(parse("empty post id"));
        }
        let tokens: Vec<String> = rest.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(parse("no tokens (empty posts are written as <empty>)"));
        }
        if tokens.len() > MAX_TOKENS {
            return Err(parse("more tokens than the truncation limit"));
        }
        out.push((id.to_string(), tokens));
    }
    Ok(out)
}
