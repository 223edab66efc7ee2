//! Normalization, word-level tokenization, vocabulary building and encoding.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{Document, Modality};
use crate::error::{ForgeError, Result};
use crate::lexer::{lex_code, LexClass, OPERATORS};
use crate::seed::sha256_hex;

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const MASK: u32 = 3;
pub const UNK: u32 = 4;
pub const NUM_SPECIALS: usize = 5;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"];

pub const DEFAULT_MAX_LEN: usize = 1024;
pub const TOKENIZER_VERSION: &str = "word-punct-v1";

/// Counts of lossy repairs made while normalizing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeReport {
    pub invalid_sequences: usize,
    pub stripped_controls: usize,
}

impl NormalizeReport {
    pub fn merge(&mut self, other: NormalizeReport) {
        self.invalid_sequences += other.invalid_sequences;
        self.stripped_controls += other.stripped_controls;
    }
}

/// Decodes possibly-invalid UTF-8, NFC-normalizes, strips control characters
/// other than newline and tab, and for text collapses whitespace runs.
pub fn normalize_bytes(raw: &[u8], modality: Modality) -> (String, NormalizeReport) {
    let mut report = NormalizeReport::default();
    let mut decoded = String::with_capacity(raw.len());
    for chunk in raw.utf8_chunks() {
        decoded.push_str(chunk.valid());
        if !chunk.invalid().is_empty() {
            decoded.push(char::REPLACEMENT_CHARACTER);
            report.invalid_sequences += 1;
        }
    }
    let (text, inner) = normalize(&decoded, modality);
    report.merge(inner);
    (text, report)
}

pub fn normalize(text: &str, modality: Modality) -> (String, NormalizeReport) {
    let mut report = NormalizeReport::default();
    let mut out = String::with_capacity(text.len());
    let mut in_space = false;
    for c in text.nfc() {
        if c.is_control() && c != '\n' && c != '\t' {
            report.stripped_controls += 1;
            continue;
        }
        if modality == Modality::Text && c.is_whitespace() {
            if !in_space {
                out.push(' ');
            }
            in_space = true;
            continue;
        }
        in_space = false;
        out.push(c);
    }
    (out, report)
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// A token with its byte span in the normalized source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpannedToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits on whitespace; runs of word characters form one token, operators
/// from the shared C-family table are matched longest-first, and any other
/// non-space character stands alone.
pub fn tokenize_spanned(text: &str) -> Vec<SpannedToken> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < text.len() {
        let c = text[i..].chars().next().expect("in bounds");
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        let start = i;
        if is_word_char(c) {
            while i < text.len() {
                let c = text[i..].chars().next().expect("in bounds");
                if !is_word_char(c) {
                    break;
                }
                i += c.len_utf8();
            }
        } else if let Some(op) = OPERATORS.iter().find(|op| op.len() > 1 && bytes[i..].starts_with(op.as_bytes())) {
            i += op.len();
        } else {
            i += c.len_utf8();
        }
        out.push(SpannedToken { text: text[start..i].to_string(), start, end: i });
    }
    out
}

/// Code tokenization runs the word/punctuation rules inside each lex token,
/// so no encoder token ever spans two lex tokens.
pub fn tokenize_code(source: &str) -> Vec<SpannedToken> {
    let lexed = lex_code(source);
    let mut out = Vec::new();
    for lt in lexed.tokens.iter().filter(|t| t.class != LexClass::Whitespace) {
        out.extend(tokenize_spanned(&lt.lexeme).into_iter().map(|mut t| {
            t.start += lt.start;
            t.end += lt.start;
            t
        }));
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spanned(text).into_iter().map(|t| t.text).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CasingPolicy {
    Preserve,
    Lowercase,
}

impl CasingPolicy {
    pub fn apply(self, token: &str) -> String {
        match self {
            CasingPolicy::Preserve => token.to_string(),
            CasingPolicy::Lowercase => token.to_lowercase(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions that carry real tokens (not PAD/CLS/SEP).
    pub fn content_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.ids.iter().enumerate().filter(|(_, &id)| !is_structural(id)).map(|(i, _)| i)
    }

    pub fn attention_mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&id| id != PAD).collect()
    }
}

/// PAD, CLS and SEP are never masking or prediction targets.
pub fn is_structural(id: u32) -> bool {
    id == PAD || id == CLS || id == SEP
}

/// Word-level vocabulary with fixed special ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pub text_casing: CasingPolicy,
    pub code_casing: CasingPolicy,
}

impl Tokenizer {
    /// Builds a tokenizer from the non-special vocabulary in id order.
    pub fn from_vocab(vocab: Vec<String>) -> Self {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(vocab);
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index, text_casing: CasingPolicy::Lowercase, code_casing: CasingPolicy::Preserve }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn version(&self) -> String {
        TOKENIZER_VERSION.to_string()
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn casing(&self, modality: Modality) -> CasingPolicy {
        match modality {
            Modality::Text => self.text_casing,
            Modality::Code => self.code_casing,
        }
    }

    /// Tokenizes normalized content and applies the modality's casing policy.
    pub fn tokens_for(&self, content: &str, modality: Modality) -> Vec<SpannedToken> {
        let casing = self.casing(modality);
        let raw = match modality {
            Modality::Text => tokenize_spanned(content),
            Modality::Code => tokenize_code(content),
        };
        raw.into_iter()
            .map(|mut t| {
                t.text = casing.apply(&t.text);
                t
            })
            .collect()
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.token_id(token).unwrap_or(UNK)
    }

    /// `CLS + ids + SEP`, truncated to `max_len`, optionally padded.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], max_len: usize, pad: bool) -> Result<TokenSequence> {
        if max_len < 2 {
            return Err(ForgeError::Config(format!("max_len must be at least 2, got {max_len}")));
        }
        let keep = tokens.len().min(max_len - 2);
        let mut ids = Vec::with_capacity(if pad { max_len } else { keep + 2 });
        ids.push(CLS);
        ids.extend(tokens[..keep].iter().map(|t| self.lookup(t.as_ref())));
        ids.push(SEP);
        if pad {
            ids.resize(max_len, PAD);
        }
        Ok(TokenSequence { ids })
    }

    pub fn encode_document(&self, content: &str, modality: Modality, max_len: usize) -> Result<TokenSequence> {
        let toks: Vec<String> = self.tokens_for(content, modality).into_iter().map(|t| t.text).collect();
        self.encode(&toks, max_len, false)
    }

    /// Inverse of `encode` for in-vocabulary tokens; PAD/CLS/SEP are dropped.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| !is_structural(id))
            .map(|&id| self.id_token(id).unwrap_or(SPECIAL_TOKENS[UNK as usize]).to_string())
            .collect()
    }

    /// One token per line; line `n` holds id `n + 5`.
    pub fn write_vocab(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for t in &self.tokens[NUM_SPECIALS..] {
            writeln!(f, "{t}")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_vocab(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_vocab(text.lines().map(str::to_string).collect()))
    }

    pub fn vocab_hash(&self) -> String {
        sha256_hex(self.tokens[NUM_SPECIALS..].join("\n").as_bytes())
    }
}

/// Keeps tokens with frequency at least `min_count`, ordered by descending
/// frequency then ascending token, truncated so the whole vocabulary
/// (specials included) has at most `max_size` entries.
pub fn build_vocab_from_tokens<I, S>(token_lists: I, min_count: usize, max_size: usize) -> Result<Tokenizer>
where
    I: IntoIterator,
    I::Item: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_count < 1 {
        return Err(ForgeError::Config("min_count must be at least 1".into()));
    }
    if max_size < NUM_SPECIALS + 1 {
        return Err(ForgeError::Config(format!("max_size must be at least {}, got {max_size}", NUM_SPECIALS + 1)));
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for list in token_lists {
        for t in list {
            *freq.entry(t.as_ref().to_string()).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(t, c)| *c >= min_count && !SPECIAL_TOKENS.contains(&t.as_str()))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(max_size - NUM_SPECIALS);
    Ok(Tokenizer::from_vocab(entries.into_iter().map(|(t, _)| t).collect()))
}

pub fn build_vocab(documents: &[Document], min_count: usize, max_size: usize) -> Result<Tokenizer> {
    let probe = Tokenizer::from_vocab(Vec::new());
    build_vocab_from_tokens(
        documents.iter().map(|d| probe.tokens_for(&d.content, d.modality).into_iter().map(|t| t.text)),
        min_count,
        max_size,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Category;
    use proptest::prelude::*;

    #[test]
    fn nfc_composes_combining_marks() {
        let (out, _) = normalize("A\u{0301}", Modality::Text);
        assert_eq!(out, "\u{00C1}");
        assert_eq!(out.chars().count(), 1);
    }

    #[test]
    fn text_whitespace_collapses_code_is_verbatim() {
        assert_eq!(normalize("a  b", Modality::Text).0, "a b");
        let code = "int  x =   1;\n\tint y;";
        assert_eq!(normalize(code, Modality::Code).0.as_bytes(), code.as_bytes());
    }

    #[test]
    fn invalid_bytes_and_controls_are_counted() {
        let (out, report) = normalize_bytes(b"ok\xff\x07 fine", Modality::Text);
        assert_eq!(out, "ok\u{FFFD} fine");
        assert_eq!(report, NormalizeReport { invalid_sequences: 1, stripped_controls: 1 });
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("encrypt the payload."), vec!["encrypt", "the", "payload", "."]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("x=y"), vec!["x", "=", "y"]);
        assert_eq!(tokenize("a==b->c"), vec!["a", "==", "b", "->", "c"]);
        assert_eq!(tokenize("buf_len"), vec!["buf_len"]);
    }

    fn docs(texts: &[&str]) -> Vec<Document> {
        texts.iter().enumerate().map(|(i, t)| Document::new(format!("d{i}"), Category::Seed, Modality::Text, *t)).collect()
    }

    #[test]
    fn vocab_examples() {
        let t = build_vocab(&docs(&["a a b"]), 1, 100).unwrap();
        assert_eq!(t.vocab_size(), 7);
        assert_eq!(t.token_id("a"), Some(5));
        assert_eq!(t.token_id("b"), Some(6));

        let t = build_vocab(&docs(&["a a b"]), 2, 100).unwrap();
        assert_eq!(t.vocab_size(), 6);
        assert_eq!(t.token_id("b"), None);

        assert_eq!(build_vocab(&[], 1, 100).unwrap().vocab_size(), NUM_SPECIALS);
        assert!(matches!(build_vocab(&[], 1, 5), Err(ForgeError::Config(_))));
    }

    #[test]
    fn specials_are_fixed() {
        let t = Tokenizer::from_vocab(vec!["a".into()]);
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(t.token_id(s), Some(i as u32));
        }
    }

    #[test]
    fn encode_examples() {
        let t = Tokenizer::from_vocab(vec!["a".into()]);
        assert_eq!(t.encode(&["a"], 16, false).unwrap().ids, vec![CLS, 5, SEP]);
        assert_eq!(t.encode(&["q"], 16, false).unwrap().ids, vec![CLS, UNK, SEP]);
        let long = vec!["a"; 2000];
        let seq = t.encode(&long, 1024, false).unwrap();
        assert_eq!(seq.len(), 1024);
        assert_eq!(*seq.ids.last().unwrap(), SEP);
        let padded = t.encode(&["a"], 8, true).unwrap();
        assert_eq!(padded.ids, vec![CLS, 5, SEP, PAD, PAD, PAD, PAD, PAD]);
        assert!(matches!(t.encode(&["a"], 1, false), Err(ForgeError::Config(_))));
    }

    #[test]
    fn text_is_lowercased_code_is_not() {
        let t = Tokenizer::from_vocab(vec![]);
        assert_eq!(t.tokens_for("Malware X", Modality::Text)[0].text, "malware");
        assert_eq!(t.tokens_for("Buf", Modality::Code)[0].text, "Buf");
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("forge-vocab-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let t = build_vocab(&docs(&["x y y z z z"]), 1, 100).unwrap();
        let p = dir.join("vocab.txt");
        t.write_vocab(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "z\ny\nx\n");
        assert_eq!(Tokenizer::read_vocab(&p).unwrap(), t);
        std::fs::remove_dir_all(&dir).ok();
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(picks in prop::collection::vec(0usize..6, 0..30)) {
            let words = ["alpha", "beta", "gamma", "delta", ";", "=="];
            let t = Tokenizer::from_vocab(words.iter().map(|s| s.to_string()).collect());
            let toks: Vec<&str> = picks.iter().map(|&i| words[i]).collect();
            let seq = t.encode(&toks, 64, true).unwrap();
            prop_assert!(seq.ids.iter().all(|&id| (id as usize) < t.vocab_size()));
            prop_assert_eq!(t.decode(&seq.ids), toks.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        }

        #[test]
        fn vocab_is_order_free(texts in prop::collection::vec("[abc ]{0,12}", 0..8)) {
            let mut d = docs(&texts.iter().map(String::as_str).collect::<Vec<_>>());
            let a = build_vocab(&d, 1, 50).unwrap();
            d.reverse();
            prop_assert_eq!(build_vocab(&d, 1, 50).unwrap(), a);
        }

        #[test]
        fn spans_index_normalized_text(text in "[a-z0-9_ =+;(){}<>!&|-]{0,40}") {
            for t in tokenize_spanned(&text) {
                prop_assert_eq!(&text[t.start..t.end], t.text.as_str());
            }
        }
    }
}
