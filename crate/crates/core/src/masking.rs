//! Masked-language-model corruption for pretraining and targeted evaluation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::Modality;
use crate::error::{ForgeError, Result};
use crate::ingest::{is_structural, SpannedToken, TokenSequence, Tokenizer, CLS, MASK, NUM_SPECIALS, SEP};
use crate::lexer::{align, lex_code, LexClass, Lexed};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingConfig {
    pub mlm_prob: f64,
    pub mask_frac: f64,
    pub random_frac: f64,
    pub keep_frac: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self { mlm_prob: 0.10, mask_frac: 0.8, random_frac: 0.1, keep_frac: 0.1 }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mlm_prob > 0.0 && self.mlm_prob <= 1.0) {
            return Err(ForgeError::Config(format!("mlm_prob must lie in (0, 1], got {}", self.mlm_prob)));
        }
        let fr = [self.mask_frac, self.random_frac, self.keep_frac];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(ForgeError::Config(format!("replacement fractions must be in [0, 1] and sum to 1, got {fr:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedExample {
    pub input: Vec<u32>,
    /// Gold id at masked positions, `None` elsewhere.
    pub labels: Vec<Option<u32>>,
    /// Sorted masked positions.
    pub masked: Vec<usize>,
}

impl MaskedExample {
    fn unmasked(ids: &[u32]) -> Self {
        Self { input: ids.to_vec(), labels: vec![None; ids.len()], masked: Vec::new() }
    }

    /// Each label is set exactly at the masked positions.
    pub fn is_consistent(&self) -> bool {
        self.input.len() == self.labels.len()
            && self.masked.windows(2).all(|w| w[0] < w[1])
            && self.labels.iter().enumerate().all(|(i, l)| l.is_some() == self.masked.binary_search(&i).is_ok())
    }
}

enum Replacement {
    Mask,
    Random,
    Keep,
}

fn draw_replacement(cfg: &MaskingConfig, rng: &mut Rng) -> Replacement {
    let u = rng.random::<f64>();
    if u < cfg.mask_frac {
        Replacement::Mask
    } else if u < cfg.mask_frac + cfg.random_frac {
        Replacement::Random
    } else {
        Replacement::Keep
    }
}

fn check_vocab(vocab_size: usize) -> Result<()> {
    if vocab_size <= NUM_SPECIALS {
        return Err(ForgeError::Masking("vocabulary has no ordinary tokens to sample replacements from".into()));
    }
    Ok(())
}

fn random_token(vocab_size: usize, rng: &mut Rng) -> u32 {
    rng.random_range(NUM_SPECIALS as u32..vocab_size as u32)
}

/// Applies one replacement decision to a group of positions masked together.
fn corrupt_unit(ex: &mut MaskedExample, positions: &[usize], cfg: &MaskingConfig, vocab_size: usize, rng: &mut Rng) {
    let rep = draw_replacement(cfg, rng);
    for &p in positions {
        ex.labels[p] = Some(ex.input[p]);
        match rep {
            Replacement::Mask => ex.input[p] = MASK,
            Replacement::Random => ex.input[p] = random_token(vocab_size, rng),
            Replacement::Keep => {}
        }
        ex.masked.push(p);
    }
}

/// Independently selects each content position with probability `mlm_prob`.
pub fn mask_dynamic(seq: &TokenSequence, cfg: &MaskingConfig, vocab_size: usize, rng: &mut Rng) -> Result<MaskedExample> {
    cfg.validate()?;
    check_vocab(vocab_size)?;
    let positions: Vec<usize> = seq.content_positions().collect();
    if positions.is_empty() {
        return Err(ForgeError::Masking("sequence has no maskable positions".into()));
    }
    let mut ex = MaskedExample::unmasked(&seq.ids);
    for p in positions {
        if rng.random::<f64>() < cfg.mlm_prob {
            corrupt_unit(&mut ex, &[p], cfg, vocab_size, rng);
        }
    }
    Ok(ex)
}

/// Groups encoder positions by the maskable lex token they belong to.
///
/// Sequence position `p` holds encoder token `p - 1` (position 0 is CLS).
fn maskable_units(seq: &TokenSequence, lexed: &Lexed, alignment: &[usize]) -> Vec<Vec<usize>> {
    let mut units: Vec<(usize, Vec<usize>)> = Vec::new();
    for p in seq.content_positions() {
        let Some(&lex) = alignment.get(p - 1) else { continue };
        if !lexed.tokens[lex].class.is_maskable() {
            continue;
        }
        match units.last_mut() {
            Some((l, ps)) if *l == lex => ps.push(p),
            _ => units.push((lex, vec![p])),
        }
    }
    units.into_iter().map(|(_, ps)| ps).collect()
}

/// Whole-identifier masking: the selection unit is a maskable lex token and
/// all of its encoder positions share one replacement decision.
pub fn mask_code(
    seq: &TokenSequence,
    lexed: &Lexed,
    alignment: &[usize],
    cfg: &MaskingConfig,
    vocab_size: usize,
    rng: &mut Rng,
) -> Result<MaskedExample> {
    cfg.validate()?;
    check_vocab(vocab_size)?;
    let units = maskable_units(seq, lexed, alignment);
    if units.is_empty() {
        return Err(ForgeError::Masking("snippet has no identifier, function name or operator to mask".into()));
    }
    let mut ex = MaskedExample::unmasked(&seq.ids);
    for unit in &units {
        if rng.random::<f64>() < cfg.mlm_prob {
            corrupt_unit(&mut ex, unit, cfg, vocab_size, rng);
        }
    }
    ex.masked.sort_unstable();
    Ok(ex)
}

/// Encodes a normalized document and masks it with the modality's policy.
pub fn mask_document(
    content: &str,
    modality: Modality,
    tokenizer: &Tokenizer,
    max_len: usize,
    cfg: &MaskingConfig,
    rng: &mut Rng,
) -> Result<MaskedExample> {
    let toks = tokenizer.tokens_for(content, modality);
    let texts: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
    let seq = tokenizer.encode(&texts, max_len, false)?;
    match modality {
        Modality::Text => mask_dynamic(&seq, cfg, tokenizer.vocab_size(), rng),
        Modality::Code => {
            let lexed = lex_code(content);
            let alignment = align(&lexed, &toks)?;
            mask_code(&seq, &lexed, &alignment, cfg, tokenizer.vocab_size(), rng)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCategory {
    Noun,
    Verb,
    Identifier,
    FunctionName,
    Operator,
}

impl EvalCategory {
    pub fn modality(self) -> Modality {
        match self {
            EvalCategory::Noun | EvalCategory::Verb => Modality::Text,
            _ => Modality::Code,
        }
    }

    pub fn from_lex(class: LexClass) -> Option<Self> {
        match class {
            LexClass::Identifier => Some(EvalCategory::Identifier),
            LexClass::FunctionName => Some(EvalCategory::FunctionName),
            LexClass::Operator => Some(EvalCategory::Operator),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub content: String,
    pub modality: Modality,
    pub target_start: usize,
    pub target_end: usize,
    pub category: EvalCategory,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

impl EvalRecord {
    pub fn validate(&self) -> Result<()> {
        if self.category.modality() != self.modality {
            return Err(ForgeError::ProtocolViolation(format!(
                "category {:?} is not valid for {:?} content",
                self.category, self.modality
            )));
        }
        let span = self
            .content
            .get(self.target_start..self.target_end)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| ForgeError::Alignment(format!("target {}..{} is not a span of the content", self.target_start, self.target_end)))?;
        if span != self.gold {
            return Err(ForgeError::Alignment(format!("target span `{span}` differs from gold `{}`", self.gold)));
        }
        Ok(())
    }
}

/// Token index range `[first, last)` exactly covering the target span.
fn target_tokens(toks: &[SpannedToken], start: usize, end: usize) -> Result<(usize, usize)> {
    let first = toks.iter().position(|t| t.start == start);
    let last = toks.iter().position(|t| t.end == end);
    match (first, last) {
        (Some(f), Some(l)) if f <= l => Ok((f, l + 1)),
        _ => Err(ForgeError::Alignment(format!("target {start}..{end} does not fall on token boundaries"))),
    }
}

/// Masks exactly the record's target and nothing else.
///
/// Long inputs are windowed so the target stays inside `max_len`.
pub fn make_eval_example(record: &EvalRecord, tokenizer: &Tokenizer, max_len: usize) -> Result<MaskedExample> {
    record.validate()?;
    let toks = tokenizer.tokens_for(&record.content, record.modality);
    let (first, last) = target_tokens(&toks, record.target_start, record.target_end)?;
    if record.modality == Modality::Code {
        let lexed = lex_code(&record.content);
        let alignment = align(&lexed, &toks)?;
        let lex_ids: Vec<usize> = alignment[first..last].to_vec();
        if lex_ids.iter().any(|&l| l != lex_ids[0]) {
            return Err(ForgeError::ProtocolViolation("code target spans several lex tokens".into()));
        }
        let lt = &lexed.tokens[lex_ids[0]];
        if lt.start != record.target_start || lt.end != record.target_end {
            return Err(ForgeError::Alignment(format!("code target is only part of lex token `{}`", lt.lexeme)));
        }
        match EvalCategory::from_lex(lt.class) {
            Some(c) if c == record.category => {}
            Some(c) => {
                return Err(ForgeError::ProtocolViolation(format!(
                    "target `{}` lexes as {c:?}, record says {:?}",
                    lt.lexeme, record.category
                )))
            }
            None => {
                return Err(ForgeError::ProtocolViolation(format!(
                    "target `{}` is a preserved {:?} token",
                    lt.lexeme, lt.class
                )))
            }
        }
    }
    if max_len < 2 + (last - first) {
        return Err(ForgeError::Config(format!("max_len {max_len} cannot hold the target")));
    }
    let room = max_len - 2;
    let lo = if toks.len() <= room {
        0
    } else {
        let slack = room - (last - first);
        first.saturating_sub(slack / 2).min(toks.len() - room)
    };
    let hi = (lo + room).min(toks.len());
    let mut ids = Vec::with_capacity(hi - lo + 2);
    ids.push(CLS);
    ids.extend(toks[lo..hi].iter().map(|t| tokenizer.lookup(&t.text)));
    ids.push(SEP);
    let mut ex = MaskedExample::unmasked(&ids);
    for p in (first - lo + 1)..(last - lo + 1) {
        debug_assert!(!is_structural(ids[p]));
        ex.labels[p] = Some(ids[p]);
        ex.input[p] = MASK;
        ex.masked.push(p);
    }
    Ok(ex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{tokenize_code, SEP};
    use crate::seed::rng_from;
    use proptest::prelude::*;

    fn seq(n: usize) -> TokenSequence {
        let mut ids = vec![CLS];
        ids.extend((0..n).map(|i| NUM_SPECIALS as u32 + (i % 50) as u32));
        ids.push(SEP);
        TokenSequence { ids }
    }

    fn all_mask() -> MaskingConfig {
        MaskingConfig { mlm_prob: 1.0, mask_frac: 1.0, random_frac: 0.0, keep_frac: 0.0 }
    }

    #[test]
    fn config_validation() {
        assert!(MaskingConfig::default().validate().is_ok());
        assert!(MaskingConfig { mlm_prob: 0.0, ..Default::default() }.validate().is_err());
        assert!(MaskingConfig { keep_frac: 0.2, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn full_probability_masks_every_content_position() {
        let s = seq(7);
        let ex = mask_dynamic(&s, &all_mask(), 100, &mut rng_from(0)).unwrap();
        assert_eq!(ex.masked, (1..=7).collect::<Vec<_>>());
        assert!(ex.input[1..8].iter().all(|&i| i == MASK));
        assert_eq!(ex.input[0], CLS);
        assert_eq!(ex.input[8], SEP);
        assert!(ex.is_consistent());
    }

    #[test]
    fn masking_is_deterministic_and_dynamic() {
        let s = seq(200);
        let cfg = MaskingConfig::default();
        let a = mask_dynamic(&s, &cfg, 100, &mut rng_from(5)).unwrap();
        assert_eq!(a, mask_dynamic(&s, &cfg, 100, &mut rng_from(5)).unwrap());
        let mut rng = rng_from(5);
        let first = mask_dynamic(&s, &cfg, 100, &mut rng).unwrap();
        let second = mask_dynamic(&s, &cfg, 100, &mut rng).unwrap();
        assert_ne!(first.masked, second.masked);
    }

    #[test]
    fn selected_fraction_concentrates() {
        // Binomial(10000, 0.1) has sd 30; [800, 1200] is over 6 sd wide.
        let s = seq(10_000);
        let cfg = MaskingConfig::default();
        let seeds = 100;
        let inside = (0..seeds)
            .filter(|&sd| {
                let ex = mask_dynamic(&s, &cfg, 100, &mut rng_from(sd)).unwrap();
                let f = ex.masked.len() as f64 / 10_000.0;
                (0.08..=0.12).contains(&f)
            })
            .count();
        assert!(inside >= 99);
    }

    #[test]
    fn empty_content_is_a_masking_error() {
        let s = TokenSequence { ids: vec![CLS, SEP] };
        assert!(matches!(mask_dynamic(&s, &MaskingConfig::default(), 100, &mut rng_from(0)), Err(ForgeError::Masking(_))));
    }

    fn code_parts(src: &str) -> (Tokenizer, TokenSequence, Lexed, Vec<usize>) {
        let toks = tokenize_code(src);
        let tk = Tokenizer::from_vocab(toks.iter().map(|t| t.text.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect());
        let texts: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        let s = tk.encode(&texts, 4096, false).unwrap();
        let lexed = lex_code(src);
        let al = align(&lexed, &toks).unwrap();
        (tk, s, lexed, al)
    }

    #[test]
    fn single_identifier_limit() {
        let (tk, s, lexed, al) = code_parts("return value;");
        let ex = mask_code(&s, &lexed, &al, &all_mask(), tk.vocab_size(), &mut rng_from(0)).unwrap();
        assert_eq!(ex.masked, vec![2]);
        assert_eq!(tk.id_token(ex.labels[2].unwrap()), Some("value"));
        assert_eq!(ex.input[1], tk.lookup("return"));
        assert_eq!(ex.input[3], tk.lookup(";"));
    }

    #[test]
    fn structural_only_snippet_errors() {
        let (tk, s, lexed, al) = code_parts("return ; { }");
        assert!(matches!(
            mask_code(&s, &lexed, &al, &all_mask(), tk.vocab_size(), &mut rng_from(0)),
            Err(ForgeError::Masking(_))
        ));
    }

    #[test]
    fn code_unit_fraction_concentrates() {
        // 1000 identifiers separated by semicolons; sd of the fraction is about 0.0095.
        let src: String = (0..1000).map(|i| format!("v{i}")).collect::<Vec<_>>().join(" ; ");
        let (tk, s, lexed, al) = code_parts(&src);
        let mut ok = 0;
        for sd in 0..50 {
            let ex = mask_code(&s, &lexed, &al, &MaskingConfig::default(), tk.vocab_size(), &mut rng_from(sd)).unwrap();
            let f = ex.masked.len() as f64 / 1000.0;
            ok += usize::from((0.07..=0.13).contains(&f));
        }
        assert_eq!(ok, 50);
    }

    fn record(content: &str, target: &str, category: EvalCategory) -> EvalRecord {
        let start = content.find(target).unwrap();
        EvalRecord {
            content: content.into(),
            modality: category.modality(),
            target_start: start,
            target_end: start + target.len(),
            category,
            gold: target.into(),
            source_id: None,
        }
    }

    #[test]
    fn text_eval_example() {
        let tk = Tokenizer::from_vocab(vec!["attackers".into(), "encrypt".into(), "files".into()]);
        let r = record("Attackers encrypt files", "encrypt", EvalCategory::Verb);
        let ex = make_eval_example(&r, &tk, 64).unwrap();
        assert_eq!(ex.masked, vec![2]);
        assert_eq!(ex.labels[2], tk.token_id("encrypt"));
        assert_eq!(ex.input, vec![CLS, tk.lookup("attackers"), MASK, tk.lookup("files"), SEP]);
    }

    #[test]
    fn code_eval_examples() {
        let tk = Tokenizer::from_vocab(vec!["strcpy".into(), "dst".into(), "src".into()]);
        let r = record("strcpy(dst, src);", "strcpy", EvalCategory::FunctionName);
        let ex = make_eval_example(&r, &tk, 64).unwrap();
        assert_eq!(ex.masked, vec![1]);
        assert_eq!(ex.labels[1], tk.token_id("strcpy"));

        let semi = record("strcpy(dst, src);", ";", EvalCategory::Operator);
        assert!(matches!(make_eval_example(&semi, &tk, 64), Err(ForgeError::ProtocolViolation(_))));
        let kw = record("return dst;", "return", EvalCategory::Identifier);
        assert!(matches!(make_eval_example(&kw, &tk, 64), Err(ForgeError::ProtocolViolation(_))));
        let noun_in_code = EvalRecord { modality: Modality::Code, ..record("strcpy(dst, src);", "dst", EvalCategory::Noun) };
        assert!(matches!(make_eval_example(&noun_in_code, &tk, 64), Err(ForgeError::ProtocolViolation(_))));
    }

    #[test]
    fn misaligned_target_errors() {
        let tk = Tokenizer::from_vocab(vec![]);
        let mut r = record("ransomware spreads", "ransomware", EvalCategory::Noun);
        r.target_end = 4;
        r.gold = "rans".into();
        assert!(matches!(make_eval_example(&r, &tk, 64), Err(ForgeError::Alignment(_))));
    }

    #[test]
    fn long_input_is_windowed_around_target() {
        let words: Vec<String> = (0..100).map(|i| format!("w{i}")).collect();
        let content = words.join(" ");
        let tk = Tokenizer::from_vocab(words.clone());
        let r = record(&content, "w90", EvalCategory::Noun);
        let ex = make_eval_example(&r, &tk, 16).unwrap();
        assert_eq!(ex.input.len(), 16);
        assert_eq!(ex.masked.len(), 1);
        assert_eq!(ex.labels[ex.masked[0]], tk.token_id("w90"));
    }

    proptest! {
        #[test]
        fn code_masking_spares_preserved_classes(src in "[a-z ;(){}+*=,0-9]{1,80}", sd in 0u64..1000) {
            let (tk, s, lexed, al) = code_parts(&src);
            let cfg = MaskingConfig { mlm_prob: 0.5, ..Default::default() };
            if let Ok(ex) = mask_code(&s, &lexed, &al, &cfg, tk.vocab_size(), &mut rng_from(sd)) {
                prop_assert!(ex.is_consistent());
                for &p in &ex.masked {
                    prop_assert!(lexed.tokens[al[p - 1]].class.is_maskable());
                }
                // Whole units: every position of a selected lex token is masked.
                for &p in &ex.masked {
                    let lex = al[p - 1];
                    for (q, &l) in al.iter().enumerate() {
                        if l == lex { prop_assert!(ex.masked.contains(&(q + 1))); }
                    }
                }
            }
        }

        #[test]
        fn eval_example_touches_only_target(n in 2usize..30, pick in 0usize..30) {
            let words: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let content = words.join(" ");
            let tk = Tokenizer::from_vocab(words.clone());
            let target = &words[pick % n];
            let start = content.split(' ').take(pick % n).map(|w| w.len() + 1).sum::<usize>();
            let r = EvalRecord { content: content.clone(), modality: Modality::Text, target_start: start,
                target_end: start + target.len(), category: EvalCategory::Noun, gold: target.clone(), source_id: None };
            let ex = make_eval_example(&r, &tk, 64).unwrap();
            let orig = tk.encode(&words, 64, false).unwrap();
            prop_assert!(ex.is_consistent());
            prop_assert_eq!(ex.masked.len(), 1);
            for (i, (&a, &b)) in ex.input.iter().zip(&orig.ids).enumerate() {
                if i != ex.masked[0] { prop_assert_eq!(a, b); }
            }
        }
    }
}
