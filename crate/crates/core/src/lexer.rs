//! Lossless lexer for C-family source.
//!
//! Every byte of the input lands in exactly one token, so concatenating the
//! lexemes reproduces the source. Malformed input never aborts lexing; it is
//! recorded in [`Lexed::errors`].

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::ingest::SpannedToken;

/// Operators, longest first so maximal munch is a linear scan.
pub const OPERATORS: &[&str] = &[
    "<<=", ">>=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/=",
    "%=", "&=", "|=", "^=", "::", "+", "-", "*", "/", "%", "=", "<", ">", "!", "&", "|", "^", "~", "?", ":", ".",
];

pub const KEYWORDS: &[&str] = &[
    "auto", "bool", "break", "case", "catch", "char", "class", "const", "continue", "default", "delete", "do",
    "double", "else", "enum", "extern", "false", "float", "for", "friend", "goto", "if", "inline", "int", "long",
    "namespace", "new", "nullptr", "operator", "private", "protected", "public", "register", "restrict", "return",
    "short", "signed", "sizeof", "static", "struct", "switch", "template", "this", "throw", "true", "try", "typedef",
    "typename", "union", "unsigned", "using", "virtual", "void", "volatile", "while", "_Bool",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexClass {
    Keyword,
    Identifier,
    FunctionName,
    Operator,
    Delimiter,
    Literal,
    Comment,
    Whitespace,
}

impl LexClass {
    /// Identifiers, function names and operators may be masked; everything
    /// else is structure that masking must leave intact.
    pub fn is_maskable(self) -> bool {
        matches!(self, LexClass::Identifier | LexClass::FunctionName | LexClass::Operator)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexToken {
    pub lexeme: String,
    pub class: LexClass,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexErrorKind {
    UnterminatedString,
    UnterminatedChar,
    UnterminatedComment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexError {
    pub kind: LexErrorKind,
    pub start: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexed {
    pub tokens: Vec<LexToken>,
    pub errors: Vec<LexError>,
}

impl Lexed {
    pub fn has_errors(&self) -> bool {
        !self.errors.is_empty()
    }

    /// Index of the token containing byte offset `pos`.
    pub fn token_at(&self, pos: usize) -> Option<usize> {
        let i = self.tokens.partition_point(|t| t.end <= pos);
        (i < self.tokens.len() && self.tokens[i].start <= pos).then_some(i)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, byte_offset: usize) -> Option<char> {
        self.src.get(self.pos + byte_offset..).and_then(|s| s.chars().next())
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn eat_while(&mut self, f: impl Fn(char) -> bool) {
        while let Some(c) = self.peek() {
            if !f(c) {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }
}

pub fn lex_code(source: &str) -> Lexed {
    let mut cur = Cursor { src: source, pos: 0 };
    let mut out = Lexed::default();
    while let Some(c) = cur.peek() {
        let start = cur.pos;
        let class = if c.is_whitespace() {
            cur.eat_while(char::is_whitespace);
            LexClass::Whitespace
        } else if cur.rest().starts_with("//") {
            cur.eat_while(|c| c != '\n');
            LexClass::Comment
        } else if cur.rest().starts_with("/*") {
            match cur.rest()[2..].find("*/") {
                Some(i) => cur.pos += 2 + i + 2,
                None => {
                    cur.pos = source.len();
                    out.errors.push(LexError { kind: LexErrorKind::UnterminatedComment, start });
                }
            }
            LexClass::Comment
        } else if c == '"' || c == '\'' {
            cur.bump();
            let mut closed = false;
            while let Some(n) = cur.bump() {
                if n == '\\' {
                    cur.bump();
                } else if n == c {
                    closed = true;
                    break;
                }
            }
            if !closed {
                let kind = if c == '"' { LexErrorKind::UnterminatedString } else { LexErrorKind::UnterminatedChar };
                out.errors.push(LexError { kind, start });
            }
            LexClass::Literal
        } else if c.is_ascii_digit() || (c == '.' && cur.peek_at(1).is_some_and(|d| d.is_ascii_digit())) {
            lex_number(&mut cur);
            LexClass::Literal
        } else if is_word_char(c) {
            cur.eat_while(is_word_char);
            if KEYWORDS.contains(&&source[start..cur.pos]) {
                LexClass::Keyword
            } else if source[cur.pos..].trim_start().starts_with('(') {
                LexClass::FunctionName
            } else {
                LexClass::Identifier
            }
        } else if let Some(op) = OPERATORS.iter().find(|op| cur.rest().starts_with(*op)) {
            cur.pos += op.len();
            LexClass::Operator
        } else {
            // Delimiters and any stray character are structural.
            cur.bump();
            LexClass::Delimiter
        };
        out.tokens.push(LexToken { lexeme: source[start..cur.pos].to_string(), class, start, end: cur.pos });
    }
    out
}

fn lex_number(cur: &mut Cursor<'_>) {
    let mut prev = '\0';
    while let Some(c) = cur.peek() {
        let exponent_sign = (c == '+' || c == '-') && matches!(prev, 'e' | 'E' | 'p' | 'P');
        if !(is_word_char(c) || c == '.' || exponent_sign) {
            break;
        }
        prev = c;
        cur.bump();
    }
}

/// Maps each encoder token to the lex token containing it.
///
/// Fails if an encoder token straddles a lex-token boundary, which would make
/// whole-identifier masking ill-defined.
pub fn align(lexed: &Lexed, tokens: &[SpannedToken]) -> Result<Vec<usize>> {
    tokens
        .iter()
        .map(|t| {
            let i = lexed
                .token_at(t.start)
                .ok_or_else(|| ForgeError::Alignment(format!("token `{}` at {} is outside the source", t.text, t.start)))?;
            if lexed.tokens[i].end < t.end {
                return Err(ForgeError::Alignment(format!(
                    "token `{}` at {}..{} crosses lex token `{}`",
                    t.text, t.start, t.end, lexed.tokens[i].lexeme
                )));
            }
            Ok(i)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{tokenize_code, tokenize_spanned};
    use proptest::prelude::*;
    use LexClass::*;

    fn classes(src: &str) -> Vec<(LexClass, String)> {
        lex_code(src).tokens.into_iter().map(|t| (t.class, t.lexeme)).collect()
    }

    fn expect(pairs: &[(LexClass, &str)]) -> Vec<(LexClass, String)> {
        pairs.iter().map(|(c, s)| (*c, s.to_string())).collect()
    }

    #[test]
    fn declaration_example() {
        assert_eq!(
            classes("int x = a + b;"),
            expect(&[
                (Keyword, "int"),
                (Whitespace, " "),
                (Identifier, "x"),
                (Whitespace, " "),
                (Operator, "="),
                (Whitespace, " "),
                (Identifier, "a"),
                (Whitespace, " "),
                (Operator, "+"),
                (Whitespace, " "),
                (Identifier, "b"),
                (Delimiter, ";"),
            ])
        );
    }

    #[test]
    fn call_example() {
        assert_eq!(
            classes("foo(bar)"),
            expect(&[(FunctionName, "foo"), (Delimiter, "("), (Identifier, "bar"), (Delimiter, ")")])
        );
        assert_eq!(classes("strcpy  (d, s)")[0], (FunctionName, "strcpy".to_string()));
        assert_eq!(classes("if (x)")[0], (Keyword, "if".to_string()));
        assert!(classes("").is_empty());
    }

    #[test]
    fn literals_and_comments() {
        assert_eq!(
            classes(r#"s = "a\"b"; // tail"#),
            expect(&[
                (Identifier, "s"),
                (Whitespace, " "),
                (Operator, "="),
                (Whitespace, " "),
                (Literal, r#""a\"b""#),
                (Delimiter, ";"),
                (Whitespace, " "),
                (Comment, "// tail"),
            ])
        );
        assert_eq!(classes("x=1.5e-3;")[2], (Literal, "1.5e-3".to_string()));
        assert_eq!(classes("p->q")[1], (Operator, "->".to_string()));
        assert_eq!(classes("c='\\n'")[2], (Literal, "'\\n'".to_string()));
    }

    #[test]
    fn unterminated_tokens_run_to_end_and_flag() {
        let l = lex_code("x = \"open");
        assert_eq!(l.tokens.last().unwrap().class, Literal);
        assert_eq!(l.errors[0].kind, LexErrorKind::UnterminatedString);

        let l = lex_code("a /* never closed");
        assert_eq!(l.tokens.last().unwrap().lexeme, "/* never closed");
        assert_eq!(l.errors[0].kind, LexErrorKind::UnterminatedComment);
    }

    #[test]
    fn encoder_tokens_align_inside_lex_tokens() {
        let src = "n = strlen(\"a b\") + 3.14;";
        let lexed = lex_code(src);
        let toks = tokenize_code(src);
        assert_eq!(toks, tokenize_spanned(src));
        let al = align(&lexed, &toks).unwrap();
        let classes: Vec<LexClass> = al.iter().map(|&i| lexed.tokens[i].class).collect();
        assert_eq!(classes[2], FunctionName);
        assert!(classes[4..8].iter().all(|c| *c == Literal));
    }

    proptest! {
        #[test]
        fn lossless_and_ordered(src in "[ -~\n\t]{0,80}") {
            let lexed = lex_code(&src);
            let joined: String = lexed.tokens.iter().map(|t| t.lexeme.as_str()).collect();
            prop_assert_eq!(joined.as_bytes(), src.as_bytes());
            let mut pos = 0;
            for t in &lexed.tokens {
                prop_assert_eq!(t.start, pos);
                prop_assert!(t.end > t.start);
                pos = t.end;
            }
            prop_assert_eq!(lex_code(&src), lexed);
        }

        #[test]
        fn alignment_always_succeeds(src in "[a-z0-9_ ;(){}=+*<>!&|\"'./-]{0,60}") {
            let lexed = lex_code(&src);
            prop_assert!(align(&lexed, &tokenize_code(&src)).is_ok());
        }
    }
}
