use super::{Diagnostic, Span};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Number(f64),
    Plus,
    Minus,
    Star,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Eq,
    Lt,
    Gt,
    /// Text after `#`, trimmed. `pragma` is set for `#!` lines.
    Comment { text: String, pragma: bool },
    Newline,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub span: Span,
}

/// Splits source into tokens. Newlines inside parentheses are dropped so long
/// expressions can wrap. Unknown characters become diagnostics and are skipped.
pub(crate) fn lex(src: &str) -> (Vec<Token>, Vec<Diagnostic>) {
    let mut out = Vec::new();
    let mut diags = Vec::new();
    let mut depth = 0usize;
    for (li, line) in src.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let span = Span::new(li + 1, i + 1);
            let single = match c {
                '+' => Some(Tok::Plus),
                '-' => Some(Tok::Minus),
                '*' => Some(Tok::Star),
                '(' => {
                    depth += 1;
                    Some(Tok::LParen)
                }
                ')' => {
                    depth = depth.saturating_sub(1);
                    Some(Tok::RParen)
                }
                '[' => Some(Tok::LBracket),
                ']' => Some(Tok::RBracket),
                ',' => Some(Tok::Comma),
                '=' => Some(Tok::Eq),
                '<' => Some(Tok::Lt),
                '>' => Some(Tok::Gt),
                _ => None,
            };
            if let Some(tok) = single {
                out.push(Token { tok, span });
                i += 1;
                continue;
            }
            if c.is_whitespace() {
                i += 1;
            } else if c == '#' {
                let rest: String = chars[i + 1..].iter().collect();
                let (pragma, text) = match rest.strip_prefix('!') {
                    Some(r) => (true, r.trim().to_string()),
                    None => (false, rest.trim().to_string()),
                };
                out.push(Token { tok: Tok::Comment { text, pragma }, span });
                i = chars.len();
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), span });
            } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        while j < chars.len() && chars[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => out.push(Token { tok: Tok::Number(v), span }),
                    _ => diags.push(Diagnostic::error(span, "syntax", format!("malformed number `{text}`"))),
                }
            } else {
                diags.push(Diagnostic::error(span, "syntax", format!("unexpected character `{c}`")));
                i += 1;
            }
        }
        if depth == 0 {
            out.push(Token { tok: Tok::Newline, span: Span::new(li + 1, chars.len() + 1) });
        }
    }
    if depth > 0 {
        let line = src.lines().count().max(1);
        out.push(Token { tok: Tok::Newline, span: Span::new(line, 1) });
    }
    (out, diags)
}
