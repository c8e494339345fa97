use super::StubError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Name(String),
    Int(i64),
    Float(f64),
    Str(String),
    Op(&'static str),
    Newline,
    Indent,
    Dedent,
    Eof,
}

const OPS: &[&str] = &[
    "**=", "//=", "**", "//", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "->", "+", "-",
    "*", "/", "%", "<", ">", "=", "(", ")", "[", "]", "{", "}", ",", ":", ".", ";",
];

pub fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, StubError> {
    let chars: Vec<char> = src.replace("\r\n", "\n").replace('\t', "    ").chars().collect();
    let mut toks = Vec::new();
    let mut indents = vec![0usize];
    let mut depth = 0usize;
    let mut line = 1usize;
    let mut i = 0usize;
    let mut at_line_start = true;

    while i < chars.len() {
        if at_line_start && depth == 0 {
            let mut width = 0;
            while i < chars.len() && chars[i] == ' ' {
                width += 1;
                i += 1;
            }
            if i >= chars.len() {
                break;
            }
            if chars[i] == '\n' || chars[i] == '#' {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                i += 1;
                line += 1;
                continue;
            }
            let current = *indents.last().expect("indent stack is never empty");
            if width > current {
                indents.push(width);
                toks.push((Tok::Indent, line));
            } else {
                while width < *indents.last().expect("indent stack is never empty") {
                    indents.pop();
                    toks.push((Tok::Dedent, line));
                }
                if width != *indents.last().expect("indent stack is never empty") {
                    return Err(StubError::syntax(line, "inconsistent indentation"));
                }
            }
            at_line_start = false;
        }
        let c = chars[i];
        match c {
            '\n' => {
                if depth == 0 {
                    toks.push((Tok::Newline, line));
                    at_line_start = true;
                }
                line += 1;
                i += 1;
            }
            ' ' => i += 1,
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '\\' if chars.get(i + 1) == Some(&'\n') => {
                i += 2;
                line += 1;
            }
            '"' | '\'' => {
                let (s, next, lines) = lex_string(&chars, i, line)?;
                toks.push((Tok::Str(s), line));
                line += lines;
                i = next;
            }
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                let mut is_float = false;
                while i < chars.len() {
                    let d = chars[i];
                    if d.is_ascii_digit() || d == '_' {
                        i += 1;
                    } else if d == '.' && !is_float {
                        is_float = true;
                        i += 1;
                    } else if (d == 'e' || d == 'E')
                        && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit() || *n == '-' || *n == '+')
                    {
                        is_float = true;
                        i += 2;
                    } else {
                        break;
                    }
                }
                let text: String = chars[start..i].iter().filter(|&&d| d != '_').collect();
                let tok = if is_float {
                    Tok::Float(text.parse().map_err(|_| StubError::syntax(line, "bad float literal"))?)
                } else {
                    Tok::Int(text.parse().map_err(|_| StubError::syntax(line, "integer literal too large"))?)
                };
                toks.push((tok, line));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                // string prefixes such as r"..", f".." are treated as plain strings
                if matches!(word.as_str(), "r" | "f" | "b" | "u")
                    && matches!(chars.get(i), Some('"') | Some('\''))
                {
                    let (s, next, lines) = lex_string(&chars, i, line)?;
                    toks.push((Tok::Str(s), line));
                    line += lines;
                    i = next;
                } else {
                    toks.push((Tok::Name(word), line));
                }
            }
            _ => {
                let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
                let op = OPS
                    .iter()
                    .find(|op| rest.starts_with(**op))
                    .ok_or_else(|| StubError::syntax(line, &format!("unexpected character {c:?}")))?;
                match *op {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => depth = depth.saturating_sub(1),
                    _ => {}
                }
                toks.push((Tok::Op(op), line));
                i += op.len();
            }
        }
    }
    if !matches!(toks.last(), Some((Tok::Newline, _)) | None) {
        toks.push((Tok::Newline, line));
    }
    while indents.len() > 1 {
        indents.pop();
        toks.push((Tok::Dedent, line));
    }
    toks.push((Tok::Eof, line));
    Ok(toks)
}

/// Returns the decoded string, the index after it and the newlines consumed.
fn lex_string(chars: &[char], start: usize, line: usize) -> Result<(String, usize, usize), StubError> {
    let quote = chars[start];
    let triple = chars.get(start + 1) == Some(&quote) && chars.get(start + 2) == Some(&quote);
    let mut i = start + if triple { 3 } else { 1 };
    let mut out = String::new();
    let mut lines = 0;
    loop {
        let Some(&c) = chars.get(i) else {
            return Err(StubError::syntax(line, "unterminated string"));
        };
        if triple {
            if c == quote && chars.get(i + 1) == Some(&quote) && chars.get(i + 2) == Some(&quote) {
                return Ok((out, i + 3, lines));
            }
        } else if c == quote {
            return Ok((out, i + 1, lines));
        } else if c == '\n' {
            return Err(StubError::syntax(line, "newline in string literal"));
        }
        if c == '\\' {
            let esc = chars
                .get(i + 1)
                .copied()
                .ok_or_else(|| StubError::syntax(line, "dangling escape"))?;
            match esc {
                'n' => out.push('\n'),
                't' => out.push('\t'),
                'r' => out.push('\r'),
                '0' => out.push('\0'),
                '\\' => out.push('\\'),
                '\'' => out.push('\''),
                '"' => out.push('"'),
                '\n' => lines += 1,
                other => {
                    out.push('\\');
                    out.push(other);
                }
            }
            i += 2;
            continue;
        }
        if c == '\n' {
            lines += 1;
        }
        out.push(c);
        i += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|(t, _)| t).collect()
    }

    #[test]
    fn indentation_tokens() {
        let toks = kinds("def f(a):\n    return a\n");
        assert!(toks.contains(&Tok::Indent));
        assert!(toks.contains(&Tok::Dedent));
        assert_eq!(toks.last(), Some(&Tok::Eof));
    }

    #[test]
    fn brackets_join_lines() {
        let toks = kinds("x = [1,\n  2]\n");
        assert_eq!(toks.iter().filter(|t| **t == Tok::Newline).count(), 1);
        assert!(!toks.contains(&Tok::Indent));
    }

    #[test]
    fn literals() {
        assert_eq!(
            kinds("'a\\nb' \"c\" 12 1.5 1e3"),
            vec![
                Tok::Str("a\nb".into()),
                Tok::Str("c".into()),
                Tok::Int(12),
                Tok::Float(1.5),
                Tok::Float(1000.0),
                Tok::Newline,
                Tok::Eof
            ]
        );
        assert_eq!(kinds("\"\"\"doc\nstring\"\"\"")[0], Tok::Str("doc\nstring".into()));
    }

    #[test]
    fn bad_indentation() {
        assert!(tokenize("if x:\n    a\n  b\n").is_err());
    }
}
