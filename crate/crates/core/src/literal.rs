//! Lenient decoding of structured values embedded in model output.
//!
//! Accepts JSON and the Python literal subset models tend to emit: single-quoted
//! strings, `True`/`False`/`None`, tuples and trailing commas.

use serde_json::{Map, Number, Value};

/// Parses `text` as exactly one value (surrounding whitespace allowed).
pub fn parse_value(text: &str) -> Option<Value> {
    let mut p = Parser::new(text);
    p.skip_ws();
    let v = p.value()?;
    p.skip_ws();
    p.at_end().then_some(v)
}

/// Finds the first `{...}` map in free text that parses, fenced or bare.
pub fn first_map(text: &str) -> Option<Map<String, Value>> {
    first_value_where(text, '{', |v| v.is_object()).and_then(|v| match v {
        Value::Object(m) => Some(m),
        _ => None,
    })
}

/// Finds the first `[...]` list in free text that parses.
pub fn first_list(text: &str) -> Option<Vec<Value>> {
    first_value_where(text, '[', |v| v.is_array()).and_then(|v| match v {
        Value::Array(a) => Some(a),
        _ => None,
    })
}

fn first_value_where(text: &str, open: char, ok: impl Fn(&Value) -> bool) -> Option<Value> {
    for (i, c) in text.char_indices() {
        if c != open {
            continue;
        }
        let mut p = Parser::new(&text[i..]);
        if let Some(v) = p.value() {
            if ok(&v) {
                return Some(v);
            }
        }
        // doubled braces as in `{{'a': 1}}`
        if open == '{' && text[i..].starts_with("{{") {
            let mut p = Parser::new(&text[i + 1..]);
            if let Some(v) = p.value() {
                if ok(&v) {
                    return Some(v);
                }
            }
        }
    }
    None
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn value(&mut self) -> Option<Value> {
        self.skip_ws();
        match self.peek()? {
            '{' => self.map(),
            '[' => self.seq('[', ']'),
            '(' => self.seq('(', ')'),
            '"' | '\'' => self.string().map(Value::String),
            c if c == '-' || c == '+' || c.is_ascii_digit() || c == '.' => self.number(),
            _ => self.word(),
        }
    }

    fn map(&mut self) -> Option<Value> {
        self.bump();
        let mut out = Map::new();
        loop {
            self.skip_ws();
            if self.eat('}') {
                return Some(Value::Object(out));
            }
            let key = match self.peek()? {
                '"' | '\'' => self.string()?,
                _ => match self.value()? {
                    Value::String(s) => s,
                    other => other.to_string(),
                },
            };
            self.skip_ws();
            if !self.eat(':') {
                return None;
            }
            let v = self.value()?;
            out.insert(key, v);
            self.skip_ws();
            if self.eat(',') {
                continue;
            }
            self.skip_ws();
            if self.eat('}') {
                return Some(Value::Object(out));
            }
            return None;
        }
    }

    fn seq(&mut self, open: char, close: char) -> Option<Value> {
        debug_assert_eq!(self.peek(), Some(open));
        self.bump();
        let mut out = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(close) {
                return Some(Value::Array(out));
            }
            out.push(self.value()?);
            self.skip_ws();
            if self.eat(',') {
                continue;
            }
            if self.eat(close) {
                return Some(Value::Array(out));
            }
            return None;
        }
    }

    fn string(&mut self) -> Option<String> {
        let quote = self.bump()?;
        let mut out = String::new();
        loop {
            let c = self.bump()?;
            if c == quote {
                return Some(out);
            }
            if c != '\\' {
                out.push(c);
                continue;
            }
            match self.bump()? {
                'n' => out.push('\n'),
                't' => out.push('\t'),
                'r' => out.push('\r'),
                'b' => out.push('\u{8}'),
                'f' => out.push('\u{c}'),
                '/' => out.push('/'),
                'u' => {
                    let hex: String = (0..4).filter_map(|_| self.bump()).collect();
                    let code = u32::from_str_radix(&hex, 16).ok()?;
                    out.push(char::from_u32(code).unwrap_or('\u{fffd}'));
                }
                other @ ('\\' | '"' | '\'') => out.push(other),
                other => {
                    out.push('\\');
                    out.push(other);
                }
            }
        }
    }

    fn number(&mut self) -> Option<Value> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E') {
                self.bump();
            } else {
                break;
            }
        }
        let text = &self.src[start..self.pos];
        if let Ok(i) = text.parse::<i64>() {
            return Some(Value::from(i));
        }
        let f: f64 = text.parse().ok()?;
        Number::from_f64(f).map(Value::Number)
    }

    fn word(&mut self) -> Option<Value> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                self.bump();
            } else {
                break;
            }
        }
        match &self.src[start..self.pos] {
            "true" | "True" => Some(Value::Bool(true)),
            "false" | "False" => Some(Value::Bool(false)),
            "null" | "None" => Some(Value::Null),
            _ => None,
        }
    }
}
