//! Line-oriented parser for planner output.
//!
//! Grammar, one task per line:
//!
//! ```text
//! line   := INT "." IDENT "(" [arg ("," arg)* [","]] ")" ["<END_OF_PLAN>"]
//! arg    := IDENT "=" value | "$" INT            (positional refs: join only)
//! value  := STRING | NUMBER | "[" [value ("," value)* [","]] "]" | "$" INT
//! ```
//!
//! Whitespace is free around every token. Strings are double-quoted with `\"`, `\\`,
//! `\n`, `\t`, `\r` and `\$` escapes; an unescaped `$N` inside a string makes it a
//! [`ArgValue::Mixed`] template.

use indexmap::IndexMap;

use super::ast::{
    extract_refs, ArgValue, Literal, PlanDraft, TaskId, TaskSpec, Template, TemplatePart, JOIN_TOOL,
};
use super::SyntaxError;

pub const END_MARKER: &str = "<END_OF_PLAN>";

pub fn parse_plan(text: &str) -> Result<PlanDraft, SyntaxError> {
    if text.trim().is_empty() {
        return Err(SyntaxError::new(0, "", "empty plan text"));
    }
    let mut tasks = Vec::new();
    let mut end_marker_seen = false;
    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw).trim();
        if line.is_empty() {
            continue;
        }
        if line == END_MARKER {
            end_marker_seen = true;
            continue;
        }
        let mut cur = Cursor::new(line, line_no);
        let task = cur.task()?;
        cur.skip_ws();
        if cur.rest().starts_with(END_MARKER) {
            end_marker_seen = true;
            cur.pos += END_MARKER.len();
            cur.skip_ws();
        }
        if !cur.at_end() {
            return Err(cur.error(format!("unexpected trailing text {:?}", cur.rest())));
        }
        tasks.push(task);
    }
    Ok(PlanDraft {
        tasks,
        end_marker_seen,
        raw_text: text.to_string(),
    })
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str, line: usize) -> Self {
        Self { src, pos: 0, line }
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
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    fn error(&self, reason: impl Into<String>) -> SyntaxError {
        SyntaxError::new(self.line, self.src, reason)
    }

    fn expect(&mut self, want: char) -> Result<(), SyntaxError> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == want => {
                self.bump();
                Ok(())
            }
            Some(c) => Err(self.error(format!("expected '{want}', found '{c}'"))),
            None => Err(self.error(format!("expected '{want}', found end of line"))),
        }
    }

    fn digits(&mut self) -> &'a str {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.bump();
        }
        &self.src[start..self.pos]
    }

    fn task_id(&mut self) -> Result<TaskId, SyntaxError> {
        let digits = self.digits();
        if digits.is_empty() {
            return Err(self.error("expected a task id"));
        }
        match digits.parse::<u32>() {
            Ok(0) => Err(self.error("task ids start at 1")),
            Ok(v) => Ok(TaskId(v)),
            Err(_) => Err(self.error(format!("task id {digits} out of range"))),
        }
    }

    fn ident(&mut self) -> Result<&'a str, SyntaxError> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                self.bump();
            }
            _ => return Err(self.error("expected an identifier")),
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            self.bump();
        }
        Ok(&self.src[start..self.pos])
    }

    fn task(&mut self) -> Result<TaskSpec, SyntaxError> {
        self.skip_ws();
        if !matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            return Err(self.error("expected a task line of the form `N. tool(arg=value)`"));
        }
        let id = self.task_id()?;
        self.expect('.')?;
        let tool = self.ident()?.to_string();
        let is_join = tool == JOIN_TOOL;
        self.expect('(')?;

        let mut args: IndexMap<String, ArgValue> = IndexMap::new();
        let mut positional = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some(')') => {
                    self.bump();
                    break;
                }
                None => return Err(self.error("unterminated argument list")),
                _ => {}
            }
            if self.peek() == Some('$') {
                if !is_join {
                    return Err(self.error(format!(
                        "positional argument in call to {tool}; expected name=value"
                    )));
                }
                self.bump();
                positional.push(self.task_id()?);
            } else {
                let name = self.ident()?.to_string();
                self.expect('=')?;
                let value = self.value()?;
                if args.contains_key(&name) {
                    return Err(self.error(format!("duplicate argument name '{name}'")));
                }
                args.insert(name, value);
            }
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some(')') => break,
                Some(c) => return Err(self.error(format!("expected ',' or ')', found '{c}'"))),
                None => return Err(self.error("unterminated argument list")),
            }
        }

        let mut deps: std::collections::BTreeSet<TaskId> =
            args.values().flat_map(extract_refs).collect();
        deps.extend(positional);
        Ok(TaskSpec {
            id,
            tool,
            args,
            deps,
            is_join,
        })
    }

    fn value(&mut self) -> Result<ArgValue, SyntaxError> {
        self.skip_ws();
        match self.peek() {
            Some('"') => self.string(),
            Some('$') => {
                self.bump();
                Ok(ArgValue::Ref(self.task_id()?))
            }
            Some('[') => self.list(),
            Some(c) if c == '-' || c.is_ascii_digit() => self.number(),
            Some(c) => Err(self.error(format!(
                "unexpected '{c}' in value; expected a quoted string, number, list or $id"
            ))),
            None => Err(self.error("missing value")),
        }
    }

    fn list(&mut self) -> Result<ArgValue, SyntaxError> {
        self.expect('[')?;
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(']') {
                self.bump();
                break;
            }
            items.push(self.value()?);
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some(']') => break,
                Some(c) => return Err(self.error(format!("expected ',' or ']', found '{c}'"))),
                None => return Err(self.error("unterminated list")),
            }
        }
        if items.iter().all(ArgValue::is_constant) {
            let lits = items
                .into_iter()
                .map(|v| match v {
                    ArgValue::Constant(l) => l,
                    _ => unreachable!("checked constant"),
                })
                .collect();
            Ok(ArgValue::Constant(Literal::List(lits)))
        } else {
            Ok(ArgValue::List(items))
        }
    }

    fn number(&mut self) -> Result<ArgValue, SyntaxError> {
        let start = self.pos;
        if self.peek() == Some('-') {
            self.bump();
        }
        if self.digits().is_empty() {
            return Err(self.error("malformed number"));
        }
        let mut is_float = false;
        if self.peek() == Some('.') {
            self.bump();
            is_float = true;
            if self.digits().is_empty() {
                return Err(self.error("malformed number"));
            }
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            self.bump();
            is_float = true;
            if matches!(self.peek(), Some('+' | '-')) {
                self.bump();
            }
            if self.digits().is_empty() {
                return Err(self.error("malformed number exponent"));
            }
        }
        let text = &self.src[start..self.pos];
        let lit = if is_float {
            match text.parse::<f64>() {
                Ok(f) if f.is_finite() => Literal::Float(f),
                _ => return Err(self.error(format!("number {text} out of range"))),
            }
        } else {
            Literal::Int(
                text.parse::<i64>()
                    .map_err(|_| self.error(format!("number {text} out of range")))?,
            )
        };
        Ok(ArgValue::Constant(lit))
    }

    fn string(&mut self) -> Result<ArgValue, SyntaxError> {
        self.expect('"')?;
        let mut parts: Vec<TemplatePart> = Vec::new();
        let mut text = String::new();
        loop {
            match self.bump() {
                None => return Err(self.error("unterminated string")),
                Some('"') => break,
                Some('\\') => match self.bump() {
                    Some('"') => text.push('"'),
                    Some('\\') => text.push('\\'),
                    Some('n') => text.push('\n'),
                    Some('t') => text.push('\t'),
                    Some('r') => text.push('\r'),
                    Some('$') => text.push('$'),
                    Some(other) => {
                        text.push('\\');
                        text.push(other);
                    }
                    None => return Err(self.error("unterminated string")),
                },
                Some('$') if matches!(self.peek(), Some(c) if c.is_ascii_digit()) => {
                    let id = self.task_id()?;
                    if !text.is_empty() {
                        parts.push(TemplatePart::Text(std::mem::take(&mut text)));
                    }
                    parts.push(TemplatePart::Ref(id));
                }
                Some(c) => text.push(c),
            }
        }
        if parts.is_empty() {
            return Ok(ArgValue::Constant(Literal::Str(text)));
        }
        if !text.is_empty() {
            parts.push(TemplatePart::Text(text));
        }
        Ok(ArgValue::Mixed(Template(parts)))
    }
}
