//! Agent output grammar.
//!
//! ```text
//! Thought: <free text>
//! Action: name(key=literal, key=literal, ...)
//! ```
//! or
//! ```text
//! Thought: <free text>
//! Final Answer: {"pivot_frame": <int>, "object_id": "<id>"}
//! ```
//! Literals are double-quoted strings with JSON escapes, integers, floats,
//! `true`/`false`, and bracketed lists of literals.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

use crate::protocol::Args;

pub const THOUGHT_TAG: &str = "Thought:";
pub const ACTION_TAG: &str = "Action:";
pub const FINAL_TAG: &str = "Final Answer:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub pivot_frame: u32,
    pub object_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentAction {
    Call { tool: String, args: Args },
    Final(FinalAnswer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedText {
    pub thought: String,
    pub action: AgentAction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub message: String,
    /// Byte offset into the parsed text.
    pub position: usize,
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for ParseError {}

fn error_at(text: &str, position: usize, message: impl Into<String>) -> ParseError {
    let position = position.min(text.len());
    let mut pos = position;
    while !text.is_char_boundary(pos) {
        pos -= 1;
    }
    let before = &text[..pos];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    ParseError {
        message: message.into(),
        position,
        line,
        column,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Marker {
    Action,
    Final,
}

/// `(marker, offset of the tag, offset after the tag)` for every line that
/// starts with a section tag.
fn markers(text: &str) -> Vec<(Marker, usize, usize)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let indent = line.len() - line.trim_start().len();
        let body = &line[indent..];
        for (tag, kind) in [(ACTION_TAG, Marker::Action), (FINAL_TAG, Marker::Final)] {
            if body.starts_with(tag) {
                let at = offset + indent;
                out.push((kind, at, at + tag.len()));
            }
        }
        offset += line.len();
    }
    out
}

pub fn parse_agent_text(text: &str) -> Result<ParsedText, ParseError> {
    let found = markers(text);
    let Some(&(kind, tag_at, body_at)) = found.first() else {
        let at = text.len() - (text.len() - text.trim_end().len());
        return Err(error_at(text, at, "expected `Action:` or `Final Answer:`"));
    };
    if let Some(&(_, second, _)) = found.get(1) {
        return Err(error_at(text, second, "only one Action or Final Answer is allowed per step"));
    }
    let action = match kind {
        Marker::Action => {
            let mut p = Cursor::new(text, body_at);
            let (tool, args) = p.call()?;
            p.skip_ws();
            if !p.at_end() {
                return Err(p.error("unexpected tokens after the action"));
            }
            AgentAction::Call { tool, args }
        }
        Marker::Final => AgentAction::Final(final_answer(text, body_at)?),
    };
    let lead = text.len() - text.trim_start().len();
    if !text[lead..].starts_with(THOUGHT_TAG) || lead + THOUGHT_TAG.len() > tag_at {
        return Err(error_at(text, lead, "expected `Thought:` at the start"));
    }
    let thought = text[lead + THOUGHT_TAG.len()..tag_at].trim().to_string();
    Ok(ParsedText { thought, action })
}

fn final_answer(text: &str, start: usize) -> Result<FinalAnswer, ParseError> {
    let body = &text[start..];
    let lead = body.len() - body.trim_start().len();
    let json_at = start + lead;
    let mut stream = serde_json::Deserializer::from_str(&text[json_at..]).into_iter::<Value>();
    let value = match stream.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => {
            let (l, c) = (e.line(), e.column());
            // translate the JSON error position back into the full text
            let inner = &text[json_at..];
            let mut off = 0;
            for (i, line) in inner.split_inclusive('\n').enumerate() {
                if i + 1 == l {
                    off += line.char_indices().nth(c.saturating_sub(1)).map_or(line.len(), |(b, _)| b);
                    break;
                }
                off += line.len();
            }
            return Err(error_at(text, json_at + off, format!("invalid Final Answer JSON: {e}")));
        }
        None => return Err(error_at(text, json_at, "expected a JSON object after `Final Answer:`")),
    };
    let end = json_at + stream.byte_offset();
    if !text[end..].trim().is_empty() {
        let junk = end + (text[end..].len() - text[end..].trim_start().len());
        return Err(error_at(text, junk, "unexpected tokens after the Final Answer"));
    }
    let Value::Object(obj) = value else {
        return Err(error_at(text, json_at, "Final Answer must be a JSON object"));
    };
    if let Some(k) = obj.keys().find(|k| *k != "pivot_frame" && *k != "object_id") {
        return Err(error_at(text, json_at, format!("unexpected Final Answer key `{k}`")));
    }
    let pivot = obj
        .get("pivot_frame")
        .and_then(Value::as_u64)
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| error_at(text, json_at, "`pivot_frame` must be a non-negative integer"))?;
    let object_id = obj
        .get("object_id")
        .and_then(Value::as_str)
        .ok_or_else(|| error_at(text, json_at, "`object_id` must be a string"))?;
    Ok(FinalAnswer {
        pivot_frame: pivot,
        object_id: object_id.to_string(),
    })
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, pos: usize) -> Self {
        Cursor { text, pos }
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        error_at(self.text, self.pos, message)
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.text.len()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn expect(&mut self, c: char, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
            _ => return Err(self.error(format!("expected {what}"))),
        }
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        {
            self.bump();
        }
        Ok(self.text[start..self.pos].to_string())
    }

    fn call(&mut self) -> Result<(String, Args), ParseError> {
        self.skip_ws();
        let name = self.ident("a tool name")?;
        self.skip_ws();
        let open = self.pos;
        self.expect('(', "`(` after the tool name")?;
        let mut args = Args::new();
        self.skip_ws();
        if self.peek() == Some(')') {
            self.bump();
            return Ok((name, args));
        }
        loop {
            self.skip_ws();
            if self.at_end() {
                return Err(error_at(self.text, open, "unclosed `(` in action"));
            }
            let key_at = self.pos;
            let key = self.ident("an argument name")?;
            self.skip_ws();
            self.expect('=', "`=` after the argument name")?;
            self.skip_ws();
            let value = self.literal()?;
            if args.insert(key.clone(), value).is_some() {
                return Err(error_at(self.text, key_at, format!("duplicate argument `{key}`")));
            }
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some(')') => {
                    self.bump();
                    return Ok((name, args));
                }
                None => return Err(error_at(self.text, open, "unclosed `(` in action")),
                Some(_) => return Err(self.error("expected `,` or `)`")),
            }
        }
    }

    fn literal(&mut self) -> Result<Value, ParseError> {
        match self.peek() {
            Some('"') => self.string().map(Value::String),
            Some('[') => self.list(),
            Some(c) if c == '-' || c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let at = self.pos;
                let word = self.ident("a literal")?;
                match word.as_str() {
                    "true" => Ok(Value::Bool(true)),
                    "false" => Ok(Value::Bool(false)),
                    _ => Err(error_at(self.text, at, format!("unknown literal `{word}`"))),
                }
            }
            None => Err(self.error("expected a literal, found end of text")),
            Some(_) => Err(self.error("expected a literal")),
        }
    }

    fn list(&mut self) -> Result<Value, ParseError> {
        let open = self.pos;
        self.bump();
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(']') {
            self.bump();
            return Ok(Value::Array(items));
        }
        loop {
            self.skip_ws();
            if self.at_end() {
                return Err(error_at(self.text, open, "unclosed `[` in list"));
            }
            items.push(self.literal()?);
            self.skip_ws();
            match self.bump() {
                Some(',') => {}
                Some(']') => return Ok(Value::Array(items)),
                None => return Err(error_at(self.text, open, "unclosed `[` in list")),
                Some(_) => {
                    self.pos -= 1;
                    return Err(self.error("expected `,` or `]` in list"));
                }
            }
        }
    }

    fn digits(&mut self) -> usize {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        self.pos - start
    }

    fn number(&mut self) -> Result<Value, ParseError> {
        let start = self.pos;
        if self.peek() == Some('-') {
            self.bump();
        }
        if self.digits() == 0 {
            return Err(self.error("expected digits"));
        }
        let mut float = false;
        if self.peek() == Some('.') {
            self.bump();
            float = true;
            if self.digits() == 0 {
                return Err(self.error("expected digits after `.`"));
            }
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            self.bump();
            float = true;
            if matches!(self.peek(), Some('+' | '-')) {
                self.bump();
            }
            if self.digits() == 0 {
                return Err(self.error("expected exponent digits"));
            }
        }
        let raw = &self.text[start..self.pos];
        if !float {
            if let Ok(i) = raw.parse::<i64>() {
                return Ok(Value::Number(i.into()));
            }
            if let Ok(u) = raw.parse::<u64>() {
                return Ok(Value::Number(u.into()));
            }
        }
        raw.parse::<f64>()
            .ok()
            .and_then(Number::from_f64)
            .map(Value::Number)
            .ok_or_else(|| error_at(self.text, start, format!("number `{raw}` out of range")))
    }

    fn hex4(&mut self) -> Result<u32, ParseError> {
        let at = self.pos;
        let mut v = 0;
        for _ in 0..4 {
            let d = self
                .bump()
                .and_then(|c| c.to_digit(16))
                .ok_or_else(|| error_at(self.text, at, "bad `\\u` escape"))?;
            v = v * 16 + d;
        }
        Ok(v)
    }

    fn string(&mut self) -> Result<String, ParseError> {
        let open = self.pos;
        self.bump();
        let mut out = String::new();
        loop {
            let Some(c) = self.bump() else {
                return Err(error_at(self.text, open, "unterminated string"));
            };
            match c {
                '"' => return Ok(out),
                '\\' => {
                    let esc_at = self.pos - 1;
                    match self.bump() {
                        Some('"') => out.push('"'),
                        Some('\\') => out.push('\\'),
                        Some('/') => out.push('/'),
                        Some('n') => out.push('\n'),
                        Some('t') => out.push('\t'),
                        Some('r') => out.push('\r'),
                        Some('b') => out.push('\u{8}'),
                        Some('f') => out.push('\u{c}'),
                        Some('u') => {
                            let hi = self.hex4()?;
                            let code = if (0xD800..0xDC00).contains(&hi) {
                                if self.bump() != Some('\\') || self.bump() != Some('u') {
                                    return Err(error_at(self.text, esc_at, "unpaired surrogate"));
                                }
                                let lo = self.hex4()?;
                                if !(0xDC00..0xE000).contains(&lo) {
                                    return Err(error_at(self.text, esc_at, "unpaired surrogate"));
                                }
                                0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00)
                            } else {
                                hi
                            };
                            out.push(
                                char::from_u32(code)
                                    .ok_or_else(|| error_at(self.text, esc_at, "invalid code point"))?,
                            );
                        }
                        None => return Err(error_at(self.text, open, "unterminated string")),
                        Some(_) => return Err(error_at(self.text, esc_at, "unknown escape")),
                    }
                }
                c => out.push(c),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderError(pub String);

fn render_literal(v: &Value, out: &mut String) -> Result<(), RenderError> {
    match v {
        Value::String(_) | Value::Bool(_) => out.push_str(&v.to_string()),
        Value::Number(n) => {
            let s = n.to_string();
            // keep floats recognisable as floats
            if n.is_f64() && !s.contains(['.', 'e', 'E']) {
                out.push_str(&s);
                out.push_str(".0");
            } else {
                out.push_str(&s);
            }
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                render_literal(item, out)?;
            }
            out.push(']');
        }
        Value::Null | Value::Object(_) => {
            return Err(RenderError(format!("`{v}` has no literal form")));
        }
    }
    Ok(())
}

/// `name(key=literal, ...)` with keys in sorted order.
pub fn render_call(tool: &str, args: &Args) -> Result<String, RenderError> {
    let mut out = format!("{tool}(");
    for (i, (k, v)) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(k);
        out.push('=');
        render_literal(v, &mut out)?;
    }
    out.push(')');
    Ok(out)
}

pub fn render_final(answer: &FinalAnswer) -> String {
    serde_json::json!({"pivot_frame": answer.pivot_frame, "object_id": answer.object_id}).to_string()
}
