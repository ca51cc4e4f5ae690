//! Placeholder templates shared by `template-llm` and the `format` post step.
//!
//! Grammar: `{query}` inserts the primary input, `{chan:<name>}` inserts the
//! latest value seen on channel `<name>`. `{{` and `}}` are literal braces.
//! Anything else inside braces is malformed.

use crate::payload::{render_text, Payload};

use super::InferenceContext;

pub const UNKNOWN: &str = "<unknown>";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Query,
    Channel(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(text: &str) -> Result<Template, String> {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut chars = text.char_indices().peekable();
        while let Some((at, c)) = chars.next() {
            match c {
                '{' if chars.peek().map(|p| p.1) == Some('{') => {
                    chars.next();
                    literal.push('{');
                }
                '}' if chars.peek().map(|p| p.1) == Some('}') => {
                    chars.next();
                    literal.push('}');
                }
                '}' => return Err(format!("unmatched '}}' at byte {at}")),
                '{' => {
                    let rest = &text[at + 1..];
                    let close = rest
                        .find('}')
                        .ok_or_else(|| format!("unclosed placeholder at byte {at}"))?;
                    let inner = &rest[..close];
                    let segment = if inner == "query" {
                        Segment::Query
                    } else if let Some(name) = inner.strip_prefix("chan:") {
                        if name.is_empty() || name.contains(|c: char| c.is_whitespace() || c == '{') {
                            return Err(format!("malformed channel placeholder {{{inner}}} at byte {at}"));
                        }
                        Segment::Channel(name.to_string())
                    } else {
                        return Err(format!("malformed placeholder {{{inner}}} at byte {at}"));
                    };
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(segment);
                    // skip the placeholder body and the closing brace
                    for _ in 0..inner.chars().count() + 1 {
                        chars.next();
                    }
                }
                other => literal.push(other),
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(Template { segments })
    }

    /// Channels referenced by `{chan:...}`, in first-appearance order, deduplicated.
    pub fn channels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.segments {
            if let Segment::Channel(c) = s {
                if !out.contains(c) {
                    out.push(c.clone());
                }
            }
        }
        out
    }

    pub fn render(&self, query: &str, ctx: &InferenceContext) -> String {
        let mut out = String::new();
        for s in &self.segments {
            match s {
                Segment::Literal(l) => out.push_str(l),
                Segment::Query => out.push_str(query),
                Segment::Channel(c) => match ctx.latest.get(c) {
                    Some(p) => out.push_str(&render_value(p)),
                    None => out.push_str(UNKNOWN),
                },
            }
        }
        out
    }
}

fn render_value(p: &Payload) -> String {
    render_text(p)
}
