//! Reply grammars for the judgment calls.

use crate::types::Category;

/// Lowercase alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

fn strip_prefix_ci<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    let head = text.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &text[prefix.len()..])
}

fn trim_decoration(text: &str) -> &str {
    text.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '_' | '"' | '\'' | '`' | '\u{201c}'))
}

/// Parse a classification reply: optional `Category:` / `Answer:` label, then
/// `true`/`T` or `false`/`F`, then an optional `Reason:` section.
pub fn parse_category(reply: &str) -> Option<(Category, Option<String>)> {
    let mut rest = trim_decoration(reply);
    for label in ["category:", "answer:"] {
        if let Some(r) = strip_prefix_ci(rest, label) {
            rest = trim_decoration(r);
            break;
        }
    }
    let token_len = rest.find(|c: char| !c.is_alphabetic()).unwrap_or(rest.len());
    let category = match rest[..token_len].to_lowercase().as_str() {
        "true" | "t" => Category::T,
        "false" | "f" => Category::F,
        _ => return None,
    };
    Some((category, parse_reason(&rest[token_len..])))
}

fn parse_reason(tail: &str) -> Option<String> {
    let lower = tail.to_lowercase();
    let at = lower.find("reason")?;
    let mut rest = &tail[at + "reason".len()..];
    rest = rest.strip_prefix(['s', 'S']).unwrap_or(rest);
    let trimmed = rest.trim_start();
    rest = strip_prefix_ci(trimmed, "(optional)").unwrap_or(trimmed).trim_start();
    let reason = rest.strip_prefix(':')?.trim();
    (!reason.is_empty()).then(|| reason.to_string())
}

/// First token that is `yes`/`contradictory` (true) or `no`/`consistent` (false).
pub fn parse_contradiction(reply: &str) -> Option<bool> {
    tokenize(reply).iter().find_map(|t| match t.as_str() {
        "yes" | "contradictory" => Some(true),
        "no" | "consistent" => Some(false),
        _ => None,
    })
}

/// Final yes/no verdict of a reasoning reply.
///
/// Only `yes`/`no` tokens that open the reply or follow sentence punctuation or
/// a colon count; the last such token is the verdict. This keeps phrases like
/// "there is no evidence" in the reasoning from being read as the answer.
pub fn parse_final_yes_no(reply: &str) -> Option<bool> {
    let mut verdict = None;
    let mut boundary = true;
    let mut chars = reply.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c.is_alphanumeric() {
            let start = i;
            let mut end = i + c.len_utf8();
            while let Some(&(j, d)) = chars.peek() {
                if !d.is_alphanumeric() {
                    break;
                }
                end = j + d.len_utf8();
                chars.next();
            }
            if boundary {
                match reply[start..end].to_lowercase().as_str() {
                    "yes" => verdict = Some(true),
                    "no" => verdict = Some(false),
                    _ => {}
                }
            }
            boundary = false;
        } else if matches!(c, '.' | ':' | '!' | '?' | '\n' | ';') {
            boundary = true;
        }
    }
    verdict
}

/// First `yes`/`no` token.
pub fn parse_yes_no(reply: &str) -> Option<bool> {
    tokenize(reply).iter().find_map(|t| match t.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    })
}

/// First vocabulary word appearing in the reply.
pub fn parse_topic<'a>(reply: &str, vocabulary: &'a [String]) -> Option<&'a str> {
    tokenize(reply).iter().find_map(|t| vocabulary.iter().find(|v| v.to_lowercase() == *t).map(String::as_str))
}
