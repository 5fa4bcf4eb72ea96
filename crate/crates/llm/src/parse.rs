use crate::error::{LlmError, Result};

const TAGS: [&str; 2] = ["parameter", "summary"];

fn fenced_block(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    // Skip an optional language tag on the opening fence line.
    let body_start = after.find('\n').map(|i| i + 1)?;
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(body[..end].trim())
}

fn tagged_section<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = text[start..].find(&close)? + start;
    Some(text[start..end].trim())
}

/// Extracts a proposal from a model response: the first fenced code block,
/// else the first `<parameter>` or `<summary>` section, else the whole
/// trimmed response.
pub fn parse_proposal(raw: &str) -> Result<String> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(LlmError::Parse("response is empty".into()));
    }
    if let Some(block) = fenced_block(trimmed).filter(|b| !b.is_empty()) {
        return Ok(block.to_string());
    }
    for tag in TAGS {
        if let Some(section) = tagged_section(trimmed, tag).filter(|s| !s.is_empty()) {
            return Ok(section.to_string());
        }
    }
    Ok(trimmed.to_string())
}
