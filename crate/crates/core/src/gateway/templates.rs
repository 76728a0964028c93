//! Suggestion prompts for the language model and the parser for its
//! numbered-list answers.

use serde::{Deserialize, Serialize};

use super::{GatewayError, LanguageModel, Result};
use crate::distribution::Label;

pub const SYSTEM_PROMPT: &str = "You are a useful assistant. You give very brief answers, in very few words, no need to be polite, do not provide explanations.";

/// Number of attributes requested by [`suggest_attributes`].
pub const SUGGESTED_ATTRIBUTES: usize = 3;

/// A chat-style completion request: system prompt, instruction, and the
/// answer template the model continues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system: String,
    pub instruction: String,
    pub template: String,
}

fn numbered_slots(header: String, n: usize) -> String {
    let mut out = header;
    for i in 1..=n {
        out.push('\n');
        out.push_str(&format!("{i}."));
    }
    out
}

pub fn label_request(context: &str, attribute: &str, n_a: usize) -> CompletionRequest {
    let instruction = format!(
        "For the extracted attribute {attribute} in the context of {context}, suggest possible labels for the attribute and provide a precise definition. \
Consider general knowledge or common scenarios for accuracy. \
Example: for the attribute 'color' in the context of 'sky', some possible labels are blue, white, grey, orange, and red. \
For the attribute 'ethnicity' in the context of 'person', some possible labels are Caucasian, Black, Asian, Hispanic, and Middle Eastern."
    );
    let header = format!("Here are {n_a} possible labels of attribute {attribute} in the context of {context}:");
    CompletionRequest {
        system: SYSTEM_PROMPT.to_string(),
        instruction,
        template: numbered_slots(header, n_a),
    }
}

pub fn attribute_request(context: &str) -> CompletionRequest {
    // The missing space after "diversify." is reproduced verbatim.
    let instruction = format!(
        "For the context of {context}, suggest possible attributes to diversify.Consider general knowledge or common scenarios for accuracy."
    );
    let header = format!("Here are {SUGGESTED_ATTRIBUTES} possible attributes in the context of {context}:");
    CompletionRequest {
        system: SYSTEM_PROMPT.to_string(),
        instruction,
        template: numbered_slots(header, SUGGESTED_ATTRIBUTES),
    }
}

fn clean_item(raw: &str) -> Option<String> {
    let mut item = raw.trim();
    // Drop a trailing definition ("Red: the colour of ..." / "Red - ...").
    for sep in [":", " - ", " – "] {
        if let Some((head, _)) = item.split_once(sep) {
            item = head;
        }
    }
    let item = item
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '“' | '”' | '‘' | '’' | '*'))
        .trim_end_matches(['.', ',', ';'])
        .trim();
    (!item.is_empty()).then(|| item.to_string())
}

/// Extracts items from lines numbered `1.` or `1)`. Items without numbering
/// are ignored; duplicates (case-insensitive) are dropped.
pub fn parse_numbered_list(text: &str) -> Vec<String> {
    let mut items: Vec<String> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
        if digits == 0 {
            continue;
        }
        let rest = &line[digits..];
        let Some(body) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) else {
            continue;
        };
        if let Some(item) = clean_item(body) {
            if !items.iter().any(|i| i.eq_ignore_ascii_case(&item)) {
                items.push(item);
            }
        }
    }
    items
}

pub fn suggest_labels(llm: &dyn LanguageModel, context: &str, attribute: &str, n_a: usize) -> Result<Vec<Label>> {
    if context.trim().is_empty() || attribute.trim().is_empty() || n_a == 0 {
        return Err(GatewayError::InvalidRequest("context, attribute and n_a are required".into()));
    }
    let text = llm.complete(&label_request(context.trim(), attribute.trim(), n_a))?;
    let items = parse_numbered_list(&text);
    if items.len() < n_a {
        return Err(GatewayError::ParseFailure { expected: n_a });
    }
    items
        .into_iter()
        .take(n_a)
        .map(|s| Label::new(s).map_err(|_| GatewayError::ParseFailure { expected: n_a }))
        .collect()
}

pub fn suggest_attributes(llm: &dyn LanguageModel, context: &str) -> Result<Vec<String>> {
    if context.trim().is_empty() {
        return Err(GatewayError::InvalidRequest("context is required".into()));
    }
    let text = llm.complete(&attribute_request(context.trim()))?;
    let items = parse_numbered_list(&text);
    if items.len() < SUGGESTED_ATTRIBUTES {
        return Err(GatewayError::ParseFailure { expected: SUGGESTED_ATTRIBUTES });
    }
    Ok(items.into_iter().take(SUGGESTED_ATTRIBUTES).collect())
}
