//! Tolerant HTML parsing and pre-order element extraction.
//!
//! The parser never fails on malformed markup: unmatched close tags are
//! ignored and unclosed children are auto-closed when their parent closes.
//! Extraction walks the tree in pre-order (node before children, left to
//! right), which is the ground-truth element ordering for DOM-backed
//! environments.
//!
//! Layout comes from an optional sidecar file mapping node paths to boxes;
//! without one, a deterministic synthetic flow layout (20 px line height,
//! left-aligned) is generated so ordering experiments run without a browser.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::model::{BoundingBox, Element, EnvironmentState, ModelError, Viewport};

#[derive(Debug, Error)]
pub enum DomError {
    #[error("input is not valid UTF-8: {0}")]
    Encoding(#[from] std::string::FromUtf8Error),
    #[error("no layout box for node path {path}")]
    MissingLayout { path: String },
    #[error("malformed layout sidecar: {0}")]
    MalformedLayout(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One DOM node. `text` holds the node's direct text content (concatenated,
/// entity-decoded); document order of children is preserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomNode {
    /// Lowercased tag name; the synthetic root is `#document`.
    pub tag: String,
    /// Attributes in source order, names lowercased.
    pub attributes: Vec<(String, String)>,
    pub text: String,
    pub children: Vec<DomNode>,
}

impl DomNode {
    fn new(tag: &str) -> Self {
        Self {
            tag: tag.to_string(),
            attributes: Vec::new(),
            text: String::new(),
            children: Vec::new(),
        }
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }
}

const VOID_TAGS: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source",
    "track", "wbr",
];

/// Elements whose content is raw text (no nested markup).
const RAW_TEXT_TAGS: &[&str] = &["script", "style"];

fn is_void(tag: &str) -> bool {
    VOID_TAGS.contains(&tag)
}

/// Parses UTF-8 bytes; the only failure mode is invalid encoding.
pub fn parse_html_bytes(bytes: Vec<u8>) -> Result<DomNode, DomError> {
    let source = String::from_utf8(bytes)?;
    Ok(parse_html(&source))
}

/// Parses an HTML snapshot into a tree rooted at a synthetic `#document`
/// node. Malformed markup never fails.
pub fn parse_html(source: &str) -> DomNode {
    let mut stack: Vec<DomNode> = vec![DomNode::new("#document")];
    let bytes = source.as_bytes();
    let mut pos = 0;

    while pos < bytes.len() {
        if bytes[pos] == b'<' {
            if source[pos..].starts_with("<!--") {
                pos = match source[pos + 4..].find("-->") {
                    Some(end) => pos + 4 + end + 3,
                    None => bytes.len(),
                };
            } else if source[pos..].starts_with("<!") || source[pos..].starts_with("<?") {
                pos = match source[pos..].find('>') {
                    Some(end) => pos + end + 1,
                    None => bytes.len(),
                };
            } else if source[pos..].starts_with("</") {
                let end = source[pos..].find('>').map(|e| pos + e);
                let name_end = end.unwrap_or(bytes.len());
                let name = source[pos + 2..name_end].trim().to_ascii_lowercase();
                close_tag(&mut stack, &name);
                pos = end.map(|e| e + 1).unwrap_or(bytes.len());
            } else if bytes.get(pos + 1).is_some_and(|b| b.is_ascii_alphabetic()) {
                let (node, self_closing, next) = parse_open_tag(source, pos);
                let tag = node.tag.clone();
                if self_closing || is_void(&tag) {
                    attach(&mut stack, node);
                    pos = next;
                } else if RAW_TEXT_TAGS.contains(&tag.as_str()) {
                    // consume raw text up to the matching close tag
                    let mut node = node;
                    let close = format!("</{tag}");
                    let rest = &source[next..];
                    let lower = rest.to_ascii_lowercase();
                    if let Some(idx) = lower.find(&close) {
                        node.text = rest[..idx].to_string();
                        let after = next + idx;
                        let tag_end = source[after..]
                            .find('>')
                            .map(|e| after + e + 1)
                            .unwrap_or(bytes.len());
                        attach(&mut stack, node);
                        pos = tag_end;
                    } else {
                        node.text = rest.to_string();
                        attach(&mut stack, node);
                        pos = bytes.len();
                    }
                } else {
                    stack.push(node);
                    pos = next;
                }
            } else {
                // lone '<' in text
                append_text(&mut stack, "<");
                pos += 1;
            }
        } else {
            let end = source[pos..]
                .find('<')
                .map(|e| pos + e)
                .unwrap_or(bytes.len());
            append_text(&mut stack, &source[pos..end]);
            pos = end;
        }
    }

    // auto-close anything left open
    while stack.len() > 1 {
        let node = stack.pop().expect("stack nonempty");
        stack.last_mut().expect("root present").children.push(node);
    }
    stack.pop().expect("root present")
}

fn attach(stack: &mut [DomNode], node: DomNode) {
    stack.last_mut().expect("root present").children.push(node);
}

fn append_text(stack: &mut [DomNode], text: &str) {
    stack
        .last_mut()
        .expect("root present")
        .text
        .push_str(&decode_entities(text));
}

/// Pops (auto-closing) until the named tag is closed; ignores the close tag
/// entirely when no matching element is open.
fn close_tag(stack: &mut Vec<DomNode>, name: &str) {
    if name.is_empty() {
        return;
    }
    let Some(open_at) = stack.iter().skip(1).rposition(|n| n.tag == name) else {
        return;
    };
    let open_at = open_at + 1; // undo the skip(1) offset
    while stack.len() > open_at {
        let node = stack.pop().expect("stack nonempty");
        stack.last_mut().expect("root present").children.push(node);
    }
}

/// Parses `<name attr=val ...>` starting at `start` (which points at `<`).
/// Returns the node, whether it was self-closing, and the next position.
fn parse_open_tag(source: &str, start: usize) -> (DomNode, bool, usize) {
    let bytes = source.as_bytes();
    let mut pos = start + 1;
    let name_start = pos;
    while pos < bytes.len() && (bytes[pos].is_ascii_alphanumeric() || bytes[pos] == b'-') {
        pos += 1;
    }
    let mut node = DomNode::new(&source[name_start..pos].to_ascii_lowercase());
    let mut self_closing = false;

    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            break;
        }
        match bytes[pos] {
            b'>' => {
                pos += 1;
                break;
            }
            b'/' => {
                self_closing = true;
                pos += 1;
            }
            _ => {
                let attr_start = pos;
                while pos < bytes.len()
                    && !bytes[pos].is_ascii_whitespace()
                    && bytes[pos] != b'='
                    && bytes[pos] != b'>'
                    && bytes[pos] != b'/'
                {
                    pos += 1;
                }
                let name = source[attr_start..pos].to_ascii_lowercase();
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                let value = if pos < bytes.len() && bytes[pos] == b'=' {
                    pos += 1;
                    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                        pos += 1;
                    }
                    if pos < bytes.len() && (bytes[pos] == b'"' || bytes[pos] == b'\'') {
                        let quote = bytes[pos];
                        pos += 1;
                        let v_start = pos;
                        while pos < bytes.len() && bytes[pos] != quote {
                            pos += 1;
                        }
                        let v = &source[v_start..pos];
                        pos = (pos + 1).min(bytes.len());
                        decode_entities(v)
                    } else {
                        let v_start = pos;
                        while pos < bytes.len()
                            && !bytes[pos].is_ascii_whitespace()
                            && bytes[pos] != b'>'
                        {
                            pos += 1;
                        }
                        decode_entities(&source[v_start..pos])
                    }
                } else {
                    String::new()
                };
                if !name.is_empty() {
                    node.attributes.push((name, value));
                }
            }
        }
    }
    (node, self_closing, pos)
}

fn decode_entities(text: &str) -> String {
    if !text.contains('&') {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let semi = rest[..rest.len().min(12)].find(';');
        let Some(semi) = semi else {
            out.push('&');
            rest = &rest[1..];
            continue;
        };
        let entity = &rest[1..semi];
        let decoded = match entity {
            "amp" => Some('&'),
            "lt" => Some('<'),
            "gt" => Some('>'),
            "quot" => Some('"'),
            "apos" => Some('\''),
            "nbsp" => Some('\u{a0}'),
            _ => entity
                .strip_prefix("#x")
                .or_else(|| entity.strip_prefix("#X"))
                .and_then(|h| u32::from_str_radix(h, 16).ok())
                .or_else(|| entity.strip_prefix('#').and_then(|d| d.parse().ok()))
                .and_then(char::from_u32),
        };
        match decoded {
            Some(c) => {
                out.push(c);
                rest = &rest[semi + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn escape_text(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn escape_attr(text: &str) -> String {
    escape_text(text).replace('"', "&quot;")
}

/// Serializes a tree back to HTML. Direct text is written before children;
/// re-parsing the output yields an identical tree.
pub fn serialize_html(node: &DomNode) -> String {
    let mut out = String::new();
    if node.tag == "#document" {
        out.push_str(&escape_text(&node.text));
        for child in &node.children {
            serialize_into(child, &mut out);
        }
    } else {
        serialize_into(node, &mut out);
    }
    out
}

fn serialize_into(node: &DomNode, out: &mut String) {
    out.push('<');
    out.push_str(&node.tag);
    for (name, value) in &node.attributes {
        out.push(' ');
        out.push_str(name);
        out.push_str("=\"");
        out.push_str(&escape_attr(value));
        out.push('"');
    }
    out.push('>');
    if is_void(&node.tag) {
        return;
    }
    if RAW_TEXT_TAGS.contains(&node.tag.as_str()) {
        out.push_str(&node.text);
    } else {
        out.push_str(&escape_text(&node.text));
    }
    for child in &node.children {
        serialize_into(child, out);
    }
    out.push_str("</");
    out.push_str(&node.tag);
    out.push('>');
}

// ---------------------------------------------------------------------------
// Element extraction
// ---------------------------------------------------------------------------

/// Which tags count as interactable and which afford text entry. The
/// benchmarks this feeds mark interactability themselves, so the whitelist
/// stays configurable.
#[derive(Debug, Clone)]
pub struct ExtractorConfig {
    pub interactable_tags: BTreeSet<String>,
    pub text_entry_input_types: BTreeSet<String>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            interactable_tags: ["a", "button", "input", "select", "textarea", "option"]
                .into_iter()
                .map(String::from)
                .collect(),
            text_entry_input_types: [
                "text", "password", "search", "email", "url", "tel", "number",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        }
    }
}

/// Tag-and-attribute interactability rule: whitelist members, `onclick`
/// handlers, and `role="button"` are interactable. Text-entry inputs and
/// textareas afford `{click, type}`, everything else `{click}`.
pub fn classify_interactable(node: &DomNode, config: &ExtractorConfig) -> (bool, BTreeSet<String>) {
    let by_tag = config.interactable_tags.contains(&node.tag);
    let by_attr = node.attr("onclick").is_some()
        || node
            .attr("role")
            .is_some_and(|r| r.eq_ignore_ascii_case("button"));
    if !(by_tag || by_attr) {
        return (false, BTreeSet::new());
    }
    let text_entry = node.tag == "textarea"
        || (node.tag == "input"
            && match node.attr("type") {
                None | Some("") => true,
                Some(t) => config
                    .text_entry_input_types
                    .contains(&t.to_ascii_lowercase()),
            });
    let mut actions: BTreeSet<String> = ["click".to_string()].into_iter().collect();
    if text_entry {
        actions.insert("type".to_string());
    }
    (true, actions)
}

/// Sidecar layout: node path (slash-separated child indices from the
/// document root, e.g. `/0/1`) to pixel box.
pub type LayoutMap = HashMap<String, [f64; 4]>;

pub fn load_layout(path: &Path) -> Result<LayoutMap, DomError> {
    #[derive(Deserialize)]
    struct LayoutFile(HashMap<String, [f64; 4]>);
    let raw = std::fs::read_to_string(path)?;
    let LayoutFile(map) =
        serde_json::from_str(&raw).map_err(|e| DomError::MalformedLayout(e.to_string()))?;
    Ok(map)
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Subtree text of a node, stopping at nested interactable boundaries so a
/// control's label is not double-counted inside its ancestors.
fn subtree_text(node: &DomNode, config: &ExtractorConfig, out: &mut String) {
    out.push_str(&node.text);
    out.push(' ');
    for child in &node.children {
        let (interactable, _) = classify_interactable(child, config);
        if !interactable {
            subtree_text(child, config, out);
        }
    }
}

struct PendingElement {
    element: Element,
    path: String,
    display_len: usize,
}

fn non_empty(text: String) -> Option<String> {
    if text.is_empty() {
        None
    } else {
        Some(text)
    }
}

fn collect_elements(
    node: &DomNode,
    path: &mut String,
    inside_interactable: bool,
    config: &ExtractorConfig,
    out: &mut Vec<PendingElement>,
) {
    let placeholder_box = BoundingBox::new(0.0, 0.0, 0.0, 0.0).expect("zero box is valid");
    let (interactable, actions) = classify_interactable(node, config);
    if interactable {
        let mut text = String::new();
        subtree_text(node, config, &mut text);
        let text = collapse_whitespace(&text);
        let alt = node.attr("alt").map(collapse_whitespace).and_then(non_empty);
        let display_len = text
            .chars()
            .count()
            .max(alt.as_deref().map_or(0, |a| a.chars().count()));
        out.push(PendingElement {
            element: Element {
                interactable: true,
                bbox: placeholder_box,
                actions,
                tag: Some(node.tag.to_ascii_uppercase()),
                text: non_empty(text),
                alt_text: alt,
                caption: None,
                is_static_text: false,
            },
            path: path.clone(),
            display_len,
        });
    } else if node.tag == "img" {
        if let Some(alt) = node.attr("alt").map(collapse_whitespace).and_then(non_empty) {
            let display_len = alt.chars().count();
            out.push(PendingElement {
                element: Element {
                    interactable: false,
                    bbox: placeholder_box,
                    actions: BTreeSet::new(),
                    tag: Some("IMG".to_string()),
                    text: None,
                    alt_text: Some(alt),
                    caption: None,
                    is_static_text: false,
                },
                path: path.clone(),
                display_len,
            });
        }
    } else if !inside_interactable {
        let text = collapse_whitespace(&node.text);
        if !text.is_empty() {
            let display_len = text.chars().count();
            out.push(PendingElement {
                element: Element {
                    interactable: false,
                    bbox: placeholder_box,
                    actions: BTreeSet::new(),
                    tag: Some("StaticText".to_string()),
                    text: Some(text),
                    alt_text: None,
                    caption: None,
                    is_static_text: true,
                },
                path: path.clone(),
                display_len,
            });
        }
    }

    for (i, child) in node.children.iter().enumerate() {
        let len_before = path.len();
        path.push('/');
        path.push_str(&i.to_string());
        collect_elements(
            child,
            path,
            inside_interactable || interactable,
            config,
            out,
        );
        path.truncate(len_before);
    }
}

const SYNTHETIC_LINE_HEIGHT: f64 = 20.0;
const SYNTHETIC_CHAR_WIDTH: f64 = 8.0;

/// Extracts elements in pre-order. Boxes come from the sidecar layout when
/// given (every emitted element's node path must be present), otherwise from
/// the synthetic flow layout.
pub fn extract_elements(
    root: &DomNode,
    viewport: Viewport,
    layout: Option<&LayoutMap>,
    config: &ExtractorConfig,
) -> Result<EnvironmentState, DomError> {
    let mut pending = Vec::new();
    let mut path = String::new();
    collect_elements(root, &mut path, false, config, &mut pending);

    let w = f64::from(viewport.width);
    let h = f64::from(viewport.height);
    let mut elements = Vec::with_capacity(pending.len());
    for (k, item) in pending.into_iter().enumerate() {
        let bbox = match layout {
            Some(map) => {
                let raw = map.get(&item.path).ok_or(DomError::MissingLayout {
                    path: item.path.clone(),
                })?;
                let (clamped, _) =
                    BoundingBox::new(raw[0], raw[1], raw[2], raw[3])?.clamp_to(viewport);
                clamped
            }
            None => {
                let y1 = (SYNTHETIC_LINE_HEIGHT * k as f64)
                    .min(h - SYNTHETIC_LINE_HEIGHT)
                    .max(0.0);
                let x2 = (SYNTHETIC_CHAR_WIDTH * item.display_len.max(1) as f64).min(w);
                BoundingBox::new(0.0, y1, x2, (y1 + SYNTHETIC_LINE_HEIGHT).min(h))?
            }
        };
        let mut element = item.element;
        element.bbox = bbox;
        elements.push(element);
    }

    Ok(EnvironmentState {
        elements,
        viewport,
        screenshot_path: None,
    })
}
