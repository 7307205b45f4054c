//! The high-level action grammar: parsing model responses into commands and
//! emitting coordinate-level automation code.
//!
//! A command line is a verb followed by bracketed arguments, e.g.
//! `click [1]`, `type [sample text]`, `hotkey [Ctrl] [Alt] [Delete]`.
//! Verbs match case-insensitively with spaces normalized to underscores;
//! bracket contents are taken verbatim (no nesting or escaping).
//!
//! Two dialects are supported: the desktop set (click, double_click,
//! right_click, hover/move, drag, scroll, horizontal_scroll, press, hotkey,
//! write, type) and the browser set (click, hover, type, press, scroll,
//! new_tab, tab_focus, tab_close, goto, go_back, go_forward, stop).
//! Mouse verbs resolve their element id to the box center, so
//! `click [1]` on an element spanning (50,50)-(100,100) emits
//! `pyautogui.click(75, 75)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Element, EnvironmentState};
use crate::ordering::OrderedView;

#[derive(Debug, Error, PartialEq)]
pub enum ActionError {
    #[error("no fenced action block found in the response")]
    NoActionBlock,
    #[error("unknown verb {verb:?} for the {dialect} dialect")]
    UnknownVerb { verb: String, dialect: Dialect },
    #[error("{verb} takes {expected} argument(s), got {got}")]
    ArityError {
        verb: &'static str,
        expected: &'static str,
        got: usize,
    },
    #[error("malformed brackets in {line:?}: {reason}")]
    MalformedBrackets { line: String, reason: &'static str },
    #[error("invalid argument for {verb}: {reason}: {arg:?}")]
    InvalidArgument {
        verb: &'static str,
        reason: &'static str,
        arg: String,
    },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<ActionError>,
    },
    #[error("no element with id {id} in this observation")]
    UnknownId { id: u64 },
    #[error("{verb} is not part of the {dialect} dialect")]
    UnsupportedVerb { verb: &'static str, dialect: Dialect },
}

/// Which action vocabulary is in force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    OmniAct,
    Vwa,
}

impl std::fmt::Display for Dialect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Dialect::OmniAct => "omniact",
            Dialect::Vwa => "vwa",
        })
    }
}

impl std::str::FromStr for Dialect {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "omniact" => Ok(Dialect::OmniAct),
            "vwa" => Ok(Dialect::Vwa),
            other => Err(format!("unknown dialect {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Click,
    DoubleClick,
    RightClick,
    Hover,
    Drag,
    Scroll,
    HorizontalScroll,
    Press,
    Hotkey,
    Write,
    Type,
    NewTab,
    TabFocus,
    TabClose,
    Goto,
    GoBack,
    GoForward,
    Stop,
}

impl Verb {
    pub fn token(&self) -> &'static str {
        match self {
            Verb::Click => "click",
            Verb::DoubleClick => "double_click",
            Verb::RightClick => "right_click",
            Verb::Hover => "hover",
            Verb::Drag => "drag",
            Verb::Scroll => "scroll",
            Verb::HorizontalScroll => "horizontal_scroll",
            Verb::Press => "press",
            Verb::Hotkey => "hotkey",
            Verb::Write => "write",
            Verb::Type => "type",
            Verb::NewTab => "new_tab",
            Verb::TabFocus => "tab_focus",
            Verb::TabClose => "tab_close",
            Verb::Goto => "goto",
            Verb::GoBack => "go_back",
            Verb::GoForward => "go_forward",
            Verb::Stop => "stop",
        }
    }

    fn from_token(token: &str) -> Option<Verb> {
        Some(match token {
            "click" => Verb::Click,
            "double_click" => Verb::DoubleClick,
            "right_click" => Verb::RightClick,
            "hover" | "move" | "move/hover" => Verb::Hover,
            "drag" => Verb::Drag,
            "scroll" => Verb::Scroll,
            "horizontal_scroll" => Verb::HorizontalScroll,
            "press" => Verb::Press,
            "hotkey" | "keyboard_hotkey" => Verb::Hotkey,
            "write" => Verb::Write,
            "type" => Verb::Type,
            "new_tab" => Verb::NewTab,
            "tab_focus" => Verb::TabFocus,
            "tab_close" => Verb::TabClose,
            "goto" => Verb::Goto,
            "go_back" => Verb::GoBack,
            "go_forward" => Verb::GoForward,
            "stop" => Verb::Stop,
            _ => return None,
        })
    }

    pub fn in_dialect(&self, dialect: Dialect) -> bool {
        match dialect {
            Dialect::OmniAct => matches!(
                self,
                Verb::Click
                    | Verb::DoubleClick
                    | Verb::RightClick
                    | Verb::Hover
                    | Verb::Drag
                    | Verb::Scroll
                    | Verb::HorizontalScroll
                    | Verb::Press
                    | Verb::Hotkey
                    | Verb::Write
                    | Verb::Type
            ),
            Dialect::Vwa => matches!(
                self,
                Verb::Click
                    | Verb::Hover
                    | Verb::Type
                    | Verb::Press
                    | Verb::Scroll
                    | Verb::NewTab
                    | Verb::TabFocus
                    | Verb::TabClose
                    | Verb::Goto
                    | Verb::GoBack
                    | Verb::GoForward
                    | Verb::Stop
            ),
        }
    }

    /// Verbs that target an element by id.
    pub fn targets_element(&self, dialect: Dialect) -> bool {
        match self {
            Verb::Click | Verb::DoubleClick | Verb::RightClick | Verb::Hover | Verb::Drag => true,
            Verb::Type => dialect == Dialect::Vwa,
            _ => false,
        }
    }

    /// Verbs whose string arguments compare case-insensitively when scoring
    /// (key names and directions, as opposed to free text).
    pub fn args_are_keys(&self) -> bool {
        matches!(
            self,
            Verb::Press | Verb::Hotkey | Verb::Scroll | Verb::HorizontalScroll
        )
    }
}

/// A parsed high-level action: verb, optional element target, and verbatim
/// string arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub verb: Verb,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<String>,
}

impl ActionCommand {
    pub fn click(id: u64) -> Self {
        Self {
            verb: Verb::Click,
            target_id: Some(id),
            args: Vec::new(),
        }
    }
}

/// Renders a command back to its canonical grammar line.
/// `parse_action(render_action(cmd)) == cmd` for every valid command.
pub fn render_action(cmd: &ActionCommand) -> String {
    let mut out = cmd.verb.token().to_string();
    if let Some(id) = cmd.target_id {
        out.push_str(&format!(" [{id}]"));
    }
    for arg in &cmd.args {
        out.push_str(&format!(" [{arg}]"));
    }
    out
}

fn normalize_verb(raw: &str) -> String {
    raw.trim()
        .to_ascii_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
}

/// Splits the argument region into bracket groups; contents are verbatim up
/// to the first `]` (no nesting, no escapes).
fn parse_brackets(line: &str, rest: &str) -> Result<Vec<String>, ActionError> {
    let malformed = |reason| ActionError::MalformedBrackets {
        line: line.to_string(),
        reason,
    };
    let mut args = Vec::new();
    let mut chars = rest.char_indices().peekable();
    while let Some(&(at, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        if c != '[' {
            return Err(malformed("expected '[' before argument"));
        }
        let open = at + 1;
        let close = rest[open..]
            .find(']')
            .ok_or(malformed("unterminated '['"))?;
        args.push(rest[open..open + close].to_string());
        while chars.peek().is_some_and(|&(at, _)| at < open + close + 1) {
            chars.next();
        }
    }
    Ok(args)
}

fn parse_id(verb: &'static str, arg: &str) -> Result<u64, ActionError> {
    arg.trim()
        .parse()
        .map_err(|_| ActionError::InvalidArgument {
            verb,
            reason: "element id must be a number",
            arg: arg.to_string(),
        })
}

fn expect_arity(
    verb: &'static str,
    args: &[String],
    lo: usize,
    hi: usize,
    expected: &'static str,
) -> Result<(), ActionError> {
    if args.len() < lo || args.len() > hi {
        return Err(ActionError::ArityError {
            verb,
            expected,
            got: args.len(),
        });
    }
    Ok(())
}

fn expect_direction(
    verb: &'static str,
    arg: &str,
    allowed: [&'static str; 2],
) -> Result<(), ActionError> {
    let lowered = arg.trim().to_ascii_lowercase();
    if allowed.contains(&lowered.as_str()) {
        Ok(())
    } else {
        Err(ActionError::InvalidArgument {
            verb,
            reason: "unsupported direction",
            arg: arg.to_string(),
        })
    }
}

/// Parses a single grammar line under the given dialect.
pub fn parse_action(line: &str, dialect: Dialect) -> Result<ActionCommand, ActionError> {
    let trimmed = line.trim();
    let (head, rest) = match trimmed.find('[') {
        Some(at) => (&trimmed[..at], &trimmed[at..]),
        None => (trimmed, ""),
    };
    let token = normalize_verb(head);
    let verb = match Verb::from_token(&token) {
        Some(v) => v,
        None => {
            // a known verb followed by unbracketed arguments is a bracket
            // problem, not an unknown verb
            let has_verb_prefix = token
                .char_indices()
                .filter(|&(_, c)| c == '_')
                .map(|(at, _)| &token[..at])
                .any(|prefix| Verb::from_token(prefix).is_some());
            if rest.is_empty() && has_verb_prefix {
                return Err(ActionError::MalformedBrackets {
                    line: trimmed.to_string(),
                    reason: "arguments must be enclosed in brackets",
                });
            }
            return Err(ActionError::UnknownVerb {
                verb: head.trim().to_string(),
                dialect,
            });
        }
    };
    if !verb.in_dialect(dialect) {
        return Err(ActionError::UnknownVerb {
            verb: head.trim().to_string(),
            dialect,
        });
    }
    let args = parse_brackets(trimmed, rest)?;
    let t = verb.token();

    let command = match verb {
        Verb::Click | Verb::DoubleClick | Verb::RightClick | Verb::Hover | Verb::Drag => {
            expect_arity(t, &args, 1, 1, "1")?;
            ActionCommand {
                verb,
                target_id: Some(parse_id(t, &args[0])?),
                args: Vec::new(),
            }
        }
        Verb::Scroll => {
            expect_arity(t, &args, 1, 1, "1")?;
            expect_direction(t, &args[0], ["up", "down"])?;
            ActionCommand {
                verb,
                target_id: None,
                args,
            }
        }
        Verb::HorizontalScroll => {
            expect_arity(t, &args, 1, 1, "1")?;
            expect_direction(t, &args[0], ["left", "right"])?;
            ActionCommand {
                verb,
                target_id: None,
                args,
            }
        }
        Verb::Press | Verb::Write | Verb::Goto => {
            expect_arity(t, &args, 1, 1, "1")?;
            ActionCommand {
                verb,
                target_id: None,
                args,
            }
        }
        Verb::Hotkey => {
            if args.len() < 2 {
                return Err(ActionError::ArityError {
                    verb: t,
                    expected: "at least 2",
                    got: args.len(),
                });
            }
            ActionCommand {
                verb,
                target_id: None,
                args,
            }
        }
        Verb::Type => match dialect {
            Dialect::OmniAct => {
                expect_arity(t, &args, 1, 1, "1")?;
                ActionCommand {
                    verb,
                    target_id: None,
                    args,
                }
            }
            Dialect::Vwa => {
                expect_arity(t, &args, 2, 2, "2 (id and text)")?;
                ActionCommand {
                    verb,
                    target_id: Some(parse_id(t, &args[0])?),
                    args: vec![args[1].clone()],
                }
            }
        },
        Verb::TabFocus => {
            expect_arity(t, &args, 1, 1, "1")?;
            if args[0].trim().parse::<u64>().is_err() {
                return Err(ActionError::InvalidArgument {
                    verb: t,
                    reason: "tab index must be a number",
                    arg: args[0].clone(),
                });
            }
            ActionCommand {
                verb,
                target_id: None,
                args,
            }
        }
        Verb::NewTab | Verb::TabClose | Verb::GoBack | Verb::GoForward => {
            expect_arity(t, &args, 0, 0, "0")?;
            ActionCommand {
                verb,
                target_id: None,
                args,
            }
        }
        Verb::Stop => {
            expect_arity(t, &args, 0, 1, "0 or 1")?;
            ActionCommand {
                verb,
                target_id: None,
                args,
            }
        }
    };
    Ok(command)
}

/// Extracts and parses the action block from a full model response: the
/// last ``` fenced block after the final "In summary" marker (or in the
/// whole text when the marker is absent), one action per line.
pub fn parse_response(text: &str, dialect: Dialect) -> Result<Vec<ActionCommand>, ActionError> {
    let region = match text.rfind("In summary") {
        Some(at) => &text[at..],
        None => text,
    };
    let block = last_fenced_block(region).ok_or(ActionError::NoActionBlock)?;
    let mut commands = Vec::new();
    for (line_no, line) in block.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cmd = parse_action(line, dialect).map_err(|e| ActionError::AtLine {
            line: line_no + 1,
            source: Box::new(e),
        })?;
        commands.push(cmd);
    }
    Ok(commands)
}

/// The content of the last ``` fence pair; an unterminated final fence runs
/// to the end of the text.
fn last_fenced_block(text: &str) -> Option<&str> {
    let mut spans = Vec::new();
    let mut rest = text;
    let mut offset = 0;
    while let Some(open) = rest.find("```") {
        let content_start = offset + open + 3;
        match rest[open + 3..].find("```") {
            Some(close) => {
                spans.push((content_start, content_start + close));
                let consumed = open + 3 + close + 3;
                offset += consumed;
                rest = &rest[consumed..];
            }
            None => {
                spans.push((content_start, text.len()));
                break;
            }
        }
    }
    spans.last().map(|&(a, b)| &text[a..b])
}

/// Scroll distance in pixels for scroll and horizontal_scroll emissions.
/// The grammar has no magnitude argument, so the distance is a fixed,
/// documented constant.
pub const SCROLL_STEP_PX: i32 = 300;

fn py_quote(text: &str) -> String {
    let escaped = text.replace('\\', "\\\\").replace('\'', "\\'");
    format!("'{escaped}'")
}

fn py_keys(args: &[String]) -> String {
    args.iter()
        .map(|a| py_quote(a))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Resolves a derived id to its element and click point.
pub fn resolve_target<'a>(
    id: u64,
    view: &OrderedView,
    state: &'a EnvironmentState,
) -> Result<(&'a Element, (u32, u32)), ActionError> {
    let id32 = u32::try_from(id).map_err(|_| ActionError::UnknownId { id })?;
    let index = view
        .index_of_id(id32)
        .ok_or(ActionError::UnknownId { id })?;
    let element = &state.elements[index];
    Ok((element, element.bbox.center()))
}

/// Emits one line of automation code for a command. Mouse verbs resolve
/// their id to the element center; keyboard verbs pass arguments through
/// verbatim; browser-level verbs emit symbolic `browser.*` pseudo-calls.
pub fn emit_pyautogui(
    cmd: &ActionCommand,
    view: &OrderedView,
    state: &EnvironmentState,
    dialect: Dialect,
) -> Result<String, ActionError> {
    if !cmd.verb.in_dialect(dialect) {
        return Err(ActionError::UnsupportedVerb {
            verb: cmd.verb.token(),
            dialect,
        });
    }
    let center = |id: Option<u64>| -> Result<(u32, u32), ActionError> {
        let id = id.ok_or(ActionError::ArityError {
            verb: cmd.verb.token(),
            expected: "an element id",
            got: 0,
        })?;
        resolve_target(id, view, state).map(|(_, c)| c)
    };
    let line = match cmd.verb {
        Verb::Click => {
            let (x, y) = center(cmd.target_id)?;
            format!("pyautogui.click({x}, {y})")
        }
        Verb::DoubleClick => {
            let (x, y) = center(cmd.target_id)?;
            format!("pyautogui.doubleClick({x}, {y})")
        }
        Verb::RightClick => {
            let (x, y) = center(cmd.target_id)?;
            format!("pyautogui.rightClick({x}, {y})")
        }
        Verb::Hover => {
            let (x, y) = center(cmd.target_id)?;
            format!("pyautogui.moveTo({x}, {y})")
        }
        Verb::Drag => {
            let (x, y) = center(cmd.target_id)?;
            format!("pyautogui.dragTo({x}, {y})")
        }
        Verb::Scroll => {
            let amount = if cmd.args[0].eq_ignore_ascii_case("up") {
                SCROLL_STEP_PX
            } else {
                -SCROLL_STEP_PX
            };
            format!("pyautogui.scroll({amount})")
        }
        Verb::HorizontalScroll => {
            let amount = if cmd.args[0].eq_ignore_ascii_case("right") {
                SCROLL_STEP_PX
            } else {
                -SCROLL_STEP_PX
            };
            format!("pyautogui.hscroll({amount})")
        }
        Verb::Press => format!("pyautogui.press({})", py_quote(&cmd.args[0])),
        Verb::Hotkey => format!("pyautogui.hotkey({})", py_keys(&cmd.args)),
        Verb::Write => format!("pyautogui.write({})", py_quote(&cmd.args[0])),
        Verb::Type => match dialect {
            Dialect::OmniAct => format!("pyautogui.write({})", py_quote(&cmd.args[0])),
            Dialect::Vwa => {
                let (x, y) = center(cmd.target_id)?;
                format!(
                    "pyautogui.click({x}, {y}); pyautogui.write({})",
                    py_quote(&cmd.args[0])
                )
            }
        },
        Verb::Goto => format!("browser.goto({})", py_quote(&cmd.args[0])),
        Verb::NewTab => "browser.new_tab()".to_string(),
        Verb::TabFocus => format!("browser.tab_focus({})", cmd.args[0].trim()),
        Verb::TabClose => "browser.tab_close()".to_string(),
        Verb::GoBack => "browser.go_back()".to_string(),
        Verb::GoForward => "browser.go_forward()".to_string(),
        Verb::Stop => format!(
            "stop({})",
            cmd.args.first().map(|a| py_quote(a)).unwrap_or_default()
        ),
    };
    Ok(line)
}
