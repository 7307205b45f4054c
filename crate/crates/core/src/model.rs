//! Element and screen-state model, plus the element-file ingestion boundary.
//!
//! Elements arrive as data (from a detector, an annotation file, or the DOM
//! extractor); this module never runs detection itself. Numeric ids are *not*
//! stored on elements — they are derived from an ordering so the two can
//! never diverge (see [`crate::ordering`]).

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from element-file ingestion and model construction.
#[derive(Debug, Error)]
pub enum ModelError {
    /// The file does not conform to the element-file schema. The message
    /// carries the offending line/column or field name.
    #[error("malformed element file: {0}")]
    MalformedFile(String),
    /// Box coordinates violate an invariant (x2 < x1, negative, non-finite).
    #[error("invalid bounding box [{x1}, {y1}, {x2}, {y2}]: {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },
    /// An interactable element carried an empty action set (or vice versa).
    #[error("element {index}: {reason}")]
    InconsistentInteractability { index: usize, reason: &'static str },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Axis-aligned pixel box, origin at the top-left of the screenshot,
/// y increasing downward. Immutable and always valid once constructed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, ModelError> {
        let err = |reason| ModelError::InvalidBox {
            x1,
            y1,
            x2,
            y2,
            reason,
        };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(err("coordinates must be finite"));
        }
        if x1 < 0.0 || y1 < 0.0 {
            return Err(err("coordinates must be non-negative"));
        }
        if x2 < x1 {
            return Err(err("x2 < x1"));
        }
        if y2 < y1 {
            return Err(err("y2 < y1"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    /// Center in integer pixels, rounded half-up. This is the coordinate
    /// emitted automation code clicks on: the center of (50,50)-(100,100)
    /// is (75,75).
    pub fn center(&self) -> (u32, u32) {
        // Coordinates are non-negative, so round() (half away from zero)
        // is half-up here.
        let (cx, cy) = self.center_f64();
        (cx.round() as u32, cy.round() as u32)
    }

    /// Exact (unrounded) center. Ordering methods use this; division by two
    /// is exact in binary floating point, so integer-coordinate boxes give
    /// exact rational centers.
    pub fn center_f64(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }

    /// Clamp to `[0, w] x [0, h]`. Returns the clamped box and whether
    /// anything changed.
    pub fn clamp_to(&self, viewport: Viewport) -> (Self, bool) {
        let w = f64::from(viewport.width);
        let h = f64::from(viewport.height);
        let clamped = Self {
            x1: self.x1.min(w),
            y1: self.y1.min(h),
            x2: self.x2.min(w),
            y2: self.y2.min(h),
        };
        let changed = clamped != *self;
        (clamped, changed)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Screen dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Viewport {
    pub width: u32,
    pub height: u32,
}

impl Viewport {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }
}

/// One GUI element: the interactability flag, its box, the actions it
/// affords, and its descriptive attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub interactable: bool,
    pub bbox: BoundingBox,
    /// Action names this element affords; empty iff non-interactable.
    pub actions: BTreeSet<String>,
    pub tag: Option<String>,
    pub text: Option<String>,
    pub alt_text: Option<String>,
    pub caption: Option<String>,
    /// Marks OCR/static text entries (ingested with tag "StaticText").
    pub is_static_text: bool,
}

impl Element {
    /// True when the stored tag is IMG (any case); such elements compose
    /// their listed text from alt text and caption.
    pub fn is_image(&self) -> bool {
        self.tag
            .as_deref()
            .is_some_and(|t| t.eq_ignore_ascii_case("img"))
    }
}

/// The element set for one screen, in ingestion order, plus the viewport.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentState {
    pub elements: Vec<Element>,
    pub viewport: Viewport,
    pub screenshot_path: Option<PathBuf>,
}

impl EnvironmentState {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Exact element centers in ingestion order (ordering-method input).
    pub fn centers(&self) -> Vec<[f64; 2]> {
        self.elements
            .iter()
            .map(|e| {
                let (x, y) = e.bbox.center_f64();
                [x, y]
            })
            .collect()
    }
}

/// A bijection on `0..n`: the sequence in which elements are presented.
///
/// Stored zero-based; element files and ordering files use one-based
/// indices at the serialization boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

/// A proposed permutation was not a bijection.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PermutationError {
    #[error("permutation of length {len} contains out-of-range index {index}")]
    OutOfRange { index: usize, len: usize },
    #[error("permutation contains index {index} more than once")]
    Duplicate { index: usize },
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// Validates that `indices` is a bijection on `0..indices.len()`.
    pub fn new(indices: Vec<usize>) -> Result<Self, PermutationError> {
        let n = indices.len();
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(PermutationError::OutOfRange { index: i, len: n });
            }
            if seen[i] {
                return Err(PermutationError::Duplicate { index: i });
            }
            seen[i] = true;
        }
        Ok(Self(indices))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    /// One-based view, the form used in ordering files.
    pub fn to_one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn from_one_based(indices: &[usize]) -> Result<Self, PermutationError> {
        let n = indices.len();
        let mut zero = Vec::with_capacity(n);
        for &i in indices {
            if i == 0 {
                return Err(PermutationError::OutOfRange { index: 0, len: n });
            }
            zero.push(i - 1);
        }
        Self::new(zero)
    }
}

/// A single invariant violation found by [`validate_state`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Interactable element with an empty action set.
    InconsistentInteractability { index: usize },
    /// Non-interactable element carrying actions.
    NonInteractableWithActions { index: usize },
    /// Box extends past the viewport (the loader clamps these; a
    /// hand-constructed state may not have been).
    OutOfViewport { index: usize, bbox: [f64; 4] },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InconsistentInteractability { index } => write!(
                f,
                "element {index}: interactable but affords no actions"
            ),
            Violation::NonInteractableWithActions { index } => write!(
                f,
                "element {index}: non-interactable but carries actions"
            ),
            Violation::OutOfViewport { index, bbox } => write!(
                f,
                "element {index}: box {bbox:?} extends past the viewport"
            ),
        }
    }
}

/// Violation list; empty iff the state is valid. Violations are data,
/// not failures.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every state invariant and lists each violation.
pub fn validate_state(state: &EnvironmentState) -> ValidationReport {
    let mut violations = Vec::new();
    for (index, el) in state.elements.iter().enumerate() {
        if el.interactable && el.actions.is_empty() {
            violations.push(Violation::InconsistentInteractability { index });
        }
        if !el.interactable && !el.actions.is_empty() {
            violations.push(Violation::NonInteractableWithActions { index });
        }
        let (_, changed) = el.bbox.clamp_to(state.viewport);
        if changed {
            violations.push(Violation::OutOfViewport {
                index,
                bbox: el.bbox.as_array(),
            });
        }
    }
    ValidationReport { violations }
}

/// A box the loader clamped to the viewport.
#[derive(Debug, Clone, PartialEq)]
pub struct ClampWarning {
    pub index: usize,
    pub original: [f64; 4],
    pub clamped: [f64; 4],
}

impl fmt::Display for ClampWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "element {}: box {:?} clamped to viewport as {:?}",
            self.index, self.original, self.clamped
        )
    }
}

/// A loaded state plus any clamp warnings the loader produced.
#[derive(Debug, Clone)]
pub struct LoadedState {
    pub state: EnvironmentState,
    pub warnings: Vec<ClampWarning>,
}

// ---------------------------------------------------------------------------
// Element-file schema. Field names are part of the external contract;
// unknown fields are rejected.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ElementFile {
    viewport: ViewportRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    screenshot: Option<String>,
    elements: Vec<ElementRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewportRecord {
    w: u32,
    h: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ElementRecord {
    interactable: bool,
    bbox: [f64; 4],
    actions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alt_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    caption: Option<String>,
    #[serde(default, rename = "static")]
    is_static: bool,
}

/// Parses and validates an element file.
///
/// Element order equals file order. Boxes extending past the viewport are
/// clamped with a warning; schema violations, invalid boxes, and
/// interactability inconsistencies are rejected.
pub fn load_elements(path: &Path) -> Result<LoadedState, ModelError> {
    let raw = std::fs::read_to_string(path)?;
    parse_elements(&raw)
}

/// [`load_elements`] over an in-memory document.
pub fn parse_elements(raw: &str) -> Result<LoadedState, ModelError> {
    let file: ElementFile =
        serde_json::from_str(raw).map_err(|e| ModelError::MalformedFile(e.to_string()))?;
    let viewport = Viewport::new(file.viewport.w, file.viewport.h);
    let mut elements = Vec::with_capacity(file.elements.len());
    let mut warnings = Vec::new();
    for (index, rec) in file.elements.into_iter().enumerate() {
        let [x1, y1, x2, y2] = rec.bbox;
        let bbox = BoundingBox::new(x1, y1, x2, y2)?;
        let (bbox, changed) = bbox.clamp_to(viewport);
        if changed {
            warnings.push(ClampWarning {
                index,
                original: [x1, y1, x2, y2],
                clamped: bbox.as_array(),
            });
        }
        let actions: BTreeSet<String> = rec.actions.into_iter().collect();
        if rec.interactable && actions.is_empty() {
            return Err(ModelError::InconsistentInteractability {
                index,
                reason: "interactable element with an empty action set",
            });
        }
        if !rec.interactable && !actions.is_empty() {
            return Err(ModelError::InconsistentInteractability {
                index,
                reason: "non-interactable element with a nonempty action set",
            });
        }
        elements.push(Element {
            interactable: rec.interactable,
            bbox,
            actions,
            tag: rec.tag,
            text: rec.text,
            alt_text: rec.alt_text,
            caption: rec.caption,
            is_static_text: rec.is_static,
        });
    }
    let state = EnvironmentState {
        elements,
        viewport,
        screenshot_path: file.screenshot.map(PathBuf::from),
    };
    Ok(LoadedState { state, warnings })
}

/// Serializes a state back to the element-file schema.
pub fn serialize_elements(state: &EnvironmentState) -> String {
    let file = ElementFile {
        viewport: ViewportRecord {
            w: state.viewport.width,
            h: state.viewport.height,
        },
        screenshot: state
            .screenshot_path
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned()),
        elements: state
            .elements
            .iter()
            .map(|el| ElementRecord {
                interactable: el.interactable,
                bbox: el.bbox.as_array(),
                actions: el.actions.iter().cloned().collect(),
                tag: el.tag.clone(),
                text: el.text.clone(),
                alt_text: el.alt_text.clone(),
                caption: el.caption.clone(),
                is_static: el.is_static_text,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("element file serialization cannot fail")
}

pub fn save_elements(state: &EnvironmentState, path: &Path) -> Result<(), ModelError> {
    let mut doc = serialize_elements(state);
    doc.push('\n');
    std::fs::write(path, doc)?;
    Ok(())
}
