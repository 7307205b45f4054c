//! Text serialization of ordered element views, ablation masks, and
//! observation assembly.
//!
//! One line per element in presentation order:
//!
//! ```text
//! [1] [IMG] [alt text, caption]
//! [] [StaticText] [text]
//! ```
//!
//! Interactable elements carry their derived id in the first bracket;
//! non-interactable lines leave it empty. Image content is the alt text and
//! caption joined by ", "; everything else lists its HTML/OCR text. The
//! ablation mask removes individual attributes without changing the
//! three-bracket grammar.

use std::collections::BTreeMap;

use image::RgbaImage;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Element, EnvironmentState};
use crate::ordering::{apply_ordering, OrderedView, OrderingError};
use crate::som::render_som;

#[derive(Debug, Error)]
pub enum ObserveError {
    /// The view's id map disagrees with the ids derived from its permutation.
    #[error("inconsistent view: {0}")]
    InconsistentView(String),
    #[error("observation requires a screenshot but none was supplied")]
    MissingScreenshot,
    #[error("screenshot is {got_w}x{got_h} but the viewport is {want_w}x{want_h}")]
    DimensionMismatch {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error(transparent)]
    Ordering(#[from] OrderingError),
}

/// Attribute switches for the representation ablations. All attributes are
/// included by default; `shuffle_order` replaces the view's ordering with a
/// fresh seeded random one (ids re-derived).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationMask {
    pub include_tag: bool,
    pub include_captions: bool,
    pub include_alt_text: bool,
    pub include_interact_text: bool,
    pub include_static_text: bool,
    pub shuffle_order: bool,
    pub shuffle_seed: u64,
    pub include_text_representation: bool,
    pub include_screenshot: bool,
    pub include_som: bool,
}

impl Default for AblationMask {
    fn default() -> Self {
        Self {
            include_tag: true,
            include_captions: true,
            include_alt_text: true,
            include_interact_text: true,
            include_static_text: true,
            shuffle_order: false,
            shuffle_seed: 0,
            include_text_representation: true,
            include_screenshot: true,
            include_som: true,
        }
    }
}

/// One serialized step: the text listing, the (optionally annotated) image,
/// and the id-to-element map, all derived from the same ordering.
#[derive(Debug, Clone)]
pub struct Observation {
    pub text: Option<String>,
    pub image: Option<RgbaImage>,
    pub id_map: BTreeMap<u32, usize>,
}

fn check_view(state: &EnvironmentState, view: &OrderedView) -> Result<(), ObserveError> {
    let derived = apply_ordering(state, &view.permutation)?;
    if derived.ids != view.ids {
        return Err(ObserveError::InconsistentView(format!(
            "id map {:?} does not match ids {:?} derived from the ordering",
            view.ids, derived.ids
        )));
    }
    Ok(())
}

/// The view actually used for serialization: the given one, or a freshly
/// shuffled one when the mask removes ordering information.
fn effective_view(
    state: &EnvironmentState,
    view: &OrderedView,
    mask: &AblationMask,
) -> Result<OrderedView, ObserveError> {
    if !mask.shuffle_order {
        return Ok(view.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mask.shuffle_seed);
    let shuffled = crate::ordering::shuffled_identity(state.len(), &mut rng);
    Ok(apply_ordering(state, &shuffled)?)
}

fn text_content(element: &Element, mask: &AblationMask) -> String {
    if element.is_image() {
        let mut parts: Vec<&str> = Vec::new();
        if mask.include_alt_text {
            if let Some(alt) = element.alt_text.as_deref() {
                parts.push(alt);
            }
        }
        if mask.include_captions {
            if let Some(caption) = element.caption.as_deref() {
                parts.push(caption);
            }
        }
        parts.join(", ")
    } else if element.interactable {
        if mask.include_interact_text {
            element.text.clone().unwrap_or_default()
        } else {
            String::new()
        }
    } else {
        element.text.clone().unwrap_or_default()
    }
}

fn render_line(element: &Element, id: Option<u32>, mask: &AblationMask) -> String {
    let id_part = id.map(|v| v.to_string()).unwrap_or_default();
    let tag_part = if !mask.include_tag {
        String::new()
    } else {
        match (&element.tag, element.interactable) {
            (Some(tag), _) => tag.clone(),
            (None, false) => "StaticText".to_string(),
            (None, true) => String::new(),
        }
    };
    format!("[{id_part}] [{tag_part}] [{}]", text_content(element, mask))
}

/// Serializes the view to the text listing, applying the mask. Returns one
/// line per retained element, in presentation order.
pub fn serialize_text(
    view: &OrderedView,
    state: &EnvironmentState,
    mask: &AblationMask,
) -> Result<String, ObserveError> {
    check_view(state, view)?;
    let effective = effective_view(state, view, mask)?;
    let mut lines = Vec::new();
    for index in effective.permutation.iter() {
        let element = &state.elements[index];
        if !element.interactable && !mask.include_static_text {
            continue;
        }
        let id = effective.ids.get(&index).copied();
        lines.push(render_line(element, id, mask));
    }
    Ok(lines.join("\n"))
}

/// Composes an observation: text (iff the mask includes the text
/// representation), image (screenshot, with Set-of-Mark overlay iff
/// included), and the id map. All three derive from the same ordering.
pub fn build_observation(
    state: &EnvironmentState,
    view: &OrderedView,
    mask: &AblationMask,
    screenshot: Option<&RgbaImage>,
) -> Result<Observation, ObserveError> {
    check_view(state, view)?;
    let effective = effective_view(state, view, mask)?;
    // the shuffle already happened; serialize the effective view as-is
    let inner_mask = AblationMask {
        shuffle_order: false,
        ..mask.clone()
    };

    let text = if mask.include_text_representation {
        Some(serialize_text(&effective, state, &inner_mask)?)
    } else {
        None
    };

    let image = if mask.include_screenshot {
        let shot = screenshot.ok_or(ObserveError::MissingScreenshot)?;
        if mask.include_som {
            Some(render_som(shot, &effective, state)?)
        } else {
            Some(shot.clone())
        }
    } else {
        None
    };

    let id_map = effective
        .ids
        .iter()
        .map(|(&index, &id)| (id, index))
        .collect();

    Ok(Observation {
        text,
        image,
        id_map,
    })
}
