//! Toolkit for turning unordered GUI element sets into ordered agent
//! observations, and for round-tripping agent actions back to coordinates.
//!
//! The pipeline:
//!
//! 1. [`model`] — elements, bounding boxes, and screen states, plus the
//!    element-file ingestion boundary.
//! 2. [`dom`] — tolerant HTML parsing and pre-order element extraction.
//! 3. [`ordering`] / [`tsne`] — permutations over elements: identity
//!    (pre-order), seeded random, raster bands, and 1-D t-SNE.
//! 4. [`observe`] / [`som`] — text serialization with ablation masks and
//!    Set-of-Mark screenshot annotation.
//! 5. [`action`] — the high-level action grammar and pyautogui emission.
//! 6. [`prompt`] — prompt assembly and the LM completion interface.
//! 7. [`score`] — sequence/action scoring of predictions against gold.

pub mod action;
pub mod dom;
pub mod model;
pub mod observe;
pub mod ordering;
pub mod prompt;
pub mod score;
pub mod seeds;
pub mod som;
pub mod tsne;

pub use action::{ActionCommand, Dialect, Verb};
pub use model::{BoundingBox, Element, EnvironmentState, Permutation, Viewport};
pub use observe::{AblationMask, Observation};
pub use ordering::{OrderedView, OrderingMethod};
pub use tsne::TsneParams;
