//! The ordering functions: identity (pre-order), seeded random, raster
//! bands, and t-SNE, plus id derivation.
//!
//! An ordering is a permutation of element indices. Numeric ids are derived
//! from it — the k-th interactable element in presentation order gets id k
//! (1-based) — so ids always reflect position and can never drift from the
//! ordering.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EnvironmentState, Permutation, PermutationError};
use crate::tsne::{run_tsne, TsneError, TsneParams};

#[derive(Debug, Error)]
pub enum OrderingError {
    #[error("invalid permutation: {0}")]
    InvalidPermutation(#[from] PermutationError),
    #[error("permutation length {got} does not match element count {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("embedding diverged: {0}")]
    EmbeddingDiverged(#[from] TsneError),
    #[error("malformed ordering file: {0}")]
    MalformedFile(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One of the supported ordering strategies.
#[derive(Debug, Clone, PartialEq)]
pub enum OrderingMethod {
    /// File order as-is; for extractor output this is the DOM pre-order.
    PreorderIdentity,
    Random { seed: u64 },
    Raster { band_height: u32 },
    Tsne { params: TsneParams, seed: u64 },
}

impl OrderingMethod {
    pub fn name(&self) -> &'static str {
        match self {
            OrderingMethod::PreorderIdentity => "preorder",
            OrderingMethod::Random { .. } => "random",
            OrderingMethod::Raster { .. } => "raster",
            OrderingMethod::Tsne { .. } => "tsne",
        }
    }
}

/// Default raster band height in pixels.
pub const DEFAULT_BAND_HEIGHT: u32 = 8;

/// A permutation applied to a state: presentation order plus the derived
/// ids (interactable elements only, 1-based, in presentation order).
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedView {
    pub permutation: Permutation,
    /// Element index (0-based) to derived numeric id.
    pub ids: BTreeMap<usize, u32>,
}

impl OrderedView {
    /// Reverse lookup: id to element index.
    pub fn index_of_id(&self, id: u32) -> Option<usize> {
        self.ids
            .iter()
            .find(|&(_, &v)| v == id)
            .map(|(&index, _)| index)
    }

    pub fn interactable_count(&self) -> usize {
        self.ids.len()
    }
}

pub fn order_identity(state: &EnvironmentState) -> Permutation {
    Permutation::identity(state.len())
}

/// Uniform random permutation via Fisher-Yates over a seeded stream.
/// Identical seeds give identical permutations.
pub fn order_random(state: &EnvironmentState, seed: u64) -> Permutation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled_identity(state.len(), &mut rng)
}

pub(crate) fn shuffled_identity(n: usize, rng: &mut ChaCha8Rng) -> Permutation {
    let mut indices: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    Permutation::new(indices).expect("shuffle of identity is a bijection")
}

/// Left-to-right, top-to-bottom scan over y-bands: sort lexicographically by
/// (⌊cy/band_height⌋, cx) on exact box centers, original order breaking ties.
pub fn order_raster(state: &EnvironmentState, band_height: u32) -> Permutation {
    debug_assert!(band_height >= 1);
    let band = f64::from(band_height.max(1));
    let keys: Vec<(f64, f64)> = state
        .elements
        .iter()
        .map(|e| {
            let (cx, cy) = e.bbox.center_f64();
            ((cy / band).floor(), cx)
        })
        .collect();
    let mut indices: Vec<usize> = (0..state.len()).collect();
    indices.sort_by(|&a, &b| {
        keys[a]
            .partial_cmp(&keys[b])
            .expect("centers of valid boxes are finite")
    });
    Permutation::new(indices).expect("sort of identity is a bijection")
}

/// Orders elements by their 1-D t-SNE embedding of box centers, ascending in
/// z with original order breaking ties. States with at most two elements are
/// returned in identity order (the embedding is degenerate there).
pub fn order_tsne(
    state: &EnvironmentState,
    params: &TsneParams,
    seed: u64,
) -> Result<Permutation, OrderingError> {
    order_tsne_traced(state, params, seed).map(|(perm, _)| perm)
}

/// [`order_tsne`], also returning the per-iteration KL trace when an
/// embedding was actually run.
pub fn order_tsne_traced(
    state: &EnvironmentState,
    params: &TsneParams,
    seed: u64,
) -> Result<(Permutation, Option<Vec<f64>>), OrderingError> {
    let n = state.len();
    if n <= 2 {
        return Ok((Permutation::identity(n), None));
    }
    let centers = state.centers();
    let result = run_tsne(&centers, params, seed)?;
    let z = result.embedding;
    let mut indices: Vec<usize> = (0..n).collect();
    indices.sort_by(|&a, &b| {
        z[a].partial_cmp(&z[b])
            .expect("diverged embeddings are rejected before sorting")
    });
    Ok((
        Permutation::new(indices).expect("sort of identity is a bijection"),
        Some(result.kl_trace),
    ))
}

/// Computes the permutation for a method.
pub fn compute_ordering(
    state: &EnvironmentState,
    method: &OrderingMethod,
) -> Result<Permutation, OrderingError> {
    match method {
        OrderingMethod::PreorderIdentity => Ok(order_identity(state)),
        OrderingMethod::Random { seed } => Ok(order_random(state, *seed)),
        OrderingMethod::Raster { band_height } => Ok(order_raster(state, *band_height)),
        OrderingMethod::Tsne { params, seed } => order_tsne(state, params, *seed),
    }
}

/// Applies a permutation to a state, deriving ids for the interactable
/// elements: 1..k in presentation order.
pub fn apply_ordering(
    state: &EnvironmentState,
    permutation: &Permutation,
) -> Result<OrderedView, OrderingError> {
    if permutation.len() != state.len() {
        return Err(OrderingError::LengthMismatch {
            got: permutation.len(),
            expected: state.len(),
        });
    }
    let mut ids = BTreeMap::new();
    let mut next_id = 1u32;
    for index in permutation.iter() {
        if state.elements[index].interactable {
            ids.insert(index, next_id);
            next_id += 1;
        }
    }
    Ok(OrderedView {
        permutation: permutation.clone(),
        ids,
    })
}

// ---------------------------------------------------------------------------
// Ordering file
// ---------------------------------------------------------------------------

/// On-disk ordering document. `perm` and the `ids` keys are one-based
/// element indices (file order), matching the element-file convention.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderingDoc {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub params: serde_json::Value,
    pub perm: Vec<usize>,
    pub ids: BTreeMap<String, u32>,
}

impl OrderingDoc {
    pub fn new(method: &OrderingMethod, view: &OrderedView) -> Self {
        let (seed, params) = match method {
            OrderingMethod::PreorderIdentity => (None, serde_json::Value::Null),
            OrderingMethod::Random { seed } => (Some(*seed), serde_json::Value::Null),
            OrderingMethod::Raster { band_height } => (
                None,
                serde_json::json!({ "band_height": band_height }),
            ),
            OrderingMethod::Tsne { params, seed } => (
                Some(*seed),
                serde_json::to_value(params).expect("params serialize"),
            ),
        };
        OrderingDoc {
            method: method.name().to_string(),
            seed,
            params,
            perm: view.permutation.to_one_based(),
            ids: view
                .ids
                .iter()
                .map(|(&index, &id)| ((index + 1).to_string(), id))
                .collect(),
        }
    }

    pub fn permutation(&self) -> Result<Permutation, OrderingError> {
        Ok(Permutation::from_one_based(&self.perm)?)
    }

    /// The id map keyed by 0-based element index.
    pub fn id_map(&self) -> Result<BTreeMap<usize, u32>, OrderingError> {
        let mut out = BTreeMap::new();
        for (key, &id) in &self.ids {
            let one_based: usize = key.parse().map_err(|_| {
                OrderingError::MalformedFile(format!("id map key {key:?} is not an index"))
            })?;
            if one_based == 0 {
                return Err(OrderingError::MalformedFile(
                    "id map keys are one-based".to_string(),
                ));
            }
            out.insert(one_based - 1, id);
        }
        Ok(out)
    }
}

pub fn save_ordering(doc: &OrderingDoc, path: &Path) -> Result<(), OrderingError> {
    let mut raw = serde_json::to_string_pretty(doc).expect("ordering doc serialize");
    raw.push('\n');
    std::fs::write(path, raw)?;
    Ok(())
}

pub fn load_ordering(path: &Path) -> Result<OrderingDoc, OrderingError> {
    let raw = std::fs::read_to_string(path)?;
    serde_json::from_str(&raw).map_err(|e| OrderingError::MalformedFile(e.to_string()))
}
