//! Writes synthetic interchange directories from seeded fixtures.

use std::path::Path;

use attnspec_core::fixtures::{synth_qk, synth_weights, FixtureSpec};
use attnspec_core::HeadId;

use crate::tensor_io::{write_blob, write_manifest, Dtype, Kind, Manifest, ManifestEntry, TensorIoError, TextInfo};

/// How many layers, heads and texts a fixture directory contains.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureLayout {
    pub model_name: String,
    pub layers: u32,
    pub heads: u32,
    pub texts: u32,
    /// Query heads per KV head; only affects the recorded `kv_head`.
    pub kv_group_size: u32,
    pub dtype: Dtype,
}

impl Default for FixtureLayout {
    fn default() -> Self {
        Self { model_name: "fixture".into(), layers: 1, heads: 2, texts: 2, kv_group_size: 1, dtype: Dtype::F64 }
    }
}

/// Stream number of one (layer, head, text) unit.
pub fn unit_stream(layer: u32, head: u32, text: u32) -> u64 {
    (u64::from(layer) << 40) | (u64::from(head) << 20) | u64::from(text)
}

pub fn text_id(index: u32) -> String {
    format!("text{index:02}")
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error(transparent)]
    Spec(#[from] attnspec_core::Error),
    #[error(transparent)]
    Io(#[from] TensorIoError),
}

/// Writes a complete interchange directory that `read_manifest` accepts.
pub fn write_fixture_manifest(
    spec: &FixtureSpec,
    layout: &FixtureLayout,
    dir: &Path,
) -> Result<Manifest, FixtureError> {
    spec.validate()?;
    let mut manifest = Manifest::new(layout.model_name.clone(), spec.model_dim, spec.head_dim, spec.context_length);
    manifest.texts =
        (0..layout.texts).map(|t| TextInfo { text_id: text_id(t), token_count: spec.context_length }).collect();

    let group = layout.kv_group_size.max(1);
    for layer in 0..layout.layers {
        for head in 0..layout.heads {
            let kv_head = head / group;
            let entry = |kind: Kind, text: Option<String>, file: String| ManifestEntry {
                kind,
                layer,
                query_head: head,
                kv_head,
                rows: if kind.is_activation() { spec.context_length } else { spec.head_dim },
                cols: if kind.is_activation() { spec.head_dim } else { spec.model_dim },
                text_id: text,
                dtype: layout.dtype,
                file,
            };
            for t in 0..layout.texts {
                let unit = spec.clone().with_stream(unit_stream(layer, head, t));
                let (q, k) = synth_qk(&unit)?;
                let id = text_id(t);
                for (kind, m, tag) in [(Kind::Query, &q, "q"), (Kind::Key, &k, "k")] {
                    let e = entry(kind, Some(id.clone()), format!("L{layer:02}/H{head:02}/{id}.{tag}.bin"));
                    write_blob(dir, &e, m)?;
                    manifest.entries.push(e);
                }
            }
            if spec.head_dim < spec.model_dim {
                let unit = spec.clone().with_stream(unit_stream(layer, head, 0));
                let pair = synth_weights(&unit, HeadId { layer, query_head: head, kv_head })?;
                for (kind, m, tag) in [(Kind::WeightQ, pair.w_q(), "w_q"), (Kind::WeightK, pair.w_k(), "w_k")] {
                    let e = entry(kind, None, format!("L{layer:02}/H{head:02}/{tag}.bin"));
                    write_blob(dir, &e, m)?;
                    manifest.entries.push(e);
                }
            }
        }
    }
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}
