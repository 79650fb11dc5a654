//! Moving generated weights onto a different architecture.

use crate::error::{Error, Result};
use crate::rng::stream_indexed;
use crate::zoo::model::init_layer;
use crate::zoo::{ArchKind, Architecture, InitScheme, LayerKind};

/// Re-slices a flat vector of `source` into `target`.
///
/// The convolutional segment of the source (its non-extra conv layers, in
/// order) is poured in order into the target's non-extra conv layers; the
/// source tail that does not fit is dropped and any shortfall is randomly
/// initialized. Fully connected layers are copied by position when shapes
/// agree. Extra layers such as skip projections are randomly initialized
/// with `init`.
pub fn redistribute_weights(vector: &[f32], source: &Architecture, target: &Architecture, init: InitScheme, seed: u64) -> Result<Vec<f32>> {
    if vector.len() != source.param_count() {
        return Err(Error::Length { expected: source.param_count(), found: vector.len() });
    }
    if source.spec.kind != ArchKind::Table3 {
        return Err(Error::config("source", format!("redistribution from {:?} is not supported", source.spec.kind)));
    }
    if source.spec.in_channels != target.spec.in_channels {
        return Err(Error::config("target", "source and target input channels differ"));
    }
    if source.spec.kind == target.spec.kind {
        return Ok(vector.to_vec());
    }
    let ranges = source.layer_ranges();
    let part = |kind: LayerKind| -> Vec<usize> {
        (0..source.layers.len()).filter(|&i| source.layers[i].kind == kind && !source.layers[i].extra).collect()
    };
    let conv_segment: Vec<f32> = part(LayerKind::Conv).iter().flat_map(|&i| vector[ranges[i].0..ranges[i].1].iter().copied()).collect();
    let src_fc = part(LayerKind::Fc);

    let mut out = Vec::with_capacity(target.param_count());
    let mut cursor = 0usize;
    let mut fc_seen = 0usize;
    for (i, l) in target.layers.iter().enumerate() {
        let n = l.param_count();
        let fresh = || init_layer(l, init, &mut stream_indexed(seed, "redistribute-layer", i as u64));
        match (l.kind, l.extra) {
            (_, true) => out.extend(fresh()),
            (LayerKind::Conv, false) => {
                let take = n.min(conv_segment.len().saturating_sub(cursor));
                out.extend_from_slice(&conv_segment[cursor..cursor + take]);
                cursor += take;
                if take < n {
                    out.extend_from_slice(&fresh()[take..]);
                }
            }
            (LayerKind::Fc, false) => {
                let src = src_fc.get(fc_seen).map(|&j| &source.layers[j]);
                fc_seen += 1;
                match src {
                    Some(s) if s.fan_in == l.fan_in && s.fan_out == l.fan_out => {
                        let j = src_fc[fc_seen - 1];
                        out.extend_from_slice(&vector[ranges[j].0..ranges[j].1]);
                    }
                    _ => out.extend(fresh()),
                }
            }
        }
    }
    debug_assert_eq!(out.len(), target.param_count());
    Ok(out)
}
