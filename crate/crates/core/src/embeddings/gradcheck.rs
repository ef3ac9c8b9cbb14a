//! Finite-difference diagnostics for the skipgram objective.
//!
//! Exposes the batch loss over a frozen set of (center, context, negatives)
//! pairs together with the analytic gradients the trainer applies, so tests
//! can compare them against central differences coordinate by coordinate.

use std::collections::BTreeMap;

use super::train::pair_stats;
use super::EmbeddingModel;

/// One frozen training pair: negatives are pinned rather than sampled.
#[derive(Debug, Clone)]
pub struct MicroPair {
    pub center: u32,
    pub bin: u16,
    pub community: Option<u16>,
    pub context: u32,
    pub negatives: Vec<u32>,
}

/// Addressable parameter vectors of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Slot {
    Base(u32),
    Temporal(u32, u16),
    Community(u32, u16, u16),
    Output(u32),
}

/// Total negative-sampling loss of the frozen batch at the model's current
/// parameters.
pub fn batch_loss(model: &EmbeddingModel, pairs: &[MicroPair]) -> f64 {
    let dim = model.dim();
    let mut x = vec![0.0; dim];
    let mut u_ctx = vec![0.0; dim];
    let mut negs_flat = Vec::new();
    let mut g_negs = Vec::new();
    let mut total = 0.0;
    for pair in pairs {
        model.compose_into(pair.center, pair.bin, pair.community, &mut x);
        model.output.read_row(pair.context as usize, &mut u_ctx);
        negs_flat.clear();
        for &neg in &pair.negatives {
            let start = negs_flat.len();
            negs_flat.resize(start + dim, 0.0);
            model.output.read_row(neg as usize, &mut negs_flat[start..]);
        }
        let (loss, _) = pair_stats(&x, &u_ctx, &negs_flat, dim, &mut g_negs);
        total += loss;
    }
    total
}

/// Analytic batch-loss gradients per parameter slot, using the same pair
/// math as the trainer. Residual slots appear only where the model actually
/// stores an entry, mirroring what a training step would touch.
pub fn batch_grads(model: &EmbeddingModel, pairs: &[MicroPair]) -> BTreeMap<Slot, Vec<f64>> {
    let dim = model.dim();
    let mut grads: BTreeMap<Slot, Vec<f64>> = BTreeMap::new();
    let mut x = vec![0.0; dim];
    let mut u_ctx = vec![0.0; dim];
    let mut negs_flat = Vec::new();
    let mut g_negs = Vec::new();

    let add = |grads: &mut BTreeMap<Slot, Vec<f64>>, slot: Slot, coef: f64, v: &[f64]| {
        let entry = grads.entry(slot).or_insert_with(|| vec![0.0; dim]);
        for (e, &x) in entry.iter_mut().zip(v) {
            *e += coef * x;
        }
    };

    for pair in pairs {
        model.compose_into(pair.center, pair.bin, pair.community, &mut x);
        model.output.read_row(pair.context as usize, &mut u_ctx);
        negs_flat.clear();
        for &neg in &pair.negatives {
            let start = negs_flat.len();
            negs_flat.resize(start + dim, 0.0);
            model.output.read_row(neg as usize, &mut negs_flat[start..]);
        }
        let (_, g_pos) = pair_stats(&x, &u_ctx, &negs_flat, dim, &mut g_negs);

        let mut gx = vec![0.0; dim];
        for (gxi, &ui) in gx.iter_mut().zip(&u_ctx) {
            *gxi += g_pos * ui;
        }
        for (i, u) in negs_flat.chunks_exact(dim).enumerate() {
            for (gxi, &ui) in gx.iter_mut().zip(u) {
                *gxi += g_negs[i] * ui;
            }
        }

        add(&mut grads, Slot::Base(pair.center), 1.0, &gx);
        if model.temporal.row_of(&(pair.center, pair.bin)).is_some() {
            add(&mut grads, Slot::Temporal(pair.center, pair.bin), 1.0, &gx);
        }
        if let Some(s) = pair.community {
            if model.community.row_of(&(pair.center, pair.bin, s)).is_some() {
                add(&mut grads, Slot::Community(pair.center, pair.bin, s), 1.0, &gx);
            }
        }
        add(&mut grads, Slot::Output(pair.context), g_pos, &x);
        for (i, &neg) in pair.negatives.iter().enumerate() {
            add(&mut grads, Slot::Output(neg), g_negs[i], &x);
        }
    }
    grads
}

/// Read one parameter coordinate.
pub fn get_param(model: &EmbeddingModel, slot: Slot, coord: usize) -> f64 {
    match slot {
        Slot::Base(v) => model.base.get(v as usize, coord),
        Slot::Output(v) => model.output.get(v as usize, coord),
        Slot::Temporal(v, t) => {
            let row = model.temporal.row_of(&(v, t)).expect("temporal entry exists");
            model.temporal.data.get(row, coord)
        }
        Slot::Community(v, t, s) => {
            let row = model.community.row_of(&(v, t, s)).expect("community entry exists");
            model.community.data.get(row, coord)
        }
    }
}

/// Overwrite one parameter coordinate.
pub fn set_param(model: &EmbeddingModel, slot: Slot, coord: usize, value: f64) {
    match slot {
        Slot::Base(v) => model.base.set(v as usize, coord, value),
        Slot::Output(v) => model.output.set(v as usize, coord, value),
        Slot::Temporal(v, t) => {
            let row = model.temporal.row_of(&(v, t)).expect("temporal entry exists");
            model.temporal.data.set(row, coord, value)
        }
        Slot::Community(v, t, s) => {
            let row = model.community.row_of(&(v, t, s)).expect("community entry exists");
            model.community.data.set(row, coord, value)
        }
    }
}

/// Central-difference gradient of the batch loss for one coordinate.
pub fn central_difference(
    model: &EmbeddingModel,
    pairs: &[MicroPair],
    slot: Slot,
    coord: usize,
    h: f64,
) -> f64 {
    let original = get_param(model, slot, coord);
    set_param(model, slot, coord, original + h);
    let plus = batch_loss(model, pairs);
    set_param(model, slot, coord, original - h);
    let minus = batch_loss(model, pairs);
    set_param(model, slot, coord, original);
    (plus - minus) / (2.0 * h)
}
