#![allow(dead_code)]

use loadbench::data::{Batch, NormScope, PreparedDataset, SplitKind, SplitSpec, WindowSpec};
use loadbench::synth::{generate, SynthSpec};

/// Normalized synthetic pool with the given window.
pub fn prepared(lookback: usize, horizon: usize, n_buildings: usize, n_steps: usize, seed: u64) -> PreparedDataset {
    let spec = SynthSpec { n_buildings, n_types: n_buildings.min(14), n_steps, seed, ..Default::default() };
    let records = generate(&spec).unwrap();
    PreparedDataset::new(&records, &SplitSpec::default(), NormScope::Global, WindowSpec::new(lookback, horizon).unwrap())
        .unwrap()
}

/// `n` train windows spread over the split.
pub fn train_batch(data: &PreparedDataset, n: usize) -> Batch {
    let set = data.window_set(SplitKind::Train).unwrap();
    let stride = (set.len() / n).max(1);
    let idx: Vec<usize> = (0..n).map(|i| (i * stride) % set.len()).collect();
    set.batch(&idx)
}
