//! Oracles shared by the integration tests and the acceptance run.

#![allow(dead_code)]

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semnet_core::encoders::{encode_plot, EmbeddingSource, PlotDocument, TokenIndex, Vocabulary};
use semnet_core::memory::{register_memory, run_trace, write_rng, MemoryState, ReadMode, ResetPolicy};
use semnet_core::tensor_core::{Init, ParameterStore};
use semnet_core::Tensor64;

/// Weight of element `j` at index `k` (both 1-based) in a sequence of `len`
/// elements of width `dim`, written over a common denominator.
pub fn position_weight(j: usize, k: usize, len: usize, dim: usize) -> f64 {
    let (j, k, len, dim) = (j as f64, k as f64, len as f64, dim as f64);
    ((len - j) * dim - k * (len - 2.0 * j)) / (len * dim)
}

pub fn brute_force_sequence(rows: &[Vec<f64>]) -> Vec<f64> {
    let len = rows.len();
    let dim = rows[0].len();
    let mut out = vec![0.0; dim];
    for k in 1..=dim {
        for j in 1..=len {
            out[k - 1] += position_weight(j, k, len, dim) * rows[j - 1][k - 1];
        }
    }
    out
}

pub fn brute_force_plot(sentences: &[Vec<usize>], table: &[Vec<f64>]) -> Vec<f64> {
    let sentence_vecs: Vec<Vec<f64>> = sentences
        .iter()
        .map(|s| brute_force_sequence(&s.iter().map(|&id| table[id].clone()).collect::<Vec<_>>()))
        .collect();
    brute_force_sequence(&sentence_vecs)
}

/// Largest absolute difference between the library encoder and the
/// brute-force formula over `docs` random documents.
pub fn encoding_oracle_max_error(docs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..docs {
        let vocab_size = rng.random_range(1..40);
        let dim = rng.random_range(1..24);
        let table: Vec<Vec<f64>> = (0..vocab_size)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let sentences: Vec<Vec<usize>> = (0..rng.random_range(1..9))
            .map(|_| (0..rng.random_range(1..15)).map(|_| rng.random_range(0..vocab_size)).collect())
            .collect();
        let index = TokenIndex::from_tokens((0..vocab_size).map(|i| format!("w{i}"))).unwrap();
        let flat: Vec<f64> = table.iter().flatten().copied().collect();
        let vocab =
            Vocabulary::new(index, Tensor64::new(vec![vocab_size, dim], flat).unwrap(), EmbeddingSource::Loaded).unwrap();
        let got = encode_plot(&PlotDocument::new(sentences.clone()).unwrap(), &vocab, None).unwrap();
        let want = brute_force_plot(&sentences, &table);
        assert_eq!(got.len(), want.len());
        for (a, b) in got.data().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

pub const MEMORY_DIM: usize = 6;

pub fn memory_params(seed: u64) -> ParameterStore<f64> {
    let mut p = ParameterStore::new();
    register_memory(&mut p, MEMORY_DIM, seed).unwrap();
    p
}

pub fn memory_inputs(n: usize, seed: u64) -> Vec<Tensor64> {
    (0..n)
        .map(|i| Init::Normal { std: 1.0, seed: seed * 1000 + i as u64 }.materialize(&[MEMORY_DIM]))
        .collect()
}

pub fn fresh_memory(slots: usize, seed: u64) -> MemoryState<f64> {
    let mut s = MemoryState::zeros(slots, MEMORY_DIM);
    s.reset(ResetPolicy::SeededRandom, seed);
    s
}

/// Steps `4·slots + 3` cycles one at a time from a fresh state (write offset
/// 0) and checks each against the state just before it. Returns the first
/// broken rule.
pub fn check_memory_cycles(slots: usize, mode: ReadMode, seed: u64) -> Result<(), String> {
    let p = memory_params(seed);
    let inputs = memory_inputs(4 * slots + 3, seed);
    let mut state = fresh_memory(slots, seed);
    let mut rng = write_rng(seed);
    for (n, s) in inputs.iter().enumerate() {
        let at = |msg: String| Err(format!("m={slots} {mode:?} seed {seed} cycle {n}: {msg}"));
        let before = state.clone();
        let run = run_trace(&before, &p, std::slice::from_ref(s), mode, 0, &mut rng).map_err(|e| e.to_string())?;
        let rec = &run.records[0];
        let after = &run.state;
        let Some(written) = rec.write_index else {
            return at("no write".into());
        };

        let max_age = before.ages.iter().max().unwrap();
        let first_oldest = before.ages.iter().position(|a| a == max_age).unwrap();
        if written != first_oldest {
            return at(format!("wrote slot {written}, oldest is {first_oldest}"));
        }
        for i in 0..slots {
            if i == written {
                if after.ages[i] != 0 {
                    return at(format!("written slot has age {}", after.ages[i]));
                }
            } else {
                if after.ages[i] != before.ages[i] + 1 {
                    return at(format!("slot {i} age {} -> {}", before.ages[i], after.ages[i]));
                }
                if after.memory.row(i) != before.memory.row(i) {
                    return at(format!("unwritten slot {i} changed"));
                }
            }
        }
        let zeros = after.ages.iter().filter(|&&a| a == 0).count();
        if zeros != 1 {
            return at(format!("{zeros} zero ages"));
        }
        if mode == ReadMode::Hard {
            let Some(j) = rec.read_index else {
                return at("hard read without an index".into());
            };
            if run.reads[0].data() != before.memory.row(j) {
                return at(format!("read vector differs from memory row {j}"));
            }
        }
        state = run.state;
    }
    Ok(())
}

/// Runs the same trace twice and compares everything bit for bit.
pub fn memory_trace_is_deterministic(slots: usize, mode: ReadMode, seed: u64) -> bool {
    let go = || {
        run_trace(
            &fresh_memory(slots, seed),
            &memory_params(seed),
            &memory_inputs(3 * slots + 5, seed),
            mode,
            0,
            &mut write_rng(seed),
        )
        .unwrap()
    };
    let (a, b) = (go(), go());
    a.records == b.records && a.state == b.state && a.reads == b.reads
}
