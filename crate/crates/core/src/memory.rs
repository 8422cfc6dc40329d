//! External memory with an additive-attention read head, a recurrent
//! controller context and age-based write placement.
//!
//! One cycle is `read → update_context → write`:
//!
//! * read: `θ(i) = uᵀ tanh(W_s^α s + W_c^α C + W_m^α M(i))`, `w = softmax(θ)`;
//!   hard mode returns the row `M(argmax w)`, soft mode `Σ w(i) M(i)`; every
//!   age then grows by one.
//! * context: `C ← tanh(W_c^β C + W_v^β v + W_s^β s)`.
//! * write: `p = (argmax A + r) mod m` with `r` uniform in `0..=r_max`,
//!   `M(p) ← W_m^γ C`, `A(p) ← 0`.

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor_core::{Bindings, Graph, Init, ParameterStore, Tensor, Var};

pub const READ_SUMMARY: &str = "memory.read.w_s";
pub const READ_CONTEXT: &str = "memory.read.w_c";
pub const READ_MEMORY: &str = "memory.read.w_m";
pub const READ_SCORER: &str = "memory.read.u";
pub const CONTEXT_CONTEXT: &str = "memory.context.w_c";
pub const CONTEXT_READ: &str = "memory.context.w_v";
pub const CONTEXT_SUMMARY: &str = "memory.context.w_s";
pub const WRITE_PROJECTION: &str = "memory.write.w_m";

/// Parameters that shape the read attention.
pub const ATTENTION_PARAMS: [&str; 4] = [READ_SUMMARY, READ_CONTEXT, READ_MEMORY, READ_SCORER];
/// Parameters of the context update and the write projection.
pub const CONTROLLER_PARAMS: [&str; 4] = [CONTEXT_CONTEXT, CONTEXT_READ, CONTEXT_SUMMARY, WRITE_PROJECTION];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReadMode {
    #[default]
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResetPolicy {
    Zero,
    #[default]
    SeededRandom,
}

pub fn register_memory<T: Scalar>(store: &mut ParameterStore<T>, dim: usize, seed: u64) -> Result<()> {
    let std = 1.0 / (dim as f64).sqrt();
    let mut s = seed;
    for name in ATTENTION_PARAMS.iter().chain(&CONTROLLER_PARAMS) {
        let shape: &[usize] = if *name == READ_SCORER { &[dim] } else { &[dim, dim] };
        store.register(name, shape, Init::Normal { std, seed: s })?;
        s = s.wrapping_add(1);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Read,
    Context,
}

/// Memory matrix `M` (`m×d`), ages `A`, controller context `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState<T> {
    pub memory: Tensor<T>,
    pub ages: Vec<u64>,
    pub context: Tensor<T>,
    pub step: u64,
}

impl<T: Scalar> MemoryState<T> {
    pub fn zeros(slots: usize, dim: usize) -> Self {
        MemoryState {
            memory: Tensor::zeros(&[slots, dim]),
            ages: vec![0; slots],
            context: Tensor::zeros(&[dim]),
            step: 0,
        }
    }

    pub fn slots(&self) -> usize {
        self.ages.len()
    }

    pub fn dim(&self) -> usize {
        self.context.len()
    }

    /// Clears ages, context and the step counter; refills `M` per `policy`
    /// (zeros, or Gaussian entries with standard deviation 0.01).
    pub fn reset(&mut self, policy: ResetPolicy, seed: u64) {
        let (m, d) = (self.slots(), self.dim());
        self.memory = match policy {
            ResetPolicy::Zero => Tensor::zeros(&[m, d]),
            ResetPolicy::SeededRandom => Init::Normal { std: 0.01, seed }.materialize(&[m, d]),
        };
        self.ages.iter_mut().for_each(|a| *a = 0);
        self.context = Tensor::zeros(&[d]);
        self.step = 0;
    }

    pub fn oldest(&self) -> usize {
        argmax_first(self.ages.iter().copied())
    }
}

fn argmax_first<V: PartialOrd + Copy>(values: impl Iterator<Item = V>) -> usize {
    let mut best: Option<(usize, V)> = None;
    for (i, v) in values.enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i).unwrap_or(0)
}

/// Output of a read.
#[derive(Debug, Clone, Copy)]
pub struct ReadOutput {
    pub vector: Var,
    pub weights: Var,
    /// Selected row in hard mode.
    pub index: Option<usize>,
}

/// Memory state recorded on a graph so gradients can flow through rows
/// written earlier on the same graph.
#[derive(Debug, Clone)]
pub struct GraphMemory {
    rows: Vec<Var>,
    ages: Vec<u64>,
    context: Var,
    step: u64,
    phase: Phase,
}

impl GraphMemory {
    /// Records `state` as constants on `graph`.
    pub fn attach<T: Scalar>(graph: &mut Graph<T>, state: &MemoryState<T>) -> Self {
        let rows = (0..state.slots())
            .map(|i| graph.constant(Tensor::vector(state.memory.row(i).to_vec())))
            .collect();
        GraphMemory {
            rows,
            ages: state.ages.clone(),
            context: graph.constant(state.context.clone()),
            step: state.step,
            phase: Phase::Idle,
        }
    }

    /// Current values, detached from the graph.
    pub fn detach<T: Scalar>(&self, graph: &Graph<T>) -> MemoryState<T> {
        let rows: Vec<Vec<T>> = self.rows.iter().map(|&r| graph.value(r).data().to_vec()).collect();
        MemoryState {
            memory: Tensor::from_rows(&rows).expect("memory has at least one slot"),
            ages: self.ages.clone(),
            context: graph.value(self.context).clone(),
            step: self.step,
        }
    }

    pub fn ages(&self) -> &[u64] {
        &self.ages
    }

    pub fn context(&self) -> Var {
        self.context
    }

    pub fn row(&self, i: usize) -> Var {
        self.rows[i]
    }

    pub fn read<T: Scalar>(
        &mut self,
        graph: &mut Graph<T>,
        summary: Var,
        params: &Bindings,
        mode: ReadMode,
    ) -> Result<ReadOutput> {
        let dim = graph.value(self.context).len();
        if graph.shape(summary) != [dim] {
            return Err(Error::dim("memory read", &[dim], graph.shape(summary)));
        }
        let from_summary = graph.matmul(params.var(READ_SUMMARY)?, summary)?;
        let from_context = graph.matmul(params.var(READ_CONTEXT)?, self.context)?;
        let query = graph.add(from_summary, from_context)?;
        let mem = graph.stack_rows(&self.rows)?;
        let w_m_t = graph.transpose(params.var(READ_MEMORY)?)?;
        let keys = graph.matmul(mem, w_m_t)?;
        let pre = graph.add_row(keys, query)?;
        let act = graph.tanh(pre)?;
        let scores = graph.matmul(act, params.var(READ_SCORER)?)?;
        let weights = graph.softmax(scores)?;
        let (vector, index) = match mode {
            ReadMode::Hard => {
                let j = argmax_first(graph.value(weights).data().iter().copied());
                (self.rows[j], Some(j))
            }
            ReadMode::Soft => (graph.matmul(weights, mem)?, None),
        };
        self.ages.iter_mut().for_each(|a| *a += 1);
        self.phase = Phase::Read;
        Ok(ReadOutput { vector, weights, index })
    }

    pub fn update_context<T: Scalar>(&mut self, graph: &mut Graph<T>, read: Var, summary: Var, params: &Bindings) -> Result<Var> {
        if self.phase != Phase::Read {
            return Err(Error::Contract("context update must follow a read in the same cycle".into()));
        }
        let a = graph.matmul(params.var(CONTEXT_CONTEXT)?, self.context)?;
        let b = graph.matmul(params.var(CONTEXT_READ)?, read)?;
        let c = graph.matmul(params.var(CONTEXT_SUMMARY)?, summary)?;
        let pre = graph.sum(&[a, b, c])?;
        self.context = graph.tanh(pre)?;
        self.phase = Phase::Context;
        Ok(self.context)
    }

    /// Writes the projected context to the oldest slot (offset by a random
    /// `r ≤ r_max`) and returns the slot.
    pub fn write<T: Scalar>(&mut self, graph: &mut Graph<T>, params: &Bindings, rng: &mut Rng, r_max: usize) -> Result<usize> {
        let m = self.rows.len();
        if r_max >= m {
            return Err(Error::Config(format!("r_max {r_max} must be smaller than the {m} memory slots")));
        }
        if self.phase != Phase::Context {
            return Err(Error::Contract("write must follow a context update in the same cycle".into()));
        }
        let r = if r_max == 0 { 0 } else { rng.random_range(0..=r_max) };
        let p = (argmax_first(self.ages.iter().copied()) + r) % m;
        self.rows[p] = graph.matmul(params.var(WRITE_PROJECTION)?, self.context)?;
        self.ages[p] = 0;
        self.step += 1;
        self.phase = Phase::Idle;
        Ok(p)
    }

    /// Closes a cycle that skips the write (inference without memory writes).
    pub fn finish_without_write(&mut self) {
        self.step += 1;
        self.phase = Phase::Idle;
    }
}

/// Reads from a plain state, returning the read vector and the attention
/// weights. Ages advance.
pub fn read<T: Scalar>(
    state: &mut MemoryState<T>,
    summary: &Tensor<T>,
    params: &ParameterStore<T>,
    mode: ReadMode,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut g = Graph::new();
    let b = params.bind_frozen(&mut g);
    let mut gm = GraphMemory::attach(&mut g, state);
    let s = g.constant(summary.clone());
    let out = gm.read(&mut g, s, &b, mode)?;
    state.ages = gm.ages.clone();
    Ok((g.value(out.vector).clone(), g.value(out.weights).clone()))
}

/// Replaces the context of a plain state and returns it.
pub fn update_context<T: Scalar>(
    state: &mut MemoryState<T>,
    read: &Tensor<T>,
    summary: &Tensor<T>,
    params: &ParameterStore<T>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let b = params.bind_frozen(&mut g);
    let mut gm = GraphMemory::attach(&mut g, state);
    gm.phase = Phase::Read;
    let v = g.constant(read.clone());
    let s = g.constant(summary.clone());
    let c = gm.update_context(&mut g, v, s, &b)?;
    state.context = g.value(c).clone();
    Ok(state.context.clone())
}

/// Writes `W_m^γ C` into a plain state and returns the slot written.
pub fn write<T: Scalar>(state: &mut MemoryState<T>, params: &ParameterStore<T>, rng: &mut Rng, r_max: usize) -> Result<usize> {
    let mut g = Graph::new();
    let b = params.bind_frozen(&mut g);
    let mut gm = GraphMemory::attach(&mut g, state);
    gm.phase = Phase::Context;
    let p = gm.write(&mut g, &b, rng, r_max)?;
    *state = gm.detach(&g);
    Ok(p)
}

/// One cycle's record in a memory trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub read_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub read_weights: Option<Vec<f64>>,
    pub write_index: Option<usize>,
    pub ages: Vec<u64>,
}

pub fn trace_to_jsonl(records: &[TraceRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Schema {
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// What a trace replay established.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceCheck {
    pub cycles: usize,
    pub writes: usize,
}

/// Replays the age rules over a trace that starts from a freshly reset state
/// with `slots` slots and checks every recorded age vector. With `r_max == 0`
/// each write must also land on the oldest slot.
pub fn verify_trace(records: &[TraceRecord], slots: usize, r_max: usize) -> Result<TraceCheck> {
    let mut ages = vec![0u64; slots];
    let mut writes = 0;
    for (n, rec) in records.iter().enumerate() {
        let fail = |msg: String| Err(Error::Contract(format!("trace cycle {n} (step {}): {msg}", rec.step)));
        if rec.ages.len() != slots {
            return fail(format!("expected {slots} ages, found {}", rec.ages.len()));
        }
        if let Some(j) = rec.read_index {
            if j >= slots {
                return fail(format!("read index {j} out of range"));
            }
        }
        ages.iter_mut().for_each(|a| *a += 1);
        if let Some(p) = rec.write_index {
            if p >= slots {
                return fail(format!("write index {p} out of range"));
            }
            let oldest = argmax_first(ages.iter().copied());
            if r_max == 0 && p != oldest {
                return fail(format!("wrote slot {p} but the oldest slot is {oldest}"));
            }
            if (p + slots - oldest) % slots > r_max {
                return fail(format!("write offset from oldest slot {oldest} exceeds r_max {r_max}"));
            }
            ages[p] = 0;
            writes += 1;
            if ages.iter().filter(|&&a| a == 0).count() != 1 {
                return fail("more than one zero age after a write".into());
            }
        }
        if ages != rec.ages {
            return fail(format!("recorded ages {:?} differ from replayed {:?}", rec.ages, ages));
        }
    }
    Ok(TraceCheck {
        cycles: records.len(),
        writes,
    })
}

/// Output of [`run_trace`].
#[derive(Debug, Clone)]
pub struct TraceRun<T> {
    pub records: Vec<TraceRecord>,
    /// Read vector of every cycle.
    pub reads: Vec<Tensor<T>>,
    pub state: MemoryState<T>,
}

/// Runs one full cycle per summary on a copy of `state` and records the
/// read choice, write slot and ages after each cycle.
pub fn run_trace<T: Scalar>(
    state: &MemoryState<T>,
    params: &ParameterStore<T>,
    summaries: &[Tensor<T>],
    mode: ReadMode,
    r_max: usize,
    rng: &mut Rng,
) -> Result<TraceRun<T>> {
    let mut state = state.clone();
    let mut records = Vec::with_capacity(summaries.len());
    let mut reads = Vec::with_capacity(summaries.len());
    for s in summaries {
        let mut g = Graph::new();
        let b = params.bind_frozen(&mut g);
        let mut gm = GraphMemory::attach(&mut g, &state);
        let sv = g.constant(s.clone());
        let out = gm.read(&mut g, sv, &b, mode)?;
        gm.update_context(&mut g, out.vector, sv, &b)?;
        let p = gm.write(&mut g, &b, rng, r_max)?;
        reads.push(g.value(out.vector).clone());
        state = gm.detach(&g);
        records.push(TraceRecord {
            step: state.step,
            read_index: out.index,
            read_weights: Some(g.value(out.weights).data().iter().map(|w| w.to_f64_lossy()).collect()),
            write_index: Some(p),
            ages: state.ages.clone(),
        });
    }
    Ok(TraceRun { records, reads, state })
}

/// Seeded generator for the write offset `r`.
pub fn write_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
