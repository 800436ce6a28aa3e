//! Weighted finite-state transducers over a cost semiring.
//!
//! A [`Wfst`] is immutable; it is assembled with a [`WfstBuilder`] and every
//! algorithm returns a fresh machine. Label 0 is epsilon on both tapes.

mod compose;
mod determinize;
mod minimize;
mod semiring;

use std::collections::{BTreeMap, HashMap, VecDeque};

pub use compose::compose;
pub use determinize::{determinize, determinize_with_budget, DEFAULT_BUDGET_FACTOR};
pub use minimize::{minimize, push_weights};
pub use semiring::{LogWeight, Semiring, TropicalWeight};

use crate::{Error, Result};

pub const EPSILON: u32 = 0;
pub const EPSILON_SYMBOL: &str = "<eps>";

pub type StateId = u32;
pub type Label = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc<W> {
    pub ilabel: Label,
    pub olabel: Label,
    pub weight: W,
    pub nextstate: StateId,
}

impl<W> Arc<W> {
    pub fn new(ilabel: Label, olabel: Label, weight: W, nextstate: StateId) -> Self {
        Self {
            ilabel,
            olabel,
            weight,
            nextstate,
        }
    }
}

/// Bidirectional symbol/id map with `<eps>` fixed at id 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolTable {
    symbols: Vec<String>,
    ids: HashMap<String, Label>,
}

impl Default for SymbolTable {
    fn default() -> Self {
        Self::new()
    }
}

impl SymbolTable {
    pub fn new() -> Self {
        let mut t = Self {
            symbols: Vec::new(),
            ids: HashMap::new(),
        };
        t.add(EPSILON_SYMBOL);
        t
    }

    /// Builds a table from symbols in id order; the first must be `<eps>`.
    pub fn from_symbols<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut t = Self {
            symbols: Vec::new(),
            ids: HashMap::new(),
        };
        for s in symbols {
            let s = s.into();
            if t.ids.contains_key(&s) {
                return Err(Error::InvalidInput(format!("duplicate symbol {s}")));
            }
            t.ids.insert(s.clone(), t.symbols.len() as Label);
            t.symbols.push(s);
        }
        if t.symbols.first().map(String::as_str) != Some(EPSILON_SYMBOL) {
            return Err(Error::InvalidInput(format!("symbol id 0 must be {EPSILON_SYMBOL}")));
        }
        Ok(t)
    }

    /// Returns the id of `symbol`, appending it if new.
    pub fn add(&mut self, symbol: &str) -> Label {
        if let Some(&id) = self.ids.get(symbol) {
            return id;
        }
        let id = self.symbols.len() as Label;
        self.symbols.push(symbol.to_string());
        self.ids.insert(symbol.to_string(), id);
        id
    }

    pub fn find(&self, symbol: &str) -> Option<Label> {
        self.ids.get(symbol).copied()
    }

    pub fn symbol(&self, id: Label) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Label, &str)> {
        self.symbols.iter().enumerate().map(|(i, s)| (i as Label, s.as_str()))
    }

    /// Whether the shorter table is a prefix of the longer one. Tables that
    /// only differ by appended auxiliary symbols are compatible.
    pub fn is_compatible(&self, other: &SymbolTable) -> bool {
        let n = self.len().min(other.len());
        self.symbols[..n] == other.symbols[..n]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct State<W> {
    arcs: Vec<Arc<W>>,
    final_weight: W,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Wfst<W: Semiring = TropicalWeight> {
    start: Option<StateId>,
    states: Vec<State<W>>,
    input_symbols: Option<SymbolTable>,
    output_symbols: Option<SymbolTable>,
}

#[derive(Debug, Clone)]
pub struct WfstBuilder<W: Semiring = TropicalWeight> {
    fst: Wfst<W>,
}

impl<W: Semiring> Default for WfstBuilder<W> {
    fn default() -> Self {
        Self::new()
    }
}

impl<W: Semiring> WfstBuilder<W> {
    pub fn new() -> Self {
        Self { fst: Wfst::empty() }
    }

    pub fn add_state(&mut self) -> StateId {
        self.fst.states.push(State {
            arcs: Vec::new(),
            final_weight: W::zero(),
        });
        (self.fst.states.len() - 1) as StateId
    }

    pub fn add_states(&mut self, n: usize) {
        for _ in 0..n {
            self.add_state();
        }
    }

    pub fn num_states(&self) -> usize {
        self.fst.states.len()
    }

    pub fn set_start(&mut self, s: StateId) {
        self.fst.start = Some(s);
    }

    pub fn set_final(&mut self, s: StateId, w: W) {
        self.fst.states[s as usize].final_weight = w;
    }

    pub fn add_arc(&mut self, s: StateId, arc: Arc<W>) {
        self.fst.states[s as usize].arcs.push(arc);
    }

    pub fn set_input_symbols(&mut self, t: Option<SymbolTable>) {
        self.fst.input_symbols = t;
    }

    pub fn set_output_symbols(&mut self, t: Option<SymbolTable>) {
        self.fst.output_symbols = t;
    }

    /// Checks that the start state and every arc target exist.
    pub fn build(self) -> Result<Wfst<W>> {
        let n = self.fst.states.len();
        match self.fst.start {
            None if n > 0 => return Err(Error::InvalidInput("FST has states but no start state".into())),
            Some(s) if s as usize >= n => {
                return Err(Error::InvalidInput(format!("start state {s} does not exist")))
            }
            _ => {}
        }
        for (s, st) in self.fst.states.iter().enumerate() {
            if let Some(a) = st.arcs.iter().find(|a| a.nextstate as usize >= n) {
                return Err(Error::InvalidInput(format!(
                    "arc from state {s} targets missing state {}",
                    a.nextstate
                )));
            }
        }
        Ok(self.fst)
    }
}

/// Which tape an operation looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Input,
    Output,
}

impl<W: Semiring> Wfst<W> {
    /// The machine with no states, accepting nothing.
    pub fn empty() -> Self {
        Self {
            start: None,
            states: Vec::new(),
            input_symbols: None,
            output_symbols: None,
        }
    }

    pub fn start(&self) -> Option<StateId> {
        self.start
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.states.iter().map(|s| s.arcs.len()).sum()
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        0..self.states.len() as StateId
    }

    pub fn arcs(&self, s: StateId) -> &[Arc<W>] {
        &self.states[s as usize].arcs
    }

    pub fn final_weight(&self, s: StateId) -> W {
        self.states[s as usize].final_weight
    }

    pub fn is_final(&self, s: StateId) -> bool {
        !self.final_weight(s).is_zero()
    }

    pub fn input_symbols(&self) -> Option<&SymbolTable> {
        self.input_symbols.as_ref()
    }

    pub fn output_symbols(&self) -> Option<&SymbolTable> {
        self.output_symbols.as_ref()
    }

    pub fn with_symbols(mut self, input: Option<SymbolTable>, output: Option<SymbolTable>) -> Self {
        self.input_symbols = input;
        self.output_symbols = output;
        self
    }

    pub fn to_builder(&self) -> WfstBuilder<W> {
        WfstBuilder { fst: self.clone() }
    }

    /// Reinterprets the weights in another semiring, keeping the costs.
    pub fn convert<V: Semiring>(&self) -> Wfst<V> {
        Wfst {
            start: self.start,
            states: self
                .states
                .iter()
                .map(|s| State {
                    arcs: s
                        .arcs
                        .iter()
                        .map(|a| Arc::new(a.ilabel, a.olabel, V::new(a.weight.value()), a.nextstate))
                        .collect(),
                    final_weight: V::new(s.final_weight.value()),
                })
                .collect(),
            input_symbols: self.input_symbols.clone(),
            output_symbols: self.output_symbols.clone(),
        }
    }

    /// No two arcs leaving a state share a non-epsilon input label, and at
    /// most one input-epsilon arc leaves each state.
    pub fn is_input_deterministic(&self) -> bool {
        self.states.iter().all(|s| {
            let mut labels: Vec<Label> = s.arcs.iter().map(|a| a.ilabel).collect();
            labels.sort_unstable();
            labels.windows(2).all(|w| w[0] != w[1])
        })
    }

    pub fn arc_sort(&self, side: Side) -> Self {
        let mut out = self.clone();
        for s in &mut out.states {
            match side {
                Side::Input => s.arcs.sort_by_key(|a| (a.ilabel, a.olabel)),
                Side::Output => s.arcs.sort_by_key(|a| (a.olabel, a.ilabel)),
            }
        }
        out
    }

    /// Applies `f` to every label on one tape.
    pub fn relabel(&self, side: Side, f: impl Fn(Label) -> Label) -> Self {
        let mut out = self.clone();
        for s in &mut out.states {
            for a in &mut s.arcs {
                match side {
                    Side::Input => a.ilabel = f(a.ilabel),
                    Side::Output => a.olabel = f(a.olabel),
                }
            }
        }
        out
    }

    /// Swaps the input and output tapes.
    pub fn invert(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.states {
            for a in &mut s.arcs {
                std::mem::swap(&mut a.ilabel, &mut a.olabel);
            }
        }
        std::mem::swap(&mut out.input_symbols, &mut out.output_symbols);
        out
    }

    /// Keeps only states on some start-to-final path, renumbered in their
    /// original order.
    pub fn connect(&self) -> Self {
        let Some(start) = self.start else {
            return self.clone();
        };
        let n = self.states.len();
        let mut accessible = vec![false; n];
        let mut stack = vec![start];
        accessible[start as usize] = true;
        let mut reverse: Vec<Vec<StateId>> = vec![Vec::new(); n];
        while let Some(s) = stack.pop() {
            for a in self.arcs(s) {
                reverse[a.nextstate as usize].push(s);
                if !accessible[a.nextstate as usize] {
                    accessible[a.nextstate as usize] = true;
                    stack.push(a.nextstate);
                }
            }
        }
        let mut coaccessible = vec![false; n];
        let mut stack: Vec<StateId> = self
            .states()
            .filter(|&s| accessible[s as usize] && self.is_final(s))
            .collect();
        for &s in &stack {
            coaccessible[s as usize] = true;
        }
        while let Some(s) = stack.pop() {
            for &p in &reverse[s as usize] {
                if !coaccessible[p as usize] {
                    coaccessible[p as usize] = true;
                    stack.push(p);
                }
            }
        }
        if !coaccessible[start as usize] {
            return Self::empty().with_symbols(self.input_symbols.clone(), self.output_symbols.clone());
        }
        let mut map = vec![None; n];
        let mut next = 0;
        for s in 0..n {
            if accessible[s] && coaccessible[s] {
                map[s] = Some(next);
                next += 1;
            }
        }
        let states = (0..n)
            .filter(|&s| map[s].is_some())
            .map(|s| State {
                arcs: self.states[s]
                    .arcs
                    .iter()
                    .filter_map(|a| map[a.nextstate as usize].map(|t| Arc { nextstate: t, ..*a }))
                    .collect(),
                final_weight: self.states[s].final_weight,
            })
            .collect();
        Self {
            start: map[start as usize],
            states,
            input_symbols: self.input_symbols.clone(),
            output_symbols: self.output_symbols.clone(),
        }
    }

    /// Acceptor (or transducer, if `olabels` differs) for a single string.
    pub fn linear(ilabels: &[Label], olabels: &[Label]) -> Result<Self> {
        if ilabels.len() != olabels.len() {
            return Err(Error::DimensionMismatch(format!(
                "linear FST needs equal tapes, got {} and {}",
                ilabels.len(),
                olabels.len()
            )));
        }
        let mut b = WfstBuilder::new();
        b.add_states(ilabels.len() + 1);
        b.set_start(0);
        for (i, (&il, &ol)) in ilabels.iter().zip(olabels).enumerate() {
            b.add_arc(i as StateId, Arc::new(il, ol, W::one(), i as StateId + 1));
        }
        b.set_final(ilabels.len() as StateId, W::one());
        b.build()
    }

    /// `⊕` over all successful paths, by generic single-source relaxation.
    /// Exact for acyclic machines and for the tropical semiring; in the log
    /// semiring cycles are summed until updates fall below `1e-12`.
    pub fn shortest_distance(&self) -> Result<Vec<W>> {
        let n = self.states.len();
        let mut dist = vec![W::zero(); n];
        let Some(start) = self.start else {
            return Ok(dist);
        };
        let mut pending = vec![W::zero(); n];
        let mut queued = vec![false; n];
        dist[start as usize] = W::one();
        pending[start as usize] = W::one();
        let mut queue = VecDeque::from([start]);
        queued[start as usize] = true;
        let mut budget = 1_000usize.saturating_mul(n.max(1)).saturating_mul(self.num_arcs().max(1));
        while let Some(s) = queue.pop_front() {
            queued[s as usize] = false;
            let r = std::mem::replace(&mut pending[s as usize], W::zero());
            for a in self.arcs(s) {
                let t = a.nextstate as usize;
                let cand = r.times(a.weight);
                let updated = dist[t].plus(cand);
                if !updated.approx_eq(dist[t], 1e-12) {
                    dist[t] = updated;
                    pending[t] = pending[t].plus(cand);
                    if !queued[t] {
                        queued[t] = true;
                        queue.push_back(a.nextstate);
                    }
                }
            }
            budget = budget.checked_sub(1).ok_or_else(|| {
                Error::InvalidInput("shortest distance did not converge (negative cycle?)".into())
            })?;
        }
        Ok(dist)
    }

    /// `⊕` of all accepting path weights.
    pub fn total_weight(&self) -> Result<W> {
        let dist = self.shortest_distance()?;
        Ok(self
            .states()
            .fold(W::zero(), |acc, s| acc.plus(dist[s as usize].times(self.final_weight(s)))))
    }

    /// Every accepting path with at most `max_len` non-epsilon input labels,
    /// weights `⊕`-aggregated per (input, output) pair. Runs of consecutive
    /// input-epsilon arcs are cut at the number of states, so epsilon cycles
    /// are only partially summed.
    pub fn enumerate_paths(&self, max_len: usize) -> Vec<(Vec<Label>, Vec<Label>, W)> {
        let mut acc: BTreeMap<(Vec<Label>, Vec<Label>), W> = BTreeMap::new();
        let Some(start) = self.start else {
            return Vec::new();
        };
        let eps_cap = self.states.len();
        let mut ilabels = Vec::new();
        let mut olabels = Vec::new();
        self.enumerate_from(start, W::one(), 0, max_len, eps_cap, &mut ilabels, &mut olabels, &mut acc);
        acc.into_iter().map(|((i, o), w)| (i, o, w)).collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn enumerate_from(
        &self,
        s: StateId,
        w: W,
        eps_run: usize,
        max_len: usize,
        eps_cap: usize,
        ilabels: &mut Vec<Label>,
        olabels: &mut Vec<Label>,
        acc: &mut BTreeMap<(Vec<Label>, Vec<Label>), W>,
    ) {
        if w.is_zero() {
            return;
        }
        if self.is_final(s) {
            let e = acc.entry((ilabels.clone(), olabels.clone())).or_insert(W::zero());
            *e = e.plus(w.times(self.final_weight(s)));
        }
        for a in self.arcs(s) {
            let consumes = a.ilabel != EPSILON;
            if consumes && ilabels.len() == max_len || !consumes && eps_run == eps_cap {
                continue;
            }
            if consumes {
                ilabels.push(a.ilabel);
            }
            if a.olabel != EPSILON {
                olabels.push(a.olabel);
            }
            let run = if consumes { 0 } else { eps_run + 1 };
            self.enumerate_from(a.nextstate, w.times(a.weight), run, max_len, eps_cap, ilabels, olabels, acc);
            if consumes {
                ilabels.pop();
            }
            if a.olabel != EPSILON {
                olabels.pop();
            }
        }
    }
}

/// Weight key for hashing: costs rounded to `1e-7`.
pub(crate) fn quantize(cost: f64) -> i64 {
    if cost == f64::INFINITY {
        i64::MAX
    } else {
        (cost * 1e7).round() as i64
    }
}

/// Whether two path listings agree on every (input, output) pair.
pub fn same_relation<W: Semiring>(
    a: &[(Vec<Label>, Vec<Label>, W)],
    b: &[(Vec<Label>, Vec<Label>, W)],
    tol: f64,
) -> bool {
    let live = |v: &[(Vec<Label>, Vec<Label>, W)]| -> Vec<(Vec<Label>, Vec<Label>, W)> {
        v.iter().filter(|(_, _, w)| !w.is_zero()).cloned().collect()
    };
    let (a, b) = (live(a), live(b));
    a.len() == b.len()
        && a.iter().zip(&b).all(|(x, y)| {
            x.0 == y.0 && x.1 == y.1 && (x.2.approx_eq(y.2, tol) || relative_close(x.2.value(), y.2.value(), tol))
        })
}

fn relative_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
