use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::AcousticScorer;
use crate::par;
use crate::wfst::{Label, Semiring, StateId, Wfst, EPSILON};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    /// Tokens costlier than the best by more than this are dropped before
    /// each frame.
    pub beam: f64,
    /// At most this many tokens are expanded per frame.
    pub max_active: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: 16.0,
            max_active: 5000,
        }
    }
}

impl DecodeConfig {
    /// No pruning: the search is exact Viterbi.
    pub fn exhaustive() -> Self {
        Self {
            beam: f64::INFINITY,
            max_active: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub utterance_id: String,
    pub words: Vec<Label>,
    /// Graph cost plus acoustic cost along the path; the joint score is its
    /// negation.
    pub cost: f64,
    /// False when no token ended in a final state and the best partial path
    /// was returned instead.
    pub reached_final: bool,
    /// Every traversed arc as (source state, arc index).
    pub path: Vec<(StateId, u32)>,
}

impl Hypothesis {
    pub fn score(&self) -> f64 {
        -self.cost
    }

    fn empty(utterance_id: &str) -> Self {
        Self {
            utterance_id: utterance_id.to_string(),
            words: Vec::new(),
            cost: f64::INFINITY,
            reached_final: false,
            path: Vec::new(),
        }
    }
}

const ROOT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    prev: u32,
    state: StateId,
    arc: u32,
}

/// One token per graph state, each pointing into the traceback arena.
struct Tokens {
    cost: Vec<f64>,
    node: Vec<u32>,
    active: Vec<StateId>,
}

impl Tokens {
    fn new(n: usize) -> Self {
        Self {
            cost: vec![f64::INFINITY; n],
            node: vec![ROOT; n],
            active: Vec::new(),
        }
    }

    fn clear(&mut self) {
        for &s in &self.active {
            self.cost[s as usize] = f64::INFINITY;
            self.node[s as usize] = ROOT;
        }
        self.active.clear();
    }

    fn relax(&mut self, s: StateId, cost: f64, node: impl FnOnce() -> u32) -> bool {
        let i = s as usize;
        if cost < self.cost[i] {
            if self.cost[i] == f64::INFINITY {
                self.active.push(s);
            }
            self.cost[i] = cost;
            self.node[i] = node();
            true
        } else {
            false
        }
    }
}

#[derive(PartialEq)]
struct Queued(f64, StateId);

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// Best-first relaxation over input-epsilon arcs. States are re-expanded if
/// improved later, which tolerates negative arc weights; the expansion count
/// is capped to guard against epsilon cycles.
fn epsilon_closure(graph: &Wfst, tokens: &mut Tokens, arena: &mut Vec<Node>, utterance_id: &str, t: usize) {
    let mut heap: BinaryHeap<Queued> = tokens.active.iter().map(|&s| Queued(tokens.cost[s as usize], s)).collect();
    let mut budget = 4 * graph.num_states() + tokens.active.len();
    while let Some(Queued(c, s)) = heap.pop() {
        if c > tokens.cost[s as usize] {
            continue;
        }
        if budget == 0 {
            log::warn!("{utterance_id}: epsilon expansion limit reached at frame {t}");
            return;
        }
        budget -= 1;
        let prev = tokens.node[s as usize];
        for (i, arc) in graph.arcs(s).iter().enumerate() {
            if arc.ilabel != EPSILON {
                continue;
            }
            let nc = c + arc.weight.value();
            let improved = tokens.relax(arc.nextstate, nc, || {
                arena.push(Node {
                    prev,
                    state: s,
                    arc: i as u32,
                });
                (arena.len() - 1) as u32
            });
            if improved {
                heap.push(Queued(nc, arc.nextstate));
            }
        }
    }
}

fn pruning_cutoff(tokens: &Tokens, cfg: &DecodeConfig) -> f64 {
    let best = tokens
        .active
        .iter()
        .map(|&s| tokens.cost[s as usize])
        .fold(f64::INFINITY, f64::min);
    let mut cutoff = best + cfg.beam;
    if tokens.active.len() > cfg.max_active && cfg.max_active > 0 {
        let mut costs: Vec<f64> = tokens.active.iter().map(|&s| tokens.cost[s as usize]).collect();
        let (_, nth, _) = costs.select_nth_unstable_by(cfg.max_active - 1, f64::total_cmp);
        cutoff = cutoff.min(*nth);
    }
    cutoff
}

/// Token passing over `graph`, whose input label `k + 1` consumes CTC label
/// `k` and whose input epsilons consume nothing. Final weights are applied at
/// the end. When nothing reaches a final state the best partial path is
/// returned; when every token was pruned the hypothesis is empty.
pub fn decode_utterance(graph: &Wfst, scorer: &AcousticScorer, cfg: &DecodeConfig) -> Result<Hypothesis> {
    let id = scorer.utterance_id.as_str();
    let frames = scorer.num_frames();
    if frames == 0 {
        return Err(Error::InvalidInput(format!("utterance {id} has no frames")));
    }
    if let Some(bad) = graph
        .states()
        .flat_map(|s| graph.arcs(s))
        .map(|a| a.ilabel)
        .find(|&l| l as usize > scorer.num_labels())
    {
        return Err(Error::DimensionMismatch(format!(
            "graph input label {bad} has no acoustic column ({} labels)",
            scorer.num_labels()
        )));
    }
    let Some(start) = graph.start() else {
        log::warn!("{id}: empty search graph, returning an empty hypothesis");
        return Ok(Hypothesis::empty(id));
    };

    let n = graph.num_states();
    let mut arena: Vec<Node> = Vec::new();
    let mut cur = Tokens::new(n);
    let mut next = Tokens::new(n);
    cur.relax(start, 0.0, || ROOT);
    epsilon_closure(graph, &mut cur, &mut arena, id, 0);

    for t in 0..frames {
        let cutoff = pruning_cutoff(&cur, cfg);
        next.clear();
        for &s in &cur.active {
            let c = cur.cost[s as usize];
            if c > cutoff {
                continue;
            }
            let prev = cur.node[s as usize];
            for (i, arc) in graph.arcs(s).iter().enumerate() {
                if arc.ilabel == EPSILON {
                    continue;
                }
                let nc = c + arc.weight.value() - scorer.score(t, (arc.ilabel - 1) as usize);
                next.relax(arc.nextstate, nc, || {
                    arena.push(Node {
                        prev,
                        state: s,
                        arc: i as u32,
                    });
                    (arena.len() - 1) as u32
                });
            }
        }
        epsilon_closure(graph, &mut next, &mut arena, id, t + 1);
        std::mem::swap(&mut cur, &mut next);
        if cur.active.is_empty() {
            log::warn!("{id}: no surviving tokens after frame {t}, returning an empty hypothesis");
            return Ok(Hypothesis::empty(id));
        }
    }

    let best_final = cur
        .active
        .iter()
        .filter(|&&s| graph.is_final(s))
        .map(|&s| (s, cur.cost[s as usize] + graph.final_weight(s).value()))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let (end, cost, reached_final) = match best_final {
        Some((s, c)) => (s, c, true),
        None => {
            log::warn!("{id}: no token in a final state, returning the best partial path");
            let (s, c) = cur
                .active
                .iter()
                .map(|&s| (s, cur.cost[s as usize]))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .expect("active set is non-empty");
            (s, c, false)
        }
    };

    let mut path = Vec::new();
    let mut node = cur.node[end as usize];
    while node != ROOT {
        let nd = arena[node as usize];
        path.push((nd.state, nd.arc));
        node = nd.prev;
    }
    path.reverse();
    let words = path
        .iter()
        .map(|&(s, i)| graph.arcs(s)[i as usize].olabel)
        .filter(|&o| o != EPSILON)
        .collect();
    Ok(Hypothesis {
        utterance_id: id.to_string(),
        words,
        cost,
        reached_final,
        path,
    })
}

/// Recomputes a hypothesis cost from its traced arcs and the acoustic
/// scores, checking that the path is connected and consumes every frame.
pub fn replay_cost(graph: &Wfst, scorer: &AcousticScorer, hyp: &Hypothesis) -> Result<f64> {
    let mut state = graph
        .start()
        .ok_or_else(|| Error::InvalidInput("cannot replay on an empty graph".into()))?;
    let mut t = 0;
    let mut cost = 0.0;
    for &(s, i) in &hyp.path {
        if s != state {
            return Err(Error::InvalidInput(format!("traceback jumps from state {state} to {s}")));
        }
        let arc = graph.arcs(s).get(i as usize).ok_or_else(|| {
            Error::InvalidInput(format!("traceback names missing arc {i} of state {s}"))
        })?;
        cost += arc.weight.value();
        if arc.ilabel != EPSILON {
            if t >= scorer.num_frames() {
                return Err(Error::InvalidInput("traceback consumes too many frames".into()));
            }
            cost -= scorer.score(t, (arc.ilabel - 1) as usize);
            t += 1;
        }
        state = arc.nextstate;
    }
    if t != scorer.num_frames() {
        return Err(Error::InvalidInput(format!(
            "traceback consumes {t} of {} frames",
            scorer.num_frames()
        )));
    }
    if hyp.reached_final {
        cost += graph.final_weight(state).value();
    }
    Ok(cost)
}

/// Decodes utterances independently, in parallel when enabled; results keep
/// the input order.
pub fn decode_corpus(graph: &Wfst, scorers: &[AcousticScorer], cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    par::map(scorers, |s| decode_utterance(graph, s, cfg)).into_iter().collect()
}
