use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use super::{quantize, Arc, Label, Semiring, StateId, Wfst, WfstBuilder, EPSILON};
use crate::{Error, Result};

/// Output states may not exceed this multiple of the input state count.
pub const DEFAULT_BUDGET_FACTOR: usize = 100;

#[derive(Debug, Clone)]
struct Element<W> {
    state: StateId,
    pending: Vec<Label>,
    residual: W,
}

type SubsetKey = Vec<(StateId, Vec<Label>, i64)>;

fn key_of<W: Semiring>(subset: &[Element<W>]) -> SubsetKey {
    subset
        .iter()
        .map(|e| (e.state, e.pending.clone(), quantize(e.residual.value())))
        .collect()
}

pub fn determinize<W: Semiring>(a: &Wfst<W>) -> Result<Wfst<W>> {
    determinize_with_budget(a, DEFAULT_BUDGET_FACTOR * a.num_states().max(1))
}

/// Weighted subset construction for functional transducers, with pending
/// output strings carried per subset element. Input-epsilon arcs are removed
/// by closure. Outputs are emitted one label per arc as soon as every element
/// agrees on them; output still pending at a final subset is flushed through
/// a chain of input-epsilon arcs.
pub fn determinize_with_budget<W: Semiring>(a: &Wfst<W>, max_states: usize) -> Result<Wfst<W>> {
    let symbols = (a.input_symbols().cloned(), a.output_symbols().cloned());
    let Some(start) = a.start() else {
        return Ok(Wfst::empty().with_symbols(symbols.0, symbols.1));
    };
    let max_pending = a.num_states() + 1;

    let mut builder = WfstBuilder::new();
    let mut ids: HashMap<SubsetKey, StateId> = HashMap::new();
    let mut subsets: Vec<Vec<Element<W>>> = Vec::new();
    let mut queue = VecDeque::new();

    let first = closure(a, vec![(start, Vec::new(), W::one())], max_pending)?;
    ids.insert(key_of(&first), builder.add_state());
    subsets.push(first);
    queue.push_back(0 as StateId);
    builder.set_start(0);

    let mut flushes = Vec::new();
    while let Some(d) = queue.pop_front() {
        let subset = subsets[d as usize].clone();
        if let Some((pending, w)) = final_output(a, &subset)? {
            if pending.is_empty() {
                builder.set_final(d, w);
            } else {
                flushes.push((d, pending, w));
            }
        }

        let mut moves: BTreeMap<Label, Vec<(StateId, Vec<Label>, W)>> = BTreeMap::new();
        for e in &subset {
            for arc in a.arcs(e.state) {
                if arc.ilabel == EPSILON {
                    continue;
                }
                let mut pending = e.pending.clone();
                if arc.olabel != EPSILON {
                    pending.push(arc.olabel);
                }
                moves
                    .entry(arc.ilabel)
                    .or_default()
                    .push((arc.nextstate, pending, e.residual.times(arc.weight)));
            }
        }
        for (ilabel, seeds) in moves {
            let mut next = closure(a, seeds, max_pending)?;
            let total = next.iter().fold(W::zero(), |acc, e| acc.plus(e.residual));
            if total.is_zero() {
                continue;
            }
            let olabel = common_first_label(&next);
            for e in &mut next {
                if olabel != EPSILON {
                    e.pending.remove(0);
                }
                e.residual = e.residual.divide(total);
            }
            let key = key_of(&next);
            let target = match ids.get(&key) {
                Some(&t) => t,
                None => {
                    if subsets.len() >= max_states {
                        return Err(Error::DeterminizeBudget { budget: max_states });
                    }
                    let t = builder.add_state();
                    ids.insert(key, t);
                    subsets.push(next);
                    queue.push_back(t);
                    t
                }
            };
            builder.add_arc(d, Arc::new(ilabel, olabel, total, target));
        }
    }
    for (d, pending, w) in flushes {
        let mut prev = d;
        let mut weight = w;
        for l in pending {
            let s = builder.add_state();
            builder.add_arc(prev, Arc::new(EPSILON, l, weight, s));
            weight = W::one();
            prev = s;
        }
        builder.set_final(prev, W::one());
    }
    builder.set_input_symbols(symbols.0);
    builder.set_output_symbols(symbols.1);
    builder.build()
}

fn common_first_label<W>(subset: &[Element<W>]) -> Label {
    let first = subset.first().and_then(|e| e.pending.first().copied());
    match first {
        Some(l) if subset.iter().all(|e| e.pending.first() == Some(&l)) => l,
        _ => EPSILON,
    }
}

/// Pending output and `⊕`-summed final weight of a subset, if any element
/// is final.
fn final_output<W: Semiring>(a: &Wfst<W>, subset: &[Element<W>]) -> Result<Option<(Vec<Label>, W)>> {
    let mut out: Option<(&[Label], W)> = None;
    for e in subset.iter().filter(|e| a.is_final(e.state)) {
        let w = e.residual.times(a.final_weight(e.state));
        out = match out {
            None => Some((&e.pending, w)),
            Some((s, acc)) if s == e.pending.as_slice() => Some((s, acc.plus(w))),
            Some(_) => {
                return Err(Error::InvalidInput(
                    "cannot determinize: transducer is not functional".into(),
                ))
            }
        };
    }
    Ok(out.map(|(p, w)| (p.to_vec(), w)))
}

/// Input-epsilon closure of weighted (state, pending output) seeds, merged
/// with `⊕`, in canonical order.
fn closure<W: Semiring>(
    a: &Wfst<W>,
    seeds: Vec<(StateId, Vec<Label>, W)>,
    max_pending: usize,
) -> Result<Vec<Element<W>>> {
    type Key = (StateId, Vec<Label>);
    let mut dist: HashMap<Key, W> = HashMap::new();
    let mut fresh: HashMap<Key, W> = HashMap::new();
    let mut queue: VecDeque<Key> = VecDeque::new();
    let mut queued: HashSet<Key> = HashSet::new();
    for (s, p, w) in seeds {
        let k = (s, p);
        let d = dist.entry(k.clone()).or_insert(W::zero());
        *d = d.plus(w);
        let f = fresh.entry(k.clone()).or_insert(W::zero());
        *f = f.plus(w);
        if queued.insert(k.clone()) {
            queue.push_back(k);
        }
    }
    let mut steps = 0usize;
    let limit = 10_000 * (a.num_arcs() + 1);
    while let Some(k) = queue.pop_front() {
        queued.remove(&k);
        let r = fresh.insert(k.clone(), W::zero()).unwrap_or(W::zero());
        for arc in a.arcs(k.0).iter().filter(|x| x.ilabel == EPSILON) {
            let mut p = k.1.clone();
            if arc.olabel != EPSILON {
                p.push(arc.olabel);
                if p.len() > max_pending {
                    return Err(Error::InvalidInput(
                        "cannot determinize: unbounded output on an input-epsilon cycle".into(),
                    ));
                }
            }
            let nk = (arc.nextstate, p);
            let cand = r.times(arc.weight);
            let old = dist.get(&nk).copied().unwrap_or(W::zero());
            let new = old.plus(cand);
            if !new.approx_eq(old, 1e-12) {
                dist.insert(nk.clone(), new);
                let f = fresh.entry(nk.clone()).or_insert(W::zero());
                *f = f.plus(cand);
                if queued.insert(nk.clone()) {
                    queue.push_back(nk);
                }
            }
        }
        steps += 1;
        if steps > limit {
            return Err(Error::InvalidInput("epsilon closure did not converge".into()));
        }
    }
    let mut out: Vec<Element<W>> = dist
        .into_iter()
        .filter(|(_, w)| !w.is_zero())
        .map(|((state, pending), residual)| Element {
            state,
            pending,
            residual,
        })
        .collect();
    out.sort_by(|x, y| (x.state, &x.pending).cmp(&(y.state, &y.pending)));
    Ok(out)
}
