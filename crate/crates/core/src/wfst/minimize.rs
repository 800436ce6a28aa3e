use std::collections::{HashMap, VecDeque};

use super::{quantize, Arc, Label, Semiring, StateId, Wfst, WfstBuilder};
use crate::{Error, Result};

/// Reweights every arc with the potential `V(q)` = `⊕` of path weights from
/// `q` to a final state, so each state's outgoing weights `⊕` to one. The
/// start state keeps potential one, leaving path weights unchanged. States
/// that cannot reach a final state keep their weights.
pub fn push_weights<W: Semiring>(a: &Wfst<W>) -> Result<Wfst<W>> {
    let potential = distance_to_final(a)?;
    let start = a.start();
    let v = |s: StateId| {
        let p = potential[s as usize];
        if Some(s) == start || p.is_zero() {
            W::one()
        } else {
            p
        }
    };
    let mut out = WfstBuilder::new();
    out.add_states(a.num_states());
    if let Some(s) = start {
        out.set_start(s);
    }
    for s in a.states() {
        for arc in a.arcs(s) {
            let w = arc.weight.times(v(arc.nextstate)).divide(v(s));
            out.add_arc(s, Arc { weight: w, ..*arc });
        }
        out.set_final(s, a.final_weight(s).divide(v(s)));
    }
    out.set_input_symbols(a.input_symbols().cloned());
    out.set_output_symbols(a.output_symbols().cloned());
    out.build()
}

fn distance_to_final<W: Semiring>(a: &Wfst<W>) -> Result<Vec<W>> {
    let n = a.num_states();
    let mut incoming: Vec<Vec<(StateId, W)>> = vec![Vec::new(); n];
    for s in a.states() {
        for arc in a.arcs(s) {
            incoming[arc.nextstate as usize].push((s, arc.weight));
        }
    }
    let mut dist: Vec<W> = a.states().map(|s| a.final_weight(s)).collect();
    let mut fresh = dist.clone();
    let mut queued = vec![false; n];
    let mut queue: VecDeque<StateId> = a.states().filter(|&s| a.is_final(s)).collect();
    for &s in &queue {
        queued[s as usize] = true;
    }
    let mut budget = 1_000usize.saturating_mul(n.max(1)).saturating_mul(a.num_arcs().max(1));
    while let Some(s) = queue.pop_front() {
        queued[s as usize] = false;
        let r = std::mem::replace(&mut fresh[s as usize], W::zero());
        for &(p, w) in &incoming[s as usize] {
            let cand = w.times(r);
            let updated = dist[p as usize].plus(cand);
            if !updated.approx_eq(dist[p as usize], 1e-12) {
                dist[p as usize] = updated;
                fresh[p as usize] = fresh[p as usize].plus(cand);
                if !queued[p as usize] {
                    queued[p as usize] = true;
                    queue.push_back(p);
                }
            }
        }
        budget = budget
            .checked_sub(1)
            .ok_or_else(|| Error::InvalidInput("weight pushing did not converge".into()))?;
    }
    Ok(dist)
}

/// Weight pushing followed by partition refinement over arcs encoded as
/// (input, output, weight) triples.
pub fn minimize<W: Semiring>(a: &Wfst<W>) -> Result<Wfst<W>> {
    if !a.is_input_deterministic() {
        return Err(Error::NonDeterministic(
            "minimization needs an input-deterministic machine".into(),
        ));
    }
    let a = push_weights(&a.connect())?;
    let Some(start) = a.start() else {
        return Ok(a);
    };
    let n = a.num_states();

    let mut block: Vec<usize> = Vec::with_capacity(n);
    let mut names: HashMap<i64, usize> = HashMap::new();
    for s in a.states() {
        let next = names.len();
        block.push(*names.entry(quantize(a.final_weight(s).value())).or_insert(next));
    }
    let mut count = names.len();
    loop {
        let mut sigs: HashMap<(usize, Vec<(Label, Label, i64, usize)>), usize> = HashMap::new();
        let mut refined = Vec::with_capacity(n);
        for s in a.states() {
            let mut sig: Vec<(Label, Label, i64, usize)> = a
                .arcs(s)
                .iter()
                .map(|x| (x.ilabel, x.olabel, quantize(x.weight.value()), block[x.nextstate as usize]))
                .collect();
            sig.sort_unstable();
            let next = sigs.len();
            refined.push(*sigs.entry((block[s as usize], sig)).or_insert(next));
        }
        block = refined;
        if sigs.len() == count {
            break;
        }
        count = sigs.len();
    }

    // Number blocks by first appearance in breadth-first order from start.
    let mut order = vec![usize::MAX; count];
    let mut rep = Vec::with_capacity(count);
    let mut queue = VecDeque::from([start]);
    order[block[start as usize]] = 0;
    rep.push(start);
    while let Some(s) = queue.pop_front() {
        for x in a.arcs(s) {
            let bl = block[x.nextstate as usize];
            if order[bl] == usize::MAX {
                order[bl] = rep.len();
                rep.push(x.nextstate);
                queue.push_back(x.nextstate);
            }
        }
    }
    let mut b = WfstBuilder::new();
    b.add_states(rep.len());
    b.set_start(0);
    for (i, &s) in rep.iter().enumerate() {
        for x in a.arcs(s) {
            let t = order[block[x.nextstate as usize]] as StateId;
            b.add_arc(i as StateId, Arc { nextstate: t, ..*x });
        }
        b.set_final(i as StateId, a.final_weight(s));
    }
    b.set_input_symbols(a.input_symbols().cloned());
    b.set_output_symbols(a.output_symbols().cloned());
    b.build()
}
