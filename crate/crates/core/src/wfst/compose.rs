use std::collections::{HashMap, VecDeque};

use super::{Arc, Label, Semiring, StateId, Wfst, WfstBuilder, EPSILON};
use crate::{Error, Result};

/// Filter state: 0 after a matched move or at the start, 1 after `a` moved
/// alone on an output epsilon, 2 after `b` moved alone on an input epsilon.
type Filter = u8;

/// Composition with the three-state epsilon filter, so each pair of
/// epsilon-aligned paths is counted once.
pub fn compose<W: Semiring>(a: &Wfst<W>, b: &Wfst<W>) -> Result<Wfst<W>> {
    if let (Some(x), Some(y)) = (a.output_symbols(), b.input_symbols()) {
        if !x.is_compatible(y) {
            return Err(Error::SymbolMismatch(
                "left output symbols differ from right input symbols".into(),
            ));
        }
    }
    let symbols = (a.input_symbols().cloned(), b.output_symbols().cloned());
    let (Some(sa), Some(sb)) = (a.start(), b.start()) else {
        return Ok(Wfst::empty().with_symbols(symbols.0, symbols.1));
    };

    let by_ilabel: Vec<HashMap<Label, Vec<usize>>> = b
        .states()
        .map(|s| {
            let mut m: HashMap<Label, Vec<usize>> = HashMap::new();
            for (i, arc) in b.arcs(s).iter().enumerate() {
                m.entry(arc.ilabel).or_default().push(i);
            }
            m
        })
        .collect();

    let mut builder = WfstBuilder::new();
    let mut ids: HashMap<(StateId, StateId, Filter), StateId> = HashMap::new();
    let mut queue = VecDeque::new();
    let mut intern = |key: (StateId, StateId, Filter), builder: &mut WfstBuilder<W>, queue: &mut VecDeque<_>| {
        *ids.entry(key).or_insert_with(|| {
            queue.push_back(key);
            builder.add_state()
        })
    };
    let start = intern((sa, sb, 0), &mut builder, &mut queue);
    builder.set_start(start);

    while let Some(key @ (qa, qb, f)) = queue.pop_front() {
        let src = intern(key, &mut builder, &mut queue);
        let fw = a.final_weight(qa).times(b.final_weight(qb));
        if !fw.is_zero() {
            builder.set_final(src, fw);
        }
        let empty = Vec::new();
        for arc_a in a.arcs(qa) {
            if arc_a.olabel == EPSILON {
                // `a` moves alone.
                if f != 2 {
                    let t = intern((arc_a.nextstate, qb, 1), &mut builder, &mut queue);
                    builder.add_arc(src, Arc::new(arc_a.ilabel, EPSILON, arc_a.weight, t));
                }
                // Both move on epsilon.
                if f == 0 {
                    for &i in by_ilabel[qb as usize].get(&EPSILON).unwrap_or(&empty) {
                        let arc_b = &b.arcs(qb)[i];
                        let t = intern((arc_a.nextstate, arc_b.nextstate, 0), &mut builder, &mut queue);
                        builder.add_arc(
                            src,
                            Arc::new(arc_a.ilabel, arc_b.olabel, arc_a.weight.times(arc_b.weight), t),
                        );
                    }
                }
                continue;
            }
            for &i in by_ilabel[qb as usize].get(&arc_a.olabel).unwrap_or(&empty) {
                let arc_b = &b.arcs(qb)[i];
                let t = intern((arc_a.nextstate, arc_b.nextstate, 0), &mut builder, &mut queue);
                builder.add_arc(
                    src,
                    Arc::new(arc_a.ilabel, arc_b.olabel, arc_a.weight.times(arc_b.weight), t),
                );
            }
        }
        // `b` moves alone on an input epsilon.
        if f != 1 {
            for &i in by_ilabel[qb as usize].get(&EPSILON).unwrap_or(&empty) {
                let arc_b = &b.arcs(qb)[i];
                let t = intern((qa, arc_b.nextstate, 2), &mut builder, &mut queue);
                builder.add_arc(src, Arc::new(EPSILON, arc_b.olabel, arc_b.weight, t));
            }
        }
    }
    builder.set_input_symbols(symbols.0);
    builder.set_output_symbols(symbols.1);
    Ok(builder.build()?.connect())
}
