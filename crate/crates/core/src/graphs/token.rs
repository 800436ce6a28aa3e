use super::UnitTable;
use crate::wfst::{Arc, Label, Semiring, SymbolTable, TropicalWeight, Wfst, WfstBuilder, EPSILON};
use crate::BLANK;

/// Input label of T for CTC label `k`.
pub fn frame_input_label(k: u32) -> Label {
    k + 1
}

/// `<eps>`, then every CTC label shifted by one.
pub fn token_input_symbols(units: &UnitTable) -> SymbolTable {
    let mut t = SymbolTable::new();
    for s in units.symbols() {
        t.add(s);
    }
    t
}

/// Token transducer. State 0 means "last frame was blank (or nothing yet)";
/// state `k` means "last frame was unit `k`". Entering `k` from any other
/// state emits `k`, repeating it or reading blanks emits nothing. Every state
/// is final, so the machine is epsilon-free and input-deterministic.
pub fn build_token_fst(units: &UnitTable) -> Wfst {
    let one = TropicalWeight::one();
    let k = units.num_units() as u32;
    let blank = frame_input_label(BLANK);
    let mut b = WfstBuilder::new();
    b.add_states(k as usize + 1);
    b.set_start(0);
    for s in 0..=k {
        b.set_final(s, one);
        b.add_arc(s, Arc::new(blank, EPSILON, one, 0));
        for u in 1..=k {
            let olabel = if u == s { EPSILON } else { u };
            b.add_arc(s, Arc::new(frame_input_label(u), olabel, one, u));
        }
    }
    b.set_input_symbols(Some(token_input_symbols(units)));
    b.set_output_symbols(Some(units.unit_symbols()));
    b.build().expect("token transducer is well formed")
}
