use super::{build_word_loop, is_disambig_symbol};
use crate::wfst::{compose, determinize, minimize, Side, Wfst, EPSILON};
use crate::Result;

/// Replaces input-side disambiguation symbols with epsilon.
pub fn remove_disambiguation(fst: &Wfst) -> Wfst {
    let Some(isyms) = fst.input_symbols() else {
        return fst.clone();
    };
    let disambig: Vec<bool> = isyms.iter().map(|(_, s)| is_disambig_symbol(s)).collect();
    fst.relabel(Side::Input, |l| {
        if disambig.get(l as usize).copied().unwrap_or(false) {
            EPSILON
        } else {
            l
        }
    })
}

/// `T ∘ min(det(L ∘ G))`, with disambiguation symbols removed after
/// minimization.
pub fn compile_search_graph(t: &Wfst, l: &Wfst, g: &Wfst) -> Result<Wfst> {
    let lg = compose(l, g)?;
    let lg = determinize(&lg)?;
    let lg = minimize(&lg)?;
    log::debug!("min(det(L∘G)): {} states, {} arcs", lg.num_states(), lg.num_arcs());
    let s = compose(t, &remove_disambiguation(&lg))?;
    log::debug!("search graph: {} states, {} arcs", s.num_states(), s.num_arcs());
    Ok(s)
}

/// `T ∘ (L ∘ G)` without determinization or minimization; same relation as
/// [`compile_search_graph`].
pub fn compile_unoptimized_graph(t: &Wfst, l: &Wfst, g: &Wfst) -> Result<Wfst> {
    compose(t, &remove_disambiguation(&compose(l, g)?))
}

/// Search graph with a free word loop in place of the grammar.
pub fn compile_lexicon_only_graph(t: &Wfst, l: &Wfst) -> Result<Wfst> {
    let words = l
        .output_symbols()
        .cloned()
        .ok_or_else(|| crate::Error::InvalidInput("lexicon transducer has no word table".into()))?;
    compile_search_graph(t, l, &build_word_loop(&words))
}
