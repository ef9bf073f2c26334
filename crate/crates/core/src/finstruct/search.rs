//! Bounded formula enumeration for definability searches.
//!
//! Candidates are generated level by level on connective count, with
//! semantic deduplication: two candidates with the same free-variable mask
//! and the same denotation across all worlds are interchangeable for any
//! further composition, so only the first found is kept. The search is
//! relative to its budget: exhausting the budget proves nothing.
//!
//! Worlds abstract the place where a candidate is evaluated: a single
//! structure is one world; a bundle contributes one world per base point,
//! and a candidate formula must match the target in every world at once.

use std::collections::BTreeSet;

use crate::logic::{Formula, Signature, Term, Var};
use crate::Result;

/// Denotation of a formula over a variable mask: for each world, the set of
/// assignments to the masked variables (in mask order).
pub type Den = Vec<BTreeSet<Vec<usize>>>;

/// Evaluation context for the search: variable domains per world and atomic
/// denotations.
pub trait Semantics {
    fn worlds(&self) -> usize;
    /// Domain size of variable `var` in `world`.
    fn domain(&self, world: usize, var: usize) -> usize;
    /// Denotation of an atomic formula (or equality) whose free variables
    /// are exactly `mask` (indices into the search variable list).
    fn atom_den(&self, atom: &Formula, mask: &[usize]) -> Result<Den>;
}

#[derive(Clone, Copy, Debug)]
pub struct SearchBudget {
    /// Maximum connective count of a candidate.
    pub max_size: usize,
    /// Cap on retained (semantically distinct) candidates.
    pub max_candidates: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget { max_size: 7, max_candidates: 60_000 }
    }
}

/// Outcome of a bounded search.
#[derive(Clone, Debug)]
pub enum SearchOutcome {
    Found(Formula),
    /// Budget-relative failure: counts describe the explored space.
    NotFound { explored: usize, max_size_reached: usize },
}

impl SearchOutcome {
    pub fn found(&self) -> Option<&Formula> {
        match self {
            SearchOutcome::Found(f) => Some(f),
            SearchOutcome::NotFound { .. } => None,
        }
    }
}

#[derive(Clone)]
struct Candidate {
    formula: Formula,
    level: u32,
    mask: Vec<usize>,
    den: Den,
}

pub struct Searcher<'a, S: Semantics> {
    sem: &'a S,
    sig: &'a Signature,
    vars: Vec<Var>,
    ctx_len: usize,
    alpha: u32,
    budget: SearchBudget,
}

impl<'a, S: Semantics> Searcher<'a, S> {
    /// `vars` is the full variable list: the first `ctx_len` are the target
    /// context, the rest are existential witnesses.
    pub fn new(
        sem: &'a S,
        sig: &'a Signature,
        vars: Vec<Var>,
        ctx_len: usize,
        alpha: u32,
        budget: SearchBudget,
    ) -> Self {
        Searcher { sem, sig, vars, ctx_len, alpha, budget }
    }

    /// Searches for a formula of level at most `alpha` with free variables
    /// among the context whose denotation equals `target` in every world.
    pub fn search(&self, target: &Den) -> Result<SearchOutcome> {
        let mut seen: BTreeSet<(Vec<usize>, Den)> = BTreeSet::new();
        let mut levels: Vec<Vec<Candidate>> = Vec::new();
        let mut explored = 0usize;

        let mut admit = |c: Candidate,
                         seen: &mut BTreeSet<(Vec<usize>, Den)>,
                         layer: &mut Vec<Candidate>,
                         explored: &mut usize|
         -> Option<Formula> {
            if !seen.insert((c.mask.clone(), c.den.clone())) {
                return None;
            }
            *explored += 1;
            let answer = c.mask.iter().all(|&v| v < self.ctx_len)
                && self.extend_to_ctx(&c.mask, &c.den) == *target;
            let f = c.formula.clone();
            layer.push(c);
            if answer {
                Some(f)
            } else {
                None
            }
        };

        // level 1: atoms
        let mut layer = Vec::new();
        for atom in self.atoms()? {
            let mask = self.mask_of(&atom);
            let den = self.sem.atom_den(&atom, &mask)?;
            let c = Candidate { formula: atom, level: 1, mask, den };
            if let Some(f) = admit(c, &mut seen, &mut layer, &mut explored) {
                return Ok(SearchOutcome::Found(f));
            }
        }
        // ⊤ and ⊥
        for (f, truth) in [(Formula::top(), true), (Formula::bot(), false)] {
            let den: Den = (0..self.sem.worlds())
                .map(|_| {
                    if truth {
                        BTreeSet::from([Vec::new()])
                    } else {
                        BTreeSet::new()
                    }
                })
                .collect();
            let c = Candidate { formula: f, level: 1, mask: Vec::new(), den };
            if let Some(f) = admit(c, &mut seen, &mut layer, &mut explored) {
                return Ok(SearchOutcome::Found(f));
            }
        }
        levels.push(layer);

        for size in 2..=self.budget.max_size {
            let mut layer = Vec::new();
            // unary extensions of the previous level
            let prev = levels.last().unwrap().clone();
            for c in &prev {
                // existential quantification over witness variables
                for w in self.ctx_len..self.vars.len() {
                    let q = self.quantify(c, w);
                    if let Some(f) = admit(q, &mut seen, &mut layer, &mut explored) {
                        return Ok(SearchOutcome::Found(f));
                    }
                }
                // negation, when the level budget allows
                if c.level + 1 <= self.alpha {
                    let n = self.negate(c);
                    if let Some(f) = admit(n, &mut seen, &mut layer, &mut explored) {
                        return Ok(SearchOutcome::Found(f));
                    }
                }
            }
            // binary combinations with total size = size
            for left_size in 1..(size - 1) {
                let right_size = size - 1 - left_size;
                if right_size < 1 || right_size >= size {
                    continue;
                }
                if left_size > levels.len() || right_size > levels.len() {
                    continue;
                }
                let lefts = levels[left_size - 1].clone();
                let rights = levels[right_size - 1].clone();
                for l in &lefts {
                    for r in &rights {
                        for conj in [true, false] {
                            let c = self.combine(l, r, conj);
                            if let Some(f) = admit(c, &mut seen, &mut layer, &mut explored) {
                                return Ok(SearchOutcome::Found(f));
                            }
                        }
                    }
                }
                if explored > self.budget.max_candidates {
                    return Ok(SearchOutcome::NotFound { explored, max_size_reached: size });
                }
            }
            if explored > self.budget.max_candidates {
                return Ok(SearchOutcome::NotFound { explored, max_size_reached: size });
            }
            levels.push(layer);
        }
        Ok(SearchOutcome::NotFound { explored, max_size_reached: self.budget.max_size })
    }

    fn atoms(&self) -> Result<Vec<Formula>> {
        let mut out = Vec::new();
        for (rel, args) in self.sig.relations() {
            let slots: Vec<Vec<usize>> = args
                .iter()
                .map(|s| {
                    (0..self.vars.len()).filter(|&i| &self.vars[i].sort == s).collect::<Vec<_>>()
                })
                .collect();
            for combo in super::product(&slots.iter().map(|v| v.len()).collect::<Vec<_>>()) {
                let terms: Vec<Term> = combo
                    .iter()
                    .zip(&slots)
                    .map(|(&k, slot)| Term::Var(self.vars[slot[k]].clone()))
                    .collect();
                out.push(Formula::Atomic(rel.clone(), terms));
            }
        }
        for i in 0..self.vars.len() {
            for j in (i + 1)..self.vars.len() {
                if self.vars[i].sort == self.vars[j].sort {
                    out.push(Formula::Eq(
                        Term::Var(self.vars[i].clone()),
                        Term::Var(self.vars[j].clone()),
                    ));
                }
            }
        }
        Ok(out)
    }

    fn mask_of(&self, f: &Formula) -> Vec<usize> {
        let free = f.free_vars();
        (0..self.vars.len()).filter(|&i| free.contains(&self.vars[i])).collect()
    }

    /// Extends a masked denotation to the full context by cylindrification.
    fn extend_to_ctx(&self, mask: &[usize], den: &Den) -> Den {
        (0..self.sem.worlds())
            .map(|w| {
                let mut out = BTreeSet::new();
                let sizes: Vec<usize> =
                    (0..self.ctx_len).map(|v| self.sem.domain(w, v)).collect();
                for tuple in super::product(&sizes) {
                    let projected: Vec<usize> = mask.iter().map(|&v| tuple[v]).collect();
                    if den[w].contains(&projected) {
                        out.insert(tuple);
                    }
                }
                out
            })
            .collect()
    }

    fn quantify(&self, c: &Candidate, var: usize) -> Candidate {
        let formula = Formula::exists(self.vars[var].clone(), c.formula.clone());
        match c.mask.iter().position(|&v| v == var) {
            Some(pos) => {
                let mask: Vec<usize> =
                    c.mask.iter().copied().filter(|&v| v != var).collect();
                let den = c
                    .den
                    .iter()
                    .map(|world| {
                        world
                            .iter()
                            .map(|t| {
                                let mut u = t.clone();
                                u.remove(pos);
                                u
                            })
                            .collect()
                    })
                    .collect();
                Candidate { formula, level: c.level, mask, den }
            }
            None => {
                // vacuous quantifier: true wherever the witness domain is
                // nonempty (false over empty fibers)
                let den = (0..self.sem.worlds())
                    .map(|w| {
                        if self.sem.domain(w, var) > 0 {
                            c.den[w].clone()
                        } else {
                            BTreeSet::new()
                        }
                    })
                    .collect();
                Candidate { formula, level: c.level, mask: c.mask.clone(), den }
            }
        }
    }

    fn negate(&self, c: &Candidate) -> Candidate {
        let den = (0..self.sem.worlds())
            .map(|w| {
                let sizes: Vec<usize> = c.mask.iter().map(|&v| self.sem.domain(w, v)).collect();
                super::product(&sizes)
                    .into_iter()
                    .filter(|t| !c.den[w].contains(t))
                    .collect()
            })
            .collect();
        Candidate {
            formula: Formula::not(c.formula.clone()),
            level: c.level + 1,
            mask: c.mask.clone(),
            den,
        }
    }

    fn combine(&self, l: &Candidate, r: &Candidate, conj: bool) -> Candidate {
        let mask: Vec<usize> = {
            let mut m: BTreeSet<usize> = l.mask.iter().copied().collect();
            m.extend(r.mask.iter().copied());
            m.into_iter().collect()
        };
        let den: Den = (0..self.sem.worlds())
            .map(|w| {
                let sizes: Vec<usize> = mask.iter().map(|&v| self.sem.domain(w, v)).collect();
                let l_pos: Vec<usize> =
                    l.mask.iter().map(|v| mask.iter().position(|m| m == v).unwrap()).collect();
                let r_pos: Vec<usize> =
                    r.mask.iter().map(|v| mask.iter().position(|m| m == v).unwrap()).collect();
                super::product(&sizes)
                    .into_iter()
                    .filter(|t| {
                        let lt: Vec<usize> = l_pos.iter().map(|&p| t[p]).collect();
                        let rt: Vec<usize> = r_pos.iter().map(|&p| t[p]).collect();
                        if conj {
                            l.den[w].contains(&lt) && r.den[w].contains(&rt)
                        } else {
                            l.den[w].contains(&lt) || r.den[w].contains(&rt)
                        }
                    })
                    .collect()
            })
            .collect();
        let formula = if conj {
            Formula::And(vec![l.formula.clone(), r.formula.clone()])
        } else {
            Formula::Or(vec![l.formula.clone(), r.formula.clone()])
        };
        Candidate { formula, level: l.level.max(r.level), mask, den }
    }
}

/// Single-structure semantics for [`Searcher`].
pub struct StructureSemantics<'a> {
    pub structure: &'a super::FinStructure,
    pub vars: Vec<Var>,
}

impl Semantics for StructureSemantics<'_> {
    fn worlds(&self) -> usize {
        1
    }

    fn domain(&self, _world: usize, var: usize) -> usize {
        self.structure.universe(&self.vars[var].sort).len()
    }

    fn atom_den(&self, atom: &Formula, mask: &[usize]) -> Result<Den> {
        let ctx: Vec<Var> = mask.iter().map(|&i| self.vars[i].clone()).collect();
        Ok(vec![self.structure.denotation(atom, &ctx)?])
    }
}

/// Searches for a formula of level at most `alpha`, with `extra_witnesses`
/// existential variables per sort beyond the context, defining `target`
/// over `ctx` in the single structure `m`. The outcome is budget-relative.
pub fn definability_search(
    m: &super::FinStructure,
    target: &BTreeSet<Vec<usize>>,
    ctx: &[Var],
    alpha: u32,
    extra_witnesses: usize,
    budget: SearchBudget,
) -> Result<SearchOutcome> {
    let mut vars: Vec<Var> = ctx.to_vec();
    for sort in m.signature().sorts().clone() {
        for k in 0..extra_witnesses {
            vars.push(Var::new(format!("w{k}_{sort}"), sort.clone()));
        }
    }
    let sem = StructureSemantics { structure: m, vars: vars.clone() };
    let searcher = Searcher::new(&sem, m.signature(), vars, ctx.len(), alpha, budget);
    searcher.search(&vec![target.clone()])
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::super::FinStructure;
    use super::*;
    use crate::logic::{classify, print_formula, Signature};

    fn m_p0() -> FinStructure {
        let sig = Signature::relational(vec![("P", 1)]).unwrap();
        FinStructure::new(
            sig,
            [("elem".to_string(), vec!["e0".into(), "e1".into()])].into(),
            [("P".to_string(), BTreeSet::from([vec![0]]))].into(),
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn finds_atomic_definition() {
        let m = m_p0();
        let ctx = vec![Var::new("x", "elem")];
        let target = BTreeSet::from([vec![0]]);
        let out =
            definability_search(&m, &target, &ctx, 1, 1, SearchBudget::default()).unwrap();
        let f = out.found().expect("P(x) should be found");
        assert_eq!(print_formula(f), "P(x)");
        assert_eq!(classify(f).sigma, 1);
        assert_eq!(m.denotation(f, &ctx).unwrap(), target);
    }

    #[test]
    fn complement_needs_level_two() {
        let m = m_p0();
        let ctx = vec![Var::new("x", "elem")];
        let target = BTreeSet::from([vec![1]]);
        // not definable at Σ1 within a generous budget
        let out = definability_search(
            &m,
            &target,
            &ctx,
            1,
            1,
            SearchBudget { max_size: 5, max_candidates: 50_000 },
        )
        .unwrap();
        assert!(out.found().is_none(), "Σ1 should not define the complement");
        // found at Σ2
        let out =
            definability_search(&m, &target, &ctx, 2, 1, SearchBudget::default()).unwrap();
        let f = out.found().expect("¬P(x) should be found");
        assert_eq!(m.denotation(f, &ctx).unwrap(), target);
        assert!(classify(f).sigma <= 2);
    }

    #[test]
    fn whole_universe_is_top() {
        let m = m_p0();
        let ctx = vec![Var::new("x", "elem")];
        let target = BTreeSet::from([vec![0], vec![1]]);
        let out =
            definability_search(&m, &target, &ctx, 1, 0, SearchBudget::default()).unwrap();
        let f = out.found().expect("definable");
        assert_eq!(m.denotation(f, &ctx).unwrap(), target);
    }

    #[test]
    fn search_respects_postconditions_on_found_formulas() {
        // every found formula must define the target and stay within level
        let m = m_p0();
        let ctx = vec![Var::new("x", "elem"), Var::new("y", "elem")];
        for target_bits in 0u32..16 {
            let target: BTreeSet<Vec<usize>> = (0..4)
                .filter(|i| target_bits & (1 << i) != 0)
                .map(|i| vec![i / 2, i % 2])
                .collect();
            if let SearchOutcome::Found(f) = definability_search(
                &m,
                &target,
                &ctx,
                2,
                1,
                SearchBudget { max_size: 7, max_candidates: 100_000 },
            )
            .unwrap()
            {
                assert_eq!(m.denotation(&f, &ctx).unwrap(), target, "target {target_bits}");
                assert!(classify(&f).sigma <= 2);
            }
        }
    }
}
