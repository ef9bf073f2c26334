//! Finite multi-sorted structures: evaluation, enumeration up to
//! isomorphism, automorphism orbits, bounded definability search, Scott
//! sentences, and back-and-forth equivalence.

use std::collections::{BTreeMap, BTreeSet};

use crate::logic::{Formula, Signature, Term, Var};
use crate::{Error, Result};

pub mod search;

/// A finite structure. Universes are per sort; relation interpretations are
/// tuple sets; function interpretations are total tables. Elements are
/// referenced by index into their sort's universe.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct FinStructure {
    sig: Signature,
    universes: BTreeMap<String, Vec<String>>,
    relations: BTreeMap<String, BTreeSet<Vec<usize>>>,
    functions: BTreeMap<String, BTreeMap<Vec<usize>, usize>>,
}

impl FinStructure {
    pub fn new(
        sig: Signature,
        universes: BTreeMap<String, Vec<String>>,
        relations: BTreeMap<String, BTreeSet<Vec<usize>>>,
        functions: BTreeMap<String, BTreeMap<Vec<usize>, usize>>,
    ) -> Result<FinStructure> {
        let m = FinStructure { sig, universes, relations, functions };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for sort in self.sig.sorts() {
            if !self.universes.contains_key(sort) {
                return Err(Error::Structure(format!("missing universe for sort {sort}")));
            }
        }
        for r in self.sig.relations().keys() {
            if !self.relations.contains_key(r) {
                return Err(Error::Structure(format!("missing interpretation for {r}")));
            }
        }
        for (r, tuples) in &self.relations {
            let args = self.sig.relation_args(r)?;
            for t in tuples {
                if t.len() != args.len() {
                    return Err(Error::Structure(format!("arity mismatch in {r}")));
                }
                for (i, s) in t.iter().zip(args) {
                    if *i >= self.universe(s).len() {
                        return Err(Error::Structure(format!("tuple out of range in {r}")));
                    }
                }
            }
        }
        for f in self.sig.functions().keys() {
            if !self.functions.contains_key(f) {
                return Err(Error::Structure(format!("missing interpretation for {f}")));
            }
        }
        for (f, table) in &self.functions {
            let (args, res) = self.sig.function_decl(f)?;
            let expected: usize = args.iter().map(|s| self.universe(s).len()).product();
            if table.len() != expected {
                return Err(Error::Structure(format!(
                    "function {f} is not total: {} of {expected} entries",
                    table.len()
                )));
            }
            for (t, v) in table {
                if t.len() != args.len() {
                    return Err(Error::Structure(format!("arity mismatch in {f}")));
                }
                for (i, s) in t.iter().zip(args) {
                    if *i >= self.universe(s).len() {
                        return Err(Error::Structure(format!("argument out of range in {f}")));
                    }
                }
                if *v >= self.universe(res).len() {
                    return Err(Error::Structure(format!("value out of range in {f}")));
                }
            }
        }
        Ok(())
    }

    pub fn signature(&self) -> &Signature {
        &self.sig
    }

    pub fn universe(&self, sort: &str) -> &[String] {
        self.universes.get(sort).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn universes(&self) -> &BTreeMap<String, Vec<String>> {
        &self.universes
    }

    pub fn relation(&self, name: &str) -> &BTreeSet<Vec<usize>> {
        static EMPTY: BTreeSet<Vec<usize>> = BTreeSet::new();
        self.relations.get(name).unwrap_or(&EMPTY)
    }

    pub fn relations(&self) -> &BTreeMap<String, BTreeSet<Vec<usize>>> {
        &self.relations
    }

    pub fn function(&self, name: &str) -> Option<&BTreeMap<Vec<usize>, usize>> {
        self.functions.get(name)
    }

    pub fn functions(&self) -> &BTreeMap<String, BTreeMap<Vec<usize>, usize>> {
        &self.functions
    }

    pub fn total_size(&self) -> usize {
        self.universes.values().map(|u| u.len()).sum()
    }

    fn term_value(&self, t: &Term, env: &BTreeMap<String, usize>) -> Result<usize> {
        match t {
            Term::Var(v) => env
                .get(&v.name)
                .copied()
                .ok_or_else(|| Error::Structure(format!("unbound variable {}", v.name))),
            Term::App(f, args) => {
                let tuple: Vec<usize> =
                    args.iter().map(|a| self.term_value(a, env)).collect::<Result<_>>()?;
                self.functions
                    .get(f)
                    .and_then(|table| table.get(&tuple))
                    .copied()
                    .ok_or_else(|| Error::Structure(format!("function {f} undefined")))
            }
        }
    }

    /// Tarskian satisfaction. The environment must cover the free variables;
    /// the empty conjunction is true and the empty disjunction is false.
    pub fn evaluate(&self, f: &Formula, env: &BTreeMap<String, usize>) -> Result<bool> {
        match f {
            Formula::Atomic(r, args) => {
                if !self.relations.contains_key(r) {
                    return Err(Error::Structure(format!("unknown relation {r}")));
                }
                let tuple: Vec<usize> =
                    args.iter().map(|a| self.term_value(a, env)).collect::<Result<_>>()?;
                Ok(self.relation(r).contains(&tuple))
            }
            Formula::Eq(a, b) => Ok(self.term_value(a, env)? == self.term_value(b, env)?),
            Formula::And(fs) => {
                for g in fs {
                    if !self.evaluate(g, env)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Formula::Or(fs) => {
                for g in fs {
                    if self.evaluate(g, env)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Formula::Not(g) => Ok(!self.evaluate(g, env)?),
            Formula::Exists(v, body) => {
                let n = self.universe(&v.sort).len();
                for i in 0..n {
                    let mut inner = env.clone();
                    inner.insert(v.name.clone(), i);
                    if self.evaluate(body, &inner)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }

    pub fn satisfies_sentence(&self, f: &Formula) -> Result<bool> {
        self.evaluate(f, &BTreeMap::new())
    }

    /// The set of context tuples satisfying the formula.
    pub fn denotation(&self, f: &Formula, ctx: &[Var]) -> Result<BTreeSet<Vec<usize>>> {
        let mut out = BTreeSet::new();
        let sizes: Vec<usize> = ctx.iter().map(|v| self.universe(&v.sort).len()).collect();
        for tuple in product(&sizes) {
            let env: BTreeMap<String, usize> =
                ctx.iter().zip(&tuple).map(|(v, &i)| (v.name.clone(), i)).collect();
            if self.evaluate(f, &env)? {
                out.insert(tuple);
            }
        }
        Ok(out)
    }
}

/// All tuples of the given radix vector, lexicographically.
pub fn product(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &n in sizes {
        let mut next = Vec::with_capacity(out.len().saturating_mul(n));
        for t in &out {
            for i in 0..n {
                let mut u = t.clone();
                u.push(i);
                next.push(u);
            }
        }
        out = next;
    }
    out
}

fn all_tuples(args: &[String], m: &FinStructure) -> Vec<Vec<usize>> {
    product(&args.iter().map(|s| m.universe(s).len()).collect::<Vec<_>>())
}

/// A sort-respecting bijection between two structures' universes.
pub type SortedBijection = BTreeMap<String, Vec<usize>>;

/// All isomorphisms from `m` to `n`, by backtracking over sort-respecting
/// assignments with fail-fast relation checks and degree pruning.
pub fn isomorphisms(m: &FinStructure, n: &FinStructure) -> Vec<SortedBijection> {
    if m.signature() != n.signature() {
        return Vec::new();
    }
    let sig = m.signature();
    for sort in sig.sorts() {
        if m.universe(sort).len() != n.universe(sort).len() {
            return Vec::new();
        }
    }
    let mut slots: Vec<(String, usize)> = Vec::new();
    for sort in sig.sorts() {
        for i in 0..m.universe(sort).len() {
            slots.push((sort.clone(), i));
        }
    }
    let m_deg = degree_tags(m);
    let n_deg = degree_tags(n);
    let mut partial: BTreeMap<String, Vec<Option<usize>>> = sig
        .sorts()
        .iter()
        .map(|s| (s.clone(), vec![None; m.universe(s).len()]))
        .collect();
    let mut used: BTreeMap<String, Vec<bool>> = sig
        .sorts()
        .iter()
        .map(|s| (s.clone(), vec![false; n.universe(s).len()]))
        .collect();
    let mut out = Vec::new();
    backtrack(m, n, &slots, 0, &m_deg, &n_deg, &mut partial, &mut used, &mut out);
    out
}

fn degree_tags(m: &FinStructure) -> BTreeMap<(String, usize), Vec<usize>> {
    let sig = m.signature();
    let mut tags = BTreeMap::new();
    for sort in sig.sorts() {
        for i in 0..m.universe(sort).len() {
            let mut tag = Vec::new();
            for (r, args) in sig.relations() {
                for (pos, s) in args.iter().enumerate() {
                    if s == sort {
                        tag.push(m.relation(r).iter().filter(|t| t[pos] == i).count());
                    }
                }
            }
            for (f, (args, res)) in sig.functions() {
                if res == sort {
                    tag.push(
                        m.function(f).map(|t| t.values().filter(|&&v| v == i).count()).unwrap_or(0),
                    );
                }
                for (pos, s) in args.iter().enumerate() {
                    if s == sort {
                        tag.push(
                            m.function(f)
                                .map(|t| t.keys().filter(|k| k[pos] == i).count())
                                .unwrap_or(0),
                        );
                    }
                }
            }
            tags.insert((sort.clone(), i), tag);
        }
    }
    tags
}

#[allow(clippy::too_many_arguments)]
fn backtrack(
    m: &FinStructure,
    n: &FinStructure,
    slots: &[(String, usize)],
    depth: usize,
    m_deg: &BTreeMap<(String, usize), Vec<usize>>,
    n_deg: &BTreeMap<(String, usize), Vec<usize>>,
    partial: &mut BTreeMap<String, Vec<Option<usize>>>,
    used: &mut BTreeMap<String, Vec<bool>>,
    out: &mut Vec<SortedBijection>,
) {
    if depth == slots.len() {
        let candidate: SortedBijection = partial
            .iter()
            .map(|(s, v)| (s.clone(), v.iter().map(|o| o.unwrap()).collect()))
            .collect();
        if preserves_everything(m, n, &candidate) {
            out.push(candidate);
        }
        return;
    }
    let (sort, elem) = &slots[depth];
    for target in 0..n.universe(sort).len() {
        if used[sort][target] {
            continue;
        }
        if m_deg[&(sort.clone(), *elem)] != n_deg[&(sort.clone(), target)] {
            continue;
        }
        partial.get_mut(sort).unwrap()[*elem] = Some(target);
        used.get_mut(sort).unwrap()[target] = true;
        if consistent_so_far(m, n, partial) {
            backtrack(m, n, slots, depth + 1, m_deg, n_deg, partial, used, out);
        }
        partial.get_mut(sort).unwrap()[*elem] = None;
        used.get_mut(sort).unwrap()[target] = false;
    }
}

/// Checks preservation on fully assigned tuples only.
fn consistent_so_far(
    m: &FinStructure,
    n: &FinStructure,
    partial: &BTreeMap<String, Vec<Option<usize>>>,
) -> bool {
    let sig = m.signature();
    for (r, args) in sig.relations() {
        for t in all_tuples(args, m) {
            let image: Option<Vec<usize>> =
                t.iter().zip(args).map(|(&i, s)| partial[s][i]).collect();
            if let Some(img) = image {
                if m.relation(r).contains(&t) != n.relation(r).contains(&img) {
                    return false;
                }
            }
        }
    }
    for (f, (args, res)) in sig.functions() {
        if let (Some(mt), Some(nt)) = (m.function(f), n.function(f)) {
            for (t, &v) in mt {
                let image: Option<Vec<usize>> =
                    t.iter().zip(args).map(|(&i, s)| partial[s][i]).collect();
                if let (Some(img), Some(iv)) = (image, partial[res][v]) {
                    if nt.get(&img) != Some(&iv) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

fn preserves_everything(m: &FinStructure, n: &FinStructure, map: &SortedBijection) -> bool {
    let sig = m.signature();
    for (r, args) in sig.relations() {
        for t in all_tuples(args, m) {
            let img: Vec<usize> = t.iter().zip(args).map(|(&i, s)| map[s][i]).collect();
            if m.relation(r).contains(&t) != n.relation(r).contains(&img) {
                return false;
            }
        }
    }
    for (f, (args, res)) in sig.functions() {
        let (mt, nt) = match (m.function(f), n.function(f)) {
            (Some(a), Some(b)) => (a, b),
            _ => return false,
        };
        for (t, &v) in mt {
            let img: Vec<usize> = t.iter().zip(args).map(|(&i, s)| map[s][i]).collect();
            if nt.get(&img) != Some(&map[res][v]) {
                return false;
            }
        }
    }
    true
}

pub fn are_isomorphic(m: &FinStructure, n: &FinStructure) -> bool {
    !isomorphisms(m, n).is_empty()
}

/// Applies a bijection to a tuple with the given sort profile.
pub fn apply_bijection(map: &SortedBijection, sorts: &[String], tuple: &[usize]) -> Vec<usize> {
    tuple.iter().zip(sorts).map(|(&i, s)| map[s][i]).collect()
}

/// Orbit partition of tuples with the given sort profile under the
/// automorphism group. Orbits are sorted by their least tuple.
pub fn orbits(m: &FinStructure, sorts: &[String]) -> Vec<BTreeSet<Vec<usize>>> {
    let autos = isomorphisms(m, m);
    let tuples = all_tuples(sorts, m);
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut out = Vec::new();
    for t in tuples {
        if seen.contains(&t) {
            continue;
        }
        let mut orbit = BTreeSet::new();
        for g in &autos {
            orbit.insert(apply_bijection(g, sorts, &t));
        }
        seen.extend(orbit.iter().cloned());
        out.push(orbit);
    }
    out
}

/// Enumerates one representative per isomorphism class of structures whose
/// sort sizes are at most `bound` and which satisfy every axiom.
/// Deterministic order: sizes, then interpretations, lexicographically.
pub fn all_models(sig: &Signature, bound: usize, axioms: &[Formula]) -> Result<Vec<FinStructure>> {
    let mut sorted_axioms: Vec<&Formula> = axioms.iter().collect();
    sorted_axioms.sort_by_key(|f| f.size());
    let sorts = sig.sorts().to_vec();
    let mut reps: Vec<FinStructure> = Vec::new();
    for sizes in product(&vec![bound + 1; sorts.len()]) {
        let universes: BTreeMap<String, Vec<String>> = sorts
            .iter()
            .zip(&sizes)
            .map(|(s, &k)| (s.clone(), (0..k).map(|i| format!("{s}{i}")).collect()))
            .collect();
        enumerate_interpretations(sig, &universes, &mut |m| {
            for ax in &sorted_axioms {
                if !m.satisfies_sentence(ax)? {
                    return Ok(());
                }
            }
            if !reps.iter().any(|r| are_isomorphic(r, m)) {
                reps.push(m.clone());
            }
            Ok(())
        })?;
    }
    Ok(reps)
}

/// Streams every structure with the given universes through the callback,
/// in lexicographic interpretation order.
pub fn enumerate_interpretations(
    sig: &Signature,
    universes: &BTreeMap<String, Vec<String>>,
    visit: &mut impl FnMut(&FinStructure) -> Result<()>,
) -> Result<()> {
    let rel_names: Vec<String> = sig.relations().keys().cloned().collect();
    let fun_names: Vec<String> = sig.functions().keys().cloned().collect();
    let rel_tuples: Vec<Vec<Vec<usize>>> = rel_names
        .iter()
        .map(|r| {
            let args = sig.relation_args(r).unwrap();
            product(&args.iter().map(|s| universes[s].len()).collect::<Vec<_>>())
        })
        .collect();
    for (i, tuples) in rel_tuples.iter().enumerate() {
        if tuples.len() > 24 {
            return Err(Error::Budget(format!(
                "relation {} has {} candidate tuples",
                rel_names[i],
                tuples.len()
            )));
        }
    }
    let fun_domains: Vec<Vec<Vec<usize>>> = fun_names
        .iter()
        .map(|f| {
            let (args, _) = sig.function_decl(f).unwrap();
            product(&args.iter().map(|s| universes[s].len()).collect::<Vec<_>>())
        })
        .collect();
    let fun_ranges: Vec<usize> = fun_names
        .iter()
        .map(|f| {
            let (_, res) = sig.function_decl(f).unwrap();
            universes[res].len()
        })
        .collect();
    // a function into an empty sort with a nonempty domain has no tables
    for (i, dom) in fun_domains.iter().enumerate() {
        if fun_ranges[i] == 0 && !dom.is_empty() {
            return Ok(());
        }
    }

    struct Ctx<'a> {
        sig: &'a Signature,
        universes: &'a BTreeMap<String, Vec<String>>,
        rel_names: &'a [String],
        rel_tuples: &'a [Vec<Vec<usize>>],
        fun_names: &'a [String],
        fun_domains: &'a [Vec<Vec<usize>>],
        fun_ranges: &'a [usize],
    }

    fn rec_rels(
        ctx: &Ctx,
        idx: usize,
        rels: &mut BTreeMap<String, BTreeSet<Vec<usize>>>,
        visit: &mut impl FnMut(&FinStructure) -> Result<()>,
    ) -> Result<()> {
        if idx == ctx.rel_names.len() {
            let mut funs = BTreeMap::new();
            return rec_funs(ctx, 0, rels, &mut funs, visit);
        }
        let tuples = &ctx.rel_tuples[idx];
        for mask in 0u64..(1u64 << tuples.len()) {
            let set: BTreeSet<Vec<usize>> = tuples
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, t)| t.clone())
                .collect();
            rels.insert(ctx.rel_names[idx].clone(), set);
            rec_rels(ctx, idx + 1, rels, visit)?;
        }
        rels.remove(&ctx.rel_names[idx]);
        Ok(())
    }

    fn rec_funs(
        ctx: &Ctx,
        idx: usize,
        rels: &BTreeMap<String, BTreeSet<Vec<usize>>>,
        funs: &mut BTreeMap<String, BTreeMap<Vec<usize>, usize>>,
        visit: &mut impl FnMut(&FinStructure) -> Result<()>,
    ) -> Result<()> {
        if idx == ctx.fun_names.len() {
            let m = FinStructure {
                sig: ctx.sig.clone(),
                universes: ctx.universes.clone(),
                relations: rels.clone(),
                functions: funs.clone(),
            };
            return visit(&m);
        }
        let dom = &ctx.fun_domains[idx];
        let range = ctx.fun_ranges[idx];
        if dom.is_empty() {
            funs.insert(ctx.fun_names[idx].clone(), BTreeMap::new());
            rec_funs(ctx, idx + 1, rels, funs, visit)?;
            funs.remove(&ctx.fun_names[idx]);
            return Ok(());
        }
        let total: usize = range
            .checked_pow(dom.len() as u32)
            .filter(|&t| t <= 1_000_000)
            .ok_or_else(|| {
                Error::Budget(format!("function {} table space too large", ctx.fun_names[idx]))
            })?;
        for code in 0..total {
            let mut c = code;
            let mut table = BTreeMap::new();
            for t in dom {
                table.insert(t.clone(), c % range);
                c /= range;
            }
            funs.insert(ctx.fun_names[idx].clone(), table);
            rec_funs(ctx, idx + 1, rels, funs, visit)?;
        }
        funs.remove(&ctx.fun_names[idx]);
        Ok(())
    }

    let ctx = Ctx {
        sig,
        universes,
        rel_names: &rel_names,
        rel_tuples: &rel_tuples,
        fun_names: &fun_names,
        fun_domains: &fun_domains,
        fun_ranges: &fun_ranges,
    };
    let mut rels = BTreeMap::new();
    rec_rels(&ctx, 0, &mut rels, visit)
}

/// A sentence whose finite models are exactly the isomorphism class of `m`:
/// the existential diagram (with negated absent atoms and pairwise
/// inequations) conjoined with per-sort size caps.
pub fn scott_sentence(m: &FinStructure) -> Formula {
    let sig = m.signature();
    let mut vars: BTreeMap<(String, usize), Var> = BTreeMap::new();
    let mut prefix: Vec<Var> = Vec::new();
    for sort in sig.sorts() {
        for i in 0..m.universe(sort).len() {
            let v = Var::new(format!("a{i}_{sort}"), sort.clone());
            vars.insert((sort.clone(), i), v.clone());
            prefix.push(v);
        }
    }
    let term = |sort: &str, i: usize| Term::Var(vars[&(sort.to_string(), i)].clone());

    let mut diagram: Vec<Formula> = Vec::new();
    for (r, args) in sig.relations() {
        for t in all_tuples(args, m) {
            let atom = Formula::Atomic(
                r.clone(),
                t.iter().zip(args).map(|(&i, s)| term(s, i)).collect(),
            );
            if m.relation(r).contains(&t) {
                diagram.push(atom);
            } else {
                diagram.push(Formula::not(atom));
            }
        }
    }
    for (f, (args, res)) in sig.functions() {
        if let Some(table) = m.function(f) {
            for (t, &v) in table {
                let app = Term::App(
                    f.clone(),
                    t.iter().zip(args).map(|(&i, s)| term(s, i)).collect(),
                );
                diagram.push(Formula::Eq(app, term(res, v)));
            }
        }
    }
    for sort in sig.sorts() {
        let n = m.universe(sort).len();
        for i in 0..n {
            for j in (i + 1)..n {
                diagram.push(Formula::not(Formula::Eq(term(sort, i), term(sort, j))));
            }
        }
    }
    let mut conjuncts = vec![Formula::exists_many(&prefix, Formula::And(diagram))];
    for sort in sig.sorts() {
        let n = m.universe(sort).len();
        let fresh: Vec<Var> =
            (0..=n).map(|i| Var::new(format!("y{i}_{sort}"), sort.clone())).collect();
        let mut distinct = Vec::new();
        for i in 0..=n {
            for j in (i + 1)..=n {
                distinct.push(Formula::not(Formula::Eq(
                    Term::Var(fresh[i].clone()),
                    Term::Var(fresh[j].clone()),
                )));
            }
        }
        conjuncts.push(Formula::not(Formula::exists_many(&fresh, Formula::And(distinct))));
    }
    Formula::And(conjuncts)
}

/// A partial sort-respecting injection preserving and reflecting atomic
/// information on its domain.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct PartialIso {
    pub map: BTreeMap<(String, usize), usize>,
}

impl PartialIso {
    pub fn empty() -> Self {
        PartialIso { map: BTreeMap::new() }
    }

    /// Preservation and reflection of relations, equality, and function
    /// graphs on the assigned domain, plus injectivity per sort.
    pub fn is_partial_iso(&self, m: &FinStructure, n: &FinStructure) -> bool {
        let mut seen: BTreeSet<(String, usize)> = BTreeSet::new();
        for ((sort, _), &img) in &self.map {
            if !seen.insert((sort.clone(), img)) {
                return false;
            }
        }
        let sig = m.signature();
        for (r, args) in sig.relations() {
            for t in all_tuples(args, m) {
                let img: Option<Vec<usize>> = t
                    .iter()
                    .zip(args)
                    .map(|(&i, s)| self.map.get(&(s.clone(), i)).copied())
                    .collect();
                if let Some(img) = img {
                    if m.relation(r).contains(&t) != n.relation(r).contains(&img) {
                        return false;
                    }
                }
            }
        }
        for (f, (args, res)) in sig.functions() {
            let (mt, nt) = match (m.function(f), n.function(f)) {
                (Some(a), Some(b)) => (a, b),
                _ => return false,
            };
            for (t, &v) in mt {
                let img: Option<Vec<usize>> = t
                    .iter()
                    .zip(args)
                    .map(|(&i, s)| self.map.get(&(s.clone(), i)).copied())
                    .collect();
                if let (Some(img), Some(&iv)) = (img, self.map.get(&(res.clone(), v))) {
                    if nt.get(&img) != Some(&iv) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Result of the layered back-and-forth computation.
#[derive(Clone, Debug)]
pub struct BackAndForth {
    /// Greatest `k ≤ bound` such that the empty map survives `k` rounds.
    pub k: u32,
    /// Round at which the layer family stopped shrinking, when within bound.
    pub stabilized_at: Option<u32>,
    /// The surviving partial-isomorphism family at the final computed round.
    pub family: Vec<PartialIso>,
}

/// Layered back-and-forth equivalence on atomic information. Level 0 is the
/// family of all partial isomorphisms; each round keeps the maps extendable
/// in both directions within the previous level.
pub fn back_and_forth(m: &FinStructure, n: &FinStructure, bound: u32) -> BackAndForth {
    let sig = m.signature();
    let slots: Vec<(String, usize)> = sig
        .sorts()
        .iter()
        .flat_map(|s| (0..m.universe(s).len()).map(move |i| (s.clone(), i)))
        .collect();

    fn gen(
        slots: &[(String, usize)],
        idx: usize,
        n: &FinStructure,
        current: &mut PartialIso,
        out: &mut Vec<PartialIso>,
    ) {
        if idx == slots.len() {
            out.push(current.clone());
            return;
        }
        let (sort, elem) = &slots[idx];
        gen(slots, idx + 1, n, current, out);
        for target in 0..n.universe(sort).len() {
            if current.map.iter().any(|((s, _), &v)| s == sort && v == target) {
                continue;
            }
            current.map.insert((sort.clone(), *elem), target);
            gen(slots, idx + 1, n, current, out);
            current.map.remove(&(sort.clone(), *elem));
        }
    }

    let mut all = Vec::new();
    gen(&slots, 0, n, &mut PartialIso::empty(), &mut all);
    let mut level: BTreeSet<PartialIso> =
        all.into_iter().filter(|p| p.is_partial_iso(m, n)).collect();

    let empty_in = |lvl: &BTreeSet<PartialIso>| lvl.contains(&PartialIso::empty());
    if !empty_in(&level) {
        return BackAndForth { k: 0, stabilized_at: None, family: level.into_iter().collect() };
    }
    let mut k_reached: u32 = 0;
    let mut stabilized_at = None;
    for round in 1..=bound {
        let next: BTreeSet<PartialIso> = level
            .iter()
            .filter(|p| {
                let forth = slots.iter().all(|(sort, i)| {
                    if p.map.contains_key(&(sort.clone(), *i)) {
                        return true;
                    }
                    (0..n.universe(sort).len()).any(|b| {
                        let mut q = (*p).clone();
                        q.map.insert((sort.clone(), *i), b);
                        level.contains(&q)
                    })
                });
                if !forth {
                    return false;
                }
                sig.sorts().iter().all(|sort| {
                    (0..n.universe(sort).len()).all(|b| {
                        if p.map.iter().any(|((s, _), &v)| s == sort && v == b) {
                            return true;
                        }
                        (0..m.universe(sort).len()).any(|a| {
                            if p.map.contains_key(&(sort.clone(), a)) {
                                return false;
                            }
                            let mut q = (*p).clone();
                            q.map.insert((sort.clone(), a), b);
                            level.contains(&q)
                        })
                    })
                })
            })
            .cloned()
            .collect();
        if next == level {
            stabilized_at = Some(round - 1);
            k_reached = bound;
            break;
        }
        level = next;
        if empty_in(&level) {
            k_reached = round;
        } else {
            break;
        }
    }
    BackAndForth { k: k_reached, stabilized_at, family: level.into_iter().collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::parse_formula;

    fn sig_p() -> Signature {
        Signature::relational(vec![("P", 1)]).unwrap()
    }

    /// Two-element structure with P = {0}.
    fn m_p0() -> FinStructure {
        FinStructure::new(
            sig_p(),
            [("elem".to_string(), vec!["e0".into(), "e1".into()])].into(),
            [("P".to_string(), BTreeSet::from([vec![0]]))].into(),
            BTreeMap::new(),
        )
        .unwrap()
    }

    fn pure_set(n: usize) -> FinStructure {
        let sig = Signature::relational(vec![]).unwrap();
        FinStructure::new(
            sig,
            [("elem".to_string(), (0..n).map(|i| format!("e{i}")).collect())].into(),
            BTreeMap::new(),
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let sig = Signature::relational(vec![("R", 2)]).unwrap();
        let m = FinStructure::new(
            sig.clone(),
            [("elem".to_string(), vec!["e0".into(), "e1".into()])].into(),
            [("R".to_string(), BTreeSet::from([vec![0, 1]]))].into(),
            BTreeMap::new(),
        )
        .unwrap();
        let f = parse_formula("exists y:elem. R(x, y)", &sig).unwrap();
        assert!(m.evaluate(&f, &[("x".to_string(), 0)].into()).unwrap());
        assert!(!m.evaluate(&f, &[("x".to_string(), 1)].into()).unwrap());
        assert!(m.satisfies_sentence(&Formula::top()).unwrap());

        let empty = FinStructure::new(
            sig.clone(),
            [("elem".to_string(), vec![])].into(),
            [("R".to_string(), BTreeSet::new())].into(),
            BTreeMap::new(),
        )
        .unwrap();
        let e = parse_formula("exists y:elem. and()", &sig).unwrap();
        assert!(!empty.satisfies_sentence(&e).unwrap());
    }

    /// Independent set-semantics evaluator used as the oracle: computes the
    /// denotation by structural recursion on sets rather than by Tarskian
    /// truth recursion.
    fn oracle_denotation(m: &FinStructure, f: &Formula, ctx: &[Var]) -> BTreeSet<Vec<usize>> {
        let full = || -> BTreeSet<Vec<usize>> {
            product(&ctx.iter().map(|v| m.universe(&v.sort).len()).collect::<Vec<_>>())
                .into_iter()
                .collect()
        };
        match f {
            Formula::And(fs) => {
                let mut acc = full();
                for g in fs {
                    let d = oracle_denotation(m, g, ctx);
                    acc = acc.intersection(&d).cloned().collect();
                }
                acc
            }
            Formula::Or(fs) => {
                let mut acc = BTreeSet::new();
                for g in fs {
                    acc.extend(oracle_denotation(m, g, ctx));
                }
                acc
            }
            Formula::Not(g) => {
                let d = oracle_denotation(m, g, ctx);
                full().difference(&d).cloned().collect()
            }
            Formula::Exists(v, body) => {
                // extend the context with a renamed copy of the bound var
                let fresh = Var::new(format!("__ex{}", ctx.len()), v.sort.clone());
                let renamed = crate::logic::substitute(
                    body,
                    &[(v.name.clone(), Term::Var(fresh.clone()))].into(),
                    m.signature(),
                )
                .unwrap();
                let mut inner_ctx = ctx.to_vec();
                inner_ctx.push(fresh);
                let d = oracle_denotation(m, &renamed, &inner_ctx);
                d.into_iter().map(|t| t[..t.len() - 1].to_vec()).collect()
            }
            atomic => {
                let mut out = BTreeSet::new();
                for t in
                    product(&ctx.iter().map(|v| m.universe(&v.sort).len()).collect::<Vec<_>>())
                {
                    let env: BTreeMap<String, usize> =
                        ctx.iter().zip(&t).map(|(v, &i)| (v.name.clone(), i)).collect();
                    if m.evaluate(atomic, &env).unwrap() {
                        out.insert(t);
                    }
                }
                out
            }
        }
    }

    #[test]
    fn evaluate_matches_set_oracle() {
        let sig = Signature::relational(vec![("P", 1), ("R", 2)]).unwrap();
        let structures = all_models(&sig, 2, &[]).unwrap();
        let ctx = vec![Var::new("x", "elem"), Var::new("y", "elem")];
        let formulas = [
            "P(x)",
            "R(x, y)",
            "and(P(x), not(P(y)))",
            "exists z:elem. and(R(x, z), R(z, y))",
            "or(x = y, not(R(x, x)))",
            "not(exists z:elem. not(or(P(z), R(x, z))))",
        ];
        for m in &structures {
            for text in formulas {
                let f = parse_formula(text, &sig).unwrap();
                assert_eq!(
                    m.denotation(&f, &ctx).unwrap(),
                    oracle_denotation(m, &f, &ctx),
                    "formula {text}"
                );
            }
        }
    }

    #[test]
    fn all_models_examples() {
        let sig = sig_p();
        assert_eq!(all_models(&sig, 1, &[]).unwrap().len(), 3); // empty, P holds, P fails

        let nothing = Signature::relational(vec![]).unwrap();
        assert_eq!(all_models(&nothing, 2, &[]).unwrap().len(), 3); // sizes 0,1,2

        let bound0 = all_models(&sig, 0, &[]).unwrap();
        assert_eq!(bound0.len(), 1);
        assert_eq!(bound0[0].total_size(), 0);
    }

    #[test]
    fn isomorphisms_examples() {
        let sig = Signature::relational(vec![("L", 2)]).unwrap();
        let order = |u: Vec<Vec<usize>>| {
            FinStructure::new(
                sig.clone(),
                [("elem".to_string(), vec!["e0".into(), "e1".into()])].into(),
                [("L".to_string(), u.into_iter().collect())].into(),
                BTreeMap::new(),
            )
            .unwrap()
        };
        let a = order(vec![vec![0, 0], vec![0, 1], vec![1, 1]]);
        let b = order(vec![vec![0, 0], vec![1, 0], vec![1, 1]]);
        assert_eq!(isomorphisms(&a, &b).len(), 1);

        assert_eq!(isomorphisms(&pure_set(2), &pure_set(2)).len(), 2);
        assert!(isomorphisms(&pure_set(2), &pure_set(3)).is_empty());
    }

    #[test]
    fn automorphisms_form_group_and_orbits_match_closure() {
        let m = m_p0();
        let autos = isomorphisms(&m, &m);
        for g in &autos {
            for h in &autos {
                let composed: SortedBijection = g
                    .iter()
                    .map(|(s, gm)| (s.clone(), gm.iter().map(|&i| h[s][i]).collect::<Vec<_>>()))
                    .collect();
                assert!(autos.contains(&composed));
            }
        }
        assert!(autos.iter().any(|g| g["elem"] == vec![0, 1]));

        let orb = orbits(&m, &["elem".to_string()]);
        assert_eq!(orb.len(), 2);
        assert_eq!(orb[0], BTreeSet::from([vec![0]]));
        assert_eq!(orb[1], BTreeSet::from([vec![1]]));

        assert_eq!(orbits(&pure_set(2), &["elem".to_string()]).len(), 1);
        assert_eq!(orbits(&pure_set(2), &[]).len(), 1); // single empty-tuple orbit

        // naive orbit closure oracle
        let sorts = vec!["elem".to_string(), "elem".to_string()];
        let orb2 = orbits(&m, &sorts);
        let mut union: BTreeSet<Vec<usize>> = BTreeSet::new();
        for o in &orb2 {
            for t in o {
                assert!(union.insert(t.clone()), "orbits overlap");
            }
        }
        assert_eq!(union.len(), 4);
    }

    #[test]
    fn scott_sentence_examples() {
        let pure = Signature::relational(vec![]).unwrap();
        let s = scott_sentence(&pure_set(1));
        let models = all_models(&pure, 3, &[s]).unwrap();
        assert_eq!(models.len(), 1);
        assert_eq!(models[0].total_size(), 1);

        let s = scott_sentence(&pure_set(0));
        let models = all_models(&pure, 3, &[s]).unwrap();
        assert_eq!(models.len(), 1);
        assert_eq!(models[0].total_size(), 0);

        let m = m_p0();
        let s = scott_sentence(&m);
        let models = all_models(&sig_p(), 3, &[s]).unwrap();
        assert_eq!(models.len(), 1);
        assert!(are_isomorphic(&models[0], &m));
    }

    #[test]
    fn scott_sentences_over_richer_signature() {
        let sig = Signature::relational(vec![("P", 1), ("R", 2)]).unwrap();
        for m in all_models(&sig, 2, &[]).unwrap() {
            let s = scott_sentence(&m);
            let models = all_models(&sig, 3, &[s]).unwrap();
            assert_eq!(models.len(), 1, "structure {m:?}");
            assert!(are_isomorphic(&models[0], &m));
        }
    }

    #[test]
    fn back_and_forth_examples() {
        let m = m_p0();
        assert_eq!(back_and_forth(&m, &m, 3).k, 3);

        let sig = sig_p();
        let n = FinStructure::new(
            sig,
            [("elem".to_string(), vec!["e0".into(), "e1".into()])].into(),
            [("P".to_string(), BTreeSet::new())].into(),
            BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(back_and_forth(&m, &n, 3).k, 0);

        assert_eq!(back_and_forth(&pure_set(2), &pure_set(3), 3).k, 2);
    }
}
