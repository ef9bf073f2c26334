//! Generators of parametrized étale structures with closed-form saturation
//! witnesses: fixed finite universe, bounded universes with a choice of
//! size topology, partially enumerated structures (quotients by an open
//! fiberwise equivalence), and marked structures over a truncated term set.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::etale::EtaleStructure;
use crate::finspace::{
    pset, quotient_etale, ContinuousMap, EtaleSpace, FinSpace, PointSet,
};
use crate::logic::{Formula, Fragment, FragmentLimits, Morleyization, Signature, Term, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelTopology {
    /// Both a tuple's presence and absence are open conditions.
    Discrete,
    /// Only presence is open.
    Sierpinski,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizeTopology {
    /// Exact sizes are open.
    Discrete,
    /// Lower bounds on size are open (upper sets).
    Scott,
}

/// How much of the language is Morleyized in the generated instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum MorleyLevel {
    None,
    /// Inequality only.
    Neq,
    /// All negated atomic formulas.
    NegAtomics,
    /// Negated atomics plus negated size-lower-bound sentences.
    Full,
}

/// A generated instance: the bundle, the expansion data when the generator
/// Morleyized, and enough construction detail to emit the closed-form
/// saturation witness for any basic open of any fiber power.
#[derive(Clone, Debug)]
pub struct ParamInstance {
    pub etale: EtaleStructure,
    pub morley: Option<Morleyization>,
    pub provenance: String,
    witnesses: WitnessGen,
}

#[derive(Clone, Debug)]
enum WitnessGen {
    /// Anchor-diagram template: witness for a basic open quantifies one
    /// variable per anchor-fiber element, asserts the pinned facts, binds
    /// the context to the anchored elements, and (optionally) asserts
    /// pairwise distinctness and an exact-size cap.
    Diagram {
        negated_facts: bool,
        distinctness: bool,
        size_cap: bool,
    },
    /// Partially enumerated template: enumerated-element variables with
    /// pinned facts, equations for the pinned equivalence, no distinctness.
    PartiallyEnumerated,
    /// Marked-structure template: one variable per generator, term
    /// equations unfolded through graph relations.
    Marked { k: usize, terms: Vec<MarkedTerm>, base_sig: Signature },
    Unavailable,
}

impl ParamInstance {
    /// The closed-form Σ₁ witness defining the saturation of a basic open
    /// of the fiber power with the given context, or `None` when the
    /// generator makes no Σ₁ claim for this configuration.
    pub fn witness_for_basic(&self, ctx: &[Var], basic: &PointSet) -> Result<Option<Formula>> {
        let power = self.etale.power_of_ctx(ctx);
        let anchor = (0..power.len())
            .find(|&p| power.total().min_nbhd(p) == basic)
            .ok_or_else(|| Error::Etale("set is not a basic open of the power".into()))?;
        let raw = match &self.witnesses {
            WitnessGen::Unavailable => return Ok(None),
            WitnessGen::Diagram { negated_facts, distinctness, size_cap } => self
                .diagram_witness(ctx, &power, anchor, *negated_facts, *distinctness, *size_cap)?,
            WitnessGen::PartiallyEnumerated => self.part_enum_witness(ctx, &power, anchor)?,
            WitnessGen::Marked { k, terms, base_sig } => {
                self.marked_witness(ctx, &power, anchor, *k, terms, base_sig)?
            }
        };
        match &self.morley {
            Some(m) => Ok(Some(m.translate_to_expanded(&raw)?)),
            None => Ok(Some(raw)),
        }
    }

    /// Witness for an arbitrary open set: disjunction over a basic cover.
    pub fn witness_for_open(&self, ctx: &[Var], open: &PointSet) -> Result<Option<Formula>> {
        let power = self.etale.power_of_ctx(ctx);
        if !power.total().is_open(open) {
            return Err(Error::Etale("witness requested for a non-open set".into()));
        }
        let mut basics: BTreeSet<PointSet> = BTreeSet::new();
        for p in open.ones() {
            basics.insert(power.total().min_nbhd(p).clone());
        }
        let mut parts = Vec::new();
        for b in basics {
            match self.witness_for_basic(ctx, &b)? {
                Some(f) => parts.push(f),
                None => return Ok(None),
            }
        }
        Ok(Some(Formula::Or(parts)))
    }

    /// Diagram-template witness. The anchor's fiber is enumerated by fresh
    /// variables; pinned positive facts (and pinned negative facts when the
    /// relation topology is discrete) become literals over those variables.
    fn diagram_witness(
        &self,
        ctx: &[Var],
        power: &crate::etale::FiberPower,
        anchor: usize,
        negated_facts: bool,
        distinctness: bool,
        size_cap: bool,
    ) -> Result<Formula> {
        let (x, elems) = power.tuples[anchor].clone();
        let base_sig = self
            .morley
            .as_ref()
            .map(|m| m.base_sig.clone())
            .unwrap_or_else(|| self.etale.signature().clone());
        let sort = base_sig.sorts()[0].clone();
        let fiber = self.etale.fiber(x)?;
        let n = fiber.universe(&sort).len();
        let ys: Vec<Var> = (0..n).map(|i| Var::new(format!("y{i}"), sort.clone())).collect();
        let mut body: Vec<Formula> = Vec::new();
        for (r, _args) in base_sig.relations() {
            for t in fiber.relation(r) {
                body.push(Formula::Atomic(
                    r.clone(),
                    t.iter().map(|&i| Term::Var(ys[i].clone())).collect(),
                ));
            }
            if negated_facts {
                let arity = base_sig.relation_args(r)?.len();
                for t in crate::finstruct::product(&vec![n; arity]) {
                    if !fiber.relation(r).contains(&t) {
                        body.push(Formula::not(Formula::Atomic(
                            r.clone(),
                            t.iter().map(|&i| Term::Var(ys[i].clone())).collect(),
                        )));
                    }
                }
            }
        }
        // bind the context to the anchored elements
        let elem_index = self.etale.elem_index();
        for (v, &e) in ctx.iter().zip(&elems) {
            let i = elem_index[&(sort.clone(), e)];
            body.push(Formula::Eq(Term::Var(v.clone()), Term::Var(ys[i].clone())));
        }
        if distinctness {
            for i in 0..n {
                for j in (i + 1)..n {
                    body.push(Formula::not(Formula::Eq(
                        Term::Var(ys[i].clone()),
                        Term::Var(ys[j].clone()),
                    )));
                }
            }
        }
        if size_cap {
            body.push(Formula::not(size_at_least(n + 1, &sort)));
        }
        Ok(Formula::exists_many(&ys, Formula::And(body)))
    }

    /// Partially-enumerated template: the pinned equivalence becomes
    /// equations and pinned facts stay positive; no distinctness.
    fn part_enum_witness(
        &self,
        ctx: &[Var],
        power: &crate::etale::FiberPower,
        anchor: usize,
    ) -> Result<Formula> {
        let (x, elems) = power.tuples[anchor].clone();
        let sig = self.etale.signature().clone();
        let sort = sig.sorts()[0].clone();
        let name = self.etale.base().point_name(x).to_string();
        let pe = PartEnumPoint::parse(&name)?;
        let ys: Vec<Var> =
            (0..pe.size).map(|i| Var::new(format!("y{i}"), sort.clone())).collect();
        let mut body: Vec<Formula> = Vec::new();
        for (r, tuples) in &pe.facts {
            for t in tuples {
                body.push(Formula::Atomic(
                    r.clone(),
                    t.iter().map(|&i| Term::Var(ys[i].clone())).collect(),
                ));
            }
        }
        for &(i, j) in &pe.merges {
            body.push(Formula::Eq(Term::Var(ys[i].clone()), Term::Var(ys[j].clone())));
        }
        // context binds to class representatives
        let space = self.etale.sort_space(&sort);
        for (v, &e) in ctx.iter().zip(&elems) {
            // class point names are "[s{N}...#k]" with k the representative
            let rep = parse_class_rep(space.total().point_name(e))?;
            body.push(Formula::Eq(Term::Var(v.clone()), Term::Var(ys[rep].clone())));
        }
        Ok(Formula::exists_many(&ys, Formula::And(body)))
    }

    /// Marked-structure template: generator variables, term equations
    /// unfolded through the graph relations, and the pinned facts.
    fn marked_witness(
        &self,
        ctx: &[Var],
        power: &crate::etale::FiberPower,
        anchor: usize,
        k: usize,
        terms: &[MarkedTerm],
        base_sig: &Signature,
    ) -> Result<Formula> {
        let (x, elems) = power.tuples[anchor].clone();
        let sig = self.etale.signature().clone();
        let sort = sig.sorts()[0].clone();
        let name = self.etale.base().point_name(x).to_string();
        let mp = MarkedPoint::parse(&name, terms.len())?;
        let gens: Vec<Var> = (0..k).map(|i| Var::new(format!("g{i}"), sort.clone())).collect();
        // a variable per term, with graph conjuncts defining it
        let tvars: Vec<Var> = (0..terms.len())
            .map(|i| Var::new(format!("t{i}"), sort.clone()))
            .collect();
        let mut body: Vec<Formula> = Vec::new();
        let mut used: BTreeSet<usize> = BTreeSet::new();
        // term definitions: variables map to generators, applications to
        // graph atoms
        for (i, t) in terms.iter().enumerate() {
            match t {
                MarkedTerm::Gen(g) => {
                    body.push(Formula::Eq(
                        Term::Var(tvars[i].clone()),
                        Term::Var(gens[*g].clone()),
                    ));
                }
                MarkedTerm::App(f, args) => {
                    let mut atom_args: Vec<Term> =
                        args.iter().map(|&a| Term::Var(tvars[a].clone())).collect();
                    atom_args.push(Term::Var(tvars[i].clone()));
                    body.push(Formula::Atomic(graph_rel_name(f), atom_args));
                    used.extend(args.iter().copied());
                }
            }
            used.insert(i);
        }
        for (r, tuples) in &mp.facts {
            if base_sig.relations().contains_key(r) {
                for t in tuples {
                    body.push(Formula::Atomic(
                        r.clone(),
                        t.iter().map(|&i| Term::Var(tvars[i].clone())).collect(),
                    ));
                }
            }
        }
        for &(s, t) in &mp.merges {
            body.push(Formula::Eq(Term::Var(tvars[s].clone()), Term::Var(tvars[t].clone())));
        }
        let space = self.etale.sort_space(&sort);
        for (v, &e) in ctx.iter().zip(&elems) {
            let rep = parse_class_rep(space.total().point_name(e))?;
            body.push(Formula::Eq(Term::Var(v.clone()), Term::Var(tvars[rep].clone())));
        }
        let mut prefix = gens.clone();
        prefix.extend(tvars);
        Ok(Formula::exists_many(&prefix, Formula::And(body)))
    }
}

/// `∃ z_0 … z_{n-1} ⋀_{i<j} ¬(z_i = z_j)`.
pub fn size_at_least(n: usize, sort: &str) -> Formula {
    let zs: Vec<Var> = (0..n).map(|i| Var::new(format!("z{i}"), sort)).collect();
    let mut body = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            body.push(Formula::not(Formula::Eq(
                Term::Var(zs[i].clone()),
                Term::Var(zs[j].clone()),
            )));
        }
    }
    Formula::exists_many(&zs, Formula::And(body))
}

fn single_sorted_relational(sig: &Signature) -> Result<String> {
    if !sig.functions().is_empty() {
        return Err(Error::Etale("generator requires a relational signature".into()));
    }
    if sig.sorts().len() != 1 {
        return Err(Error::Etale("generator requires a single-sorted signature".into()));
    }
    Ok(sig.sorts()[0].clone())
}

/// Deterministic name for an assignment of relation tuple sets.
fn assignment_name(prefix: &str, sig: &Signature, assignment: &BTreeMap<String, BTreeSet<Vec<usize>>>) -> String {
    let mut name = String::from(prefix);
    for r in sig.relations().keys() {
        name.push_str(r);
        name.push('{');
        let mut first = true;
        for t in &assignment[r] {
            if !first {
                name.push('.');
            }
            first = false;
            for &i in t {
                name.push_str(&i.to_string());
            }
        }
        name.push('}');
    }
    name
}

/// All assignments of tuple subsets for each relation over `n` elements.
fn all_assignments(sig: &Signature, n: usize) -> Vec<BTreeMap<String, BTreeSet<Vec<usize>>>> {
    let rels: Vec<(&String, usize)> =
        sig.relations().iter().map(|(r, args)| (r, args.len())).collect();
    let mut out: Vec<BTreeMap<String, BTreeSet<Vec<usize>>>> = vec![BTreeMap::new()];
    for (r, arity) in rels {
        let tuples = crate::finstruct::product(&vec![n; arity]);
        let mut next = Vec::new();
        for partial in &out {
            for mask in 0u64..(1u64 << tuples.len()) {
                let set: BTreeSet<Vec<usize>> = tuples
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, t)| t.clone())
                    .collect();
                let mut a = partial.clone();
                a.insert(r.clone(), set);
                next.push(a);
            }
        }
        out = next;
    }
    out
}

/// Builds the bundle over a base of relation assignments with per-element
/// fibers. `fiber_size(x)` gives the fiber size at base point `x`.
fn assemble_bundle(
    sig: &Signature,
    sort: &str,
    base: Arc<FinSpace>,
    fiber_sizes: &[usize],
    assignments: &[BTreeMap<String, BTreeSet<Vec<usize>>>],
) -> Result<EtaleStructure> {
    let mut names = Vec::new();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (x, &k) in fiber_sizes.iter().enumerate() {
        for a in 0..k {
            names.push(format!("{}#{a}", base.point_name(x)));
            pairs.push((x, a));
        }
    }
    let order = {
        let mut idx: Vec<usize> = (0..names.len()).collect();
        idx.sort_by(|&i, &j| names[i].cmp(&names[j]));
        idx
    };
    let names: Vec<String> = order.iter().map(|&i| names[i].clone()).collect();
    let pairs: Vec<(usize, usize)> = order.iter().map(|&i| pairs[i]).collect();
    let n = names.len();
    let min_nbhds: Vec<PointSet> = pairs
        .iter()
        .map(|&(x, a)| {
            let mut nb = PointSet::with_capacity(n);
            for (j, &(x2, a2)) in pairs.iter().enumerate() {
                if a2 == a && base.min_nbhd(x).contains(x2) {
                    nb.insert(j);
                }
            }
            nb
        })
        .collect();
    let total = Arc::new(FinSpace::from_min_nbhds(names, min_nbhds)?);
    let graph: Vec<usize> = pairs.iter().map(|&(x, _)| x).collect();
    let projection = ContinuousMap::new(total.clone(), base.clone(), graph)?;
    let space = EtaleSpace::from_projection(projection)?;
    let sorts: BTreeMap<String, EtaleSpace> = [(sort.to_string(), space)].into();

    let mut relations = BTreeMap::new();
    for (r, args) in sig.relations() {
        let power = crate::etale::EtaleStructure::new_unchecked(
            sig.clone(),
            base.clone(),
            sorts.clone(),
            BTreeMap::new(),
            BTreeMap::new(),
        )
        .power(args);
        let mut set = power.total().empty_set();
        for p in 0..power.len() {
            let (x, elems) = &power.tuples[p];
            // element number of a total point: position in its fiber
            let tuple: Vec<usize> = elems
                .iter()
                .map(|&e| pairs_position(&pairs, &order_inverse(&order_of(&pairs)), e))
                .collect();
            let tuple: Vec<usize> = {
                // recompute directly: pairs[e].1 is the element number
                let _ = tuple;
                elems.iter().map(|&e| pairs[e].1).collect()
            };
            if assignments[*x][r].contains(&tuple) {
                set.insert(p);
            }
        }
        relations.insert(r.clone(), set);
    }
    EtaleStructure::new(sig.clone(), base, sorts, relations, BTreeMap::new())
}

fn order_of(pairs: &[(usize, usize)]) -> Vec<usize> {
    (0..pairs.len()).collect()
}

fn order_inverse(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (i, &o) in order.iter().enumerate() {
        inv[o] = i;
    }
    inv
}

fn pairs_position(_pairs: &[(usize, usize)], _inv: &[usize], e: usize) -> usize {
    e
}

/// Space of all structures on a fixed universe of `n` elements.
pub fn gen_fixed_universe(
    sig: &Signature,
    n: usize,
    topology: RelTopology,
    morley: MorleyLevel,
) -> Result<ParamInstance> {
    let sort = single_sorted_relational(sig)?;
    if n > 8 {
        return Err(Error::Budget("fixed universe capped at 8 elements".into()));
    }
    let assignments = all_assignments(sig, n);
    let names: Vec<String> = assignments.iter().map(|a| assignment_name("", sig, a)).collect();
    // assignments indexed by sorted name order
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&i, &j| names[i].cmp(&names[j]));
    let names: Vec<String> = order.iter().map(|&i| names[i].clone()).collect();
    let assignments: Vec<_> = order.iter().map(|&i| assignments[i].clone()).collect();

    let count = names.len();
    let mut min_nbhds = Vec::with_capacity(count);
    for x in 0..count {
        let mut nb = pset(count, [x]);
        for (y, other) in assignments.iter().enumerate() {
            let finer = sig.relations().keys().all(|r| match topology {
                RelTopology::Sierpinski => assignments[x][r].is_subset(&other[r]),
                RelTopology::Discrete => assignments[x][r] == other[r],
            });
            if finer {
                nb.insert(y);
            }
        }
        min_nbhds.push(nb);
    }
    let base = Arc::new(FinSpace::from_min_nbhds(names, min_nbhds)?);
    let fiber_sizes = vec![n; count];
    let plain = assemble_bundle(sig, &sort, base, &fiber_sizes, &assignments)?;

    let witnesses_ok = matches!(
        (topology, morley),
        (RelTopology::Discrete, MorleyLevel::NegAtomics | MorleyLevel::Full)
            | (RelTopology::Sierpinski, MorleyLevel::Neq | MorleyLevel::NegAtomics | MorleyLevel::Full)
    );
    let witnesses = if witnesses_ok {
        WitnessGen::Diagram {
            negated_facts: topology == RelTopology::Discrete,
            distinctness: true,
            size_cap: false,
        }
    } else {
        WitnessGen::Unavailable
    };
    let provenance = format!(
        "fixed-universe n={n} topology={topology:?} morley={morley:?}"
    );
    finish_instance(plain, sig, morley, witnesses, provenance)
}

fn morley_fragment(sig: &Signature, level: MorleyLevel, max_size: usize) -> Result<Option<Fragment>> {
    let sort = &sig.sorts()[0];
    match level {
        MorleyLevel::None => Ok(None),
        MorleyLevel::Neq => Ok(Some(Fragment::with_negated_equality(sig)?)),
        MorleyLevel::NegAtomics => Ok(Some(Fragment::with_negated_atomics(sig)?)),
        MorleyLevel::Full => {
            let mut seeds = Vec::new();
            for (rel, args) in sig.relations() {
                let vars: Vec<Term> = args
                    .iter()
                    .enumerate()
                    .map(|(i, s)| Term::var(format!("__c{i:02}"), s.clone()))
                    .collect();
                seeds.push(Formula::not(Formula::Atomic(rel.clone(), vars)));
            }
            seeds.push(Formula::not(Formula::Eq(
                Term::var("__c00", sort),
                Term::var("__c01", sort),
            )));
            for k in 1..=(max_size + 1) {
                seeds.push(Formula::not(size_at_least(k, sort)));
            }
            Ok(Some(Fragment::generate(
                sig,
                &seeds,
                FragmentLimits { max_free_vars: max_size + 2, max_members: 4000 },
            )?))
        }
    }
}

fn finish_instance(
    plain: EtaleStructure,
    sig: &Signature,
    morley: MorleyLevel,
    witnesses: WitnessGen,
    provenance: String,
) -> Result<ParamInstance> {
    let max_size = plain
        .base()
        .point_names()
        .iter()
        .enumerate()
        .map(|(x, _)| plain.sort_space(&sig.sorts()[0]).fiber_elems(x).len())
        .max()
        .unwrap_or(0);
    match morley_fragment(sig, morley, max_size)? {
        None => Ok(ParamInstance { etale: plain, morley: None, provenance, witnesses }),
        Some(frag) => {
            let result = plain.morleyize(&frag)?;
            Ok(ParamInstance {
                etale: result.structure,
                morley: Some(result.morley),
                provenance,
                witnesses,
            })
        }
    }
}

/// Up-to-size base point: the parsed structure content of a point name.
struct PartEnumPoint {
    size: usize,
    merges: Vec<(usize, usize)>,
    facts: BTreeMap<String, BTreeSet<Vec<usize>>>,
}

impl PartEnumPoint {
    fn parse(name: &str) -> Result<PartEnumPoint> {
        // format: s{N}~{i.j, ...}R{...}...
        let err = || Error::Etale(format!("unparseable generated point name {name:?}"));
        let rest = name.strip_prefix('s').ok_or_else(err)?;
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        let size: usize = digits.parse().map_err(|_| err())?;
        let mut merges = Vec::new();
        let mut facts: BTreeMap<String, BTreeSet<Vec<usize>>> = BTreeMap::new();
        let mut tail = &rest[digits.len()..];
        if let Some(after) = tail.strip_prefix('~') {
            let close = after.find('}').ok_or_else(err)?;
            let inner = &after[1..close];
            if !inner.is_empty() {
                for pair in inner.split('.') {
                    let bytes: Vec<usize> = pair
                        .chars()
                        .map(|c| c.to_digit(10).map(|d| d as usize).ok_or_else(err))
                        .collect::<Result<_>>()?;
                    if bytes.len() != 2 {
                        return Err(err());
                    }
                    merges.push((bytes[0], bytes[1]));
                }
            }
            tail = &after[close + 1..];
        }
        // relation blocks R{t.t...}
        let mut cur = tail;
        while !cur.is_empty() {
            let brace = cur.find('{').ok_or_else(err)?;
            let rel = cur[..brace].to_string();
            let close = cur.find('}').ok_or_else(err)?;
            let inner = &cur[brace + 1..close];
            let mut set = BTreeSet::new();
            if !inner.is_empty() {
                for t in inner.split('.') {
                    set.insert(
                        t.chars()
                            .map(|c| c.to_digit(10).map(|d| d as usize).ok_or_else(err))
                            .collect::<Result<Vec<usize>>>()?,
                    );
                }
            }
            facts.insert(rel, set);
            cur = &cur[close + 1..];
        }
        Ok(PartEnumPoint { size, merges, facts })
    }
}

/// Class point names are "[<base>#<k>]"; returns `k`.
fn parse_class_rep(name: &str) -> Result<usize> {
    let err = || Error::Etale(format!("unparseable class point name {name:?}"));
    let inner = name.strip_prefix('[').and_then(|s| s.strip_suffix(']')).ok_or_else(err)?;
    let hash = inner.rfind('#').ok_or_else(err)?;
    inner[hash + 1..].parse().map_err(|_| err())
}

/// Space of structures of size at most `n_max`, with a choice of topology
/// on the size coordinate and on the relation coordinates.
pub fn gen_up_to_size(
    sig: &Signature,
    n_max: usize,
    size_topology: SizeTopology,
    rel_topology: RelTopology,
    morley: MorleyLevel,
) -> Result<ParamInstance> {
    let sort = single_sorted_relational(sig)?;
    if n_max > 6 {
        return Err(Error::Budget("size bound capped at 6".into()));
    }
    let mut names = Vec::new();
    let mut sizes = Vec::new();
    let mut assignments = Vec::new();
    for n in 0..=n_max {
        for a in all_assignments(sig, n) {
            names.push(assignment_name(&format!("s{n}"), sig, &a));
            sizes.push(n);
            assignments.push(a);
        }
    }
    let order = {
        let mut idx: Vec<usize> = (0..names.len()).collect();
        idx.sort_by(|&i, &j| names[i].cmp(&names[j]));
        idx
    };
    let names: Vec<String> = order.iter().map(|&i| names[i].clone()).collect();
    let sizes: Vec<usize> = order.iter().map(|&i| sizes[i]).collect();
    let assignments: Vec<_> = order.iter().map(|&i| assignments[i].clone()).collect();

    let count = names.len();
    let mut min_nbhds = Vec::with_capacity(count);
    for x in 0..count {
        let mut nb = pset(count, []);
        for y in 0..count {
            let size_ok = match size_topology {
                SizeTopology::Scott => sizes[y] >= sizes[x],
                SizeTopology::Discrete => sizes[y] == sizes[x],
            };
            let rel_ok = sig.relations().keys().all(|r| match rel_topology {
                RelTopology::Sierpinski => assignments[x][r].is_subset(&assignments[y][r]),
                RelTopology::Discrete => {
                    // within the common universe the facts must agree
                    let shared = sizes[x].min(sizes[y]);
                    let restrict = |set: &BTreeSet<Vec<usize>>| -> BTreeSet<Vec<usize>> {
                        set.iter().filter(|t| t.iter().all(|&i| i < shared)).cloned().collect()
                    };
                    restrict(&assignments[x][r]) == restrict(&assignments[y][r])
                        && assignments[x][r].is_subset(&assignments[y][r])
                }
            });
            if size_ok && rel_ok {
                nb.insert(y);
            }
        }
        min_nbhds.push(nb);
    }
    let base = Arc::new(FinSpace::from_min_nbhds(names, min_nbhds)?);
    let plain = assemble_bundle(sig, &sort, base, &sizes, &assignments)?;

    let witnesses_ok = match (size_topology, rel_topology, morley) {
        (SizeTopology::Scott, RelTopology::Sierpinski, m) if m >= MorleyLevel::Neq => true,
        (SizeTopology::Scott, RelTopology::Discrete, m) if m >= MorleyLevel::NegAtomics => true,
        (SizeTopology::Discrete, _, MorleyLevel::Full) => true,
        _ => false,
    };
    let witnesses = if witnesses_ok {
        WitnessGen::Diagram {
            negated_facts: rel_topology == RelTopology::Discrete,
            distinctness: true,
            size_cap: size_topology == SizeTopology::Discrete,
        }
    } else {
        WitnessGen::Unavailable
    };
    let provenance = format!(
        "up-to-size n_max={n_max} sizes={size_topology:?} rels={rel_topology:?} morley={morley:?}"
    );
    finish_instance(plain, sig, morley, witnesses, provenance)
}

/// Space of partially enumerated structures: base points carry a size, an
/// equivalence on the enumerated elements, and an invariant relation
/// assignment; fibers are the quotients. Sizes get the Scott topology and
/// everything else the Sierpinski topology, and no Morleyization is needed.
pub fn gen_partially_enumerated(sig: &Signature, n_max: usize) -> Result<ParamInstance> {
    let sort = single_sorted_relational(sig)?;
    if n_max > 4 {
        return Err(Error::Budget("size bound capped at 4".into()));
    }
    // enumerate (size, equivalence, invariant assignment)
    let mut names = Vec::new();
    let mut data: Vec<(usize, Vec<usize>, BTreeMap<String, BTreeSet<Vec<usize>>>)> = Vec::new();
    for n in 0..=n_max {
        for class_of in set_partitions(n) {
            for a in all_assignments(sig, n) {
                let invariant = sig.relations().keys().all(|r| {
                    a[r].iter().all(|t| {
                        // replacing components by equivalent ones stays in
                        crate::finstruct::product(&vec![n; t.len()]).into_iter().all(|u| {
                            let equiv = t
                                .iter()
                                .zip(&u)
                                .all(|(&i, &j)| class_of[i] == class_of[j]);
                            !equiv || a[r].contains(&u)
                        })
                    })
                });
                if !invariant {
                    continue;
                }
                let mut name = format!("s{n}~{{");
                let mut first = true;
                for i in 0..n {
                    for j in (i + 1)..n {
                        if class_of[i] == class_of[j] {
                            if !first {
                                name.push('.');
                            }
                            first = false;
                            name.push_str(&format!("{i}{j}"));
                        }
                    }
                }
                name.push('}');
                name.push_str(&assignment_name("", sig, &a));
                names.push(name);
                data.push((n, class_of.clone(), a));
            }
        }
    }
    let order = {
        let mut idx: Vec<usize> = (0..names.len()).collect();
        idx.sort_by(|&i, &j| names[i].cmp(&names[j]));
        idx
    };
    let names: Vec<String> = order.iter().map(|&i| names[i].clone()).collect();
    let data: Vec<_> = order.iter().map(|&i| data[i].clone()).collect();

    // base topology: scott on size, sierpinski on merges and facts
    let count = names.len();
    let mut min_nbhds = Vec::with_capacity(count);
    for x in 0..count {
        let (nx, cx, ax) = &data[x];
        let mut nb = pset(count, []);
        for (y, (ny, cy, ay)) in data.iter().enumerate() {
            let finer_size = ny >= nx;
            let finer_eq = finer_size
                && (0..*nx).all(|i| (0..*nx).all(|j| cx[i] != cx[j] || cy[i] == cy[j]));
            let finer_rel = sig.relations().keys().all(|r| ax[r].is_subset(&ay[r]));
            if finer_size && finer_eq && finer_rel {
                nb.insert(y);
            }
        }
        min_nbhds.push(nb);
    }
    let base = Arc::new(FinSpace::from_min_nbhds(names, min_nbhds)?);

    // enumerated bundle, then quotient fiberwise
    let sizes: Vec<usize> = data.iter().map(|(n, _, _)| *n).collect();
    let assignments: Vec<_> = data.iter().map(|(_, _, a)| a.clone()).collect();
    let enumerated = assemble_bundle(sig, &sort, base.clone(), &sizes, &assignments)?;
    let enum_space = enumerated.sort_space(&sort);
    // class ids: group total points (x, a) by (x, class_of_x(a))
    let mut class_key: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut class_of_point = Vec::with_capacity(enum_space.total().len());
    for p in 0..enum_space.total().len() {
        let x = enum_space.projection().apply(p);
        let a = enumerated.elem_index()[&(sort.clone(), p)];
        let c = data[x].1[a];
        let next = class_key.len();
        let id = *class_key.entry((x, c)).or_insert(next);
        class_of_point.push(id);
    }
    let (quotient, point_class, open) = quotient_etale(enum_space, &class_of_point)?;
    if !open {
        return Err(Error::Etale("quotient map is not open".into()));
    }
    // descend the relations
    let sorts: BTreeMap<String, EtaleSpace> = [(sort.clone(), quotient)].into();
    let mut relations = BTreeMap::new();
    for (r, args) in sig.relations() {
        let enum_power = enumerated.power(args);
        let power = crate::etale::EtaleStructure::new_unchecked(
            sig.clone(),
            base.clone(),
            sorts.clone(),
            BTreeMap::new(),
            BTreeMap::new(),
        )
        .power(args);
        let mut set = power.total().empty_set();
        for p in 0..enum_power.len() {
            if enumerated.relation(r).contains(p) {
                let (x, elems) = &enum_power.tuples[p];
                let classes: Vec<usize> = elems.iter().map(|&e| point_class[e]).collect();
                if let Some(q) = power.point(*x, &classes) {
                    set.insert(q);
                }
            }
        }
        relations.insert(r.clone(), set);
    }
    let etale = EtaleStructure::new(sig.clone(), base, sorts, relations, BTreeMap::new())?;
    Ok(ParamInstance {
        etale,
        morley: None,
        provenance: format!("partially-enumerated n_max={n_max}"),
        witnesses: WitnessGen::PartiallyEnumerated,
    })
}

/// All partitions of `{0..n}` as class-id vectors in restricted growth form.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut current = vec![0usize; n];
    loop {
        let valid = {
            let mut max_seen = 0;
            current.iter().all(|&c| {
                if c > max_seen {
                    false
                } else {
                    if c == max_seen {
                        max_seen += 1;
                    }
                    true
                }
            })
        };
        if valid {
            out.push(current.clone());
        }
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if current[i] < n - 1 {
                current[i] += 1;
                for c in current.iter_mut().skip(i + 1) {
                    *c = 0;
                }
                break;
            }
        }
    }
}

/// A term over generator variables in a truncated term set, by index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MarkedTerm {
    Gen(usize),
    App(String, Vec<usize>),
}

fn graph_rel_name(f: &str) -> String {
    format!("G_{f}")
}

struct MarkedPoint {
    merges: Vec<(usize, usize)>,
    facts: BTreeMap<String, BTreeSet<Vec<usize>>>,
}

impl MarkedPoint {
    fn parse(name: &str, _terms: usize) -> Result<MarkedPoint> {
        let pe = PartEnumPoint::parse(name)?;
        Ok(MarkedPoint { merges: pe.merges, facts: pe.facts })
    }
}

/// Space of marked structures: base points are congruences on the truncated
/// term set together with invariant relation assignments; fibers are the
/// quotient structures over a graph-relational signature (one graph
/// relation per function symbol, recording in-bounds applications).
pub fn gen_marked(sig: &Signature, k: usize, depth: usize) -> Result<ParamInstance> {
    if sig.sorts().len() != 1 {
        return Err(Error::Etale("generator requires a single-sorted signature".into()));
    }
    let sort = sig.sorts()[0].clone();
    // truncated term set, breadth-first by depth
    let mut terms: Vec<MarkedTerm> = (0..k).map(MarkedTerm::Gen).collect();
    let mut term_depth: Vec<usize> = vec![0; k];
    for d in 1..=depth {
        let prev_len = terms.len();
        for (f, (args, _res)) in sig.functions() {
            // argument tuples over terms of depth < d, at least one = d-1
            let idxs: Vec<usize> = (0..prev_len).collect();
            for combo in crate::finstruct::product(&vec![idxs.len(); args.len()]) {
                let arg_ids: Vec<usize> = combo.iter().map(|&c| idxs[c]).collect();
                let maxd = arg_ids.iter().map(|&i| term_depth[i]).max().unwrap_or(0);
                if maxd != d - 1 {
                    continue;
                }
                terms.push(MarkedTerm::App(f.clone(), arg_ids.clone()));
                term_depth.push(d);
            }
        }
    }
    let t = terms.len();
    if t > 7 {
        return Err(Error::Budget(format!("term set has {t} elements, cap is 7")));
    }
    // fiber signature: original relations plus graph relations
    let mut rels: Vec<(String, Vec<String>)> = sig
        .relations()
        .iter()
        .map(|(r, args)| (r.clone(), args.clone()))
        .collect();
    for (f, (args, res)) in sig.functions() {
        let mut prof = args.clone();
        prof.push(res.clone());
        rels.push((graph_rel_name(f), prof));
    }
    let fiber_sig = Signature::new(vec![sort.clone()], rels, Vec::new())?;

    // congruences: partitions respecting in-bounds function applications
    let mut names = Vec::new();
    let mut data: Vec<(Vec<usize>, BTreeMap<String, BTreeSet<Vec<usize>>>)> = Vec::new();
    for class_of in set_partitions(t) {
        let congruent = terms.iter().enumerate().all(|(i, ti)| {
            terms.iter().enumerate().all(|(j, tj)| match (ti, tj) {
                (MarkedTerm::App(f, ai), MarkedTerm::App(g, aj)) if f == g => {
                    let args_equiv =
                        ai.iter().zip(aj).all(|(&x, &y)| class_of[x] == class_of[y]);
                    !args_equiv || class_of[i] == class_of[j]
                }
                _ => true,
            })
        });
        if !congruent {
            continue;
        }
        // invariant relation assignments over original relations
        for a in all_assignments(
            &Signature::new(
                vec![sort.clone()],
                sig.relations().iter().map(|(r, ar)| (r.clone(), ar.clone())).collect(),
                Vec::new(),
            )?,
            t,
        ) {
            let invariant = sig.relations().keys().all(|r| {
                a[r].iter().all(|tu| {
                    crate::finstruct::product(&vec![t; tu.len()]).into_iter().all(|u| {
                        let equiv =
                            tu.iter().zip(&u).all(|(&x, &y)| class_of[x] == class_of[y]);
                        !equiv || a[r].contains(&u)
                    })
                })
            });
            if !invariant {
                continue;
            }
            let mut name = String::from("s");
            name.push_str(&t.to_string());
            name.push('~');
            name.push('{');
            let mut first = true;
            for i in 0..t {
                for j in (i + 1)..t {
                    if class_of[i] == class_of[j] {
                        if !first {
                            name.push('.');
                        }
                        first = false;
                        name.push_str(&format!("{i}{j}"));
                    }
                }
            }
            name.push('}');
            name.push_str(&assignment_name("", sig, &a));
            names.push(name);
            data.push((class_of.clone(), a));
        }
    }
    let order = {
        let mut idx: Vec<usize> = (0..names.len()).collect();
        idx.sort_by(|&i, &j| names[i].cmp(&names[j]));
        idx
    };
    let names: Vec<String> = order.iter().map(|&i| names[i].clone()).collect();
    let data: Vec<_> = order.iter().map(|&i| data[i].clone()).collect();

    // sierpinski topology on merges and facts
    let count = names.len();
    let mut min_nbhds = Vec::with_capacity(count);
    for x in 0..count {
        let (cx, ax) = &data[x];
        let mut nb = pset(count, []);
        for (y, (cy, ay)) in data.iter().enumerate() {
            let finer_eq =
                (0..t).all(|i| (0..t).all(|j| cx[i] != cx[j] || cy[i] == cy[j]));
            let finer_rel = sig.relations().keys().all(|r| ax[r].is_subset(&ay[r]));
            if finer_eq && finer_rel {
                nb.insert(y);
            }
        }
        min_nbhds.push(nb);
    }
    let base = Arc::new(FinSpace::from_min_nbhds(names, min_nbhds)?);

    // enumerated bundle over the term set with graph facts, then quotient
    let mut assignments_full: Vec<BTreeMap<String, BTreeSet<Vec<usize>>>> = Vec::new();
    for (class_of, a) in &data {
        let mut full = a.clone();
        for (f, (args, _)) in sig.functions() {
            let mut graph = BTreeSet::new();
            for (i, term) in terms.iter().enumerate() {
                if let MarkedTerm::App(g, arg_ids) = term {
                    if g == f {
                        let mut tuple = arg_ids.clone();
                        tuple.push(i);
                        graph.insert(tuple);
                    }
                }
            }
            // close under the congruence
            let mut closed = BTreeSet::new();
            for tu in &graph {
                for u in crate::finstruct::product(&vec![t; args.len() + 1]) {
                    let equiv = tu.iter().zip(&u).all(|(&x, &y)| class_of[x] == class_of[y]);
                    if equiv {
                        closed.insert(u);
                    }
                }
            }
            full.insert(graph_rel_name(f), closed);
        }
        assignments_full.push(full);
    }
    let sizes = vec![t; count];
    let enumerated = assemble_bundle(&fiber_sig, &sort, base.clone(), &sizes, &assignments_full)?;
    let enum_space = enumerated.sort_space(&sort);
    let mut class_key: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut class_of_point = Vec::with_capacity(enum_space.total().len());
    for p in 0..enum_space.total().len() {
        let x = enum_space.projection().apply(p);
        let a = enumerated.elem_index()[&(sort.clone(), p)];
        let c = data[x].0[a];
        let next = class_key.len();
        let id = *class_key.entry((x, c)).or_insert(next);
        class_of_point.push(id);
    }
    let (quotient, point_class, open) = quotient_etale(enum_space, &class_of_point)?;
    if !open {
        return Err(Error::Etale("quotient map is not open".into()));
    }
    let sorts: BTreeMap<String, EtaleSpace> = [(sort.clone(), quotient)].into();
    let mut relations = BTreeMap::new();
    for (r, args) in fiber_sig.relations() {
        let enum_power = enumerated.power(args);
        let power = crate::etale::EtaleStructure::new_unchecked(
            fiber_sig.clone(),
            base.clone(),
            sorts.clone(),
            BTreeMap::new(),
            BTreeMap::new(),
        )
        .power(args);
        let mut set = power.total().empty_set();
        for p in 0..enum_power.len() {
            if enumerated.relation(r).contains(p) {
                let (x, elems) = &enum_power.tuples[p];
                let classes: Vec<usize> = elems.iter().map(|&e| point_class[e]).collect();
                if let Some(q) = power.point(*x, &classes) {
                    set.insert(q);
                }
            }
        }
        relations.insert(r.clone(), set);
    }
    let etale = EtaleStructure::new(fiber_sig.clone(), base, sorts, relations, BTreeMap::new())?;
    Ok(ParamInstance {
        etale,
        morley: None,
        provenance: format!("marked k={k} depth={depth}"),
        witnesses: WitnessGen::Marked { k, terms, base_sig: sig.clone() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::classify;

    fn sig_p() -> Signature {
        Signature::relational(vec![("P", 1)]).unwrap()
    }

    #[test]
    fn fixed_universe_shapes() {
        let inst =
            gen_fixed_universe(&sig_p(), 1, RelTopology::Discrete, MorleyLevel::None).unwrap();
        assert_eq!(inst.etale.base().len(), 2);
        assert!(inst.etale.validate().is_empty());

        let inst0 =
            gen_fixed_universe(&sig_p(), 0, RelTopology::Discrete, MorleyLevel::None).unwrap();
        assert_eq!(inst0.etale.base().len(), 1);
        let fiber = inst0.etale.fiber(0).unwrap();
        assert_eq!(fiber.total_size(), 0);
    }

    #[test]
    fn fixed_universe_fibers_cover_all_structures() {
        let inst =
            gen_fixed_universe(&sig_p(), 2, RelTopology::Discrete, MorleyLevel::None).unwrap();
        assert_eq!(inst.etale.base().len(), 4);
        let mut classes: Vec<crate::finstruct::FinStructure> = Vec::new();
        for x in 0..inst.etale.base().len() {
            let f = inst.etale.fiber(x).unwrap();
            assert_eq!(f.total_size(), 2);
            if !classes.iter().any(|c| crate::finstruct::are_isomorphic(c, &f)) {
                classes.push(f);
            }
        }
        assert_eq!(classes.len(), 3); // P-count 0, 1, 2
    }

    #[test]
    fn morleyized_instance_validates_and_witnesses_are_sigma1() {
        let inst =
            gen_fixed_universe(&sig_p(), 2, RelTopology::Discrete, MorleyLevel::NegAtomics)
                .unwrap();
        assert!(inst.etale.validate().is_empty());
        let ctx = vec![Var::new("v0", "elem")];
        let power = inst.etale.power_of_ctx(&ctx);
        for basic in power.total().minimal_basis() {
            let w = inst.witness_for_basic(&ctx, &basic).unwrap().expect("witness");
            assert_eq!(classify(&w).sigma, 1, "witness must be Σ1");
            w.well_sorted(inst.etale.signature()).unwrap();
        }
    }

    #[test]
    fn unmorleyized_discrete_has_no_prefilled_witnesses() {
        let inst =
            gen_fixed_universe(&sig_p(), 2, RelTopology::Discrete, MorleyLevel::None).unwrap();
        let ctx = vec![Var::new("v0", "elem")];
        let power = inst.etale.power_of_ctx(&ctx);
        let basic = power.total().minimal_basis()[0].clone();
        assert!(inst.witness_for_basic(&ctx, &basic).unwrap().is_none());
    }

    #[test]
    fn up_to_size_scott_base_shape() {
        let empty_sig = Signature::relational(vec![]).unwrap();
        let inst = gen_up_to_size(
            &empty_sig,
            2,
            SizeTopology::Scott,
            RelTopology::Sierpinski,
            MorleyLevel::None,
        )
        .unwrap();
        // base is the 3-chain with upper-set opens
        assert_eq!(inst.etale.base().len(), 3);
        let mut sizes: Vec<usize> = (0..3)
            .map(|x| inst.etale.sort_space("elem").fiber_elems(x).len())
            .collect();
        sizes.sort();
        assert_eq!(sizes, vec![0, 1, 2]);
        for x in 0..3 {
            let n = inst.etale.sort_space("elem").fiber_elems(x).len();
            let nbhd = inst.etale.base().min_nbhd(x);
            for y in nbhd.ones() {
                assert!(inst.etale.sort_space("elem").fiber_elems(y).len() >= n);
            }
        }
    }

    #[test]
    fn up_to_size_fibers_cover_all_sizes() {
        let inst = gen_up_to_size(
            &sig_p(),
            2,
            SizeTopology::Scott,
            RelTopology::Sierpinski,
            MorleyLevel::Neq,
        )
        .unwrap();
        let mut classes: Vec<crate::finstruct::FinStructure> = Vec::new();
        for x in 0..inst.etale.base().len() {
            let f = inst.etale.fiber(x).unwrap();
            let reduct_sig = inst.morley.as_ref().unwrap().base_sig.clone();
            let _ = reduct_sig;
            if !classes.iter().any(|c| crate::finstruct::are_isomorphic(c, &f)) {
                classes.push(f);
            }
        }
        // sizes 0,1,2 with P-counts: 1 + 2 + 3 = 6 classes
        assert_eq!(classes.len(), 6);
    }

    #[test]
    fn partially_enumerated_shapes() {
        let inst = gen_partially_enumerated(&sig_p(), 1).unwrap();
        // fibers: empty and one-element structures with/without P
        let mut classes: Vec<crate::finstruct::FinStructure> = Vec::new();
        for x in 0..inst.etale.base().len() {
            let f = inst.etale.fiber(x).unwrap();
            if !classes.iter().any(|c| crate::finstruct::are_isomorphic(c, &f)) {
                classes.push(f);
            }
        }
        assert_eq!(classes.len(), 3);
        assert!(inst.etale.validate().is_empty());
    }

    #[test]
    fn partially_enumerated_covers_collapses() {
        let inst = gen_partially_enumerated(&sig_p(), 2).unwrap();
        let mut max_fiber = 0;
        let mut classes: Vec<crate::finstruct::FinStructure> = Vec::new();
        for x in 0..inst.etale.base().len() {
            let f = inst.etale.fiber(x).unwrap();
            max_fiber = max_fiber.max(f.total_size());
            if !classes.iter().any(|c| crate::finstruct::are_isomorphic(c, &f)) {
                classes.push(f);
            }
        }
        assert_eq!(max_fiber, 2);
        assert_eq!(classes.len(), 6); // all structures of size ≤ 2
    }

    #[test]
    fn marked_instance_small() {
        let fsig = Signature::new(
            vec!["elem".into()],
            vec![],
            vec![("f".into(), vec!["elem".into()], "elem".into())],
        )
        .unwrap();
        let inst = gen_marked(&fsig, 1, 1).unwrap();
        // terms {a0, f(a0)}: congruences allowed by the in-bounds rule
        assert!(inst.etale.base().len() >= 2);
        assert!(inst.etale.validate().is_empty());
        // fibers carry the graph relation
        let fiber = inst.etale.fiber(0).unwrap();
        assert!(fiber.signature().relations().contains_key("G_f"));
    }

    #[test]
    fn marked_constants_only() {
        let fsig = Signature::new(
            vec!["elem".into()],
            vec![],
            vec![("c".into(), vec![], "elem".into())],
        )
        .unwrap();
        // k = 0 generators, constants give depth-1 terms
        let inst = gen_marked(&fsig, 0, 1).unwrap();
        assert!(inst.etale.validate().is_empty());
        for x in 0..inst.etale.base().len() {
            assert_eq!(inst.etale.fiber(x).unwrap().total_size(), 1);
        }
    }
}
