//! Étale structures: bundles of finite structures over a finite base, one
//! étale space per sort, with open relation interpretations on fiber powers
//! and continuous fiber-preserving function interpretations.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::finspace::{
    fiber_product_indexed, ContinuousMap, EtaleSpace, FinSpace, PointSet,
};
use crate::finstruct::FinStructure;
use crate::logic::{Formula, Fragment, Morleyization, Signature, Var};
use crate::{Error, Result};

/// A fiber power of an étale structure for a sort profile, in the based
/// representation: each point is a base point together with one fiber
/// element per position. The 0-ary power is the base itself.
#[derive(Clone, Debug)]
pub struct FiberPower {
    pub sorts: Vec<String>,
    pub space: EtaleSpace,
    /// For each power point: its base point and the component elements as
    /// total-space indices of the respective sort bundles.
    pub tuples: Vec<(usize, Vec<usize>)>,
    pub index: BTreeMap<(usize, Vec<usize>), usize>,
}

impl FiberPower {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn total(&self) -> &Arc<FinSpace> {
        self.space.total()
    }

    pub fn base_of(&self, point: usize) -> usize {
        self.tuples[point].0
    }

    pub fn point(&self, base: usize, elems: &[usize]) -> Option<usize> {
        self.index.get(&(base, elems.to_vec())).copied()
    }

    /// Points lying over the given base point.
    pub fn over(&self, base: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tuples[i].0 == base).collect()
    }
}

/// Violations found by [`EtaleStructure::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    SortSpace { sort: String, reason: String },
    RelationNotOpen { relation: String },
    FunctionNotFiberPreserving { function: String },
    FunctionNotContinuous { function: String },
}

#[derive(Clone, Debug)]
pub struct EtaleStructure {
    sig: Signature,
    base: Arc<FinSpace>,
    sorts: BTreeMap<String, EtaleSpace>,
    relations: BTreeMap<String, PointSet>,
    /// Function tables indexed by the argument fiber-power point.
    functions: BTreeMap<String, Vec<usize>>,
}

impl EtaleStructure {
    pub fn new(
        sig: Signature,
        base: Arc<FinSpace>,
        sorts: BTreeMap<String, EtaleSpace>,
        relations: BTreeMap<String, PointSet>,
        functions: BTreeMap<String, Vec<usize>>,
    ) -> Result<Self> {
        let m = EtaleStructure { sig, base, sorts, relations, functions };
        let violations = m.validate();
        if violations.is_empty() {
            Ok(m)
        } else {
            Err(Error::Etale(format!("{violations:?}")))
        }
    }

    pub(crate) fn new_unchecked(
        sig: Signature,
        base: Arc<FinSpace>,
        sorts: BTreeMap<String, EtaleSpace>,
        relations: BTreeMap<String, PointSet>,
        functions: BTreeMap<String, Vec<usize>>,
    ) -> Self {
        EtaleStructure { sig, base, sorts, relations, functions }
    }

    /// The bundle with no fibers content: one étale space per sort equal to
    /// the identity on an empty total, over the given base.
    pub fn trivial(sig: Signature, base: Arc<FinSpace>) -> Result<Self> {
        let mut sorts = BTreeMap::new();
        for sort in sig.sorts() {
            let total = Arc::new(FinSpace::empty());
            let projection = ContinuousMap::new(total.clone(), base.clone(), Vec::new())?;
            sorts.insert(sort.clone(), EtaleSpace::new(projection, Vec::new())?);
        }
        let relations = sig
            .relations()
            .keys()
            .map(|r| {
                let power = power_of(&sig, &base, &sorts, sig.relation_args(r).unwrap());
                (r.clone(), power.total().empty_set())
            })
            .collect();
        let functions = sig
            .functions()
            .iter()
            .map(|(f, (args, _))| {
                let power = power_of(&sig, &base, &sorts, args);
                if power.len() > 0 {
                    Err(Error::Etale(format!("function {f} over empty sorts has arguments")))
                } else {
                    Ok((f.clone(), Vec::new()))
                }
            })
            .collect::<Result<_>>()?;
        EtaleStructure::new(sig, base, sorts, relations, functions)
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for sort in self.sig.sorts() {
            match self.sorts.get(sort) {
                None => out.push(Violation::SortSpace {
                    sort: sort.clone(),
                    reason: "missing sort space".into(),
                }),
                Some(space) => {
                    if space.base() != &self.base {
                        out.push(Violation::SortSpace {
                            sort: sort.clone(),
                            reason: "sort space over a different base".into(),
                        });
                    }
                    if let Err(e) = EtaleSpace::new(
                        space.projection().clone(),
                        space.sections().to_vec(),
                    ) {
                        out.push(Violation::SortSpace { sort: sort.clone(), reason: e.to_string() });
                    }
                }
            }
        }
        if !out.is_empty() {
            return out;
        }
        for (r, args) in self.sig.relations() {
            let power = self.power(args);
            match self.relations.get(r) {
                None => out.push(Violation::RelationNotOpen { relation: r.clone() }),
                Some(set) => {
                    if !power.total().is_open(set) {
                        out.push(Violation::RelationNotOpen { relation: r.clone() });
                    }
                }
            }
        }
        for (f, (args, res)) in self.sig.functions() {
            let power = self.power(args);
            let res_space = &self.sorts[res];
            match self.functions.get(f) {
                None => out.push(Violation::FunctionNotFiberPreserving { function: f.clone() }),
                Some(table) => {
                    if table.len() != power.len() {
                        out.push(Violation::FunctionNotFiberPreserving { function: f.clone() });
                        continue;
                    }
                    let fiber_ok = (0..power.len()).all(|p| {
                        res_space.projection().apply(table[p]) == power.base_of(p)
                    });
                    if !fiber_ok {
                        out.push(Violation::FunctionNotFiberPreserving { function: f.clone() });
                        continue;
                    }
                    let continuous = (0..power.len()).all(|p| {
                        power
                            .total()
                            .min_nbhd(p)
                            .ones()
                            .all(|q| res_space.total().min_nbhd(table[p]).contains(table[q]))
                    });
                    if !continuous {
                        out.push(Violation::FunctionNotContinuous { function: f.clone() });
                    }
                }
            }
        }
        out
    }

    pub fn signature(&self) -> &Signature {
        &self.sig
    }

    pub fn base(&self) -> &Arc<FinSpace> {
        &self.base
    }

    pub fn sort_space(&self, sort: &str) -> &EtaleSpace {
        &self.sorts[sort]
    }

    pub fn sort_spaces(&self) -> &BTreeMap<String, EtaleSpace> {
        &self.sorts
    }

    pub fn relation(&self, name: &str) -> &PointSet {
        &self.relations[name]
    }

    pub fn relations(&self) -> &BTreeMap<String, PointSet> {
        &self.relations
    }

    pub fn function_table(&self, name: &str) -> &[usize] {
        &self.functions[name]
    }

    pub fn functions(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.functions
    }

    /// The fiber power for a sort profile.
    pub fn power(&self, sorts: &[String]) -> FiberPower {
        power_of(&self.sig, &self.base, &self.sorts, sorts)
    }

    /// The fiber power for the sorts of a variable context.
    pub fn power_of_ctx(&self, ctx: &[Var]) -> FiberPower {
        let sorts: Vec<String> = ctx.iter().map(|v| v.sort.clone()).collect();
        self.power(&sorts)
    }

    /// The ordinary structure carried by the fiber over `x`. Universe
    /// element names are the total-space point names.
    pub fn fiber(&self, x: usize) -> Result<FinStructure> {
        if x >= self.base.len() {
            return Err(Error::Etale(format!("unknown base point index {x}")));
        }
        let mut universes = BTreeMap::new();
        let mut elem_index: BTreeMap<(String, usize), usize> = BTreeMap::new();
        for (sort, space) in &self.sorts {
            let elems = space.fiber_elems(x);
            for (i, &e) in elems.iter().enumerate() {
                elem_index.insert((sort.clone(), e), i);
            }
            universes.insert(
                sort.clone(),
                elems.iter().map(|&e| space.total().point_name(e).to_string()).collect(),
            );
        }
        let mut relations = BTreeMap::new();
        for (r, args) in self.sig.relations() {
            let power = self.power(args);
            let mut tuples = BTreeSet::new();
            for p in self.relations[r].ones() {
                let (bx, elems) = &power.tuples[p];
                if *bx == x {
                    tuples.insert(
                        elems
                            .iter()
                            .zip(args)
                            .map(|(&e, s)| elem_index[&(s.clone(), e)])
                            .collect::<Vec<_>>(),
                    );
                }
            }
            relations.insert(r.clone(), tuples);
        }
        let mut functions = BTreeMap::new();
        for (f, (args, res)) in self.sig.functions() {
            let power = self.power(args);
            let table = &self.functions[f];
            let mut ft = BTreeMap::new();
            for p in 0..power.len() {
                let (bx, elems) = &power.tuples[p];
                if *bx == x {
                    let key: Vec<usize> =
                        elems.iter().zip(args).map(|(&e, s)| elem_index[&(s.clone(), e)]).collect();
                    ft.insert(key, elem_index[&(res.clone(), table[p])]);
                }
            }
            functions.insert(f.clone(), ft);
        }
        FinStructure::new(self.sig.clone(), universes, relations, functions)
    }

    /// All fibers, indexed by base point.
    pub fn fibers(&self) -> Result<Vec<FinStructure>> {
        (0..self.base.len()).map(|x| self.fiber(x)).collect()
    }

    /// Fiberwise interpretation of a formula over a variable context; the
    /// flag reports whether the interpretation is open in the fiber power.
    pub fn interpret(&self, f: &Formula, ctx: &[Var]) -> Result<(PointSet, bool)> {
        f.well_sorted(&self.sig)?;
        let free = f.free_vars();
        for v in &free {
            if !ctx.contains(v) {
                return Err(Error::Sort(format!(
                    "free variable {} not in the interpretation context",
                    v.name
                )));
            }
        }
        let power = self.power_of_ctx(ctx);
        let fibers = self.fibers()?;
        let elem_index = self.elem_index();
        let mut out = power.total().empty_set();
        for p in 0..power.len() {
            let (x, elems) = &power.tuples[p];
            let env: BTreeMap<String, usize> = ctx
                .iter()
                .zip(elems)
                .map(|(v, &e)| (v.name.clone(), elem_index[&(v.sort.clone(), e)]))
                .collect();
            if fibers[*x].evaluate(f, &env)? {
                out.insert(p);
            }
        }
        let open = power.total().is_open(&out);
        Ok((out, open))
    }

    /// Map from (sort, total point) to the point's index within its fiber.
    pub(crate) fn elem_index(&self) -> BTreeMap<(String, usize), usize> {
        let mut out = BTreeMap::new();
        for (sort, space) in &self.sorts {
            for x in 0..self.base.len() {
                for (i, e) in space.fiber_elems(x).into_iter().enumerate() {
                    out.insert((sort.clone(), e), i);
                }
            }
        }
        out
    }

    /// Pullback along a continuous map into the base.
    pub fn pullback(&self, f: &ContinuousMap) -> Result<EtaleStructure> {
        if f.target() != &self.base {
            return Err(Error::Etale("pullback map must land in the base".into()));
        }
        let z = f.source().clone();
        let mut sorts = BTreeMap::new();
        // new total points (z, a) with names "(z|a)"; record total index maps
        let mut maps: BTreeMap<String, BTreeMap<(usize, usize), usize>> = BTreeMap::new();
        for (sort, space) in &self.sorts {
            let mut names = Vec::new();
            let mut pairs = Vec::new();
            for zp in 0..z.len() {
                for a in space.fiber_elems(f.apply(zp)) {
                    names.push(format!(
                        "({}|{})",
                        z.point_name(zp),
                        space.total().point_name(a)
                    ));
                    pairs.push((zp, a));
                }
            }
            let order = {
                let mut idx: Vec<usize> = (0..names.len()).collect();
                idx.sort_by(|&i, &j| names[i].cmp(&names[j]));
                idx
            };
            let names: Vec<String> = order.iter().map(|&i| names[i].clone()).collect();
            let pairs: Vec<(usize, usize)> = order.iter().map(|&i| pairs[i]).collect();
            let lookup: BTreeMap<(usize, usize), usize> =
                pairs.iter().copied().enumerate().map(|(i, p)| (p, i)).collect();
            let n = names.len();
            let min_nbhds: Vec<PointSet> = pairs
                .iter()
                .map(|&(zp, a)| {
                    let mut nb = PointSet::with_capacity(n);
                    for (j, &(zq, b)) in pairs.iter().enumerate() {
                        if z.min_nbhd(zp).contains(zq) && space.total().min_nbhd(a).contains(b) {
                            nb.insert(j);
                        }
                    }
                    nb
                })
                .collect();
            let total = Arc::new(FinSpace::from_min_nbhds(names, min_nbhds)?);
            let graph: Vec<usize> = pairs.iter().map(|&(zp, _)| zp).collect();
            let projection = ContinuousMap::new(total.clone(), z.clone(), graph)?;
            let space2 = EtaleSpace::from_projection(projection)?;
            sorts.insert(sort.clone(), space2);
            maps.insert(sort.clone(), lookup);
        }
        // interpretations transfer along (z, ā) ↦ (f(z), ā)
        let mut relations = BTreeMap::new();
        for (r, args) in self.sig.relations() {
            let old_power = self.power(args);
            let new_power = power_of(&self.sig, &z, &sorts, args);
            let mut set = new_power.total().empty_set();
            for p in 0..new_power.len() {
                let (zp, elems) = &new_power.tuples[p];
                // translate new component indices back to old totals
                let old_elems: Vec<usize> = elems
                    .iter()
                    .zip(args)
                    .map(|(&e, s)| back_translate(&maps[s], e))
                    .collect();
                let old_point = old_power
                    .point(f.apply(*zp), &old_elems)
                    .ok_or_else(|| Error::Etale("pullback indexing mismatch".into()))?;
                if self.relations[r].contains(old_point) {
                    set.insert(p);
                }
            }
            relations.insert(r.clone(), set);
        }
        let mut functions = BTreeMap::new();
        for (fname, (args, res)) in self.sig.functions() {
            let old_power = self.power(args);
            let new_power = power_of(&self.sig, &z, &sorts, args);
            let mut table = Vec::with_capacity(new_power.len());
            for p in 0..new_power.len() {
                let (zp, elems) = &new_power.tuples[p];
                let old_elems: Vec<usize> = elems
                    .iter()
                    .zip(args)
                    .map(|(&e, s)| back_translate(&maps[s], e))
                    .collect();
                let old_point = old_power
                    .point(f.apply(*zp), &old_elems)
                    .ok_or_else(|| Error::Etale("pullback indexing mismatch".into()))?;
                let old_val = self.functions[fname][old_point];
                table.push(maps[res][&(*zp, old_val)]);
            }
            functions.insert(fname.clone(), table);
        }
        EtaleStructure::new(self.sig.clone(), z, sorts, relations, functions)
    }

    /// Morleyization over a fragment: refine the base by the projections of
    /// member interpretations, pull the totals back along the identity, and
    /// expand by the defined relations (now open).
    pub fn morleyize(&self, fragment: &Fragment) -> Result<MorleyizedEtale> {
        if fragment.signature() != &self.sig {
            return Err(Error::Etale("fragment is over a different signature".into()));
        }
        let morley = fragment.morleyize_economic()?;
        // refined base: old opens plus p(U ∩ φ^M) for basic U and members φ
        let mut subbasis: Vec<PointSet> = self.base.minimal_basis();
        let mut member_sets: BTreeMap<Formula, (Vec<Var>, PointSet)> = BTreeMap::new();
        for member in fragment.members() {
            let ctx = member.free_vars();
            let (set, _open) = self.interpret(member, &ctx)?;
            let power = self.power_of_ctx(&ctx);
            for basic in power.total().minimal_basis() {
                let mut hit = self.base.empty_set();
                for p in basic.ones() {
                    if set.contains(p) {
                        hit.insert(power.base_of(p));
                    }
                }
                subbasis.push(hit);
            }
            member_sets.insert(member.clone(), (ctx, set));
        }
        let n = self.base.len();
        let mut base_nbhds = Vec::with_capacity(n);
        for x in 0..n {
            let mut nb = crate::finspace::pset(n, 0..n);
            for s in &subbasis {
                if s.contains(x) {
                    nb.intersect_with(s);
                }
            }
            base_nbhds.push(nb);
        }
        let new_base = Arc::new(FinSpace::from_min_nbhds(
            self.base.point_names().to_vec(),
            base_nbhds,
        )?);
        // pull each sort total back along the identity: refine by preimages
        let mut sorts = BTreeMap::new();
        for (sort, space) in &self.sorts {
            let total = space.total();
            let k = total.len();
            let mut nbhds = Vec::with_capacity(k);
            for a in 0..k {
                let mut nb = total.min_nbhd(a).clone();
                let based = new_base.min_nbhd(space.projection().apply(a));
                let mut pre = PointSet::with_capacity(k);
                for b in 0..k {
                    if based.contains(space.projection().apply(b)) {
                        pre.insert(b);
                    }
                }
                nb.intersect_with(&pre);
                nbhds.push(nb);
            }
            let new_total =
                Arc::new(FinSpace::from_min_nbhds(total.point_names().to_vec(), nbhds)?);
            let projection = ContinuousMap::new(
                new_total.clone(),
                new_base.clone(),
                space.projection().graph().to_vec(),
            )?;
            sorts.insert(sort.clone(), EtaleSpace::from_projection(projection)?);
        }
        // carry over old interpretations and add the defined relations
        let mut relations = BTreeMap::new();
        for (r, _args) in self.sig.relations() {
            relations.insert(r.clone(), self.relations[r].clone());
        }
        for (member, symbol) in morley.defined_symbols() {
            let (_ctx, set) = &member_sets[member];
            relations.insert(symbol.clone(), set.clone());
        }
        let functions = self.functions.clone();
        let structure = EtaleStructure::new(
            morley.expanded_sig.clone(),
            new_base,
            sorts,
            relations,
            functions,
        )?;
        Ok(MorleyizedEtale { structure, morley })
    }

    /// Restricts to the reduct along a subsignature (dropping interpreted
    /// symbols not present in it).
    pub fn reduct(&self, sig: &Signature) -> Result<EtaleStructure> {
        for (r, args) in sig.relations() {
            if self.sig.relation_args(r)? != args.as_slice() {
                return Err(Error::Etale(format!("relation {r} mismatch in reduct")));
            }
        }
        let relations = sig
            .relations()
            .keys()
            .map(|r| (r.clone(), self.relations[r].clone()))
            .collect();
        let functions = sig
            .functions()
            .keys()
            .map(|f| (f.clone(), self.functions[f].clone()))
            .collect();
        EtaleStructure::new(sig.clone(), self.base.clone(), self.sorts.clone(), relations, functions)
    }
}

fn back_translate(map: &BTreeMap<(usize, usize), usize>, new_idx: usize) -> usize {
    map.iter().find(|(_, &v)| v == new_idx).map(|((_, a), _)| *a).expect("pullback index")
}

fn power_of(
    _sig: &Signature,
    base: &Arc<FinSpace>,
    sorts: &BTreeMap<String, EtaleSpace>,
    profile: &[String],
) -> FiberPower {
    let factors: Vec<&EtaleSpace> = profile.iter().map(|s| &sorts[s]).collect();
    let (space, tuples) = fiber_product_indexed(&factors, base);
    let index = tuples.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
    FiberPower { sorts: profile.to_vec(), space, tuples, index }
}

/// A Morleyized étale structure together with the syntactic expansion data.
#[derive(Clone, Debug)]
pub struct MorleyizedEtale {
    pub structure: EtaleStructure,
    pub morley: Morleyization,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finstruct::isomorphisms;
    use crate::logic::parse_formula;

    /// One-sort bundle over the Sierpinski-style relation space for a unary
    /// predicate on one element: base points "0" (P false) and "1" (P true)
    /// with {1} open; fiber = {e} everywhere; P holds over "1".
    fn unary_sierpinski() -> EtaleStructure {
        let sig = Signature::relational(vec![("P", 1)]).unwrap();
        let base = Arc::new(FinSpace::sierpinski());
        let total = Arc::new(
            FinSpace::generate(
                vec!["a0".into(), "a1".into()],
                &[vec!["a1".into()]],
            )
            .unwrap(),
        );
        let projection = ContinuousMap::new(total.clone(), base.clone(), vec![0, 1]).unwrap();
        let space = EtaleSpace::from_projection(projection).unwrap();
        let sorts: BTreeMap<String, EtaleSpace> = [("elem".to_string(), space)].into();
        let power = power_of(&sig, &base, &sorts, &["elem".to_string()]);
        // P^M = the fiber element over base "1"
        let mut p = power.total().empty_set();
        let one = base.point_index("1").unwrap();
        for q in 0..power.len() {
            if power.base_of(q) == one {
                p.insert(q);
            }
        }
        EtaleStructure::new(sig, base, sorts, [("P".to_string(), p)].into(), BTreeMap::new())
            .unwrap()
    }

    #[test]
    fn trivial_structure_over_any_base_validates() {
        let sig = Signature::relational(vec![]).unwrap();
        let base = Arc::new(FinSpace::sierpinski());
        let m = EtaleStructure::trivial(sig, base).unwrap();
        assert!(m.validate().is_empty());
        for x in 0..m.base().len() {
            assert_eq!(m.fiber(x).unwrap().total_size(), 0);
        }
    }

    #[test]
    fn non_open_relation_is_a_violation() {
        let m = unary_sierpinski();
        // replace P by the non-open complement set
        let power = m.power(&["elem".to_string()]);
        let bad = crate::finspace::ps_diff(&power.total().full_set(), m.relation("P"));
        let mut relations = m.relations.clone();
        relations.insert("P".to_string(), bad);
        let broken = EtaleStructure::new_unchecked(
            m.sig.clone(),
            m.base.clone(),
            m.sorts.clone(),
            relations,
            m.functions.clone(),
        );
        assert_eq!(
            broken.validate(),
            vec![Violation::RelationNotOpen { relation: "P".to_string() }]
        );
    }

    #[test]
    fn fiber_preservation_violation_is_reported() {
        // one function on a discrete 2-point base with singleton fibers:
        // send the fiber over x to the fiber over y
        let sig = Signature::new(
            vec!["elem".into()],
            vec![],
            vec![("f".into(), vec!["elem".into()], "elem".into())],
        )
        .unwrap();
        let base = Arc::new(FinSpace::discrete(vec!["x".into(), "y".into()]).unwrap());
        let total = Arc::new(FinSpace::discrete(vec!["ax".into(), "ay".into()]).unwrap());
        let projection = ContinuousMap::new(total.clone(), base.clone(), vec![0, 1]).unwrap();
        let space = EtaleSpace::from_projection(projection).unwrap();
        let sorts: BTreeMap<String, EtaleSpace> = [("elem".to_string(), space)].into();
        let ok = EtaleStructure::new(
            sig.clone(),
            base.clone(),
            sorts.clone(),
            BTreeMap::new(),
            [("f".to_string(), vec![0, 1])].into(),
        );
        assert!(ok.is_ok());
        let broken = EtaleStructure::new_unchecked(
            sig,
            base,
            sorts,
            BTreeMap::new(),
            [("f".to_string(), vec![1, 0])].into(),
        );
        assert_eq!(
            broken.validate(),
            vec![Violation::FunctionNotFiberPreserving { function: "f".to_string() }]
        );
    }

    #[test]
    fn fibers_of_unary_sierpinski() {
        let m = unary_sierpinski();
        let zero = m.base().point_index("0").unwrap();
        let one = m.base().point_index("1").unwrap();
        let f0 = m.fiber(zero).unwrap();
        assert_eq!(f0.universe("elem").len(), 1);
        assert!(f0.relation("P").is_empty());
        let f1 = m.fiber(one).unwrap();
        assert_eq!(f1.relation("P").len(), 1);
        assert!(m.fiber(99).is_err());
    }

    #[test]
    fn interpret_examples() {
        let m = unary_sierpinski();
        let sig = m.signature().clone();

        // ⊤ over the empty context denotes the whole base, open
        let (top, open) = m.interpret(&Formula::top(), &[]).unwrap();
        assert_eq!(top, m.power(&[]).total().full_set());
        assert!(open);

        // Σ1 formulas are open
        let p = parse_formula("P(v0)", &sig).unwrap();
        let ctx = vec![Var::new("v0", "elem")];
        let (set, open) = m.interpret(&p, &ctx).unwrap();
        assert!(open);
        assert_eq!(set.count_ones(..), 1);

        // ¬P is not open here: P^M is open but not closed
        let notp = parse_formula("not(P(v0))", &sig).unwrap();
        let (nset, nopen) = m.interpret(&notp, &ctx).unwrap();
        assert!(!nopen);
        assert_eq!(nset.count_ones(..), 1);
    }

    #[test]
    fn interpret_is_compositional() {
        let m = unary_sierpinski();
        let sig = m.signature().clone();
        let ctx = vec![Var::new("v0", "elem")];
        let p = parse_formula("P(v0)", &sig).unwrap();
        let notp = parse_formula("not(P(v0))", &sig).unwrap();
        let (dp, _) = m.interpret(&p, &ctx).unwrap();
        let (dn, _) = m.interpret(&notp, &ctx).unwrap();
        let (dand, _) =
            m.interpret(&Formula::And(vec![p.clone(), notp.clone()]), &ctx).unwrap();
        let (dor, _) = m.interpret(&Formula::Or(vec![p.clone(), notp.clone()]), &ctx).unwrap();
        assert_eq!(dand, crate::finspace::ps_inter(&dp, &dn));
        assert_eq!(dor, crate::finspace::ps_union(&dp, &dn));

        // existential case equals the projection image
        let ctx2 = vec![Var::new("v0", "elem"), Var::new("v1", "elem")];
        let two = parse_formula("and(P(v0), P(v1))", &sig).unwrap();
        let (d2, _) = m.interpret(&two, &ctx2).unwrap();
        let ex = Formula::exists(Var::new("v1", "elem"), two);
        let (dex, _) = m.interpret(&ex, &ctx).unwrap();
        let p2 = m.power_of_ctx(&ctx2);
        let p1 = m.power_of_ctx(&ctx);
        let mut projected = p1.total().empty_set();
        for q in d2.ones() {
            let (x, elems) = &p2.tuples[q];
            projected.insert(p1.point(*x, &elems[..1]).unwrap());
        }
        assert_eq!(dex, projected);
    }

    #[test]
    fn pullback_identity_and_constant() {
        let m = unary_sierpinski();
        let id = ContinuousMap::identity(m.base().clone());
        let pulled = m.pullback(&id).unwrap();
        for x in 0..m.base().len() {
            assert!(!isomorphisms(&m.fiber(x).unwrap(), &pulled.fiber(x).unwrap()).is_empty());
        }

        // constant at the open point "1": all fibers carry P
        let one = m.base().point_index("1").unwrap();
        let z = Arc::new(FinSpace::discrete(vec!["z0".into(), "z1".into()]).unwrap());
        let c = ContinuousMap::new(z, m.base().clone(), vec![one, one]).unwrap();
        let pulled = m.pullback(&c).unwrap();
        for zp in 0..2 {
            let fiber = pulled.fiber(zp).unwrap();
            assert_eq!(fiber.relation("P").len(), 1);
        }
    }

    #[test]
    fn pullback_fibers_match_along_two_point_cover() {
        let m = unary_sierpinski();
        // discrete 2-point cover hitting both base points
        let z = Arc::new(FinSpace::discrete(vec!["u".into(), "v".into()]).unwrap());
        let zero = m.base().point_index("0").unwrap();
        let one = m.base().point_index("1").unwrap();
        let f = ContinuousMap::new(z, m.base().clone(), vec![zero, one]).unwrap();
        let pulled = m.pullback(&f).unwrap();
        for zp in 0..2 {
            let want = m.fiber(f.apply(zp)).unwrap();
            let got = pulled.fiber(zp).unwrap();
            assert!(!isomorphisms(&want, &got).is_empty());
        }
        // formula interpretations commute with pullback fiberwise
        let sig = m.signature().clone();
        let phi = parse_formula("exists y:elem. P(y)", &sig).unwrap();
        let (orig, _) = m.interpret(&phi, &[]).unwrap();
        let (pull, _) = pulled.interpret(&phi, &[]).unwrap();
        for zp in 0..2 {
            assert_eq!(pull.contains(zp), orig.contains(f.apply(zp)));
        }
    }

    #[test]
    fn morleyize_refines_base_and_opens_negations() {
        let m = unary_sierpinski();
        let frag = Fragment::with_negated_atomics(m.signature()).unwrap();
        let result = m.morleyize(&frag).unwrap();
        let m2 = &result.structure;
        assert!(m2.validate().is_empty());
        // the refined base gains the "P fails" open
        let zero = m2.base().point_index("0").unwrap();
        assert_eq!(m2.base().min_nbhd(zero).count_ones(..), 1);
        // defined relations interpret the members, and are now open
        let sig2 = m2.signature().clone();
        let not_p_sym = result
            .morley
            .defined_symbols()
            .find(|(member, _)| matches!(member, Formula::Not(_)))
            .map(|(_, s)| s.clone())
            .expect("negated member");
        let ctx = vec![Var::new("v0", "elem")];
        let atom = Formula::Atomic(not_p_sym, vec![crate::logic::Term::var("v0", "elem")]);
        let (set, open) = m2.interpret(&atom, &ctx).unwrap();
        assert!(open);
        assert_eq!(set.count_ones(..), 1);
        let _ = sig2;
        // fibers satisfy the Morleyization axioms
        for x in 0..m2.base().len() {
            let fiber = m2.fiber(x).unwrap();
            for (_, ax) in &result.morley.axioms {
                assert!(fiber.satisfies_sentence(ax).unwrap());
            }
        }
        // the reduct to the original signature has the same fibers
        let reduct = m2.reduct(m.signature()).unwrap();
        for x in 0..m.base().len() {
            assert!(!isomorphisms(&m.fiber(x).unwrap(), &reduct.fiber(x).unwrap()).is_empty());
        }
        // the refined topology refines the original
        for x in 0..m.base().len() {
            assert!(m2.base().min_nbhd(x).is_subset(m.base().min_nbhd(x)));
        }
    }

    #[test]
    fn morleyize_atomics_only_keeps_topology() {
        let m = unary_sierpinski();
        let frag = Fragment::atomics(m.signature()).unwrap();
        let result = m.morleyize(&frag).unwrap();
        let m2 = &result.structure;
        for x in 0..m.base().len() {
            assert_eq!(m.base().min_nbhd(x), m2.base().min_nbhd(x));
        }
    }
}
