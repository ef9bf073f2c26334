//! Isomorphism groupoids of étale structures: the morphism space and its
//! topology, saturations and their Σ₁ certification, openness of the
//! structure maps, Vaught transforms, and the transform from Borel codes to
//! defining formulas.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::etale::{EtaleStructure, FiberPower};
use crate::finspace::{ps_inter, pset, FinSpace, PointSet};
use crate::finstruct::search::{Den, SearchBudget, SearchOutcome, Searcher, Semantics};
use crate::finstruct::{isomorphisms, FinStructure, SortedBijection};
use crate::logic::{sigma_level, Formula, Var};
use crate::paramgen::ParamInstance;
use crate::{Error, Result};

pub use crate::finspace::BorelCode;

/// A fiber isomorphism: base points and one bijection per sort, as maps on
/// fiber positions.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Morphism {
    pub dom: usize,
    pub cod: usize,
    pub maps: SortedBijection,
}

/// The groupoid of all isomorphisms between fibers, with the pointwise
/// convergence topology generated by the sets `⟪U↦V⟫` over fiber-power
/// basics together with preimages of base opens under `dom` and `cod`.
#[derive(Clone, Debug)]
pub struct IsoGroupoid {
    structure: Arc<EtaleStructure>,
    fibers: Vec<FinStructure>,
    morphisms: Vec<Morphism>,
    topology: Arc<FinSpace>,
    compose_table: Vec<Vec<Option<usize>>>,
    inverse_table: Vec<usize>,
    identity_at: Vec<usize>,
    /// Arity at which the generated topology stopped refining, when within
    /// the bound.
    pub stabilized_at: Option<usize>,
    pub arity_bound: usize,
}

/// All sort profiles of length `1..=k` over the signature's sorts.
fn profiles(sorts: &[String], k: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for n in 1..=k {
        let mut level: Vec<Vec<String>> = vec![Vec::new()];
        for _ in 0..n {
            let mut next = Vec::new();
            for p in &level {
                for s in sorts {
                    let mut q = p.clone();
                    q.push(s.clone());
                    next.push(q);
                }
            }
            level = next;
        }
        out.extend(level);
    }
    out
}

/// Computes the isomorphism groupoid with the topology generated at fiber
/// power arities up to `arity_bound`.
pub fn compute_iso_groupoid(m: &EtaleStructure, arity_bound: usize) -> Result<IsoGroupoid> {
    let structure = Arc::new(m.clone());
    let fibers = m.fibers()?;
    let base = m.base().clone();
    let mut morphisms = Vec::new();
    for x in 0..base.len() {
        for y in 0..base.len() {
            for maps in isomorphisms(&fibers[x], &fibers[y]) {
                morphisms.push(Morphism { dom: x, cod: y, maps });
            }
        }
    }
    morphisms.sort();
    let count = morphisms.len();
    let index: BTreeMap<Morphism, usize> =
        morphisms.iter().cloned().enumerate().map(|(i, g)| (g, i)).collect();

    // subbasis buckets, arity level by arity level
    let mut nbhds: Vec<PointSet> = vec![pset(count, 0..count); count];
    // dom/cod preimages of base basics
    for b in base.minimal_basis() {
        let mut dom_pre = PointSet::with_capacity(count);
        let mut cod_pre = PointSet::with_capacity(count);
        for (i, g) in morphisms.iter().enumerate() {
            if b.contains(g.dom) {
                dom_pre.insert(i);
            }
            if b.contains(g.cod) {
                cod_pre.insert(i);
            }
        }
        for s in [&dom_pre, &cod_pre] {
            for i in s.ones() {
                nbhds[i].intersect_with(s);
            }
        }
    }
    let mut stabilized_at = None;
    let mut previous = nbhds.clone();
    let groupoid_skeleton = |nbhds: &[PointSet]| -> Result<Arc<FinSpace>> {
        let names: Vec<String> = (0..count).map(|i| format!("m{i:04}")).collect();
        Ok(Arc::new(FinSpace::from_min_nbhds(names, nbhds.to_vec())?))
    };
    for arity in 1..=arity_bound {
        for profile in profiles(m.signature().sorts(), arity) {
            if profile.len() != arity {
                continue;
            }
            let power = m.power(&profile);
            let elem_index = m.elem_index();
            // buckets keyed by (basic U id, basic V id)
            let basics = power.total().minimal_basis();
            let basic_id: BTreeMap<&PointSet, usize> =
                basics.iter().enumerate().map(|(i, b)| (b, i)).collect();
            let point_basics: Vec<Vec<usize>> = (0..power.len())
                .map(|p| {
                    basics
                        .iter()
                        .enumerate()
                        .filter(|(_, b)| b.contains(p))
                        .map(|(i, _)| i)
                        .collect()
                })
                .collect();
            let _ = basic_id;
            let mut buckets: BTreeMap<(usize, usize), PointSet> = BTreeMap::new();
            for (gi, g) in morphisms.iter().enumerate() {
                for &p in &power.over(g.dom) {
                    let q = apply_morphism(m, &elem_index, g, &power, p);
                    for &u in &point_basics[p] {
                        for &v in &point_basics[q] {
                            buckets
                                .entry((u, v))
                                .or_insert_with(|| PointSet::with_capacity(count))
                                .insert(gi);
                        }
                    }
                }
            }
            for s in buckets.values() {
                for i in s.ones() {
                    nbhds[i].intersect_with(s);
                }
            }
        }
        if nbhds == previous && arity > 1 {
            stabilized_at = Some(arity - 1);
            break;
        }
        previous = nbhds.clone();
    }
    let topology = groupoid_skeleton(&nbhds)?;

    // identity, inverse, composition tables
    let mut identity_at = Vec::with_capacity(base.len());
    for x in 0..base.len() {
        let id = Morphism {
            dom: x,
            cod: x,
            maps: fibers[x]
                .signature()
                .sorts()
                .iter()
                .map(|s| (s.clone(), (0..fibers[x].universe(s).len()).collect()))
                .collect(),
        };
        identity_at.push(
            *index.get(&id).ok_or_else(|| Error::Groupoid("identity morphism missing".into()))?,
        );
    }
    let inverse_table: Vec<usize> = morphisms
        .iter()
        .map(|g| {
            let inv = Morphism {
                dom: g.cod,
                cod: g.dom,
                maps: g
                    .maps
                    .iter()
                    .map(|(s, v)| {
                        let mut inv = vec![0; v.len()];
                        for (i, &j) in v.iter().enumerate() {
                            inv[j] = i;
                        }
                        (s.clone(), inv)
                    })
                    .collect(),
            };
            index[&inv]
        })
        .collect();
    let compose_table: Vec<Vec<Option<usize>>> = morphisms
        .iter()
        .map(|g| {
            morphisms
                .iter()
                .map(|f| {
                    if f.cod != g.dom {
                        return None;
                    }
                    let composed = Morphism {
                        dom: f.dom,
                        cod: g.cod,
                        maps: f
                            .maps
                            .iter()
                            .map(|(s, fv)| {
                                (s.clone(), fv.iter().map(|&i| g.maps[s][i]).collect())
                            })
                            .collect(),
                    };
                    Some(index[&composed])
                })
                .collect()
        })
        .collect();

    let g = IsoGroupoid {
        structure,
        fibers,
        morphisms,
        topology,
        compose_table,
        inverse_table,
        identity_at,
        stabilized_at,
        arity_bound,
    };
    let laws = g.check_groupoid_laws();
    if !laws.is_empty() {
        return Err(Error::Groupoid(format!("groupoid law violations: {laws:?}")));
    }
    Ok(g)
}

/// Applies a morphism to a fiber-power point over its domain, translating
/// through fiber positions.
fn apply_morphism(
    structure: &EtaleStructure,
    elem_index: &BTreeMap<(String, usize), usize>,
    g: &Morphism,
    power: &FiberPower,
    p: usize,
) -> usize {
    let (x, elems) = &power.tuples[p];
    debug_assert_eq!(*x, g.dom);
    let mapped: Vec<usize> = elems
        .iter()
        .zip(&power.sorts)
        .map(|(&e, sort)| {
            let pos = elem_index[&(sort.clone(), e)];
            let target_pos = g.maps[sort][pos];
            structure.sort_space(sort).fiber_elems(g.cod)[target_pos]
        })
        .collect();
    power.point(g.cod, &mapped).expect("image point exists")
}

impl IsoGroupoid {
    pub fn structure(&self) -> &Arc<EtaleStructure> {
        &self.structure
    }

    pub fn base(&self) -> &Arc<FinSpace> {
        self.structure.base()
    }

    pub fn morphisms(&self) -> &[Morphism] {
        &self.morphisms
    }

    pub fn len(&self) -> usize {
        self.morphisms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.morphisms.is_empty()
    }

    pub fn topology(&self) -> &Arc<FinSpace> {
        &self.topology
    }

    pub fn fibers(&self) -> &[FinStructure] {
        &self.fibers
    }

    pub fn identity(&self, x: usize) -> usize {
        self.identity_at[x]
    }

    pub fn inverse(&self, g: usize) -> usize {
        self.inverse_table[g]
    }

    pub fn compose(&self, g: usize, f: usize) -> Option<usize> {
        self.compose_table[g][f]
    }

    /// Image of a fiber-power point over `dom(g)` under morphism `g`.
    pub fn apply(&self, g: usize, power: &FiberPower, p: usize) -> usize {
        let elem_index = self.structure.elem_index();
        apply_morphism(&self.structure, &elem_index, &self.morphisms[g], power, p)
    }

    /// Groupoid axioms as table identities; empty when all hold.
    pub fn check_groupoid_laws(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.len();
        for g in 0..n {
            let m = &self.morphisms[g];
            if self.compose(g, self.identity(m.dom)) != Some(g)
                || self.compose(self.identity(m.cod), g) != Some(g)
            {
                out.push(format!("identity law fails at {g}"));
            }
            let inv = self.inverse(g);
            if self.compose(g, inv) != Some(self.identity(m.cod))
                || self.compose(inv, g) != Some(self.identity(m.dom))
            {
                out.push(format!("inverse law fails at {g}"));
            }
        }
        for g in 0..n {
            for f in 0..n {
                if let Some(gf) = self.compose(g, f) {
                    for e in 0..n {
                        if let Some(fe) = self.compose(f, e) {
                            if self.compose(gf, e) != self.compose(g, fe) {
                                out.push(format!("associativity fails at {g},{f},{e}"));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Continuity of dom, cod, composition, inverse, and of the actions on
    /// fiber powers up to the arity bound; empty when all hold.
    pub fn check_continuity(&self) -> Vec<String> {
        let mut out = Vec::new();
        let top = &self.topology;
        let base = self.base();
        for (gi, g) in self.morphisms.iter().enumerate() {
            // dom, cod continuous
            for hj in top.min_nbhd(gi).ones() {
                let h = &self.morphisms[hj];
                if !base.min_nbhd(g.dom).contains(h.dom) {
                    out.push(format!("dom discontinuous at {gi}"));
                }
                if !base.min_nbhd(g.cod).contains(h.cod) {
                    out.push(format!("cod discontinuous at {gi}"));
                }
            }
            // inverse continuous
            for hj in top.min_nbhd(gi).ones() {
                if !top.min_nbhd(self.inverse(gi)).contains(self.inverse(hj)) {
                    out.push(format!("inverse discontinuous at {gi}"));
                }
            }
        }
        // composition continuous on the composable-pair subspace
        for g in 0..self.len() {
            for f in 0..self.len() {
                if let Some(gf) = self.compose(g, f) {
                    for g2 in top.min_nbhd(g).ones() {
                        for f2 in top.min_nbhd(f).ones() {
                            if let Some(c) = self.compose(g2, f2) {
                                if !top.min_nbhd(gf).contains(c) {
                                    out.push(format!("composition discontinuous at {g},{f}"));
                                }
                            }
                        }
                    }
                }
            }
        }
        // joint continuity of the action on each power
        for profile in profiles(self.structure.signature().sorts(), self.arity_bound) {
            let power = self.structure.power(&profile);
            for (gi, g) in self.morphisms.iter().enumerate() {
                for p in power.over(g.dom) {
                    let r = self.apply(gi, &power, p);
                    for hj in top.min_nbhd(gi).ones() {
                        let h = &self.morphisms[hj];
                        for q in power.total().min_nbhd(p).ones() {
                            if power.base_of(q) == h.dom {
                                let r2 = self.apply(hj, &power, q);
                                if !power.total().min_nbhd(r).contains(r2) {
                                    out.push(format!(
                                        "action discontinuous at morphism {gi}, point {p}"
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Whether dom and cod are open maps.
    pub fn check_open_groupoid(&self) -> bool {
        let base = self.base();
        (0..self.len()).all(|g| {
            let nb = self.topology.min_nbhd(g);
            let mut dom_img = base.empty_set();
            let mut cod_img = base.empty_set();
            for h in nb.ones() {
                dom_img.insert(self.morphisms[h].dom);
                cod_img.insert(self.morphisms[h].cod);
            }
            base.is_open(&dom_img) && base.is_open(&cod_img)
        })
    }

    /// The saturation of a subset of a fiber power: all images under all
    /// applicable morphisms (identities included).
    pub fn saturation(&self, power: &FiberPower, set: &PointSet) -> PointSet {
        let mut out = power.total().empty_set();
        for (gi, g) in self.morphisms.iter().enumerate() {
            for p in set.ones() {
                if power.base_of(p) == g.dom {
                    out.insert(self.apply(gi, power, p));
                }
            }
        }
        out
    }

    /// The Vaught transform `W * A`: points whose translates into `A` form
    /// a nonmeager set of morphisms within their codomain fiber of the
    /// morphism space.
    pub fn vaught_transform(
        &self,
        w: &PointSet,
        power: &FiberPower,
        set: &PointSet,
    ) -> Result<PointSet> {
        if !self.topology.is_open(w) {
            return Err(Error::Groupoid("vaught transform needs an open morphism set".into()));
        }
        let mut out = power.total().empty_set();
        for x in 0..self.base().len() {
            let cod_fiber: PointSet = {
                let mut s = self.topology.empty_set();
                for (gi, g) in self.morphisms.iter().enumerate() {
                    if g.cod == x {
                        s.insert(gi);
                    }
                }
                s
            };
            let (subspace, parents) = self.topology.subspace(&cod_fiber);
            let back: BTreeMap<usize, usize> =
                parents.iter().enumerate().map(|(new, &old)| (old, new)).collect();
            for p in power.over(x) {
                let mut translates = subspace.empty_set();
                for (gi, g) in self.morphisms.iter().enumerate() {
                    if g.cod != x || !w.contains(gi) {
                        continue;
                    }
                    // p ∈ g·A iff g⁻¹·p ∈ A
                    let pre = self.apply(self.inverse(gi), power, p);
                    if set.contains(pre) {
                        translates.insert(back[&gi]);
                    }
                }
                if !subspace.is_meager(&translates) {
                    out.insert(p);
                }
            }
        }
        Ok(out)
    }
}

/// Descriptor of a basic open set in a report: the sort profile and the
/// sorted point names of the set.
pub type OpenKey = (Vec<String>, Vec<String>);

#[derive(Clone, Debug)]
pub enum WitnessResult {
    Witness(Formula),
    Failure { explored: usize, max_size_reached: usize },
}

/// Per-basic-open саturation definability results, up to an arity bound.
#[derive(Clone, Debug)]
pub struct SaturationReport {
    pub arity_bound: usize,
    pub entries: BTreeMap<OpenKey, WitnessResult>,
}

impl SaturationReport {
    pub fn fully_successful(&self) -> bool {
        self.entries.values().all(|w| matches!(w, WitnessResult::Witness(_)))
    }

    pub fn witness(&self, profile: &[String], names: &[String]) -> Option<&Formula> {
        match self.entries.get(&(profile.to_vec(), names.to_vec())) {
            Some(WitnessResult::Witness(f)) => Some(f),
            _ => None,
        }
    }

    pub fn failures(&self) -> Vec<&OpenKey> {
        self.entries
            .iter()
            .filter(|(_, w)| matches!(w, WitnessResult::Failure { .. }))
            .map(|(k, _)| k)
            .collect()
    }
}

fn basic_key(power: &FiberPower, profile: &[String], basic: &PointSet) -> OpenKey {
    (
        profile.to_vec(),
        basic.ones().map(|p| power.total().point_name(p).to_string()).collect(),
    )
}

struct EtaleSemantics<'a> {
    structure: &'a EtaleStructure,
    fibers: &'a [FinStructure],
    vars: Vec<Var>,
}

impl Semantics for EtaleSemantics<'_> {
    fn worlds(&self) -> usize {
        self.structure.base().len()
    }

    fn domain(&self, world: usize, var: usize) -> usize {
        self.fibers[world].universe(&self.vars[var].sort).len()
    }

    fn atom_den(&self, atom: &Formula, mask: &[usize]) -> Result<Den> {
        let ctx: Vec<Var> = mask.iter().map(|&i| self.vars[i].clone()).collect();
        self.fibers.iter().map(|f| f.denotation(atom, &ctx)).collect()
    }
}

/// Converts a fiber-power subset into a per-world denotation over fiber
/// element positions.
fn power_set_to_den(
    m: &EtaleStructure,
    power: &FiberPower,
    set: &PointSet,
) -> Den {
    let elem_index = m.elem_index();
    let mut den: Den = vec![BTreeSet::new(); m.base().len()];
    for p in set.ones() {
        let (x, elems) = &power.tuples[p];
        den[*x].insert(
            elems
                .iter()
                .zip(&power.sorts)
                .map(|(&e, s)| elem_index[&(s.clone(), e)])
                .collect(),
        );
    }
    den
}

/// Searches, for each basic open of each fiber power up to the arity bound,
/// a Σ₁ formula defining its saturation across all fibers simultaneously.
pub fn certify_sigma1_saturations(
    m: &EtaleStructure,
    g: &IsoGroupoid,
    arity_bound: usize,
    extra_witnesses: usize,
    budget: SearchBudget,
) -> Result<SaturationReport> {
    let fibers = m.fibers()?;
    let mut entries = BTreeMap::new();
    for profile in profiles(m.signature().sorts(), arity_bound) {
        let power = m.power(&profile);
        let ctx: Vec<Var> = profile
            .iter()
            .enumerate()
            .map(|(i, s)| Var::new(format!("v{i}"), s.clone()))
            .collect();
        let mut vars = ctx.clone();
        for sort in m.signature().sorts() {
            for k in 0..extra_witnesses {
                vars.push(Var::new(format!("w{k}_{sort}"), sort.clone()));
            }
        }
        let sem = EtaleSemantics { structure: m, fibers: &fibers, vars: vars.clone() };
        for basic in power.total().minimal_basis() {
            let sat = g.saturation(&power, &basic);
            let target = power_set_to_den(m, &power, &sat);
            let searcher =
                Searcher::new(&sem, m.signature(), vars.clone(), ctx.len(), 1, budget);
            let key = basic_key(&power, &profile, &basic);
            match searcher.search(&target)? {
                SearchOutcome::Found(f) => {
                    entries.insert(key, WitnessResult::Witness(f));
                }
                SearchOutcome::NotFound { explored, max_size_reached } => {
                    entries.insert(key, WitnessResult::Failure { explored, max_size_reached });
                }
            }
        }
    }
    Ok(SaturationReport { arity_bound, entries })
}

/// Builds a report from a generator's closed-form witnesses, validating
/// each against the brute-force saturation.
pub fn report_from_witnesses(
    inst: &ParamInstance,
    g: &IsoGroupoid,
    arity_bound: usize,
) -> Result<SaturationReport> {
    let m = &inst.etale;
    let mut entries = BTreeMap::new();
    for profile in profiles(m.signature().sorts(), arity_bound) {
        let power = m.power(&profile);
        let ctx: Vec<Var> = profile
            .iter()
            .enumerate()
            .map(|(i, s)| Var::new(format!("v{i}"), s.clone()))
            .collect();
        for basic in power.total().minimal_basis() {
            let key = basic_key(&power, &profile, &basic);
            match inst.witness_for_basic(&ctx, &basic)? {
                None => {
                    entries.insert(key, WitnessResult::Failure { explored: 0, max_size_reached: 0 });
                }
                Some(w) => {
                    let (den, _) = m.interpret(&w, &ctx)?;
                    let sat = g.saturation(&power, &basic);
                    if den != sat {
                        return Err(Error::Etale(format!(
                            "closed-form witness does not define the saturation of {:?}",
                            key.1
                        )));
                    }
                    entries.insert(key, WitnessResult::Witness(w));
                }
            }
        }
    }
    Ok(SaturationReport { arity_bound, entries })
}

/// Borel-code transform: builds a formula defining the Vaught transform
/// `Iso * A` of the coded set, of level at most the code's rank.
pub struct CodeTransform<'a> {
    pub m: &'a EtaleStructure,
    pub g: &'a IsoGroupoid,
    pub report: &'a SaturationReport,
    /// Arity cap for the difference-case witnesses.
    pub diff_arity: usize,
    fresh: std::cell::Cell<usize>,
}

impl<'a> CodeTransform<'a> {
    pub fn new(
        m: &'a EtaleStructure,
        g: &'a IsoGroupoid,
        report: &'a SaturationReport,
        diff_arity: usize,
    ) -> Self {
        CodeTransform { m, g, report, diff_arity, fresh: std::cell::Cell::new(0) }
    }

    /// The defining formula for `Iso * (realized code)` over the given
    /// profile, verified against the brute-force transform.
    pub fn lopez_escobar(&self, profile: &[String], code: &BorelCode) -> Result<Formula> {
        let power = self.m.power(profile);
        let formula = self.transform(profile, code)?;
        if sigma_level(&formula) > code.rank() {
            return Err(Error::Groupoid(format!(
                "transform produced level {} above code rank {}",
                sigma_level(&formula),
                code.rank()
            )));
        }
        // verify against the direct Baire-categorical transform
        let realized = crate::finspace::realize_borel(power.total(), code)?;
        let full = self.g.topology().full_set();
        let expected = self.g.vaught_transform(&full, &power, &realized)?;
        let ctx: Vec<Var> = profile
            .iter()
            .enumerate()
            .map(|(i, s)| Var::new(format!("v{i}"), s.clone()))
            .collect();
        let (den, _) = self.m.interpret(&formula, &ctx)?;
        if den != expected {
            return Err(Error::Groupoid(
                "transform formula does not define the Vaught transform".into(),
            ));
        }
        Ok(formula)
    }

    fn transform(&self, profile: &[String], code: &BorelCode) -> Result<Formula> {
        let power = self.m.power(profile);
        let ctx: Vec<Var> = profile
            .iter()
            .enumerate()
            .map(|(i, s)| Var::new(format!("v{i}"), s.clone()))
            .collect();
        match code {
            BorelCode::Open(names) => {
                let set = power.total().set_of_names(names)?;
                if !power.total().is_open(&set) {
                    return Err(Error::Groupoid("code leaf is not open".into()));
                }
                let mut basics: BTreeSet<PointSet> = BTreeSet::new();
                for p in set.ones() {
                    basics.insert(power.total().min_nbhd(p).clone());
                }
                let mut parts = Vec::new();
                for b in basics {
                    let key = basic_key(&power, profile, &b);
                    match self.report.witness(&key.0, &key.1) {
                        Some(f) => {
                            // rename the witness context onto ours
                            parts.push(rename_ctx(f, &ctx)?);
                        }
                        None => {
                            return Err(Error::MissingWitness(format!(
                                "no Σ1 witness for basic open {:?} at profile {:?}",
                                key.1, key.0
                            )))
                        }
                    }
                }
                Ok(Formula::Or(parts))
            }
            BorelCode::Union(cs) => Ok(Formula::Or(
                cs.iter().map(|c| self.transform(profile, c)).collect::<Result<_>>()?,
            )),
            BorelCode::Diff(a, b) => {
                let mut parts = Vec::new();
                for m_arity in 1..=self.diff_arity {
                    for sub in profiles(self.m.signature().sorts(), m_arity) {
                        if sub.len() != m_arity {
                            continue;
                        }
                        let sub_power = self.m.power(&sub);
                        let mut joint = profile.to_vec();
                        joint.extend(sub.iter().cloned());
                        for u in sub_power.total().minimal_basis() {
                            let a_cyl = self.cylinder(profile, a, &sub_power, &u)?;
                            let b_cyl = self.cylinder(profile, b, &sub_power, &u)?;
                            let phi = self.transform(&joint, &a_cyl)?;
                            let psi = self.transform(&joint, &b_cyl)?;
                            // fresh witness variables for the sub-profile
                            let start = self.fresh.get();
                            self.fresh.set(start + sub.len());
                            let ys: Vec<Var> = sub
                                .iter()
                                .enumerate()
                                .map(|(i, s)| Var::new(format!("w{}", start + i), s.clone()))
                                .collect();
                            // rename joint context (v0.., then the sub part)
                            let mut joint_ctx: Vec<Var> = (0..profile.len())
                                .map(|i| Var::new(format!("v{i}"), profile[i].clone()))
                                .collect();
                            joint_ctx.extend(ys.clone());
                            let phi = rename_ctx(&phi, &joint_ctx)?;
                            let psi = rename_ctx(&psi, &joint_ctx)?;
                            parts.push(Formula::exists_many(
                                &ys,
                                Formula::And(vec![phi, Formula::not(psi)]),
                            ));
                        }
                    }
                }
                Ok(Formula::Or(parts))
            }
        }
    }

    /// The code for `A ×_X U`, as a code over the joint profile: leaves are
    /// cylindered pointwise, unions and differences distribute.
    fn cylinder(
        &self,
        profile: &[String],
        code: &BorelCode,
        sub_power: &FiberPower,
        u: &PointSet,
    ) -> Result<BorelCode> {
        match code {
            BorelCode::Open(names) => {
                let power = self.m.power(profile);
                let set = power.total().set_of_names(names)?;
                let mut joint_profile = profile.to_vec();
                joint_profile.extend(sub_power.sorts.iter().cloned());
                let joint = self.m.power(&joint_profile);
                let mut out = Vec::new();
                for p in set.ones() {
                    let (x, elems) = &power.tuples[p];
                    for q in u.ones() {
                        let (y, sub_elems) = &sub_power.tuples[q];
                        if x == y {
                            let mut all = elems.clone();
                            all.extend(sub_elems.iter().copied());
                            let j = joint.point(*x, &all).expect("joint point");
                            out.push(joint.total().point_name(j).to_string());
                        }
                    }
                }
                out.sort();
                Ok(BorelCode::Open(out))
            }
            BorelCode::Union(cs) => Ok(BorelCode::Union(
                cs.iter()
                    .map(|c| self.cylinder(profile, c, sub_power, u))
                    .collect::<Result<_>>()?,
            )),
            BorelCode::Diff(a, b) => Ok(BorelCode::Diff(
                Box::new(self.cylinder(profile, a, sub_power, u)?),
                Box::new(self.cylinder(profile, b, sub_power, u)?),
            )),
        }
    }
}

/// Renames a witness formula's canonical context `v0, v1, …` onto the given
/// variables.
fn rename_ctx(f: &Formula, ctx: &[Var]) -> Result<Formula> {
    let mut sub: BTreeMap<String, crate::logic::Term> = BTreeMap::new();
    for (i, v) in ctx.iter().enumerate() {
        sub.insert(format!("v{i}"), crate::logic::Term::Var(v.clone()));
    }
    // plain renaming; witnesses never bind v-variables
    Ok(rename_free(f, &sub))
}

fn rename_free(f: &Formula, sub: &BTreeMap<String, crate::logic::Term>) -> Formula {
    use crate::logic::Term;
    fn term(t: &Term, sub: &BTreeMap<String, Term>) -> Term {
        match t {
            Term::Var(v) => sub.get(&v.name).cloned().unwrap_or_else(|| t.clone()),
            Term::App(g, args) => {
                Term::App(g.clone(), args.iter().map(|a| term(a, sub)).collect())
            }
        }
    }
    match f {
        Formula::Atomic(r, args) => {
            Formula::Atomic(r.clone(), args.iter().map(|t| term(t, sub)).collect())
        }
        Formula::Eq(a, b) => Formula::Eq(term(a, sub), term(b, sub)),
        Formula::And(fs) => Formula::And(fs.iter().map(|g| rename_free(g, sub)).collect()),
        Formula::Or(fs) => Formula::Or(fs.iter().map(|g| rename_free(g, sub)).collect()),
        Formula::Not(g) => Formula::not(rename_free(g, sub)),
        Formula::Exists(v, g) => {
            let mut inner = sub.clone();
            inner.remove(&v.name);
            Formula::exists(v.clone(), rename_free(g, &inner))
        }
    }
}
