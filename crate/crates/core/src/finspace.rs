//! Finite topological spaces and the bundle machinery built on them.
//!
//! A finite topology is stored through its minimal-neighborhood basis: for
//! each point `x`, `min_nbhd(x)` is the intersection of all open sets
//! containing `x` (itself open in a finite space). A set is open iff it
//! contains the minimal neighborhood of each of its points, so openness,
//! interior, closure, and Baire-category queries are all cheap, and spaces
//! whose full open-set lattice is exponential (e.g. discrete morphism
//! spaces) stay representable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use fixedbitset::FixedBitSet;

use crate::{Error, Result};

/// Set of points of a [`FinSpace`], indexed by point position.
pub type PointSet = FixedBitSet;

/// Builds a `PointSet` of capacity `n` from the given indices.
pub fn pset<I: IntoIterator<Item = usize>>(n: usize, iter: I) -> PointSet {
    let mut s = PointSet::with_capacity(n);
    for i in iter {
        s.insert(i);
    }
    s
}

/// Union of two point sets.
pub fn ps_union(a: &PointSet, b: &PointSet) -> PointSet {
    let mut r = a.clone();
    r.union_with(b);
    r
}

/// Intersection of two point sets.
pub fn ps_inter(a: &PointSet, b: &PointSet) -> PointSet {
    let mut r = a.clone();
    r.intersect_with(b);
    r
}

/// Set difference `a \ b`.
pub fn ps_diff(a: &PointSet, b: &PointSet) -> PointSet {
    let mut r = a.clone();
    r.difference_with(b);
    r
}

/// A finite topological space.
///
/// Point identifiers are strings; the constructor sorts them, so iteration
/// order is lexicographic everywhere.
#[derive(Clone, PartialEq, Eq)]
pub struct FinSpace {
    points: Vec<String>,
    index: BTreeMap<String, usize>,
    min_nbhd: Vec<PointSet>,
}

impl fmt::Debug for FinSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FinSpace({} points)", self.points.len())
    }
}

impl FinSpace {
    /// Space generated by an arbitrary family of subsets (a subbasis).
    ///
    /// The topology is the closure of the family under union and
    /// intersection, together with the empty and full sets.
    pub fn generate(points: Vec<String>, subbasis: &[Vec<String>]) -> Result<FinSpace> {
        let mut space = FinSpace::discrete_unchecked(points)?;
        let n = space.points.len();
        let mut sets = Vec::with_capacity(subbasis.len());
        for family in subbasis {
            let mut s = PointSet::with_capacity(n);
            for name in family {
                s.insert(space.point_index(name)?);
            }
            sets.push(s);
        }
        for i in 0..n {
            let mut nbhd = pset(n, 0..n);
            for s in &sets {
                if s.contains(i) {
                    nbhd.intersect_with(s);
                }
            }
            space.min_nbhd[i] = nbhd;
        }
        Ok(space)
    }

    /// Space assembled directly from minimal neighborhoods.
    ///
    /// Requires `x ∈ min_nbhd(x)` and `y ∈ min_nbhd(x) ⟹ min_nbhd(y) ⊆
    /// min_nbhd(x)` (each minimal neighborhood is itself open).
    pub fn from_min_nbhds(points: Vec<String>, min_nbhd: Vec<PointSet>) -> Result<FinSpace> {
        let space = {
            let mut s = FinSpace::discrete_unchecked(points)?;
            if min_nbhd.len() != s.points.len() {
                return Err(Error::Space("minimal neighborhood count mismatch".into()));
            }
            s.min_nbhd = min_nbhd;
            s
        };
        for x in 0..space.len() {
            if !space.min_nbhd[x].contains(x) {
                return Err(Error::Space(format!(
                    "point {} missing from its own neighborhood",
                    space.points[x]
                )));
            }
            for y in space.min_nbhd[x].ones() {
                if !space.min_nbhd[y].is_subset(&space.min_nbhd[x]) {
                    return Err(Error::Space(format!(
                        "neighborhood of {} is not open at {}",
                        space.points[x], space.points[y]
                    )));
                }
            }
        }
        Ok(space)
    }

    fn discrete_unchecked(mut points: Vec<String>) -> Result<FinSpace> {
        points.sort();
        let n = points.len();
        let mut index = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            if index.insert(p.clone(), i).is_some() {
                return Err(Error::Space(format!("duplicate point identifier {p:?}")));
            }
        }
        let min_nbhd = (0..n).map(|i| pset(n, [i])).collect();
        Ok(FinSpace { points, index, min_nbhd })
    }

    /// Discrete space on the given points.
    pub fn discrete(points: Vec<String>) -> Result<FinSpace> {
        FinSpace::discrete_unchecked(points)
    }

    /// Indiscrete space on the given points.
    pub fn indiscrete(points: Vec<String>) -> Result<FinSpace> {
        let mut s = FinSpace::discrete_unchecked(points)?;
        let n = s.len();
        let full = pset(n, 0..n);
        s.min_nbhd = vec![full; n];
        Ok(s)
    }

    /// Two points `"0"`, `"1"` with `{1}` open but not closed.
    pub fn sierpinski() -> FinSpace {
        FinSpace::generate(
            vec!["0".into(), "1".into()],
            &[vec!["1".into()]],
        )
        .expect("sierpinski space is well-formed")
    }

    /// The empty space.
    pub fn empty() -> FinSpace {
        FinSpace::discrete_unchecked(Vec::new()).expect("empty space is well-formed")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point_names(&self) -> &[String] {
        &self.points
    }

    pub fn point_name(&self, i: usize) -> &str {
        &self.points[i]
    }

    pub fn point_index(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Space(format!("unknown point {name:?}")))
    }

    pub fn empty_set(&self) -> PointSet {
        PointSet::with_capacity(self.len())
    }

    pub fn full_set(&self) -> PointSet {
        pset(self.len(), 0..self.len())
    }

    pub fn set_of<I: IntoIterator<Item = usize>>(&self, iter: I) -> PointSet {
        pset(self.len(), iter)
    }

    pub fn set_of_names(&self, names: &[String]) -> Result<PointSet> {
        let mut s = self.empty_set();
        for n in names {
            s.insert(self.point_index(n)?);
        }
        Ok(s)
    }

    pub fn names_of(&self, set: &PointSet) -> Vec<String> {
        set.ones().map(|i| self.points[i].clone()).collect()
    }

    pub fn min_nbhd(&self, x: usize) -> &PointSet {
        &self.min_nbhd[x]
    }

    pub fn is_open(&self, set: &PointSet) -> bool {
        set.ones().all(|x| self.min_nbhd[x].is_subset(set))
    }

    pub fn interior(&self, set: &PointSet) -> PointSet {
        let mut r = self.empty_set();
        for x in set.ones() {
            if self.min_nbhd[x].is_subset(set) {
                r.insert(x);
            }
        }
        r
    }

    pub fn closure(&self, set: &PointSet) -> PointSet {
        let mut r = self.empty_set();
        for x in 0..self.len() {
            if !self.min_nbhd[x].is_disjoint(set) {
                r.insert(x);
            }
        }
        r
    }

    pub fn is_closed(&self, set: &PointSet) -> bool {
        self.closure(set) == *set
    }

    pub fn is_dense(&self, set: &PointSet) -> bool {
        self.closure(set).count_ones(..) == self.len()
    }

    /// Specialization preorder: `x ≤ y` iff every open containing `x`
    /// contains `y`.
    pub fn specializes(&self, x: usize, y: usize) -> bool {
        self.min_nbhd[x].contains(y)
    }

    /// All pairs of the specialization preorder, in lexicographic order.
    pub fn specialization_preorder(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for x in 0..self.len() {
            for y in self.min_nbhd[x].ones() {
                pairs.push((x, y));
            }
        }
        pairs
    }

    /// Whether the specialization preorder is antisymmetric.
    pub fn is_t0(&self) -> bool {
        (0..self.len()).all(|x| {
            self.min_nbhd[x]
                .ones()
                .all(|y| y == x || !self.min_nbhd[y].contains(x))
        })
    }

    /// The least dense open set: the union of the maximal specialization
    /// classes. Every dense open set contains it, and it is dense open.
    pub fn min_dense_open(&self) -> PointSet {
        let mut r = self.empty_set();
        for x in 0..self.len() {
            if self.min_nbhd[x].ones().all(|y| self.min_nbhd[y].contains(x)) {
                r.insert(x);
            }
        }
        r
    }

    /// A set is meager iff it misses the least dense open set; see the
    /// oracle test against unions of nowhere dense sets.
    pub fn is_meager(&self, set: &PointSet) -> bool {
        set.is_disjoint(&self.min_dense_open())
    }

    pub fn is_comeager(&self, set: &PointSet) -> bool {
        self.min_dense_open().is_subset(set)
    }

    pub fn is_nowhere_dense(&self, set: &PointSet) -> bool {
        self.interior(&self.closure(set)).count_ones(..) == 0
    }

    /// The canonical minimal basis: deduplicated minimal neighborhoods,
    /// in canonical set order.
    pub fn minimal_basis(&self) -> Vec<PointSet> {
        let set: BTreeSet<PointSet> = self.min_nbhd.iter().cloned().collect();
        set.into_iter().collect()
    }

    /// Every open set, enumerated as unions of basis elements. Exponential;
    /// intended for small spaces and oracle tests.
    pub fn all_opens(&self) -> Vec<PointSet> {
        let basis = self.minimal_basis();
        let mut opens: BTreeSet<PointSet> = BTreeSet::new();
        opens.insert(self.empty_set());
        let mut frontier: Vec<PointSet> = vec![self.empty_set()];
        while let Some(u) = frontier.pop() {
            for b in &basis {
                let v = ps_union(&u, b);
                if opens.insert(v.clone()) {
                    frontier.push(v);
                }
            }
        }
        opens.into_iter().collect()
    }

    /// Subspace on `carrier`, with the trace topology. Returns the space and
    /// the list of parent indices in new-point order.
    pub fn subspace(&self, carrier: &PointSet) -> (FinSpace, Vec<usize>) {
        let parents: Vec<usize> = carrier.ones().collect();
        let mut names: Vec<String> = parents.iter().map(|&i| self.points[i].clone()).collect();
        // parent order is already lexicographic
        names.dedup();
        let back: BTreeMap<usize, usize> =
            parents.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let min_nbhd = parents
            .iter()
            .map(|&old| {
                let mut s = PointSet::with_capacity(parents.len());
                for y in ps_inter(&self.min_nbhd[old], carrier).ones() {
                    s.insert(back[&y]);
                }
                s
            })
            .collect();
        let space = FinSpace {
            index: names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect(),
            points: names,
            min_nbhd,
        };
        (space, parents)
    }
}

/// A continuous map between finite spaces, stored as a total point function.
#[derive(Clone, PartialEq, Eq)]
pub struct ContinuousMap {
    source: Arc<FinSpace>,
    target: Arc<FinSpace>,
    graph: Vec<usize>,
}

impl fmt::Debug for ContinuousMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContinuousMap({} -> {})", self.source.len(), self.target.len())
    }
}

impl ContinuousMap {
    pub fn new(source: Arc<FinSpace>, target: Arc<FinSpace>, graph: Vec<usize>) -> Result<Self> {
        if graph.len() != source.len() {
            return Err(Error::Space("map graph must cover every source point".into()));
        }
        if let Some(&bad) = graph.iter().find(|&&t| t >= target.len()) {
            return Err(Error::Space(format!("map target index {bad} out of range")));
        }
        let map = ContinuousMap { source, target, graph };
        match map.continuity_witness() {
            None => Ok(map),
            Some(x) => Err(Error::Space(format!(
                "map is discontinuous at {}",
                map.source.point_name(x)
            ))),
        }
    }

    pub fn from_names(
        source: Arc<FinSpace>,
        target: Arc<FinSpace>,
        graph: &BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut g = vec![usize::MAX; source.len()];
        for (k, v) in graph {
            g[source.point_index(k)?] = target.point_index(v)?;
        }
        if g.contains(&usize::MAX) {
            return Err(Error::Space("map graph must cover every source point".into()));
        }
        ContinuousMap::new(source, target, g)
    }

    pub fn identity(space: Arc<FinSpace>) -> Self {
        let graph = (0..space.len()).collect();
        ContinuousMap { source: space.clone(), target: space, graph }
    }

    /// A source point at which continuity fails, if any.
    fn continuity_witness(&self) -> Option<usize> {
        (0..self.source.len()).find(|&x| {
            let fx = self.graph[x];
            !self
                .source
                .min_nbhd(x)
                .ones()
                .all(|y| self.target.min_nbhd(fx).contains(self.graph[y]))
        })
    }

    pub fn source(&self) -> &Arc<FinSpace> {
        &self.source
    }

    pub fn target(&self) -> &Arc<FinSpace> {
        &self.target
    }

    pub fn apply(&self, x: usize) -> usize {
        self.graph[x]
    }

    pub fn graph(&self) -> &[usize] {
        &self.graph
    }

    pub fn image(&self, set: &PointSet) -> PointSet {
        let mut r = self.target.empty_set();
        for x in set.ones() {
            r.insert(self.graph[x]);
        }
        r
    }

    pub fn preimage(&self, set: &PointSet) -> PointSet {
        let mut r = self.source.empty_set();
        for x in 0..self.source.len() {
            if set.contains(self.graph[x]) {
                r.insert(x);
            }
        }
        r
    }

    /// Whether images of open sets are open. It suffices to check images of
    /// minimal neighborhoods, since every open set is a union of them.
    pub fn is_open_map(&self) -> bool {
        (0..self.source.len()).all(|x| self.target.is_open(&self.image(self.source.min_nbhd(x))))
    }

    pub fn compose(&self, inner: &ContinuousMap) -> Result<ContinuousMap> {
        if inner.target != self.source {
            return Err(Error::Space("composition target/source mismatch".into()));
        }
        Ok(ContinuousMap {
            source: inner.source.clone(),
            target: self.target.clone(),
            graph: inner.graph.iter().map(|&x| self.graph[x]).collect(),
        })
    }
}

/// Outcome of the local-homeomorphism check.
#[derive(Clone, Debug)]
pub enum EtaleCheck {
    /// A covering family of open sections.
    Etale(Vec<PointSet>),
    /// A total-space point with no open section around it.
    NotEtale { witness: usize },
}

/// Tests whether `p` is a local homeomorphism.
///
/// A point has an open section neighborhood iff its minimal neighborhood is
/// one, so the candidate sections are exactly the minimal neighborhoods.
pub fn is_etale(p: &ContinuousMap) -> EtaleCheck {
    let total = p.source();
    let base = p.target();
    let mut sections = BTreeSet::new();
    for y in 0..total.len() {
        let s = total.min_nbhd(y);
        if section_ok(p, s) {
            sections.insert(s.clone());
        } else {
            return EtaleCheck::NotEtale { witness: y };
        }
    }
    let _ = base;
    EtaleCheck::Etale(sections.into_iter().collect())
}

fn section_ok(p: &ContinuousMap, s: &PointSet) -> bool {
    let total = p.source();
    let base = p.target();
    // injectivity over the base
    let mut seen = base.empty_set();
    for a in s.ones() {
        let x = p.apply(a);
        if seen.contains(x) {
            return false;
        }
        seen.insert(x);
    }
    // open image
    let image = p.image(s);
    if !base.is_open(&image) {
        return false;
    }
    // homeomorphism onto the image: minimal neighborhoods map to the traces
    // of minimal neighborhoods
    for a in s.ones() {
        let expected = ps_inter(base.min_nbhd(p.apply(a)), &image);
        if p.image(total.min_nbhd(a)) != expected {
            return false;
        }
    }
    true
}

/// An étale bundle: a local homeomorphism with a chosen covering family of
/// open sections.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EtaleSpace {
    projection: ContinuousMap,
    sections: Vec<PointSet>,
}

impl EtaleSpace {
    pub fn new(projection: ContinuousMap, sections: Vec<PointSet>) -> Result<Self> {
        let total = projection.source();
        let mut cover = total.empty_set();
        for s in &sections {
            if !total.is_open(s) {
                return Err(Error::Space("section is not open".into()));
            }
            if !section_ok(&projection, s) {
                return Err(Error::Space("section is not a homeomorphism onto an open set".into()));
            }
            cover.union_with(s);
        }
        if cover.count_ones(..) != total.len() {
            return Err(Error::Space("sections do not cover the total space".into()));
        }
        Ok(EtaleSpace { projection, sections })
    }

    /// Derives the section cover from the projection, or reports the point
    /// with no section neighborhood.
    pub fn from_projection(projection: ContinuousMap) -> Result<Self> {
        match is_etale(&projection) {
            EtaleCheck::Etale(sections) => Ok(EtaleSpace { projection, sections }),
            EtaleCheck::NotEtale { witness } => Err(Error::Space(format!(
                "not etale: no section around {}",
                projection.source().point_name(witness)
            ))),
        }
    }

    pub fn total(&self) -> &Arc<FinSpace> {
        self.projection.source()
    }

    pub fn base(&self) -> &Arc<FinSpace> {
        self.projection.target()
    }

    pub fn projection(&self) -> &ContinuousMap {
        &self.projection
    }

    pub fn sections(&self) -> &[PointSet] {
        &self.sections
    }

    pub fn fiber(&self, x: usize) -> PointSet {
        let mut r = self.total().empty_set();
        for a in 0..self.total().len() {
            if self.projection.apply(a) == x {
                r.insert(a);
            }
        }
        r
    }

    pub fn fiber_elems(&self, x: usize) -> Vec<usize> {
        self.fiber(x).ones().collect()
    }
}

/// Composite point name for based fiber-power points.
pub fn power_point_name(base: &str, elems: &[&str]) -> String {
    format!("({base}|{})", elems.join(","))
}

/// The `n`-fold fiber power of a bundle, in the based representation: points
/// are `(x | a_0, …, a_{n-1})` with every `a_i` in the fiber over `x`. The
/// 0-fold power is the base space itself.
pub fn fiber_power(p: &EtaleSpace, n: usize) -> EtaleSpace {
    fiber_product_many(&vec![p; n], p.base())
}

/// Fiber product of bundles over a shared base, in the based representation.
///
/// With no factors this is the base itself (under identity), matching the
/// 0-fold power convention.
pub fn fiber_product_many(factors: &[&EtaleSpace], base: &Arc<FinSpace>) -> EtaleSpace {
    fiber_product_indexed(factors, base).0
}

/// As [`fiber_product_many`], also returning for each product point its
/// base point and the factor-total indices of its components, in point
/// order.
pub fn fiber_product_indexed(
    factors: &[&EtaleSpace],
    base: &Arc<FinSpace>,
) -> (EtaleSpace, Vec<(usize, Vec<usize>)>) {
    for f in factors {
        assert_eq!(f.base(), base, "fiber product requires a shared base");
    }
    if factors.is_empty() {
        let id = ContinuousMap::identity(base.clone());
        let sections = base.minimal_basis();
        let tuples = (0..base.len()).map(|x| (x, Vec::new())).collect();
        return (EtaleSpace { projection: id, sections }, tuples);
    }
    // enumerate tuples fiberwise
    let mut names = Vec::new();
    let mut tuples: Vec<(usize, Vec<usize>)> = Vec::new();
    for x in 0..base.len() {
        let fibers: Vec<Vec<usize>> = factors.iter().map(|f| f.fiber_elems(x)).collect();
        let mut stack: Vec<Vec<usize>> = vec![Vec::new()];
        for fiber in &fibers {
            let mut next = Vec::new();
            for partial in &stack {
                for &a in fiber {
                    let mut t = partial.clone();
                    t.push(a);
                    next.push(t);
                }
            }
            stack = next;
        }
        for t in stack {
            let elems: Vec<&str> =
                t.iter().enumerate().map(|(i, &a)| factors[i].total().point_name(a)).collect();
            names.push(power_point_name(base.point_name(x), &elems));
            tuples.push((x, t));
        }
    }
    let order = {
        let mut idx: Vec<usize> = (0..names.len()).collect();
        idx.sort_by(|&i, &j| names[i].cmp(&names[j]));
        idx
    };
    let sorted_names: Vec<String> = order.iter().map(|&i| names[i].clone()).collect();
    let sorted_tuples: Vec<(usize, Vec<usize>)> = order.iter().map(|&i| tuples[i].clone()).collect();
    let lookup: BTreeMap<(usize, Vec<usize>), usize> =
        sorted_tuples.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();

    let n = sorted_names.len();
    let mut min_nbhds = Vec::with_capacity(n);
    for (x, t) in &sorted_tuples {
        let mut nb = PointSet::with_capacity(n);
        // componentwise minimal neighborhoods, restricted to matching fibers
        let comp: Vec<&PointSet> =
            t.iter().enumerate().map(|(i, &a)| factors[i].total().min_nbhd(a)).collect();
        for (j, (x2, t2)) in sorted_tuples.iter().enumerate() {
            let _ = x2;
            if t2.iter().enumerate().all(|(i, &b)| comp[i].contains(b)) {
                nb.insert(j);
            }
        }
        let _ = x;
        min_nbhds.push(nb);
    }
    let total = Arc::new(
        FinSpace::from_min_nbhds(sorted_names, min_nbhds)
            .expect("fiber power neighborhoods are coherent"),
    );
    let graph: Vec<usize> = sorted_tuples.iter().map(|(x, _)| *x).collect();
    let projection = ContinuousMap {
        source: total.clone(),
        target: base.clone(),
        graph,
    };
    // sections: products of sections, one from each factor
    let mut sections = BTreeSet::new();
    let mut choices: Vec<Vec<&PointSet>> = vec![Vec::new()];
    for f in factors {
        let mut next = Vec::new();
        for partial in &choices {
            for s in f.sections() {
                let mut c = partial.clone();
                c.push(s);
                next.push(c);
            }
        }
        choices = next;
    }
    for choice in choices {
        let mut s = total.empty_set();
        for (j, (_, t)) in sorted_tuples.iter().enumerate() {
            if t.iter().enumerate().all(|(i, &a)| choice[i].contains(a)) {
                s.insert(j);
            }
        }
        if s.count_ones(..) > 0 {
            sections.insert(s);
        }
    }
    let power = EtaleSpace { projection, sections: sections.into_iter().collect() };
    let _ = lookup;
    (power, sorted_tuples)
}

/// Binary fiber product, as an operation on bundles over the same base.
pub fn fiber_product(p: &EtaleSpace, q: &EtaleSpace) -> Result<EtaleSpace> {
    if p.base() != q.base() {
        return Err(Error::Space("fiber product requires the same base".into()));
    }
    Ok(fiber_product_many(&[p, q], p.base()))
}

/// Quotient of an étale space by a fiberwise equivalence on total points,
/// given as a class id per total point. Returns the quotient bundle, the
/// point-to-class map (classes renumbered into quotient point order), and
/// whether the quotient map is open.
///
/// Quotient opens are the sets whose preimage is open; minimal
/// neighborhoods are computed by saturating under preimage-closure.
pub fn quotient_etale(
    space: &EtaleSpace,
    class_of: &[usize],
) -> Result<(EtaleSpace, Vec<usize>, bool)> {
    let total = space.total();
    let n = total.len();
    if class_of.len() != n {
        return Err(Error::Space("class map must cover the total space".into()));
    }
    for a in 0..n {
        for b in 0..n {
            if class_of[a] == class_of[b]
                && space.projection().apply(a) != space.projection().apply(b)
            {
                return Err(Error::Space("equivalence must be fiberwise".into()));
            }
        }
    }
    // name classes by their least member's name, keep deterministic order
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (a, &c) in class_of.iter().enumerate() {
        members.entry(c).or_default().push(a);
    }
    let mut named: Vec<(String, Vec<usize>)> = members
        .into_values()
        .map(|ms| (format!("[{}]", total.point_name(ms[0])), ms))
        .collect();
    named.sort();
    let q_names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    let class_members: Vec<Vec<usize>> = named.iter().map(|(_, m)| m.clone()).collect();
    let mut point_class = vec![0usize; n];
    for (q, ms) in class_members.iter().enumerate() {
        for &a in ms {
            point_class[a] = q;
        }
    }
    let q_count = q_names.len();
    // minimal neighborhood of a class: saturate {class} under
    // "add min-neighborhoods of all preimage points"
    let mut q_nbhds = Vec::with_capacity(q_count);
    for q in 0..q_count {
        let mut quotient_set = pset(q_count, [q]);
        loop {
            let mut preimage = total.empty_set();
            for (a, &c) in point_class.iter().enumerate() {
                if quotient_set.contains(c) {
                    preimage.insert(a);
                }
            }
            let mut grown = preimage.clone();
            for a in preimage.ones() {
                grown.union_with(total.min_nbhd(a));
            }
            let next = {
                let mut s = pset(q_count, []);
                for a in grown.ones() {
                    s.insert(point_class[a]);
                }
                s
            };
            if next == quotient_set {
                break;
            }
            quotient_set = next;
        }
        q_nbhds.push(quotient_set);
    }
    let q_total = Arc::new(FinSpace::from_min_nbhds(q_names, q_nbhds)?);
    let graph: Vec<usize> = class_members
        .iter()
        .map(|ms| space.projection().apply(ms[0]))
        .collect();
    let projection = ContinuousMap::new(q_total.clone(), space.base().clone(), graph)?;
    let quotient = EtaleSpace::from_projection(projection)?;
    // openness of the quotient map: images of minimal neighborhoods open
    let open = (0..n).all(|a| {
        let image = {
            let mut s = quotient.total().empty_set();
            for b in total.min_nbhd(a).ones() {
                s.insert(point_class[b]);
            }
            s
        };
        quotient.total().is_open(&image)
    });
    Ok((quotient, point_class, open))
}

/// A tree code denoting a Borel set built from opens by countable unions of
/// differences. Leaves reference open sets by their point names.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum BorelCode {
    Open(Vec<String>),
    Union(Vec<BorelCode>),
    Diff(Box<BorelCode>, Box<BorelCode>),
}

impl BorelCode {
    /// Syntactic rank: leaves are 1; a difference steps above its sides; a
    /// union stays at the maximum of its children.
    pub fn rank(&self) -> u32 {
        match self {
            BorelCode::Open(_) => 1,
            BorelCode::Union(cs) => cs.iter().map(|c| c.rank()).max().unwrap_or(1),
            BorelCode::Diff(l, r) => l.rank().max(r.rank()) + 1,
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            BorelCode::Open(_) => 1,
            BorelCode::Union(cs) => cs.iter().map(|c| c.leaf_count()).sum(),
            BorelCode::Diff(l, r) => l.leaf_count() + r.leaf_count(),
        }
    }
}

/// Evaluates a Borel code over a space. Leaf references must name existing
/// points and denote open sets.
pub fn realize_borel(space: &FinSpace, code: &BorelCode) -> Result<PointSet> {
    match code {
        BorelCode::Open(names) => {
            let set = space.set_of_names(names)?;
            if !space.is_open(&set) {
                return Err(Error::Space(format!(
                    "borel leaf {:?} does not denote an open set",
                    names
                )));
            }
            Ok(set)
        }
        BorelCode::Union(cs) => {
            let mut r = space.empty_set();
            for c in cs {
                r.union_with(&realize_borel(space, c)?);
            }
            Ok(r)
        }
        BorelCode::Diff(l, r) => {
            let a = realize_borel(space, l)?;
            let b = realize_borel(space, r)?;
            Ok(ps_diff(&a, &b))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn sierpinski_specialization() {
        let s = FinSpace::sierpinski();
        let zero = s.point_index("0").unwrap();
        let one = s.point_index("1").unwrap();
        assert!(s.specializes(zero, one));
        assert!(s.specializes(one, one));
        assert!(!s.specializes(one, zero));
        assert!(s.is_t0());
    }

    #[test]
    fn discrete_and_indiscrete_specialization() {
        let d = FinSpace::discrete(names(&["a", "b"])).unwrap();
        assert_eq!(d.specialization_preorder(), vec![(0, 0), (1, 1)]);
        let i = FinSpace::indiscrete(names(&["a", "b"])).unwrap();
        assert_eq!(i.specialization_preorder(), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert!(!i.is_t0());
    }

    #[test]
    fn closure_properties_of_generated_opens() {
        // opens of a generated space are closed under union/intersection and
        // contain the empty and full sets
        let space = FinSpace::generate(
            names(&["a", "b", "c"]),
            &[names(&["a", "b"]), names(&["b", "c"])],
        )
        .unwrap();
        let opens = space.all_opens();
        assert!(opens.contains(&space.empty_set()));
        assert!(opens.contains(&space.full_set()));
        for u in &opens {
            for v in &opens {
                assert!(opens.contains(&ps_union(u, v)));
                assert!(opens.contains(&ps_inter(u, v)));
            }
        }
    }

    #[test]
    fn min_dense_open_examples() {
        let s = FinSpace::sierpinski();
        let one = s.point_index("1").unwrap();
        assert_eq!(s.min_dense_open(), s.set_of([one]));

        let d = FinSpace::discrete(names(&["a", "b", "c"])).unwrap();
        assert_eq!(d.min_dense_open(), d.full_set());

        let e = FinSpace::empty();
        assert_eq!(e.min_dense_open(), e.empty_set());
    }

    #[test]
    fn min_dense_open_is_least_dense_open() {
        // oracle: enumerate every dense open set and intersect
        for space in small_spaces() {
            let mdo = space.min_dense_open();
            assert!(space.is_open(&mdo));
            if !space.is_empty() {
                assert!(space.is_dense(&mdo));
            }
            let mut expected = space.full_set();
            for u in space.all_opens() {
                if space.is_dense(&u) {
                    expected.intersect_with(&u);
                }
            }
            assert_eq!(mdo, expected, "space {:?}", space.point_names());
        }
    }

    /// Oracle: meager = contained in a finite union of nowhere dense sets.
    /// In a finite space it suffices to test the set itself split into
    /// singletons, each checked nowhere dense.
    fn meager_oracle(space: &FinSpace, set: &PointSet) -> bool {
        set.ones().all(|x| space.is_nowhere_dense(&space.set_of([x])))
    }

    fn small_spaces() -> Vec<FinSpace> {
        let mut spaces = vec![
            FinSpace::empty(),
            FinSpace::sierpinski(),
            FinSpace::discrete(names(&["a", "b", "c"])).unwrap(),
            FinSpace::indiscrete(names(&["a", "b", "c"])).unwrap(),
            FinSpace::generate(
                names(&["a", "b", "c", "d"]),
                &[names(&["a", "b"]), names(&["b", "c"]), names(&["c"])],
            )
            .unwrap(),
        ];
        // every topology on 3 points, via brute-force family enumeration
        let pts = names(&["x", "y", "z"]);
        for mask in 0u32..256 {
            let all: Vec<Vec<String>> = (0..8u32)
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| {
                    (0..3).filter(|i| b & (1 << i) != 0).map(|i| pts[i].clone()).collect()
                })
                .collect();
            if let Ok(space) = FinSpace::generate(pts.clone(), &all) {
                spaces.push(space);
            }
        }
        spaces
    }

    #[test]
    fn meager_matches_nowhere_dense_union_oracle() {
        for space in small_spaces() {
            let n = space.len();
            for mask in 0u32..(1 << n) {
                let set = pset(n, (0..n).filter(|i| mask & (1 << i) != 0));
                assert_eq!(
                    space.is_meager(&set),
                    meager_oracle(&space, &set),
                    "space {:?} set {:?}",
                    space.point_names(),
                    space.names_of(&set)
                );
            }
        }
    }

    #[test]
    fn sierpinski_meager_sets() {
        let s = FinSpace::sierpinski();
        let zero = s.point_index("0").unwrap();
        let one = s.point_index("1").unwrap();
        assert!(s.is_meager(&s.set_of([zero])));
        assert!(!s.is_meager(&s.set_of([one])));
        assert!(s.is_meager(&s.empty_set()));
    }

    #[test]
    fn nonempty_opens_are_nonmeager() {
        for space in small_spaces() {
            for u in space.all_opens() {
                if u.count_ones(..) > 0 {
                    assert!(!space.is_meager(&u));
                }
            }
        }
    }

    #[test]
    fn identity_map_is_etale() {
        let s = Arc::new(FinSpace::sierpinski());
        let id = ContinuousMap::identity(s.clone());
        match is_etale(&id) {
            EtaleCheck::Etale(sections) => {
                let mut cover = s.empty_set();
                for sec in sections {
                    cover.union_with(&sec);
                }
                assert_eq!(cover, s.full_set());
            }
            EtaleCheck::NotEtale { .. } => panic!("identity must be etale"),
        }
    }

    #[test]
    fn discrete_two_to_point_is_etale() {
        let total = Arc::new(FinSpace::discrete(names(&["a", "b"])).unwrap());
        let base = Arc::new(FinSpace::discrete(names(&["*"])).unwrap());
        let p = ContinuousMap::new(total.clone(), base, vec![0, 0]).unwrap();
        match is_etale(&p) {
            EtaleCheck::Etale(sections) => {
                assert_eq!(sections.len(), 2);
                for s in sections {
                    assert_eq!(s.count_ones(..), 1);
                }
            }
            EtaleCheck::NotEtale { .. } => panic!("discrete cover must be etale"),
        }
    }

    #[test]
    fn sierpinski_to_point_is_not_etale() {
        // oracle: every open set containing "0" is the full space, on which
        // the map to a point is not injective
        let total = Arc::new(FinSpace::sierpinski());
        let base = Arc::new(FinSpace::discrete(names(&["*"])).unwrap());
        let p = ContinuousMap::new(total.clone(), base, vec![0, 0]).unwrap();
        for u in total.all_opens() {
            if u.contains(total.point_index("0").unwrap()) && u.count_ones(..) == 1 {
                panic!("oracle violated: {{0}} should not be open");
            }
        }
        match is_etale(&p) {
            EtaleCheck::Etale(_) => panic!("should not be etale"),
            EtaleCheck::NotEtale { witness } => {
                assert_eq!(total.point_name(witness), "0");
            }
        }
    }

    /// A copy of the base as a trivial bundle: `a` over `0`, `b` over `1`,
    /// with the total topology mirroring Sierpinski.
    fn sierpinski_line() -> EtaleSpace {
        let total =
            Arc::new(FinSpace::generate(names(&["a", "b"]), &[names(&["b"])]).unwrap());
        let base = Arc::new(FinSpace::sierpinski());
        let p = ContinuousMap::new(total, base, vec![0, 1]).unwrap();
        EtaleSpace::from_projection(p).unwrap()
    }

    #[test]
    fn fiber_power_zero_is_base() {
        let bundle = sierpinski_line();
        let base = bundle.base().clone();
        let p0 = fiber_power(&bundle, 0);
        assert_eq!(p0.total().point_names(), base.point_names());
        assert_eq!(p0.base().point_names(), base.point_names());
    }

    #[test]
    fn fiber_square_of_two_point_discrete_fiber() {
        // oracle: enumerate pairs by hand
        let total = Arc::new(FinSpace::discrete(names(&["a", "b"])).unwrap());
        let base = Arc::new(FinSpace::discrete(names(&["*"])).unwrap());
        let p = ContinuousMap::new(total, base, vec![0, 0]).unwrap();
        let bundle = EtaleSpace::from_projection(p).unwrap();
        let sq = fiber_power(&bundle, 2);
        assert_eq!(sq.total().len(), 4);
        assert_eq!(
            sq.total().point_names(),
            &["(*|a,a)", "(*|a,b)", "(*|b,a)", "(*|b,b)"]
        );
        // discrete fiber: all singletons open
        for i in 0..4 {
            assert_eq!(sq.total().min_nbhd(i).count_ones(..), 1);
        }
    }

    #[test]
    fn trivial_pullback_power_one_is_total() {
        let bundle = sierpinski_line();
        let p1 = fiber_power(&bundle, 1);
        assert_eq!(p1.total().len(), bundle.total().len());
    }

    #[test]
    fn fibers_are_discrete_in_etale_spaces() {
        // a0 over 0; a1, b0 over 1; the section through a0 is {a0, a1}
        let total = Arc::new(
            FinSpace::generate(
                names(&["a0", "a1", "b0"]),
                &[names(&["a0", "a1"]), names(&["a1"]), names(&["b0"])],
            )
            .unwrap(),
        );
        let base = Arc::new(FinSpace::sierpinski());
        let p = ContinuousMap::new(total.clone(), base, vec![0, 1, 1]).unwrap();
        if let EtaleCheck::Etale(_) = is_etale(&p) {
            for x in 0..p.target().len() {
                let fiber = {
                    let mut f = total.empty_set();
                    for a in 0..total.len() {
                        if p.apply(a) == x {
                            f.insert(a);
                        }
                    }
                    f
                };
                for a in fiber.ones() {
                    // singleton is the trace of an open on the fiber
                    let trace = ps_inter(total.min_nbhd(a), &fiber);
                    assert_eq!(trace, total.set_of([a]));
                }
            }
        } else {
            panic!("expected etale bundle");
        }
    }

    #[test]
    fn realize_borel_examples() {
        let s = FinSpace::sierpinski();
        let u = BorelCode::Open(vec!["1".into()]);
        assert_eq!(realize_borel(&s, &u).unwrap(), s.set_of([1]));
        assert_eq!(u.rank(), 1);

        let full = BorelCode::Open(vec!["0".into(), "1".into()]);
        let diff_full_empty =
            BorelCode::Diff(Box::new(full.clone()), Box::new(BorelCode::Open(vec![])));
        assert_eq!(realize_borel(&s, &diff_full_empty).unwrap(), s.full_set());

        let c = BorelCode::Union(vec![
            BorelCode::Diff(Box::new(u.clone()), Box::new(BorelCode::Open(vec![]))),
            BorelCode::Diff(Box::new(full.clone()), Box::new(u.clone())),
        ]);
        assert_eq!(realize_borel(&s, &c).unwrap(), s.full_set());
        assert_eq!(c.rank(), 2);
    }

    #[test]
    fn realize_borel_errors() {
        let s = FinSpace::sierpinski();
        let dangling = BorelCode::Open(vec!["zz".into()]);
        assert!(realize_borel(&s, &dangling).is_err());
        let not_open = BorelCode::Open(vec!["0".into()]);
        assert!(realize_borel(&s, &not_open).is_err());
    }

    #[test]
    fn realize_borel_union_idempotent() {
        let s = FinSpace::generate(
            names(&["a", "b", "c"]),
            &[names(&["a"]), names(&["a", "b"])],
        )
        .unwrap();
        let c = BorelCode::Diff(
            Box::new(BorelCode::Open(names(&["a", "b"]))),
            Box::new(BorelCode::Open(names(&["a"]))),
        );
        let u = BorelCode::Union(vec![c.clone(), c.clone()]);
        assert_eq!(realize_borel(&s, &u).unwrap(), realize_borel(&s, &c).unwrap());
    }

    #[test]
    fn realize_borel_demorgan_sanity() {
        // complement of X \ A equals A for realized A ⊆ X
        let s = FinSpace::sierpinski();
        let a = BorelCode::Open(vec!["1".into()]);
        let x = BorelCode::Open(vec!["0".into(), "1".into()]);
        let diff = BorelCode::Diff(Box::new(x), Box::new(a.clone()));
        let realized_diff = realize_borel(&s, &diff).unwrap();
        let complement = ps_diff(&s.full_set(), &realized_diff);
        assert_eq!(complement, realize_borel(&s, &a).unwrap());
    }

    #[test]
    fn t0_flag_matches_antisymmetry() {
        for space in small_spaces() {
            let antisym = (0..space.len()).all(|x| {
                (0..space.len()).all(|y| {
                    x == y || !(space.specializes(x, y) && space.specializes(y, x))
                })
            });
            assert_eq!(space.is_t0(), antisym);
        }
    }

    #[test]
    fn preorder_is_reflexive_transitive() {
        for space in small_spaces() {
            let n = space.len();
            for x in 0..n {
                assert!(space.specializes(x, x));
                for y in 0..n {
                    for z in 0..n {
                        if space.specializes(x, y) && space.specializes(y, z) {
                            assert!(space.specializes(x, z));
                        }
                    }
                }
            }
        }
    }
}
