//! Fragments and Morleyization.
//!
//! A fragment is a finite set of formulas containing all atomic formulas of
//! the signature over a variable budget and closed under subformulas and
//! variable substitution. Members are stored in canonical-key form, so
//! closure under renaming is implicit and closure under substitution
//! reduces to closure under variable merging.
//!
//! Morleyization expands the signature by a defined relation symbol per
//! member and emits the Π₂ theory stating that the expansion is by
//! definitions. The `economic` mode reuses the original symbol for atomic
//! members (an expansion by definitions that happens to be the identity),
//! which keeps Morleyized signatures small enough for exhaustive model
//! enumeration; the default mode introduces a fresh symbol for every
//! member.

use std::collections::{BTreeMap, BTreeSet};

use super::{
    canonical_key, classify, print_formula, substitute, Formula, Signature, Term, Var,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct FragmentLimits {
    pub max_free_vars: usize,
    pub max_members: usize,
}

impl Default for FragmentLimits {
    fn default() -> Self {
        FragmentLimits { max_free_vars: 8, max_members: 4000 }
    }
}

/// A finite fragment over a signature. Members are canonical keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fragment {
    sig: Signature,
    members: Vec<Formula>,
    index: BTreeMap<Formula, usize>,
}

impl Fragment {
    /// Closes the seeds, together with all atomic formulas (including
    /// equalities) of the signature, under subformulas and variable
    /// merging.
    pub fn generate(sig: &Signature, seeds: &[Formula], limits: FragmentLimits) -> Result<Fragment> {
        let mut pending: Vec<Formula> = Vec::new();
        for (rel, args) in sig.relations() {
            let vars: Vec<Var> = args
                .iter()
                .enumerate()
                .map(|(i, s)| Var::new(format!("__c{i:02}"), s.clone()))
                .collect();
            pending.push(Formula::Atomic(rel.clone(), vars.into_iter().map(Term::Var).collect()));
        }
        for sort in sig.sorts() {
            pending.push(Formula::Eq(Term::var("__c00", sort), Term::var("__c01", sort)));
        }
        for seed in seeds {
            seed.well_sorted(sig)?;
            pending.push(seed.clone());
        }

        let mut members: BTreeSet<Formula> = BTreeSet::new();
        while let Some(f) = pending.pop() {
            let key = canonical_key(&f);
            if key.free_vars().len() > limits.max_free_vars {
                return Err(Error::Fragment(format!(
                    "member exceeds free-variable budget: {}",
                    print_formula(&key)
                )));
            }
            if !members.insert(key.clone()) {
                continue;
            }
            if members.len() > limits.max_members {
                return Err(Error::Fragment(format!(
                    "fragment exceeds {} members",
                    limits.max_members
                )));
            }
            // subformulas
            match &key {
                Formula::And(fs) | Formula::Or(fs) => pending.extend(fs.iter().cloned()),
                Formula::Not(g) => pending.push((**g).clone()),
                Formula::Exists(_, g) => pending.push((**g).clone()),
                Formula::Atomic(..) | Formula::Eq(..) => {}
            }
            // variable mergings: every sort-respecting identification of
            // free variables yields a substitution instance
            let free = key.free_vars();
            for pattern in merge_patterns(&free) {
                let sub: BTreeMap<String, Term> = free
                    .iter()
                    .zip(&pattern)
                    .map(|(v, tgt)| (v.name.clone(), Term::Var(tgt.clone())))
                    .collect();
                let inst = substitute(&key, &sub, sig)?;
                pending.push(inst);
            }
        }

        let members: Vec<Formula> = members.into_iter().collect();
        let index = members.iter().cloned().enumerate().map(|(i, f)| (f, i)).collect();
        Ok(Fragment { sig: sig.clone(), members, index })
    }

    /// Fragment of all atomic formulas only.
    pub fn atomics(sig: &Signature) -> Result<Fragment> {
        Fragment::generate(sig, &[], FragmentLimits::default())
    }

    /// Fragment of all atomic formulas and their negations (including
    /// inequality), the expansion that recovers the traditional hierarchy.
    pub fn with_negated_atomics(sig: &Signature) -> Result<Fragment> {
        let mut seeds = Vec::new();
        for (rel, args) in sig.relations() {
            let vars: Vec<Term> = args
                .iter()
                .enumerate()
                .map(|(i, s)| Term::var(format!("__c{i:02}"), s.clone()))
                .collect();
            seeds.push(Formula::not(Formula::Atomic(rel.clone(), vars)));
        }
        for sort in sig.sorts() {
            seeds.push(Formula::not(Formula::Eq(
                Term::var("__c00", sort),
                Term::var("__c01", sort),
            )));
        }
        Fragment::generate(sig, &seeds, FragmentLimits::default())
    }

    /// Fragment with only inequality Morleyized on top of the atomics.
    pub fn with_negated_equality(sig: &Signature) -> Result<Fragment> {
        let mut seeds = Vec::new();
        for sort in sig.sorts() {
            seeds.push(Formula::not(Formula::Eq(
                Term::var("__c00", sort),
                Term::var("__c01", sort),
            )));
        }
        Fragment::generate(sig, &seeds, FragmentLimits::default())
    }

    pub fn signature(&self) -> &Signature {
        &self.sig
    }

    pub fn members(&self) -> &[Formula] {
        &self.members
    }

    pub fn contains(&self, f: &Formula) -> bool {
        self.index.contains_key(&canonical_key(f))
    }

    /// Verifies the closure invariants directly.
    pub fn validate(&self) -> Result<()> {
        for (rel, args) in self.sig.relations() {
            let vars: Vec<Term> = args
                .iter()
                .enumerate()
                .map(|(i, s)| Term::var(format!("v{i}"), s.clone()))
                .collect();
            if !self.contains(&Formula::Atomic(rel.clone(), vars)) {
                return Err(Error::Fragment(format!("missing atomic member for {rel}")));
            }
        }
        for f in &self.members {
            let subs: Vec<Formula> = match f {
                Formula::And(fs) | Formula::Or(fs) => fs.clone(),
                Formula::Not(g) => vec![(**g).clone()],
                Formula::Exists(_, g) => vec![(**g).clone()],
                _ => Vec::new(),
            };
            for s in subs {
                if !self.contains(&s) {
                    return Err(Error::Fragment(format!(
                        "not closed under subformulas at {}",
                        print_formula(f)
                    )));
                }
            }
            let free = f.free_vars();
            for pattern in merge_patterns(&free) {
                let sub: BTreeMap<String, Term> = free
                    .iter()
                    .zip(&pattern)
                    .map(|(v, tgt)| (v.name.clone(), Term::Var(tgt.clone())))
                    .collect();
                let inst = substitute(f, &sub, &self.sig)?;
                if !self.contains(&inst) {
                    return Err(Error::Fragment(format!(
                        "not closed under substitution at {}",
                        print_formula(f)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Full Morleyization: a fresh symbol for every member.
    pub fn morleyize(&self) -> Result<Morleyization> {
        self.morleyize_with(false)
    }

    /// Morleyization reusing original symbols for atomic members.
    pub fn morleyize_economic(&self) -> Result<Morleyization> {
        self.morleyize_with(true)
    }

    fn morleyize_with(&self, dedup_atomic: bool) -> Result<Morleyization> {
        self.validate()?;
        let mut symbol_of: BTreeMap<Formula, String> = BTreeMap::new();
        let mut member_of: BTreeMap<String, Formula> = BTreeMap::new();
        let mut decls: Vec<(String, Vec<String>)> = Vec::new();
        let mut taken: BTreeSet<String> = self.sig.relations().keys().cloned().collect();
        taken.extend(self.sig.functions().keys().cloned());

        for member in &self.members {
            if dedup_atomic && is_atomic_like(member) {
                continue;
            }
            let base = symbol_name(member);
            let name = {
                let mut candidate = base.clone();
                let mut k = 1;
                while taken.contains(&candidate) {
                    candidate = format!("{base}_{k}");
                    k += 1;
                }
                candidate
            };
            taken.insert(name.clone());
            let args: Vec<String> = member.free_vars().iter().map(|v| v.sort.clone()).collect();
            decls.push((name.clone(), args));
            symbol_of.insert(member.clone(), name.clone());
            member_of.insert(name, member.clone());
        }

        let expanded_sig = self.sig.with_relations(decls)?;
        let morley = Morleyization {
            base_sig: self.sig.clone(),
            expanded_sig,
            axioms: Vec::new(),
            symbol_of,
            member_of,
        };
        let axioms = morley.build_axioms(self, dedup_atomic)?;
        Ok(Morleyization { axioms, ..morley })
    }
}

fn is_atomic_like(f: &Formula) -> bool {
    matches!(f, Formula::Atomic(..) | Formula::Eq(..))
        || matches!(f, Formula::And(fs) if fs.is_empty())
        || matches!(f, Formula::Or(fs) if fs.is_empty())
}

/// All sort-respecting ways to identify the given variables, as target
/// assignments; excludes the identity.
fn merge_patterns(vars: &[Var]) -> Vec<Vec<Var>> {
    let mut out = Vec::new();
    let n = vars.len();
    if n < 2 {
        return out;
    }
    let mut assignment: Vec<usize> = vec![0; n];
    loop {
        // restricted-growth constraint makes each assignment canonical
        let ok = {
            let mut max_seen = 0usize;
            let mut valid = true;
            for (i, &a) in assignment.iter().enumerate() {
                if a > max_seen {
                    valid = false;
                    break;
                }
                if a == max_seen {
                    max_seen += 1;
                }
                if vars[a].sort != vars[i].sort {
                    valid = false;
                    break;
                }
            }
            valid
        };
        if ok {
            let targets: Vec<Var> = assignment.iter().map(|&a| vars[a].clone()).collect();
            if targets.iter().zip(vars).any(|(t, v)| t != v) {
                out.push(targets);
            }
        }
        // next assignment
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if assignment[i] < n - 1 {
                assignment[i] += 1;
                for a in assignment.iter_mut().skip(i + 1) {
                    *a = 0;
                }
                break;
            }
        }
    }
}

fn symbol_name(member: &Formula) -> String {
    // print with readable variables for the symbol name
    let free = member.free_vars();
    let sub: BTreeMap<String, String> =
        free.iter().enumerate().map(|(i, v)| (v.name.clone(), format!("x{i}"))).collect();
    let text = print_formula(&rename_vars(member, &sub));
    let mut name = String::from("R_");
    for c in text.chars() {
        match c {
            '=' => name.push_str("eq"),
            c if c.is_ascii_alphanumeric() => name.push(c),
            _ => {
                if !name.ends_with('_') {
                    name.push('_');
                }
            }
        }
    }
    let name = name.trim_end_matches('_').to_string();
    if name.len() > 48 {
        name[..48].to_string()
    } else {
        name
    }
}

fn rename_vars(f: &Formula, map: &BTreeMap<String, String>) -> Formula {
    fn term(t: &Term, map: &BTreeMap<String, String>) -> Term {
        match t {
            Term::Var(v) => Term::Var(Var::new(
                map.get(&v.name).cloned().unwrap_or_else(|| v.name.clone()),
                v.sort.clone(),
            )),
            Term::App(g, args) => Term::App(g.clone(), args.iter().map(|a| term(a, map)).collect()),
        }
    }
    match f {
        Formula::Atomic(r, args) => {
            Formula::Atomic(r.clone(), args.iter().map(|t| term(t, map)).collect())
        }
        Formula::Eq(a, b) => Formula::Eq(term(a, map), term(b, map)),
        Formula::And(fs) => Formula::And(fs.iter().map(|g| rename_vars(g, map)).collect()),
        Formula::Or(fs) => Formula::Or(fs.iter().map(|g| rename_vars(g, map)).collect()),
        Formula::Not(g) => Formula::not(rename_vars(g, map)),
        Formula::Exists(v, g) => {
            let mut inner = map.clone();
            inner.remove(&v.name);
            Formula::exists(v.clone(), rename_vars(g, &inner))
        }
    }
}

/// The result of Morleyizing a fragment: the expanded signature, the Π₂
/// theory, and translations in both directions.
#[derive(Clone, Debug)]
pub struct Morleyization {
    pub base_sig: Signature,
    pub expanded_sig: Signature,
    /// `(schema tag, sentence)` pairs; every sentence is Π₂.
    pub axioms: Vec<(String, Formula)>,
    symbol_of: BTreeMap<Formula, String>,
    member_of: BTreeMap<String, Formula>,
}

impl Morleyization {
    fn build_axioms(&self, fragment: &Fragment, dedup_atomic: bool) -> Result<Vec<(String, Formula)>> {
        let mut axioms = Vec::new();
        let member_keys: BTreeSet<&Formula> = fragment.members().iter().collect();
        for member in fragment.members() {
            let free = member.free_vars();
            // user-facing variables for the axiom statement
            let vars: Vec<Var> =
                free.iter().enumerate().map(|(i, v)| Var::new(format!("x{i}"), v.sort.clone())).collect();
            let sub: BTreeMap<String, Term> = free
                .iter()
                .zip(&vars)
                .map(|(c, x)| (c.name.clone(), Term::Var(x.clone())))
                .collect();
            let instance = substitute(member, &sub, &self.base_sig)?;
            let lhs = self.translate_member_instance(member, &vars);
            match member {
                Formula::Atomic(..) | Formula::Eq(..) => {
                    if !dedup_atomic {
                        axioms.push((
                            "atomic".to_string(),
                            Formula::forall_iff(&vars, lhs, instance),
                        ));
                    }
                }
                Formula::And(fs) if fs.is_empty() => {
                    if !dedup_atomic {
                        axioms.push(("top".to_string(), Formula::forall_iff(&vars, lhs, Formula::top())));
                    }
                }
                Formula::Or(fs) if fs.is_empty() => {
                    if !dedup_atomic {
                        axioms.push(("top".to_string(), Formula::forall_iff(&vars, lhs, Formula::bot())));
                    }
                }
                Formula::And(fs) => {
                    let rhs = Formula::And(
                        fs.iter()
                            .map(|g| self.translate_shallow(&substitute(g, &sub, &self.base_sig)?))
                            .collect::<Result<_>>()?,
                    );
                    axioms.push(("and".to_string(), Formula::forall_iff(&vars, lhs, rhs)));
                }
                Formula::Or(fs) => {
                    let rhs = Formula::Or(
                        fs.iter()
                            .map(|g| self.translate_shallow(&substitute(g, &sub, &self.base_sig)?))
                            .collect::<Result<_>>()?,
                    );
                    axioms.push(("or".to_string(), Formula::forall_iff(&vars, lhs, rhs)));
                }
                Formula::Exists(bound, body) => {
                    let y = Var::new("y", bound.sort.clone());
                    let mut body_sub = sub.clone();
                    body_sub.insert(bound.name.clone(), Term::Var(y.clone()));
                    let body_inst = substitute(body, &body_sub, &self.base_sig)?;
                    let rhs = Formula::exists(y, self.translate_shallow(&body_inst)?);
                    axioms.push(("exists".to_string(), Formula::forall_iff(&vars, lhs, rhs)));
                }
                Formula::Not(inner) => {
                    let inner_key = canonical_key(inner);
                    if member_keys.contains(&inner_key) {
                        let inner_inst = substitute(
                            &rename_to_match(inner, member),
                            &sub,
                            &self.base_sig,
                        )?;
                        let pos = self.translate_shallow(&inner_inst)?;
                        axioms.push((
                            "neg-contradiction".to_string(),
                            Formula::forall_implies(
                                &vars,
                                Formula::And(vec![pos.clone(), lhs.clone()]),
                                Formula::bot(),
                            ),
                        ));
                        axioms.push((
                            "neg-excluded-middle".to_string(),
                            Formula::forall_implies(
                                &vars,
                                Formula::top(),
                                Formula::Or(vec![pos, lhs]),
                            ),
                        ));
                    }
                }
            }
        }
        for (_, ax) in &axioms {
            debug_assert!(classify(ax).pi <= 2, "axiom not Π2: {}", print_formula(ax));
        }
        Ok(axioms)
    }

    /// The defined atom for a member, applied to the given variables; for
    /// aliased members this is the member instance itself.
    fn translate_member_instance(&self, member: &Formula, vars: &[Var]) -> Formula {
        match self.symbol_of.get(member) {
            Some(sym) => {
                Formula::Atomic(sym.clone(), vars.iter().cloned().map(Term::Var).collect())
            }
            None => {
                let free = member.free_vars();
                let sub: BTreeMap<String, Term> = free
                    .iter()
                    .zip(vars)
                    .map(|(c, x)| (c.name.clone(), Term::Var(x.clone())))
                    .collect();
                substitute(member, &sub, &self.base_sig).expect("member instance is well-sorted")
            }
        }
    }

    /// Translates a formula whose canonical key is a fragment member.
    fn translate_shallow(&self, f: &Formula) -> Result<Formula> {
        let key = canonical_key(f);
        match self.symbol_of.get(&key) {
            Some(sym) => {
                let args = f.free_vars().into_iter().map(Term::Var).collect();
                Ok(Formula::Atomic(sym.clone(), args))
            }
            None if is_atomic_like(&key) => Ok(f.clone()),
            None => Err(Error::Fragment(format!(
                "formula is not a fragment member: {}",
                print_formula(f)
            ))),
        }
    }

    /// Translates a formula that is Σ_α over the fragment into a Σ_α
    /// formula over the expanded signature: maximal subformulas that are
    /// fragment members become defined atoms, and the remaining structure
    /// is preserved.
    pub fn translate_to_expanded(&self, f: &Formula) -> Result<Formula> {
        let key = canonical_key(f);
        if let Some(sym) = self.symbol_of.get(&key) {
            let args = f.free_vars().into_iter().map(Term::Var).collect();
            return Ok(Formula::Atomic(sym.clone(), args));
        }
        match f {
            Formula::Atomic(..) | Formula::Eq(..) => Ok(f.clone()),
            Formula::And(fs) => Ok(Formula::And(
                fs.iter().map(|g| self.translate_to_expanded(g)).collect::<Result<_>>()?,
            )),
            Formula::Or(fs) => Ok(Formula::Or(
                fs.iter().map(|g| self.translate_to_expanded(g)).collect::<Result<_>>()?,
            )),
            Formula::Not(g) => Ok(Formula::not(self.translate_to_expanded(g)?)),
            Formula::Exists(v, g) => {
                Ok(Formula::exists(v.clone(), self.translate_to_expanded(g)?))
            }
        }
    }

    /// Inverse translation: expands defined atoms back into their members.
    pub fn translate_from_expanded(&self, f: &Formula) -> Result<Formula> {
        match f {
            Formula::Atomic(rel, args) => match self.member_of.get(rel) {
                Some(member) => {
                    let free = member.free_vars();
                    if free.len() != args.len() {
                        return Err(Error::Fragment(format!("defined atom arity mismatch at {rel}")));
                    }
                    let sub: BTreeMap<String, Term> = free
                        .iter()
                        .zip(args)
                        .map(|(c, t)| (c.name.clone(), t.clone()))
                        .collect();
                    substitute(member, &sub, &self.base_sig)
                }
                None => Ok(f.clone()),
            },
            Formula::Eq(..) => Ok(f.clone()),
            Formula::And(fs) => Ok(Formula::And(
                fs.iter().map(|g| self.translate_from_expanded(g)).collect::<Result<_>>()?,
            )),
            Formula::Or(fs) => Ok(Formula::Or(
                fs.iter().map(|g| self.translate_from_expanded(g)).collect::<Result<_>>()?,
            )),
            Formula::Not(g) => Ok(Formula::not(self.translate_from_expanded(g)?)),
            Formula::Exists(v, g) => {
                Ok(Formula::exists(v.clone(), self.translate_from_expanded(g)?))
            }
        }
    }

    /// Members that received a defined symbol, with those symbols.
    pub fn defined_symbols(&self) -> impl Iterator<Item = (&Formula, &String)> {
        self.symbol_of.iter()
    }

    pub fn member_for_symbol(&self, symbol: &str) -> Option<&Formula> {
        self.member_of.get(symbol)
    }
}

/// Renames the direct subformula of a `Not` member so its free variables
/// line up with the enclosing member's canonical ones (they already do by
/// construction of canonical keys; this is the identity kept for clarity).
fn rename_to_match(inner: &Formula, _outer: &Formula) -> Formula {
    inner.clone()
}

#[cfg(test)]
mod tests {
    use super::super::{classify, parse_formula, Formula, Signature, Term};
    use super::*;

    fn sig_p() -> Signature {
        Signature::relational(vec![("P", 1)]).unwrap()
    }

    #[test]
    fn atomics_fragment_contains_instances() {
        let sig = Signature::relational(vec![("R", 2)]).unwrap();
        let f = Fragment::atomics(&sig).unwrap();
        assert!(f.contains(&parse_formula("R(a, b)", &sig).unwrap()));
        assert!(f.contains(&parse_formula("R(a, a)", &sig).unwrap()));
        assert!(f.contains(&parse_formula("a = b", &sig).unwrap()));
        assert!(f.contains(&parse_formula("a = a", &sig).unwrap()));
        assert!(!f.contains(&parse_formula("not(R(a, b))", &sig).unwrap()));
        f.validate().unwrap();
    }

    #[test]
    fn negated_atomics_fragment_closed() {
        let sig = sig_p();
        let f = Fragment::with_negated_atomics(&sig).unwrap();
        assert!(f.contains(&parse_formula("not(P(a))", &sig).unwrap()));
        assert!(f.contains(&parse_formula("not(a = b)", &sig).unwrap()));
        assert!(f.contains(&parse_formula("not(a = a)", &sig).unwrap()));
        f.validate().unwrap();
    }

    #[test]
    fn atomics_only_morleyization_axioms_are_atomic_biconditionals() {
        let sig = sig_p();
        let frag = Fragment::atomics(&sig).unwrap();
        let m = frag.morleyize().unwrap();
        assert!(!m.axioms.is_empty());
        for (tag, ax) in &m.axioms {
            assert_eq!(tag, "atomic");
            assert!(classify(ax).pi <= 2);
        }
    }

    #[test]
    fn negated_atomic_translates_to_defined_atom() {
        let sig = sig_p();
        let frag = Fragment::with_negated_atomics(&sig).unwrap();
        let m = frag.morleyize_economic().unwrap();
        let f = parse_formula("not(P(z))", &sig).unwrap();
        let t = m.translate_to_expanded(&f).unwrap();
        match &t {
            Formula::Atomic(sym, args) => {
                assert!(sym.starts_with("R_not"));
                assert_eq!(args, &vec![Term::var("z", "elem")]);
            }
            other => panic!("expected defined atom, got {other}"),
        }
        assert_eq!(classify(&t).sigma, 1);
        assert_eq!(classify(&f).sigma, 2);
        // and back
        let back = m.translate_from_expanded(&t).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn top_only_fragment_translation_is_inclusion() {
        let sig = Signature::relational(vec![]).unwrap();
        let frag =
            Fragment::generate(&sig, &[Formula::top()], FragmentLimits::default()).unwrap();
        let m = frag.morleyize_economic().unwrap();
        let f = Formula::top();
        assert_eq!(m.translate_to_expanded(&f).unwrap(), f);
        // economic mode defines no symbols for atomic-like members
        assert_eq!(m.defined_symbols().count(), 0);
    }

    #[test]
    fn morleyization_axioms_are_pi2(){
        let sig = sig_p();
        let frag = Fragment::with_negated_atomics(&sig).unwrap();
        for m in [frag.morleyize().unwrap(), frag.morleyize_economic().unwrap()] {
            for (_, ax) in &m.axioms {
                assert!(classify(ax).pi <= 2, "axiom above Π2: {}", print_formula(ax));
                ax.well_sorted(&m.expanded_sig).unwrap();
            }
        }
    }

    #[test]
    fn faithful_mode_defines_symbols_for_atomics_too() {
        let sig = sig_p();
        let frag = Fragment::atomics(&sig).unwrap();
        let m = frag.morleyize().unwrap();
        assert!(m.defined_symbols().count() >= 3); // P(x), x=y, x=x
        let f = parse_formula("P(z)", &sig).unwrap();
        let t = m.translate_to_expanded(&f).unwrap();
        assert!(matches!(&t, Formula::Atomic(sym, _) if sym != "P"));
        assert_eq!(m.translate_from_expanded(&t).unwrap(), f);
    }

    #[test]
    fn rejects_unclosed_fragment() {
        let sig = sig_p();
        let not_p = parse_formula("not(P(a))", &sig).unwrap();
        // hand-build an unclosed fragment: negation without merge instances
        let frag = Fragment {
            sig: sig.clone(),
            members: vec![canonical_key(&not_p)],
            index: [(canonical_key(&not_p), 0)].into(),
        };
        assert!(frag.validate().is_err());
    }

    #[test]
    fn translation_level_drops_for_fragment_members() {
        // a disjunction member keeps Σ1 level after translation even when
        // it mentions negated members
        let sig = sig_p();
        let seed = parse_formula("or(P(a), not(P(a)))", &sig).unwrap();
        let frag = Fragment::generate(&sig, &[seed.clone()], FragmentLimits::default()).unwrap();
        let m = frag.morleyize_economic().unwrap();
        let t = m.translate_to_expanded(&seed).unwrap();
        assert_eq!(classify(&t).sigma, 1, "member itself becomes a defined atom");
    }
}
