//! Multi-sorted first-order syntax: terms, formulas, complexity
//! classification, substitution, normal forms, fragments, and Morleyization.
//!
//! Formulas are built from atomic formulas and equality using finite
//! conjunction, finite disjunction, existential quantification, and
//! negation. Universal quantification and implication are derived forms;
//! the constructors [`Formula::forall`] and [`Formula::implies_sentence`]
//! produce the negation encodings that keep emitted axioms at the intended
//! complexity level.

mod fragment;
mod parse;

pub use fragment::{Fragment, FragmentLimits, Morleyization};
pub use parse::{parse_formula, parse_term};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A sorted variable. Within one formula a name carries a single sort.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Var {
    pub name: String,
    pub sort: String,
}

impl Var {
    pub fn new(name: impl Into<String>, sort: impl Into<String>) -> Self {
        Var { name: name.into(), sort: sort.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Var(Var),
    App(String, Vec<Term>),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formula {
    Atomic(String, Vec<Term>),
    Eq(Term, Term),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Not(Box<Formula>),
    Exists(Var, Box<Formula>),
}

/// A multi-sorted signature. Nullary relations and functions are allowed.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Signature {
    sorts: Vec<String>,
    relations: BTreeMap<String, Vec<String>>,
    functions: BTreeMap<String, (Vec<String>, String)>,
}

const KEYWORDS: &[&str] = &["and", "or", "not", "exists"];

impl Signature {
    pub fn new(
        sorts: Vec<String>,
        relations: Vec<(String, Vec<String>)>,
        functions: Vec<(String, Vec<String>, String)>,
    ) -> Result<Signature> {
        let sort_set: BTreeSet<&String> = sorts.iter().collect();
        if sort_set.len() != sorts.len() {
            return Err(Error::Signature("duplicate sort name".into()));
        }
        let mut rel = BTreeMap::new();
        let mut fun = BTreeMap::new();
        let mut names = BTreeSet::new();
        for (name, args) in relations {
            Signature::check_symbol(&name, &mut names)?;
            for s in &args {
                if !sort_set.contains(s) {
                    return Err(Error::Signature(format!("unknown sort {s:?} in relation {name}")));
                }
            }
            rel.insert(name, args);
        }
        for (name, args, res) in functions {
            Signature::check_symbol(&name, &mut names)?;
            for s in args.iter().chain([&res]) {
                if !sort_set.contains(s) {
                    return Err(Error::Signature(format!("unknown sort {s:?} in function {name}")));
                }
            }
            fun.insert(name, (args, res));
        }
        Ok(Signature { sorts, relations: rel, functions: fun })
    }

    fn check_symbol(name: &str, seen: &mut BTreeSet<String>) -> Result<()> {
        if KEYWORDS.contains(&name) {
            return Err(Error::Signature(format!("symbol name {name:?} is a keyword")));
        }
        if !seen.insert(name.to_string()) {
            return Err(Error::Signature(format!("duplicate symbol name {name:?}")));
        }
        Ok(())
    }

    /// Single-sorted relational signature, sort `"elem"`.
    pub fn relational(relations: Vec<(&str, usize)>) -> Result<Signature> {
        let sort = "elem".to_string();
        Signature::new(
            vec![sort.clone()],
            relations
                .into_iter()
                .map(|(name, arity)| (name.to_string(), vec![sort.clone(); arity]))
                .collect(),
            Vec::new(),
        )
    }

    pub fn sorts(&self) -> &[String] {
        &self.sorts
    }

    pub fn relations(&self) -> &BTreeMap<String, Vec<String>> {
        &self.relations
    }

    pub fn functions(&self) -> &BTreeMap<String, (Vec<String>, String)> {
        &self.functions
    }

    pub fn relation_args(&self, name: &str) -> Result<&[String]> {
        self.relations
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Signature(format!("unknown relation {name:?}")))
    }

    pub fn function_decl(&self, name: &str) -> Result<(&[String], &str)> {
        self.functions
            .get(name)
            .map(|(a, r)| (a.as_slice(), r.as_str()))
            .ok_or_else(|| Error::Signature(format!("unknown function {name:?}")))
    }

    pub fn has_sort(&self, sort: &str) -> bool {
        self.sorts.iter().any(|s| s == sort)
    }

    /// Extends the signature with additional relation symbols.
    pub fn with_relations(&self, extra: Vec<(String, Vec<String>)>) -> Result<Signature> {
        let mut relations: Vec<(String, Vec<String>)> =
            self.relations.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        relations.extend(extra);
        Signature::new(
            self.sorts.clone(),
            relations,
            self.functions.iter().map(|(k, (a, r))| (k.clone(), a.clone(), r.clone())).collect(),
        )
    }
}

/// Sort of a term under a signature, with the ambient variable sorts taken
/// from the term itself.
pub fn term_sort(sig: &Signature, term: &Term) -> Result<String> {
    match term {
        Term::Var(v) => {
            if !sig.has_sort(&v.sort) {
                return Err(Error::Sort(format!("variable {} has unknown sort {}", v.name, v.sort)));
            }
            Ok(v.sort.clone())
        }
        Term::App(f, args) => {
            let (arg_sorts, res) = sig.function_decl(f)?;
            if arg_sorts.len() != args.len() {
                return Err(Error::Sort(format!("function {f} applied to {} arguments", args.len())));
            }
            for (t, expect) in args.iter().zip(arg_sorts) {
                let got = term_sort(sig, t)?;
                if &got != expect {
                    return Err(Error::Sort(format!(
                        "function {f} expects {expect}, got {got} in {t:?}"
                    )));
                }
            }
            Ok(res.to_string())
        }
    }
}

impl Term {
    pub fn var(name: impl Into<String>, sort: impl Into<String>) -> Term {
        Term::Var(Var::new(name, sort))
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a Var>) {
        match self {
            Term::Var(v) => out.push(v),
            Term::App(_, args) => args.iter().for_each(|t| t.collect_vars(out)),
        }
    }
}

impl Formula {
    pub fn top() -> Formula {
        Formula::And(Vec::new())
    }

    pub fn bot() -> Formula {
        Formula::Or(Vec::new())
    }

    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn exists(v: Var, f: Formula) -> Formula {
        Formula::Exists(v, Box::new(f))
    }

    pub fn exists_many(vars: &[Var], f: Formula) -> Formula {
        vars.iter().rev().fold(f, |acc, v| Formula::exists(v.clone(), acc))
    }

    pub fn atom(rel: impl Into<String>, args: Vec<Term>) -> Formula {
        Formula::Atomic(rel.into(), args)
    }

    /// `∀ vars (lhs → rhs)` encoded as `¬∃ vars (lhs ∧ ¬rhs)`, which stays
    /// Π₂ when `lhs` is Σ₁ and `rhs` is Σ₁.
    pub fn forall_implies(vars: &[Var], lhs: Formula, rhs: Formula) -> Formula {
        Formula::not(Formula::exists_many(vars, Formula::And(vec![lhs, Formula::not(rhs)])))
    }

    /// `∀ vars φ` encoded as `¬∃ vars ¬φ`.
    pub fn forall(vars: &[Var], f: Formula) -> Formula {
        Formula::not(Formula::exists_many(vars, Formula::not(f)))
    }

    /// `∀ vars (lhs ↔ rhs)` encoded as `¬∃ vars ((lhs∧¬rhs) ∨ (rhs∧¬lhs))`.
    pub fn forall_iff(vars: &[Var], lhs: Formula, rhs: Formula) -> Formula {
        Formula::not(Formula::exists_many(
            vars,
            Formula::Or(vec![
                Formula::And(vec![lhs.clone(), Formula::not(rhs.clone())]),
                Formula::And(vec![rhs, Formula::not(lhs)]),
            ]),
        ))
    }

    /// Free variables in first-occurrence order.
    pub fn free_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.free_vars_into(&mut Vec::new(), &mut out);
        out
    }

    /// Free variables in canonical (sorted-by-name) order. This is the
    /// argument order used for defined relation symbols.
    pub fn free_vars_sorted(&self) -> Vec<Var> {
        let mut vars = self.free_vars();
        vars.sort();
        vars
    }

    fn free_vars_into(&self, bound: &mut Vec<String>, out: &mut Vec<Var>) {
        match self {
            Formula::Atomic(_, args) => {
                let mut vars = Vec::new();
                args.iter().for_each(|t| t.collect_vars(&mut vars));
                for v in vars {
                    if !bound.contains(&v.name) && !out.contains(v) {
                        out.push(v.clone());
                    }
                }
            }
            Formula::Eq(a, b) => {
                let mut vars = Vec::new();
                a.collect_vars(&mut vars);
                b.collect_vars(&mut vars);
                for v in vars {
                    if !bound.contains(&v.name) && !out.contains(v) {
                        out.push(v.clone());
                    }
                }
            }
            Formula::And(fs) | Formula::Or(fs) => {
                fs.iter().for_each(|f| f.free_vars_into(bound, out));
            }
            Formula::Not(f) => f.free_vars_into(bound, out),
            Formula::Exists(v, f) => {
                bound.push(v.name.clone());
                f.free_vars_into(bound, out);
                bound.pop();
            }
        }
    }

    /// All variable names appearing anywhere, free or bound.
    pub fn all_var_names(&self) -> BTreeSet<String> {
        let mut names = BTreeSet::new();
        self.visit_vars(&mut |v| {
            names.insert(v.name.clone());
        });
        names
    }

    fn visit_vars(&self, f: &mut impl FnMut(&Var)) {
        match self {
            Formula::Atomic(_, args) => {
                let mut vars = Vec::new();
                args.iter().for_each(|t| t.collect_vars(&mut vars));
                vars.into_iter().for_each(|v| f(v));
            }
            Formula::Eq(a, b) => {
                let mut vars = Vec::new();
                a.collect_vars(&mut vars);
                b.collect_vars(&mut vars);
                vars.into_iter().for_each(|v| f(v));
            }
            Formula::And(fs) | Formula::Or(fs) => fs.iter().for_each(|g| g.visit_vars(f)),
            Formula::Not(g) => g.visit_vars(f),
            Formula::Exists(v, g) => {
                f(v);
                g.visit_vars(f);
            }
        }
    }

    /// Number of connective nodes, used as the grading for searches.
    pub fn size(&self) -> usize {
        match self {
            Formula::Atomic(..) | Formula::Eq(..) => 1,
            Formula::And(fs) | Formula::Or(fs) => 1 + fs.iter().map(|f| f.size()).sum::<usize>(),
            Formula::Not(f) => 1 + f.size(),
            Formula::Exists(_, f) => 1 + f.size(),
        }
    }

    /// Checks well-sortedness against a signature: relation and function
    /// arities and sorts match, and each variable name carries one sort.
    pub fn well_sorted(&self, sig: &Signature) -> Result<()> {
        let mut sorts: BTreeMap<String, String> = BTreeMap::new();
        self.well_sorted_inner(sig, &mut sorts)
    }

    fn well_sorted_inner(
        &self,
        sig: &Signature,
        var_sorts: &mut BTreeMap<String, String>,
    ) -> Result<()> {
        let mut check_var = |v: &Var| -> Result<()> {
            if !sig.has_sort(&v.sort) {
                return Err(Error::Sort(format!("variable {} has unknown sort {}", v.name, v.sort)));
            }
            match var_sorts.get(&v.name) {
                Some(s) if s != &v.sort => Err(Error::Sort(format!(
                    "variable {} used at sorts {} and {}",
                    v.name, s, v.sort
                ))),
                _ => {
                    var_sorts.insert(v.name.clone(), v.sort.clone());
                    Ok(())
                }
            }
        };
        match self {
            Formula::Atomic(rel, args) => {
                let expect = sig.relation_args(rel)?.to_vec();
                if expect.len() != args.len() {
                    return Err(Error::Sort(format!(
                        "relation {rel} expects {} arguments, got {}",
                        expect.len(),
                        args.len()
                    )));
                }
                for (t, e) in args.iter().zip(&expect) {
                    let mut vars = Vec::new();
                    t.collect_vars(&mut vars);
                    for v in vars {
                        check_var(v)?;
                    }
                    let got = term_sort(sig, t)?;
                    if &got != e {
                        return Err(Error::Sort(format!("relation {rel} expects {e}, got {got}")));
                    }
                }
                Ok(())
            }
            Formula::Eq(a, b) => {
                for t in [a, b] {
                    let mut vars = Vec::new();
                    t.collect_vars(&mut vars);
                    for v in vars {
                        check_var(v)?;
                    }
                }
                let sa = term_sort(sig, a)?;
                let sb = term_sort(sig, b)?;
                if sa != sb {
                    return Err(Error::Sort(format!("equality between sorts {sa} and {sb}")));
                }
                Ok(())
            }
            Formula::And(fs) | Formula::Or(fs) => {
                fs.iter().try_for_each(|f| f.well_sorted_inner(sig, var_sorts))
            }
            Formula::Not(f) => f.well_sorted_inner(sig, var_sorts),
            Formula::Exists(v, f) => {
                if !sig.has_sort(&v.sort) {
                    return Err(Error::Sort(format!("bound {} has unknown sort {}", v.name, v.sort)));
                }
                let shadowed = var_sorts.insert(v.name.clone(), v.sort.clone());
                f.well_sorted_inner(sig, var_sorts)?;
                match shadowed {
                    Some(s) => {
                        var_sorts.insert(v.name.clone(), s);
                    }
                    None => {
                        var_sorts.remove(&v.name);
                    }
                }
                Ok(())
            }
        }
    }
}

/// Complexity levels under the negation-stratified hierarchy.
///
/// `sigma` is the least level at which the formula is built from atomic
/// formulas and negations of lower-level formulas using `∧, ⊤, ∃, ⋁`.
/// `pi` is the least level at which it has the shape of a dual formula:
/// a negation of a Σ level, or a conjunction of such; other shapes get the
/// sound bound `sigma + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Classification {
    pub sigma: u32,
    pub pi: u32,
}

pub fn classify(f: &Formula) -> Classification {
    Classification { sigma: sigma_level(f), pi: pi_level(f) }
}

pub fn sigma_level(f: &Formula) -> u32 {
    match f {
        Formula::Atomic(..) | Formula::Eq(..) => 1,
        Formula::And(fs) | Formula::Or(fs) => {
            fs.iter().map(sigma_level).max().unwrap_or(1)
        }
        Formula::Exists(_, f) => sigma_level(f),
        Formula::Not(f) => sigma_level(f) + 1,
    }
}

pub fn pi_level(f: &Formula) -> u32 {
    match f {
        Formula::Not(g) => sigma_level(g),
        Formula::And(fs) => fs.iter().map(pi_level).max().unwrap_or(1),
        _ => sigma_level(f) + 1,
    }
}

/// Capture-avoiding substitution of terms for free variables, keyed by
/// variable name. Sorts of replaced variables must match the terms.
pub fn substitute(
    f: &Formula,
    subst: &BTreeMap<String, Term>,
    sig: &Signature,
) -> Result<Formula> {
    for (name, term) in subst {
        let term_s = term_sort(sig, term)?;
        let mut mismatch = None;
        f.visit_vars(&mut |v| {
            if &v.name == name && v.sort != term_s && mismatch.is_none() {
                mismatch = Some(v.sort.clone());
            }
        });
        if let Some(s) = mismatch {
            return Err(Error::Sort(format!(
                "substituting sort-{term_s} term for {name} of sort {s}"
            )));
        }
    }
    let mut used: BTreeSet<String> = f.all_var_names();
    for t in subst.values() {
        let mut vars = Vec::new();
        t.collect_vars(&mut vars);
        used.extend(vars.into_iter().map(|v| v.name.clone()));
    }
    Ok(substitute_inner(f, subst, &mut used))
}

fn substitute_term(t: &Term, subst: &BTreeMap<String, Term>) -> Term {
    match t {
        Term::Var(v) => subst.get(&v.name).cloned().unwrap_or_else(|| t.clone()),
        Term::App(f, args) => {
            Term::App(f.clone(), args.iter().map(|a| substitute_term(a, subst)).collect())
        }
    }
}

fn substitute_inner(
    f: &Formula,
    subst: &BTreeMap<String, Term>,
    used: &mut BTreeSet<String>,
) -> Formula {
    match f {
        Formula::Atomic(r, args) => {
            Formula::Atomic(r.clone(), args.iter().map(|t| substitute_term(t, subst)).collect())
        }
        Formula::Eq(a, b) => Formula::Eq(substitute_term(a, subst), substitute_term(b, subst)),
        Formula::And(fs) => {
            Formula::And(fs.iter().map(|g| substitute_inner(g, subst, used)).collect())
        }
        Formula::Or(fs) => {
            Formula::Or(fs.iter().map(|g| substitute_inner(g, subst, used)).collect())
        }
        Formula::Not(g) => Formula::not(substitute_inner(g, subst, used)),
        Formula::Exists(v, body) => {
            let mut inner = subst.clone();
            inner.remove(&v.name);
            // rename the bound variable if a substituted term would capture it
            let captures = inner.values().any(|t| {
                let mut vars = Vec::new();
                t.collect_vars(&mut vars);
                vars.iter().any(|w| w.name == v.name)
            });
            if captures {
                let fresh = fresh_name(&v.name, used);
                used.insert(fresh.clone());
                let fresh_var = Var::new(fresh.clone(), v.sort.clone());
                inner.insert(v.name.clone(), Term::Var(fresh_var.clone()));
                Formula::exists(fresh_var, substitute_inner(body, &inner, used))
            } else {
                Formula::exists(v.clone(), substitute_inner(body, &inner, used))
            }
        }
    }
}

pub fn fresh_name(base: &str, used: &BTreeSet<String>) -> String {
    if !used.contains(base) {
        return base.to_string();
    }
    for k in 1.. {
        let candidate = format!("{base}_{k}");
        if !used.contains(&candidate) {
            return candidate;
        }
    }
    unreachable!()
}

/// Rewrites a Σ₁ formula into disjunction-of-existential-of-conjunction
/// form. Fails if the formula is not Σ₁.
pub fn normal_form_sigma1(f: &Formula) -> Result<Formula> {
    if sigma_level(f) != 1 {
        return Err(Error::Sort(format!("formula is Σ{} but Σ1 is required", sigma_level(f))));
    }
    let mut used = f.all_var_names();
    let disjuncts = nf1(f, &mut used);
    Ok(Formula::Or(
        disjuncts
            .into_iter()
            .map(|d| Formula::exists_many(&d.prefix, Formula::And(d.atoms)))
            .collect(),
    ))
}

#[derive(Clone)]
struct Disjunct {
    prefix: Vec<Var>,
    atoms: Vec<Formula>,
}

fn nf1(f: &Formula, used: &mut BTreeSet<String>) -> Vec<Disjunct> {
    match f {
        Formula::Atomic(..) | Formula::Eq(..) => {
            vec![Disjunct { prefix: Vec::new(), atoms: vec![f.clone()] }]
        }
        Formula::Or(fs) => fs.iter().flat_map(|g| nf1(g, used)).collect(),
        Formula::And(fs) => {
            let mut acc = vec![Disjunct { prefix: Vec::new(), atoms: Vec::new() }];
            for g in fs {
                let branch = nf1(g, used);
                let mut next = Vec::new();
                for left in &acc {
                    for right in &branch {
                        next.push(merge_disjuncts(left, right, used));
                    }
                }
                acc = next;
            }
            acc
        }
        Formula::Exists(v, body) => nf1(body, used)
            .into_iter()
            .map(|mut d| {
                if d.prefix.iter().any(|w| w.name == v.name) {
                    // quantifier over a name already used deeper; keep it by
                    // renaming the inner occurrence
                    let fresh = fresh_name(&v.name, used);
                    used.insert(fresh.clone());
                    let target = d.prefix.iter().position(|w| w.name == v.name).unwrap();
                    let old = d.prefix[target].clone();
                    let renamed = Var::new(fresh, old.sort.clone());
                    let sub: BTreeMap<String, Term> =
                        [(old.name.clone(), Term::Var(renamed.clone()))].into();
                    d.prefix[target] = renamed;
                    d.atoms = d.atoms.iter().map(|a| substitute_term_only(a, &sub)).collect();
                }
                d.prefix.insert(0, v.clone());
                d
            })
            .collect(),
        Formula::Not(_) => unreachable!("Σ1 formulas contain no negation"),
    }
}

fn substitute_term_only(f: &Formula, subst: &BTreeMap<String, Term>) -> Formula {
    match f {
        Formula::Atomic(r, args) => {
            Formula::Atomic(r.clone(), args.iter().map(|t| substitute_term(t, subst)).collect())
        }
        Formula::Eq(a, b) => Formula::Eq(substitute_term(a, subst), substitute_term(b, subst)),
        _ => unreachable!("atoms only"),
    }
}

fn merge_disjuncts(left: &Disjunct, right: &Disjunct, used: &mut BTreeSet<String>) -> Disjunct {
    // rename the right prefix apart from everything on the left
    let mut taken: BTreeSet<String> = used.clone();
    taken.extend(left.prefix.iter().map(|v| v.name.clone()));
    let mut sub: BTreeMap<String, Term> = BTreeMap::new();
    let mut prefix = left.prefix.clone();
    for v in &right.prefix {
        let name = fresh_name(&v.name, &taken);
        taken.insert(name.clone());
        used.insert(name.clone());
        let nv = Var::new(name, v.sort.clone());
        if nv != *v {
            sub.insert(v.name.clone(), Term::Var(nv.clone()));
        }
        prefix.push(nv);
    }
    let mut atoms = left.atoms.clone();
    atoms.extend(right.atoms.iter().map(|a| substitute_term_only(a, &sub)));
    Disjunct { prefix, atoms }
}

/// Canonical key of a formula: free variables renamed to `__c0, __c1, …` in
/// first-occurrence order and bound variables to `__b0, __b1, …` in
/// traversal order. Two formulas have the same key iff they differ only by
/// a variable renaming.
pub fn canonical_key(f: &Formula) -> Formula {
    let free = f.free_vars();
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (i, v) in free.iter().enumerate() {
        map.insert(v.name.clone(), format!("__c{i:02}"));
    }
    let mut counter = 0usize;
    canon(f, &map, &mut counter)
}

fn canon(f: &Formula, map: &BTreeMap<String, String>, counter: &mut usize) -> Formula {
    let rename_term = |t: &Term, map: &BTreeMap<String, String>| -> Term {
        fn go(t: &Term, map: &BTreeMap<String, String>) -> Term {
            match t {
                Term::Var(v) => Term::Var(Var::new(
                    map.get(&v.name).cloned().unwrap_or_else(|| v.name.clone()),
                    v.sort.clone(),
                )),
                Term::App(f, args) => {
                    Term::App(f.clone(), args.iter().map(|a| go(a, map)).collect())
                }
            }
        }
        go(t, map)
    };
    match f {
        Formula::Atomic(r, args) => {
            Formula::Atomic(r.clone(), args.iter().map(|t| rename_term(t, map)).collect())
        }
        Formula::Eq(a, b) => Formula::Eq(rename_term(a, map), rename_term(b, map)),
        Formula::And(fs) => Formula::And(fs.iter().map(|g| canon(g, map, counter)).collect()),
        Formula::Or(fs) => Formula::Or(fs.iter().map(|g| canon(g, map, counter)).collect()),
        Formula::Not(g) => Formula::not(canon(g, map, counter)),
        Formula::Exists(v, body) => {
            let fresh = format!("__b{:02}", *counter);
            *counter += 1;
            let mut inner = map.clone();
            inner.insert(v.name.clone(), fresh.clone());
            Formula::exists(Var::new(fresh, v.sort.clone()), canon(body, &inner, counter))
        }
    }
}

/// Grammar-exact text rendering; inverse of [`parse_formula`].
pub fn print_formula(f: &Formula) -> String {
    let mut s = String::new();
    write_formula(f, &mut s);
    s
}

fn write_formula(f: &Formula, out: &mut String) {
    match f {
        Formula::Atomic(r, args) => {
            out.push_str(r);
            out.push('(');
            for (i, t) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_term(t, out);
            }
            out.push(')');
        }
        Formula::Eq(a, b) => {
            write_term(a, out);
            out.push_str(" = ");
            write_term(b, out);
        }
        Formula::And(fs) => {
            out.push_str("and(");
            for (i, g) in fs.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_formula(g, out);
            }
            out.push(')');
        }
        Formula::Or(fs) => {
            out.push_str("or(");
            for (i, g) in fs.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_formula(g, out);
            }
            out.push(')');
        }
        Formula::Not(g) => {
            out.push_str("not(");
            write_formula(g, out);
            out.push(')');
        }
        Formula::Exists(v, body) => {
            out.push_str("exists ");
            out.push_str(&v.name);
            out.push(':');
            out.push_str(&v.sort);
            out.push_str(". ");
            write_formula(body, out);
        }
    }
}

pub fn print_term(t: &Term) -> String {
    let mut s = String::new();
    write_term(t, &mut s);
    s
}

fn write_term(t: &Term, out: &mut String) {
    match t {
        Term::Var(v) => out.push_str(&v.name),
        Term::App(f, args) => {
            out.push_str(f);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_term(a, out);
            }
            out.push(')');
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_formula(self))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_term(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig_rs() -> Signature {
        Signature::relational(vec![("R", 2), ("S", 1), ("P", 1)]).unwrap()
    }

    fn v(name: &str) -> Var {
        Var::new(name, "elem")
    }

    fn tv(name: &str) -> Term {
        Term::var(name, "elem")
    }

    #[test]
    fn classify_examples() {
        let r = Formula::atom("R", vec![tv("x"), tv("y")]);
        assert_eq!(classify(&r).sigma, 1);

        let not_r = Formula::not(Formula::atom("P", vec![tv("x")]));
        assert_eq!(classify(&not_r).sigma, 2);
        assert_eq!(classify(&not_r).pi, 1);

        let f = Formula::exists(
            v("y"),
            Formula::And(vec![
                Formula::atom("R", vec![tv("x"), tv("y")]),
                Formula::not(Formula::atom("S", vec![tv("y")])),
            ]),
        );
        assert_eq!(classify(&f).sigma, 2);
    }

    #[test]
    fn classify_composites_of_sigma1_stay_sigma1() {
        let a = Formula::atom("P", vec![tv("x")]);
        let b = Formula::atom("S", vec![tv("x")]);
        let composite = Formula::exists(
            v("y"),
            Formula::Or(vec![
                Formula::And(vec![a.clone(), b.clone()]),
                Formula::atom("R", vec![tv("x"), tv("y")]),
            ]),
        );
        assert_eq!(classify(&composite).sigma, 1);
        assert_eq!(classify(&Formula::top()).sigma, 1);
        assert_eq!(classify(&Formula::bot()).sigma, 1);
    }

    #[test]
    fn pi_level_of_emitted_axiom_shapes() {
        // ∀x (P(x) → S(x)) as ¬∃x (P ∧ ¬S) is Π2
        let ax = Formula::forall_implies(
            &[v("x")],
            Formula::atom("P", vec![tv("x")]),
            Formula::atom("S", vec![tv("x")]),
        );
        assert_eq!(classify(&ax).pi, 2);
        // biconditional encoding is also Π2
        let bi = Formula::forall_iff(
            &[v("x")],
            Formula::atom("P", vec![tv("x")]),
            Formula::atom("S", vec![tv("x")]),
        );
        assert_eq!(classify(&bi).pi, 2);
        // conjunction of Π2 sentences stays Π2
        let both = Formula::And(vec![ax.clone(), bi]);
        assert_eq!(classify(&both).pi, 2);
        // double negation climbs
        let ddn = Formula::not(Formula::not(Formula::atom("P", vec![tv("x")])));
        assert_eq!(classify(&ddn).sigma, 3);
    }

    #[test]
    fn substitute_examples() {
        let sig = sig_rs();
        let r = Formula::atom("P", vec![tv("x")]);
        let sub: BTreeMap<String, Term> = [("x".to_string(), tv("y"))].into();
        assert_eq!(
            substitute(&r, &sub, &sig).unwrap(),
            Formula::atom("P", vec![tv("y")])
        );

        // capture avoidance
        let f = Formula::exists(v("y"), Formula::atom("R", vec![tv("x"), tv("y")]));
        let g = substitute(&f, &sub, &sig).unwrap();
        match &g {
            Formula::Exists(bound, body) => {
                assert_ne!(bound.name, "y");
                assert_eq!(
                    **body,
                    Formula::atom("R", vec![tv("y"), Term::var(bound.name.clone(), "elem")])
                );
            }
            other => panic!("unexpected {other:?}"),
        }

        // Eq with a function term
        let fsig = Signature::new(
            vec!["elem".into()],
            vec![],
            vec![("f".into(), vec!["elem".into()], "elem".into())],
        )
        .unwrap();
        let eq = Formula::Eq(tv("x"), tv("x"));
        let sub2: BTreeMap<String, Term> =
            [("x".to_string(), Term::App("f".into(), vec![tv("z")]))].into();
        let res = substitute(&eq, &sub2, &fsig).unwrap();
        assert_eq!(
            res,
            Formula::Eq(
                Term::App("f".into(), vec![tv("z")]),
                Term::App("f".into(), vec![tv("z")])
            )
        );
    }

    #[test]
    fn substitution_preserves_classification() {
        let sig = sig_rs();
        let f = Formula::exists(
            v("y"),
            Formula::And(vec![
                Formula::atom("R", vec![tv("x"), tv("y")]),
                Formula::not(Formula::atom("S", vec![tv("y")])),
            ]),
        );
        let sub: BTreeMap<String, Term> = [("x".to_string(), tv("z"))].into();
        let g = substitute(&f, &sub, &sig).unwrap();
        assert_eq!(classify(&f), classify(&g));
    }

    #[test]
    fn normal_form_shape() {
        let f = Formula::exists(
            v("y"),
            Formula::Or(vec![
                Formula::atom("P", vec![tv("y")]),
                Formula::atom("S", vec![tv("y")]),
            ]),
        );
        let nf = normal_form_sigma1(&f).unwrap();
        match &nf {
            Formula::Or(ds) => {
                assert_eq!(ds.len(), 2);
                for d in ds {
                    match d {
                        Formula::Exists(_, body) => {
                            assert!(matches!(**body, Formula::And(_)));
                        }
                        other => panic!("expected exists, got {other}"),
                    }
                }
            }
            other => panic!("expected or, got {other}"),
        }

        let atom = Formula::atom("P", vec![tv("x")]);
        assert_eq!(
            normal_form_sigma1(&atom).unwrap(),
            Formula::Or(vec![Formula::And(vec![atom.clone()])])
        );
        assert_eq!(
            normal_form_sigma1(&Formula::top()).unwrap(),
            Formula::Or(vec![Formula::And(vec![])])
        );
        assert!(normal_form_sigma1(&Formula::not(atom)).is_err());
    }

    #[test]
    fn canonical_key_identifies_renamings() {
        let f = Formula::atom("R", vec![tv("x"), tv("y")]);
        let g = Formula::atom("R", vec![tv("u"), tv("w")]);
        let h = Formula::atom("R", vec![tv("x"), tv("x")]);
        assert_eq!(canonical_key(&f), canonical_key(&g));
        assert_ne!(canonical_key(&f), canonical_key(&h));

        let q1 = Formula::exists(v("a"), Formula::atom("R", vec![tv("x"), tv("a")]));
        let q2 = Formula::exists(v("b"), Formula::atom("R", vec![tv("z"), tv("b")]));
        assert_eq!(canonical_key(&q1), canonical_key(&q2));
    }

    #[test]
    fn print_examples() {
        let f = Formula::exists(
            v("y"),
            Formula::And(vec![
                Formula::atom("R", vec![tv("x"), tv("y")]),
                Formula::not(Formula::atom("P", vec![tv("y")])),
            ]),
        );
        assert_eq!(print_formula(&f), "exists y:elem. and(R(x, y), not(P(y)))");
        assert_eq!(print_formula(&Formula::top()), "and()");
        assert_eq!(
            print_formula(&Formula::Or(vec![Formula::atom("P", vec![tv("x")]), Formula::bot()])),
            "or(P(x), or())"
        );
    }
}
