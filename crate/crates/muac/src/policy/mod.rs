//! The MuAC policy language: AST, parser, validator and pretty printer.
//!
//! A rule offers a resource of the policy owner (`Me`) to some requester,
//! conditioned on other transfers taking place (the body) and on predicate
//! guards holding in the context.

mod parse;
mod print;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ContextFact, ModelError, ResourceKind, Transfer, UserId};

pub use parse::{parse_policy, ParseError};
pub use print::pretty_print;

/// `Me` or a universally quantified user variable. Variables may carry
/// trailing primes (`u'`, `u''`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UserTerm {
    Me,
    Var(String),
}

impl UserTerm {
    pub fn var(name: &str) -> Result<Self, PolicyError> {
        if is_var_name(name) {
            Ok(UserTerm::Var(name.to_owned()))
        } else {
            Err(PolicyError::InvalidVariable(name.to_owned()))
        }
    }
}

impl fmt::Display for UserTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UserTerm::Me => f.write_str("Me"),
            UserTerm::Var(v) => f.write_str(v),
        }
    }
}

pub(crate) fn is_var_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('a'..='z'))
        && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_' | '\''))
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum PolicyError {
    #[error("invalid variable name {0:?}")]
    InvalidVariable(String),
    #[error("unbound variable {0}")]
    UnboundVariable(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `Gives(u, r, u')` with possibly open user positions. The resource is
/// always a concrete kind.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GiveAtom {
    pub giver: UserTerm,
    pub resource: ResourceKind,
    pub receiver: UserTerm,
}

impl fmt::Display for GiveAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gives({}, {}, {})", self.giver, self.resource, self.receiver)
    }
}

/// A predicate guard over user terms, e.g. `FriendOrSame(Me, u'')`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PredAtom {
    pub predicate: String,
    pub args: Vec<UserTerm>,
}

impl fmt::Display for PredAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// One MuAC rule: the head offers a resource of `Me`, the body lists the
/// transfers demanded in return, the guards condition applicability.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rule {
    pub head: GiveAtom,
    pub body: Vec<GiveAtom>,
    pub guards: Vec<PredAtom>,
}

impl Rule {
    /// All variable names occurring anywhere in the rule, sorted.
    pub fn variables(&self) -> BTreeSet<&str> {
        let mut vars = BTreeSet::new();
        for atom in std::iter::once(&self.head).chain(self.body.iter()) {
            for t in [&atom.giver, &atom.receiver] {
                if let UserTerm::Var(v) = t {
                    vars.insert(v.as_str());
                }
            }
        }
        for g in &self.guards {
            for t in &g.args {
                if let UserTerm::Var(v) = t {
                    vars.insert(v.as_str());
                }
            }
        }
        vars
    }
}

/// The ordered rule set of one user; rule ids are positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub owner: UserId,
    pub rules: Vec<Rule>,
}

impl Policy {
    pub fn empty(owner: UserId) -> Self {
        Policy { owner, rules: vec![] }
    }
}

/// A fully ground give atom. Unlike [`Transfer`] it may have equal giver and
/// receiver, in which case it can never be witnessed by a real transfer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroundGive {
    pub giver: UserId,
    pub resource: ResourceKind,
    pub receiver: UserId,
}

impl GroundGive {
    pub fn to_transfer(&self) -> Result<Transfer, ModelError> {
        Transfer::new(self.giver.clone(), self.resource.clone(), self.receiver.clone())
    }

    pub fn from_transfer(t: &Transfer) -> Self {
        GroundGive {
            giver: t.giver().clone(),
            resource: t.resource().clone(),
            receiver: t.receiver().clone(),
        }
    }
}

impl fmt::Display for GroundGive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gives({}, {}, {})", self.giver, self.resource, self.receiver)
    }
}

/// A rule with every user term resolved to a concrete user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundRule {
    pub head: GroundGive,
    pub body: Vec<GroundGive>,
    pub guards: Vec<ContextFact>,
}

/// Identifies a rule of some user's policy together with a grounding
/// substitution; `Me` always resolves to the owner.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RuleInstance {
    pub owner: UserId,
    #[serde(rename = "index")]
    pub rule_index: usize,
    #[serde(rename = "subst")]
    pub substitution: BTreeMap<String, UserId>,
}

fn resolve(
    term: &UserTerm,
    owner: &UserId,
    subst: &BTreeMap<String, UserId>,
) -> Result<UserId, PolicyError> {
    match term {
        UserTerm::Me => Ok(owner.clone()),
        UserTerm::Var(v) => subst
            .get(v)
            .cloned()
            .ok_or_else(|| PolicyError::UnboundVariable(v.clone())),
    }
}

/// Grounds a rule under the substitution, with `Me` mapped to `owner`.
pub fn instantiate(
    rule: &Rule,
    owner: &UserId,
    subst: &BTreeMap<String, UserId>,
) -> Result<GroundRule, PolicyError> {
    let ground_atom = |a: &GiveAtom| -> Result<GroundGive, PolicyError> {
        Ok(GroundGive {
            giver: resolve(&a.giver, owner, subst)?,
            resource: a.resource.clone(),
            receiver: resolve(&a.receiver, owner, subst)?,
        })
    };
    let head = ground_atom(&rule.head)?;
    let body = rule.body.iter().map(ground_atom).collect::<Result<Vec<_>, _>>()?;
    let guards = rule
        .guards
        .iter()
        .map(|g| {
            let args = g
                .args
                .iter()
                .map(|t| resolve(t, owner, subst))
                .collect::<Result<Vec<_>, _>>()?;
            ContextFact::new(&g.predicate, args).map_err(PolicyError::from)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GroundRule { head, body, guards })
}

/// Non-fatal findings about a parsed policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum Warning {
    /// A body variable that appears neither in the head nor in a guard: the
    /// witness transfer is demanded but otherwise unconstrained. Legal.
    PureWitness { rule: usize, var: String },
    /// Empty body and no guards: the rule gives the resource away for free.
    UnconditionalRule { rule: usize },
    /// Structurally identical to an earlier rule.
    DuplicateRule { rule: usize, earlier: usize },
}

pub fn validate(policy: &Policy) -> Vec<Warning> {
    let mut warnings = Vec::new();
    for (i, rule) in policy.rules.iter().enumerate() {
        let mut constrained: BTreeSet<&str> = BTreeSet::new();
        for t in [&rule.head.giver, &rule.head.receiver] {
            if let UserTerm::Var(v) = t {
                constrained.insert(v);
            }
        }
        for g in &rule.guards {
            for t in &g.args {
                if let UserTerm::Var(v) = t {
                    constrained.insert(v);
                }
            }
        }
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for atom in &rule.body {
            for t in [&atom.giver, &atom.receiver] {
                if let UserTerm::Var(v) = t {
                    if !constrained.contains(v.as_str()) && seen.insert(v) {
                        warnings.push(Warning::PureWitness { rule: i, var: v.clone() });
                    }
                }
            }
        }
        if rule.body.is_empty() && rule.guards.is_empty() {
            warnings.push(Warning::UnconditionalRule { rule: i });
        }
        if let Some(j) = policy.rules[..i].iter().position(|r| r == rule) {
            warnings.push(Warning::DuplicateRule { rule: i, earlier: j });
        }
    }
    warnings
}
