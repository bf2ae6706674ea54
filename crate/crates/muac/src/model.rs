//! The exchange environment: users, resources, ownership states, transfers
//! and computations, plus the context of ground predicate facts.
//!
//! States are multisets of resource kinds per user, normalized so that zero
//! counts are never stored; equality is therefore extensional.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum ModelError {
    #[error("invalid user name {0:?}")]
    InvalidUserName(String),
    #[error("invalid resource name {0:?}")]
    InvalidResourceName(String),
    #[error("invalid predicate name {0:?}")]
    InvalidPredicateName(String),
    #[error("predicate fact needs at least one argument")]
    EmptyFactArgs,
    #[error("self-transfer: {0} cannot give to themselves")]
    SelfTransfer(String),
    #[error("{giver} does not own a {resource}")]
    NotOwned { giver: UserId, resource: ResourceKind },
    #[error("infeasible transfer at step {0}")]
    InfeasibleAt(usize),
}

fn is_lower_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('a'..='z'))
        && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_'))
}

/// A user name: lowercase identifier, never the reserved word `me`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UserId(String);

impl UserId {
    pub fn new(name: &str) -> Result<Self, ModelError> {
        if is_lower_ident(name) && name != "me" {
            Ok(UserId(name.to_owned()))
        } else {
            Err(ModelError::InvalidUserName(name.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for UserId {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, ModelError> {
        UserId::new(&s)
    }
}

impl From<UserId> for String {
    fn from(u: UserId) -> String {
        u.0
    }
}

/// A resource kind: lowercase identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ResourceKind(String);

impl ResourceKind {
    pub fn new(name: &str) -> Result<Self, ModelError> {
        if is_lower_ident(name) {
            Ok(ResourceKind(name.to_owned()))
        } else {
            Err(ModelError::InvalidResourceName(name.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for ResourceKind {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, ModelError> {
        ResourceKind::new(&s)
    }
}

impl From<ResourceKind> for String {
    fn from(k: ResourceKind) -> String {
        k.0
    }
}

/// One resource moving from `giver` to `receiver`. Self-transfers are
/// rejected at construction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTransfer", into = "RawTransfer")]
pub struct Transfer {
    giver: UserId,
    resource: ResourceKind,
    receiver: UserId,
}

#[derive(Serialize, Deserialize)]
struct RawTransfer {
    giver: UserId,
    resource: ResourceKind,
    receiver: UserId,
}

impl TryFrom<RawTransfer> for Transfer {
    type Error = ModelError;
    fn try_from(r: RawTransfer) -> Result<Self, ModelError> {
        Transfer::new(r.giver, r.resource, r.receiver)
    }
}

impl From<Transfer> for RawTransfer {
    fn from(t: Transfer) -> RawTransfer {
        RawTransfer { giver: t.giver, resource: t.resource, receiver: t.receiver }
    }
}

impl Transfer {
    pub fn new(giver: UserId, resource: ResourceKind, receiver: UserId) -> Result<Self, ModelError> {
        if giver == receiver {
            return Err(ModelError::SelfTransfer(giver.to_string()));
        }
        Ok(Transfer { giver, resource, receiver })
    }

    pub fn giver(&self) -> &UserId {
        &self.giver
    }

    pub fn resource(&self) -> &ResourceKind {
        &self.resource
    }

    pub fn receiver(&self) -> &UserId {
        &self.receiver
    }

    /// The transfer undoing this one.
    pub fn reverse(&self) -> Transfer {
        Transfer {
            giver: self.receiver.clone(),
            resource: self.resource.clone(),
            receiver: self.giver.clone(),
        }
    }
}

impl fmt::Display for Transfer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}:{}", self.giver, self.receiver, self.resource)
    }
}

/// Who owns how many of what. Zero counts are never stored, so two states
/// compare equal iff every (user, kind) count agrees.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "BTreeMap<UserId, BTreeMap<ResourceKind, u32>>")]
#[serde(into = "BTreeMap<UserId, BTreeMap<ResourceKind, u32>>")]
pub struct OwnershipState {
    holdings: BTreeMap<UserId, BTreeMap<ResourceKind, u32>>,
}

impl From<BTreeMap<UserId, BTreeMap<ResourceKind, u32>>> for OwnershipState {
    fn from(holdings: BTreeMap<UserId, BTreeMap<ResourceKind, u32>>) -> Self {
        let mut s = OwnershipState::default();
        for (user, counts) in holdings {
            for (kind, n) in counts {
                s.add(&user, &kind, n);
            }
        }
        s
    }
}

impl From<OwnershipState> for BTreeMap<UserId, BTreeMap<ResourceKind, u32>> {
    fn from(s: OwnershipState) -> Self {
        s.holdings
    }
}

impl OwnershipState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, user: &UserId, kind: &ResourceKind) -> u32 {
        self.holdings
            .get(user)
            .and_then(|m| m.get(kind))
            .copied()
            .unwrap_or(0)
    }

    pub fn add(&mut self, user: &UserId, kind: &ResourceKind, n: u32) {
        if n == 0 {
            return;
        }
        *self
            .holdings
            .entry(user.clone())
            .or_default()
            .entry(kind.clone())
            .or_insert(0) += n;
    }

    fn remove_one(&mut self, user: &UserId, kind: &ResourceKind) -> bool {
        let Some(counts) = self.holdings.get_mut(user) else {
            return false;
        };
        let Some(n) = counts.get_mut(kind) else {
            return false;
        };
        *n -= 1;
        if *n == 0 {
            counts.remove(kind);
            if counts.is_empty() {
                self.holdings.remove(user);
            }
        }
        true
    }

    /// All users holding at least one resource.
    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.holdings.keys()
    }

    /// All resource kinds with a positive count somewhere.
    pub fn kinds(&self) -> BTreeSet<&ResourceKind> {
        self.holdings.values().flat_map(|m| m.keys()).collect()
    }

    /// Iterate over every (user, kind, count) entry with count > 0.
    pub fn entries(&self) -> impl Iterator<Item = (&UserId, &ResourceKind, u32)> {
        self.holdings
            .iter()
            .flat_map(|(u, m)| m.iter().map(move |(k, n)| (u, k, *n)))
    }

    /// Total count of `kind` summed over all users.
    pub fn total(&self, kind: &ResourceKind) -> u32 {
        self.holdings.values().map(|m| m.get(kind).copied().unwrap_or(0)).sum()
    }
}

/// Moves one copy of the resource from giver to receiver.
pub fn apply_transfer(state: &OwnershipState, t: &Transfer) -> Result<OwnershipState, ModelError> {
    let mut next = state.clone();
    if !next.remove_one(t.giver(), t.resource()) {
        return Err(ModelError::NotOwned {
            giver: t.giver().clone(),
            resource: t.resource().clone(),
        });
    }
    next.add(t.receiver(), t.resource(), 1);
    Ok(next)
}

/// An ordered sequence of transfers from an initial state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Computation {
    pub initial: OwnershipState,
    pub steps: Vec<Transfer>,
}

/// Replays the computation, failing with `InfeasibleAt(i)` at the first step
/// whose giver does not hold the resource.
pub fn apply_computation(c: &Computation) -> Result<OwnershipState, ModelError> {
    let mut state = c.initial.clone();
    for (i, t) in c.steps.iter().enumerate() {
        state = apply_transfer(&state, t).map_err(|_| ModelError::InfeasibleAt(i))?;
    }
    Ok(state)
}

pub fn state_equal(a: &OwnershipState, b: &OwnershipState) -> bool {
    a == b
}

/// A ground predicate fact, e.g. `FriendOrSame(bob, carl)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextFact {
    pub pred: String,
    pub args: Vec<UserId>,
}

fn is_pred_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('A'..='Z'))
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl ContextFact {
    pub fn new(pred: &str, args: Vec<UserId>) -> Result<Self, ModelError> {
        if !is_pred_name(pred) {
            return Err(ModelError::InvalidPredicateName(pred.to_owned()));
        }
        if args.is_empty() {
            return Err(ModelError::EmptyFactArgs);
        }
        Ok(ContextFact { pred: pred.to_owned(), args })
    }
}

impl fmt::Display for ContextFact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.pred)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// The set Γ of ground facts interpreting predicate symbols. Membership is
/// exact: no symmetry or reflexivity closure is applied.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Context {
    pub facts: BTreeSet<ContextFact>,
}

impl Context {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_facts(facts: impl IntoIterator<Item = ContextFact>) -> Self {
        Context { facts: facts.into_iter().collect() }
    }

    pub fn holds(&self, fact: &ContextFact) -> bool {
        self.facts.contains(fact)
    }

    pub fn insert(&mut self, fact: ContextFact) {
        self.facts.insert(fact);
    }

    pub fn remove(&mut self, fact: &ContextFact) {
        self.facts.remove(fact);
    }

    /// Every user mentioned in some fact.
    pub fn users(&self) -> BTreeSet<&UserId> {
        self.facts.iter().flat_map(|f| f.args.iter()).collect()
    }
}
