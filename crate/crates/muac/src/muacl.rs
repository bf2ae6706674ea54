//! The logic core: compilation of policies, context and states into
//! theories, the contractual handshake closure, and the certificate
//! checking kernel (the cheap verifier a smart contract would run).
//!
//! A clause reads `guards -> G(body -o-o head)`: if the guards hold, the
//! owner promises the head transfer whenever the body transfers are
//! witnessed. `G` grants unlimited reuse, so one clause may justify many
//! steps. A certificate denotes one simultaneous firing of its rule
//! instances followed by linear state rewriting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    apply_transfer, Context, OwnershipState, ResourceKind, Transfer, UserId,
};
use crate::policy::{
    instantiate, GiveAtom, GroundGive, Policy, PredAtom, RuleInstance,
};

/// A single-use resource atom of the linear fragment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum LinearAtom {
    Gives(GroundGive),
    Own(UserId, ResourceKind),
}

/// One compiled rule: `guards -> G(body -o-o head)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub owner: UserId,
    pub rule_index: usize,
    pub guards: Vec<PredAtom>,
    pub body: Vec<GiveAtom>,
    pub head: GiveAtom,
}

/// Compiles a policy, one clause per rule, preserving rule ids.
pub fn compile_policy(policy: &Policy) -> Vec<Clause> {
    policy
        .rules
        .iter()
        .enumerate()
        .map(|(i, rule)| Clause {
            owner: policy.owner.clone(),
            rule_index: i,
            guards: rule.guards.clone(),
            body: rule.body.clone(),
            head: rule.head.clone(),
        })
        .collect()
}

/// One `Own(u, k)` atom per copy of kind `k` held by `u`.
pub fn compile_state(state: &OwnershipState) -> Vec<LinearAtom> {
    let mut atoms = Vec::new();
    for (user, kind, count) in state.entries() {
        for _ in 0..count {
            atoms.push(LinearAtom::Own(user.clone(), kind.clone()));
        }
    }
    atoms
}

/// Reads a multiset of `Own` atoms back into a state. Inverse of
/// [`compile_state`]; `Gives` atoms are ignored.
pub fn read_state(atoms: &[LinearAtom]) -> OwnershipState {
    let mut state = OwnershipState::new();
    for atom in atoms {
        if let LinearAtom::Own(user, kind) = atom {
            state.add(user, kind, 1);
        }
    }
    state
}

/// Reusable clauses, non-linear facts, and the linear resource state.
#[derive(Debug, Clone)]
pub struct Theory {
    clauses: BTreeMap<(UserId, usize), Clause>,
    policies: BTreeMap<UserId, Policy>,
    pub facts: Context,
    pub state: OwnershipState,
}

impl Theory {
    pub fn new(policies: &BTreeMap<UserId, Policy>, facts: Context, state: OwnershipState) -> Self {
        let mut clauses = BTreeMap::new();
        for policy in policies.values() {
            for clause in compile_policy(policy) {
                clauses.insert((clause.owner.clone(), clause.rule_index), clause);
            }
        }
        Theory { clauses, policies: policies.clone(), facts, state }
    }

    pub fn clause(&self, owner: &UserId, rule_index: usize) -> Option<&Clause> {
        self.clauses.get(&(owner.clone(), rule_index))
    }

    pub fn policies(&self) -> &BTreeMap<UserId, Policy> {
        &self.policies
    }
}

/// What the certificate must establish about the final state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "goal", rename_all = "snake_case")]
pub enum Goal {
    ExactState { target: OwnershipState },
    OwnsAtLeast { user: UserId, kind: ResourceKind, count: u32 },
}

impl Goal {
    pub fn satisfied_by(&self, state: &OwnershipState) -> bool {
        match self {
            Goal::ExactState { target } => state == target,
            Goal::OwnsAtLeast { user, kind, count } => state.count(user, kind) >= *count,
        }
    }
}

/// One certified transfer with its justifying rule instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertStep {
    #[serde(flatten)]
    pub transfer: Transfer,
    pub rule: RuleRef,
    pub subst: BTreeMap<String, UserId>,
}

/// Names a rule of some user's policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleRef {
    pub owner: UserId,
    pub index: usize,
}

impl CertStep {
    pub fn instance(&self) -> RuleInstance {
        RuleInstance {
            owner: self.rule.owner.clone(),
            rule_index: self.rule.index,
            substitution: self.subst.clone(),
        }
    }
}

/// Matches one body position of a consumer step to the witness step that
/// discharges it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MatchEntry {
    pub consumer_step: usize,
    pub body_position: usize,
    pub witness_step: usize,
}

/// The proof object exchanged between prover and verifier.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Certificate {
    pub steps: Vec<CertStep>,
    pub matching: Vec<MatchEntry>,
}

/// First violated kernel condition, reported with the offending step where
/// one exists.
#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "PascalCase")]
pub enum Violation {
    #[error("step {step}: no rule {index} in {owner}'s policy")]
    UnknownRule { step: usize, owner: UserId, index: usize },
    #[error("step {step}: instance owner is not the giver")]
    OwnerNotGiver { step: usize },
    #[error("step {step}: substitution does not bind {var}")]
    IncompleteSubstitution { step: usize, var: String },
    #[error("step {step}: transfer differs from the instantiated head")]
    HeadMismatch { step: usize },
    #[error("step {step}: guard {guard} not in context")]
    GuardNotInContext { step: usize, guard: String },
    #[error("matching entry {entry} is out of range")]
    MatchingOutOfRange { entry: usize },
    #[error("step {step} body position {position} matched more than once")]
    DuplicateMatch { step: usize, position: usize },
    #[error("step {step} body position {position} has no witness")]
    MatchingIncomplete { step: usize, position: usize },
    #[error("step {step} body position {position}: witness transfer differs")]
    WitnessMismatch { step: usize, position: usize },
    #[error("witness step {witness} cited twice by giver {giver}")]
    WitnessReused { giver: UserId, witness: usize },
    #[error("step {step}: giver does not own the resource when replayed")]
    InfeasibleStep { step: usize },
    #[error("final state does not satisfy the goal")]
    GoalNotReached,
}

impl Violation {
    /// Step index for the diagnostics JSON, when the violation has one.
    pub fn step(&self) -> Option<usize> {
        match self {
            Violation::UnknownRule { step, .. }
            | Violation::OwnerNotGiver { step }
            | Violation::IncompleteSubstitution { step, .. }
            | Violation::HeadMismatch { step }
            | Violation::GuardNotInContext { step, .. }
            | Violation::DuplicateMatch { step, .. }
            | Violation::MatchingIncomplete { step, .. }
            | Violation::WitnessMismatch { step, .. }
            | Violation::InfeasibleStep { step } => Some(*step),
            Violation::MatchingOutOfRange { entry } => Some(*entry),
            Violation::WitnessReused { witness, .. } => Some(*witness),
            Violation::GoalNotReached => None,
        }
    }
}

/// Counts elementary condition evaluations, to measure verifier work.
#[derive(Debug, Default, Clone, Copy)]
pub struct CheckStats {
    pub conditions: u64,
}

impl CheckStats {
    fn tick(&mut self) {
        self.conditions += 1;
    }
}

/// Boolean kernel verdict; see [`check_detailed`] for diagnostics.
pub fn check(theory: &Theory, cert: &Certificate, goal: &Goal) -> bool {
    check_detailed(theory, cert, goal).is_ok()
}

/// Full kernel check returning the final state, or the first violated
/// condition. Work is linear in steps + matching entries, up to logarithmic
/// lookups.
pub fn check_detailed(
    theory: &Theory,
    cert: &Certificate,
    goal: &Goal,
) -> Result<OwnershipState, Violation> {
    let mut stats = CheckStats::default();
    check_inner(theory, cert, goal, &mut stats)
}

/// As [`check_detailed`], also reporting how many conditions were evaluated.
pub fn check_with_stats(
    theory: &Theory,
    cert: &Certificate,
    goal: &Goal,
) -> (Result<OwnershipState, Violation>, CheckStats) {
    let mut stats = CheckStats::default();
    let result = check_inner(theory, cert, goal, &mut stats);
    (result, stats)
}

fn check_inner(
    theory: &Theory,
    cert: &Certificate,
    goal: &Goal,
    stats: &mut CheckStats,
) -> Result<OwnershipState, Violation> {
    // Conditions 1-3: each step is a grounded instance of the giver's own
    // rule whose guards hold.
    let mut bodies: Vec<Vec<GroundGive>> = Vec::with_capacity(cert.steps.len());
    for (i, step) in cert.steps.iter().enumerate() {
        stats.tick();
        if &step.rule.owner != step.transfer.giver() {
            return Err(Violation::OwnerNotGiver { step: i });
        }
        stats.tick();
        let clause = theory
            .policies()
            .get(&step.rule.owner)
            .and_then(|p| p.rules.get(step.rule.index))
            .ok_or(Violation::UnknownRule {
                step: i,
                owner: step.rule.owner.clone(),
                index: step.rule.index,
            })?;
        let ground = instantiate(clause, &step.rule.owner, &step.subst).map_err(|e| match e {
            crate::policy::PolicyError::UnboundVariable(var) => {
                Violation::IncompleteSubstitution { step: i, var }
            }
            _ => Violation::HeadMismatch { step: i },
        })?;
        stats.tick();
        if ground.head != GroundGive::from_transfer(&step.transfer) {
            return Err(Violation::HeadMismatch { step: i });
        }
        for guard in &ground.guards {
            stats.tick();
            if !theory.facts.holds(guard) {
                return Err(Violation::GuardNotInContext { step: i, guard: guard.to_string() });
            }
        }
        bodies.push(ground.body);
    }

    // Condition 4: the matching covers every body position exactly once,
    // each witness equals the demanded atom, and no two body positions of
    // steps by the same giver share a witness.
    let mut covered: Vec<Vec<bool>> = bodies.iter().map(|b| vec![false; b.len()]).collect();
    let mut used: BTreeSet<(&UserId, usize)> = BTreeSet::new();
    for (e, entry) in cert.matching.iter().enumerate() {
        stats.tick();
        let Some(body) = bodies.get(entry.consumer_step) else {
            return Err(Violation::MatchingOutOfRange { entry: e });
        };
        if entry.body_position >= body.len() || entry.witness_step >= cert.steps.len() {
            return Err(Violation::MatchingOutOfRange { entry: e });
        }
        let slot = &mut covered[entry.consumer_step][entry.body_position];
        if *slot {
            return Err(Violation::DuplicateMatch {
                step: entry.consumer_step,
                position: entry.body_position,
            });
        }
        *slot = true;
        stats.tick();
        let demanded = &bodies[entry.consumer_step][entry.body_position];
        let witness = &cert.steps[entry.witness_step].transfer;
        if demanded != &GroundGive::from_transfer(witness) {
            return Err(Violation::WitnessMismatch {
                step: entry.consumer_step,
                position: entry.body_position,
            });
        }
        stats.tick();
        let giver = cert.steps[entry.consumer_step].transfer.giver();
        if !used.insert((giver, entry.witness_step)) {
            return Err(Violation::WitnessReused {
                giver: giver.clone(),
                witness: entry.witness_step,
            });
        }
    }
    for (i, flags) in covered.iter().enumerate() {
        for (j, done) in flags.iter().enumerate() {
            stats.tick();
            if !done {
                return Err(Violation::MatchingIncomplete { step: i, position: j });
            }
        }
    }

    // Condition 5: linear state rewriting is feasible in the given order.
    let mut state = theory.state.clone();
    for (i, step) in cert.steps.iter().enumerate() {
        stats.tick();
        state = apply_transfer(&state, &step.transfer)
            .map_err(|_| Violation::InfeasibleStep { step: i })?;
    }

    // Condition 6: the goal holds in the final state.
    stats.tick();
    if !goal.satisfied_by(&state) {
        return Err(Violation::GoalNotReached);
    }
    Ok(state)
}

/// A ground clause instance for the handshake rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundClause {
    pub owner: UserId,
    pub body: Vec<GroundGive>,
    pub head: GroundGive,
}

/// Decides whether the given clause instances can fire jointly: every body
/// atom must be witnessed, per owner injectively, by the pooled heads plus
/// the ambient atoms. Heads are not consumed. Returns the produced head
/// multiset on success.
///
/// This is the n-ary generalization of the binary contractual handshake
/// `a -o-o b, b -o-o a |- a (x) b`.
pub fn handshake_closure(
    clauses: &[GroundClause],
    available: &BTreeMap<GroundGive, u32>,
) -> (bool, BTreeMap<GroundGive, u32>) {
    let mut pool: BTreeMap<&GroundGive, u32> = BTreeMap::new();
    for clause in clauses {
        *pool.entry(&clause.head).or_insert(0) += 1;
    }
    for (atom, n) in available {
        *pool.entry(atom).or_insert(0) += n;
    }
    // Per-owner injectivity: an owner's body multiset must fit in the pool,
    // but different owners may reuse the same pool entries.
    let mut demands: BTreeMap<&UserId, BTreeMap<&GroundGive, u32>> = BTreeMap::new();
    for clause in clauses {
        let per_owner = demands.entry(&clause.owner).or_default();
        for atom in &clause.body {
            *per_owner.entry(atom).or_insert(0) += 1;
        }
    }
    for per_owner in demands.values() {
        for (atom, needed) in per_owner {
            if pool.get(atom).copied().unwrap_or(0) < *needed {
                return (false, BTreeMap::new());
            }
        }
    }
    let mut heads = BTreeMap::new();
    for clause in clauses {
        *heads.entry(clause.head.clone()).or_insert(0) += 1;
    }
    (true, heads)
}
