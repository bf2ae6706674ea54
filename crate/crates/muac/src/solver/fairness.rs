//! Per-user acceptance of computations and whole-computation fairness.
//!
//! A user accepts a computation if every one of their outgoing transfers can
//! be justified by an instance of one of their own rules, with all grounded
//! guards holding and the instances' body atoms injectively witnessed by
//! steps of the computation.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{Computation, Context, Transfer, UserId};
use crate::muacl::MatchEntry;
use crate::policy::{GroundGive, Policy, RuleInstance};

use super::{candidates_for, Candidate, Pattern};

/// The instances and matching entries that justify one user's steps.
pub(crate) struct Justification {
    /// step index -> the rule instance justifying it
    pub instances: BTreeMap<usize, RuleInstance>,
    pub matching: Vec<MatchEntry>,
}

/// Users that could appear in a substitution when evaluating `c`: anyone in
/// the initial state, a step, a fact, plus the evaluating user.
fn computation_universe(user: &UserId, c: &Computation, ctx: &Context) -> Vec<UserId> {
    let mut users: BTreeSet<UserId> = c.initial.users().cloned().collect();
    for t in &c.steps {
        users.insert(t.giver().clone());
        users.insert(t.receiver().clone());
    }
    users.extend(ctx.users().into_iter().cloned());
    users.insert(user.clone());
    users.into_iter().collect()
}

/// Counts how many steps carry each transfer value.
fn step_counts(steps: &[Transfer]) -> BTreeMap<GroundGive, Vec<usize>> {
    let mut counts: BTreeMap<GroundGive, Vec<usize>> = BTreeMap::new();
    for (i, t) in steps.iter().enumerate() {
        counts.entry(GroundGive::from_transfer(t)).or_default().push(i);
    }
    counts
}

/// Searches for instances covering every step of `user` plus an injective
/// witness assignment for the union of their body atoms.
pub(crate) fn justify_user(
    user: &UserId,
    steps: &[Transfer],
    policy: &Policy,
    ctx: &Context,
    universe: &[UserId],
) -> Option<Justification> {
    let own_steps: Vec<usize> = steps
        .iter()
        .enumerate()
        .filter(|(_, t)| t.giver() == user)
        .map(|(i, _)| i)
        .collect();
    if own_steps.is_empty() {
        return Some(Justification { instances: BTreeMap::new(), matching: Vec::new() });
    }
    let witnesses = step_counts(steps);
    // Candidates per own step: instances whose grounded head is the transfer.
    let policies: BTreeMap<UserId, Policy> = [(user.clone(), policy.clone())].into();
    let per_step: Vec<Vec<Candidate>> = own_steps
        .iter()
        .map(|&i| {
            let pattern = Pattern::exact(&GroundGive::from_transfer(&steps[i]));
            candidates_for(&pattern, &policies, ctx, universe)
        })
        .collect();

    fn assign(
        own_steps: &[usize],
        per_step: &[Vec<Candidate>],
        depth: usize,
        demanded: &mut Vec<(usize, usize, GroundGive)>,
        witnesses: &BTreeMap<GroundGive, Vec<usize>>,
        chosen: &mut Vec<Candidate>,
    ) -> Option<Vec<MatchEntry>> {
        if depth == own_steps.len() {
            // Injective witness assignment; edges are equality-based, so a
            // per-value count check suffices and the first free indices work.
            let mut cursor: BTreeMap<&GroundGive, usize> = BTreeMap::new();
            let mut matching = Vec::new();
            for (consumer, position, atom) in demanded.iter() {
                let slots = witnesses.get(atom)?;
                let at = cursor.entry(atom).or_insert(0);
                let witness = *slots.get(*at)?;
                *at += 1;
                matching.push(MatchEntry {
                    consumer_step: *consumer,
                    body_position: *position,
                    witness_step: witness,
                });
            }
            return Some(matching);
        }
        let step = own_steps[depth];
        for cand in &per_step[depth] {
            let before = demanded.len();
            for (position, atom) in cand.ground.body.iter().enumerate() {
                demanded.push((step, position, atom.clone()));
            }
            chosen.push(cand.clone());
            if let Some(matching) =
                assign(own_steps, per_step, depth + 1, demanded, witnesses, chosen)
            {
                return Some(matching);
            }
            chosen.pop();
            demanded.truncate(before);
        }
        None
    }

    let mut demanded = Vec::new();
    let mut chosen = Vec::new();
    let matching = assign(&own_steps, &per_step, 0, &mut demanded, &witnesses, &mut chosen)?;
    let instances = own_steps
        .iter()
        .zip(&chosen)
        .map(|(&i, cand)| {
            (
                i,
                RuleInstance {
                    owner: cand.owner.clone(),
                    rule_index: cand.rule_index,
                    substitution: cand.subst.clone(),
                },
            )
        })
        .collect();
    Some(Justification { instances, matching })
}

/// Does `user` accept the computation under their policy? Steps by other
/// givers impose no condition on `user`.
pub fn accepted_by(user: &UserId, c: &Computation, policy: &Policy, ctx: &Context) -> bool {
    let universe = computation_universe(user, c, ctx);
    justify_user(user, &c.steps, policy, ctx, &universe).is_some()
}

/// A computation is fair when every user in the universe accepts it; users
/// without a policy grant nothing.
pub fn is_fair(c: &Computation, policies: &BTreeMap<UserId, Policy>, ctx: &Context) -> bool {
    let mut users: BTreeSet<UserId> = c.initial.users().cloned().collect();
    for t in &c.steps {
        users.insert(t.giver().clone());
        users.insert(t.receiver().clone());
    }
    users.extend(policies.keys().cloned());
    users.extend(ctx.users().into_iter().cloned());
    users.iter().all(|user| {
        let empty;
        let policy = match policies.get(user) {
            Some(p) => p,
            None => {
                empty = Policy::empty(user.clone());
                &empty
            }
        };
        accepted_by(user, c, policy, ctx)
    })
}
