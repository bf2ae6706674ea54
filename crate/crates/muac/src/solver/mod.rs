//! The off-chain prover: goal-directed search for fair exchange
//! certificates, plus the brute-force fairness oracle used to test the
//! policy-to-logic correspondence extensionally.

mod fairness;
mod oracle;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::model::{
    apply_transfer, Computation, Context, OwnershipState, ResourceKind, Transfer, UserId,
};
use crate::muacl::{check, Certificate, CertStep, Goal, MatchEntry, RuleRef, Theory};
use crate::policy::{instantiate, GroundGive, GroundRule, Policy, UserTerm};

pub use fairness::{accepted_by, is_fair};
pub use oracle::brute_force_solve;

/// Everything the prover needs: the community's policies, the context, the
/// current state, the goal, and a step budget.
#[derive(Debug, Clone)]
pub struct SolveRequest {
    pub policies: BTreeMap<UserId, Policy>,
    pub context: Context,
    pub state: OwnershipState,
    pub goal: Goal,
    pub max_transfers: usize,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum SolveError {
    /// No certificate exists within the bound; the search space was exhausted.
    #[error("no solution")]
    NoSolution,
    /// The step budget cut off open branches; a larger bound might succeed.
    #[error("budget exceeded")]
    BudgetExceeded,
}

/// The finite user universe of a request: state holders, policy owners,
/// fact participants, and the goal's subject.
pub(crate) fn request_universe(req: &SolveRequest) -> Vec<UserId> {
    let mut users: BTreeSet<UserId> = req.state.users().cloned().collect();
    users.extend(req.policies.keys().cloned());
    users.extend(req.context.users().into_iter().cloned());
    match &req.goal {
        Goal::OwnsAtLeast { user, .. } => {
            users.insert(user.clone());
        }
        Goal::ExactState { target } => {
            users.extend(target.users().cloned());
        }
    }
    users.into_iter().collect()
}

/// A partially specified transfer shape used to look up rule instances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Pattern {
    pub giver: Option<UserId>,
    pub resource: ResourceKind,
    pub receiver: Option<UserId>,
}

impl Pattern {
    fn exact(atom: &GroundGive) -> Self {
        Pattern {
            giver: Some(atom.giver.clone()),
            resource: atom.resource.clone(),
            receiver: Some(atom.receiver.clone()),
        }
    }

    fn matches(&self, atom: &GroundGive) -> bool {
        self.resource == atom.resource
            && self.giver.as_ref().map_or(true, |g| g == &atom.giver)
            && self.receiver.as_ref().map_or(true, |r| r == &atom.receiver)
    }
}

/// A grounded rule instance whose head fits a pattern and whose guards hold.
#[derive(Debug, Clone)]
pub(crate) struct Candidate {
    pub owner: UserId,
    pub rule_index: usize,
    pub subst: BTreeMap<String, UserId>,
    pub ground: GroundRule,
}

/// Enumerates all substitutions of `vars` over `universe`, extending `base`.
fn enumerate_substs(
    vars: &[String],
    universe: &[UserId],
    base: BTreeMap<String, UserId>,
    out: &mut Vec<BTreeMap<String, UserId>>,
) {
    match vars.split_first() {
        None => out.push(base),
        Some((var, rest)) => {
            for user in universe {
                let mut next = base.clone();
                next.insert(var.clone(), user.clone());
                enumerate_substs(rest, universe, next, out);
            }
        }
    }
}

/// All (owner, rule, substitution) triples over the universe whose grounded
/// head matches the pattern and whose grounded guards hold in the context.
/// Deterministic: owners and users lexicographic, rules by index.
pub(crate) fn candidates_for(
    pattern: &Pattern,
    policies: &BTreeMap<UserId, Policy>,
    ctx: &Context,
    universe: &[UserId],
) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (owner, policy) in policies {
        if let Some(giver) = &pattern.giver {
            if giver != owner {
                continue;
            }
        }
        for (rule_index, rule) in policy.rules.iter().enumerate() {
            if rule.head.resource != pattern.resource {
                continue;
            }
            // The head giver is Me = owner; the head receiver variable is
            // pinned by the pattern when fixed, else ranges over the universe.
            let mut base = BTreeMap::new();
            if let UserTerm::Var(v) = &rule.head.receiver {
                if let Some(receiver) = &pattern.receiver {
                    base.insert(v.clone(), receiver.clone());
                }
            }
            let free: Vec<String> = rule
                .variables()
                .into_iter()
                .filter(|v| !base.contains_key(*v))
                .map(str::to_owned)
                .collect();
            let mut substs = Vec::new();
            enumerate_substs(&free, universe, base, &mut substs);
            for subst in substs {
                let Ok(ground) = instantiate(rule, owner, &subst) else {
                    continue;
                };
                if ground.head.giver == ground.head.receiver {
                    continue;
                }
                if !pattern.matches(&ground.head) {
                    continue;
                }
                if !ground.guards.iter().all(|g| ctx.holds(g)) {
                    continue;
                }
                out.push(Candidate {
                    owner: owner.clone(),
                    rule_index,
                    subst,
                    ground,
                });
            }
        }
    }
    out
}

/// Searches for an ownership-feasible permutation of the steps by
/// backtracking over enabled transfers. Returns the reordered transfers.
pub fn find_ordering(steps: &[Transfer], initial: &OwnershipState) -> Option<Vec<Transfer>> {
    find_ordering_indices(steps, initial)
        .map(|order| order.into_iter().map(|i| steps[i].clone()).collect())
}

/// As [`find_ordering`] but returning the permutation as original indices.
pub(crate) fn find_ordering_indices(
    steps: &[Transfer],
    initial: &OwnershipState,
) -> Option<Vec<usize>> {
    fn go(
        steps: &[Transfer],
        state: &OwnershipState,
        used: &mut Vec<bool>,
        order: &mut Vec<usize>,
    ) -> bool {
        if order.len() == steps.len() {
            return true;
        }
        for i in 0..steps.len() {
            if used[i] {
                continue;
            }
            if let Ok(next) = apply_transfer(state, &steps[i]) {
                used[i] = true;
                order.push(i);
                if go(steps, &next, used, order) {
                    return true;
                }
                order.pop();
                used[i] = false;
            }
        }
        false
    }
    let mut used = vec![false; steps.len()];
    let mut order = Vec::with_capacity(steps.len());
    go(steps, initial, &mut used, &mut order).then_some(order)
}

#[derive(Debug, Clone)]
struct StepInfo {
    transfer: Transfer,
    rule: RuleRef,
    subst: BTreeMap<String, UserId>,
}

/// What the search still owes before the step set is closed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Obligation {
    /// Body position of an existing step awaiting a witness; discharged by
    /// citing an existing step or creating a new one.
    Witness { consumer: usize, position: usize, pattern: GroundGive },
    /// A user needs one more incoming unit of a kind; discharged only by
    /// creating a new step. Used for goal seeding and feasibility repair.
    Incoming { user: UserId, kind: ResourceKind },
    /// A user must shed one unit of a kind (exact-state goals only).
    Outgoing { user: UserId, kind: ResourceKind },
}

#[derive(Debug, Clone)]
struct Node {
    steps: Vec<StepInfo>,
    queue: VecDeque<Obligation>,
    matching: Vec<MatchEntry>,
    used_witness: BTreeSet<(UserId, usize)>,
}

struct Search<'a> {
    req: &'a SolveRequest,
    theory: Theory,
    universe: Vec<UserId>,
    budget: usize,
    budget_hit: bool,
    result: Option<Certificate>,
}

impl Search<'_> {
    fn dfs(&mut self, node: &Node) {
        if self.result.is_some() {
            return;
        }
        let mut node = node.clone();
        match node.queue.pop_front() {
            Some(Obligation::Witness { consumer, position, pattern }) => {
                let demander = node.steps[consumer].transfer.giver().clone();
                // Cite an existing step.
                for j in 0..node.steps.len() {
                    if GroundGive::from_transfer(&node.steps[j].transfer) == pattern
                        && !node.used_witness.contains(&(demander.clone(), j))
                    {
                        let mut next = node.clone();
                        next.matching.push(MatchEntry {
                            consumer_step: consumer,
                            body_position: position,
                            witness_step: j,
                        });
                        next.used_witness.insert((demander.clone(), j));
                        self.dfs(&next);
                        if self.result.is_some() {
                            return;
                        }
                    }
                }
                // Or create the witnessing step.
                self.create_steps(&node, &Pattern::exact(&pattern), |next, j| {
                    next.matching.push(MatchEntry {
                        consumer_step: consumer,
                        body_position: position,
                        witness_step: j,
                    });
                    next.used_witness.insert((demander.clone(), j));
                });
            }
            Some(Obligation::Incoming { user, kind }) => {
                let pattern = Pattern { giver: None, resource: kind, receiver: Some(user) };
                self.create_steps(&node, &pattern, |_, _| {});
            }
            Some(Obligation::Outgoing { user, kind }) => {
                let pattern = Pattern { giver: Some(user), resource: kind, receiver: None };
                self.create_steps(&node, &pattern, |_, _| {});
            }
            None => self.close(&node),
        }
    }

    /// Branches over every candidate step matching the pattern, appending it
    /// and its body obligations, then applying `cite` to record how the
    /// triggering obligation uses the new step.
    fn create_steps(
        &mut self,
        node: &Node,
        pattern: &Pattern,
        cite: impl Fn(&mut Node, usize),
    ) {
        if node.steps.len() >= self.budget {
            self.budget_hit = true;
            return;
        }
        let candidates =
            candidates_for(pattern, &self.req.policies, &self.req.context, &self.universe);
        for cand in candidates {
            let Ok(transfer) = cand.ground.head.to_transfer() else {
                continue;
            };
            let mut next = node.clone();
            let j = next.steps.len();
            next.steps.push(StepInfo {
                transfer,
                rule: RuleRef { owner: cand.owner.clone(), index: cand.rule_index },
                subst: cand.subst.clone(),
            });
            for (position, atom) in cand.ground.body.iter().enumerate() {
                next.queue.push_back(Obligation::Witness {
                    consumer: j,
                    position,
                    pattern: atom.clone(),
                });
            }
            cite(&mut next, j);
            self.dfs(&next);
            if self.result.is_some() {
                return;
            }
        }
    }

    /// Queue exhausted: repair resource deficits, order the steps, and test
    /// the goal; on any shortfall push a repair obligation and continue.
    fn close(&mut self, node: &Node) {
        // Net flow per (user, kind).
        let mut incoming: BTreeMap<(UserId, ResourceKind), u32> = BTreeMap::new();
        let mut outgoing: BTreeMap<(UserId, ResourceKind), u32> = BTreeMap::new();
        for step in &node.steps {
            let t = &step.transfer;
            *incoming.entry((t.receiver().clone(), t.resource().clone())).or_insert(0) += 1;
            *outgoing.entry((t.giver().clone(), t.resource().clone())).or_insert(0) += 1;
        }
        for ((user, kind), out) in &outgoing {
            let have = self.req.state.count(user, kind)
                + incoming.get(&(user.clone(), kind.clone())).copied().unwrap_or(0);
            if *out > have {
                let mut next = node.clone();
                next.queue.push_back(Obligation::Incoming {
                    user: user.clone(),
                    kind: kind.clone(),
                });
                self.dfs(&next);
                return;
            }
        }

        let transfers: Vec<Transfer> =
            node.steps.iter().map(|s| s.transfer.clone()).collect();
        let Some(order) = find_ordering_indices(&transfers, &self.req.state) else {
            // Flows balance but the steps deadlock: some giver needs the
            // resource injected before the cycle can start. Branch over the
            // possible injection points.
            let spots: BTreeSet<(UserId, ResourceKind)> = node
                .steps
                .iter()
                .map(|s| (s.transfer.giver().clone(), s.transfer.resource().clone()))
                .collect();
            for (user, kind) in spots {
                let mut next = node.clone();
                next.queue.push_back(Obligation::Incoming { user, kind });
                self.dfs(&next);
                if self.result.is_some() {
                    return;
                }
            }
            return;
        };

        let mut final_state = self.req.state.clone();
        for &i in &order {
            final_state = apply_transfer(&final_state, &transfers[i])
                .expect("ordering found by replay");
        }
        if let Some(repair) = self.goal_repair(&final_state) {
            let mut next = node.clone();
            next.queue.push_back(repair);
            self.dfs(&next);
            return;
        }

        let cert = assemble(node, &order);
        if check(&self.theory, &cert, &self.req.goal) {
            self.result = Some(cert);
        } else {
            debug_assert!(false, "search produced a certificate the kernel rejects");
        }
    }

    /// First obligation that would move the final state toward the goal, if
    /// the goal is not yet met.
    fn goal_repair(&self, final_state: &OwnershipState) -> Option<Obligation> {
        match &self.req.goal {
            Goal::OwnsAtLeast { user, kind, count } => {
                (final_state.count(user, kind) < *count).then(|| Obligation::Incoming {
                    user: user.clone(),
                    kind: kind.clone(),
                })
            }
            Goal::ExactState { target } => {
                let mut pairs: BTreeSet<(UserId, ResourceKind)> = BTreeSet::new();
                for (u, k, _) in final_state.entries() {
                    pairs.insert((u.clone(), k.clone()));
                }
                for (u, k, _) in target.entries() {
                    pairs.insert((u.clone(), k.clone()));
                }
                for (user, kind) in pairs {
                    let have = final_state.count(&user, &kind);
                    let want = target.count(&user, &kind);
                    if have < want {
                        return Some(Obligation::Incoming { user, kind });
                    }
                    if have > want {
                        return Some(Obligation::Outgoing { user, kind });
                    }
                }
                None
            }
        }
    }
}

/// Reorders the steps by the feasible ordering and remaps matching indices.
fn assemble(node: &Node, order: &[usize]) -> Certificate {
    let mut new_index = vec![0usize; order.len()];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    let steps = order
        .iter()
        .map(|&old| {
            let s = &node.steps[old];
            CertStep {
                transfer: s.transfer.clone(),
                rule: s.rule.clone(),
                subst: s.subst.clone(),
            }
        })
        .collect();
    let mut matching: Vec<MatchEntry> = node
        .matching
        .iter()
        .map(|m| MatchEntry {
            consumer_step: new_index[m.consumer_step],
            body_position: m.body_position,
            witness_step: new_index[m.witness_step],
        })
        .collect();
    matching.sort();
    Certificate { steps, matching }
}

/// Finds a kernel-valid certificate with the fewest steps within the bound.
/// Deterministic: identical requests yield identical certificates.
pub fn solve(req: &SolveRequest) -> Result<Certificate, SolveError> {
    if req.goal.satisfied_by(&req.state) {
        return Ok(Certificate::default());
    }
    if let Goal::ExactState { target } = &req.goal {
        // Transfers conserve per-kind totals.
        let kinds: BTreeSet<&ResourceKind> =
            req.state.kinds().into_iter().chain(target.kinds()).collect();
        if kinds.iter().any(|k| req.state.total(k) != target.total(k)) {
            return Err(SolveError::NoSolution);
        }
    }
    let universe = request_universe(req);
    let theory = Theory::new(&req.policies, req.context.clone(), req.state.clone());
    let mut last_budget_hit = false;
    for budget in 1..=req.max_transfers {
        let mut search = Search {
            req,
            theory: theory.clone(),
            universe: universe.clone(),
            budget,
            budget_hit: false,
            result: None,
        };
        let root = Node {
            steps: Vec::new(),
            queue: VecDeque::new(),
            matching: Vec::new(),
            used_witness: BTreeSet::new(),
        };
        search.dfs(&root);
        if let Some(cert) = search.result {
            return Ok(cert);
        }
        last_budget_hit = search.budget_hit;
    }
    if last_budget_hit {
        Err(SolveError::BudgetExceeded)
    } else {
        Err(SolveError::NoSolution)
    }
}

/// Convenience wrapper building a [`Computation`] from certificate steps.
pub fn certificate_computation(initial: &OwnershipState, cert: &Certificate) -> Computation {
    Computation {
        initial: initial.clone(),
        steps: cert.steps.iter().map(|s| s.transfer.clone()).collect(),
    }
}
