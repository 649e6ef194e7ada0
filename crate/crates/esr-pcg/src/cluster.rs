//! Deterministic simulation of a distributed-memory cluster.
//!
//! Nodes are plain structs driven by a single-threaded loop; messages are
//! value copies, reductions run in ascending node order, and every run with
//! the same inputs produces bit-identical state. Fail-stop failures erase a
//! node's dynamic data; static inputs (matrix rows, right-hand side,
//! preconditioner factors) model reliable external storage and survive.
//!
//! One product exchange per iteration ships the minimal send sets plus the
//! planned redundant elements. Receivers keep everything they are sent in a
//! two-generation backup store: the copies of the current and previous
//! search direction blocks that recovery draws from.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cholesky::DenseCholesky;
use crate::error::{Error, Result};
use crate::matrix::SparseMatrix;
use crate::partition::BlockRowPartition;
use crate::pattern::{compute_send_sets, CommPattern};
use crate::plan::{LatencyModel, RedundancyPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreconditionerKind {
    Identity,
    BlockJacobiExact,
}

impl FromStr for PreconditionerKind {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        match text {
            "identity" => Ok(PreconditionerKind::Identity),
            "block-jacobi" | "block-jacobi-exact" => Ok(PreconditionerKind::BlockJacobiExact),
            other => Err(Error::InvalidArgument(format!(
                "unknown preconditioner '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum LocalPreconditioner {
    Identity,
    BlockJacobi(DenseCholesky),
}

/// Latency-bandwidth cost model constants.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub latency: LatencyModel,
    /// Cost per transferred vector element.
    pub per_element: f64,
}

impl CostModel {
    pub fn new(latency: LatencyModel, per_element: f64) -> Result<Self> {
        if per_element <= 0.0 {
            return Err(Error::InvalidArgument(
                "per-element cost must be positive".into(),
            ));
        }
        Ok(CostModel {
            latency,
            per_element,
        })
    }
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            latency: LatencyModel::constant(1.0).unwrap(),
            per_element: 0.01,
        }
    }
}

/// Communication counters. Model time is split into the plain product
/// traffic, the redundancy payload and the recovery traffic so that
/// overhead decompositions are exact instead of approximate.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CommStats {
    pub messages: u64,
    pub elements_sent: u64,
    pub extra_elements: u64,
    pub extra_edges: u64,
    pub suppressed_messages: u64,
    pub allreduce_count: u64,
    pub model_time_base: f64,
    pub model_time_extra: f64,
    pub model_time_recovery: f64,
}

impl CommStats {
    pub fn model_time(&self) -> f64 {
        (self.model_time_base + self.model_time_extra) + self.model_time_recovery
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Exchange {
        iteration: usize,
        messages: u64,
        elements: u64,
        extra_elements: u64,
    },
    Allreduce {
        count: u64,
    },
    Failure {
        iteration: usize,
        nodes: Vec<usize>,
    },
    RecoveryRestart {
        iteration: usize,
        nodes: Vec<usize>,
    },
    RecoveryComplete {
        iteration: usize,
        nodes: Vec<usize>,
        restarts: usize,
    },
}

/// Which generation of a backed-up search direction block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackupAge {
    Current,
    Previous,
}

/// When a failure event fires: after the product exchange of the given
/// iteration, or while a reconstruction is in flight (checked between
/// recovery stages, forcing a restart over the enlarged failed set).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureTrigger {
    AtIteration(usize),
    DuringRecovery,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub trigger: FailureTrigger,
    pub nodes: BTreeSet<usize>,
}

/// Ordered fail-stop events injected into a run. During-recovery events are
/// consumed one at a time, each restarting the ongoing reconstruction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureSchedule {
    pub events: Vec<FailureEvent>,
}

impl FailureSchedule {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn at_iteration(iteration: usize, nodes: impl IntoIterator<Item = usize>) -> Self {
        FailureSchedule {
            events: vec![FailureEvent {
                trigger: FailureTrigger::AtIteration(iteration),
                nodes: nodes.into_iter().collect(),
            }],
        }
    }

    pub fn push_at_iteration(&mut self, iteration: usize, nodes: impl IntoIterator<Item = usize>) {
        self.events.push(FailureEvent {
            trigger: FailureTrigger::AtIteration(iteration),
            nodes: nodes.into_iter().collect(),
        });
    }

    pub fn push_during_recovery(&mut self, nodes: impl IntoIterator<Item = usize>) {
        self.events.push(FailureEvent {
            trigger: FailureTrigger::DuringRecovery,
            nodes: nodes.into_iter().collect(),
        });
    }

    /// Static validation: node ids in range, no event larger than the
    /// tolerated simultaneous failure count, at most one event per
    /// iteration, and during-recovery events only after a triggering one.
    pub fn validate(&self, node_count: usize, redundancy: usize) -> Result<()> {
        let mut seen_iterations = BTreeSet::new();
        let mut seen_at_event = false;
        for event in &self.events {
            if event.nodes.is_empty() {
                return Err(Error::Config("failure event with no nodes".into()));
            }
            if let Some(&max) = event.nodes.iter().next_back() {
                if max >= node_count {
                    return Err(Error::Config(format!(
                        "failure event names node {max}, cluster has {node_count}"
                    )));
                }
            }
            if event.nodes.len() > redundancy {
                return Err(Error::Config(format!(
                    "event fails {} nodes simultaneously, redundancy is {redundancy}",
                    event.nodes.len()
                )));
            }
            match event.trigger {
                FailureTrigger::AtIteration(t) => {
                    if !seen_iterations.insert(t) {
                        return Err(Error::Config(format!(
                            "two failure events at iteration {t}"
                        )));
                    }
                    seen_at_event = true;
                }
                FailureTrigger::DuringRecovery => {
                    if !seen_at_event {
                        return Err(Error::Config(
                            "during-recovery event without a preceding iteration event".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Received copies of one owner's search direction elements, two
/// generations deep. `indices` is the static sorted set of global indices
/// this holder receives from that owner every exchange.
#[derive(Debug, Clone)]
pub(crate) struct BackupSlot {
    pub(crate) indices: Vec<usize>,
    pub(crate) current: Vec<f64>,
    pub(crate) previous: Vec<f64>,
    pub(crate) has_current: bool,
    pub(crate) has_previous: bool,
}

impl BackupSlot {
    fn new(indices: Vec<usize>) -> Self {
        let len = indices.len();
        BackupSlot {
            indices,
            current: vec![0.0; len],
            previous: vec![0.0; len],
            has_current: false,
            has_previous: false,
        }
    }

    pub(crate) fn get(&self, age: BackupAge, element: usize) -> Option<f64> {
        let pos = self.indices.binary_search(&element).ok()?;
        match age {
            BackupAge::Current if self.has_current => Some(self.current[pos]),
            BackupAge::Previous if self.has_previous => Some(self.previous[pos]),
            _ => None,
        }
    }
}

/// Dynamic per-node state; erased in full by a node failure.
#[derive(Debug, Clone)]
pub struct NodeDynamic {
    pub(crate) x: Vec<f64>,
    pub(crate) r: Vec<f64>,
    pub(crate) z: Vec<f64>,
    pub(crate) p: Vec<f64>,
    pub(crate) u: Vec<f64>,
    /// Retained previous search direction block (zero before iteration 1).
    pub(crate) p_prev: Vec<f64>,
    // replicated scalars
    pub(crate) alpha: f64,
    pub(crate) beta: f64,
    pub(crate) beta_prev: f64,
    pub(crate) rho_dot: f64,
    /// Copies received from other owners, keyed by owner id.
    pub(crate) backups: BTreeMap<usize, BackupSlot>,
    /// Length-n halo buffer for the product; NaN outside the stored pattern.
    pub(crate) scratch: Vec<f64>,
    /// How many failure notifications this node has observed.
    pub(crate) notified_failures: u64,
}

/// One virtual compute node: static inputs plus optional dynamic state.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub(crate) id: usize,
    pub(crate) range: std::ops::Range<usize>,
    // static data, retrievable from reliable storage after a failure
    pub(crate) a_rows: SparseMatrix,
    pub(crate) b_seg: Vec<f64>,
    pub(crate) precond: LocalPreconditioner,
    // dynamic data; None while the node is failed
    pub(crate) dynamic: Option<NodeDynamic>,
}

impl NodeState {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.range.clone()
    }

    pub fn dynamic(&self) -> Option<&NodeDynamic> {
        self.dynamic.as_ref()
    }
}

impl NodeDynamic {
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn residual(&self) -> &[f64] {
        &self.r
    }

    pub fn search_direction(&self) -> &[f64] {
        &self.p
    }

    pub fn previous_direction(&self) -> &[f64] {
        &self.p_prev
    }

    pub fn backup_copy(&self, owner: usize, age: BackupAge, element: usize) -> Option<f64> {
        self.backups.get(&owner)?.get(age, element)
    }

    pub fn notified_failures(&self) -> u64 {
        self.notified_failures
    }
}

/// Static description of one message: owner -> receiver with the merged
/// sorted element set, split into product and redundancy parts.
#[derive(Debug, Clone)]
struct SendEdge {
    to: usize,
    indices: Vec<usize>,
    n_spmv: usize,
    n_extra: usize,
}

pub struct Cluster {
    a: Arc<SparseMatrix>,
    b: Vec<f64>,
    part: BlockRowPartition,
    pattern: CommPattern,
    plan: RedundancyPlan,
    cost: CostModel,
    nodes: Vec<NodeState>,
    failed: BTreeSet<usize>,
    send_edges: Vec<Vec<SendEdge>>,
    base_time_per_exchange: f64,
    extra_time_per_exchange: f64,
    pub stats: CommStats,
    trace: Option<Vec<TraceEvent>>,
}

/// Builds the cluster: distributes block rows of `a` and segments of `b`,
/// factorizes the local preconditioner blocks, and lays out the static
/// message edges implied by the pattern and the plan.
pub fn build_cluster(
    a: SparseMatrix,
    b: Vec<f64>,
    part: BlockRowPartition,
    plan: RedundancyPlan,
    kind: PreconditionerKind,
    cost: CostModel,
) -> Result<Cluster> {
    if a.n_rows() != a.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "system matrix is {}x{}",
            a.n_rows(),
            a.n_cols()
        )));
    }
    if a.n_rows() != part.n() || b.len() != part.n() {
        return Err(Error::DimensionMismatch(format!(
            "matrix order {}, partition over {}, rhs length {}",
            a.n_rows(),
            part.n(),
            b.len()
        )));
    }
    if plan.node_count() != part.node_count() {
        return Err(Error::Config(format!(
            "plan is for {} nodes, partition has {}",
            plan.node_count(),
            part.node_count()
        )));
    }
    a.check_spd_structure()?;
    let pattern = compute_send_sets(&a, &part)?;
    let n = part.n();
    let node_count = part.node_count();
    let all_cols: Vec<usize> = (0..n).collect();

    let mut send_edges: Vec<Vec<SendEdge>> = Vec::with_capacity(node_count);
    for i in 0..node_count {
        // receiver -> (spmv part, extra part)
        let mut per_receiver: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for r in pattern.receivers(i) {
            per_receiver.entry(r).or_default().0 = pattern.send_set(i, r).to_vec();
        }
        for k in 1..=plan.redundancy() {
            let extra = plan.extra_set(i, k);
            if !extra.is_empty() {
                per_receiver
                    .entry(plan.destination(i, k))
                    .or_default()
                    .1 = extra.to_vec();
            }
        }
        let edges = per_receiver
            .into_iter()
            .map(|(to, (spmv, extra))| {
                let n_spmv = spmv.len();
                let n_extra = extra.len();
                let mut indices = spmv;
                indices.extend_from_slice(&extra);
                indices.sort_unstable();
                debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
                SendEdge {
                    to,
                    indices,
                    n_spmv,
                    n_extra,
                }
            })
            .collect();
        send_edges.push(edges);
    }

    // static per-exchange model time
    let mut base_time_per_exchange = 0.0f64;
    for edges in &send_edges {
        for e in edges {
            if e.n_spmv > 0 {
                let t = cost.latency.base() + e.n_spmv as f64 * cost.per_element;
                base_time_per_exchange = base_time_per_exchange.max(t);
            }
        }
    }
    let mut extra_time_per_exchange = 0.0f64;
    for k in 1..=plan.redundancy() {
        let mut round_max = 0.0f64;
        for i in 0..node_count {
            let d = plan.destination(i, k);
            let extra_len = plan.extra_set(i, k).len();
            let backup_only = pattern.send_set(i, d).is_empty() && extra_len > 0;
            let lam = if backup_only { cost.latency.get(i, k) } else { 0.0 };
            round_max = round_max.max(lam + extra_len as f64 * cost.per_element);
        }
        extra_time_per_exchange += round_max;
    }

    let mut nodes = Vec::with_capacity(node_count);
    for i in 0..node_count {
        let range = part.range(i);
        let rows: Vec<usize> = range.clone().collect();
        let a_rows = a.extract_submatrix(&rows, &all_cols)?;
        let b_seg = b[range.clone()].to_vec();
        let precond = match kind {
            PreconditionerKind::Identity => LocalPreconditioner::Identity,
            PreconditionerKind::BlockJacobiExact => {
                let block = a.extract_submatrix(&rows, &rows)?;
                LocalPreconditioner::BlockJacobi(DenseCholesky::factorize(&block).map_err(
                    |e| Error::NotSpd(format!("local block of node {i}: {e}")),
                )?)
            }
        };
        nodes.push(NodeState {
            id: i,
            range,
            a_rows,
            b_seg,
            precond,
            dynamic: None,
        });
    }

    let mut cluster = Cluster {
        a: Arc::new(a),
        b,
        part,
        pattern,
        plan,
        cost,
        nodes,
        failed: BTreeSet::new(),
        send_edges,
        base_time_per_exchange,
        extra_time_per_exchange,
        stats: CommStats::default(),
        trace: None,
    };
    for i in 0..node_count {
        cluster.nodes[i].dynamic = Some(cluster.fresh_dynamic(i));
    }
    Ok(cluster)
}

impl Cluster {
    pub fn node_count(&self) -> usize {
        self.part.node_count()
    }

    pub fn n(&self) -> usize {
        self.part.n()
    }

    pub fn partition(&self) -> &BlockRowPartition {
        &self.part
    }

    pub fn pattern(&self) -> &CommPattern {
        &self.pattern
    }

    pub fn plan(&self) -> &RedundancyPlan {
        &self.plan
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn node(&self, i: usize) -> &NodeState {
        &self.nodes[i]
    }

    pub fn failed_set(&self) -> &BTreeSet<usize> {
        &self.failed
    }

    /// A node participates in normal operation only when it has dynamic
    /// state and is not marked failed (replacements stay marked until
    /// recovery finishes).
    pub fn is_live(&self, i: usize) -> bool {
        !self.failed.contains(&i) && self.nodes[i].dynamic.is_some()
    }

    pub fn enable_trace(&mut self) {
        if self.trace.is_none() {
            self.trace = Some(Vec::new());
        }
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        self.trace.take().unwrap_or_default()
    }

    pub(crate) fn push_trace(&mut self, event: TraceEvent) {
        if let Some(t) = self.trace.as_mut() {
            t.push(event);
        }
    }

    /// Static model time of one exchange without redundancy payload.
    pub fn per_exchange_base_time(&self) -> f64 {
        self.base_time_per_exchange
    }

    /// Static model time the redundancy payload adds to one exchange.
    pub fn per_exchange_extra_time(&self) -> f64 {
        self.extra_time_per_exchange
    }

    pub(crate) fn dynamic(&self, i: usize) -> &NodeDynamic {
        self.nodes[i]
            .dynamic
            .as_ref()
            .expect("node has no dynamic state")
    }

    pub(crate) fn dynamic_mut(&mut self, i: usize) -> &mut NodeDynamic {
        self.nodes[i]
            .dynamic
            .as_mut()
            .expect("node has no dynamic state")
    }

    /// Recomputes the owned block of `u = A p` from the node's halo buffer.
    pub(crate) fn recompute_u(&mut self, i: usize) {
        let node = &mut self.nodes[i];
        let dynamic = node.dynamic.as_mut().expect("node has no dynamic state");
        node.a_rows.spmv_into(&dynamic.scratch, &mut dynamic.u);
    }

    fn fresh_dynamic(&self, i: usize) -> NodeDynamic {
        let len = self.part.size(i);
        let mut backups = BTreeMap::new();
        for (owner, edges) in self.send_edges.iter().enumerate() {
            for e in edges {
                if e.to == i {
                    backups.insert(owner, BackupSlot::new(e.indices.clone()));
                }
            }
        }
        NodeDynamic {
            x: vec![0.0; len],
            r: vec![0.0; len],
            z: vec![0.0; len],
            p: vec![0.0; len],
            u: vec![0.0; len],
            p_prev: vec![0.0; len],
            alpha: 0.0,
            beta: 0.0,
            beta_prev: 0.0,
            rho_dot: 0.0,
            backups,
            scratch: vec![f64::NAN; self.part.n()],
            notified_failures: 0,
        }
    }

    /// One synchronous product exchange: ships the send sets plus the
    /// planned redundant elements, ages the backup stores, and computes
    /// `u = A p` block rows on every live node.
    pub fn exchange_spmv(&mut self, iteration: usize) -> Result<()> {
        let node_count = self.node_count();
        // collect messages from live owners
        let mut deliveries: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        let mut messages = 0u64;
        let mut elements = 0u64;
        let mut extras = 0u64;
        let mut extra_edges = 0u64;
        let mut suppressed = 0u64;
        for i in 0..node_count {
            if !self.is_live(i) {
                continue;
            }
            let start = self.nodes[i].range.start;
            for e in &self.send_edges[i] {
                let p = &self.nodes[i].dynamic.as_ref().unwrap().p;
                if self.failed.contains(&e.to) || self.nodes[e.to].dynamic.is_none() {
                    suppressed += 1;
                    continue;
                }
                let values: Vec<f64> = e.indices.iter().map(|&g| p[g - start]).collect();
                messages += 1;
                elements += (e.n_spmv + e.n_extra) as u64;
                extras += e.n_extra as u64;
                if e.n_spmv == 0 && e.n_extra > 0 {
                    extra_edges += 1;
                }
                deliveries.push((e.to, i, values));
            }
        }
        // deliver: age the slot, store the new generation, fill the halo
        for (to, from, values) in deliveries {
            let node = self.nodes[to].dynamic.as_mut().unwrap();
            let slot = node
                .backups
                .get_mut(&from)
                .expect("delivery without a slot");
            std::mem::swap(&mut slot.current, &mut slot.previous);
            slot.has_previous = slot.has_current;
            slot.current.copy_from_slice(&values);
            slot.has_current = true;
            for (pos, &g) in slot.indices.iter().enumerate() {
                node.scratch[g] = slot.current[pos];
            }
        }
        // poison halo positions owned by failed senders so lost data can
        // never leak through stale buffers
        if !self.failed.is_empty() {
            let failed: Vec<usize> = self.failed.iter().copied().collect();
            for &f in &failed {
                let edges: Vec<(usize, Vec<usize>)> = self.send_edges[f]
                    .iter()
                    .map(|e| (e.to, e.indices.clone()))
                    .collect();
                for (to, indices) in edges {
                    if let Some(node) = self.nodes[to].dynamic.as_mut() {
                        for g in indices {
                            node.scratch[g] = f64::NAN;
                        }
                    }
                }
            }
        }
        // compute the owned block of u = A p on each live node
        for k in 0..node_count {
            if !self.is_live(k) {
                continue;
            }
            let node = &mut self.nodes[k];
            let start = node.range.start;
            let end = node.range.end;
            let dynamic = node.dynamic.as_mut().unwrap();
            for g in start..end {
                dynamic.scratch[g] = dynamic.p[g - start];
            }
            node.a_rows.spmv_into(&dynamic.scratch, &mut dynamic.u);
        }

        self.stats.messages += messages;
        self.stats.elements_sent += elements;
        self.stats.extra_elements += extras;
        self.stats.extra_edges += extra_edges;
        self.stats.suppressed_messages += suppressed;
        self.stats.model_time_base += self.base_time_per_exchange;
        self.stats.model_time_extra += self.extra_time_per_exchange;
        if suppressed > 0 {
            self.notify_survivors(0);
        }
        self.push_trace(TraceEvent::Exchange {
            iteration,
            messages,
            elements,
            extra_elements: extras,
        });
        Ok(())
    }

    /// Fixed-order global sum: contributions are added in ascending node id
    /// and the result is identical on every node regardless of scheduling.
    pub fn allreduce_sum(&mut self, contributions: &[f64]) -> Result<f64> {
        if contributions.len() != self.node_count() {
            return Err(Error::InvalidArgument(format!(
                "allreduce expects {} contributions, got {}",
                self.node_count(),
                contributions.len()
            )));
        }
        if let Some(&f) = self.failed.iter().next() {
            return Err(Error::InvalidArgument(format!(
                "allreduce with failed node {f}: contribution missing"
            )));
        }
        let mut acc = 0.0;
        for &v in contributions {
            acc += v;
        }
        self.stats.allreduce_count += 1;
        self.push_trace(TraceEvent::Allreduce {
            count: self.stats.allreduce_count,
        });
        Ok(acc)
    }

    /// Reduces a per-node quantity and stores the replicated result on every
    /// node through `store`.
    pub(crate) fn allreduce_scalar(
        &mut self,
        compute: impl Fn(&NodeState, &NodeDynamic) -> f64,
        store: impl Fn(&mut NodeDynamic, f64),
    ) -> Result<f64> {
        let contributions: Vec<f64> = (0..self.node_count())
            .map(|i| {
                let node = &self.nodes[i];
                node.dynamic
                    .as_ref()
                    .map(|d| compute(node, d))
                    .unwrap_or(f64::NAN)
            })
            .collect();
        let total = self.allreduce_sum(&contributions)?;
        for i in 0..self.node_count() {
            if let Some(d) = self.nodes[i].dynamic.as_mut() {
                store(d, total);
            }
        }
        Ok(total)
    }

    /// Erases the dynamic data of the given nodes and notifies survivors.
    pub fn inject_failures(&mut self, nodes: &BTreeSet<usize>, iteration: usize) -> Result<()> {
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("empty failure set".into()));
        }
        for &f in nodes {
            if f >= self.node_count() {
                return Err(Error::InvalidArgument(format!("node {f} out of range")));
            }
            if self.failed.contains(&f) && self.nodes[f].dynamic.is_none() {
                return Err(Error::InvalidArgument(format!(
                    "node {f} has already failed"
                )));
            }
        }
        for &f in nodes {
            self.nodes[f].dynamic = None;
            self.failed.insert(f);
        }
        self.notify_survivors(nodes.len() as u64);
        self.push_trace(TraceEvent::Failure {
            iteration,
            nodes: nodes.iter().copied().collect(),
        });
        Ok(())
    }

    fn notify_survivors(&mut self, count: u64) {
        for i in 0..self.node_count() {
            if self.failed.contains(&i) {
                continue;
            }
            if let Some(d) = self.nodes[i].dynamic.as_mut() {
                d.notified_failures += count.max(1);
            }
        }
    }

    /// Provisions replacement nodes for every currently failed id: same id
    /// and row range, static data reloaded, dynamic data fresh and empty.
    /// The ids stay marked failed until recovery completes.
    pub fn provision_replacements(&mut self) -> Result<Vec<usize>> {
        let failed: Vec<usize> = self.failed.iter().copied().collect();
        for &f in &failed {
            if self.nodes[f].dynamic.is_none() {
                self.nodes[f].dynamic = Some(self.fresh_dynamic(f));
            }
        }
        Ok(failed)
    }

    /// Clears the failure marks once reconstruction has finished.
    pub(crate) fn mark_recovered(&mut self) {
        self.failed.clear();
    }

    pub(crate) fn add_recovery_cost(&mut self, messages: u64, elements: u64, time: f64) {
        self.stats.messages += messages;
        self.stats.elements_sent += elements;
        self.stats.model_time_recovery += time;
    }

    /// Concatenates a per-node segment into a global vector. All nodes must
    /// hold dynamic state.
    pub fn assemble_global(&self, select: impl Fn(&NodeDynamic) -> &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n());
        for i in 0..self.node_count() {
            let d = self.nodes[i]
                .dynamic
                .as_ref()
                .ok_or_else(|| Error::Unrecoverable(format!("node {i} holds no state")))?;
            out.extend_from_slice(select(d));
        }
        Ok(out)
    }

    /// Live nodes holding a copy of `(owner, element)` at the given age:
    /// the owner itself plus every holder with a valid backup. Used by the
    /// redundancy live-invariant checks.
    pub fn live_copy_holders(&self, owner: usize, element: usize, age: BackupAge) -> Vec<usize> {
        let mut holders = Vec::new();
        for i in 0..self.node_count() {
            if self.failed.contains(&i) {
                continue;
            }
            let Some(d) = self.nodes[i].dynamic.as_ref() else {
                continue;
            };
            if i == owner {
                holders.push(i);
                continue;
            }
            if d.backup_copy(owner, age, element).is_some() {
                holders.push(i);
            }
        }
        holders
    }

    /// Applies the local preconditioner block: identity copies, block
    /// Jacobi solves with the exact Cholesky factor of the diagonal block.
    pub(crate) fn apply_local_preconditioner(node: &NodeState, r_seg: &[f64]) -> Vec<f64> {
        match &node.precond {
            LocalPreconditioner::Identity => r_seg.to_vec(),
            LocalPreconditioner::BlockJacobi(chol) => chol.solve(r_seg),
        }
    }

    /// Multiplies by the local preconditioner matrix itself (the diagonal
    /// block of `A` for block Jacobi), the inverse operation of
    /// `apply_local_preconditioner`.
    pub(crate) fn apply_local_preconditioner_matrix(
        &self,
        i: usize,
        z_seg: &[f64],
    ) -> Result<Vec<f64>> {
        match &self.nodes[i].precond {
            LocalPreconditioner::Identity => Ok(z_seg.to_vec()),
            LocalPreconditioner::BlockJacobi(_) => {
                let rows: Vec<usize> = self.nodes[i].range.clone().collect();
                let block = self.a.extract_submatrix(&rows, &rows)?;
                block.spmv(z_seg)
            }
        }
    }
}
