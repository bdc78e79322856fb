//! Leveled knowledge graph.
//!
//! L0 nodes point at raw data, L1 nodes name a region of it, L2 nodes (with
//! any number of sub-levels) hold abstractions such as detected events, and
//! L* nodes hold goals. Evidence only ever flows upward.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::aggregate::{EventKind, EventOfInterest};
use crate::segmentation::RegimeChange;
use crate::timeseries::SeriesId;

pub type NodeId = usize;
pub type EdgeId = usize;

pub const ABSTRACTION_OF: &str = "abstraction_of";
pub const PARTICIPATES_IN: &str = "participates_in";
pub const PRECEDES: &str = "precedes";
pub const CORRELATES_WITH: &str = "correlates_with";

/// Abstraction level. The derived order is the abstraction order:
/// `L0 < L1 < L2(0) < L2(1) < ... < Star`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    L0,
    L1,
    L2(u32),
    Star,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::L0 => write!(f, "L0"),
            Level::L1 => write!(f, "L1"),
            Level::L2(k) => write!(f, "L2.{k}"),
            Level::Star => write!(f, "L*"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Symmetric,
    AntiSymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    BottomUp,
    InjectedExpert,
}

/// Reference to subsymbolic data.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    /// Timestamps `[start_ts, end_ts)` of one series.
    SeriesSlice { series_id: SeriesId, start_ts: i64, end_ts: i64 },
    /// Histogram bins `[first_bin, last_bin]`.
    HistogramBins { first_bin: i64, last_bin: i64 },
    /// One detected event of a run.
    Event { event_id: usize, detection_bin: i64, peak_bin: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeNode {
    pub node_id: NodeId,
    pub level: Level,
    pub label: String,
    pub payload: Option<Payload>,
    pub provenance: Provenance,
    /// Timestamp of the newest evidence seen.
    pub freshness: i64,
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEdge {
    pub edge_id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub relation: String,
    pub kind: RelationKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetamodelError {
    #[error("payload {0:?} does not resolve to known data")]
    DanglingPayload(Payload),
    #[error("{relation}({to}, {from}) already exists; {relation} is anti-symmetric")]
    AntiSymmetryViolation { relation: String, from: NodeId, to: NodeId },
    #[error("abstraction_of must go strictly upward, got {from} -> {to}")]
    LevelViolation { from: Level, to: Level },
    #[error("relation {relation} is {existing:?}, not {requested:?}")]
    RelationKindMismatch {
        relation: String,
        existing: RelationKind,
        requested: RelationKind,
    },
    #[error("no node {0}")]
    UnknownNode(NodeId),
    #[error("evidence for {0} has no registered node")]
    UnregisteredEvidence(String),
    #[error("goal node sits at {0}, below L2")]
    GoalTooLow(Level),
    #[error("node {0} is outside the focus of attention")]
    OutOfScopeNeed(NodeId),
    #[error("expert knowledge can only enter at L2 or above, got {0}")]
    ExpertBelowL2(Level),
    #[error("{level} node {label:?} {problem}")]
    PayloadRule { level: Level, label: String, problem: &'static str },
    #[error("no pending request {0}")]
    UnknownRequest(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

type Result<T> = std::result::Result<T, MetamodelError>;

/// Evidence for a bottom-up refresh.
#[derive(Debug, Clone, PartialEq)]
pub enum Evidence {
    Change(RegimeChange),
    Event(EventOfInterest),
    /// Raw samples of a series delivered to the symbolic side.
    Samples { series_id: SeriesId, start_ts: i64, end_ts: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Refreshed,
    Created,
    Recomputed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub node_id: NodeId,
    pub level: Level,
    pub action: Action,
}

/// What a sub-focus asks for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Need {
    /// Raw data behind the given member nodes over `[start_ts, end_ts)`.
    Data { nodes: Vec<NodeId>, start_ts: i64, end_ts: i64 },
    /// Nodes related to the given members, optionally by one relation.
    Query { nodes: Vec<NodeId>, relation: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Target {
    SubsymbolicData { series_ids: Vec<SeriesId>, start_ts: i64, end_ts: i64 },
    SymbolicQuery { nodes: Vec<NodeId>, relation: Option<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Pending,
    Answered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Answer {
    /// Slices of raw data now available for the requested series.
    Data { slices: Vec<Payload> },
    Nodes { nodes: Vec<NodeId> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubFocusRequest {
    pub request_id: usize,
    pub target: Target,
    pub status: RequestStatus,
    pub result: Option<Answer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusOfAttention {
    pub foa_id: usize,
    pub goal_node: NodeId,
    pub member_nodes: BTreeSet<NodeId>,
    pub sub_foci: Vec<SubFocusRequest>,
}

/// Invariant breach found by [`KnowledgeGraph::check_invariants`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation(pub String);

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    nodes: Vec<KnowledgeNode>,
    edges: Vec<KnowledgeEdge>,
    by_triple: HashMap<(NodeId, NodeId, String), EdgeId>,
    relation_kinds: BTreeMap<String, RelationKind>,
    sources: BTreeMap<SeriesId, (i64, i64)>,
    regions: HashMap<(Payload, String), (NodeId, NodeId)>,
    series_l1: BTreeMap<SeriesId, NodeId>,
    event_nodes: BTreeMap<usize, NodeId>,
    outgoing: Vec<Vec<EdgeId>>,
    incoming: Vec<Vec<EdgeId>>,
    next_foa: usize,
    next_request: usize,
}

fn fixed_kind(relation: &str) -> Option<RelationKind> {
    match relation {
        ABSTRACTION_OF | PARTICIPATES_IN | PRECEDES => Some(RelationKind::AntiSymmetric),
        CORRELATES_WITH => Some(RelationKind::Symmetric),
        _ => None,
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[KnowledgeNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[KnowledgeEdge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Result<&KnowledgeNode> {
        self.nodes.get(id).ok_or(MetamodelError::UnknownNode(id))
    }

    pub fn l1_of(&self, series_id: &SeriesId) -> Option<NodeId> {
        self.series_l1.get(series_id).copied()
    }

    pub fn event_node(&self, event_id: usize) -> Option<NodeId> {
        self.event_nodes.get(&event_id).copied()
    }

    /// Declares raw data that payloads may refer to.
    pub fn attach_source(&mut self, series_id: SeriesId, start_ts: i64, end_ts: i64) {
        self.sources.insert(series_id, (start_ts, end_ts));
    }

    fn resolves(&self, payload: &Payload) -> bool {
        match payload {
            Payload::SeriesSlice { series_id, start_ts, end_ts } => self
                .sources
                .get(series_id)
                .is_some_and(|&(lo, hi)| lo <= *start_ts && start_ts < end_ts && *end_ts <= hi),
            Payload::HistogramBins { first_bin, last_bin } => first_bin <= last_bin,
            Payload::Event { .. } => true,
        }
    }

    /// Adds a node after checking the payload and provenance rules.
    pub fn add_node(
        &mut self,
        level: Level,
        label: impl Into<String>,
        payload: Option<Payload>,
        provenance: Provenance,
    ) -> Result<NodeId> {
        let label = label.into();
        let rule = |problem| MetamodelError::PayloadRule { level, label: label.clone(), problem };
        match (level, &payload) {
            (Level::L0, None) => return Err(rule("must carry a payload")),
            (Level::Star, Some(_)) => return Err(rule("must not carry a payload")),
            _ => {}
        }
        if provenance == Provenance::InjectedExpert && level < Level::L2(0) {
            return Err(MetamodelError::ExpertBelowL2(level));
        }
        if let Some(p) = &payload {
            if !self.resolves(p) {
                return Err(MetamodelError::DanglingPayload(p.clone()));
            }
        }
        let node_id = self.nodes.len();
        self.nodes.push(KnowledgeNode {
            node_id,
            level,
            label,
            payload,
            provenance,
            freshness: 0,
            attributes: BTreeMap::new(),
        });
        self.outgoing.push(Vec::new());
        self.incoming.push(Vec::new());
        Ok(node_id)
    }

    /// Maps a region of raw data to an L0 node and an L1 node labelled
    /// `label`, joined by `abstraction_of`. Registering the same pair again
    /// returns the existing nodes.
    pub fn register_region(&mut self, payload: Payload, label: &str) -> Result<(NodeId, NodeId)> {
        let key = (payload.clone(), label.to_string());
        if let Some(&pair) = self.regions.get(&key) {
            return Ok(pair);
        }
        if !self.resolves(&payload) {
            return Err(MetamodelError::DanglingPayload(payload));
        }
        let l0 = self.add_node(Level::L0, label, Some(payload.clone()), Provenance::BottomUp)?;
        let l1 = self.add_node(Level::L1, label, None, Provenance::BottomUp)?;
        self.add_relation(l0, l1, ABSTRACTION_OF, RelationKind::AntiSymmetric)?;
        if let Payload::SeriesSlice { series_id, .. } = &payload {
            self.series_l1.entry(series_id.clone()).or_insert(l1);
        }
        self.regions.insert(key, (l0, l1));
        Ok((l0, l1))
    }

    /// Stores `relation(a, b)`. Symmetric relations answer in both
    /// directions; anti-symmetric ones refuse the reverse pair. Adding an
    /// existing relation again returns the stored edge.
    pub fn add_relation(&mut self, a: NodeId, b: NodeId, relation: &str, kind: RelationKind) -> Result<EdgeId> {
        let la = self.node(a)?.level;
        let lb = self.node(b)?.level;
        let expected = fixed_kind(relation).or_else(|| self.relation_kinds.get(relation).copied());
        if let Some(existing) = expected {
            if existing != kind {
                return Err(MetamodelError::RelationKindMismatch {
                    relation: relation.to_string(),
                    existing,
                    requested: kind,
                });
            }
        }
        if relation == ABSTRACTION_OF && la >= lb {
            return Err(MetamodelError::LevelViolation { from: la, to: lb });
        }
        if let Some(&id) = self.by_triple.get(&(a, b, relation.to_string())) {
            return Ok(id);
        }
        let reverse = self.by_triple.get(&(b, a, relation.to_string())).copied();
        match (kind, reverse) {
            (RelationKind::Symmetric, Some(id)) => return Ok(id),
            (RelationKind::AntiSymmetric, Some(_)) if a != b => {
                return Err(MetamodelError::AntiSymmetryViolation {
                    relation: relation.to_string(),
                    from: a,
                    to: b,
                })
            }
            _ => {}
        }
        let edge_id = self.edges.len();
        self.edges.push(KnowledgeEdge {
            edge_id,
            from: a,
            to: b,
            relation: relation.to_string(),
            kind,
        });
        self.by_triple.insert((a, b, relation.to_string()), edge_id);
        self.outgoing[a].push(edge_id);
        self.incoming[b].push(edge_id);
        self.relation_kinds.insert(relation.to_string(), kind);
        Ok(edge_id)
    }

    /// Whether `relation(a, b)` holds, reading symmetric relations both ways.
    pub fn has_relation(&self, a: NodeId, b: NodeId, relation: &str) -> bool {
        let key = |x: NodeId, y: NodeId| (x, y, relation.to_string());
        if self.by_triple.contains_key(&key(a, b)) {
            return true;
        }
        self.relation_kinds.get(relation) == Some(&RelationKind::Symmetric) && self.by_triple.contains_key(&key(b, a))
    }

    /// New node abstracting over `children`. Over L2 children it lands one
    /// sub-level above the highest of them, otherwise at L2.0.
    pub fn abstract_over(&mut self, children: &[NodeId], label: &str, provenance: Provenance) -> Result<NodeId> {
        let mut top: Option<u32> = None;
        for &c in children {
            match self.node(c)?.level {
                Level::L2(k) => top = Some(top.map_or(k, |t| t.max(k))),
                Level::Star => {
                    return Err(MetamodelError::LevelViolation {
                        from: Level::Star,
                        to: Level::Star,
                    })
                }
                _ => {}
            }
        }
        let level = Level::L2(top.map_or(0, |k| k + 1));
        let node = self.add_node(level, label, None, provenance)?;
        for &c in children {
            self.add_relation(c, node, ABSTRACTION_OF, RelationKind::AntiSymmetric)?;
        }
        Ok(node)
    }

    fn edges_out(&self, node: NodeId) -> impl Iterator<Item = &KnowledgeEdge> {
        self.outgoing[node].iter().map(|&e| &self.edges[e])
    }

    fn edges_in(&self, node: NodeId) -> impl Iterator<Item = &KnowledgeEdge> {
        self.incoming[node].iter().map(|&e| &self.edges[e])
    }

    /// Targets of outgoing edges that lead strictly upward.
    fn upward(&self, node: NodeId) -> Vec<NodeId> {
        let level = self.nodes[node].level;
        let mut out: Vec<NodeId> = self
            .edges_out(node)
            .filter(|e| self.nodes[e.to].level > level)
            .map(|e| e.to)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn touch(&mut self, node: NodeId, ts: i64) {
        let n = &mut self.nodes[node];
        n.freshness = n.freshness.max(ts);
    }

    fn bump(&mut self, node: NodeId, key: &str) {
        let n = &mut self.nodes[node];
        let v = n.attributes.get(key).and_then(Value::as_u64).unwrap_or(0) + 1;
        n.attributes.insert(key.to_string(), json!(v));
    }

    /// Recomputes an L2 node from the nodes directly below it.
    fn recompute(&mut self, node: NodeId) {
        let below: Vec<NodeId> = self
            .edges_in(node)
            .filter(|e| self.nodes[e.from].level < self.nodes[node].level)
            .map(|e| e.from)
            .collect();
        let fresh = below.iter().map(|&b| self.nodes[b].freshness).max().unwrap_or(0);
        let changes: u64 = below
            .iter()
            .filter_map(|&b| self.nodes[b].attributes.get("changes").and_then(Value::as_u64))
            .sum();
        let n = &mut self.nodes[node];
        n.freshness = n.freshness.max(fresh);
        n.attributes.insert("evidence_changes".into(), json!(changes));
    }

    /// Applies evidence from the bottom up.
    ///
    /// L1 nodes are refreshed first, then every L2 node above them is
    /// recomputed in level order. L* nodes and anything below the trigger
    /// are never written. Returns the touched nodes in order; levels in the
    /// log never decrease.
    pub fn refresh_bottom_up(&mut self, evidence: &[Evidence]) -> Result<Vec<LogEntry>> {
        // validate everything first so a failed refresh changes nothing
        for ev in evidence {
            let missing = |id: &SeriesId| MetamodelError::UnregisteredEvidence(id.to_string());
            match ev {
                Evidence::Change(c) => {
                    self.l1_of(&c.series_id).ok_or_else(|| missing(&c.series_id))?;
                }
                Evidence::Samples { series_id, .. } => {
                    self.l1_of(series_id).ok_or_else(|| missing(series_id))?;
                }
                Evidence::Event(e) => {
                    for p in &e.participants {
                        self.l1_of(p).ok_or_else(|| missing(p))?;
                    }
                }
            }
        }

        let mut log = Vec::new();
        let mut frontier: BTreeSet<(Level, NodeId)> = BTreeSet::new();
        let mut refreshed: BTreeSet<NodeId> = BTreeSet::new();
        let mut events = Vec::new();
        for ev in evidence {
            match ev {
                Evidence::Change(c) => {
                    let l1 = self.series_l1[&c.series_id];
                    self.touch(l1, c.timestamp);
                    self.bump(l1, "changes");
                    self.nodes[l1].attributes.insert("last_change".into(), json!(c.timestamp));
                    refreshed.insert(l1);
                }
                Evidence::Samples { series_id, end_ts, .. } => {
                    let l1 = self.series_l1[series_id];
                    self.touch(l1, end_ts - 1);
                    self.bump(l1, "deliveries");
                    refreshed.insert(l1);
                }
                Evidence::Event(e) => {
                    for p in &e.participants {
                        let l1 = self.series_l1[p];
                        self.touch(l1, e.detection_bin);
                        refreshed.insert(l1);
                    }
                    events.push(e);
                }
            }
        }
        for &l1 in &refreshed {
            log.push(LogEntry {
                node_id: l1,
                level: Level::L1,
                action: Action::Refreshed,
            });
            frontier.extend(self.upward(l1).into_iter().map(|u| (self.nodes[u].level, u)));
        }
        let mut created = BTreeSet::new();
        for e in events {
            let node = self.symbolize_event(e)?;
            created.insert(node);
            frontier.insert((self.nodes[node].level, node));
        }
        let mut done = BTreeSet::new();
        while let Some((level, node)) = frontier.pop_first() {
            if level == Level::Star || !done.insert(node) {
                continue;
            }
            self.recompute(node);
            let action = if created.contains(&node) { Action::Created } else { Action::Recomputed };
            log.push(LogEntry { node_id: node, level, action });
            frontier.extend(self.upward(node).into_iter().map(|u| (self.nodes[u].level, u)));
        }
        Ok(log)
    }

    /// Creates the L2 node for a classified event: `participates_in` edges
    /// from each participant's L1 node and `precedes` from its onset when it
    /// is a recovery. Symbolizing the same event id twice returns the
    /// existing node.
    pub fn symbolize_event(&mut self, event: &EventOfInterest) -> Result<NodeId> {
        if let Some(&node) = self.event_nodes.get(&event.event_id) {
            return Ok(node);
        }
        let l1s: Vec<NodeId> = event
            .participants
            .iter()
            .map(|p| self.l1_of(p).ok_or_else(|| MetamodelError::UnregisteredEvidence(p.to_string())))
            .collect::<Result<_>>()?;
        let kind = match event.kind {
            EventKind::Candidate => "candidate",
            EventKind::Interest => "interest",
            EventKind::NoInterest => "no_interest",
            EventKind::Recovery => "recovery",
        };
        let payload = Payload::Event {
            event_id: event.event_id,
            detection_bin: event.detection_bin,
            peak_bin: event.peak_bin,
        };
        let label = format!("{kind}: {}", event.explanation.render());
        let node = self.add_node(Level::L2(0), label, Some(payload), Provenance::BottomUp)?;
        {
            let n = &mut self.nodes[node];
            n.freshness = event.detection_bin;
            n.attributes.insert("kind".into(), json!(kind));
            n.attributes.insert("detection_bin".into(), json!(event.detection_bin));
            n.attributes.insert("peak_bin".into(), json!(event.peak_bin));
            n.attributes.insert("magnitude".into(), json!(event.magnitude));
        }
        for l1 in l1s {
            self.add_relation(l1, node, PARTICIPATES_IN, RelationKind::AntiSymmetric)?;
        }
        if event.kind == EventKind::Recovery {
            if let Some(onset) = event.paired_event.and_then(|id| self.event_node(id)) {
                self.add_relation(onset, node, PRECEDES, RelationKind::AntiSymmetric)?;
            }
        }
        self.event_nodes.insert(event.event_id, node);
        Ok(node)
    }

    /// Nodes reachable from `goal` by walking `abstraction_of` and
    /// `participates_in` edges downward, the goal itself excluded.
    pub fn reachable_below(&self, goal: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([goal]);
        while let Some(n) = queue.pop_front() {
            for e in self.edges_in(n) {
                let hierarchical = e.relation == ABSTRACTION_OF || e.relation == PARTICIPATES_IN;
                if hierarchical && e.from != goal && seen.insert(e.from) {
                    queue.push_back(e.from);
                }
            }
        }
        seen
    }

    /// Splits everything below `goal` into disjoint foci of attention: the
    /// connected components of the reachable set, over every edge with both
    /// ends inside it.
    pub fn partition_foa(&mut self, goal: NodeId) -> Result<Vec<FocusOfAttention>> {
        let level = self.node(goal)?.level;
        if level < Level::L2(0) {
            return Err(MetamodelError::GoalTooLow(level));
        }
        let members = self.reachable_below(goal);
        let index: BTreeMap<NodeId, usize> = members.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut parent: Vec<usize> = (0..members.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &self.edges {
            if let (Some(&a), Some(&b)) = (index.get(&e.from), index.get(&e.to)) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut groups: BTreeMap<usize, BTreeSet<NodeId>> = BTreeMap::new();
        for (&node, &i) in &index {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().insert(node);
        }
        Ok(groups
            .into_values()
            .map(|member_nodes| {
                let foa_id = self.next_foa;
                self.next_foa += 1;
                FocusOfAttention {
                    foa_id,
                    goal_node: goal,
                    member_nodes,
                    sub_foci: Vec::new(),
                }
            })
            .collect())
    }

    /// L0 payloads under `node`, following `abstraction_of` downward.
    fn series_below(&self, node: NodeId) -> Vec<SeriesId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![node];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                continue;
            }
            if let Some(Payload::SeriesSlice { series_id, .. }) = &self.nodes[n].payload {
                out.insert(series_id.clone());
            }
            for e in self.edges_in(n) {
                if e.relation == ABSTRACTION_OF {
                    stack.push(e.from);
                }
            }
        }
        out.into_iter().collect()
    }

    /// Opens a pending sub-focus on `foa`. Every node named by `need` must
    /// belong to the focus.
    pub fn spawn_sfoa(&mut self, foa: &mut FocusOfAttention, need: Need) -> Result<usize> {
        let nodes = match &need {
            Need::Data { nodes, .. } | Need::Query { nodes, .. } => nodes,
        };
        if let Some(&outside) = nodes.iter().find(|n| !foa.member_nodes.contains(n)) {
            return Err(MetamodelError::OutOfScopeNeed(outside));
        }
        let target = match need {
            Need::Data { nodes, start_ts, end_ts } => {
                let series_ids: BTreeSet<SeriesId> = nodes.iter().flat_map(|&n| self.series_below(n)).collect();
                Target::SubsymbolicData {
                    series_ids: series_ids.into_iter().collect(),
                    start_ts,
                    end_ts,
                }
            }
            Need::Query { nodes, relation } => Target::SymbolicQuery { nodes, relation },
        };
        let request_id = self.next_request;
        self.next_request += 1;
        foa.sub_foci.push(SubFocusRequest {
            request_id,
            target,
            status: RequestStatus::Pending,
            result: None,
        });
        Ok(request_id)
    }

    /// Completes a pending sub-focus. Delivered raw data is fed back through
    /// [`refresh_bottom_up`](Self::refresh_bottom_up), whose log is returned.
    pub fn answer_sfoa(&mut self, foa: &mut FocusOfAttention, request_id: usize, answer: Answer) -> Result<Vec<LogEntry>> {
        let request = foa
            .sub_foci
            .iter_mut()
            .find(|r| r.request_id == request_id && r.status == RequestStatus::Pending)
            .ok_or(MetamodelError::UnknownRequest(request_id))?;
        let evidence: Vec<Evidence> = match &answer {
            Answer::Data { slices } => slices
                .iter()
                .filter_map(|p| match p {
                    Payload::SeriesSlice { series_id, start_ts, end_ts } => Some(Evidence::Samples {
                        series_id: series_id.clone(),
                        start_ts: *start_ts,
                        end_ts: *end_ts,
                    }),
                    _ => None,
                })
                .collect(),
            Answer::Nodes { .. } => Vec::new(),
        };
        let log = self.refresh_bottom_up(&evidence)?;
        request.status = RequestStatus::Answered;
        request.result = Some(answer);
        Ok(log)
    }

    /// Every structural invariant that does not hold right now.
    pub fn check_invariants(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if n.level == Level::L0 && n.payload.is_none() {
                out.push(Violation(format!("L0 node {} has no payload", n.node_id)));
            }
            if n.level == Level::Star && n.payload.is_some() {
                out.push(Violation(format!("L* node {} carries a payload", n.node_id)));
            }
            if n.provenance == Provenance::InjectedExpert && n.level < Level::L2(0) {
                out.push(Violation(format!("expert node {} sits at {}", n.node_id, n.level)));
            }
        }
        for e in &self.edges {
            let (lf, lt) = (self.nodes[e.from].level, self.nodes[e.to].level);
            if e.relation == ABSTRACTION_OF && lf >= lt {
                out.push(Violation(format!("abstraction_of {} -> {} goes {lf} -> {lt}", e.from, e.to)));
            }
            match e.kind {
                RelationKind::Symmetric => {
                    if !self.has_relation(e.to, e.from, &e.relation) {
                        out.push(Violation(format!("{}({}, {}) not answered in reverse", e.relation, e.to, e.from)));
                    }
                }
                RelationKind::AntiSymmetric => {
                    if e.from != e.to && self.by_triple.contains_key(&(e.to, e.from, e.relation.clone())) {
                        out.push(Violation(format!("{} stored both ways between {} and {}", e.relation, e.from, e.to)));
                    }
                }
            }
            if self.relation_kinds.get(&e.relation) != Some(&e.kind) {
                out.push(Violation(format!("relation {} used with mixed kinds", e.relation)));
            }
        }
        out
    }

    /// One JSON object per line: every node, then every edge.
    pub fn export_jsonl(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let mut v = serde_json::to_value(n).expect("node serializes");
            v["type"] = json!("node");
            v["schema_version"] = json!(1);
            out.push_str(&v.to_string());
            out.push('\n');
        }
        for e in &self.edges {
            let mut v = serde_json::to_value(e).expect("edge serializes");
            v["type"] = json!("edge");
            v["schema_version"] = json!(1);
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    /// Rebuilds a graph from [`export_jsonl`](Self::export_jsonl) output.
    /// Sources referenced by slices are re-declared from the payloads.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut g = KnowledgeGraph::new();
        let (nodes, edges) = parse_lines(text)?;
        for (_, n) in &nodes {
            if let Some(Payload::SeriesSlice { series_id, start_ts, end_ts }) = &n.payload {
                let span = g.sources.entry(series_id.clone()).or_insert((*start_ts, *end_ts));
                *span = (span.0.min(*start_ts), span.1.max(*end_ts));
            }
        }
        let mut ids = BTreeMap::new();
        for (line, n) in nodes {
            let id = g.add_node(n.level, n.label.clone(), n.payload.clone(), n.provenance).map_err(|e| {
                MetamodelError::Parse {
                    line,
                    message: e.to_string(),
                }
            })?;
            g.nodes[id].freshness = n.freshness;
            g.nodes[id].attributes = n.attributes;
            ids.insert(n.node_id, id);
            if let Some(Payload::Event { event_id, .. }) = &n.payload {
                g.event_nodes.insert(*event_id, id);
            }
        }
        g.add_edges(edges, &ids, |_| None)?;
        let pairs: Vec<(NodeId, NodeId)> = g
            .edges
            .iter()
            .filter(|e| e.relation == ABSTRACTION_OF && g.nodes[e.from].level == Level::L0 && g.nodes[e.to].level == Level::L1)
            .map(|e| (e.from, e.to))
            .collect();
        for (l0, l1) in pairs {
            let Some(payload) = g.nodes[l0].payload.clone() else {
                continue;
            };
            if let Payload::SeriesSlice { series_id, .. } = &payload {
                g.series_l1.entry(series_id.clone()).or_insert(l1);
            }
            g.regions.insert((payload, g.nodes[l0].label.clone()), (l0, l1));
        }
        Ok(g)
    }

    /// Imports expert knowledge: nodes, which must sit at L2 or above and
    /// enter as `injected_expert`, and relations among them or existing
    /// nodes. Node ids not defined in the text refer to this graph.
    /// Nothing is imported if any line is rejected.
    pub fn import_expert(&mut self, text: &str) -> Result<Vec<NodeId>> {
        let (nodes, edges) = parse_lines(text)?;
        let mut staged = self.clone();
        let existing = self.nodes.len();
        let mut ids = BTreeMap::new();
        let mut created = Vec::new();
        for (line, n) in nodes {
            if n.level < Level::L2(0) {
                return Err(MetamodelError::ExpertBelowL2(n.level));
            }
            let id = staged
                .add_node(n.level, n.label, n.payload, Provenance::InjectedExpert)
                .map_err(|e| MetamodelError::Parse {
                    line,
                    message: e.to_string(),
                })?;
            ids.insert(n.node_id, id);
            created.push(id);
        }
        staged.add_edges(edges, &ids, |raw| (raw < existing).then_some(raw))?;
        *self = staged;
        Ok(created)
    }

    fn add_edges(
        &mut self,
        edges: Vec<(usize, KnowledgeEdge)>,
        ids: &BTreeMap<NodeId, NodeId>,
        fallback: impl Fn(NodeId) -> Option<NodeId>,
    ) -> Result<()> {
        for (line, e) in edges {
            let map = |raw: NodeId| {
                ids.get(&raw).copied().or_else(|| fallback(raw)).ok_or(MetamodelError::Parse {
                    line,
                    message: format!("edge refers to unknown node {raw}"),
                })
            };
            let (from, to) = (map(e.from)?, map(e.to)?);
            self.add_relation(from, to, &e.relation, e.kind)
                .map_err(|err| MetamodelError::Parse {
                    line,
                    message: err.to_string(),
                })?;
        }
        Ok(())
    }
}

type Parsed = (Vec<(usize, KnowledgeNode)>, Vec<(usize, KnowledgeEdge)>);

fn parse_lines(text: &str) -> Result<Parsed> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |message: String| MetamodelError::Parse { line, message };
        let v: Value = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        match v.get("type").and_then(Value::as_str) {
            Some("node") => nodes.push((line, serde_json::from_value(v).map_err(|e| err(e.to_string()))?)),
            Some("edge") => edges.push((line, serde_json::from_value(v).map_err(|e| err(e.to_string()))?)),
            _ => return Err(err("expected \"type\": \"node\" or \"edge\"".into())),
        }
    }
    Ok((nodes, edges))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice(id: &str) -> Payload {
        Payload::SeriesSlice {
            series_id: SeriesId::from(id),
            start_ts: 0,
            end_ts: 300,
        }
    }

    fn graph_with(ids: &[&str]) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        for id in ids {
            g.attach_source(SeriesId::from(*id), 0, 300);
            g.register_region(slice(id), &format!("{id}-behavior")).unwrap();
        }
        g
    }

    #[test]
    fn level_order() {
        assert!(Level::L0 < Level::L1);
        assert!(Level::L1 < Level::L2(0));
        assert!(Level::L2(0) < Level::L2(7));
        assert!(Level::L2(u32::MAX) < Level::Star);
    }

    #[test]
    fn register_is_idempotent() {
        let mut g = graph_with(&["s1"]);
        assert_eq!((g.nodes().len(), g.edges().len()), (2, 1));
        g.register_region(slice("s1"), "s1-behavior").unwrap();
        assert_eq!((g.nodes().len(), g.edges().len()), (2, 1));
        assert!(matches!(
            g.register_region(slice("s9"), "x"),
            Err(MetamodelError::DanglingPayload(_))
        ));
    }

    #[test]
    fn relation_rules() {
        let mut g = graph_with(&["s1", "s2"]);
        let (l0, l1) = (0, 1);
        let s2 = g.l1_of(&SeriesId::from("s2")).unwrap();
        g.add_relation(l1, s2, CORRELATES_WITH, RelationKind::Symmetric).unwrap();
        assert!(g.has_relation(s2, l1, CORRELATES_WITH));
        assert!(matches!(
            g.add_relation(l1, l0, ABSTRACTION_OF, RelationKind::AntiSymmetric),
            Err(MetamodelError::LevelViolation { .. })
        ));
        g.add_relation(l1, s2, PRECEDES, RelationKind::AntiSymmetric).unwrap();
        assert!(matches!(
            g.add_relation(s2, l1, PRECEDES, RelationKind::AntiSymmetric),
            Err(MetamodelError::AntiSymmetryViolation { .. })
        ));
        assert!(g.check_invariants().is_empty());
    }

    #[test]
    fn expert_and_payload_guards() {
        let mut g = KnowledgeGraph::new();
        assert!(matches!(
            g.add_node(Level::L1, "x", None, Provenance::InjectedExpert),
            Err(MetamodelError::ExpertBelowL2(Level::L1))
        ));
        assert!(g.add_node(Level::L0, "x", None, Provenance::BottomUp).is_err());
        assert!(g.add_node(Level::Star, "goal", Some(Payload::HistogramBins { first_bin: 0, last_bin: 1 }), Provenance::BottomUp).is_err());
        assert!(g.add_node(Level::L2(3), "rule", None, Provenance::InjectedExpert).is_ok());
    }

    #[test]
    fn sub_levels_grow_on_demand() {
        let mut g = KnowledgeGraph::new();
        let a = g.add_node(Level::L2(0), "a", None, Provenance::BottomUp).unwrap();
        let b = g.add_node(Level::L2(2), "b", None, Provenance::BottomUp).unwrap();
        let top = g.abstract_over(&[a, b], "ab", Provenance::BottomUp).unwrap();
        assert_eq!(g.node(top).unwrap().level, Level::L2(3));
    }
}
