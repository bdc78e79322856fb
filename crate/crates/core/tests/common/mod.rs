//! Randomized knowledge-graph workload shared by the metamodel tests and
//! the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use regime_sentinel::aggregate::{EventKind, EventOfInterest, Explanation};
use regime_sentinel::metamodel::{
    Evidence, KnowledgeGraph, KnowledgeNode, Level, MetamodelError, Need, Payload, Provenance, RelationKind,
    ABSTRACTION_OF, CORRELATES_WITH, PARTICIPATES_IN, PRECEDES,
};
use regime_sentinel::segmentation::RegimeChange;
use regime_sentinel::timeseries::SeriesId;

const SERIES: usize = 12;
const RELATIONS: [&str; 5] = [ABSTRACTION_OF, PARTICIPATES_IN, PRECEDES, CORRELATES_WITH, "depends_on"];

fn sid(k: usize) -> SeriesId {
    SeriesId(format!("s{k:02}"))
}

fn random_level(rng: &mut ChaCha8Rng) -> Level {
    match rng.random_range(0..6) {
        0 => Level::L0,
        1 => Level::L1,
        5 => Level::Star,
        _ => Level::L2(rng.random_range(0..4)),
    }
}

fn kind_for(relation: &str, rng: &mut ChaCha8Rng) -> RelationKind {
    match relation {
        CORRELATES_WITH => RelationKind::Symmetric,
        "depends_on" => RelationKind::AntiSymmetric,
        // occasionally ask for the wrong kind
        _ if rng.random_bool(0.1) => RelationKind::Symmetric,
        _ => RelationKind::AntiSymmetric,
    }
}

pub fn event(event_id: usize, bin: i64, participants: BTreeSet<SeriesId>, kind: EventKind) -> EventOfInterest {
    EventOfInterest {
        event_id,
        first_bin: bin,
        last_bin: bin,
        detection_bin: bin,
        peak_bin: bin,
        magnitude: participants.len() as u64,
        participants,
        kind,
        paired_event: None,
        explanation: Explanation {
            rule: "spike".into(),
            threshold: 1.0,
            baseline_median: 0.0,
            baseline_mad: 0.0,
            floor: 1.0,
            signal: 1,
            spike_window: 1,
            label: None,
        },
    }
}

fn l0_snapshot(g: &KnowledgeGraph) -> Vec<KnowledgeNode> {
    g.nodes().iter().filter(|n| n.level == Level::L0).cloned().collect()
}

/// Runs `ops` random mutations and queries and returns every invariant
/// breach seen, each tagged with the step that produced it.
pub fn random_workload(seed: u64, ops: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = KnowledgeGraph::new();
    let mut bad = Vec::new();
    for k in 0..SERIES {
        g.attach_source(sid(k), 0, 300);
    }
    let goal = g.add_node(Level::Star, "goal", None, Provenance::BottomUp).unwrap();
    let mut registered: Vec<usize> = Vec::new();
    let mut events = 0usize;

    for step in 0..ops {
        let before_nodes = g.nodes().len();
        let before_edges = g.edges().len();
        let n = g.nodes().len();
        let op = rng.random_range(0..10);
        let result: Result<(), MetamodelError> = match op {
            0 => {
                let k = rng.random_range(0..SERIES + 2);
                let start = rng.random_range(0..250);
                let payload = Payload::SeriesSlice {
                    series_id: sid(k),
                    start_ts: start,
                    end_ts: start + rng.random_range(1..60),
                };
                g.register_region(payload, &format!("{}-behavior", sid(k))).map(|_| {
                    if k < SERIES && !registered.contains(&k) {
                        registered.push(k);
                    }
                })
            }
            1 => {
                let level = random_level(&mut rng);
                let payload = (level == Level::L0 || rng.random_bool(0.2)).then(|| Payload::HistogramBins {
                    first_bin: 0,
                    last_bin: rng.random_range(-2..10),
                });
                let provenance = if rng.random_bool(0.3) { Provenance::InjectedExpert } else { Provenance::BottomUp };
                g.add_node(level, format!("n{step}"), payload, provenance).map(|_| ())
            }
            2 | 3 => {
                let relation = RELATIONS[rng.random_range(0..RELATIONS.len())];
                let kind = kind_for(relation, &mut rng);
                let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
                g.add_relation(a, b, relation, kind).map(|_| {
                    if kind == RelationKind::Symmetric && !g.has_relation(b, a, relation) {
                        bad.push(format!("step {step}: symmetric {relation}({a},{b}) not readable in reverse"));
                    }
                })
            }
            4 => {
                let children: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(0..n)).collect();
                let k_max = children
                    .iter()
                    .filter_map(|&c| match g.nodes()[c].level {
                        Level::L2(k) => Some(k),
                        _ => None,
                    })
                    .max();
                g.abstract_over(&children, &format!("a{step}"), Provenance::BottomUp).map(|node| {
                    let expect = Level::L2(k_max.map_or(0, |k| k + 1));
                    if g.nodes()[node].level != expect {
                        bad.push(format!("step {step}: abstraction landed at {}", g.nodes()[node].level));
                    }
                })
            }
            5 => {
                let l0 = l0_snapshot(&g);
                let evidence: Vec<Evidence> = (0..rng.random_range(0..4))
                    .map(|_| {
                        let k = rng.random_range(0..SERIES + 1);
                        Evidence::Change(RegimeChange {
                            series_id: sid(k),
                            position: 0,
                            timestamp: rng.random_range(0..300),
                            salience: 0.8,
                        })
                    })
                    .collect();
                let r = g.refresh_bottom_up(&evidence);
                if let Ok(log) = &r {
                    if log.windows(2).any(|w| w[0].level > w[1].level) {
                        bad.push(format!("step {step}: refresh log goes downward"));
                    }
                    if log.iter().any(|e| e.level == Level::Star || e.level == Level::L0) {
                        bad.push(format!("step {step}: refresh wrote an L0 or L* node"));
                    }
                    if evidence.is_empty() && !log.is_empty() {
                        bad.push(format!("step {step}: empty evidence touched nodes"));
                    }
                }
                if l0_snapshot(&g) != l0 {
                    bad.push(format!("step {step}: refresh modified an L0 node"));
                }
                r.map(|_| ())
            }
            6 => {
                let level = random_level(&mut rng);
                let line = json!({
                    "type": "node", "node_id": 10_000, "level": level, "label": "expert",
                    "payload": null, "provenance": "bottom_up", "freshness": 0,
                });
                let mut text = line.to_string();
                if rng.random_bool(0.5) {
                    let relation = RELATIONS[rng.random_range(0..RELATIONS.len())];
                    let edge = json!({
                        "type": "edge", "edge_id": 0, "from": rng.random_range(0..n), "to": 10_000,
                        "relation": relation, "kind": kind_for(relation, &mut rng),
                    });
                    text = format!("{text}\n{edge}");
                }
                let r = g.import_expert(&text);
                if r.is_err() && (g.nodes().len(), g.edges().len()) != (before_nodes, before_edges) {
                    bad.push(format!("step {step}: rejected import left partial state"));
                }
                r.map(|_| ())
            }
            7 if !registered.is_empty() => {
                let participants: BTreeSet<SeriesId> = (0..rng.random_range(1..=registered.len()))
                    .map(|_| sid(registered[rng.random_range(0..registered.len())]))
                    .collect();
                let e = event(events, step as i64, participants, EventKind::Interest);
                events += 1;
                g.symbolize_event(&e).and_then(|node| {
                    g.add_relation(node, goal, ABSTRACTION_OF, RelationKind::AntiSymmetric).map(|_| ())
                })
            }
            8 => {
                let l2_or_star: Vec<usize> =
                    g.nodes().iter().filter(|n| n.level >= Level::L2(0)).map(|n| n.node_id).collect();
                let target = if rng.random_bool(0.5) { goal } else { l2_or_star[rng.random_range(0..l2_or_star.len())] };
                let l0 = l0_snapshot(&g);
                let r = g.partition_foa(target);
                if let Ok(foci) = &r {
                    let reach = g.reachable_below(target);
                    let mut union = BTreeSet::new();
                    for f in foci {
                        if f.member_nodes.is_empty() {
                            bad.push(format!("step {step}: empty focus"));
                        }
                        if !union.is_disjoint(&f.member_nodes) {
                            bad.push(format!("step {step}: overlapping foci under {target}"));
                        }
                        union.extend(f.member_nodes.iter().copied());
                    }
                    if union != reach {
                        bad.push(format!("step {step}: foci do not cover the reachable set of {target}"));
                    }
                    if let Some(f) = foci.first() {
                        let mut f = f.clone();
                        let member = *f.member_nodes.iter().next().unwrap();
                        let outsider = (0..n).find(|x| !f.member_nodes.contains(x)).unwrap_or(goal);
                        if g.spawn_sfoa(&mut f, Need::Query { nodes: vec![member], relation: None }).is_err() {
                            bad.push(format!("step {step}: in-scope sub-focus refused"));
                        }
                        let out = g.spawn_sfoa(&mut f, Need::Query { nodes: vec![outsider], relation: None });
                        if !matches!(out, Err(MetamodelError::OutOfScopeNeed(_))) {
                            bad.push(format!("step {step}: out-of-scope sub-focus accepted"));
                        }
                    }
                }
                if l0_snapshot(&g) != l0 {
                    bad.push(format!("step {step}: partitioning modified an L0 node"));
                }
                r.map(|_| ())
            }
            _ => {
                let l1: Vec<usize> = g.nodes().iter().filter(|n| n.level == Level::L1).map(|n| n.node_id).collect();
                if l1.len() >= 2 {
                    let (a, b) = (l1[rng.random_range(0..l1.len())], l1[rng.random_range(0..l1.len())]);
                    g.add_relation(a, b, CORRELATES_WITH, RelationKind::Symmetric).map(|_| ())
                } else {
                    Ok(())
                }
            }
        };
        if result.is_err() && op != 5 && op != 6 && (g.nodes().len(), g.edges().len()) != (before_nodes, before_edges) {
            bad.push(format!("step {step}: failed op {op} changed the graph"));
        }
        for v in g.check_invariants() {
            bad.push(format!("step {step}: {}", v.0));
        }
        if g.nodes().iter().any(|n| n.provenance == Provenance::InjectedExpert && n.level < Level::L2(0)) {
            bad.push(format!("step {step}: expert node below L2"));
        }
    }
    let round = KnowledgeGraph::from_jsonl(&g.export_jsonl());
    match round {
        Ok(h) if h.nodes() == g.nodes() && h.edges() == g.edges() => {}
        Ok(_) => bad.push("export/import round trip differs".into()),
        Err(e) => bad.push(format!("export/import round trip failed: {e}")),
    }
    bad
}
