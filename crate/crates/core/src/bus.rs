//! Break-event fan-out. Each distinct break reaches plan, solve, test and
//! hack exactly once, in that order.

use std::collections::BTreeSet;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandit::{MemoryItem, Namespace, Timestamp};
use crate::hacker::{break_severity, AttackRoute, HackError};
use crate::sandbox::VerdictKind;

/// Delivery order. The oracle namespace holds solver families and gets no
/// break effects; generator hints go to test.
pub const DELIVERY_ORDER: [Namespace; 4] = [Namespace::Plan, Namespace::Solve, Namespace::Test, Namespace::Hack];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakEvent {
    pub problem_id: String,
    pub route: AttackRoute,
    pub input: String,
    pub verdict: VerdictKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<VerdictKind>,
    pub severity: f64,
    /// Source that failed; the solve side pairs it with the eventual fix.
    pub failing_source: String,
    /// Planner strategy item active for this problem.
    pub strategy_item: String,
}

impl BreakEvent {
    pub fn new(
        problem_id: impl Into<String>,
        route: AttackRoute,
        input: impl Into<String>,
        verdict: VerdictKind,
        secondary: Option<VerdictKind>,
        failing_source: impl Into<String>,
        strategy_item: impl Into<String>,
    ) -> Result<Self, HackError> {
        Ok(Self {
            severity: break_severity(verdict, secondary)?,
            problem_id: problem_id.into(),
            route,
            input: input.into(),
            verdict,
            secondary,
            failing_source: failing_source.into(),
            strategy_item: strategy_item.into(),
        })
    }

    pub fn input_hash(&self) -> String {
        hex::encode(&Sha256::digest(self.input.as_bytes())[..8])
    }

    /// Identity for deduplication.
    pub fn key(&self) -> (String, String) {
        (self.problem_id.clone(), self.input_hash())
    }
}

pub fn route_item_id(route: AttackRoute) -> String {
    format!("hack:route:{route}")
}

/// What one namespace does with a break.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum BusEffect {
    /// Penalize the strategy that missed the bug.
    PlanPenalty { item_id: String, reward: f64 },
    /// Record the failure and ask for a contrastive graph node once fixed.
    SolveContrast { item: MemoryItem, failing_source: String, input: String },
    /// Keep the breaking input as a hint for future test generators.
    TestHint { item: MemoryItem },
    /// Credit the route that found the bug.
    HackCredit { item_id: String, route: AttackRoute, reward: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub namespace: Namespace,
    pub problem_id: String,
    pub input_hash: String,
    pub effect: BusEffect,
}

fn clip(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

pub fn effect_for(ns: Namespace, e: &BreakEvent, now: Timestamp) -> Option<BusEffect> {
    let h = e.input_hash();
    Some(match ns {
        Namespace::Plan => BusEffect::PlanPenalty {
            item_id: e.strategy_item.clone(),
            reward: -e.severity,
        },
        Namespace::Solve => BusEffect::SolveContrast {
            item: MemoryItem::new(
                format!("solve:break:{}:{h}", e.problem_id),
                Namespace::Solve,
                format!("{} on an input from the {} route; check the failing case before submitting", e.verdict, e.route),
                now,
            )
            .with_payload(serde_json::json!({ "input": clip(&e.input, 2000), "verdict": e.verdict })),
            failing_source: e.failing_source.clone(),
            input: e.input.clone(),
        },
        Namespace::Test => BusEffect::TestHint {
            item: MemoryItem::new(
                format!("test:hint:{}:{h}", e.problem_id),
                Namespace::Test,
                format!("input shape that caused {}: {}", e.verdict, clip(e.input.trim(), 200)),
                now,
            )
            .with_payload(serde_json::json!({ "route": e.route, "input": clip(&e.input, 2000) })),
        },
        Namespace::Hack => BusEffect::HackCredit {
            item_id: route_item_id(e.route),
            route: e.route,
            reward: e.severity,
        },
        Namespace::Oracle => return None,
    })
}

#[derive(Debug, Default)]
struct BusState {
    closed: bool,
    seen: BTreeSet<(String, String)>,
    delivered: BTreeSet<(String, String, Namespace)>,
    buffered: Vec<BreakEvent>,
    outbox: Vec<Delivery>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitStatus {
    Delivered,
    Buffered,
    Duplicate,
}

/// Shared by concurrent emitters; all state sits behind one lock.
#[derive(Debug, Default)]
pub struct EventBus {
    state: Mutex<BusState>,
}

impl EventBus {
    pub fn new() -> Self {
        Self::default()
    }

    fn fan_out(st: &mut BusState, e: &BreakEvent, now: Timestamp) {
        let h = e.input_hash();
        for ns in DELIVERY_ORDER {
            let key = (e.problem_id.clone(), h.clone(), ns);
            if st.delivered.contains(&key) {
                continue;
            }
            if let Some(effect) = effect_for(ns, e, now) {
                st.delivered.insert(key);
                st.outbox.push(Delivery {
                    namespace: ns,
                    problem_id: e.problem_id.clone(),
                    input_hash: h.clone(),
                    effect,
                });
            }
        }
    }

    pub fn emit(&self, e: BreakEvent, now: Timestamp) -> EmitStatus {
        let mut st = self.state.lock().expect("bus lock");
        if !st.seen.insert(e.key()) {
            return EmitStatus::Duplicate;
        }
        if st.closed {
            st.buffered.push(e);
            return EmitStatus::Buffered;
        }
        Self::fan_out(&mut st, &e, now);
        EmitStatus::Delivered
    }

    pub fn close(&self) {
        self.state.lock().expect("bus lock").closed = true;
    }

    /// Reopen and deliver everything buffered while closed.
    pub fn flush(&self, now: Timestamp) {
        let mut st = self.state.lock().expect("bus lock");
        st.closed = false;
        for e in std::mem::take(&mut st.buffered) {
            Self::fan_out(&mut st, &e, now);
        }
    }

    pub fn pending(&self) -> usize {
        self.state.lock().expect("bus lock").buffered.len()
    }

    /// Deliveries since the last call, in emission then namespace order.
    pub fn take_deliveries(&self) -> Vec<Delivery> {
        std::mem::take(&mut self.state.lock().expect("bus lock").outbox)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(input: &str) -> BreakEvent {
        BreakEvent::new("p1", AttackRoute::Stress, input, VerdictKind::TimeLimit, None, "int main(){}", "plan:p1").unwrap()
    }

    #[test]
    fn one_break_four_writes() {
        let bus = EventBus::new();
        assert_eq!(bus.emit(ev("5\n"), 0), EmitStatus::Delivered);
        let d = bus.take_deliveries();
        let ns: Vec<Namespace> = d.iter().map(|x| x.namespace).collect();
        assert_eq!(ns, DELIVERY_ORDER.to_vec());
        assert_eq!(
            d[0].effect,
            BusEffect::PlanPenalty {
                item_id: "plan:p1".into(),
                reward: -0.65
            }
        );
        assert!(matches!(&d[3].effect, BusEffect::HackCredit { reward, .. } if *reward == 0.65));
    }

    #[test]
    fn duplicates_collapse() {
        let bus = EventBus::new();
        bus.emit(ev("5\n"), 0);
        assert_eq!(bus.emit(ev("5\n"), 1), EmitStatus::Duplicate);
        assert_eq!(bus.take_deliveries().len(), 4);
        assert!(bus.take_deliveries().is_empty());
    }

    #[test]
    fn closed_bus_buffers_until_flush() {
        let bus = EventBus::new();
        bus.close();
        assert_eq!(bus.emit(ev("1\n"), 0), EmitStatus::Buffered);
        assert!(bus.take_deliveries().is_empty());
        assert_eq!(bus.pending(), 1);
        bus.flush(0);
        assert_eq!(bus.take_deliveries().len(), 4);
    }

    #[test]
    fn accepted_is_not_a_break() {
        assert!(BreakEvent::new("p", AttackRoute::Semantic, "", VerdictKind::Accepted, None, "", "").is_err());
    }

    #[test]
    fn concurrent_emitters_deliver_once_each() {
        let bus = EventBus::new();
        std::thread::scope(|s| {
            for t in 0..8 {
                let bus = &bus;
                s.spawn(move || {
                    for i in 0..50 {
                        bus.emit(ev(&format!("{}\n", (i * 7 + t) % 60)), 0);
                    }
                });
            }
        });
        assert_eq!(bus.take_deliveries().len(), 60 * 4);
    }
}
