//! Deterministic discrete-event simulation of a component-based server
//! application, exposed through sensor and effector interfaces.
//!
//! The simulated world: component types (with provided/required interfaces,
//! a mean service time, and a failure rate per thousand requests) are
//! instantiated on capacity-bounded nodes and wired by connectors. Requests
//! arrive in a Poisson stream at the configured rate, are routed round-robin
//! over running instances of the entry type, queue FIFO per instance (one
//! server each, exponential service), and either complete or fail. Call
//! chains between instances are not simulated — a request's service time
//! covers its end-to-end handling; connectors matter structurally
//! (an instance must have all required interfaces bound to be valid).
//!
//! Everything is driven by one seeded RNG and a strict event order
//! (scripted < completion < arrival < window boundary at equal timestamps),
//! so a given seed and command sequence reproduces a bit-identical event
//! log. Metrics are accumulated per window (default 10 simulated seconds)
//! and published on each window boundary; the conservation identity
//! `arrived = completed + failed + inFlight delta` holds exactly per
//! instance and window.
//!
//! Reconfiguration happens through [`SimulatedSystem::effect`]: a batch of
//! actions applies atomically — on any error the system is untouched.
//! Disruptive actions (remove, migrate, stop) require the instance to be
//! quiescent: put into the `quiescing` state (no new admissions) and
//! drained to zero in-flight requests.

use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::cmp::{Ordering, Reverse};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Blueprint (loaded from scenario files)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ComponentTypeDef {
    pub type_name: String,
    #[serde(default)]
    pub provides: Vec<String>,
    #[serde(default)]
    pub requires: Vec<String>,
    /// Mean of the exponential service time, seconds.
    pub service_time_mean: f64,
    /// Stochastic request failures per 1000 requests (0 = never, 1000 = all).
    #[serde(default)]
    pub failure_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeDef {
    pub node_name: String,
    /// Concurrent requests the node sustains, split evenly over its
    /// instances.
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InstanceSpec {
    pub instance_id: String,
    pub type_name: String,
    pub node_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConnectorSpec {
    pub from_instance: String,
    pub interface: String,
    pub to_instance: String,
}

/// Initial system layout plus workload parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SystemBlueprint {
    pub component_types: Vec<ComponentTypeDef>,
    pub nodes: Vec<NodeDef>,
    pub instances: Vec<InstanceSpec>,
    #[serde(default)]
    pub connectors: Vec<ConnectorSpec>,
    /// Requests enter the system at instances of this type.
    pub entry_type: String,
    /// Initial Poisson arrival rate, requests per second.
    pub initial_rate: f64,
    /// Metric window length, seconds.
    #[serde(default = "default_window")]
    pub window: f64,
}

fn default_window() -> f64 {
    10.0
}

/// Timeline entries the simulation consumes at exact simulated times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ScriptedEvent {
    LoadChanged { rate: f64 },
    InjectFailure { instance: String },
}

// ---------------------------------------------------------------------------
// Sensor side
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LifecycleState {
    Running,
    Failed,
    Quiescing,
    Stopped,
}

impl LifecycleState {
    pub fn as_str(self) -> &'static str {
        match self {
            LifecycleState::Running => "running",
            LifecycleState::Failed => "failed",
            LifecycleState::Quiescing => "quiescing",
            LifecycleState::Stopped => "stopped",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "running" => Some(LifecycleState::Running),
            "failed" => Some(LifecycleState::Failed),
            "quiescing" => Some(LifecycleState::Quiescing),
            "stopped" => Some(LifecycleState::Stopped),
            _ => None,
        }
    }
}

/// Closed-window metrics of one instance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WindowMetrics {
    pub request_count: u64,
    pub completed_count: u64,
    pub failure_count: u64,
    /// Mean sojourn time of completed requests, seconds; 0 when none
    /// completed.
    pub avg_response_time: f64,
    /// Fraction of the window the instance was serving at least one request.
    pub utilization: f64,
    pub in_flight_start: u32,
    pub in_flight_end: u32,
}

/// Everything a monitor can see of the running system at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SensorSnapshot {
    pub clock: f64,
    pub load_rate: f64,
    pub entry_type: String,
    /// Requests lost in the last closed window.
    pub lost: u64,
    pub component_types: Vec<ComponentTypeDef>,
    pub nodes: Vec<NodeDef>,
    pub instances: Vec<InstanceSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InstanceSnapshot {
    pub instance_id: String,
    pub type_name: String,
    pub node_name: String,
    pub state: LifecycleState,
    pub in_flight: u32,
    /// required interface → serving instance
    pub bindings: BTreeMap<String, String>,
    /// Metrics of the last closed window (zeros before the first close).
    pub metrics: WindowMetrics,
}

/// Timestamped occurrences, both workload-driven and effector-driven.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "camelCase")]
pub enum SensorEvent {
    #[serde(rename_all = "camelCase")]
    RequestArrived { t: f64, instance: String },
    #[serde(rename_all = "camelCase")]
    RequestCompleted {
        t: f64,
        instance: String,
        response_time: f64,
    },
    #[serde(rename_all = "camelCase")]
    RequestFailed { t: f64, instance: String },
    /// No running entry instance had admission room.
    #[serde(rename_all = "camelCase")]
    RequestLost { t: f64 },
    #[serde(rename_all = "camelCase")]
    InstanceFailed { t: f64, instance: String },
    #[serde(rename_all = "camelCase")]
    LoadChanged { t: f64, rate: f64 },
    /// Published at each window boundary, instances in id order.
    #[serde(rename_all = "camelCase")]
    WindowClosed {
        t: f64,
        lost: u64,
        metrics: Vec<(String, WindowMetrics)>,
    },
    #[serde(rename_all = "camelCase")]
    InstanceStarted {
        t: f64,
        instance: String,
        type_name: String,
        node: String,
    },
    #[serde(rename_all = "camelCase")]
    InstanceQuiescing { t: f64, instance: String },
    #[serde(rename_all = "camelCase")]
    InstanceRemoved { t: f64, instance: String },
    #[serde(rename_all = "camelCase")]
    InstanceRestarted { t: f64, instance: String },
    #[serde(rename_all = "camelCase")]
    InstanceMigrated { t: f64, instance: String, node: String },
    #[serde(rename_all = "camelCase")]
    Rebound {
        t: f64,
        instance: String,
        interface: String,
        target: String,
    },
    #[serde(rename_all = "camelCase")]
    ParameterSet {
        t: f64,
        instance: String,
        name: String,
        value: String,
    },
}

impl SensorEvent {
    pub fn timestamp(&self) -> f64 {
        match self {
            SensorEvent::RequestArrived { t, .. }
            | SensorEvent::RequestCompleted { t, .. }
            | SensorEvent::RequestFailed { t, .. }
            | SensorEvent::RequestLost { t }
            | SensorEvent::InstanceFailed { t, .. }
            | SensorEvent::LoadChanged { t, .. }
            | SensorEvent::WindowClosed { t, .. }
            | SensorEvent::InstanceStarted { t, .. }
            | SensorEvent::InstanceQuiescing { t, .. }
            | SensorEvent::InstanceRemoved { t, .. }
            | SensorEvent::InstanceRestarted { t, .. }
            | SensorEvent::InstanceMigrated { t, .. }
            | SensorEvent::Rebound { t, .. }
            | SensorEvent::ParameterSet { t, .. } => *t,
        }
    }

    /// True for events produced by effector actions rather than workload.
    pub fn is_effector_event(&self) -> bool {
        matches!(
            self,
            SensorEvent::InstanceStarted { .. }
                | SensorEvent::InstanceQuiescing { .. }
                | SensorEvent::InstanceRemoved { .. }
                | SensorEvent::InstanceRestarted { .. }
                | SensorEvent::InstanceMigrated { .. }
                | SensorEvent::Rebound { .. }
                | SensorEvent::ParameterSet { .. }
        )
    }
}

// ---------------------------------------------------------------------------
// Effector side
// ---------------------------------------------------------------------------

/// Effector-level commands, executed in batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "camelCase")]
pub enum ReconfigurationAction {
    #[serde(rename_all = "camelCase")]
    AddInstance {
        type_name: String,
        node_name: String,
        instance_id: String,
    },
    #[serde(rename_all = "camelCase")]
    RemoveInstance { instance_id: String },
    #[serde(rename_all = "camelCase")]
    Rebind {
        instance_id: String,
        interface: String,
        target: String,
    },
    #[serde(rename_all = "camelCase")]
    Restart { instance_id: String },
    #[serde(rename_all = "camelCase")]
    SetParameter {
        instance_id: String,
        name: String,
        value: String,
    },
    #[serde(rename_all = "camelCase")]
    MigrateInstance {
        instance_id: String,
        node_name: String,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EffectorError {
    #[error("instance `{instance}` is not quiescent ({detail})")]
    NotQuiescent { instance: String, detail: String },
    #[error("unknown target: {what}")]
    UnknownTarget { what: String },
    #[error("capacity exceeded on node `{node}`")]
    CapacityExceeded { node: String },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid system blueprint: {0}")]
pub struct BlueprintError(pub String);

// ---------------------------------------------------------------------------
// The simulation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Instance {
    type_name: String,
    node: String,
    state: LifecycleState,
    /// Arrival timestamps of queued + in-service requests (FIFO; head is in
    /// service).
    queue: VecDeque<f64>,
    bindings: BTreeMap<String, String>,
    /// Bumped whenever the in-service request is cancelled; stale completion
    /// events carry an old token and are dropped.
    token: u64,
    // current-window accumulators
    arrived: u64,
    completed: u64,
    failed: u64,
    rt_sum: f64,
    busy: f64,
    busy_mark: f64,
    in_flight_start: u32,
}

impl Instance {
    fn in_flight(&self) -> u32 {
        self.queue.len() as u32
    }

    fn update_busy(&mut self, now: f64) {
        if !self.queue.is_empty() {
            self.busy += now - self.busy_mark;
        }
        self.busy_mark = now;
    }
}

#[derive(Debug, Clone)]
struct Completion {
    t: f64,
    seq: u64,
    instance: String,
    token: u64,
}

impl PartialEq for Completion {
    fn eq(&self, other: &Self) -> bool {
        self.t.total_cmp(&other.t) == Ordering::Equal && self.seq == other.seq
    }
}
impl Eq for Completion {}
impl PartialOrd for Completion {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Completion {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t.total_cmp(&other.t).then(self.seq.cmp(&other.seq))
    }
}

/// The managed system. See the module docs for the behavioral model.
#[derive(Debug, Clone)]
pub struct SimulatedSystem {
    types: BTreeMap<String, ComponentTypeDef>,
    nodes: BTreeMap<String, NodeDef>,
    instances: BTreeMap<String, Instance>,
    entry_type: String,
    rate: f64,
    window_len: f64,
    clock: f64,
    rng: ChaCha8Rng,
    next_arrival: f64,
    completions: BinaryHeap<Reverse<Completion>>,
    script: VecDeque<(f64, ScriptedEvent)>,
    round_robin: u64,
    seq: u64,
    lost: u64,
    last_lost: u64,
    last_window: BTreeMap<String, WindowMetrics>,
    next_window_t: f64,
}

impl SimulatedSystem {
    /// Build a system from its blueprint. The script is consumed at exact
    /// simulated times during [`advance`](Self::advance).
    pub fn new(
        blueprint: &SystemBlueprint,
        seed: u64,
        mut script: Vec<(f64, ScriptedEvent)>,
    ) -> Result<Self, BlueprintError> {
        if blueprint.window <= 0.0 {
            return Err(BlueprintError("window must be positive".into()));
        }
        if blueprint.initial_rate < 0.0 {
            return Err(BlueprintError("initialRate must be nonnegative".into()));
        }
        let mut types = BTreeMap::new();
        for t in &blueprint.component_types {
            if t.service_time_mean <= 0.0 {
                return Err(BlueprintError(format!(
                    "type `{}` has nonpositive serviceTimeMean",
                    t.type_name
                )));
            }
            if !(0.0..=1000.0).contains(&t.failure_rate) {
                return Err(BlueprintError(format!(
                    "type `{}` has failureRate outside 0..=1000",
                    t.type_name
                )));
            }
            if types.insert(t.type_name.clone(), t.clone()).is_some() {
                return Err(BlueprintError(format!("duplicate type `{}`", t.type_name)));
            }
        }
        let mut nodes = BTreeMap::new();
        for n in &blueprint.nodes {
            if nodes.insert(n.node_name.clone(), n.clone()).is_some() {
                return Err(BlueprintError(format!("duplicate node `{}`", n.node_name)));
            }
        }
        if !types.contains_key(&blueprint.entry_type) {
            return Err(BlueprintError(format!(
                "entryType `{}` is not a declared component type",
                blueprint.entry_type
            )));
        }
        let mut instances: BTreeMap<String, Instance> = BTreeMap::new();
        for spec in &blueprint.instances {
            if !types.contains_key(&spec.type_name) {
                return Err(BlueprintError(format!(
                    "instance `{}` has undeclared type `{}`",
                    spec.instance_id, spec.type_name
                )));
            }
            if !nodes.contains_key(&spec.node_name) {
                return Err(BlueprintError(format!(
                    "instance `{}` is placed on undeclared node `{}`",
                    spec.instance_id, spec.node_name
                )));
            }
            let prior = instances.insert(
                spec.instance_id.clone(),
                Instance {
                    type_name: spec.type_name.clone(),
                    node: spec.node_name.clone(),
                    state: LifecycleState::Running,
                    queue: VecDeque::new(),
                    bindings: BTreeMap::new(),
                    token: 0,
                    arrived: 0,
                    completed: 0,
                    failed: 0,
                    rt_sum: 0.0,
                    busy: 0.0,
                    busy_mark: 0.0,
                    in_flight_start: 0,
                },
            );
            if prior.is_some() {
                return Err(BlueprintError(format!(
                    "duplicate instance `{}`",
                    spec.instance_id
                )));
            }
        }
        for c in &blueprint.connectors {
            let Some(to) = instances.get(&c.to_instance) else {
                return Err(BlueprintError(format!(
                    "connector targets unknown instance `{}`",
                    c.to_instance
                )));
            };
            if !types[&to.type_name].provides.contains(&c.interface) {
                return Err(BlueprintError(format!(
                    "instance `{}` does not provide interface `{}`",
                    c.to_instance, c.interface
                )));
            }
            let Some(from) = instances.get_mut(&c.from_instance) else {
                return Err(BlueprintError(format!(
                    "connector names unknown instance `{}`",
                    c.from_instance
                )));
            };
            if !types[&from.type_name].requires.contains(&c.interface) {
                return Err(BlueprintError(format!(
                    "instance `{}` does not require interface `{}`",
                    c.from_instance, c.interface
                )));
            }
            from.bindings.insert(c.interface.clone(), c.to_instance.clone());
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let next_arrival = draw_interval(&mut rng, blueprint.initial_rate).map_or(f64::INFINITY, |d| d);

        script.sort_by(|a, b| a.0.total_cmp(&b.0));
        let sys = Self {
            types,
            nodes,
            instances,
            entry_type: blueprint.entry_type.clone(),
            rate: blueprint.initial_rate,
            window_len: blueprint.window,
            clock: 0.0,
            rng,
            next_arrival,
            completions: BinaryHeap::new(),
            script: script.into(),
            round_robin: 0,
            seq: 0,
            lost: 0,
            last_lost: 0,
            last_window: BTreeMap::new(),
            next_window_t: blueprint.window,
        };
        sys.check_structure().map_err(|e| BlueprintError(e.to_string()))?;
        Ok(sys)
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn window_len(&self) -> f64 {
        self.window_len
    }

    /// True when the instance exists, is in the quiescing state, and has
    /// drained all in-flight requests.
    pub fn quiescent(&self, instance_id: &str) -> bool {
        self.instances
            .get(instance_id)
            .is_some_and(|i| i.state == LifecycleState::Quiescing && i.queue.is_empty())
    }

    // ------------------------------------------------------------------
    // advance
    // ------------------------------------------------------------------

    /// Run the simulation for `duration` seconds, returning every event in
    /// timestamp order.
    pub fn advance(&mut self, duration: f64) -> Vec<SensorEvent> {
        debug_assert!(duration > 0.0, "advance needs a positive duration");
        let end = self.clock + duration;
        let mut events = Vec::new();

        loop {
            // candidate next events, each tagged with a tie-break priority:
            // scripted < completion < arrival < window boundary.
            let script_t = self.script.front().map(|(t, _)| *t).unwrap_or(f64::INFINITY);
            let completion_t = self
                .completions
                .peek()
                .map(|Reverse(c)| c.t)
                .unwrap_or(f64::INFINITY);
            let arrival_t = self.next_arrival;
            let window_t = self.next_window_t;

            let mut best = (f64::INFINITY, 4u8);
            for (t, priority) in [
                (script_t, 0u8),
                (completion_t, 1),
                (arrival_t, 2),
                (window_t, 3),
            ] {
                if t < best.0 || (t == best.0 && priority < best.1) {
                    best = (t, priority);
                }
            }
            if best.0 > end || best.1 == 4 {
                break;
            }
            let (t, priority) = best;
            self.clock = t;
            match priority {
                0 => {
                    let (_, scripted) = self.script.pop_front().expect("peeked above");
                    self.handle_scripted(t, scripted, &mut events);
                }
                1 => {
                    let Reverse(completion) = self.completions.pop().expect("peeked above");
                    self.handle_completion(completion, &mut events);
                }
                2 => self.handle_arrival(t, &mut events),
                _ => self.close_window(t, &mut events),
            }
        }

        self.clock = end;
        events
    }

    fn handle_scripted(&mut self, t: f64, scripted: ScriptedEvent, events: &mut Vec<SensorEvent>) {
        match scripted {
            ScriptedEvent::LoadChanged { rate } => {
                self.rate = rate.max(0.0);
                // the exponential inter-arrival is memoryless, so redrawing
                // from the new rate at the switch point is sound
                self.next_arrival = draw_interval(&mut self.rng, self.rate)
                    .map_or(f64::INFINITY, |d| t + d);
                events.push(SensorEvent::LoadChanged { t, rate: self.rate });
            }
            ScriptedEvent::InjectFailure { instance } => {
                let Some(inst) = self.instances.get_mut(&instance) else {
                    return; // scripted against a since-removed instance: ignore
                };
                inst.update_busy(t);
                let dropped = inst.queue.len();
                inst.queue.clear();
                inst.failed += dropped as u64;
                inst.token += 1;
                inst.state = LifecycleState::Failed;
                events.push(SensorEvent::InstanceFailed {
                    t,
                    instance: instance.clone(),
                });
                for _ in 0..dropped {
                    events.push(SensorEvent::RequestFailed {
                        t,
                        instance: instance.clone(),
                    });
                }
            }
        }
    }

    fn handle_arrival(&mut self, t: f64, events: &mut Vec<SensorEvent>) {
        // schedule the next arrival first: one draw per arrival, always
        self.next_arrival =
            draw_interval(&mut self.rng, self.rate).map_or(f64::INFINITY, |d| t + d);

        let candidates: Vec<String> = self
            .instances
            .iter()
            .filter(|(_, i)| i.type_name == self.entry_type && i.state == LifecycleState::Running)
            .map(|(id, _)| id.clone())
            .collect();
        let start = self.round_robin as usize;
        self.round_robin = self.round_robin.wrapping_add(1);

        let mut admitted = None;
        if !candidates.is_empty() {
            for offset in 0..candidates.len() {
                let id = &candidates[(start + offset) % candidates.len()];
                let share = self.admission_share(id);
                let inst = &self.instances[id];
                if (inst.in_flight() as u64) < share {
                    admitted = Some(id.clone());
                    break;
                }
            }
        }

        match admitted {
            None => {
                self.lost += 1;
                events.push(SensorEvent::RequestLost { t });
            }
            Some(id) => {
                let inst = self.instances.get_mut(&id).expect("picked above");
                inst.update_busy(t);
                inst.queue.push_back(t);
                inst.arrived += 1;
                events.push(SensorEvent::RequestArrived {
                    t,
                    instance: id.clone(),
                });
                if inst.queue.len() == 1 {
                    self.start_service(&id, t);
                }
            }
        }
    }

    /// Per-instance admission bound: the node's capacity divided evenly over
    /// the instances placed on it.
    fn admission_share(&self, instance_id: &str) -> u64 {
        let inst = &self.instances[instance_id];
        let on_node = self
            .instances
            .values()
            .filter(|i| i.node == inst.node)
            .count() as u64;
        u64::from(self.nodes[&inst.node].capacity) / on_node.max(1)
    }

    fn start_service(&mut self, instance_id: &str, now: f64) {
        let mean = self.types[&self.instances[instance_id].type_name].service_time_mean;
        let service = Exp::new(1.0 / mean).expect("mean checked positive").sample(&mut self.rng);
        let inst = &self.instances[instance_id];
        self.seq += 1;
        self.completions.push(Reverse(Completion {
            t: now + service,
            seq: self.seq,
            instance: instance_id.to_string(),
            token: inst.token,
        }));
    }

    fn handle_completion(&mut self, completion: Completion, events: &mut Vec<SensorEvent>) {
        let t = completion.t;
        let Some(inst) = self.instances.get_mut(&completion.instance) else {
            return; // instance removed; completion is stale
        };
        if inst.token != completion.token || inst.queue.is_empty() {
            return; // cancelled service
        }
        inst.update_busy(t);
        let arrival = inst.queue.pop_front().expect("checked nonempty");
        let failure_rate = self.types[&inst.type_name].failure_rate;
        let failed = self.rng.random_bool((failure_rate / 1000.0).clamp(0.0, 1.0));
        if failed {
            inst.failed += 1;
            events.push(SensorEvent::RequestFailed {
                t,
                instance: completion.instance.clone(),
            });
        } else {
            inst.completed += 1;
            inst.rt_sum += t - arrival;
            events.push(SensorEvent::RequestCompleted {
                t,
                instance: completion.instance.clone(),
                response_time: t - arrival,
            });
        }
        if !self.instances[&completion.instance].queue.is_empty() {
            self.start_service(&completion.instance, t);
        }
    }

    fn close_window(&mut self, t: f64, events: &mut Vec<SensorEvent>) {
        let mut metrics = Vec::with_capacity(self.instances.len());
        for (id, inst) in self.instances.iter_mut() {
            inst.update_busy(t);
            let m = WindowMetrics {
                request_count: inst.arrived,
                completed_count: inst.completed,
                failure_count: inst.failed,
                avg_response_time: if inst.completed > 0 {
                    inst.rt_sum / inst.completed as f64
                } else {
                    0.0
                },
                utilization: (inst.busy / self.window_len).clamp(0.0, 1.0),
                in_flight_start: inst.in_flight_start,
                in_flight_end: inst.in_flight(),
            };
            inst.arrived = 0;
            inst.completed = 0;
            inst.failed = 0;
            inst.rt_sum = 0.0;
            inst.busy = 0.0;
            inst.busy_mark = t;
            inst.in_flight_start = inst.in_flight();
            metrics.push((id.clone(), m));
        }
        self.last_window = metrics.iter().cloned().collect();
        let lost = std::mem::take(&mut self.lost);
        self.last_lost = lost;
        self.next_window_t += self.window_len;
        events.push(SensorEvent::WindowClosed { t, lost, metrics });
    }

    // ------------------------------------------------------------------
    // sense
    // ------------------------------------------------------------------

    /// Pure read of the current structural state plus last-window metrics.
    pub fn sense(&self) -> SensorSnapshot {
        SensorSnapshot {
            clock: self.clock,
            load_rate: self.rate,
            entry_type: self.entry_type.clone(),
            lost: self.last_lost,
            component_types: self.types.values().cloned().collect(),
            nodes: self.nodes.values().cloned().collect(),
            instances: self
                .instances
                .iter()
                .map(|(id, inst)| InstanceSnapshot {
                    instance_id: id.clone(),
                    type_name: inst.type_name.clone(),
                    node_name: inst.node.clone(),
                    state: inst.state,
                    in_flight: inst.in_flight(),
                    bindings: inst.bindings.clone(),
                    metrics: self.last_window.get(id).cloned().unwrap_or_default(),
                })
                .collect(),
        }
    }

    // ------------------------------------------------------------------
    // effect
    // ------------------------------------------------------------------

    /// Apply a batch of reconfiguration actions atomically: either all apply
    /// and their events are returned, or the system is left untouched.
    pub fn effect(
        &mut self,
        actions: &[ReconfigurationAction],
    ) -> Result<Vec<SensorEvent>, EffectorError> {
        let mut staged = self.clone();
        let mut events = Vec::new();
        for action in actions {
            staged.apply_action(action, &mut events)?;
        }
        staged.check_structure()?;
        *self = staged;
        Ok(events)
    }

    fn apply_action(
        &mut self,
        action: &ReconfigurationAction,
        events: &mut Vec<SensorEvent>,
    ) -> Result<(), EffectorError> {
        let t = self.clock;
        match action {
            ReconfigurationAction::AddInstance {
                type_name,
                node_name,
                instance_id,
            } => {
                if !self.types.contains_key(type_name) {
                    return Err(EffectorError::UnknownTarget {
                        what: format!("component type `{type_name}`"),
                    });
                }
                if !self.nodes.contains_key(node_name) {
                    return Err(EffectorError::UnknownTarget {
                        what: format!("node `{node_name}`"),
                    });
                }
                if self.instances.contains_key(instance_id) {
                    return Err(EffectorError::UnknownTarget {
                        what: format!("instance id `{instance_id}` is already taken"),
                    });
                }
                self.instances.insert(
                    instance_id.clone(),
                    Instance {
                        type_name: type_name.clone(),
                        node: node_name.clone(),
                        state: LifecycleState::Running,
                        queue: VecDeque::new(),
                        bindings: BTreeMap::new(),
                        token: 0,
                        arrived: 0,
                        completed: 0,
                        failed: 0,
                        rt_sum: 0.0,
                        busy: 0.0,
                        busy_mark: t,
                        in_flight_start: 0,
                    },
                );
                events.push(SensorEvent::InstanceStarted {
                    t,
                    instance: instance_id.clone(),
                    type_name: type_name.clone(),
                    node: node_name.clone(),
                });
            }
            ReconfigurationAction::RemoveInstance { instance_id } => {
                let inst = self.instances.get(instance_id).ok_or_else(|| {
                    EffectorError::UnknownTarget {
                        what: format!("instance `{instance_id}`"),
                    }
                })?;
                if inst.state != LifecycleState::Quiescing || !inst.queue.is_empty() {
                    return Err(EffectorError::NotQuiescent {
                        instance: instance_id.clone(),
                        detail: format!(
                            "state {} with {} in flight",
                            inst.state.as_str(),
                            inst.queue.len()
                        ),
                    });
                }
                self.instances.remove(instance_id);
                self.last_window.remove(instance_id);
                events.push(SensorEvent::InstanceRemoved {
                    t,
                    instance: instance_id.clone(),
                });
            }
            ReconfigurationAction::Rebind {
                instance_id,
                interface,
                target,
            } => {
                let Some(target_inst) = self.instances.get(target) else {
                    return Err(EffectorError::UnknownTarget {
                        what: format!("rebind target `{target}`"),
                    });
                };
                if !self.types[&target_inst.type_name].provides.contains(interface) {
                    return Err(EffectorError::UnknownTarget {
                        what: format!("`{target}` does not provide interface `{interface}`"),
                    });
                }
                let Some(inst) = self.instances.get_mut(instance_id) else {
                    return Err(EffectorError::UnknownTarget {
                        what: format!("instance `{instance_id}`"),
                    });
                };
                if !self.types[&inst.type_name].requires.contains(interface) {
                    return Err(EffectorError::UnknownTarget {
                        what: format!("`{instance_id}` does not require interface `{interface}`"),
                    });
                }
                inst.bindings.insert(interface.clone(), target.clone());
                events.push(SensorEvent::Rebound {
                    t,
                    instance: instance_id.clone(),
                    interface: interface.clone(),
                    target: target.clone(),
                });
            }
            ReconfigurationAction::Restart { instance_id } => {
                let inst = self.instances.get_mut(instance_id).ok_or_else(|| {
                    EffectorError::UnknownTarget {
                        what: format!("instance `{instance_id}`"),
                    }
                })?;
                inst.state = LifecycleState::Running;
                events.push(SensorEvent::InstanceRestarted {
                    t,
                    instance: instance_id.clone(),
                });
            }
            ReconfigurationAction::SetParameter {
                instance_id,
                name,
                value,
            } => {
                if name != "state" {
                    return Err(EffectorError::UnknownTarget {
                        what: format!("parameter `{name}`"),
                    });
                }
                let Some(next) = LifecycleState::parse(value) else {
                    return Err(EffectorError::UnknownTarget {
                        what: format!("state value `{value}`"),
                    });
                };
                let inst = self.instances.get_mut(instance_id).ok_or_else(|| {
                    EffectorError::UnknownTarget {
                        what: format!("instance `{instance_id}`"),
                    }
                })?;
                match next {
                    LifecycleState::Quiescing => {
                        if inst.state != LifecycleState::Running {
                            return Err(EffectorError::UnknownTarget {
                                what: format!(
                                    "cannot quiesce `{instance_id}` from state {}",
                                    inst.state.as_str()
                                ),
                            });
                        }
                        inst.state = LifecycleState::Quiescing;
                        events.push(SensorEvent::InstanceQuiescing {
                            t,
                            instance: instance_id.clone(),
                        });
                    }
                    LifecycleState::Running => {
                        if inst.state == LifecycleState::Failed {
                            return Err(EffectorError::UnknownTarget {
                                what: format!(
                                    "failed instance `{instance_id}` needs a restart, not a parameter change"
                                ),
                            });
                        }
                        inst.state = LifecycleState::Running;
                    }
                    LifecycleState::Stopped => {
                        if !inst.queue.is_empty() {
                            return Err(EffectorError::NotQuiescent {
                                instance: instance_id.clone(),
                                detail: format!("{} in flight", inst.queue.len()),
                            });
                        }
                        inst.state = LifecycleState::Stopped;
                    }
                    LifecycleState::Failed => {
                        return Err(EffectorError::UnknownTarget {
                            what: "state `failed` cannot be set through the effector".to_string(),
                        });
                    }
                }
                events.push(SensorEvent::ParameterSet {
                    t,
                    instance: instance_id.clone(),
                    name: name.clone(),
                    value: value.clone(),
                });
            }
            ReconfigurationAction::MigrateInstance {
                instance_id,
                node_name,
            } => {
                if !self.nodes.contains_key(node_name) {
                    return Err(EffectorError::UnknownTarget {
                        what: format!("node `{node_name}`"),
                    });
                }
                let inst = self.instances.get_mut(instance_id).ok_or_else(|| {
                    EffectorError::UnknownTarget {
                        what: format!("instance `{instance_id}`"),
                    }
                })?;
                if inst.state != LifecycleState::Quiescing || !inst.queue.is_empty() {
                    return Err(EffectorError::NotQuiescent {
                        instance: instance_id.clone(),
                        detail: format!(
                            "state {} with {} in flight",
                            inst.state.as_str(),
                            inst.queue.len()
                        ),
                    });
                }
                inst.node = node_name.clone();
                inst.state = LifecycleState::Running;
                events.push(SensorEvent::InstanceMigrated {
                    t,
                    instance: instance_id.clone(),
                    node: node_name.clone(),
                });
            }
        }
        Ok(())
    }

    /// Structural invariants, re-checked after every effect batch: nodes
    /// exist, capacity shares are respected, every binding (in any lifecycle
    /// state) targets a live provider, and every running or quiescing
    /// instance has all required interfaces bound.
    fn check_structure(&self) -> Result<(), EffectorError> {
        for (id, inst) in &self.instances {
            if !self.nodes.contains_key(&inst.node) {
                return Err(EffectorError::UnknownTarget {
                    what: format!("node `{}` of instance `{id}`", inst.node),
                });
            }
            for (interface, target) in &inst.bindings {
                let Some(target_inst) = self.instances.get(target) else {
                    return Err(EffectorError::UnknownTarget {
                        what: format!("binding `{id}.{interface}` targets missing `{target}`"),
                    });
                };
                if !self.types[&target_inst.type_name].provides.contains(interface) {
                    return Err(EffectorError::UnknownTarget {
                        what: format!(
                            "binding `{id}.{interface}` targets `{target}`, which does not provide it"
                        ),
                    });
                }
            }
            if matches!(inst.state, LifecycleState::Running | LifecycleState::Quiescing) {
                for required in &self.types[&inst.type_name].requires {
                    if !inst.bindings.contains_key(required) {
                        return Err(EffectorError::UnknownTarget {
                            what: format!(
                                "instance `{id}` leaves required interface `{required}` unbound"
                            ),
                        });
                    }
                }
            }
        }
        for node_name in self.nodes.keys() {
            let on_node: Vec<&Instance> = self
                .instances
                .values()
                .filter(|i| &i.node == node_name)
                .collect();
            if on_node.is_empty() {
                continue;
            }
            let share = u64::from(self.nodes[node_name].capacity) / on_node.len() as u64;
            if on_node.iter().any(|inst| u64::from(inst.in_flight()) > share) {
                return Err(EffectorError::CapacityExceeded {
                    node: node_name.clone(),
                });
            }
        }
        Ok(())
    }
}

fn draw_interval(rng: &mut ChaCha8Rng, rate: f64) -> Option<f64> {
    if rate <= 0.0 {
        return None;
    }
    Some(Exp::new(rate).expect("rate checked positive").sample(rng))
}
