//! Deterministic tick interpreter.
//!
//! Scheduling model: each tick runs every runnable script once, in
//! (target, script) order, until the script yields. Yield points are loop
//! back-edges, `wait`, and completion. Broadcasts sent during a tick are
//! queued and start (or restart) their receivers at the beginning of the
//! next tick. Everything is a pure function of (project, schedule, seed).

use std::collections::BTreeMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::project::ProjectDocument;
use crate::vm::program::{self, Expr, InertBlock, Program, Stmt, Trigger};
use crate::vm::snapshot::{capture_snapshot, StageSnapshot};
use crate::vm::value::Scalar;

pub const STAGE_X_MAX: f64 = 240.0;
pub const STAGE_Y_MAX: f64 = 180.0;

/// Execution budget for one verifier or probe run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSchedule {
    pub ticks: u64,
    pub reruns: usize,
    /// One seed per rerun. Configs may leave this empty; it is filled from
    /// the run seed before execution.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub snapshot_ticks: Vec<u64>,
}

impl RunSchedule {
    pub fn new(ticks: u64, reruns: usize, seeds: Vec<u64>, snapshot_ticks: Vec<u64>) -> Self {
        assert!(ticks >= 1 && reruns >= 1, "schedule must run at least one tick and rerun");
        RunSchedule { ticks, reruns, seeds, snapshot_ticks }
    }

    /// Fills missing rerun seeds from a base seed.
    pub fn materialize_seeds(mut self, base: u64) -> Self {
        if self.seeds.len() < self.reruns {
            self.seeds = (0..self.reruns).map(|i| splitmix64(base.wrapping_add(i as u64))).collect();
        }
        self.seeds.truncate(self.reruns);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpriteState {
    pub x: f64,
    pub y: f64,
    pub direction: f64,
    pub costume_index: i64,
    pub visible: bool,
}

/// World state after a tick. Maps are ordered so serialized states are
/// stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmState {
    pub tick: u64,
    pub sprites: BTreeMap<String, SpriteState>,
    pub variables: BTreeMap<String, Scalar>,
    pub pending_broadcasts: Vec<String>,
    pub rng_state: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BroadcastEvent {
    pub tick: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ExecutionTrace {
    pub initial: VmState,
    /// State after each tick; index `t - 1` holds the state after tick `t`.
    pub states: Vec<VmState>,
    pub snapshots: Vec<StageSnapshot>,
    pub broadcasts: Vec<BroadcastEvent>,
    pub inert_blocks: Vec<InertBlock>,
}

impl ExecutionTrace {
    pub fn state_at(&self, tick: u64) -> &VmState {
        if tick == 0 {
            &self.initial
        } else {
            &self.states[(tick as usize - 1).min(self.states.len() - 1)]
        }
    }

    pub fn final_state(&self) -> &VmState {
        self.states.last().unwrap_or(&self.initial)
    }
}

/// Runs a compiled project for `schedule.ticks` ticks under one seed.
/// Repeated calls with identical arguments produce bitwise-equal traces.
pub fn execute(project: &ProjectDocument, schedule: &RunSchedule, seed: u64) -> ExecutionTrace {
    let prog = program::compile(project);
    let mut vm = Vm::new(&prog, seed);
    let mut trace = ExecutionTrace {
        initial: vm.state(0),
        states: Vec::with_capacity(schedule.ticks as usize),
        snapshots: Vec::new(),
        broadcasts: Vec::new(),
        inert_blocks: prog.inert.clone(),
    };
    if schedule.snapshot_ticks.contains(&0) {
        trace.snapshots.push(capture_snapshot(&trace.initial));
    }
    for tick in 1..=schedule.ticks {
        vm.run_tick(tick, &mut trace.broadcasts);
        let state = vm.state(tick);
        if schedule.snapshot_ticks.contains(&tick) {
            trace.snapshots.push(capture_snapshot(&state));
        }
        trace.states.push(state);
    }
    trace
}

struct Vm<'p> {
    program: &'p Program,
    seed: u64,
    sprites: BTreeMap<String, SpriteState>,
    variables: BTreeMap<String, Scalar>,
    pending: Vec<String>,
    threads: Vec<Thread>,
    rng_state: u64,
    draws: u64,
}

struct Thread {
    target_idx: usize,
    script_idx: usize,
    frames: Vec<Frame>,
    wake_tick: u64,
    done: bool,
    rand_calls: u64,
}

struct Frame {
    stmts: Rc<Vec<Stmt>>,
    pc: usize,
    kind: FrameKind,
}

enum FrameKind {
    Body,
    Branch,
    Repeat { remaining: u64 },
    Forever,
}

enum StepResult {
    Yield,
    Done,
}

impl<'p> Vm<'p> {
    fn new(program: &'p Program, seed: u64) -> Self {
        let mut sprites = BTreeMap::new();
        let mut variables = BTreeMap::new();
        for t in &program.targets {
            if !t.is_stage {
                sprites.insert(
                    t.name.clone(),
                    SpriteState {
                        x: clamp_x(t.x),
                        y: clamp_y(t.y),
                        direction: wrap_direction(t.direction),
                        costume_index: t.costume_index,
                        visible: t.visible,
                    },
                );
            }
            for (name, value) in &t.variables {
                variables.insert(
                    program::variable_key(&t.name, t.is_stage, name),
                    value.clone(),
                );
            }
        }
        let mut threads = Vec::new();
        for (ti, t) in program.targets.iter().enumerate() {
            for (si, s) in t.scripts.iter().enumerate() {
                if s.trigger == Trigger::FlagClicked {
                    threads.push(Thread {
                        target_idx: ti,
                        script_idx: si,
                        frames: vec![Frame { stmts: Rc::clone(&s.body), pc: 0, kind: FrameKind::Body }],
                        wake_tick: 0,
                        done: false,
                        rand_calls: 0,
                    });
                }
            }
        }
        Vm { program, seed, sprites, variables, pending: Vec::new(), threads, rng_state: seed, draws: 0 }
    }

    fn state(&self, tick: u64) -> VmState {
        VmState {
            tick,
            sprites: self.sprites.clone(),
            variables: self.variables.clone(),
            pending_broadcasts: self.pending.clone(),
            rng_state: self.rng_state,
        }
    }

    fn run_tick(&mut self, tick: u64, broadcasts: &mut Vec<BroadcastEvent>) {
        let queued: Vec<String> = std::mem::take(&mut self.pending);
        for message in queued {
            self.start_receivers(&message);
        }
        for i in 0..self.threads.len() {
            if self.threads[i].done || self.threads[i].wake_tick > tick {
                continue;
            }
            self.run_thread(i, tick, broadcasts);
        }
    }

    fn start_receivers(&mut self, message: &str) {
        let program = self.program;
        for (ti, t) in program.targets.iter().enumerate() {
            for (si, s) in t.scripts.iter().enumerate() {
                if s.trigger != Trigger::BroadcastReceived(message.to_string()) {
                    continue;
                }
                let fresh = vec![Frame { stmts: Rc::clone(&s.body), pc: 0, kind: FrameKind::Body }];
                if let Some(existing) = self
                    .threads
                    .iter_mut()
                    .find(|th| th.target_idx == ti && th.script_idx == si)
                {
                    // a broadcast restarts an in-flight receiver
                    existing.frames = fresh;
                    existing.wake_tick = 0;
                    existing.done = false;
                } else {
                    let pos = self
                        .threads
                        .partition_point(|th| (th.target_idx, th.script_idx) <= (ti, si));
                    self.threads.insert(
                        pos,
                        Thread {
                            target_idx: ti,
                            script_idx: si,
                            frames: fresh,
                            wake_tick: 0,
                            done: false,
                            rand_calls: 0,
                        },
                    );
                }
            }
        }
    }

    fn run_thread(&mut self, idx: usize, tick: u64, broadcasts: &mut Vec<BroadcastEvent>) {
        loop {
            let (target_idx, script_idx) = {
                let th = &self.threads[idx];
                (th.target_idx, th.script_idx)
            };
            let th = &mut self.threads[idx];
            let Some(frame) = th.frames.last_mut() else {
                th.done = true;
                return;
            };
            if frame.pc >= frame.stmts.len() {
                let loops_again = match &mut frame.kind {
                    FrameKind::Body | FrameKind::Branch => false,
                    FrameKind::Repeat { remaining } => {
                        *remaining -= 1;
                        if *remaining > 0 {
                            frame.pc = 0;
                            true
                        } else {
                            false
                        }
                    }
                    FrameKind::Forever => {
                        frame.pc = 0;
                        true
                    }
                };
                if loops_again {
                    return; // a loop back-edge yields the tick
                }
                th.frames.pop();
                if th.frames.is_empty() {
                    th.done = true;
                    return;
                }
                continue;
            }
            let stmt = frame.stmts[frame.pc].clone();
            frame.pc += 1;
            match self.exec_stmt(&stmt, target_idx, script_idx, idx, tick, broadcasts) {
                StepResult::Yield => return,
                StepResult::Done => {}
            }
        }
    }

    fn exec_stmt(
        &mut self,
        stmt: &Stmt,
        target_idx: usize,
        script_idx: usize,
        thread_idx: usize,
        tick: u64,
        broadcasts: &mut Vec<BroadcastEvent>,
    ) -> StepResult {
        let program = self.program;
        let target = &program.targets[target_idx];
        match stmt {
            Stmt::Inert => StepResult::Done,
            Stmt::Broadcast(msg) => {
                let message = self.eval(msg, target_idx, script_idx, thread_idx).as_text();
                self.pending.push(message.clone());
                broadcasts.push(BroadcastEvent { tick, message });
                StepResult::Done
            }
            Stmt::SetVar(key, e) => {
                let v = self.eval(e, target_idx, script_idx, thread_idx);
                self.variables.insert(key.clone(), v);
                StepResult::Done
            }
            Stmt::ChangeVar(key, e) => {
                let delta = self.eval(e, target_idx, script_idx, thread_idx).as_number();
                let current =
                    self.variables.get(key).map(Scalar::as_number).unwrap_or(0.0);
                self.variables.insert(key.clone(), Scalar::Number(current + delta));
                StepResult::Done
            }
            Stmt::GoToXy(ex, ey) => {
                let x = self.eval(ex, target_idx, script_idx, thread_idx).as_number();
                let y = self.eval(ey, target_idx, script_idx, thread_idx).as_number();
                self.with_sprite(&target.name, |s| {
                    s.x = clamp_x(x);
                    s.y = clamp_y(y);
                });
                StepResult::Done
            }
            Stmt::ChangeX(e) => {
                let dx = self.eval(e, target_idx, script_idx, thread_idx).as_number();
                self.with_sprite(&target.name, |s| s.x = clamp_x(s.x + dx));
                StepResult::Done
            }
            Stmt::ChangeY(e) => {
                let dy = self.eval(e, target_idx, script_idx, thread_idx).as_number();
                self.with_sprite(&target.name, |s| s.y = clamp_y(s.y + dy));
                StepResult::Done
            }
            Stmt::PointDirection(e) => {
                let d = self.eval(e, target_idx, script_idx, thread_idx).as_number();
                self.with_sprite(&target.name, |s| s.direction = wrap_direction(d));
                StepResult::Done
            }
            Stmt::SwitchCostume(e) => {
                let v = self.eval(e, target_idx, script_idx, thread_idx);
                let count = target.costume_count as i64;
                let next = match &v {
                    Scalar::Text(name) if !target.costume_names.is_empty() => target
                        .costume_names
                        .iter()
                        .position(|c| c == name)
                        .map(|i| i as i64),
                    _ => None,
                }
                .unwrap_or_else(|| (v.as_number().round() as i64).rem_euclid(count));
                self.with_sprite(&target.name, |s| s.costume_index = next);
                StepResult::Done
            }
            Stmt::Show => {
                self.with_sprite(&target.name, |s| s.visible = true);
                StepResult::Done
            }
            Stmt::Hide => {
                self.with_sprite(&target.name, |s| s.visible = false);
                StepResult::Done
            }
            Stmt::Wait(e) => {
                let d = self.eval(e, target_idx, script_idx, thread_idx).as_number();
                let ticks = if d.is_finite() && d > 1.0 { d.ceil() as u64 } else { 1 };
                self.threads[thread_idx].wake_tick = tick + ticks;
                StepResult::Yield
            }
            Stmt::Repeat(e, body) => {
                let n = self.eval(e, target_idx, script_idx, thread_idx).as_number().round();
                if n >= 1.0 {
                    self.threads[thread_idx].frames.push(Frame {
                        stmts: Rc::clone(body),
                        pc: 0,
                        kind: FrameKind::Repeat { remaining: n as u64 },
                    });
                }
                StepResult::Done
            }
            Stmt::Forever(body) => {
                self.threads[thread_idx].frames.push(Frame {
                    stmts: Rc::clone(body),
                    pc: 0,
                    kind: FrameKind::Forever,
                });
                StepResult::Done
            }
            Stmt::If(c, body) => {
                if self.eval(c, target_idx, script_idx, thread_idx).truthy() {
                    self.threads[thread_idx].frames.push(Frame {
                        stmts: Rc::clone(body),
                        pc: 0,
                        kind: FrameKind::Branch,
                    });
                }
                StepResult::Done
            }
            Stmt::IfElse(c, then_body, else_body) => {
                let body = if self.eval(c, target_idx, script_idx, thread_idx).truthy() {
                    then_body
                } else {
                    else_body
                };
                self.threads[thread_idx].frames.push(Frame {
                    stmts: Rc::clone(body),
                    pc: 0,
                    kind: FrameKind::Branch,
                });
                StepResult::Done
            }
        }
    }

    fn with_sprite(&mut self, name: &str, f: impl FnOnce(&mut SpriteState)) {
        // motion/looks on the stage are inert
        if let Some(s) = self.sprites.get_mut(name) {
            f(s);
        }
    }

    fn eval(&mut self, e: &Expr, target_idx: usize, script_idx: usize, thread_idx: usize) -> Scalar {
        match e {
            Expr::Lit(v) => v.clone(),
            Expr::Var(key) => self.variables.get(key).cloned().unwrap_or(Scalar::Number(0.0)),
            Expr::Add(a, b) => self.num2(a, b, target_idx, script_idx, thread_idx, |x, y| x + y),
            Expr::Sub(a, b) => self.num2(a, b, target_idx, script_idx, thread_idx, |x, y| x - y),
            Expr::Mul(a, b) => self.num2(a, b, target_idx, script_idx, thread_idx, |x, y| x * y),
            Expr::Div(a, b) => self.num2(a, b, target_idx, script_idx, thread_idx, |x, y| {
                // division by zero is defined as 0 to keep states JSON-clean
                if y == 0.0 {
                    0.0
                } else {
                    x / y
                }
            }),
            Expr::Gt(a, b) => {
                let (x, y) = self.pair(a, b, target_idx, script_idx, thread_idx);
                Scalar::Bool(x.as_number() > y.as_number())
            }
            Expr::Lt(a, b) => {
                let (x, y) = self.pair(a, b, target_idx, script_idx, thread_idx);
                Scalar::Bool(x.as_number() < y.as_number())
            }
            Expr::Eq(a, b) => {
                let (x, y) = self.pair(a, b, target_idx, script_idx, thread_idx);
                Scalar::Bool(x.loose_eq(&y))
            }
            Expr::Random(a, b) => {
                let (x, y) = self.pair(a, b, target_idx, script_idx, thread_idx);
                let program = self.program;
                let target = &program.targets[target_idx].name;
                let calls = {
                    let th = &mut self.threads[thread_idx];
                    th.rand_calls += 1;
                    th.rand_calls - 1
                };
                let draw = keyed_draw(self.seed, target, script_idx, calls);
                self.draws += 1;
                self.rng_state = splitmix64(self.rng_state ^ draw);
                let (na, nb) = (x.as_number(), y.as_number());
                let (lo, hi) = if na <= nb { (na, nb) } else { (nb, na) };
                if lo.fract() == 0.0 && hi.fract() == 0.0 {
                    let span = (hi - lo) as u64 + 1;
                    Scalar::Number(lo + (draw % span) as f64)
                } else {
                    let unit = (draw >> 11) as f64 / (1u64 << 53) as f64;
                    Scalar::Number(lo + unit * (hi - lo))
                }
            }
        }
    }

    fn num2(
        &mut self,
        a: &Expr,
        b: &Expr,
        ti: usize,
        si: usize,
        th: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Scalar {
        let (x, y) = self.pair(a, b, ti, si, th);
        let n = f(x.as_number(), y.as_number());
        Scalar::Number(if n.is_finite() { n } else { 0.0 })
    }

    fn pair(&mut self, a: &Expr, b: &Expr, ti: usize, si: usize, th: usize) -> (Scalar, Scalar) {
        let x = self.eval(a, ti, si, th);
        let y = self.eval(b, ti, si, th);
        (x, y)
    }
}

fn clamp_x(x: f64) -> f64 {
    x.clamp(-STAGE_X_MAX, STAGE_X_MAX)
}

fn clamp_y(y: f64) -> f64 {
    y.clamp(-STAGE_Y_MAX, STAGE_Y_MAX)
}

fn wrap_direction(d: f64) -> f64 {
    if !d.is_finite() {
        return 90.0;
    }
    let r = d.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Splittable draw keyed by (run seed, sprite, script index, call count):
/// every random value is reproducible regardless of scheduling.
fn keyed_draw(seed: u64, sprite: &str, script_idx: usize, call: u64) -> u64 {
    let mut k = splitmix64(seed ^ fnv1a64(sprite));
    k = splitmix64(k ^ (script_idx as u64));
    splitmix64(k ^ call)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn doc(v: serde_json::Value) -> ProjectDocument {
        ProjectDocument::new(v).unwrap()
    }

    fn schedule(ticks: u64) -> RunSchedule {
        RunSchedule::new(ticks, 1, vec![7], vec![])
    }

    #[test]
    fn inert_project_states_identical() {
        let p = doc(json!({"targets": [{"isStage": true, "name": "Stage"}, {"name": "Cat"}]}));
        let trace = execute(&p, &schedule(10), 1);
        assert_eq!(trace.states.len(), 10);
        for s in &trace.states {
            assert_eq!(s.sprites, trace.initial.sprites);
            assert_eq!(s.variables, trace.initial.variables);
        }
    }

    #[test]
    fn repeat_yields_once_per_iteration() {
        // hand trace: one iteration per tick, x = 10 * tick through tick 5
        let p = doc(json!({"targets": [
            {"isStage": true, "name": "Stage"},
            {"name": "Cat", "x": 0, "y": 0, "blocks": {
                "h": {"opcode": "event_whenflagclicked", "next": "r", "topLevel": true},
                "r": {"opcode": "control_repeat",
                      "inputs": {"TIMES": 5, "SUBSTACK": {"block": "m"}}, "next": null},
                "m": {"opcode": "motion_changexby", "inputs": {"DX": 10}}
            }}
        ]}));
        let trace = execute(&p, &schedule(8), 1);
        for t in 1..=5u64 {
            assert_eq!(trace.state_at(t).sprites["Cat"].x, 10.0 * t as f64, "tick {t}");
        }
        assert_eq!(trace.state_at(6).sprites["Cat"].x, 50.0);
        assert_eq!(trace.state_at(8).sprites["Cat"].x, 50.0);
    }

    #[test]
    fn execute_is_deterministic() {
        let p = doc(json!({"targets": [
            {"isStage": true, "name": "Stage", "variables": {"v": 0}},
            {"name": "Cat", "blocks": {
                "h": {"opcode": "event_whenflagclicked", "next": "f", "topLevel": true},
                "f": {"opcode": "control_forever", "inputs": {"SUBSTACK": {"block": "s"}}},
                "s": {"opcode": "data_changevariableby", "fields": {"VARIABLE": "v"},
                      "inputs": {"VALUE": {"block": "rnd"}}},
                "rnd": {"opcode": "operator_random", "inputs": {"FROM": 1, "TO": 10}}
            }}
        ]}));
        let a = execute(&p, &schedule(30), 42);
        let b = execute(&p, &schedule(30), 42);
        assert_eq!(a.states, b.states);
        let c = execute(&p, &schedule(30), 43);
        assert_ne!(a.final_state().variables, c.final_state().variables);
    }

    #[test]
    fn broadcast_starts_receiver_next_tick() {
        let p = doc(json!({"targets": [
            {"isStage": true, "name": "Stage", "variables": {"got": 0}},
            {"name": "A", "blocks": {
                "h": {"opcode": "event_whenflagclicked", "next": "b", "topLevel": true},
                "b": {"opcode": "event_broadcast", "inputs": {"BROADCAST_INPUT": "go"}, "next": null}
            }},
            {"name": "B", "blocks": {
                "h": {"opcode": "event_whenbroadcastreceived",
                      "fields": {"BROADCAST_OPTION": "go"}, "next": "s", "topLevel": true},
                "s": {"opcode": "data_setvariableto", "fields": {"VARIABLE": "got"},
                      "inputs": {"VALUE": 1}, "next": null}
            }}
        ]}));
        let trace = execute(&p, &schedule(3), 1);
        assert_eq!(trace.state_at(1).variables["got"], Scalar::Number(0.0));
        assert_eq!(trace.state_at(1).pending_broadcasts, vec!["go".to_string()]);
        assert_eq!(trace.state_at(2).variables["got"], Scalar::Number(1.0));
        assert_eq!(trace.broadcasts, vec![BroadcastEvent { tick: 1, message: "go".into() }]);
    }

    #[test]
    fn wait_sleeps_for_requested_ticks() {
        let p = doc(json!({"targets": [
            {"isStage": true, "name": "Stage", "variables": {"v": 0}},
            {"name": "Cat", "blocks": {
                "h": {"opcode": "event_whenflagclicked", "next": "w", "topLevel": true},
                "w": {"opcode": "control_wait", "inputs": {"DURATION": 3}, "next": "s"},
                "s": {"opcode": "data_setvariableto", "fields": {"VARIABLE": "v"},
                      "inputs": {"VALUE": 1}, "next": null}
            }}
        ]}));
        let trace = execute(&p, &schedule(6), 1);
        assert_eq!(trace.state_at(3).variables["v"], Scalar::Number(0.0));
        assert_eq!(trace.state_at(4).variables["v"], Scalar::Number(1.0));
    }

    #[test]
    fn coordinates_clamp_to_stage() {
        let p = doc(json!({"targets": [
            {"isStage": true, "name": "Stage"},
            {"name": "Cat", "blocks": {
                "h": {"opcode": "event_whenflagclicked", "next": "g", "topLevel": true},
                "g": {"opcode": "motion_gotoxy", "inputs": {"X": 9999, "Y": -9999}, "next": null}
            }}
        ]}));
        let trace = execute(&p, &schedule(1), 1);
        let s = &trace.state_at(1).sprites["Cat"];
        assert_eq!((s.x, s.y), (240.0, -180.0));
    }

    #[test]
    fn direction_wraps() {
        assert_eq!(wrap_direction(90.0), 90.0);
        assert_eq!(wrap_direction(270.0), -90.0);
        assert_eq!(wrap_direction(180.0), 180.0);
        assert_eq!(wrap_direction(-180.0), 180.0);
    }
}
