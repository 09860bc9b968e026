//! Compilation of a project document into executable scripts.
//!
//! Only the supported opcode subset compiles to real statements; anything
//! else (unknown opcodes, missing inputs, broken `next` chains) degrades to
//! an inert block that is recorded in the execution trace.

use std::collections::BTreeSet;
use std::rc::Rc;

use serde_json::Value;

use crate::project::ProjectDocument;
use crate::vm::value::Scalar;

#[derive(Debug, Clone)]
pub struct Program {
    pub targets: Vec<TargetDef>,
    /// Blocks that could not be compiled, one note per block.
    pub inert: Vec<InertBlock>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct InertBlock {
    pub target: String,
    pub block_id: String,
    pub opcode: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct TargetDef {
    pub name: String,
    pub is_stage: bool,
    pub x: f64,
    pub y: f64,
    pub direction: f64,
    pub costume_index: i64,
    pub visible: bool,
    pub costume_count: usize,
    pub costume_names: Vec<String>,
    pub variables: Vec<(String, Scalar)>,
    pub scripts: Vec<Script>,
}

#[derive(Debug, Clone)]
pub struct Script {
    pub trigger: Trigger,
    pub body: Rc<Vec<Stmt>>,
    pub root_block: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trigger {
    FlagClicked,
    BroadcastReceived(String),
}

#[derive(Debug, Clone)]
pub enum Stmt {
    Broadcast(Expr),
    Repeat(Expr, Rc<Vec<Stmt>>),
    Forever(Rc<Vec<Stmt>>),
    If(Expr, Rc<Vec<Stmt>>),
    IfElse(Expr, Rc<Vec<Stmt>>, Rc<Vec<Stmt>>),
    /// Duration is measured in ticks.
    Wait(Expr),
    SetVar(String, Expr),
    ChangeVar(String, Expr),
    GoToXy(Expr, Expr),
    ChangeX(Expr),
    ChangeY(Expr),
    PointDirection(Expr),
    SwitchCostume(Expr),
    Show,
    Hide,
    /// Unsupported or malformed block; executes as a no-op.
    Inert,
}

#[derive(Debug, Clone)]
pub enum Expr {
    Lit(Scalar),
    Var(String),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Gt(Box<Expr>, Box<Expr>),
    Lt(Box<Expr>, Box<Expr>),
    Eq(Box<Expr>, Box<Expr>),
    Random(Box<Expr>, Box<Expr>),
}

/// Key under which a variable lives in the shared state map: stage
/// variables keep their bare name (they are global), sprite-local ones are
/// prefixed with the sprite name.
pub fn variable_key(target_name: &str, is_stage: bool, var: &str) -> String {
    if is_stage {
        var.to_string()
    } else {
        format!("{target_name}:{var}")
    }
}

pub fn compile(project: &ProjectDocument) -> Program {
    let targets_json = project.targets();
    let mut inert = Vec::new();

    // First pass: declared variables per target, so references resolve to
    // local or global storage at compile time.
    let mut decls: Vec<(String, bool, Vec<(String, Scalar)>)> = Vec::new();
    for (i, t) in targets_json.iter().enumerate() {
        let is_stage = t.get("isStage").and_then(Value::as_bool).unwrap_or(false);
        let name = t
            .get("name")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| if is_stage { "Stage".into() } else { format!("Sprite{i}") });
        decls.push((name, is_stage, parse_variables(t.get("variables"))));
    }
    let globals: BTreeSet<String> = decls
        .iter()
        .filter(|(_, is_stage, _)| *is_stage)
        .flat_map(|(_, _, vars)| vars.iter().map(|(n, _)| n.clone()))
        .collect();

    let mut targets = Vec::new();
    for (i, t) in targets_json.iter().enumerate() {
        let (name, is_stage, variables) = decls[i].clone();
        let locals: BTreeSet<String> = variables.iter().map(|(n, _)| n.clone()).collect();
        let resolver = VarResolver { target: &name, is_stage, locals: &locals, globals: &globals };
        let mut ctx = CompileCtx { target: &name, resolver, inert: &mut inert };
        let scripts = compile_scripts(t.get("blocks"), &mut ctx);
        let costume_names: Vec<String> = t
            .get("costumes")
            .and_then(Value::as_array)
            .map(|cs| {
                cs.iter()
                    .enumerate()
                    .map(|(j, c)| {
                        c.get("name")
                            .and_then(Value::as_str)
                            .map(str::to_string)
                            .unwrap_or_else(|| format!("costume{j}"))
                    })
                    .collect()
            })
            .unwrap_or_default();
        targets.push(TargetDef {
            x: num_field(t, "x"),
            y: num_field(t, "y"),
            direction: t.get("direction").and_then(Value::as_f64).unwrap_or(90.0),
            costume_index: t.get("currentCostume").and_then(Value::as_i64).unwrap_or(0),
            visible: t.get("visible").and_then(Value::as_bool).unwrap_or(true),
            costume_count: costume_names.len().max(1),
            costume_names,
            name,
            is_stage,
            variables,
            scripts,
        });
    }
    Program { targets, inert }
}

fn num_field(t: &Value, key: &str) -> f64 {
    t.get(key).and_then(Value::as_f64).unwrap_or(0.0)
}

/// Accepts both the plain `{name: value}` map and the `{id: [name, value]}`
/// form found in real project files.
fn parse_variables(v: Option<&Value>) -> Vec<(String, Scalar)> {
    let Some(map) = v.and_then(Value::as_object) else {
        return Vec::new();
    };
    let mut vars = Vec::new();
    for (key, entry) in map {
        match entry {
            Value::Array(pair) if !pair.is_empty() => {
                let name = pair[0].as_str().unwrap_or(key).to_string();
                let value =
                    pair.get(1).and_then(Scalar::from_json).unwrap_or(Scalar::Number(0.0));
                vars.push((name, value));
            }
            other => {
                let value = Scalar::from_json(other).unwrap_or(Scalar::Number(0.0));
                vars.push((key.clone(), value));
            }
        }
    }
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    vars
}

struct VarResolver<'a> {
    target: &'a str,
    is_stage: bool,
    locals: &'a BTreeSet<String>,
    globals: &'a BTreeSet<String>,
}

impl VarResolver<'_> {
    /// Local declaration wins, then a stage global; an undeclared name is
    /// treated as a global created on first write.
    fn key(&self, var: &str) -> String {
        if self.locals.contains(var) {
            variable_key(self.target, self.is_stage, var)
        } else if self.globals.contains(var) {
            var.to_string()
        } else {
            var.to_string()
        }
    }
}

struct CompileCtx<'a> {
    target: &'a str,
    resolver: VarResolver<'a>,
    inert: &'a mut Vec<InertBlock>,
}

impl CompileCtx<'_> {
    fn note_inert(&mut self, block_id: &str, opcode: &str, reason: &str) {
        self.inert.push(InertBlock {
            target: self.target.to_string(),
            block_id: block_id.to_string(),
            opcode: opcode.to_string(),
            reason: reason.to_string(),
        });
    }
}

fn compile_scripts(blocks: Option<&Value>, ctx: &mut CompileCtx) -> Vec<Script> {
    let Some(map) = blocks.and_then(Value::as_object) else {
        return Vec::new();
    };
    // A block roots a script when it says topLevel, or when nothing else
    // references it. Sorting by id keeps script order independent of JSON
    // map ordering.
    let referenced = referenced_ids(map);
    let mut hats: Vec<(&String, &Value)> = map
        .iter()
        .filter(|(id, b)| match b.get("topLevel").and_then(Value::as_bool) {
            Some(top) => top,
            None => !referenced.contains(id.as_str()),
        })
        .collect();
    hats.sort_by(|a, b| a.0.cmp(b.0));

    let mut scripts = Vec::new();
    for (id, block) in hats {
        let opcode = block.get("opcode").and_then(Value::as_str).unwrap_or("");
        let trigger = match opcode {
            "event_whenflagclicked" => Trigger::FlagClicked,
            "event_whenbroadcastreceived" => {
                match field_text(block, "BROADCAST_OPTION") {
                    Some(msg) => Trigger::BroadcastReceived(msg),
                    None => {
                        ctx.note_inert(id, opcode, "missing BROADCAST_OPTION field");
                        continue;
                    }
                }
            }
            other => {
                if !other.is_empty() && !is_reporter_opcode(other) {
                    ctx.note_inert(id, other, "unsupported hat opcode");
                }
                continue;
            }
        };
        let first = block.get("next").and_then(Value::as_str);
        let body = compile_chain(map, first, ctx);
        scripts.push(Script { trigger, body: Rc::new(body), root_block: id.clone() });
    }
    scripts
}

/// Every block id mentioned by another block's `next` chain or inputs.
fn referenced_ids(map: &serde_json::Map<String, Value>) -> BTreeSet<&str> {
    let mut out = BTreeSet::new();
    for block in map.values() {
        if let Some(next) = block.get("next").and_then(Value::as_str) {
            out.insert(next);
        }
        for input in block.get("inputs").and_then(Value::as_object).into_iter().flatten() {
            match input.1 {
                Value::Object(obj) => {
                    if let Some(id) = obj.get("block").and_then(Value::as_str) {
                        out.insert(id);
                    }
                }
                Value::Array(arr) => {
                    if let Some(Value::String(id)) = arr.get(1) {
                        out.insert(id);
                    }
                }
                _ => {}
            }
        }
    }
    out
}

fn is_reporter_opcode(opcode: &str) -> bool {
    matches!(
        opcode,
        "operator_add"
            | "operator_subtract"
            | "operator_multiply"
            | "operator_divide"
            | "operator_gt"
            | "operator_lt"
            | "operator_equals"
            | "operator_random"
            | "data_variable"
    )
}

fn compile_chain<'a>(
    map: &'a serde_json::Map<String, Value>,
    mut next: Option<&'a str>,
    ctx: &mut CompileCtx,
) -> Vec<Stmt> {
    let mut stmts = Vec::new();
    let mut visited = BTreeSet::new();
    while let Some(id) = next {
        if !visited.insert(id.to_string()) {
            ctx.note_inert(id, "", "next-chain cycle");
            break;
        }
        let Some(block) = map.get(id) else {
            ctx.note_inert(id, "", "dangling next reference");
            break;
        };
        stmts.push(compile_stmt(map, id, block, ctx));
        next = block.get("next").and_then(Value::as_str);
    }
    stmts
}

fn compile_stmt(
    map: &serde_json::Map<String, Value>,
    id: &str,
    block: &Value,
    ctx: &mut CompileCtx,
) -> Stmt {
    let opcode = block.get("opcode").and_then(Value::as_str).unwrap_or("");
    let stmt = match opcode {
        "event_broadcast" => input_expr(map, block, "BROADCAST_INPUT", ctx).map(Stmt::Broadcast),
        "control_repeat" => {
            let times = input_expr(map, block, "TIMES", ctx);
            let body = substack(map, block, "SUBSTACK", ctx);
            times.map(|t| Stmt::Repeat(t, body))
        }
        "control_forever" => Some(Stmt::Forever(substack(map, block, "SUBSTACK", ctx))),
        "control_if" => {
            let cond = input_expr(map, block, "CONDITION", ctx);
            let body = substack(map, block, "SUBSTACK", ctx);
            cond.map(|c| Stmt::If(c, body))
        }
        "control_if_else" => {
            let cond = input_expr(map, block, "CONDITION", ctx);
            let then_body = substack(map, block, "SUBSTACK", ctx);
            let else_body = substack(map, block, "SUBSTACK2", ctx);
            cond.map(|c| Stmt::IfElse(c, then_body, else_body))
        }
        "control_wait" => input_expr(map, block, "DURATION", ctx).map(Stmt::Wait),
        "data_setvariableto" => {
            let var = field_text(block, "VARIABLE");
            let value = input_expr(map, block, "VALUE", ctx);
            match (var, value) {
                (Some(v), Some(e)) => Some(Stmt::SetVar(ctx.resolver.key(&v), e)),
                _ => None,
            }
        }
        "data_changevariableby" => {
            let var = field_text(block, "VARIABLE");
            let value = input_expr(map, block, "VALUE", ctx);
            match (var, value) {
                (Some(v), Some(e)) => Some(Stmt::ChangeVar(ctx.resolver.key(&v), e)),
                _ => None,
            }
        }
        "motion_gotoxy" => {
            let x = input_expr(map, block, "X", ctx);
            let y = input_expr(map, block, "Y", ctx);
            match (x, y) {
                (Some(x), Some(y)) => Some(Stmt::GoToXy(x, y)),
                _ => None,
            }
        }
        "motion_changexby" => input_expr(map, block, "DX", ctx).map(Stmt::ChangeX),
        "motion_changeyby" => input_expr(map, block, "DY", ctx).map(Stmt::ChangeY),
        "motion_pointindirection" => {
            input_expr(map, block, "DIRECTION", ctx).map(Stmt::PointDirection)
        }
        "looks_switchcostumeto" => input_expr(map, block, "COSTUME", ctx).map(Stmt::SwitchCostume),
        "looks_show" => Some(Stmt::Show),
        "looks_hide" => Some(Stmt::Hide),
        other => {
            ctx.note_inert(id, other, "unsupported opcode");
            return Stmt::Inert;
        }
    };
    match stmt {
        Some(s) => s,
        None => {
            ctx.note_inert(id, opcode, "missing required input or field");
            Stmt::Inert
        }
    }
}

fn substack(
    map: &serde_json::Map<String, Value>,
    block: &Value,
    input: &str,
    ctx: &mut CompileCtx,
) -> Rc<Vec<Stmt>> {
    let first = match input_ref(block, input) {
        Some(InputRef::Block(id)) => Some(id),
        _ => None,
    };
    Rc::new(compile_chain(map, first.as_deref(), ctx))
}

enum InputRef {
    Block(String),
    Literal(Scalar),
}

/// Inputs come in three shapes: a raw JSON literal, `{"block": id}`, or the
/// shadow-array form `[n, [type, "value"]]` / `[n, "blockid"]` used by real
/// project files.
fn input_ref(block: &Value, name: &str) -> Option<InputRef> {
    let v = block.get("inputs")?.get(name)?;
    match v {
        Value::Object(obj) => {
            obj.get("block").and_then(Value::as_str).map(|id| InputRef::Block(id.to_string()))
        }
        Value::Array(arr) => match arr.get(1) {
            Some(Value::String(id)) => Some(InputRef::Block(id.clone())),
            Some(Value::Array(shadow)) => shadow.get(1).map(|raw| {
                InputRef::Literal(match raw {
                    Value::String(s) => match s.trim().parse::<f64>() {
                        Ok(n) => Scalar::Number(n),
                        Err(_) => Scalar::Text(s.clone()),
                    },
                    other => Scalar::from_json(other).unwrap_or(Scalar::Number(0.0)),
                })
            }),
            _ => None,
        },
        literal => Scalar::from_json(literal).map(InputRef::Literal),
    }
}

fn input_expr(
    map: &serde_json::Map<String, Value>,
    block: &Value,
    name: &str,
    ctx: &mut CompileCtx,
) -> Option<Expr> {
    match input_ref(block, name)? {
        InputRef::Literal(s) => Some(Expr::Lit(s)),
        InputRef::Block(id) => Some(compile_expr(map, &id, ctx)),
    }
}

fn compile_expr(map: &serde_json::Map<String, Value>, id: &str, ctx: &mut CompileCtx) -> Expr {
    let Some(block) = map.get(id) else {
        ctx.note_inert(id, "", "dangling reporter reference");
        return Expr::Lit(Scalar::Number(0.0));
    };
    let opcode = block.get("opcode").and_then(Value::as_str).unwrap_or("");
    let bin = |a: &str, b: &str, f: fn(Box<Expr>, Box<Expr>) -> Expr, ctx: &mut CompileCtx| {
        let lhs = input_expr(map, block, a, ctx).unwrap_or(Expr::Lit(Scalar::Number(0.0)));
        let rhs = input_expr(map, block, b, ctx).unwrap_or(Expr::Lit(Scalar::Number(0.0)));
        f(Box::new(lhs), Box::new(rhs))
    };
    match opcode {
        "operator_add" => bin("NUM1", "NUM2", Expr::Add, ctx),
        "operator_subtract" => bin("NUM1", "NUM2", Expr::Sub, ctx),
        "operator_multiply" => bin("NUM1", "NUM2", Expr::Mul, ctx),
        "operator_divide" => bin("NUM1", "NUM2", Expr::Div, ctx),
        "operator_gt" => bin("OPERAND1", "OPERAND2", Expr::Gt, ctx),
        "operator_lt" => bin("OPERAND1", "OPERAND2", Expr::Lt, ctx),
        "operator_equals" => bin("OPERAND1", "OPERAND2", Expr::Eq, ctx),
        "operator_random" => bin("FROM", "TO", Expr::Random, ctx),
        "data_variable" => match field_text(block, "VARIABLE") {
            Some(v) => Expr::Var(ctx.resolver.key(&v)),
            None => {
                ctx.note_inert(id, opcode, "missing VARIABLE field");
                Expr::Lit(Scalar::Number(0.0))
            }
        },
        other => {
            ctx.note_inert(id, other, "unsupported reporter opcode");
            Expr::Lit(Scalar::Number(0.0))
        }
    }
}

/// Fields hold either a bare string or the `[value, id]` pair form.
fn field_text(block: &Value, name: &str) -> Option<String> {
    let v = block.get("fields")?.get(name)?;
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Array(arr) => arr.first().and_then(Value::as_str).map(str::to_string),
        _ => None,
    }
}
