use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::HashMap;
use std::rc::Rc;

use serde_json::Value;

use super::parser::{BinOp, CmpOp, Expr, FuncDef, Lit, Stmt, Target};
use super::StubError;

type R<T> = Result<T, StubError>;

const RECURSION_LIMIT: usize = 1000;

fn type_error(msg: impl Into<String>) -> StubError {
    StubError::raised("TypeError", msg)
}

fn value_error(msg: impl Into<String>) -> StubError {
    StubError::raised("ValueError", msg)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum HKey {
    None,
    Int(i64),
    Float(u64),
    Str(String),
    Tuple(Vec<HKey>),
}

/// Insertion-ordered hash table backing dicts and sets.
#[derive(Debug, Default)]
pub struct Table {
    keys: Vec<Val>,
    vals: Vec<Val>,
    index: HashMap<HKey, usize>,
}

impl Table {
    fn get(&self, k: &Val) -> R<Option<&Val>> {
        Ok(self.index.get(&k.hash_key()?).map(|&i| &self.vals[i]))
    }

    fn contains(&self, k: &Val) -> R<bool> {
        Ok(self.index.contains_key(&k.hash_key()?))
    }

    fn insert(&mut self, k: Val, v: Val) -> R<()> {
        let hk = k.hash_key()?;
        match self.index.get(&hk) {
            Some(&i) => self.vals[i] = v,
            None => {
                self.index.insert(hk, self.keys.len());
                self.keys.push(k);
                self.vals.push(v);
            }
        }
        Ok(())
    }

    fn remove(&mut self, k: &Val) -> R<Option<Val>> {
        let Some(i) = self.index.remove(&k.hash_key()?) else {
            return Ok(None);
        };
        self.keys.remove(i);
        let v = self.vals.remove(i);
        for slot in self.index.values_mut() {
            if *slot > i {
                *slot -= 1;
            }
        }
        Ok(Some(v))
    }

    fn len(&self) -> usize {
        self.keys.len()
    }
}

pub struct Closure {
    def: Rc<FuncDef>,
    env: Env,
    defaults: Vec<Option<Val>>,
}

impl std::fmt::Debug for Closure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "<function {}>", self.def.name)
    }
}

#[derive(Debug, Clone)]
pub enum Val {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(Rc<str>),
    List(Rc<RefCell<Vec<Val>>>),
    Tuple(Rc<Vec<Val>>),
    Dict(Rc<RefCell<Table>>),
    Set(Rc<RefCell<Table>>),
    Range(i64, i64, i64),
    Func(Rc<Closure>),
    Builtin(&'static str),
    Module(&'static str),
    Bound(Box<Val>, Rc<str>),
    ExcClass(Rc<str>),
    Exception(Rc<str>, Rc<str>),
}

fn list(items: Vec<Val>) -> Val {
    Val::List(Rc::new(RefCell::new(items)))
}

fn tuple(items: Vec<Val>) -> Val {
    Val::Tuple(Rc::new(items))
}

fn string(s: impl Into<Rc<str>>) -> Val {
    Val::Str(s.into())
}

impl Val {
    pub fn from_json(v: &Value) -> Val {
        match v {
            Value::Null => Val::None,
            Value::Bool(b) => Val::Bool(*b),
            Value::Number(n) => match n.as_i64() {
                Some(i) => Val::Int(i),
                None => Val::Float(n.as_f64().unwrap_or(f64::NAN)),
            },
            Value::String(s) => string(s.as_str()),
            Value::Array(items) => list(items.iter().map(Val::from_json).collect()),
            Value::Object(map) => {
                let mut t = Table::default();
                for (k, v) in map {
                    t.insert(string(k.as_str()), Val::from_json(v)).expect("string keys hash");
                }
                Val::Dict(Rc::new(RefCell::new(t)))
            }
        }
    }

    /// JSON encoding with the same coverage as Python's `json.dumps(allow_nan=False)`.
    pub fn to_json(&self) -> Result<Value, String> {
        Ok(match self {
            Val::None => Value::Null,
            Val::Bool(b) => Value::Bool(*b),
            Val::Int(i) => Value::from(*i),
            Val::Float(f) => serde_json::Number::from_f64(*f)
                .map(Value::Number)
                .ok_or_else(|| format!("non-finite float {}", py_float(*f)))?,
            Val::Str(s) => Value::String(s.to_string()),
            Val::List(items) => Value::Array(items.borrow().iter().map(Val::to_json).collect::<Result<_, _>>()?),
            Val::Tuple(items) => Value::Array(items.iter().map(Val::to_json).collect::<Result<_, _>>()?),
            Val::Dict(t) => {
                let t = t.borrow();
                let mut map = serde_json::Map::new();
                for (k, v) in t.keys.iter().zip(&t.vals) {
                    let key = match k {
                        Val::Str(s) => s.to_string(),
                        Val::Int(_) | Val::Float(_) => py_str(k),
                        Val::Bool(b) => b.to_string(),
                        Val::None => "null".to_string(),
                        other => return Err(format!("dict key of type {}", other.type_name())),
                    };
                    map.insert(key, v.to_json()?);
                }
                Value::Object(map)
            }
            other => return Err(format!("value of type {}", other.type_name())),
        })
    }

    pub fn is_callable(&self) -> bool {
        matches!(self, Val::Func(_) | Val::Builtin(_) | Val::Bound(..) | Val::ExcClass(_))
    }

    fn type_name(&self) -> &'static str {
        match self {
            Val::None => "NoneType",
            Val::Bool(_) => "bool",
            Val::Int(_) => "int",
            Val::Float(_) => "float",
            Val::Str(_) => "str",
            Val::List(_) => "list",
            Val::Tuple(_) => "tuple",
            Val::Dict(_) => "dict",
            Val::Set(_) => "set",
            Val::Range(..) => "range",
            Val::Func(_) | Val::Builtin(_) | Val::Bound(..) => "function",
            Val::Module(_) => "module",
            Val::ExcClass(_) => "type",
            Val::Exception(..) => "exception",
        }
    }

    fn hash_key(&self) -> R<HKey> {
        Ok(match self {
            Val::None => HKey::None,
            Val::Bool(b) => HKey::Int(*b as i64),
            Val::Int(i) => HKey::Int(*i),
            Val::Float(f) if f.fract() == 0.0 && f.abs() < 9.0e18 => HKey::Int(*f as i64),
            Val::Float(f) => HKey::Float(f.to_bits()),
            Val::Str(s) => HKey::Str(s.to_string()),
            Val::Tuple(items) => HKey::Tuple(items.iter().map(Val::hash_key).collect::<R<_>>()?),
            other => return Err(type_error(format!("unhashable type: '{}'", other.type_name()))),
        })
    }

    fn truthy(&self) -> bool {
        match self {
            Val::None => false,
            Val::Bool(b) => *b,
            Val::Int(i) => *i != 0,
            Val::Float(f) => *f != 0.0,
            Val::Str(s) => !s.is_empty(),
            Val::List(l) => !l.borrow().is_empty(),
            Val::Tuple(t) => !t.is_empty(),
            Val::Dict(t) | Val::Set(t) => t.borrow().len() > 0,
            Val::Range(..) => range_len(self) > 0,
            _ => true,
        }
    }

    fn as_int(&self) -> Option<i64> {
        match self {
            Val::Int(i) => Some(*i),
            Val::Bool(b) => Some(*b as i64),
            _ => None,
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Val::Int(i) => Some(*i as f64),
            Val::Bool(b) => Some(*b as i64 as f64),
            Val::Float(f) => Some(*f),
            _ => None,
        }
    }
}

fn range_len(v: &Val) -> i64 {
    let Val::Range(start, stop, step) = *v else { return 0 };
    if step > 0 && stop > start {
        (stop - start + step - 1) / step
    } else if step < 0 && stop < start {
        (start - stop - step - 1) / -step
    } else {
        0
    }
}

fn py_float(f: f64) -> String {
    if f.is_nan() {
        return "nan".into();
    }
    if f.is_infinite() {
        return if f > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let a = f.abs();
    if a != 0.0 && !(1e-4..1e16).contains(&a) {
        let s = format!("{f:e}");
        let (mant, exp) = s.split_once('e').expect("exponent form");
        let exp: i32 = exp.parse().expect("numeric exponent");
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mant}e{sign}{:02}", exp.abs());
    }
    let s = format!("{f}");
    if s.contains('.') {
        s
    } else {
        format!("{s}.0")
    }
}

fn py_repr(v: &Val) -> String {
    match v {
        Val::Str(s) => {
            let quote = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
            let mut out = String::from(quote);
            for c in s.chars() {
                match c {
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\t' => out.push_str("\\t"),
                    '\r' => out.push_str("\\r"),
                    c if c == quote => {
                        out.push('\\');
                        out.push(c);
                    }
                    c => out.push(c),
                }
            }
            out.push(quote);
            out
        }
        other => py_str(other),
    }
}

fn join_repr<'a>(items: impl Iterator<Item = &'a Val>) -> String {
    items.map(py_repr).collect::<Vec<_>>().join(", ")
}

fn py_str(v: &Val) -> String {
    match v {
        Val::None => "None".into(),
        Val::Bool(true) => "True".into(),
        Val::Bool(false) => "False".into(),
        Val::Int(i) => i.to_string(),
        Val::Float(f) => py_float(*f),
        Val::Str(s) => s.to_string(),
        Val::List(l) => format!("[{}]", join_repr(l.borrow().iter())),
        Val::Tuple(t) if t.len() == 1 => format!("({},)", py_repr(&t[0])),
        Val::Tuple(t) => format!("({})", join_repr(t.iter())),
        Val::Dict(t) => {
            let t = t.borrow();
            let parts: Vec<String> = t
                .keys
                .iter()
                .zip(&t.vals)
                .map(|(k, v)| format!("{}: {}", py_repr(k), py_repr(v)))
                .collect();
            format!("{{{}}}", parts.join(", "))
        }
        Val::Set(t) if t.borrow().len() == 0 => "set()".into(),
        Val::Set(t) => format!("{{{}}}", join_repr(t.borrow().keys.iter())),
        Val::Range(a, b, 1) => format!("range({a}, {b})"),
        Val::Range(a, b, s) => format!("range({a}, {b}, {s})"),
        Val::Func(c) => format!("<function {}>", c.def.name),
        Val::Builtin(n) => format!("<built-in function {n}>"),
        Val::Module(n) => format!("<module '{n}'>"),
        Val::Bound(_, n) => format!("<method {n}>"),
        Val::ExcClass(n) => format!("<class '{n}'>"),
        Val::Exception(_, msg) => msg.to_string(),
    }
}

fn py_eq(a: &Val, b: &Val) -> bool {
    match (a, b) {
        (Val::None, Val::None) => true,
        (Val::Str(x), Val::Str(y)) => x == y,
        (Val::List(x), Val::List(y)) => {
            let (x, y) = (x.borrow(), y.borrow());
            x.len() == y.len() && x.iter().zip(y.iter()).all(|(p, q)| py_eq(p, q))
        }
        (Val::Tuple(x), Val::Tuple(y)) => x.len() == y.len() && x.iter().zip(y.iter()).all(|(p, q)| py_eq(p, q)),
        (Val::Dict(x), Val::Dict(y)) => {
            let (x, y) = (x.borrow(), y.borrow());
            x.len() == y.len()
                && x.keys.iter().zip(&x.vals).all(|(k, v)| matches!(y.get(k), Ok(Some(w)) if py_eq(v, w)))
        }
        (Val::Set(x), Val::Set(y)) => {
            let (x, y) = (x.borrow(), y.borrow());
            x.len() == y.len() && x.keys.iter().all(|k| y.contains(k).unwrap_or(false))
        }
        (Val::Range(..), Val::Range(..)) => py_str(a) == py_str(b),
        (Val::Func(x), Val::Func(y)) => Rc::ptr_eq(x, y),
        (Val::Builtin(x), Val::Builtin(y)) => x == y,
        _ => match (a.as_int(), b.as_int()) {
            (Some(x), Some(y)) => x == y,
            _ => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => x == y,
                _ => false,
            },
        },
    }
}

fn seq_cmp(x: &[Val], y: &[Val]) -> R<Ordering> {
    for (p, q) in x.iter().zip(y) {
        if !py_eq(p, q) {
            return py_cmp(p, q);
        }
    }
    Ok(x.len().cmp(&y.len()))
}

fn py_cmp(a: &Val, b: &Val) -> R<Ordering> {
    match (a, b) {
        (Val::Str(x), Val::Str(y)) => Ok(x.cmp(y)),
        (Val::List(x), Val::List(y)) => seq_cmp(&x.borrow(), &y.borrow()),
        (Val::Tuple(x), Val::Tuple(y)) => seq_cmp(x, y),
        _ => {
            if let (Some(x), Some(y)) = (a.as_int(), b.as_int()) {
                return Ok(x.cmp(&y));
            }
            match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => Ok(x.partial_cmp(&y).unwrap_or(Ordering::Equal)),
                _ => Err(type_error(format!(
                    "'<' not supported between instances of '{}' and '{}'",
                    a.type_name(),
                    b.type_name()
                ))),
            }
        }
    }
}

fn overflow() -> StubError {
    StubError::raised("OverflowError", "integer exceeds 64-bit range")
}

fn zero_div() -> StubError {
    StubError::raised("ZeroDivisionError", "division by zero")
}

fn floor_div(a: i64, b: i64) -> R<i64> {
    if b == 0 {
        return Err(zero_div());
    }
    let q = a.checked_div(b).ok_or_else(overflow)?;
    Ok(if (a % b != 0) && ((a < 0) != (b < 0)) { q - 1 } else { q })
}

fn py_mod(a: i64, b: i64) -> R<i64> {
    if b == 0 {
        return Err(zero_div());
    }
    let r = a.checked_rem(b).unwrap_or(0);
    Ok(if r != 0 && ((r < 0) != (b < 0)) { r + b } else { r })
}

fn repeat(items: &[Val], n: i64) -> Vec<Val> {
    let n = n.max(0) as usize;
    let mut out = Vec::with_capacity(items.len() * n);
    for _ in 0..n {
        out.extend(items.iter().cloned());
    }
    out
}

fn binop(op: BinOp, a: &Val, b: &Val) -> R<Val> {
    use BinOp::*;
    if let (Some(x), Some(y)) = (a.as_int(), b.as_int()) {
        return Ok(match op {
            Add => Val::Int(x.checked_add(y).ok_or_else(overflow)?),
            Sub => Val::Int(x.checked_sub(y).ok_or_else(overflow)?),
            Mul => Val::Int(x.checked_mul(y).ok_or_else(overflow)?),
            Div => {
                if y == 0 {
                    return Err(zero_div());
                }
                Val::Float(x as f64 / y as f64)
            }
            FloorDiv => Val::Int(floor_div(x, y)?),
            Mod => Val::Int(py_mod(x, y)?),
            Pow => {
                if y < 0 {
                    if x == 0 {
                        return Err(zero_div());
                    }
                    Val::Float((x as f64).powf(y as f64))
                } else {
                    let e = u32::try_from(y).map_err(|_| overflow())?;
                    Val::Int(x.checked_pow(e).ok_or_else(overflow)?)
                }
            }
        });
    }
    if let (Some(x), Some(y)) = (a.as_f64(), b.as_f64()) {
        return Ok(Val::Float(match op {
            Add => x + y,
            Sub => x - y,
            Mul => x * y,
            Div => {
                if y == 0.0 {
                    return Err(zero_div());
                }
                x / y
            }
            FloorDiv => {
                if y == 0.0 {
                    return Err(zero_div());
                }
                (x / y).floor()
            }
            Mod => {
                if y == 0.0 {
                    return Err(zero_div());
                }
                let r = x % y;
                if r != 0.0 && ((r < 0.0) != (y < 0.0)) {
                    r + y
                } else {
                    r
                }
            }
            Pow => x.powf(y),
        }));
    }
    match (op, a, b) {
        (Add, Val::Str(x), Val::Str(y)) => Ok(string(format!("{x}{y}"))),
        (Add, Val::List(x), Val::List(y)) => {
            let mut out = x.borrow().clone();
            out.extend(y.borrow().iter().cloned());
            Ok(list(out))
        }
        (Add, Val::Tuple(x), Val::Tuple(y)) => Ok(tuple(x.iter().chain(y.iter()).cloned().collect())),
        (Mul, Val::Str(s), n) | (Mul, n, Val::Str(s)) if n.as_int().is_some() => {
            Ok(string(s.repeat(n.as_int().unwrap_or(0).max(0) as usize)))
        }
        (Mul, Val::List(l), n) | (Mul, n, Val::List(l)) if n.as_int().is_some() => {
            Ok(list(repeat(&l.borrow(), n.as_int().unwrap_or(0))))
        }
        (Mul, Val::Tuple(t), n) | (Mul, n, Val::Tuple(t)) if n.as_int().is_some() => {
            Ok(tuple(repeat(t, n.as_int().unwrap_or(0))))
        }
        (Mod, Val::Str(_), _) => Err(type_error("printf-style formatting is not supported")),
        _ => Err(type_error(format!(
            "unsupported operand types for {op:?}: '{}' and '{}'",
            a.type_name(),
            b.type_name()
        ))),
    }
}

fn norm_index(i: i64, len: usize) -> Option<usize> {
    let len = len as i64;
    let j = if i < 0 { i + len } else { i };
    (0..len).contains(&j).then_some(j as usize)
}

fn slice_indices(len: usize, start: Option<i64>, stop: Option<i64>, step: i64) -> Vec<usize> {
    let len = len as i64;
    let clamp = |v: i64, lo: i64, hi: i64| v.max(lo).min(hi);
    let fix = |v: i64| if v < 0 { v + len } else { v };
    let mut out = Vec::new();
    if step > 0 {
        let a = clamp(start.map(fix).unwrap_or(0), 0, len);
        let b = clamp(stop.map(fix).unwrap_or(len), 0, len);
        let mut i = a;
        while i < b {
            out.push(i as usize);
            i += step;
        }
    } else {
        let a = clamp(start.map(fix).unwrap_or(len - 1), -1, len - 1);
        let b = clamp(stop.map(fix).unwrap_or(-1), -1, len - 1);
        let mut i = a;
        while i > b {
            out.push(i as usize);
            i += step;
        }
    }
    out
}

enum Flow {
    Normal,
    Return(Val),
    Break,
    Continue,
}

pub struct Frame {
    vars: RefCell<HashMap<String, Val>>,
    parent: Option<Env>,
}

type Env = Rc<Frame>;

fn new_env(parent: Option<Env>) -> Env {
    Rc::new(Frame {
        vars: RefCell::new(HashMap::new()),
        parent,
    })
}

const BUILTINS: &[&str] = &[
    "abs", "all", "any", "bool", "chr", "dict", "divmod", "enumerate", "filter", "float", "int", "len", "list",
    "map", "max", "min", "ord", "pow", "print", "range", "repr", "reversed", "round", "set", "sorted", "str",
    "sum", "tuple", "zip",
];

pub struct Interpreter {
    globals: Env,
    depth: usize,
}

impl Default for Interpreter {
    fn default() -> Self {
        Self::new()
    }
}

impl Interpreter {
    pub fn new() -> Self {
        Interpreter {
            globals: new_env(None),
            depth: 0,
        }
    }

    pub fn global(&self, name: &str) -> Option<Val> {
        self.globals.vars.borrow().get(name).cloned()
    }

    pub fn exec_module(&mut self, body: &[Stmt]) -> R<()> {
        let env = self.globals.clone();
        match self.exec_block(body, &env)? {
            Flow::Normal => Ok(()),
            _ => Err(StubError::syntax(0, "'return', 'break' or 'continue' outside function")),
        }
    }

    fn lookup(&self, name: &str, env: &Env) -> R<Val> {
        let mut frame = Some(env);
        while let Some(f) = frame {
            if let Some(v) = f.vars.borrow().get(name) {
                return Ok(v.clone());
            }
            frame = f.parent.as_ref();
        }
        if let Some(b) = BUILTINS.iter().find(|b| **b == name) {
            return Ok(Val::Builtin(b));
        }
        match name {
            "math" => return Ok(Val::Module("math")),
            "sys" => return Ok(Val::Module("sys")),
            _ => {}
        }
        if name.ends_with("Error") || name.ends_with("Exception") {
            return Ok(Val::ExcClass(name.into()));
        }
        Err(StubError::raised("NameError", format!("name '{name}' is not defined")))
    }

    fn exec_block(&mut self, body: &[Stmt], env: &Env) -> R<Flow> {
        for stmt in body {
            match self.exec(stmt, env)? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Normal)
    }

    fn exec(&mut self, stmt: &Stmt, env: &Env) -> R<Flow> {
        match stmt {
            Stmt::Expr(e) => {
                self.eval(e, env)?;
            }
            Stmt::Assign(targets, value) => {
                let v = self.eval(value, env)?;
                for t in targets {
                    self.assign(t, v.clone(), env)?;
                }
            }
            Stmt::AugAssign(target, op, value) => {
                let rhs = self.eval(value, env)?;
                match target {
                    Target::Name(n) => {
                        let cur = self.lookup(n, env)?;
                        if let (BinOp::Add, Val::List(l), Val::List(r)) = (op, &cur, &rhs) {
                            let extra = r.borrow().clone();
                            l.borrow_mut().extend(extra);
                        } else {
                            env.vars.borrow_mut().insert(n.clone(), binop(*op, &cur, &rhs)?);
                        }
                    }
                    Target::Index(obj, idx) => {
                        let obj = self.eval(obj, env)?;
                        let idx = self.eval(idx, env)?;
                        let cur = self.index(&obj, &idx)?;
                        self.set_item(&obj, idx, binop(*op, &cur, &rhs)?)?;
                    }
                    Target::Tuple(_) => return Err(StubError::syntax(0, "illegal augmented assignment")),
                }
            }
            Stmt::Return(e) => {
                let v = match e {
                    Some(e) => self.eval(e, env)?,
                    None => Val::None,
                };
                return Ok(Flow::Return(v));
            }
            Stmt::If(branches, other) => {
                for (cond, body) in branches {
                    if self.eval(cond, env)?.truthy() {
                        return self.exec_block(body, env);
                    }
                }
                if let Some(body) = other {
                    return self.exec_block(body, env);
                }
            }
            Stmt::While(cond, body) => {
                while self.eval(cond, env)?.truthy() {
                    match self.exec_block(body, env)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        _ => {}
                    }
                }
            }
            Stmt::For(target, iter, body) => {
                let it = self.eval(iter, env)?;
                if let Val::Range(start, _, step) = it {
                    let n = range_len(&it);
                    for k in 0..n {
                        self.assign(target, Val::Int(start + k * step), env)?;
                        match self.exec_block(body, env)? {
                            Flow::Break => break,
                            Flow::Return(v) => return Ok(Flow::Return(v)),
                            _ => {}
                        }
                    }
                } else {
                    for item in self.iterate(&it)? {
                        self.assign(target, item, env)?;
                        match self.exec_block(body, env)? {
                            Flow::Break => break,
                            Flow::Return(v) => return Ok(Flow::Return(v)),
                            _ => {}
                        }
                    }
                }
            }
            Stmt::Def(def) => {
                let f = self.make_closure(def, env)?;
                env.vars.borrow_mut().insert(def.name.clone(), f);
            }
            Stmt::Raise(e) => {
                let v = match e {
                    Some(e) => self.eval(e, env)?,
                    None => return Err(StubError::raised("RuntimeError", "No active exception to reraise")),
                };
                return Err(match v {
                    Val::Exception(kind, msg) => StubError::raised(&kind, msg.to_string()),
                    Val::ExcClass(kind) => StubError::raised(&kind, ""),
                    _ => type_error("exceptions must derive from BaseException"),
                });
            }
            Stmt::Assert(cond, msg) => {
                if !self.eval(cond, env)?.truthy() {
                    let msg = match msg {
                        Some(m) => py_str(&self.eval(m, env)?),
                        None => String::new(),
                    };
                    return Err(StubError::raised("AssertionError", msg));
                }
            }
            Stmt::Pass => {}
            Stmt::Break => return Ok(Flow::Break),
            Stmt::Continue => return Ok(Flow::Continue),
        }
        Ok(Flow::Normal)
    }

    fn make_closure(&mut self, def: &Rc<FuncDef>, env: &Env) -> R<Val> {
        let defaults = def
            .params
            .iter()
            .map(|(_, d)| d.as_ref().map(|e| self.eval(e, env)).transpose())
            .collect::<R<_>>()?;
        Ok(Val::Func(Rc::new(Closure {
            def: def.clone(),
            env: env.clone(),
            defaults,
        })))
    }

    fn assign(&mut self, target: &Target, v: Val, env: &Env) -> R<()> {
        match target {
            Target::Name(n) => {
                env.vars.borrow_mut().insert(n.clone(), v);
            }
            Target::Index(obj, idx) => {
                let obj = self.eval(obj, env)?;
                let idx = self.eval(idx, env)?;
                self.set_item(&obj, idx, v)?;
            }
            Target::Tuple(targets) => {
                let items = self.iterate(&v)?;
                if items.len() != targets.len() {
                    return Err(value_error(format!(
                        "expected {} values to unpack, got {}",
                        targets.len(),
                        items.len()
                    )));
                }
                for (t, item) in targets.iter().zip(items) {
                    self.assign(t, item, env)?;
                }
            }
        }
        Ok(())
    }

    fn set_item(&mut self, obj: &Val, idx: Val, v: Val) -> R<()> {
        match obj {
            Val::List(l) => {
                let mut l = l.borrow_mut();
                let i = idx.as_int().ok_or_else(|| type_error("list indices must be integers"))?;
                let i = norm_index(i, l.len())
                    .ok_or_else(|| StubError::raised("IndexError", "list assignment index out of range"))?;
                l[i] = v;
                Ok(())
            }
            Val::Dict(t) => t.borrow_mut().insert(idx, v),
            other => Err(type_error(format!(
                "'{}' object does not support item assignment",
                other.type_name()
            ))),
        }
    }

    fn iterate(&self, v: &Val) -> R<Vec<Val>> {
        Ok(match v {
            Val::List(l) => l.borrow().clone(),
            Val::Tuple(t) => t.to_vec(),
            Val::Str(s) => s.chars().map(|c| string(c.to_string())).collect(),
            Val::Dict(t) | Val::Set(t) => t.borrow().keys.clone(),
            Val::Range(start, _, step) => (0..range_len(v)).map(|k| Val::Int(start + k * step)).collect(),
            other => return Err(type_error(format!("'{}' object is not iterable", other.type_name()))),
        })
    }

    fn index(&self, obj: &Val, idx: &Val) -> R<Val> {
        match obj {
            Val::Dict(t) => t
                .borrow()
                .get(idx)?
                .cloned()
                .ok_or_else(|| StubError::raised("KeyError", py_repr(idx))),
            Val::List(_) | Val::Tuple(_) | Val::Str(_) | Val::Range(..) => {
                let i = idx
                    .as_int()
                    .ok_or_else(|| type_error(format!("indices must be integers, not {}", idx.type_name())))?;
                let out_of_range = || StubError::raised("IndexError", format!("{} index out of range", obj.type_name()));
                match obj {
                    Val::List(l) => {
                        let l = l.borrow();
                        norm_index(i, l.len()).map(|j| l[j].clone()).ok_or_else(out_of_range)
                    }
                    Val::Tuple(t) => norm_index(i, t.len()).map(|j| t[j].clone()).ok_or_else(out_of_range),
                    Val::Str(s) => {
                        let chars: Vec<char> = s.chars().collect();
                        norm_index(i, chars.len())
                            .map(|j| string(chars[j].to_string()))
                            .ok_or_else(out_of_range)
                    }
                    Val::Range(start, _, step) => norm_index(i, range_len(obj) as usize)
                        .map(|j| Val::Int(start + j as i64 * step))
                        .ok_or_else(out_of_range),
                    _ => unreachable!(),
                }
            }
            other => Err(type_error(format!("'{}' object is not subscriptable", other.type_name()))),
        }
    }

    fn eval_opt_int(&mut self, e: &Option<Box<Expr>>, env: &Env) -> R<Option<i64>> {
        match e {
            None => Ok(None),
            Some(e) => match self.eval(e, env)? {
                Val::None => Ok(None),
                v => v
                    .as_int()
                    .map(Some)
                    .ok_or_else(|| type_error("slice indices must be integers")),
            },
        }
    }

    fn eval(&mut self, e: &Expr, env: &Env) -> R<Val> {
        Ok(match e {
            Expr::Lit(l) => match l {
                Lit::Int(i) => Val::Int(*i),
                Lit::Float(f) => Val::Float(*f),
                Lit::Str(s) => string(s.as_str()),
                Lit::Bool(b) => Val::Bool(*b),
                Lit::None => Val::None,
            },
            Expr::Name(n) => self.lookup(n, env)?,
            Expr::List(items) => list(items.iter().map(|i| self.eval(i, env)).collect::<R<_>>()?),
            Expr::Tuple(items) => tuple(items.iter().map(|i| self.eval(i, env)).collect::<R<_>>()?),
            Expr::Dict(pairs) => {
                let mut t = Table::default();
                for (k, v) in pairs {
                    let k = self.eval(k, env)?;
                    let v = self.eval(v, env)?;
                    t.insert(k, v)?;
                }
                Val::Dict(Rc::new(RefCell::new(t)))
            }
            Expr::Set(items) => {
                let mut t = Table::default();
                for item in items {
                    t.insert(self.eval(item, env)?, Val::None)?;
                }
                Val::Set(Rc::new(RefCell::new(t)))
            }
            Expr::ListComp { elt, target, iter, cond } => {
                let it = self.eval(iter, env)?;
                // comprehension variables do not leak into the enclosing scope
                let scope = new_env(Some(env.clone()));
                let mut out = Vec::new();
                for item in self.iterate(&it)? {
                    self.assign(target, item, &scope)?;
                    if let Some(c) = cond {
                        if !self.eval(c, &scope)?.truthy() {
                            continue;
                        }
                    }
                    out.push(self.eval(elt, &scope)?);
                }
                list(out)
            }
            Expr::Bin(op, a, b) => {
                let a = self.eval(a, env)?;
                let b = self.eval(b, env)?;
                binop(*op, &a, &b)?
            }
            Expr::Neg(a) => match self.eval(a, env)? {
                Val::Float(f) => Val::Float(-f),
                v => Val::Int(
                    v.as_int()
                        .ok_or_else(|| type_error(format!("bad operand type for unary -: '{}'", v.type_name())))?
                        .checked_neg()
                        .ok_or_else(overflow)?,
                ),
            },
            Expr::Not(a) => Val::Bool(!self.eval(a, env)?.truthy()),
            Expr::And(a, b) => {
                let a = self.eval(a, env)?;
                if !a.truthy() {
                    a
                } else {
                    self.eval(b, env)?
                }
            }
            Expr::Or(a, b) => {
                let a = self.eval(a, env)?;
                if a.truthy() {
                    a
                } else {
                    self.eval(b, env)?
                }
            }
            Expr::Compare(first, rest) => {
                let mut left = self.eval(first, env)?;
                for (op, right) in rest {
                    let right = self.eval(right, env)?;
                    if !self.compare(*op, &left, &right)? {
                        return Ok(Val::Bool(false));
                    }
                    left = right;
                }
                Val::Bool(true)
            }
            Expr::IfExp { cond, then, other } => {
                if self.eval(cond, env)?.truthy() {
                    self.eval(then, env)?
                } else {
                    self.eval(other, env)?
                }
            }
            Expr::Call { func, args, kwargs } => {
                let f = self.eval(func, env)?;
                let args = args.iter().map(|a| self.eval(a, env)).collect::<R<_>>()?;
                let kwargs = kwargs
                    .iter()
                    .map(|(k, v)| Ok((k.clone(), self.eval(v, env)?)))
                    .collect::<R<_>>()?;
                self.call(&f, args, kwargs)?
            }
            Expr::Attr(obj, name) => {
                let obj = self.eval(obj, env)?;
                match (&obj, name.as_str()) {
                    (Val::Module("math"), "inf") => Val::Float(f64::INFINITY),
                    (Val::Module("math"), "pi") => Val::Float(std::f64::consts::PI),
                    (Val::Module("math"), "e") => Val::Float(std::f64::consts::E),
                    (Val::Module("sys"), "maxsize") => Val::Int(i64::MAX),
                    _ => Val::Bound(Box::new(obj), name.as_str().into()),
                }
            }
            Expr::Index(obj, idx) => {
                let obj = self.eval(obj, env)?;
                let idx = self.eval(idx, env)?;
                self.index(&obj, &idx)?
            }
            Expr::Slice(obj, lo, hi, step) => {
                let obj = self.eval(obj, env)?;
                let lo = self.eval_opt_int(lo, env)?;
                let hi = self.eval_opt_int(hi, env)?;
                let step = self.eval_opt_int(step, env)?.unwrap_or(1);
                if step == 0 {
                    return Err(value_error("slice step cannot be zero"));
                }
                match &obj {
                    Val::List(l) => {
                        let l = l.borrow();
                        list(slice_indices(l.len(), lo, hi, step).into_iter().map(|i| l[i].clone()).collect())
                    }
                    Val::Tuple(t) => tuple(slice_indices(t.len(), lo, hi, step).into_iter().map(|i| t[i].clone()).collect()),
                    Val::Str(s) => {
                        let chars: Vec<char> = s.chars().collect();
                        string(
                            slice_indices(chars.len(), lo, hi, step)
                                .into_iter()
                                .map(|i| chars[i])
                                .collect::<String>(),
                        )
                    }
                    other => return Err(type_error(format!("'{}' object is not sliceable", other.type_name()))),
                }
            }
            Expr::Lambda(def) => self.make_closure(def, env)?,
        })
    }

    fn contains(&self, container: &Val, item: &Val) -> R<bool> {
        Ok(match container {
            Val::Str(s) => match item {
                Val::Str(sub) => s.contains(&**sub),
                _ => return Err(type_error("'in <string>' requires string as left operand")),
            },
            Val::Dict(t) | Val::Set(t) => t.borrow().contains(item)?,
            other => self.iterate(other)?.iter().any(|v| py_eq(v, item)),
        })
    }

    fn compare(&self, op: CmpOp, a: &Val, b: &Val) -> R<bool> {
        Ok(match op {
            CmpOp::Eq => py_eq(a, b),
            CmpOp::Ne => !py_eq(a, b),
            CmpOp::Lt => py_cmp(a, b)? == Ordering::Less,
            CmpOp::Le => py_cmp(a, b)? != Ordering::Greater,
            CmpOp::Gt => py_cmp(a, b)? == Ordering::Greater,
            CmpOp::Ge => py_cmp(a, b)? != Ordering::Less,
            CmpOp::In => self.contains(b, a)?,
            CmpOp::NotIn => !self.contains(b, a)?,
            CmpOp::Is => is_same(a, b),
            CmpOp::IsNot => !is_same(a, b),
        })
    }

    pub fn call(&mut self, f: &Val, args: Vec<Val>, kwargs: Vec<(String, Val)>) -> R<Val> {
        match f {
            Val::Func(c) => self.call_closure(c, args, kwargs),
            Val::Builtin(name) => self.call_builtin(name, args, kwargs),
            Val::Bound(recv, name) => self.call_method(recv, name, args, kwargs),
            Val::ExcClass(kind) => {
                let msg = args.first().map(py_str).unwrap_or_default();
                Ok(Val::Exception(kind.clone(), msg.into()))
            }
            other => Err(type_error(format!("'{}' object is not callable", other.type_name()))),
        }
    }

    fn call_closure(&mut self, c: &Rc<Closure>, args: Vec<Val>, kwargs: Vec<(String, Val)>) -> R<Val> {
        let params = &c.def.params;
        if args.len() > params.len() {
            return Err(type_error(format!(
                "{}() takes {} positional arguments but {} were given",
                c.def.name,
                params.len(),
                args.len()
            )));
        }
        let frame = new_env(Some(c.env.clone()));
        {
            let mut vars = frame.vars.borrow_mut();
            let mut slots: Vec<Option<Val>> = args.into_iter().map(Some).collect();
            slots.resize(params.len(), None);
            for (k, v) in kwargs {
                let pos = params
                    .iter()
                    .position(|(p, _)| *p == k)
                    .ok_or_else(|| type_error(format!("{}() got an unexpected keyword argument '{k}'", c.def.name)))?;
                slots[pos] = Some(v);
            }
            for (i, ((name, _), slot)) in params.iter().zip(slots).enumerate() {
                let v = slot.or_else(|| c.defaults[i].clone()).ok_or_else(|| {
                    type_error(format!("{}() missing required argument: '{name}'", c.def.name))
                })?;
                vars.insert(name.clone(), v);
            }
        }
        if self.depth >= RECURSION_LIMIT {
            return Err(StubError::raised("RecursionError", "maximum recursion depth exceeded"));
        }
        self.depth += 1;
        let flow = self.exec_block(&c.def.body, &frame);
        self.depth -= 1;
        match flow? {
            Flow::Return(v) => Ok(v),
            _ => Ok(Val::None),
        }
    }

    fn sort_values(&mut self, items: Vec<Val>, key: Option<&Val>, reverse: bool) -> R<Vec<Val>> {
        let keys = match key {
            Some(k) if !matches!(k, Val::None) => items
                .iter()
                .map(|v| self.call(k, vec![v.clone()], vec![]))
                .collect::<R<Vec<_>>>()?,
            _ => items.clone(),
        };
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut failure = None;
        order.sort_by(|&i, &j| {
            let ord = py_cmp(&keys[i], &keys[j]).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                Ordering::Equal
            });
            if reverse {
                ord.reverse()
            } else {
                ord
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(order.into_iter().map(|i| items[i].clone()).collect())
    }

    fn extreme(&mut self, name: &str, args: Vec<Val>, kwargs: &[(String, Val)]) -> R<Val> {
        let items = if args.len() == 1 { self.iterate(&args[0])? } else { args };
        let key = kwarg(kwargs, "key");
        if items.is_empty() {
            return match kwarg(kwargs, "default") {
                Some(d) => Ok(d.clone()),
                None => Err(value_error(format!("{name}() arg is an empty sequence"))),
            };
        }
        let mut best = items[0].clone();
        let mut best_key = match key {
            Some(k) => self.call(k, vec![best.clone()], vec![])?,
            None => best.clone(),
        };
        for item in items.into_iter().skip(1) {
            let k = match key {
                Some(k) => self.call(k, vec![item.clone()], vec![])?,
                None => item.clone(),
            };
            let ord = py_cmp(&k, &best_key)?;
            let better = if name == "max" { ord == Ordering::Greater } else { ord == Ordering::Less };
            if better {
                best = item;
                best_key = k;
            }
        }
        Ok(best)
    }

    fn call_builtin(&mut self, name: &str, args: Vec<Val>, kwargs: Vec<(String, Val)>) -> R<Val> {
        let arg = |i: usize| -> R<&Val> {
            args.get(i)
                .ok_or_else(|| type_error(format!("{name}() missing argument {}", i + 1)))
        };
        let int_arg = |i: usize| -> R<i64> {
            let v = arg(i)?;
            v.as_int()
                .ok_or_else(|| type_error(format!("'{}' object cannot be interpreted as an integer", v.type_name())))
        };
        Ok(match name {
            "print" => {
                let line: Vec<String> = args.iter().map(py_str).collect();
                eprintln!("{}", line.join(" "));
                Val::None
            }
            "len" => Val::Int(match arg(0)? {
                Val::Str(s) => s.chars().count() as i64,
                Val::List(l) => l.borrow().len() as i64,
                Val::Tuple(t) => t.len() as i64,
                Val::Dict(t) | Val::Set(t) => t.borrow().len() as i64,
                r @ Val::Range(..) => range_len(r),
                other => return Err(type_error(format!("object of type '{}' has no len()", other.type_name()))),
            }),
            "range" => {
                let (start, stop, step) = match args.len() {
                    1 => (0, int_arg(0)?, 1),
                    2 => (int_arg(0)?, int_arg(1)?, 1),
                    3 => (int_arg(0)?, int_arg(1)?, int_arg(2)?),
                    n => return Err(type_error(format!("range expected 1 to 3 arguments, got {n}"))),
                };
                if step == 0 {
                    return Err(value_error("range() arg 3 must not be zero"));
                }
                Val::Range(start, stop, step)
            }
            "str" => string(args.first().map(py_str).unwrap_or_default()),
            "repr" => string(py_repr(arg(0)?)),
            "bool" => Val::Bool(args.first().is_some_and(Val::truthy)),
            "int" => match args.first() {
                None => Val::Int(0),
                Some(Val::Float(f)) => {
                    if !f.is_finite() || f.abs() >= 9.2e18 {
                        return Err(overflow());
                    }
                    Val::Int(f.trunc() as i64)
                }
                Some(Val::Str(s)) => Val::Int(
                    s.trim()
                        .replace('_', "")
                        .parse()
                        .map_err(|_| value_error(format!("invalid literal for int(): {}", py_repr(&args[0]))))?,
                ),
                Some(v) => Val::Int(v.as_int().ok_or_else(|| type_error("int() argument must be a number or string"))?),
            },
            "float" => match args.first() {
                None => Val::Float(0.0),
                Some(Val::Str(s)) => {
                    let t = s.trim().to_ascii_lowercase();
                    Val::Float(match t.as_str() {
                        "inf" | "+inf" | "infinity" => f64::INFINITY,
                        "-inf" | "-infinity" => f64::NEG_INFINITY,
                        "nan" => f64::NAN,
                        _ => t
                            .parse()
                            .map_err(|_| value_error(format!("could not convert string to float: {}", py_repr(&args[0]))))?,
                    })
                }
                Some(v) => Val::Float(v.as_f64().ok_or_else(|| type_error("float() argument must be a number or string"))?),
            },
            "abs" => match arg(0)? {
                Val::Float(f) => Val::Float(f.abs()),
                v => Val::Int(
                    v.as_int()
                        .ok_or_else(|| type_error("bad operand type for abs()"))?
                        .checked_abs()
                        .ok_or_else(overflow)?,
                ),
            },
            "round" => {
                let x = arg(0)?.as_f64().ok_or_else(|| type_error("round() needs a number"))?;
                match args.get(1) {
                    None | Some(Val::None) => {
                        if let Some(i) = arg(0)?.as_int() {
                            Val::Int(i)
                        } else {
                            Val::Int(x.round_ties_even() as i64)
                        }
                    }
                    Some(n) => {
                        let n = n.as_int().ok_or_else(|| type_error("ndigits must be an integer"))?;
                        if let Some(i) = arg(0)?.as_int() {
                            Val::Int(i)
                        } else {
                            let scale = 10f64.powi(n as i32);
                            Val::Float((x * scale).round_ties_even() / scale)
                        }
                    }
                }
            }
            "divmod" => {
                let (a, b) = (arg(0)?, arg(1)?);
                tuple(vec![binop(BinOp::FloorDiv, a, b)?, binop(BinOp::Mod, a, b)?])
            }
            "pow" => binop(BinOp::Pow, arg(0)?, arg(1)?)?,
            "ord" => match arg(0)? {
                Val::Str(s) if s.chars().count() == 1 => Val::Int(s.chars().next().map(|c| c as i64).unwrap_or(0)),
                _ => return Err(type_error("ord() expected a character")),
            },
            "chr" => {
                let c = u32::try_from(int_arg(0)?)
                    .ok()
                    .and_then(char::from_u32)
                    .ok_or_else(|| value_error("chr() arg not in range"))?;
                string(c.to_string())
            }
            "min" | "max" => self.extreme(name, args, &kwargs)?,
            "sum" => {
                let mut total = args.get(1).cloned().unwrap_or(Val::Int(0));
                for v in self.iterate(arg(0)?)? {
                    total = binop(BinOp::Add, &total, &v)?;
                }
                total
            }
            "any" => Val::Bool(self.iterate(arg(0)?)?.iter().any(Val::truthy)),
            "all" => Val::Bool(self.iterate(arg(0)?)?.iter().all(Val::truthy)),
            "list" => list(match args.first() {
                Some(v) => self.iterate(v)?,
                None => vec![],
            }),
            "tuple" => tuple(match args.first() {
                Some(v) => self.iterate(v)?,
                None => vec![],
            }),
            "set" => {
                let mut t = Table::default();
                if let Some(v) = args.first() {
                    for item in self.iterate(v)? {
                        t.insert(item, Val::None)?;
                    }
                }
                Val::Set(Rc::new(RefCell::new(t)))
            }
            "dict" => {
                let mut t = Table::default();
                if let Some(v) = args.first() {
                    match v {
                        Val::Dict(src) => {
                            let src = src.borrow();
                            for (k, v) in src.keys.iter().zip(&src.vals) {
                                t.insert(k.clone(), v.clone())?;
                            }
                        }
                        other => {
                            for pair in self.iterate(other)? {
                                let kv = self.iterate(&pair)?;
                                let [k, v] = <[Val; 2]>::try_from(kv)
                                    .map_err(|_| value_error("dictionary update sequence element has wrong length"))?;
                                t.insert(k, v)?;
                            }
                        }
                    }
                }
                for (k, v) in kwargs {
                    t.insert(string(k), v)?;
                }
                Val::Dict(Rc::new(RefCell::new(t)))
            }
            "sorted" => {
                let items = self.iterate(arg(0)?)?;
                let reverse = kwarg(&kwargs, "reverse").is_some_and(Val::truthy);
                let key = kwarg(&kwargs, "key").cloned();
                list(self.sort_values(items, key.as_ref(), reverse)?)
            }
            "reversed" => {
                let mut items = self.iterate(arg(0)?)?;
                items.reverse();
                list(items)
            }
            "enumerate" => {
                let start = match kwarg(&kwargs, "start").or(args.get(1)) {
                    Some(v) => v.as_int().ok_or_else(|| type_error("start must be an integer"))?,
                    None => 0,
                };
                let items = self.iterate(arg(0)?)?;
                list(
                    items
                        .into_iter()
                        .enumerate()
                        .map(|(i, v)| tuple(vec![Val::Int(start + i as i64), v]))
                        .collect(),
                )
            }
            "zip" => {
                let cols = args.iter().map(|a| self.iterate(a)).collect::<R<Vec<_>>>()?;
                let n = cols.iter().map(Vec::len).min().unwrap_or(0);
                list((0..n).map(|i| tuple(cols.iter().map(|c| c[i].clone()).collect())).collect())
            }
            "map" => {
                let f = arg(0)?.clone();
                let items = self.iterate(arg(1)?)?;
                list(items.into_iter().map(|v| self.call(&f, vec![v], vec![])).collect::<R<_>>()?)
            }
            "filter" => {
                let f = arg(0)?.clone();
                let mut out = Vec::new();
                for v in self.iterate(arg(1)?)? {
                    let keep = match f {
                        Val::None => v.truthy(),
                        _ => self.call(&f, vec![v.clone()], vec![])?.truthy(),
                    };
                    if keep {
                        out.push(v);
                    }
                }
                list(out)
            }
            other => return Err(StubError::raised("NameError", format!("name '{other}' is not defined"))),
        })
    }

    fn call_method(&mut self, recv: &Val, name: &str, args: Vec<Val>, kwargs: Vec<(String, Val)>) -> R<Val> {
        let arg = |i: usize| -> R<&Val> {
            args.get(i)
                .ok_or_else(|| type_error(format!("{name}() missing argument {}", i + 1)))
        };
        let str_arg = |i: usize| -> R<Rc<str>> {
            match arg(i)? {
                Val::Str(s) => Ok(s.clone()),
                other => Err(type_error(format!("expected str, got {}", other.type_name()))),
            }
        };
        let no_attr = || {
            StubError::raised(
                "AttributeError",
                format!("'{}' object has no attribute '{name}'", recv.type_name()),
            )
        };
        match recv {
            Val::Module("math") => {
                let x = || arg(0)?.as_f64().ok_or_else(|| type_error("must be real number"));
                Ok(match name {
                    "sqrt" => {
                        let v = x()?;
                        if v < 0.0 {
                            return Err(value_error("math domain error"));
                        }
                        Val::Float(v.sqrt())
                    }
                    "floor" | "ceil" => match arg(0)? {
                        v if v.as_int().is_some() => Val::Int(v.as_int().unwrap_or(0)),
                        _ => {
                            let v = if name == "floor" { x()?.floor() } else { x()?.ceil() };
                            if !v.is_finite() {
                                return Err(overflow());
                            }
                            Val::Int(v as i64)
                        }
                    },
                    "gcd" => {
                        let (mut a, mut b) = (
                            arg(0)?.as_int().ok_or_else(|| type_error("gcd needs integers"))?.abs(),
                            arg(1)?.as_int().ok_or_else(|| type_error("gcd needs integers"))?.abs(),
                        );
                        while b != 0 {
                            (a, b) = (b, a % b);
                        }
                        Val::Int(a)
                    }
                    "log" => Val::Float(match args.get(1) {
                        Some(base) => x()?.ln() / base.as_f64().ok_or_else(|| type_error("bad base"))?.ln(),
                        None => x()?.ln(),
                    }),
                    "log2" => Val::Float(x()?.log2()),
                    "log10" => Val::Float(x()?.log10()),
                    "exp" => Val::Float(x()?.exp()),
                    "isqrt" => {
                        let n = arg(0)?.as_int().ok_or_else(|| type_error("isqrt needs an integer"))?;
                        if n < 0 {
                            return Err(value_error("isqrt() argument must be nonnegative"));
                        }
                        let mut r = (n as f64).sqrt() as i64;
                        while r.checked_mul(r).is_none_or(|sq| sq > n) {
                            r -= 1;
                        }
                        while (r + 1).checked_mul(r + 1).is_some_and(|sq| sq <= n) {
                            r += 1;
                        }
                        Val::Int(r)
                    }
                    _ => return Err(no_attr()),
                })
            }
            Val::List(l) => Ok(match name {
                "append" => {
                    l.borrow_mut().push(arg(0)?.clone());
                    Val::None
                }
                "extend" => {
                    let items = self.iterate(arg(0)?)?;
                    l.borrow_mut().extend(items);
                    Val::None
                }
                "insert" => {
                    let i = arg(0)?.as_int().ok_or_else(|| type_error("index must be an integer"))?;
                    let mut l = l.borrow_mut();
                    let len = l.len() as i64;
                    let i = if i < 0 { (i + len).max(0) } else { i.min(len) };
                    l.insert(i as usize, arg(1)?.clone());
                    Val::None
                }
                "pop" => {
                    let mut l = l.borrow_mut();
                    let i = match args.first() {
                        Some(v) => v.as_int().ok_or_else(|| type_error("index must be an integer"))?,
                        None => -1,
                    };
                    let i = norm_index(i, l.len()).ok_or_else(|| StubError::raised("IndexError", "pop index out of range"))?;
                    l.remove(i)
                }
                "remove" => {
                    let target = arg(0)?;
                    let mut l = l.borrow_mut();
                    let i = l
                        .iter()
                        .position(|v| py_eq(v, target))
                        .ok_or_else(|| value_error("list.remove(x): x not in list"))?;
                    l.remove(i);
                    Val::None
                }
                "index" => {
                    let target = arg(0)?;
                    let i = l
                        .borrow()
                        .iter()
                        .position(|v| py_eq(v, target))
                        .ok_or_else(|| value_error(format!("{} is not in list", py_repr(target))))?;
                    Val::Int(i as i64)
                }
                "count" => Val::Int(l.borrow().iter().filter(|v| py_eq(v, &args[0])).count() as i64),
                "reverse" => {
                    l.borrow_mut().reverse();
                    Val::None
                }
                "copy" => list(l.borrow().clone()),
                "clear" => {
                    l.borrow_mut().clear();
                    Val::None
                }
                "sort" => {
                    let items = l.borrow().clone();
                    let reverse = kwarg(&kwargs, "reverse").is_some_and(Val::truthy);
                    let key = kwarg(&kwargs, "key").cloned();
                    let sorted = self.sort_values(items, key.as_ref(), reverse)?;
                    *l.borrow_mut() = sorted;
                    Val::None
                }
                _ => return Err(no_attr()),
            }),
            Val::Str(s) => Ok(match name {
                "upper" => string(s.to_uppercase()),
                "lower" => string(s.to_lowercase()),
                "strip" => string(s.trim()),
                "lstrip" => string(s.trim_start()),
                "rstrip" => string(s.trim_end()),
                "isdigit" => Val::Bool(!s.is_empty() && s.chars().all(|c| c.is_ascii_digit())),
                "isalpha" => Val::Bool(!s.is_empty() && s.chars().all(char::is_alphabetic)),
                "isalnum" => Val::Bool(!s.is_empty() && s.chars().all(char::is_alphanumeric)),
                "isspace" => Val::Bool(!s.is_empty() && s.chars().all(char::is_whitespace)),
                "startswith" => Val::Bool(s.starts_with(&*str_arg(0)?)),
                "endswith" => Val::Bool(s.ends_with(&*str_arg(0)?)),
                "replace" => string(s.replace(&*str_arg(0)?, &str_arg(1)?)),
                "find" => {
                    let sub = str_arg(0)?;
                    Val::Int(s.find(&*sub).map(|b| s[..b].chars().count() as i64).unwrap_or(-1))
                }
                "count" => {
                    let sub = str_arg(0)?;
                    Val::Int(if sub.is_empty() {
                        s.chars().count() as i64 + 1
                    } else {
                        s.matches(&*sub).count() as i64
                    })
                }
                "split" => {
                    let parts: Vec<Val> = match args.first() {
                        None | Some(Val::None) => s.split_whitespace().map(string).collect(),
                        Some(_) => {
                            let sep = str_arg(0)?;
                            if sep.is_empty() {
                                return Err(value_error("empty separator"));
                            }
                            s.split(&*sep).map(string).collect()
                        }
                    };
                    list(parts)
                }
                "join" => {
                    let items = self.iterate(arg(0)?)?;
                    let mut parts = Vec::with_capacity(items.len());
                    for v in &items {
                        match v {
                            Val::Str(p) => parts.push(p.to_string()),
                            other => {
                                return Err(type_error(format!(
                                    "sequence item: expected str instance, {} found",
                                    other.type_name()
                                )))
                            }
                        }
                    }
                    string(parts.join(s))
                }
                _ => return Err(no_attr()),
            }),
            Val::Dict(t) => Ok(match name {
                "get" => t.borrow().get(arg(0)?)?.cloned().unwrap_or_else(|| args.get(1).cloned().unwrap_or(Val::None)),
                "keys" => list(t.borrow().keys.clone()),
                "values" => list(t.borrow().vals.clone()),
                "items" => {
                    let t = t.borrow();
                    list(t.keys.iter().zip(&t.vals).map(|(k, v)| tuple(vec![k.clone(), v.clone()])).collect())
                }
                "pop" => match t.borrow_mut().remove(arg(0)?)? {
                    Some(v) => v,
                    None => args
                        .get(1)
                        .cloned()
                        .ok_or_else(|| StubError::raised("KeyError", py_repr(&args[0])))?,
                },
                "setdefault" => {
                    let k = arg(0)?.clone();
                    let existing = t.borrow().get(&k)?.cloned();
                    match existing {
                        Some(v) => v,
                        None => {
                            let d = args.get(1).cloned().unwrap_or(Val::None);
                            t.borrow_mut().insert(k, d.clone())?;
                            d
                        }
                    }
                }
                "copy" => {
                    let src = t.borrow();
                    let mut out = Table::default();
                    for (k, v) in src.keys.iter().zip(&src.vals) {
                        out.insert(k.clone(), v.clone())?;
                    }
                    Val::Dict(Rc::new(RefCell::new(out)))
                }
                _ => return Err(no_attr()),
            }),
            Val::Set(t) => Ok(match name {
                "add" => {
                    t.borrow_mut().insert(arg(0)?.clone(), Val::None)?;
                    Val::None
                }
                "remove" => {
                    if t.borrow_mut().remove(arg(0)?)?.is_none() {
                        return Err(StubError::raised("KeyError", py_repr(&args[0])));
                    }
                    Val::None
                }
                "discard" => {
                    t.borrow_mut().remove(arg(0)?)?;
                    Val::None
                }
                _ => return Err(no_attr()),
            }),
            _ => Err(no_attr()),
        }
    }
}

fn kwarg<'a>(kwargs: &'a [(String, Val)], name: &str) -> Option<&'a Val> {
    kwargs.iter().find(|(k, _)| k == name).map(|(_, v)| v)
}

fn is_same(a: &Val, b: &Val) -> bool {
    match (a, b) {
        (Val::None, Val::None) => true,
        (Val::Bool(x), Val::Bool(y)) => x == y,
        (Val::List(x), Val::List(y)) => Rc::ptr_eq(x, y),
        (Val::Dict(x), Val::Dict(y)) | (Val::Set(x), Val::Set(y)) => Rc::ptr_eq(x, y),
        (Val::Int(x), Val::Int(y)) => x == y,
        (Val::Str(x), Val::Str(y)) => x == y,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_matches_python() {
        assert_eq!(py_float(1.0), "1.0");
        assert_eq!(py_float(0.1), "0.1");
        assert_eq!(py_float(1e20), "1e+20");
        assert_eq!(py_float(1.5e-7), "1.5e-07");
        assert_eq!(py_float(f64::INFINITY), "inf");
    }

    #[test]
    fn python_modulo_and_floor_division() {
        assert_eq!(floor_div(-7, 2).unwrap(), -4);
        assert_eq!(py_mod(-7, 2).unwrap(), 1);
        assert_eq!(py_mod(7, -2).unwrap(), -1);
        assert!(floor_div(1, 0).is_err());
    }

    #[test]
    fn slices() {
        assert_eq!(slice_indices(5, None, None, -1), vec![4, 3, 2, 1, 0]);
        assert_eq!(slice_indices(5, Some(1), Some(-1), 1), vec![1, 2, 3]);
        assert_eq!(slice_indices(5, None, None, 2), vec![0, 2, 4]);
        assert!(slice_indices(0, None, None, -1).is_empty());
    }

    #[test]
    fn table_keeps_insertion_order_after_removal() {
        let mut t = Table::default();
        for k in ["a", "b", "c"] {
            t.insert(string(k), Val::Int(1)).unwrap();
        }
        t.remove(&string("a")).unwrap();
        t.insert(string("d"), Val::Int(2)).unwrap();
        let keys: Vec<String> = t.keys.iter().map(py_str).collect();
        assert_eq!(keys, ["b", "c", "d"]);
        assert_eq!(t.get(&string("d")).unwrap().and_then(Val::as_int), Some(2));
        assert!(t.insert(list(vec![]), Val::None).is_err());
    }

    #[test]
    fn numeric_keys_unify() {
        let mut t = Table::default();
        t.insert(Val::Int(1), Val::Int(10)).unwrap();
        assert!(t.contains(&Val::Float(1.0)).unwrap());
        assert!(t.contains(&Val::Bool(true)).unwrap());
    }
}
