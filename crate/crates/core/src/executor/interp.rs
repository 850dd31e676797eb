//! Tree-walking evaluator for [`Program`]s.
//!
//! Every node visit and every element produced by a builtin costs one step.
//! Running out of steps or wall-clock time yields [`Outcome::Timeout`];
//! building a value larger than the cell budget, an oversized integer, or
//! nesting calls too deeply yields [`Outcome::ResourceExceeded`]. Sizes are
//! checked before allocation.

use std::rc::Rc;
use std::time::Instant;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};

use super::dsl::{Attribute, BinOp, Builtin, Expr, Program, UnOp};
use super::{ExecLimits, Outcome};
use crate::values::{Entity, Grid, Value};

enum Fault {
    Undefined,
    Runtime(String),
    Timeout,
    Resource(String),
}

type Res<T> = Result<T, Fault>;

fn rt_err<T>(msg: impl Into<String>) -> Res<T> {
    Err(Fault::Runtime(msg.into()))
}

#[derive(Clone)]
enum Rt<'p> {
    Val(Rc<Value>),
    Attr(Attribute),
    Func(Func<'p>),
}

#[derive(Clone)]
enum Func<'p> {
    Closure(Rc<Closure<'p>>),
    Builtin(Builtin),
    Op(BinOp),
}

struct Closure<'p> {
    params: usize,
    body: &'p Expr,
    env: Vec<Rt<'p>>,
}

impl Rt<'_> {
    fn val(v: Value) -> Self {
        Rt::Val(Rc::new(v))
    }

    fn describe(&self) -> &'static str {
        match self {
            Rt::Val(v) => v.type_name(),
            Rt::Attr(_) => "attribute",
            Rt::Func(_) => "function",
        }
    }
}

fn into_value(rt: Rt<'_>) -> Res<Value> {
    match rt {
        Rt::Val(v) => Ok(Rc::try_unwrap(v).unwrap_or_else(|rc| (*rc).clone())),
        other => rt_err(format!("expected a value, found {}", other.describe())),
    }
}

fn as_value<'a>(rt: &'a Rt<'_>) -> Res<&'a Value> {
    match rt {
        Rt::Val(v) => Ok(v),
        other => rt_err(format!("expected a value, found {}", other.describe())),
    }
}

fn as_int<'a>(rt: &'a Rt<'_>) -> Res<&'a BigInt> {
    match as_value(rt)? {
        Value::Int(n) => Ok(n),
        v => rt_err(format!("expected int, found {}", v.type_name())),
    }
}

fn as_i64(rt: &Rt<'_>) -> Res<i64> {
    as_int(rt)?
        .to_i64()
        .map_or_else(|| rt_err("integer out of index range"), Ok)
}

fn as_bool(rt: &Rt<'_>) -> Res<bool> {
    match as_value(rt)? {
        Value::Bool(b) => Ok(*b),
        v => rt_err(format!("expected bool, found {}", v.type_name())),
    }
}

fn as_list<'a>(rt: &'a Rt<'_>) -> Res<&'a [Value]> {
    match as_value(rt)? {
        Value::List(items) => Ok(items),
        v => rt_err(format!("expected list, found {}", v.type_name())),
    }
}

fn as_grid<'a>(rt: &'a Rt<'_>) -> Res<&'a Grid> {
    match as_value(rt)? {
        Value::Grid(g) => Ok(g),
        v => rt_err(format!("expected grid, found {}", v.type_name())),
    }
}

fn as_entity(rt: &Rt<'_>) -> Res<Entity> {
    match as_value(rt)? {
        Value::Entity(e) => Ok(*e),
        v => rt_err(format!("expected entity, found {}", v.type_name())),
    }
}

fn as_attr(rt: &Rt<'_>) -> Res<Attribute> {
    match rt {
        Rt::Attr(a) => Ok(*a),
        other => rt_err(format!("expected attribute, found {}", other.describe())),
    }
}

fn as_cell(n: &BigInt) -> Res<u8> {
    n.to_u8()
        .map_or_else(|| rt_err("grid cell out of range 0..=255"), Ok)
}

/// Python-style index normalization.
fn norm_index(i: i64, len: usize) -> Res<usize> {
    let len_i = len as i64;
    let j = if i < 0 { i + len_i } else { i };
    if (0..len_i).contains(&j) {
        Ok(j as usize)
    } else {
        rt_err(format!("index {i} out of range for length {len}"))
    }
}

fn slice_bound(i: Option<i64>, len: usize, default: usize) -> usize {
    match i {
        None => default,
        Some(i) if i < 0 => (len as i64 + i).max(0) as usize,
        Some(i) => (i as usize).min(len),
    }
}

fn values_equal(a: &Rt<'_>, b: &Rt<'_>) -> Res<bool> {
    match (a, b) {
        (Rt::Val(x), Rt::Val(y)) => Ok(x == y),
        (Rt::Attr(x), Rt::Attr(y)) => Ok(x == y),
        (Rt::Val(_), Rt::Attr(_)) | (Rt::Attr(_), Rt::Val(_)) => Ok(false),
        _ => rt_err("functions cannot be compared"),
    }
}

struct Machine<'l> {
    limits: &'l ExecLimits,
    steps: u64,
    depth: usize,
    started: Instant,
}

impl<'l> Machine<'l> {
    fn charge(&mut self, cost: u64) -> Res<()> {
        let before = self.steps;
        self.steps = self.steps.saturating_add(cost);
        if self.steps > self.limits.max_steps {
            return Err(Fault::Timeout);
        }
        // Check the clock roughly every 4096 steps.
        if before >> 12 != self.steps >> 12 && self.started.elapsed() > self.limits.time {
            return Err(Fault::Timeout);
        }
        Ok(())
    }

    /// Reserves room for a value of `cells` cells.
    fn alloc(&mut self, cells: usize) -> Res<()> {
        if cells > self.limits.max_cells {
            return Err(Fault::Resource(format!(
                "value of {cells} cells exceeds budget of {}",
                self.limits.max_cells
            )));
        }
        self.charge(cells as u64)
    }

    fn check_int(&self, n: BigInt) -> Res<Rt<'static>> {
        if n.bits() > self.limits.max_int_bits {
            return Err(Fault::Resource(format!(
                "integer of {} bits exceeds budget of {}",
                n.bits(),
                self.limits.max_int_bits
            )));
        }
        Ok(Rt::val(Value::Int(n)))
    }

    fn eval<'p>(&mut self, expr: &'p Expr, env: &mut Vec<Rt<'p>>) -> Res<Rt<'p>> {
        self.charge(1)?;
        self.depth += 1;
        if self.depth > self.limits.max_depth {
            return Err(Fault::Resource("evaluation nested too deeply".into()));
        }
        let out = self.eval_inner(expr, env);
        self.depth -= 1;
        out
    }

    fn eval_inner<'p>(&mut self, expr: &'p Expr, env: &mut Vec<Rt<'p>>) -> Res<Rt<'p>> {
        match expr {
            Expr::Lit(v) => Ok(Rt::val(v.clone())),
            Expr::Undefined => Err(Fault::Undefined),
            Expr::Attr(a) => Ok(Rt::Attr(*a)),
            Expr::Var(slot) => Ok(env[*slot].clone()),
            Expr::If(cond, then, otherwise) => {
                let c = self.eval(cond, env)?;
                if as_bool(&c)? {
                    self.eval(then, env)
                } else {
                    self.eval(otherwise, env)
                }
            }
            Expr::Let(bound, body) => {
                let v = self.eval(bound, env)?;
                env.push(v);
                let out = self.eval(body, env);
                env.pop();
                out
            }
            Expr::Lambda { params, body } => Ok(Rt::Func(Func::Closure(Rc::new(Closure {
                params: *params,
                body,
                env: env.clone(),
            })))),
            Expr::Unary(op, inner) => {
                let v = self.eval(inner, env)?;
                match op {
                    UnOp::Neg => Ok(Rt::val(Value::Int(-as_int(&v)?.clone()))),
                    UnOp::Not => Ok(Rt::val(Value::Bool(!as_bool(&v)?))),
                }
            }
            Expr::Binary(BinOp::And, a, b) => {
                if as_bool(&self.eval(a, env)?)? {
                    let r = self.eval(b, env)?;
                    Ok(Rt::val(Value::Bool(as_bool(&r)?)))
                } else {
                    Ok(Rt::val(Value::Bool(false)))
                }
            }
            Expr::Binary(BinOp::Or, a, b) => {
                if as_bool(&self.eval(a, env)?)? {
                    Ok(Rt::val(Value::Bool(true)))
                } else {
                    let r = self.eval(b, env)?;
                    Ok(Rt::val(Value::Bool(as_bool(&r)?)))
                }
            }
            Expr::Binary(op, a, b) => {
                let a = self.eval(a, env)?;
                let b = self.eval(b, env)?;
                self.binop(*op, &a, &b)
            }
            Expr::List(items) => {
                self.alloc(items.len())?;
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    out.push(into_value(self.eval(item, env)?)?);
                }
                Ok(Rt::val(Value::List(out)))
            }
            Expr::Index(target, index) => {
                let t = self.eval(target, env)?;
                let i = as_i64(&self.eval(index, env)?)?;
                match as_value(&t)? {
                    Value::List(items) => Ok(Rt::val(items[norm_index(i, items.len())?].clone())),
                    Value::Grid(g) => {
                        let r = norm_index(i, g.rows())?;
                        self.alloc(g.cols())?;
                        let row = g.row(r).unwrap_or_default();
                        Ok(Rt::val(Value::int_list(row.iter().map(|&c| c as i64))))
                    }
                    v => rt_err(format!("cannot index {}", v.type_name())),
                }
            }
            Expr::Slice(target, start, end) => {
                let t = self.eval(target, env)?;
                let mut bound = |e: &'p Option<Box<Expr>>, me: &mut Self| -> Res<Option<i64>> {
                    e.as_ref().map(|e| as_i64(&me.eval(e, env)?)).transpose()
                };
                let s = bound(start, self)?;
                let e = bound(end, self)?;
                let items = as_list(&t)?;
                let len = items.len();
                let (s, e) = (slice_bound(s, len, 0), slice_bound(e, len, len));
                let picked = if s < e {
                    items[s..e].to_vec()
                } else {
                    Vec::new()
                };
                self.alloc(picked.len())?;
                Ok(Rt::val(Value::List(picked)))
            }
            Expr::Builtin(b, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a, env)?);
                }
                self.builtin(*b, vals)
            }
            Expr::BuiltinRef(b) => Ok(Rt::Func(Func::Builtin(*b))),
            Expr::OpRef(op) => Ok(Rt::Func(Func::Op(*op))),
            Expr::Call(f, args) => {
                let f = self.eval(f, env)?;
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a, env)?);
                }
                self.apply(&f, vals)
            }
        }
    }

    fn apply<'p>(&mut self, f: &Rt<'p>, args: Vec<Rt<'p>>) -> Res<Rt<'p>> {
        let Rt::Func(func) = f else {
            return rt_err(format!("cannot call {}", f.describe()));
        };
        let expected = match func {
            Func::Closure(c) => c.params,
            Func::Builtin(b) => b.arity(),
            Func::Op(_) => 2,
        };
        if args.len() != expected {
            return rt_err(format!(
                "function takes {expected} argument(s), got {}",
                args.len()
            ));
        }
        match func {
            Func::Closure(c) => {
                let mut env = c.env.clone();
                env.extend(args);
                self.eval(c.body, &mut env)
            }
            Func::Builtin(b) => self.builtin(*b, args),
            Func::Op(op) => match op {
                BinOp::And => Ok(Rt::val(Value::Bool(
                    as_bool(&args[0])? && as_bool(&args[1])?,
                ))),
                BinOp::Or => Ok(Rt::val(Value::Bool(
                    as_bool(&args[0])? || as_bool(&args[1])?,
                ))),
                _ => self.binop(*op, &args[0], &args[1]),
            },
        }
    }

    fn call1<'p>(&mut self, f: &Rt<'p>, arg: Value) -> Res<Rt<'p>> {
        self.apply(f, vec![Rt::val(arg)])
    }

    fn predicate<'p>(&mut self, f: &Rt<'p>, arg: &Value) -> Res<bool> {
        let r = self.call1(f, arg.clone())?;
        as_bool(&r)
    }

    fn binop<'p>(&mut self, op: BinOp, a: &Rt<'p>, b: &Rt<'p>) -> Res<Rt<'p>> {
        match op {
            BinOp::Eq => return Ok(Rt::val(Value::Bool(values_equal(a, b)?))),
            BinOp::Ne => return Ok(Rt::val(Value::Bool(!values_equal(a, b)?))),
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                let (x, y) = (as_value(a)?, as_value(b)?);
                if std::mem::discriminant(x) != std::mem::discriminant(y) {
                    return rt_err(format!(
                        "cannot compare {} with {}",
                        x.type_name(),
                        y.type_name()
                    ));
                }
                let ord = x.cmp(y);
                let r = match op {
                    BinOp::Lt => ord.is_lt(),
                    BinOp::Le => ord.is_le(),
                    BinOp::Gt => ord.is_gt(),
                    _ => ord.is_ge(),
                };
                return Ok(Rt::val(Value::Bool(r)));
            }
            _ => {}
        }
        if op == BinOp::Add {
            if let (Value::List(x), Value::List(y)) = (as_value(a)?, as_value(b)?) {
                self.alloc(x.len() + y.len())?;
                let mut out = x.clone();
                out.extend_from_slice(y);
                return Ok(Rt::val(Value::List(out)));
            }
        }
        let (x, y) = (as_int(a)?, as_int(b)?);
        let r = match op {
            BinOp::Add => x + y,
            BinOp::Sub => x - y,
            BinOp::Mul => {
                if x.bits() + y.bits() > self.limits.max_int_bits + 1 {
                    return Err(Fault::Resource("integer product exceeds budget".into()));
                }
                x * y
            }
            BinOp::Div | BinOp::Mod => {
                if y.is_zero() {
                    return rt_err("division by zero");
                }
                if op == BinOp::Div {
                    x.div_floor(y)
                } else {
                    x.mod_floor(y)
                }
            }
            _ => unreachable!("handled above"),
        };
        self.check_int(r)
    }

    fn builtin<'p>(&mut self, b: Builtin, args: Vec<Rt<'p>>) -> Res<Rt<'p>> {
        use Builtin as B;
        let a = &args;
        let ok = |v: Value| Ok(Rt::val(v));
        let list_out = |me: &mut Self, items: Vec<Value>| -> Res<Rt<'p>> {
            me.alloc(items.len())?;
            Ok(Rt::val(Value::List(items)))
        };
        match b {
            B::Len => match as_value(&a[0])? {
                Value::List(items) => ok(Value::int(items.len() as u64)),
                Value::Grid(g) => ok(Value::int(g.rows() as u64)),
                v => rt_err(format!("len of {}", v.type_name())),
            },
            B::Reverse => {
                let mut items = as_list(&a[0])?.to_vec();
                items.reverse();
                list_out(self, items)
            }
            B::Sort => {
                let mut items = as_list(&a[0])?.to_vec();
                if let Some(first) = items.first() {
                    let d = std::mem::discriminant(first);
                    if items.iter().any(|v| std::mem::discriminant(v) != d) {
                        return rt_err("sort of mixed types");
                    }
                }
                self.charge(items.len() as u64)?;
                items.sort();
                list_out(self, items)
            }
            B::Sum => {
                let items = as_list(&a[0])?;
                self.charge(items.len() as u64)?;
                let mut total = BigInt::zero();
                for v in items {
                    match v {
                        Value::Int(n) => total += n,
                        v => return rt_err(format!("sum over {}", v.type_name())),
                    }
                }
                self.check_int(total)
            }
            B::Max | B::Min => {
                let items = as_list(&a[0])?;
                let Some(first) = items.first() else {
                    return rt_err(format!("{} of empty list", b.name()));
                };
                self.charge(items.len() as u64)?;
                let d = std::mem::discriminant(first);
                if items.iter().any(|v| std::mem::discriminant(v) != d) {
                    return rt_err(format!("{} of mixed types", b.name()));
                }
                let pick = if b == B::Max {
                    items.iter().max()
                } else {
                    items.iter().min()
                };
                ok(pick.cloned().unwrap_or(Value::Null))
            }
            B::Head | B::Last => {
                let items = as_list(&a[0])?;
                let pick = if b == B::Head {
                    items.first()
                } else {
                    items.last()
                };
                match pick {
                    Some(v) => ok(v.clone()),
                    None => rt_err(format!("{} of empty list", b.name())),
                }
            }
            B::Tail | B::Init => {
                let items = as_list(&a[0])?;
                let out = match (b, items.len()) {
                    (_, 0) => Vec::new(),
                    (B::Tail, _) => items[1..].to_vec(),
                    _ => items[..items.len() - 1].to_vec(),
                };
                list_out(self, out)
            }
            B::Take | B::Drop => {
                let n = as_i64(&a[0])?;
                if n < 0 {
                    return rt_err(format!("{} with negative count", b.name()));
                }
                let items = as_list(&a[1])?;
                let n = (n as usize).min(items.len());
                let out = if b == B::Take {
                    items[..n].to_vec()
                } else {
                    items[n..].to_vec()
                };
                list_out(self, out)
            }
            B::Contains => {
                let needle = as_value(&a[1])?;
                match as_value(&a[0])? {
                    Value::List(items) => {
                        self.charge(items.len() as u64)?;
                        ok(Value::Bool(items.contains(needle)))
                    }
                    Value::Grid(g) => {
                        self.charge(g.cells().len() as u64)?;
                        let hit = match needle {
                            Value::Int(n) => n.to_u8().is_some_and(|c| g.cells().contains(&c)),
                            _ => false,
                        };
                        ok(Value::Bool(hit))
                    }
                    v => rt_err(format!("contains on {}", v.type_name())),
                }
            }
            B::IndexOf => {
                let items = as_list(&a[0])?;
                let needle = as_value(&a[1])?;
                self.charge(items.len() as u64)?;
                let pos = items
                    .iter()
                    .position(|v| v == needle)
                    .map_or(-1, |p| p as i64);
                ok(Value::int(pos))
            }
            B::Count => {
                let items = as_list(&a[0])?;
                let needle = as_value(&a[1])?;
                self.charge(items.len() as u64)?;
                ok(Value::int(
                    items.iter().filter(|v| *v == needle).count() as u64
                ))
            }
            B::CountIf | B::All | B::Any | B::Filter => {
                let items = as_list(&a[1])?.to_vec();
                let mut kept = Vec::new();
                let mut hits = 0usize;
                for item in items {
                    let pass = self.predicate(&a[0], &item)?;
                    match b {
                        B::All if !pass => return ok(Value::Bool(false)),
                        B::Any if pass => return ok(Value::Bool(true)),
                        _ => {}
                    }
                    if pass {
                        hits += 1;
                        if b == B::Filter {
                            kept.push(item);
                        }
                    }
                }
                match b {
                    B::CountIf => ok(Value::int(hits as u64)),
                    B::All => ok(Value::Bool(true)),
                    B::Any => ok(Value::Bool(false)),
                    _ => list_out(self, kept),
                }
            }
            B::Map => {
                let items = as_list(&a[1])?.to_vec();
                self.alloc(items.len())?;
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    out.push(into_value(self.call1(&a[0], item)?)?);
                }
                ok(Value::List(out))
            }
            B::Fold => {
                let items = as_list(&a[2])?.to_vec();
                let mut acc = a[1].clone();
                for item in items {
                    acc = self.apply(&a[0], vec![acc, Rt::val(item)])?;
                }
                Ok(acc)
            }
            B::Append | B::Prepend => {
                let items = as_list(&a[0])?;
                let v = as_value(&a[1])?.clone();
                self.alloc(items.len() + 1)?;
                let mut out = Vec::with_capacity(items.len() + 1);
                if b == B::Prepend {
                    out.push(v);
                    out.extend_from_slice(items);
                } else {
                    out.extend_from_slice(items);
                    out.push(v);
                }
                ok(Value::List(out))
            }
            B::Concat => {
                let outer = as_list(&a[0])?;
                let mut total = 0usize;
                for v in outer {
                    match v {
                        Value::List(inner) => total = total.saturating_add(inner.len()),
                        v => return rt_err(format!("concat of {}", v.type_name())),
                    }
                }
                self.alloc(total)?;
                let mut out = Vec::with_capacity(total);
                for v in outer {
                    if let Value::List(inner) = v {
                        out.extend_from_slice(inner);
                    }
                }
                ok(Value::List(out))
            }
            B::Range => {
                let (lo, hi) = (as_int(&a[0])?, as_int(&a[1])?);
                if hi <= lo {
                    return ok(Value::List(Vec::new()));
                }
                let span = (hi - lo).to_usize().unwrap_or(usize::MAX);
                self.alloc(span)?;
                let mut out = Vec::with_capacity(span);
                let mut n = lo.clone();
                for _ in 0..span {
                    out.push(Value::Int(n.clone()));
                    n += 1;
                }
                ok(Value::List(out))
            }
            B::Repeat => {
                let v = as_value(&a[0])?;
                let n = as_i64(&a[1])?;
                if n < 0 {
                    return rt_err("repeat with negative count");
                }
                let n = n as usize;
                self.alloc(n.saturating_mul(v.weight()))?;
                ok(Value::List(vec![v.clone(); n]))
            }
            B::Unique => {
                let items = as_list(&a[0])?;
                self.charge(items.len() as u64)?;
                let mut seen = std::collections::HashSet::new();
                let out: Vec<Value> = items.iter().filter(|v| seen.insert(*v)).cloned().collect();
                list_out(self, out)
            }
            B::Zip => {
                let (x, y) = (as_list(&a[0])?, as_list(&a[1])?);
                let n = x.len().min(y.len());
                self.alloc(3 * n)?;
                ok(Value::List(
                    x.iter()
                        .zip(y)
                        .map(|(p, q)| Value::List(vec![p.clone(), q.clone()]))
                        .collect(),
                ))
            }
            B::SetAt | B::InsertAt => {
                let items = as_list(&a[0])?;
                let i = as_i64(&a[1])?;
                let v = as_value(&a[2])?.clone();
                self.alloc(items.len() + 1)?;
                let mut out = items.to_vec();
                if b == B::SetAt {
                    let i = norm_index(i, items.len())?;
                    out[i] = v;
                } else {
                    if i < 0 || i as usize > items.len() {
                        return rt_err(format!("insert position {i} out of range"));
                    }
                    out.insert(i as usize, v);
                }
                ok(Value::List(out))
            }
            B::RemoveAt => {
                let items = as_list(&a[0])?;
                let i = norm_index(as_i64(&a[1])?, items.len())?;
                let mut out = items.to_vec();
                out.remove(i);
                list_out(self, out)
            }
            B::Abs => self.check_int(as_int(&a[0])?.abs()),
            B::Until => {
                let mut v = as_value(&a[2])?.clone();
                loop {
                    if self.predicate(&a[0], &v)? {
                        return ok(v);
                    }
                    self.charge(1)?;
                    v = into_value(self.call1(&a[1], v)?)?;
                }
            }
            B::IsInt => ok(Value::Bool(matches!(as_value(&a[0])?, Value::Int(_)))),
            B::IsList => ok(Value::Bool(matches!(as_value(&a[0])?, Value::List(_)))),
            B::Grid => {
                let rows = as_list(&a[0])?;
                let mut cells: Vec<Vec<u8>> = Vec::with_capacity(rows.len());
                let mut total = 0usize;
                for row in rows {
                    let Value::List(row) = row else {
                        return rt_err("grid rows must be lists");
                    };
                    total = total.saturating_add(row.len());
                    let mut parsed = Vec::with_capacity(row.len());
                    for c in row {
                        match c {
                            Value::Int(n) => parsed.push(as_cell(n)?),
                            v => return rt_err(format!("grid cell of type {}", v.type_name())),
                        }
                    }
                    cells.push(parsed);
                }
                self.alloc(total)?;
                match Grid::from_rows(&cells) {
                    Ok(g) => ok(Value::Grid(g)),
                    Err(e) => rt_err(e.to_string()),
                }
            }
            B::Rows => {
                let g = as_grid(&a[0])?;
                self.alloc(g.cells().len() + g.rows())?;
                ok(Value::List(
                    g.to_rows()
                        .into_iter()
                        .map(|r| Value::int_list(r.into_iter().map(i64::from)))
                        .collect(),
                ))
            }
            B::Height => ok(Value::int(as_grid(&a[0])?.rows() as u64)),
            B::Width => ok(Value::int(as_grid(&a[0])?.cols() as u64)),
            B::Cell => {
                let g = as_grid(&a[0])?;
                let r = norm_index(as_i64(&a[1])?, g.rows())?;
                let c = norm_index(as_i64(&a[2])?, g.cols())?;
                ok(Value::int(g.get(r, c).unwrap_or_default()))
            }
            B::SetCell => {
                let g = as_grid(&a[0])?;
                let r = norm_index(as_i64(&a[1])?, g.rows())?;
                let c = norm_index(as_i64(&a[2])?, g.cols())?;
                let v = as_cell(as_int(&a[3])?)?;
                self.alloc(g.cells().len())?;
                let mut g = g.clone();
                g.set(r, c, v);
                ok(Value::Grid(g))
            }
            B::Fill => {
                let (h, w) = (as_i64(&a[0])?, as_i64(&a[1])?);
                if h < 0 || w < 0 {
                    return rt_err("fill with negative size");
                }
                let v = as_cell(as_int(&a[2])?)?;
                self.alloc((h as usize).saturating_mul(w as usize))?;
                ok(Value::Grid(Grid::filled(h as usize, w as usize, v)))
            }
            B::Transpose | B::FlipH | B::FlipV | B::Rot90 => {
                let g = as_grid(&a[0])?;
                self.alloc(g.cells().len())?;
                let rows = g.to_rows();
                let out = match b {
                    B::Transpose => g.transpose(),
                    B::FlipH => {
                        let flipped: Vec<Vec<u8>> = rows
                            .into_iter()
                            .map(|mut r| {
                                r.reverse();
                                r
                            })
                            .collect();
                        Grid::from_rows(&flipped).unwrap_or_else(|_| g.clone())
                    }
                    B::FlipV => {
                        let mut flipped = rows;
                        flipped.reverse();
                        Grid::from_rows(&flipped).unwrap_or_else(|_| g.clone())
                    }
                    _ => {
                        // Clockwise: transpose, then mirror each row.
                        let t = g.transpose();
                        let rotated: Vec<Vec<u8>> = t
                            .to_rows()
                            .into_iter()
                            .map(|mut r| {
                                r.reverse();
                                r
                            })
                            .collect();
                        Grid::from_rows(&rotated).unwrap_or(t)
                    }
                };
                ok(Value::Grid(out))
            }
            B::GridMap => {
                let g = as_grid(&a[1])?.clone();
                self.alloc(g.cells().len())?;
                let mut out = g.clone();
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        let cell = Value::int(g.get(r, c).unwrap_or_default());
                        let mapped = self.call1(&a[0], cell)?;
                        out.set(r, c, as_cell(as_int(&mapped)?)?);
                    }
                }
                ok(Value::Grid(out))
            }
            B::Crop => {
                let g = as_grid(&a[0])?;
                let dims: Vec<i64> = a[1..5].iter().map(as_i64).collect::<Res<_>>()?;
                let (r0, c0, h, w) = (dims[0], dims[1], dims[2], dims[3]);
                if r0 < 0
                    || c0 < 0
                    || h < 0
                    || w < 0
                    || (r0 + h) as usize > g.rows()
                    || (c0 + w) as usize > g.cols()
                {
                    return rt_err("crop window out of bounds");
                }
                self.alloc((h * w) as usize)?;
                let rows: Vec<Vec<u8>> = (r0..r0 + h)
                    .map(|r| {
                        (c0..c0 + w)
                            .map(|c| g.get(r as usize, c as usize).unwrap_or_default())
                            .collect()
                    })
                    .collect();
                match Grid::from_rows(&rows) {
                    Ok(out) if h > 0 => ok(Value::Grid(out)),
                    _ => ok(Value::Grid(Grid::filled(h as usize, w as usize, 0))),
                }
            }
            B::Colors => {
                let g = as_grid(&a[0])?;
                self.charge(g.cells().len() as u64)?;
                let mut seen = [false; 256];
                for &c in g.cells() {
                    seen[c as usize] = true;
                }
                let out = (0..256i64).filter(|&c| seen[c as usize]);
                ok(Value::int_list(out))
            }
            B::ColorOf => Ok(Rt::Attr(Attribute::Color(as_entity(&a[0])?.color))),
            B::ShapeOf => Ok(Rt::Attr(Attribute::Shape(as_entity(&a[0])?.shape))),
            B::MaterialOf => Ok(Rt::Attr(Attribute::Material(as_entity(&a[0])?.material))),
            B::Is => {
                let e = as_entity(&a[0])?;
                let hit = match as_attr(&a[1])? {
                    Attribute::Color(c) => e.color == c,
                    Attribute::Shape(s) => e.shape == s,
                    Attribute::Material(m) => e.material == m,
                };
                ok(Value::Bool(hit))
            }
            B::MakeEntity => match (as_attr(&a[0])?, as_attr(&a[1])?, as_attr(&a[2])?) {
                (Attribute::Color(c), Attribute::Shape(s), Attribute::Material(m)) => {
                    ok(Value::Entity(Entity::new(c, s, m)))
                }
                _ => rt_err("entity expects (color, shape, material)"),
            },
        }
    }
}

/// Applies `program` to `input`. Never panics on program behaviour; every
/// failure becomes an [`Outcome`] status.
pub fn eval_program(program: &Program, input: &Value, limits: &ExecLimits) -> Outcome {
    let mut machine = Machine {
        limits,
        steps: 0,
        depth: 0,
        started: Instant::now(),
    };
    let mut env = vec![Rt::val(input.clone())];
    let result = machine.eval(&program.body, &mut env).and_then(into_value);
    match result {
        Ok(v) => Outcome::Defined(v),
        Err(Fault::Undefined) => Outcome::Undefined,
        Err(Fault::Runtime(msg)) => Outcome::RuntimeError(msg),
        Err(Fault::Timeout) => Outcome::Timeout,
        Err(Fault::Resource(msg)) => Outcome::ResourceExceeded(msg),
    }
}
