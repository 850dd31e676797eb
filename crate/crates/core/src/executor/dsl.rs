//! Front end of the hypothesis language: a small, pure, expression-only
//! functional language over [`Value`]s. The program's input is bound to `x`.
//!
//! ```text
//! expr    := "if" expr "then" expr "else" expr
//!          | "let" IDENT "=" expr "in" expr
//!          | "\" IDENT ("," IDENT)* "->" expr
//!          | or
//! or      := and (("||" | "or") and)*
//! and     := cmp (("&&" | "and") cmp)*
//! cmp     := add (("==" | "!=" | "<" | "<=" | ">" | ">=") add)?
//! add     := mul (("+" | "-") mul)*
//! mul     := unary (("*" | "/" | "%") unary)*
//! unary   := ("-" | "!" | "not") unary | postfix
//! postfix := primary ( "[" expr "]" | "[" expr? ":" expr? "]" | "(" args ")" )*
//! primary := INT | "true" | "false" | "on" | "off" | "null" | "undefined" | IDENT
//!          | "(" expr ")" | "(" OP ")" | "[" (expr ("," expr)*)? "]"
//!          | OP                       -- as a call argument, e.g. fold(+, 0, x)
//! ```
//!
//! Attribute words (`red`, `cube`, `metal`, ...) are literals. Builtins are
//! checked for arity at parse time and may be passed as function values.
//! `undefined` makes the whole application undefined at that input.
//! `#` starts a comment that runs to end of line.

use std::fmt;

use num_bigint::BigInt;
use thiserror::Error;

use crate::values::{Color, Material, Shape, Value};

const MAX_PARSE_DEPTH: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DslErrorKind {
    Syntax,
    UnknownIdentifier,
    Arity,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?} error at byte {pos}: {message}")]
pub struct DslError {
    pub kind: DslErrorKind,
    pub pos: usize,
    pub message: String,
}

impl DslError {
    fn syntax(pos: usize, message: impl Into<String>) -> Self {
        DslError {
            kind: DslErrorKind::Syntax,
            pos,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Attribute {
    Color(Color),
    Shape(Shape),
    Material(Material),
}

impl Attribute {
    fn from_word(word: &str) -> Option<Attribute> {
        Color::from_name(word)
            .map(Attribute::Color)
            .or_else(|| Shape::from_name(word).map(Attribute::Shape))
            .or_else(|| Material::from_name(word).map(Attribute::Material))
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Attribute::Color(c) => f.write_str(c.name()),
            Attribute::Shape(s) => f.write_str(s.name()),
            Attribute::Material(m) => f.write_str(m.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

macro_rules! builtins {
    ($($variant:ident => $name:literal / $arity:literal,)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum Builtin { $($variant,)* }

        impl Builtin {
            pub const ALL: &'static [Builtin] = &[$(Builtin::$variant,)*];

            pub fn name(self) -> &'static str {
                match self { $(Builtin::$variant => $name,)* }
            }

            pub fn arity(self) -> usize {
                match self { $(Builtin::$variant => $arity,)* }
            }

            pub fn from_name(name: &str) -> Option<Builtin> {
                match name { $($name => Some(Builtin::$variant),)* _ => None }
            }
        }
    };
}

builtins! {
    Len => "len" / 1,
    Reverse => "reverse" / 1,
    Sort => "sort" / 1,
    Sum => "sum" / 1,
    Max => "max" / 1,
    Min => "min" / 1,
    Head => "head" / 1,
    Last => "last" / 1,
    Tail => "tail" / 1,
    Init => "init" / 1,
    Take => "take" / 2,
    Drop => "drop" / 2,
    Contains => "contains" / 2,
    IndexOf => "index_of" / 2,
    Count => "count" / 2,
    CountIf => "count_if" / 2,
    Map => "map" / 2,
    Filter => "filter" / 2,
    Fold => "fold" / 3,
    All => "all" / 2,
    Any => "any" / 2,
    Append => "append" / 2,
    Prepend => "prepend" / 2,
    Concat => "concat" / 1,
    Range => "range" / 2,
    Repeat => "repeat" / 2,
    Unique => "unique" / 1,
    Zip => "zip" / 2,
    SetAt => "set_at" / 3,
    InsertAt => "insert_at" / 3,
    RemoveAt => "remove_at" / 2,
    Abs => "abs" / 1,
    Until => "until" / 3,
    IsInt => "is_int" / 1,
    IsList => "is_list" / 1,
    Grid => "grid" / 1,
    Rows => "rows" / 1,
    Height => "height" / 1,
    Width => "width" / 1,
    Cell => "cell" / 3,
    SetCell => "set_cell" / 4,
    Fill => "fill" / 3,
    Transpose => "transpose" / 1,
    FlipH => "flip_h" / 1,
    FlipV => "flip_v" / 1,
    Rot90 => "rot90" / 1,
    GridMap => "grid_map" / 2,
    Crop => "crop" / 5,
    Colors => "colors" / 1,
    ColorOf => "color" / 1,
    ShapeOf => "shape" / 1,
    MaterialOf => "material" / 1,
    Is => "is" / 2,
    MakeEntity => "entity" / 3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(Value),
    Undefined,
    Attr(Attribute),
    /// Absolute slot in the environment stack; slot 0 is the input.
    Var(usize),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    /// Binds the value of the first expression to the next slot.
    Let(Box<Expr>, Box<Expr>),
    Lambda {
        params: usize,
        body: Box<Expr>,
    },
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    List(Vec<Expr>),
    Index(Box<Expr>, Box<Expr>),
    Slice(Box<Expr>, Option<Box<Expr>>, Option<Box<Expr>>),
    Builtin(Builtin, Vec<Expr>),
    BuiltinRef(Builtin),
    OpRef(BinOp),
    Call(Box<Expr>, Vec<Expr>),
}

/// A parsed, name-resolved program.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    source: String,
    pub(crate) body: Expr,
}

impl Program {
    pub fn source(&self) -> &str {
        &self.source
    }
}

pub fn parse_dsl(source: &str) -> Result<Program, DslError> {
    let tokens = lex(source)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        scope: vec!["x".to_string()],
        depth: 0,
        end: source.len(),
    };
    if parser.tokens.is_empty() {
        return Err(DslError::syntax(0, "empty program"));
    }
    let body = parser.expr()?;
    if let Some(tok) = parser.tokens.get(parser.pos) {
        return Err(DslError::syntax(
            tok.pos,
            format!("unexpected {}", tok.kind),
        ));
    }
    Ok(Program {
        source: source.to_string(),
        body,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(BigInt),
    Ident(String),
    Sym(&'static str),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Int(n) => write!(f, "integer {n}"),
            Tok::Ident(s) => write!(f, "'{s}'"),
            Tok::Sym(s) => write!(f, "'{s}'"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: Tok,
    pos: usize,
}

const SYMBOLS: &[&str] = &[
    "==", "!=", "<=", ">=", "&&", "||", "->", "(", ")", "[", "]", ",", ":", "+", "-", "*", "/",
    "%", "<", ">", "!", "\\", "=",
];

fn lex(source: &str) -> Result<Vec<Token>, DslError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_whitespace() {
            i += 1;
        } else if b == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else if b.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let n: BigInt = source[start..i]
                .parse()
                .map_err(|_| DslError::syntax(start, "bad integer literal"))?;
            tokens.push(Token {
                kind: Tok::Int(n),
                pos: start,
            });
        } else if b.is_ascii_alphabetic() || b == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            tokens.push(Token {
                kind: Tok::Ident(source[start..i].to_string()),
                pos: start,
            });
        } else if let Some(sym) = SYMBOLS.iter().find(|s| source[i..].starts_with(**s)) {
            tokens.push(Token {
                kind: Tok::Sym(sym),
                pos: i,
            });
            i += sym.len();
        } else {
            let ch = source[i..].chars().next().unwrap_or('?');
            return Err(DslError::syntax(i, format!("unexpected character '{ch}'")));
        }
    }
    Ok(tokens)
}

const KEYWORDS: &[&str] = &[
    "if",
    "then",
    "else",
    "let",
    "in",
    "true",
    "false",
    "on",
    "off",
    "null",
    "undefined",
    "and",
    "or",
    "not",
];

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    scope: Vec<String>,
    depth: usize,
    end: usize,
}

fn binop_of(sym: &str) -> Option<BinOp> {
    Some(match sym {
        "+" => BinOp::Add,
        "-" => BinOp::Sub,
        "*" => BinOp::Mul,
        "/" => BinOp::Div,
        "%" => BinOp::Mod,
        "==" => BinOp::Eq,
        "!=" => BinOp::Ne,
        "<" => BinOp::Lt,
        "<=" => BinOp::Le,
        ">" => BinOp::Gt,
        ">=" => BinOp::Ge,
        "&&" => BinOp::And,
        "||" => BinOp::Or,
        _ => return None,
    })
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn peek_at(&self, ahead: usize) -> Option<&Tok> {
        self.tokens.get(self.pos + ahead).map(|t| &t.kind)
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.pos)
    }

    fn is_sym(&self, sym: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(s)) if *s == sym)
    }

    fn is_word(&self, word: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == word)
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        if self.is_sym(sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, word: &str) -> bool {
        if self.is_word(word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn unexpected(&self, wanted: &str) -> DslError {
        match self.tokens.get(self.pos) {
            Some(tok) => {
                DslError::syntax(tok.pos, format!("expected {wanted}, found {}", tok.kind))
            }
            None => DslError::syntax(self.end, format!("expected {wanted}, found end of input")),
        }
    }

    fn expect_sym(&mut self, sym: &str) -> Result<(), DslError> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("'{sym}'")))
        }
    }

    /// Consumes the closer of a bracket pair, reporting the opener when the
    /// input ends first.
    fn close(&mut self, sym: &str, opened_at: usize) -> Result<(), DslError> {
        if self.eat_sym(sym) {
            return Ok(());
        }
        if self.peek().is_none() {
            let opener = if sym == ")" { '(' } else { '[' };
            return Err(DslError::syntax(
                self.end,
                format!("unclosed '{opener}' opened at byte {opened_at}"),
            ));
        }
        Err(self.unexpected(&format!("'{sym}'")))
    }

    fn expect_word(&mut self, word: &str) -> Result<(), DslError> {
        if self.eat_word(word) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("'{word}'")))
        }
    }

    fn binder(&mut self) -> Result<String, DslError> {
        match self.peek() {
            Some(Tok::Ident(name))
                if !KEYWORDS.contains(&name.as_str()) && Attribute::from_word(name).is_none() =>
            {
                let name = name.clone();
                self.pos += 1;
                Ok(name)
            }
            _ => Err(self.unexpected("a variable name")),
        }
    }

    fn lookup(&self, name: &str) -> Option<usize> {
        self.scope.iter().rposition(|n| n == name)
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        self.depth += 1;
        if self.depth > MAX_PARSE_DEPTH {
            return Err(DslError::syntax(
                self.here(),
                "expression nested too deeply",
            ));
        }
        let result = self.expr_inner();
        self.depth -= 1;
        result
    }

    fn expr_inner(&mut self) -> Result<Expr, DslError> {
        if self.eat_word("if") {
            let cond = self.expr()?;
            self.expect_word("then")?;
            let then = self.expr()?;
            self.expect_word("else")?;
            let otherwise = self.expr()?;
            return Ok(Expr::If(
                Box::new(cond),
                Box::new(then),
                Box::new(otherwise),
            ));
        }
        if self.eat_word("let") {
            let name = self.binder()?;
            self.expect_sym("=")?;
            let bound = self.expr()?;
            self.expect_word("in")?;
            self.scope.push(name);
            let body = self.expr();
            self.scope.pop();
            return Ok(Expr::Let(Box::new(bound), Box::new(body?)));
        }
        if self.eat_sym("\\") {
            let mut names = vec![self.binder()?];
            while self.eat_sym(",") {
                names.push(self.binder()?);
            }
            self.expect_sym("->")?;
            let params = names.len();
            self.scope.extend(names);
            let body = self.expr();
            self.scope.truncate(self.scope.len() - params);
            return Ok(Expr::Lambda {
                params,
                body: Box::new(body?),
            });
        }
        self.or()
    }

    fn or(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.and()?;
        while self.eat_sym("||") || self.eat_word("or") {
            let rhs = self.and()?;
            lhs = Expr::Binary(BinOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.cmp()?;
        while self.eat_sym("&&") || self.eat_word("and") {
            let rhs = self.cmp()?;
            lhs = Expr::Binary(BinOp::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn cmp(&mut self) -> Result<Expr, DslError> {
        let lhs = self.add()?;
        for sym in ["==", "!=", "<=", ">=", "<", ">"] {
            if self.is_sym(sym) && !self.op_is_argument() {
                self.pos += 1;
                let rhs = self.add()?;
                let op = binop_of(sym).expect("comparison symbol");
                return Ok(Expr::Binary(op, Box::new(lhs), Box::new(rhs)));
            }
        }
        Ok(lhs)
    }

    fn add(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.mul()?;
        loop {
            let op = if self.is_sym("+") {
                BinOp::Add
            } else if self.is_sym("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            self.pos += 1;
            let rhs = self.mul()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn mul(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Sym("*")) => BinOp::Mul,
                Some(Tok::Sym("/")) => BinOp::Div,
                Some(Tok::Sym("%")) => BinOp::Mod,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, DslError> {
        if self.is_sym("-") && !self.op_is_argument() {
            self.pos += 1;
            let inner = self.nested(Self::unary)?;
            // Fold negative literals so `-3` is a constant.
            return Ok(match inner {
                Expr::Lit(Value::Int(n)) => Expr::Lit(Value::Int(-n)),
                other => Expr::Unary(UnOp::Neg, Box::new(other)),
            });
        }
        if self.eat_sym("!") || self.eat_word("not") {
            let inner = self.nested(Self::unary)?;
            return Ok(Expr::Unary(UnOp::Not, Box::new(inner)));
        }
        self.postfix()
    }

    fn nested(&mut self, f: fn(&mut Self) -> Result<Expr, DslError>) -> Result<Expr, DslError> {
        self.depth += 1;
        if self.depth > MAX_PARSE_DEPTH {
            return Err(DslError::syntax(
                self.here(),
                "expression nested too deeply",
            ));
        }
        let r = f(self);
        self.depth -= 1;
        r
    }

    /// True when the current operator token stands alone as a call argument.
    fn op_is_argument(&self) -> bool {
        matches!(self.peek(), Some(Tok::Sym(s)) if binop_of(s).is_some())
            && matches!(self.peek_at(1), Some(Tok::Sym("," | ")")))
    }

    fn postfix(&mut self) -> Result<Expr, DslError> {
        let mut expr = self.primary()?;
        loop {
            if self.is_sym("[") {
                let opened = self.here();
                self.pos += 1;
                let start = if self.is_sym(":") {
                    None
                } else {
                    Some(self.expr()?)
                };
                if self.eat_sym(":") {
                    let end = if self.is_sym("]") {
                        None
                    } else {
                        Some(self.expr()?)
                    };
                    self.close("]", opened)?;
                    expr = Expr::Slice(Box::new(expr), start.map(Box::new), end.map(Box::new));
                } else {
                    self.close("]", opened)?;
                    let index = start.ok_or_else(|| self.unexpected("an index"))?;
                    expr = Expr::Index(Box::new(expr), Box::new(index));
                }
            } else if self.is_sym("(") {
                let opened = self.here();
                self.pos += 1;
                let args = self.args(opened)?;
                expr = Expr::Call(Box::new(expr), args);
            } else {
                return Ok(expr);
            }
        }
    }

    fn args(&mut self, opened: usize) -> Result<Vec<Expr>, DslError> {
        let mut args = Vec::new();
        if self.eat_sym(")") {
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.eat_sym(",") {
                continue;
            }
            self.close(")", opened)?;
            return Ok(args);
        }
    }

    fn primary(&mut self) -> Result<Expr, DslError> {
        let start = self.here();
        let Some(tok) = self.peek().cloned() else {
            return Err(self.unexpected("an expression"));
        };
        match tok {
            Tok::Int(n) => {
                self.pos += 1;
                Ok(Expr::Lit(Value::Int(n)))
            }
            Tok::Sym(sym) if binop_of(sym).is_some() && self.op_is_argument() => {
                self.pos += 1;
                Ok(Expr::OpRef(binop_of(sym).expect("checked")))
            }
            Tok::Sym("(") => {
                self.pos += 1;
                if let (Some(Tok::Sym(s)), Some(Tok::Sym(")"))) = (self.peek(), self.peek_at(1)) {
                    if let Some(op) = binop_of(s) {
                        self.pos += 2;
                        return Ok(Expr::OpRef(op));
                    }
                }
                let inner = self.expr()?;
                self.close(")", start)?;
                Ok(inner)
            }
            Tok::Sym("[") => {
                self.pos += 1;
                let mut items = Vec::new();
                if !self.eat_sym("]") {
                    loop {
                        items.push(self.expr()?);
                        if self.eat_sym(",") {
                            continue;
                        }
                        self.close("]", start)?;
                        break;
                    }
                }
                // Constant lists become literals.
                if items.iter().all(|e| matches!(e, Expr::Lit(_))) {
                    let values = items
                        .into_iter()
                        .map(|e| match e {
                            Expr::Lit(v) => v,
                            _ => unreachable!(),
                        })
                        .collect();
                    return Ok(Expr::Lit(Value::List(values)));
                }
                Ok(Expr::List(items))
            }
            Tok::Ident(name) => {
                self.pos += 1;
                self.identifier(&name, start)
            }
            Tok::Sym(_) => Err(self.unexpected_at(start)),
        }
    }

    fn unexpected_at(&mut self, pos: usize) -> DslError {
        self.pos = self
            .tokens
            .iter()
            .position(|t| t.pos == pos)
            .unwrap_or(self.pos);
        self.unexpected("an expression")
    }

    fn identifier(&mut self, name: &str, start: usize) -> Result<Expr, DslError> {
        match name {
            "true" | "on" => return Ok(Expr::Lit(Value::Bool(true))),
            "false" | "off" => return Ok(Expr::Lit(Value::Bool(false))),
            "null" => return Ok(Expr::Lit(Value::Null)),
            "undefined" => return Ok(Expr::Undefined),
            _ => {}
        }
        if KEYWORDS.contains(&name) {
            return Err(DslError::syntax(
                start,
                format!("unexpected keyword '{name}'"),
            ));
        }
        if let Some(slot) = self.lookup(name) {
            return Ok(Expr::Var(slot));
        }
        if let Some(attr) = Attribute::from_word(name) {
            // `color`, `shape` and `material` are builtins, not attributes.
            return Ok(Expr::Attr(attr));
        }
        if let Some(builtin) = Builtin::from_name(name) {
            if self.is_sym("(") {
                let opened = self.here();
                self.pos += 1;
                let args = self.args(opened)?;
                if args.len() != builtin.arity() {
                    return Err(DslError {
                        kind: DslErrorKind::Arity,
                        pos: start,
                        message: format!(
                            "{name} takes {} argument(s), got {}",
                            builtin.arity(),
                            args.len()
                        ),
                    });
                }
                return Ok(Expr::Builtin(builtin, args));
            }
            return Ok(Expr::BuiltinRef(builtin));
        }
        Err(DslError {
            kind: DslErrorKind::UnknownIdentifier,
            pos: start,
            message: format!("unknown identifier '{name}'"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_contains_example() {
        let p = parse_dsl("if contains(x,6) then [6] else [0]").unwrap();
        assert!(matches!(p.body, Expr::If(..)));
    }

    #[test]
    fn empty_source_is_syntax_error() {
        let e = parse_dsl("").unwrap_err();
        assert_eq!(e.kind, DslErrorKind::Syntax);
        let e = parse_dsl("   # only a comment").unwrap_err();
        assert_eq!(e.kind, DslErrorKind::Syntax);
    }

    #[test]
    fn unclosed_paren_reports_opener() {
        let e = parse_dsl("fold(+,0,x").unwrap_err();
        assert_eq!(e.kind, DslErrorKind::Syntax);
        assert_eq!(e.pos, 10);
        assert!(e.message.contains("unclosed '('"), "{}", e.message);
        assert!(e.message.contains("byte 4"), "{}", e.message);
    }

    #[test]
    fn operator_sections_and_refs() {
        assert!(matches!(
            parse_dsl("fold(+,0,x)").unwrap().body,
            Expr::Builtin(Builtin::Fold, ref args) if args[0] == Expr::OpRef(BinOp::Add)
        ));
        assert!(parse_dsl("fold((*), 1, x)").is_ok());
        assert!(parse_dsl("map(reverse, x)").is_ok());
        assert!(parse_dsl("map(-, x)").is_ok());
        assert!(parse_dsl("map(\\v -> -v, x)").is_ok());
    }

    #[test]
    fn name_errors() {
        assert_eq!(
            parse_dsl("y + 1").unwrap_err().kind,
            DslErrorKind::UnknownIdentifier
        );
        assert_eq!(
            parse_dsl("len(x, x)").unwrap_err().kind,
            DslErrorKind::Arity
        );
        assert_eq!(
            parse_dsl("let if = 1 in x").unwrap_err().kind,
            DslErrorKind::Syntax
        );
        // Lambda parameters go out of scope after the body.
        assert_eq!(
            parse_dsl("let f = \\a -> a in a").unwrap_err().kind,
            DslErrorKind::UnknownIdentifier
        );
    }

    #[test]
    fn resolves_slots() {
        let p = parse_dsl("let a = 1 in \\b -> a + b + x").unwrap();
        let Expr::Let(_, body) = p.body else { panic!() };
        let Expr::Lambda { params: 1, body } = *body else {
            panic!()
        };
        assert_eq!(
            *body,
            Expr::Binary(
                BinOp::Add,
                Box::new(Expr::Binary(
                    BinOp::Add,
                    Box::new(Expr::Var(1)),
                    Box::new(Expr::Var(2))
                )),
                Box::new(Expr::Var(0))
            )
        );
    }

    #[test]
    fn deep_nesting_is_rejected_not_overflowed() {
        let src = format!("{}x{}", "(".repeat(5000), ")".repeat(5000));
        assert_eq!(parse_dsl(&src).unwrap_err().kind, DslErrorKind::Syntax);
        let src = format!("{}x", "-".repeat(5000));
        assert_eq!(parse_dsl(&src).unwrap_err().kind, DslErrorKind::Syntax);
    }

    #[test]
    fn slicing_and_attributes() {
        assert!(parse_dsl("x[1:]").is_ok());
        assert!(parse_dsl("x[:-1]").is_ok());
        assert!(parse_dsl("x[0][1]").is_ok());
        assert!(parse_dsl("count_if(\\e -> is(e, red) and is(e, cube), x)").is_ok());
        assert!(parse_dsl("x[]").is_err());
    }

    #[test]
    fn every_builtin_name_round_trips() {
        for b in Builtin::ALL {
            assert_eq!(Builtin::from_name(b.name()), Some(*b));
        }
    }
}
