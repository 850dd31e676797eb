//! The value universe shared by every dataset, with its canonical text form.
//!
//! Canonical grammar (no whitespace anywhere):
//!
//! ```text
//! value  := "null" | "on" | "off" | int | list | grid | entity
//! int    := "0" | "-"? [1-9][0-9]*
//! list   := "[" ( value ( "," value )* )? "]"
//! grid   := "G[" ( row ( "," row )* )? "]"
//! row    := "[" ( cell ( "," cell )* )? "]"        cell := 0..=255
//! entity := "<" color "," shape "," material ">"
//! ```
//!
//! Booleans render as `on` / `off`. Entity attributes always appear in the
//! order color, shape, material. Every value has exactly one canonical
//! rendering, so byte equality of canonical text is value equality.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const MAX_NESTING: usize = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValueError {
    #[error("ragged grid: row {row} has {found} cells, expected {expected}")]
    RaggedGrid {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("parse error at byte {pos}: {message}")]
    Parse { pos: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Color {
    Blue,
    Brown,
    Cyan,
    Gray,
    Green,
    Purple,
    Red,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Shape {
    Cube,
    Cylinder,
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Material {
    Metal,
    Rubber,
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Blue,
        Color::Brown,
        Color::Cyan,
        Color::Gray,
        Color::Green,
        Color::Purple,
        Color::Red,
        Color::Yellow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Blue => "blue",
            Color::Brown => "brown",
            Color::Cyan => "cyan",
            Color::Gray => "gray",
            Color::Green => "green",
            Color::Purple => "purple",
            Color::Red => "red",
            Color::Yellow => "yellow",
        }
    }

    pub fn from_name(name: &str) -> Option<Color> {
        Color::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Cube, Shape::Cylinder, Shape::Sphere];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Cube => "cube",
            Shape::Cylinder => "cylinder",
            Shape::Sphere => "sphere",
        }
    }

    pub fn from_name(name: &str) -> Option<Shape> {
        Shape::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl Material {
    pub const ALL: [Material; 2] = [Material::Metal, Material::Rubber];

    pub fn name(self) -> &'static str {
        match self {
            Material::Metal => "metal",
            Material::Rubber => "rubber",
        }
    }

    pub fn from_name(name: &str) -> Option<Material> {
        Material::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// One primitive object: a (color, shape, material) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Entity {
    pub color: Color,
    pub shape: Shape,
    pub material: Material,
}

impl Entity {
    /// Number of distinct entity types in the vocabulary.
    pub const KINDS: usize = 48;

    pub fn new(color: Color, shape: Shape, material: Material) -> Self {
        Entity {
            color,
            shape,
            material,
        }
    }

    /// Mixed-radix index in `0..48`, color-major.
    pub fn index(self) -> usize {
        self.color as usize * 6 + self.shape as usize * 2 + self.material as usize
    }

    pub fn from_index(index: usize) -> Option<Entity> {
        if index >= Self::KINDS {
            return None;
        }
        Some(Entity {
            color: Color::ALL[index / 6],
            shape: Shape::ALL[(index / 2) % 3],
            material: Material::ALL[index % 2],
        })
    }

    pub fn all() -> impl Iterator<Item = Entity> {
        (0..Self::KINDS).filter_map(Entity::from_index)
    }
}

/// A rectangular grid of small integers, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Grid {
    rows: usize,
    cols: usize,
    cells: Vec<u8>,
}

impl Grid {
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Grid, ValueError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut cells = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(ValueError::RaggedGrid {
                    row: i,
                    expected: cols,
                    found: row.len(),
                });
            }
            cells.extend_from_slice(row);
        }
        Ok(Grid {
            rows: rows.len(),
            cols,
            cells,
        })
    }

    pub fn filled(rows: usize, cols: usize, cell: u8) -> Grid {
        Grid {
            rows,
            cols,
            cells: vec![cell; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> Option<u8> {
        if row < self.rows && col < self.cols {
            Some(self.cells[row * self.cols + col])
        } else {
            None
        }
    }

    pub fn set(&mut self, row: usize, col: usize, cell: u8) -> bool {
        if row < self.rows && col < self.cols {
            self.cells[row * self.cols + col] = cell;
            true
        } else {
            false
        }
    }

    pub fn row(&self, row: usize) -> Option<&[u8]> {
        (row < self.rows).then(|| &self.cells[row * self.cols..(row + 1) * self.cols])
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rows)
            .map(|r| self.row(r).unwrap_or_default().to_vec())
            .collect()
    }

    pub fn transpose(&self) -> Grid {
        let mut cells = Vec::with_capacity(self.cells.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                cells.push(self.cells[r * self.cols + c]);
            }
        }
        Grid {
            rows: self.cols,
            cols: self.rows,
            cells,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Null,
    Bool(bool),
    Int(BigInt),
    List(Vec<Value>),
    Grid(Grid),
    Entity(Entity),
}

impl Value {
    pub fn int(n: impl Into<BigInt>) -> Value {
        Value::Int(n.into())
    }

    pub fn int_list<I: IntoIterator<Item = i64>>(items: I) -> Value {
        Value::List(items.into_iter().map(Value::int).collect())
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::List(_) => "list",
            Value::Grid(_) => "grid",
            Value::Entity(_) => "entity",
        }
    }

    /// Number of scalar cells held by this value, used for memory budgeting.
    pub fn weight(&self) -> usize {
        match self {
            Value::List(items) => 1 + items.iter().map(Value::weight).sum::<usize>(),
            Value::Grid(g) => 1 + g.cells.len(),
            Value::Int(n) => 1 + (n.bits() as usize) / 64,
            _ => 1,
        }
    }

    pub fn canonical(&self) -> String {
        let mut out = String::new();
        self.write_canonical(&mut out);
        out
    }

    fn write_canonical(&self, out: &mut String) {
        use std::fmt::Write;
        match self {
            Value::Null => out.push_str("null"),
            Value::Bool(true) => out.push_str("on"),
            Value::Bool(false) => out.push_str("off"),
            Value::Int(n) => {
                let _ = write!(out, "{n}");
            }
            Value::List(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    item.write_canonical(out);
                }
                out.push(']');
            }
            Value::Grid(g) => {
                out.push_str("G[");
                for r in 0..g.rows {
                    if r > 0 {
                        out.push(',');
                    }
                    out.push('[');
                    for (c, cell) in g.row(r).unwrap_or_default().iter().enumerate() {
                        if c > 0 {
                            out.push(',');
                        }
                        let _ = write!(out, "{cell}");
                    }
                    out.push(']');
                }
                out.push(']');
            }
            Value::Entity(e) => {
                out.push('<');
                out.push_str(e.color.name());
                out.push(',');
                out.push_str(e.shape.name());
                out.push(',');
                out.push_str(e.material.name());
                out.push('>');
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl FromStr for Value {
    type Err = ValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_value(s)
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.canonical())
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_value(&text).map_err(serde::de::Error::custom)
    }
}

pub fn canonicalize(v: &Value) -> String {
    v.canonical()
}

pub fn equal_values(a: &Value, b: &Value) -> bool {
    a == b
}

pub fn parse_value(text: &str) -> Result<Value, ValueError> {
    let mut parser = Parser {
        bytes: text.as_bytes(),
        pos: 0,
    };
    let value = parser.value(0)?;
    if parser.pos != parser.bytes.len() {
        return Err(parser.error("trailing input"));
    }
    Ok(value)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> ValueError {
        ValueError::Parse {
            pos: self.pos,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, byte: u8) -> Result<(), ValueError> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected '{}'", byte as char)))
        }
    }

    fn value(&mut self, depth: usize) -> Result<Value, ValueError> {
        if depth > MAX_NESTING {
            return Err(self.error("nesting too deep"));
        }
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'[') => self.list(depth),
            Some(b'<') => self.entity(),
            Some(b'G') => self.grid(),
            Some(b'-' | b'0'..=b'9') => self.int().map(Value::Int),
            Some(b'a'..=b'z') => {
                let start = self.pos;
                let word = self.word();
                match word {
                    "null" => Ok(Value::Null),
                    "on" => Ok(Value::Bool(true)),
                    "off" => Ok(Value::Bool(false)),
                    _ => Err(ValueError::Parse {
                        pos: start,
                        message: format!("unknown keyword '{word}'"),
                    }),
                }
            }
            Some(b) => Err(self.error(format!("unexpected character '{}'", b as char))),
        }
    }

    fn word(&mut self) -> &str {
        let start = self.pos;
        while matches!(self.peek(), Some(b'a'..=b'z')) {
            self.pos += 1;
        }
        // ASCII lowercase only, always valid UTF-8.
        std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or_default()
    }

    fn digits(&mut self) -> Result<&str, ValueError> {
        let negative = self.peek() == Some(b'-');
        let start = self.pos;
        if negative {
            self.pos += 1;
        }
        let first = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        let body = &self.bytes[first..self.pos];
        if body.is_empty() {
            return Err(self.error("expected digit"));
        }
        if body.len() > 1 && body[0] == b'0' {
            return Err(ValueError::Parse {
                pos: first,
                message: "leading zero".into(),
            });
        }
        if negative && body == b"0" {
            return Err(ValueError::Parse {
                pos: start,
                message: "negative zero".into(),
            });
        }
        Ok(std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or_default())
    }

    fn int(&mut self) -> Result<BigInt, ValueError> {
        let start = self.pos;
        let text = self.digits()?;
        text.parse::<BigInt>().map_err(|e| ValueError::Parse {
            pos: start,
            message: e.to_string(),
        })
    }

    fn cell(&mut self) -> Result<u8, ValueError> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            return Err(self.error("grid cells are unsigned"));
        }
        let text = self.digits()?;
        text.parse::<u8>().map_err(|_| ValueError::Parse {
            pos: start,
            message: "grid cell out of range 0..=255".into(),
        })
    }

    fn list(&mut self, depth: usize) -> Result<Value, ValueError> {
        self.expect(b'[')?;
        let mut items = Vec::new();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(Value::List(items));
        }
        loop {
            items.push(self.value(depth + 1)?);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    return Ok(Value::List(items));
                }
                _ => return Err(self.error("expected ',' or ']'")),
            }
        }
    }

    fn grid(&mut self) -> Result<Value, ValueError> {
        let start = self.pos;
        self.expect(b'G')?;
        self.expect(b'[')?;
        let mut rows: Vec<Vec<u8>> = Vec::new();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(Value::Grid(Grid::filled(0, 0, 0)));
        }
        loop {
            self.expect(b'[')?;
            let mut row = Vec::new();
            if self.peek() == Some(b']') {
                self.pos += 1;
            } else {
                loop {
                    row.push(self.cell()?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b']') => {
                            self.pos += 1;
                            break;
                        }
                        _ => return Err(self.error("expected ',' or ']' in grid row")),
                    }
                }
            }
            rows.push(row);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    break;
                }
                _ => return Err(self.error("expected ',' or ']' after grid row")),
            }
        }
        Grid::from_rows(&rows)
            .map(Value::Grid)
            .map_err(|e| ValueError::Parse {
                pos: start,
                message: e.to_string(),
            })
    }

    fn entity(&mut self) -> Result<Value, ValueError> {
        self.expect(b'<')?;
        let at = self.pos;
        let color = Color::from_name(self.word()).ok_or_else(|| ValueError::Parse {
            pos: at,
            message: "unknown color".into(),
        })?;
        self.expect(b',')?;
        let at = self.pos;
        let shape = Shape::from_name(self.word()).ok_or_else(|| ValueError::Parse {
            pos: at,
            message: "unknown shape".into(),
        })?;
        self.expect(b',')?;
        let at = self.pos;
        let material = Material::from_name(self.word()).ok_or_else(|| ValueError::Parse {
            pos: at,
            message: "unknown material".into(),
        })?;
        self.expect(b'>')?;
        Ok(Value::Entity(Entity::new(color, shape, material)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Pooled,
}

/// One input-output pair to be explained.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub input: Value,
    pub output: Value,
}

impl Observation {
    pub fn new(input: Value, output: Value) -> Self {
        Observation { input, output }
    }
}

/// The observations of one problem. Pairs are unique after canonicalization;
/// `splits[i]` records where `pairs[i]` came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub problem_id: String,
    pub pairs: Vec<Observation>,
    pub splits: Vec<Split>,
    pub provenance: Split,
}

impl ObservationSet {
    /// Builds a set, dropping exact duplicate pairs (first occurrence wins).
    /// Returns the set and the number of duplicates removed.
    pub fn from_tagged(
        problem_id: impl Into<String>,
        tagged: impl IntoIterator<Item = (Observation, Split)>,
        provenance: Split,
    ) -> (ObservationSet, usize) {
        let mut seen = std::collections::HashSet::new();
        let mut pairs = Vec::new();
        let mut splits = Vec::new();
        let mut dropped = 0;
        for (obs, split) in tagged {
            if seen.insert(obs.clone()) {
                pairs.push(obs);
                splits.push(split);
            } else {
                dropped += 1;
            }
        }
        (
            ObservationSet {
                problem_id: problem_id.into(),
                pairs,
                splits,
                provenance,
            },
            dropped,
        )
    }

    pub fn new(
        problem_id: impl Into<String>,
        pairs: impl IntoIterator<Item = Observation>,
        provenance: Split,
    ) -> ObservationSet {
        Self::from_tagged(
            problem_id,
            pairs.into_iter().map(|p| (p, provenance)),
            provenance,
        )
        .0
    }

    /// Pools train and test pairs, keeping each pair's origin.
    pub fn pooled(
        problem_id: impl Into<String>,
        train: impl IntoIterator<Item = Observation>,
        test: impl IntoIterator<Item = Observation>,
    ) -> (ObservationSet, usize) {
        let tagged = train
            .into_iter()
            .map(|o| (o, Split::Train))
            .chain(test.into_iter().map(|o| (o, Split::Test)));
        Self::from_tagged(problem_id, tagged, Split::Pooled)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> ObservationSet {
        ObservationSet {
            problem_id: self.problem_id.clone(),
            pairs: indices.iter().map(|&i| self.pairs[i].clone()).collect(),
            splits: indices.iter().map(|&i| self.splits[i]).collect(),
            provenance: self.provenance,
        }
    }
}
