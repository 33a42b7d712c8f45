//! Text formats for functions, support families and grid fields.
//!
//! Function files start with `masses: w1 ... wN` followed by one
//! `name: v1 ... vN` line per function. Family files add `pair: a name`
//! lines referring to functions defined anywhere in the file. `#` starts a
//! comment; blank lines are ignored.
//!
//! Grid field files start with `box: n e1 ... e2n p1 ... p2n [periodic]`
//! (half-widths and point counts per axis, box centred at the origin)
//! followed by the samples in row-major order, last axis fastest.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::flow::{Boundary, DarbouxBox, GridField};
use crate::functional::SupportFamily;
use crate::measure::{parse_rational, DiscreteFunction, MeasureSpace};

/// A measure space and the functions defined on it, in file order.
#[derive(Debug, Clone)]
pub struct FunctionFile {
    pub space: Arc<MeasureSpace>,
    pub functions: Vec<(String, DiscreteFunction)>,
}

impl FunctionFile {
    pub fn get(&self, name: &str) -> Option<&DiscreteFunction> {
        self.functions.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn parse_value(token: &str, line: usize) -> Result<f64> {
    if let Ok(v) = token.parse::<f64>() {
        if v.is_finite() {
            return Ok(v);
        }
    }
    parse_rational(token)
        .map(|r| *r.numer() as f64 / *r.denom() as f64)
        .ok_or_else(|| parse_error(line, format!("invalid number `{token}`")))
}

/// Parse a function file. Masses are read as exact rationals.
pub fn parse_functions(text: &str) -> Result<FunctionFile> {
    parse_with_pairs(text).map(|(file, _)| file)
}

/// Parse a family file: the functions plus the `pair:` lines.
pub fn parse_family(text: &str, rearrangement_closed: bool) -> Result<(FunctionFile, SupportFamily)> {
    let (file, pairs) = parse_with_pairs(text)?;
    if pairs.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let mut members = Vec::with_capacity(pairs.len());
    for (line, a, name) in pairs {
        let f = file.get(&name).ok_or_else(|| parse_error(line, format!("unknown function `{name}`")))?;
        members.push((a, f.clone()));
    }
    let family = SupportFamily::new(members, rearrangement_closed)?;
    Ok((file, family))
}

type PairLine = (usize, f64, String);

fn parse_with_pairs(text: &str) -> Result<(FunctionFile, Vec<PairLine>)> {
    let mut lines = content_lines(text);
    let (line, header) = lines.next().ok_or_else(|| parse_error(1, "missing `masses:` header"))?;
    let rest = header
        .strip_prefix("masses:")
        .ok_or_else(|| parse_error(line, "first line must be `masses: w1 ... wN`"))?;
    let mut exact = Vec::new();
    for token in rest.split_whitespace() {
        let r = parse_rational(token).ok_or_else(|| parse_error(line, format!("invalid mass `{token}`")))?;
        exact.push(r);
    }
    let space = Arc::new(MeasureSpace::from_rationals(exact).map_err(|e| parse_error(line, e.to_string()))?);
    let mut functions: Vec<(String, DiscreteFunction)> = Vec::new();
    let mut pairs = Vec::new();
    for (line, content) in lines {
        let (name, rest) =
            content.split_once(':').ok_or_else(|| parse_error(line, "expected `name: values`"))?;
        let name = name.trim();
        if name == "pair" {
            let tokens: Vec<&str> = rest.split_whitespace().collect();
            let [a, f] = tokens[..] else {
                return Err(parse_error(line, "expected `pair: a name`"));
            };
            pairs.push((line, parse_value(a, line)?, f.to_string()));
            continue;
        }
        if name.is_empty() || name.contains(char::is_whitespace) || name == "masses" {
            return Err(parse_error(line, format!("invalid function name `{name}`")));
        }
        if functions.iter().any(|(n, _)| n == name) {
            return Err(parse_error(line, format!("duplicate function `{name}`")));
        }
        let values = rest.split_whitespace().map(|t| parse_value(t, line)).collect::<Result<Vec<_>>>()?;
        let f = DiscreteFunction::new(space.clone(), values).map_err(|e| parse_error(line, e.to_string()))?;
        functions.push((name.to_string(), f));
    }
    Ok((FunctionFile { space, functions }, pairs))
}

/// Parse a grid field file.
pub fn parse_grid_field(text: &str) -> Result<GridField> {
    let mut lines = content_lines(text);
    let (line, header) = lines.next().ok_or_else(|| parse_error(1, "missing `box:` header"))?;
    let rest = header
        .strip_prefix("box:")
        .ok_or_else(|| parse_error(line, "first line must be `box: n extents... points...`"))?;
    let mut tokens: Vec<&str> = rest.split_whitespace().collect();
    let boundary = match tokens.last() {
        Some(&"periodic") => {
            tokens.pop();
            Boundary::Periodic
        }
        Some(&"compact") => {
            tokens.pop();
            Boundary::CompactSupport
        }
        _ => Boundary::CompactSupport,
    };
    let n: usize = tokens
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_error(line, "missing half-dimension n"))?;
    let d = 2 * n;
    if tokens.len() != 1 + 2 * d {
        return Err(parse_error(line, format!("expected {d} extents and {d} point counts")));
    }
    let mut extents = Vec::with_capacity(d);
    for t in &tokens[1..=d] {
        let e = parse_value(t, line)?;
        if e <= 0.0 {
            return Err(parse_error(line, format!("extent `{t}` must be positive")));
        }
        extents.push(e);
    }
    let points = tokens[d + 1..]
        .iter()
        .map(|t| t.parse::<usize>().map_err(|_| parse_error(line, format!("invalid point count `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    let lo = extents.iter().map(|e| -e).collect();
    let grid = DarbouxBox::new(n, lo, extents, points, boundary).map_err(|e| parse_error(line, e.to_string()))?;
    let mut samples = Vec::with_capacity(grid.node_count());
    for (line, content) in lines {
        for t in content.split_whitespace() {
            samples.push(parse_value(t, line)?);
        }
    }
    GridField::new(grid, samples)
}

/// Inverse of [`parse_grid_field`] for boxes centred at the origin.
pub fn format_grid_field(field: &GridField) -> Result<String> {
    let grid = field.grid();
    if grid.lo().iter().zip(grid.hi()).any(|(l, h)| *l != -*h) {
        return Err(Error::Precondition("grid field files describe boxes centred at the origin".into()));
    }
    let mut out = format!("box: {}", grid.n());
    for h in grid.hi() {
        write!(out, " {h:?}").expect("write to string");
    }
    for p in grid.points() {
        write!(out, " {p}").expect("write to string");
    }
    if grid.boundary() == Boundary::Periodic {
        out.push_str(" periodic");
    }
    out.push('\n');
    let last = *grid.points().last().expect("nonempty box");
    for row in field.samples().chunks(last) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    Ok(out)
}
