use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use super::registry::{lookup, ArgType, PredicateInfo};
use super::{ConstraintExpr, Predicate, PredicateAtom};
use crate::num::parse_real;

/// A syntax or signature error with the character offset where it occurred.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        offset,
        message: message.into(),
    })
}

/// Parses a comma-separated conjunction of predicates.
pub fn parse_constraints(text: &str) -> Result<ConstraintExpr, ParseError> {
    if text.trim().is_empty() {
        return err(0, "empty constraint expression");
    }
    let mut p = Parser {
        chars: text.chars().collect(),
        pos: 0,
    };
    let mut atoms = Vec::new();
    p.skip_ws();
    loop {
        atoms.push(p.atom()?);
        p.skip_ws();
        match p.peek() {
            None => break,
            Some(',') => {
                p.pos += 1;
                p.skip_ws();
            }
            Some(c) => return err(p.pos, format!("expected ',' or end of input, found '{c}'")),
        }
    }
    Ok(ConstraintExpr {
        atoms,
        source_text: text.to_string(),
    })
}

enum RawValue {
    Number(String),
    Ident(String),
}

struct RawArg {
    keyword: Option<(String, usize)>,
    value: RawValue,
    offset: usize,
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl Parser {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn ident(&mut self) -> Option<String> {
        if !self.peek().is_some_and(is_ident_start) {
            return None;
        }
        let start = self.pos;
        while self.peek().is_some_and(is_ident_char) {
            self.pos += 1;
        }
        Some(self.chars[start..self.pos].iter().collect())
    }

    fn atom(&mut self) -> Result<PredicateAtom, ParseError> {
        let start = self.pos;
        let Some(name) = self.ident() else {
            return err(start, "expected predicate name");
        };
        let lower = name.to_ascii_lowercase();
        let Some(info) = lookup(&lower) else {
            return err(start, format!("unknown predicate '{name}'"));
        };
        let save = self.pos;
        self.skip_ws();
        let args = if self.peek() == Some('(') {
            self.args()?
        } else {
            self.pos = save;
            Vec::new()
        };
        let predicate = bind(info, start, args)?;
        Ok(PredicateAtom {
            predicate,
            span: (start, self.pos - start),
        })
    }

    fn args(&mut self) -> Result<Vec<RawArg>, ParseError> {
        self.pos += 1; // '('
        self.skip_ws();
        let mut out = Vec::new();
        if self.peek() == Some(')') {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            out.push(self.arg()?);
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.pos += 1;
                    self.skip_ws();
                }
                Some(')') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some(c) => return err(self.pos, format!("expected ',' or ')', found '{c}'")),
                None => return err(self.pos, "expected ',' or ')'"),
            }
        }
    }

    fn arg(&mut self) -> Result<RawArg, ParseError> {
        let offset = self.pos;
        if self.peek().is_some_and(is_ident_start) {
            let id = self.ident().unwrap_or_default();
            let save = self.pos;
            self.skip_ws();
            if self.peek() == Some('=') {
                self.pos += 1;
                self.skip_ws();
                let value_at = self.pos;
                let value = self.value()?;
                return Ok(RawArg {
                    keyword: Some((id, offset)),
                    value,
                    offset: value_at,
                });
            }
            self.pos = save;
            return Ok(RawArg {
                keyword: None,
                value: RawValue::Ident(id),
                offset,
            });
        }
        let value = self.value()?;
        Ok(RawArg {
            keyword: None,
            value,
            offset,
        })
    }

    fn value(&mut self) -> Result<RawValue, ParseError> {
        let start = self.pos;
        match self.peek() {
            Some(c) if is_ident_start(c) => Ok(RawValue::Ident(self.ident().unwrap_or_default())),
            Some(c) if c.is_ascii_digit() || matches!(c, '.' | '+' | '-') => {
                self.pos += 1;
                let mut prev = c;
                while let Some(c) = self.peek() {
                    let sign_after_exp = matches!(c, '+' | '-') && matches!(prev, 'e' | 'E');
                    if is_ident_char(c) || c == '.' || sign_after_exp {
                        self.pos += 1;
                        prev = c;
                    } else {
                        break;
                    }
                }
                Ok(RawValue::Number(
                    self.chars[start..self.pos].iter().collect(),
                ))
            }
            _ => err(start, "expected literal"),
        }
    }
}

fn arity_error<T>(info: &PredicateInfo, offset: usize, got: usize) -> Result<T, ParseError> {
    let expected = if info.variadic {
        format!("at least {}", info.params.len())
    } else {
        format!("{}", info.params.len())
    };
    err(
        offset,
        format!("{} expects {expected} argument(s), got {got}", info.name),
    )
}

/// Matches raw arguments against the registry signature and builds the typed
/// predicate.
fn bind(info: &PredicateInfo, start: usize, args: Vec<RawArg>) -> Result<Predicate, ParseError> {
    let n = info.params.len();
    let mut slots: Vec<Option<RawArg>> = Vec::new();
    if info.variadic {
        for a in args {
            if let Some((kw, at)) = &a.keyword {
                return err(
                    *at,
                    format!("{} takes no keyword argument '{kw}'", info.name),
                );
            }
            slots.push(Some(a));
        }
        if slots.len() < n {
            return arity_error(info, start, slots.len());
        }
    } else {
        slots.resize_with(n, || None);
        let total = args.len();
        let mut seen_keyword = false;
        for (i, a) in args.into_iter().enumerate() {
            match &a.keyword {
                None => {
                    if seen_keyword {
                        return err(a.offset, "positional argument after keyword argument");
                    }
                    if i >= n {
                        return arity_error(info, a.offset, total);
                    }
                    slots[i] = Some(a);
                }
                Some((kw, at)) => {
                    seen_keyword = true;
                    let Some(k) = info.params.iter().position(|(p, _)| p == kw) else {
                        return err(*at, format!("{} has no parameter '{kw}'", info.name));
                    };
                    if slots[k].is_some() {
                        return err(*at, format!("argument '{kw}' given twice"));
                    }
                    slots[k] = Some(a);
                }
            }
        }
        let supplied = slots.iter().filter(|s| s.is_some()).count();
        if supplied < n {
            return arity_error(info, start, supplied);
        }
    }
    let args: Vec<RawArg> = slots.into_iter().flatten().collect();
    let ty = |i: usize| {
        if info.variadic {
            info.params[0].1
        } else {
            info.params[i].1
        }
    };
    let mut typed = Vec::with_capacity(args.len());
    for (i, a) in args.iter().enumerate() {
        typed.push(convert(ty(i), a)?);
    }
    let real = |i: usize| match typed[i] {
        Typed::Real(x) => x,
        _ => unreachable!("typed by signature"),
    };
    let int = |i: usize| match typed[i] {
        Typed::Int(x) => x,
        _ => unreachable!("typed by signature"),
    };
    let slot = |i: usize| match &typed[i] {
        Typed::Slot(s) => s.clone(),
        _ => unreachable!("typed by signature"),
    };
    let p = match info.name {
        "binary" => Predicate::Binary,
        "finite" => Predicate::Finite,
        "in_range" => {
            let (lo, hi) = (real(0), real(1));
            if lo > hi {
                return err(args[0].offset, "in_range lower bound exceeds upper bound");
            }
            Predicate::InRange { lo, hi }
        }
        "integer_valued" => Predicate::IntegerValued,
        "max_le_slot" => Predicate::MaxLeSlot(slot(0)),
        "min_ge_slot" => Predicate::MinGeSlot(slot(0)),
        "nodata_free" => Predicate::NodataFree,
        "nonempty" => Predicate::Nonempty,
        "nonnegative" => Predicate::Nonnegative,
        "positive" => Predicate::Positive,
        "same_shape" => Predicate::SameShape(slot(0), slot(1)),
        "shape_is" => Predicate::ShapeIs((0..typed.len()).map(int).collect()),
        "sorted_ascending" => Predicate::SortedAscending { axis: int(0) },
        "sums_to" => {
            let tol = real(2);
            if !(tol >= 0.0) {
                return err(args[2].offset, "tol must be >= 0");
            }
            Predicate::SumsTo {
                target: real(0),
                axis: int(1),
                tol,
            }
        }
        other => unreachable!("registry entry {other} has no binding"),
    };
    Ok(p)
}

enum Typed {
    Real(f64),
    Int(usize),
    Slot(String),
}

fn convert(ty: ArgType, a: &RawArg) -> Result<Typed, ParseError> {
    let text = match &a.value {
        RawValue::Number(t) | RawValue::Ident(t) => t.as_str(),
    };
    match (ty, &a.value) {
        (ArgType::Real, RawValue::Number(t)) => match parse_real(t) {
            Some(x) if !x.is_nan() => Ok(Typed::Real(x)),
            _ => err(a.offset, format!("malformed literal '{t}'")),
        },
        (ArgType::Real, RawValue::Ident(t)) if t.eq_ignore_ascii_case("inf") => {
            Ok(Typed::Real(f64::INFINITY))
        }
        (ArgType::Real, RawValue::Ident(t)) => {
            err(a.offset, format!("expected a real literal, got '{t}'"))
        }
        (ArgType::Axis | ArgType::Extent, RawValue::Number(t)) => {
            let parsed = t.parse::<usize>().ok();
            match parsed {
                Some(0) if ty == ArgType::Extent => {
                    err(a.offset, "extent must be an integer >= 1, got '0'")
                }
                Some(v) => Ok(Typed::Int(v)),
                None if parse_real(t).is_some() => err(
                    a.offset,
                    format!("expected a non-negative integer {}, got '{t}'", ty.as_str()),
                ),
                None => err(a.offset, format!("malformed literal '{t}'")),
            }
        }
        (ArgType::Axis | ArgType::Extent, RawValue::Ident(_)) => err(
            a.offset,
            format!(
                "expected a non-negative integer {}, got '{text}'",
                ty.as_str()
            ),
        ),
        (ArgType::Slot, RawValue::Ident(t)) => Ok(Typed::Slot(t.clone())),
        (ArgType::Slot, RawValue::Number(t)) => {
            err(a.offset, format!("expected a slot name, got '{t}'"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn offset_of(text: &str) -> (usize, String) {
        let e = parse_constraints(text).unwrap_err();
        (e.offset, e.message)
    }

    #[test]
    fn two_atoms() {
        let e = parse_constraints("nonnegative, in_range(0,1)").unwrap();
        assert_eq!(e.atoms.len(), 2);
        assert_eq!(e.atoms[0].name(), "nonnegative");
        assert_eq!(e.atoms[0].args().len(), 0);
        assert_eq!(e.atoms[1].name(), "in_range");
        assert_eq!(e.atoms[1].args().len(), 2);
        assert_eq!(e.atoms[1].span, (13, 13));
    }

    #[test]
    fn dangling_argument() {
        assert_eq!(offset_of("in_range(0,"), (11, "expected literal".into()));
    }

    #[test]
    fn empty_and_blank() {
        for t in ["", "   ", "\n\t"] {
            let e = parse_constraints(t).unwrap_err();
            assert_eq!(e.offset, 0);
            assert_eq!(e.message, "empty constraint expression");
        }
    }

    #[test]
    fn keywords_and_case() {
        let e = parse_constraints("SUMS_TO(1.0, axis=1, tol=1e-9)").unwrap();
        assert_eq!(
            e.atoms[0].predicate,
            Predicate::SumsTo {
                target: 1.0,
                axis: 1,
                tol: 1e-9
            }
        );
        assert_eq!(e.canonical(), "sums_to(1, 1, 1e-9)");
        let k = parse_constraints("sums_to(tol=1e-9, target=1, axis=0)").unwrap();
        assert_eq!(
            k.atoms[0].predicate,
            Predicate::SumsTo {
                target: 1.0,
                axis: 0,
                tol: 1e-9
            }
        );
    }

    #[test]
    fn parens_optional_for_nullary() {
        let a = parse_constraints("finite()").unwrap();
        let b = parse_constraints("finite").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.canonical(), "finite");
    }

    #[test]
    fn diagnostics_carry_offsets() {
        assert_eq!(offset_of("bogus()").0, 0);
        assert!(offset_of("bogus()").1.contains("unknown predicate"));
        assert_eq!(offset_of("finite, in_range(1)").0, 8);
        assert_eq!(offset_of("in_range(0, 1, 2)").0, 15);
        assert_eq!(offset_of("in_range(0, 1.2.3)").0, 12);
        assert_eq!(offset_of("finite,").0, 7);
        assert_eq!(offset_of("finite nonnegative").0, 7);
        assert_eq!(offset_of("sorted_ascending(axis=-1)").0, 22);
        assert_eq!(offset_of("in_range(axis=1, 2)").0, 9);
        assert_eq!(offset_of("in_range(lo=0, lo=1)").0, 15);
        assert_eq!(offset_of("shape_is(0)").0, 9);
        assert_eq!(offset_of("same_shape(a, 3)").0, 14);
        assert_eq!(offset_of("in_range(0, 1").0, 13);
        assert_eq!(offset_of("in_range(2, 1)").0, 9);
        assert_eq!(offset_of("in_range(nan, 1)").0, 9);
    }

    #[test]
    fn infinities_and_signs() {
        let e = parse_constraints("in_range(-inf, +5)").unwrap();
        assert_eq!(
            e.atoms[0].predicate,
            Predicate::InRange {
                lo: f64::NEG_INFINITY,
                hi: 5.0
            }
        );
        assert_eq!(e.canonical(), "in_range(-inf, 5)");
        assert_eq!(parse_constraints(&e.canonical()).unwrap(), e);
    }

    #[test]
    fn variadic_shape() {
        let e = parse_constraints("shape_is(3, 4)").unwrap();
        assert_eq!(e.atoms[0].predicate, Predicate::ShapeIs(vec![3, 4]));
        assert!(parse_constraints("shape_is()").is_err());
    }
}
