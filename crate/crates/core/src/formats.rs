//! Text formats: `CFLD` fields, `CMEAS` measurements, PGM heatmaps, CSV and
//! `key=value` manifests.
//!
//! ```text
//! CFLD 1 st <nx> <nt> <A> <B> <T>     values in (i, j, k) order
//! CFLD 1 s <nx> <A> <B> <T>           values in (i, j) order
//! CMEAS 1 <nx> <nt> <A> <B> <T> <t0> [<f0_nx>]
//!                                     g1 in (j, k) order, then f0 in (i, j) order
//! ```
//!
//! Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::forward::{FaceTrace, MeasurementData};
use crate::grid::{Rank, ScalarField, SpaceTimeGrid};

fn parse_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Parse { offset, reason: reason.into() }
}

/// Whitespace-separated tokens with their byte offsets, comment lines
/// dropped.
struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
    end: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        let mut line_start = 0;
        for line in text.split_inclusive('\n') {
            if !line.trim_start().starts_with('#') {
                let mut i = 0;
                let bytes = line.as_bytes();
                while i < bytes.len() {
                    if bytes[i].is_ascii_whitespace() {
                        i += 1;
                        continue;
                    }
                    let s = i;
                    while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                        i += 1;
                    }
                    items.push((line_start + s, &line[s..i]));
                }
            }
            line_start += line.len();
        }
        Self { items, pos: 0, end: text.len() }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let t = self.items.get(self.pos).copied().ok_or_else(|| parse_err(self.end, format!("missing {what}")))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let (off, tok) = self.next(word)?;
        if tok != word {
            return Err(parse_err(off, format!("expected {word:?}, found {tok:?}")));
        }
        Ok(())
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let (off, tok) = self.next(what)?;
        tok.parse().map_err(|_| parse_err(off, format!("invalid {what} {tok:?}")))
    }

    fn values(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for m in 0..n {
            let (off, tok) = self
                .next(what)
                .map_err(|_| parse_err(self.end, format!("{what} has {m} values, expected {n}")))?;
            let v: f64 = tok.parse().map_err(|_| parse_err(off, format!("invalid number {tok:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(off, "non-finite value"));
            }
            out.push(v);
        }
        Ok(out)
    }

    fn peek_offset(&self) -> Option<usize> {
        self.items.get(self.pos).map(|t| t.0)
    }

    /// Whether the next token sits on the same line as the previous one.
    fn continues_line(&self, text: &str) -> bool {
        match (self.pos.checked_sub(1).and_then(|p| self.items.get(p)), self.items.get(self.pos)) {
            (Some(&(a, _)), Some(&(b, _))) => !text[a..b].contains('\n'),
            _ => false,
        }
    }

    fn finish(&self) -> Result<()> {
        match self.peek_offset() {
            Some(off) => Err(parse_err(off, "trailing values")),
            None => Ok(()),
        }
    }
}

fn grid_at(off: usize, a: f64, b: f64, t: f64, nx: usize, nt: usize) -> Result<SpaceTimeGrid> {
    SpaceTimeGrid::new(a, b, t, nx, nt).map_err(|e| parse_err(off, format!("bad grid: {e}")))
}

fn push_values(s: &mut String, values: &[f64]) {
    for v in values {
        writeln!(s, "{v:.16e}").unwrap();
    }
}

pub fn write_cfld(f: &ScalarField) -> String {
    let g = f.grid();
    let mut s = match f.rank() {
        Rank::SpaceTime => format!("CFLD 1 st {} {} {:?} {:?} {:?}\n", g.nx(), g.nt(), g.a(), g.b(), g.t_half()),
        Rank::Space => format!("CFLD 1 s {} {:?} {:?} {:?}\n", g.nx(), g.a(), g.b(), g.t_half()),
    };
    push_values(&mut s, f.values());
    s
}

pub fn read_cfld(text: &str) -> Result<ScalarField> {
    let mut t = Tokens::new(text);
    t.expect("CFLD")?;
    t.expect("1")?;
    let (off, rank) = t.next("rank")?;
    let rank = match rank {
        "st" => Rank::SpaceTime,
        "s" => Rank::Space,
        other => return Err(parse_err(off, format!("unknown rank {other:?}"))),
    };
    let nx: usize = t.number("nx")?;
    let nt: usize = if rank == Rank::SpaceTime { t.number("nt")? } else { 3 };
    let a: f64 = t.number("A")?;
    let b: f64 = t.number("B")?;
    let th: f64 = t.number("T")?;
    let g = grid_at(off, a, b, th, nx, nt)?;
    let values = t.values(g.len(rank), "field")?;
    t.finish()?;
    ScalarField::new(g, rank, values)
}

pub fn write_cmeas(m: &MeasurementData, comments: &[String]) -> String {
    let g = &m.grid;
    let f0_nx = m.f0.grid().nx();
    let mut s = format!("CMEAS 1 {} {} {:?} {:?} {:?} {:?}", g.nx(), g.nt(), g.a(), g.b(), g.t_half(), m.t0);
    if f0_nx != g.nx() {
        write!(s, " {f0_nx}").unwrap();
    }
    s.push('\n');
    for c in comments {
        writeln!(s, "# {c}").unwrap();
    }
    push_values(&mut s, m.g1.values());
    push_values(&mut s, m.f0.values());
    s
}

pub fn read_cmeas(text: &str) -> Result<MeasurementData> {
    let mut t = Tokens::new(text);
    t.expect("CMEAS")?;
    t.expect("1")?;
    let off = t.peek_offset().unwrap_or(0);
    let nx: usize = t.number("nx")?;
    let nt: usize = t.number("nt")?;
    let a: f64 = t.number("A")?;
    let b: f64 = t.number("B")?;
    let th: f64 = t.number("T")?;
    let t0: f64 = t.number("t0")?;
    let f0_nx: usize = if t.continues_line(text) { t.number("f0_nx")? } else { nx };
    let g = grid_at(off, a, b, th, nx, nt)?;
    let gf = grid_at(off, a, b, th, f0_nx, nt)?;
    let g1 = t.values(nx * nt, "g1 block")?;
    let f0 = t.values(f0_nx * f0_nx, "f0 block")?;
    t.finish()?;
    MeasurementData::new(g, t0, FaceTrace::new(g, g1)?, ScalarField::new(gf, Rank::Space, f0)?)
}

/// Grayscale P2 image of a space-only field: top row is the largest `x2`,
/// columns run along `x1`, black at the minimum and white at the maximum.
pub fn write_pgm(f: &ScalarField) -> Result<String> {
    f.ensure_rank(Rank::Space)?;
    let n = f.grid().nx();
    let (lo, hi) = (f.min(), f.max());
    let span = hi - lo;
    let mut s = format!("P2\n# linear ramp min={lo:.6e} max={hi:.6e}\n{n} {n}\n255\n");
    for j in (0..n).rev() {
        let row: Vec<String> = (0..n)
            .map(|i| {
                let v = if span > 0.0 { ((f.at_s(i, j) - lo) / span * 255.0).round() } else { 0.0 };
                format!("{}", v as u8)
            })
            .collect();
        writeln!(s, "{}", row.join(" ")).unwrap();
    }
    Ok(s)
}

/// Values behind a PGM, one annotated row per image row.
pub fn pgm_sidecar(f: &ScalarField) -> Result<String> {
    f.ensure_rank(Rank::Space)?;
    let g = f.grid();
    let n = g.nx();
    let mut s = format!("# min={:.6e} max={:.6e} nx={n}\n", f.min(), f.max());
    for j in (0..n).rev() {
        let row: Vec<String> = (0..n).map(|i| format!("{:.4e}", f.at_s(i, j))).collect();
        writeln!(s, "x2={:.6} {}", g.x(j), row.join(" ")).unwrap();
    }
    Ok(s)
}

pub fn write_field_csv(f: &ScalarField) -> Result<String> {
    f.ensure_rank(Rank::Space)?;
    let g = f.grid();
    let mut s = String::from("x1,x2,value\n");
    for i in 0..g.nx() {
        for j in 0..g.nx() {
            writeln!(s, "{},{},{:.16e}", g.x(i), g.x(j), f.at_s(i, j)).unwrap();
        }
    }
    Ok(s)
}

/// `key=value` lines; blank lines and `#` comments ignored.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim();
        if !body.is_empty() && !body.starts_with('#') {
            let (k, v) = body.split_once('=').ok_or_else(|| parse_err(offset, "expected key=value"))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(parse_err(offset, "empty key"));
            }
            out.insert(k.to_string(), v.trim().to_string());
        }
        offset += line.len();
    }
    Ok(out)
}

pub fn write_key_values<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        writeln!(s, "{k}={v}").unwrap();
    }
    s
}
