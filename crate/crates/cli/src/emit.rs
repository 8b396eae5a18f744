//! Deterministic JSON and CSV writers.
//!
//! Reals are printed with 17 significant digits in scientific notation.
//! Non-finite reals become `null` in JSON and an empty cell in CSV.

use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

struct Sci<'a>(PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident),*) => {$(
        fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
            self.0.$name(w)
        }
    )*};
}

impl Formatter for Sci<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(real(v).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    delegate!(
        begin_array,
        end_array,
        end_array_value,
        begin_object,
        end_object,
        begin_object_value,
        end_object_value
    );
}

/// Pretty JSON with a trailing newline. Field order is declaration order.
pub fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Sci(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .expect("report types serialize infallibly");
    out.push(b'\n');
    out
}

/// Comma-separated table with a header row and LF line endings.
pub struct Csv {
    buf: String,
    width: usize,
}

pub enum Cell {
    Int(u64),
    Real(Option<f64>),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(Some(v))
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        Cell::Real(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let line: Vec<String> = header.iter().map(|h| quote(h.as_ref())).collect();
        Self {
            buf: line.join(",") + "\n",
            width: header.len(),
        }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        assert_eq!(cells.len(), self.width, "row width must match the header");
        let line: Vec<String> = cells
            .into_iter()
            .map(|c| match c {
                Cell::Int(v) => v.to_string(),
                Cell::Real(Some(v)) if v.is_finite() => real(v),
                Cell::Real(_) => String::new(),
                Cell::Text(s) => quote(&s),
            })
            .collect();
        self.buf.push_str(&line.join(","));
        self.buf.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf.into_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct S {
        b: f64,
        a: Vec<f64>,
        n: usize,
    }

    #[test]
    fn seventeen_digits_and_null() {
        let out = String::from_utf8(json(&S {
            b: 0.1,
            a: vec![f64::NAN, -2.5],
            n: 3,
        }))
        .unwrap();
        assert!(out.contains("\"b\": 1.0000000000000001e-1"), "{out}");
        assert!(out.contains("null"));
        assert!(out.contains("-2.5000000000000000e0"));
        assert!(out.find("\"b\"").unwrap() < out.find("\"a\"").unwrap());
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["b"].as_f64(), Some(0.1));
    }

    #[test]
    fn csv_layout() {
        let mut t = Csv::new(&["N", "Y0", "note"]);
        t.row(vec![5usize.into(), None.into(), "a,b".into()]);
        t.row(vec![10usize.into(), 1.5.into(), "x".into()]);
        let s = String::from_utf8(t.into_bytes()).unwrap();
        assert_eq!(s, "N,Y0,note\n5,,\"a,b\"\n10,1.5000000000000000e0,x\n");
        assert_eq!(String::from_utf8(Csv::new(&["N"]).into_bytes()).unwrap(), "N\n");
    }
}
