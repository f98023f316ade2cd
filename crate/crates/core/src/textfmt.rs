//! Shared helpers for the line-oriented text formats (model, bank, heads).

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub(crate) struct Lines<'a> {
    source: String,
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    pub(crate) fn new(source: impl Into<String>, text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Lines {
            source: source.into(),
            lines,
            pos: 0,
        }
    }

    pub(crate) fn next(&mut self, expecting: &str) -> Result<(usize, &'a str)> {
        match self.lines.get(self.pos) {
            Some(&(n, l)) => {
                self.pos += 1;
                Ok((n, l))
            }
            None => {
                let line = self.lines.last().map_or(0, |(n, _)| *n) + 1;
                Err(self.err(line, format!("unexpected end of file, expected {expecting}")))
            }
        }
    }

    pub(crate) fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).map(|(_, l)| *l)
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos >= self.lines.len()
    }

    pub(crate) fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.source.clone(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn parse<T: FromStr>(&self, line: usize, field: &str, token: &str) -> Result<T> {
        token
            .parse()
            .map_err(|_| self.err(line, format!("cannot parse {field} from '{token}'")))
    }

    /// Reads one line holding exactly `n` whitespace-separated floats.
    pub(crate) fn floats(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let (line, text) = self.next(field)?;
        let values = text
            .split_whitespace()
            .map(|t| self.parse::<f64>(line, field, t))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != n {
            return Err(self.err(
                line,
                format!("{field}: expected {n} values, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(self.err(line, format!("{field}: non-finite value")));
        }
        Ok(values)
    }

    /// Parses `key=value` from a token.
    pub(crate) fn key_value<T: FromStr>(&self, line: usize, key: &str, token: &str) -> Result<T> {
        let value = token
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| self.err(line, format!("expected '{key}=<value>', found '{token}'")))?;
        self.parse(line, key, value)
    }
}

pub(crate) fn push_floats(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        // `Display` for f64 emits the shortest string that round-trips exactly.
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })
}
