//! Minimal CSV emission: a `#` comment line followed by the header row.

use std::fmt::Write as _;

pub(crate) struct CsvText {
    buf: String,
}

impl CsvText {
    pub(crate) fn new(comment: &str, header: &[&str]) -> Self {
        let mut buf = String::new();
        if !comment.is_empty() {
            for line in comment.lines() {
                let _ = writeln!(buf, "# {line}");
            }
        }
        buf.push_str(&header.join(","));
        buf.push('\n');
        Self { buf }
    }

    pub(crate) fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut first = true;
        for f in fields {
            if !first {
                self.buf.push(',');
            }
            first = false;
            self.buf.push_str(f.as_ref());
        }
        self.buf.push('\n');
    }

    pub(crate) fn finish(self) -> String {
        self.buf
    }
}

/// Shortest round-trip formatting for floats.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
