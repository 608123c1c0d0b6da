use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// One memory instruction preceded by `bubbles` non-memory instructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub bubbles: u32,
    pub address: u64,
    pub is_write: bool,
}

impl TraceEntry {
    pub fn read(bubbles: u32, address: u64) -> Self {
        Self {
            bubbles,
            address,
            is_write: false,
        }
    }

    pub fn write(bubbles: u32, address: u64) -> Self {
        Self {
            bubbles,
            address,
            is_write: true,
        }
    }

    /// Instructions represented by this entry.
    pub fn instructions(&self) -> u64 {
        self.bubbles as u64 + 1
    }
}

/// Parses `<bubbles> <hex address> <R|W>` lines; `#` starts a comment.
pub fn parse_trace(text: &str, origin: &str) -> Result<Vec<TraceEntry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| SimError::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", f.len())));
        }
        let bubbles = f[0]
            .parse()
            .map_err(|_| err(format!("bad bubble count `{}`", f[0])))?;
        let hex = f[1].trim_start_matches("0x").trim_start_matches("0X");
        let address =
            u64::from_str_radix(hex, 16).map_err(|_| err(format!("bad address `{}`", f[1])))?;
        let is_write = match f[2] {
            "R" | "r" => false,
            "W" | "w" => true,
            op => return Err(err(format!("bad operation `{op}`"))),
        };
        out.push(TraceEntry {
            bubbles,
            address,
            is_write,
        });
    }
    if out.is_empty() {
        return Err(SimError::InvalidInput(format!("trace {origin} has no entries")));
    }
    Ok(out)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    parse_trace(&text, &path.display().to_string())
}

pub fn format_trace(entries: &[TraceEntry]) -> String {
    let mut s = String::with_capacity(entries.len() * 16);
    for e in entries {
        let op = if e.is_write { 'W' } else { 'R' };
        let _ = writeln!(s, "{} 0x{:x} {}", e.bubbles, e.address, op);
    }
    s
}

pub fn write_trace(path: &Path, entries: &[TraceEntry], header: &str) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| SimError::io(path, e))?);
    let mut body = String::new();
    for line in header.lines() {
        let _ = writeln!(body, "# {line}");
    }
    body.push_str(&format_trace(entries));
    f.write_all(body.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| SimError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_comments() {
        let t = parse_trace("# header\n3 0x40 R\n0 80 W # tail\n\n", "t").unwrap();
        assert_eq!(t, vec![TraceEntry::read(3, 0x40), TraceEntry::write(0, 0x80)]);
    }

    #[test]
    fn reports_line_of_error() {
        let e = parse_trace("1 0x0 R\n2 0xzz R\n", "x.trace").unwrap_err();
        assert!(matches!(e, SimError::Parse { line: 2, .. }), "{e}");
        assert!(parse_trace("1 0x0 Q", "t").is_err());
        assert!(parse_trace("# only\n", "t").is_err());
    }

    #[test]
    fn format_round_trip() {
        let t = vec![TraceEntry::read(7, 0xde_adbe_efc0), TraceEntry::write(0, 0)];
        assert_eq!(parse_trace(&format_trace(&t), "t").unwrap(), t);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.trace");
        let t = vec![TraceEntry::read(1, 0x1000)];
        write_trace(&p, &t, "seed 1").unwrap();
        assert_eq!(load_trace(&p).unwrap(), t);
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("# seed 1\n"));
    }
}
