//! Tabular output: CSV with `#` comment lines and 17-significant-digit
//! floats, or a JSON document with a metadata object.
//!
//! Rows are any `Serialize` struct with flat fields; columns follow field
//! order. Non-finite floats are written as `NaN`/`inf` in CSV and `null` in
//! JSON.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::{Map, Value};

fn to_object<T: Serialize>(row: &T) -> io::Result<Map<String, Value>> {
    match serde_json::to_value(row).map_err(io::Error::other)? {
        Value::Object(m) => Ok(m),
        other => Err(io::Error::other(format!("row is not a flat record: {other}"))),
    }
}

/// One CSV cell. Floats get 17 significant digits; text is quoted when it
/// holds a separator or quote, and `#` is dropped so data never reads as a
/// comment.
pub fn format_cell(v: &Value) -> String {
    match v {
        Value::Null => "NaN".into(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(i), _, _) => i.to_string(),
            (_, Some(u), _) => u.to_string(),
            (_, _, Some(f)) => format_float(f),
            _ => n.to_string(),
        },
        Value::String(s) => {
            let s = s.replace('#', "");
            if s.contains([',', '"', '\n', '\r']) {
                format!("\"{}\"", s.replace('"', "\"\"").replace(['\n', '\r'], " "))
            } else {
                s
            }
        }
        other => format_cell(&Value::String(other.to_string())),
    }
}

pub fn format_float(f: f64) -> String {
    if f.is_finite() {
        format!("{f:.16e}")
    } else {
        format!("{f}")
    }
}

/// Write `comments` as `# ` lines, then a header and one line per row.
/// `extra` columns (name, value) are appended to every row.
pub fn write_csv<W: Write, T: Serialize>(
    mut w: W,
    comments: &[String],
    rows: &[T],
    extra: &[(&str, String)],
) -> io::Result<()> {
    for c in comments {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    let mut header_done = false;
    for row in rows {
        let obj = to_object(row)?;
        if !header_done {
            let names: Vec<&str> = obj
                .keys()
                .map(String::as_str)
                .chain(extra.iter().map(|e| e.0))
                .collect();
            writeln!(w, "{}", names.join(","))?;
            header_done = true;
        }
        let cells: Vec<String> = obj
            .values()
            .map(format_cell)
            .chain(extra.iter().map(|e| format_cell(&Value::String(e.1.clone()))))
            .collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// `{"metadata": ..., "rows": [...]}`, pretty-printed.
pub fn write_json<W: Write, T: Serialize>(mut w: W, metadata: &Value, rows: &[T]) -> io::Result<()> {
    let doc = serde_json::json!({ "metadata": metadata, "rows": rows });
    serde_json::to_writer_pretty(&mut w, &doc).map_err(io::Error::other)?;
    writeln!(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        name: &'static str,
        x: f64,
        n: u32,
        ok: bool,
    }

    #[test]
    fn floats_round_trip() {
        for f in [0.1, 1.0 / 3.0, 2.7e-144, -1e300, 5e-324] {
            let s = format_float(f);
            assert_eq!(s.parse::<f64>().unwrap(), f, "{s}");
        }
        assert_eq!(format_float(f64::NAN), "NaN");
    }

    #[test]
    fn csv_layout() {
        let rows = [
            Row { name: "a,b", x: 0.5, n: 3, ok: true },
            Row { name: "c#1", x: f64::NAN, n: 0, ok: false },
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, &["run one\nseed 4".into()], &rows, &[("hash", "ab12".into())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# run one");
        assert_eq!(lines[1], "# seed 4");
        assert_eq!(lines[2], "name,x,n,ok,hash");
        assert_eq!(lines[3], "\"a,b\",5.0000000000000000e-1,3,true,ab12");
        assert_eq!(lines[4], "c1,NaN,0,false,ab12");
        assert!(lines[2..].iter().all(|l| !l.contains('#')));
    }

    #[test]
    fn json_document() {
        let rows = [Row { name: "a", x: 1.5, n: 1, ok: true }];
        let mut buf = Vec::new();
        write_json(&mut buf, &serde_json::json!({"seed": 1}), &rows).unwrap();
        let v: Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["metadata"]["seed"], 1);
        assert_eq!(v["rows"][0]["x"], 1.5);
    }
}
