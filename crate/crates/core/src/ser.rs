//! Helpers for the on-disk text formats.
//!
//! Map, feature and checkpoint files store numbers with 17 significant
//! digits, which pins every `f64` bit-exactly across a save/load round trip.

/// 17-significant-digit decimal form of `v`, valid as a JSON number.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `values` as a JSON array of 17-digit numbers.
pub fn push_f64_array(out: &mut String, values: impl Iterator<Item = f64>) {
    out.push('[');
    for (i, v) in values.enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(v));
    }
    out.push(']');
}

/// Minimal JSON string escaping for identifiers we embed in documents.
pub fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}
