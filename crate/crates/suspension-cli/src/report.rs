//! Deterministic report rendering: sorted key = value lines, a trailing
//! timing section excluded from determinism guarantees, and CSV tables
//! with one-line headers.

/// Fixed-precision number formatting so reports are byte-stable across
/// runs. Integers in value position still go through this for uniformity.
pub fn num(x: f64) -> String {
    if x == 0.0 {
        // Collapse -0.0 so the sign of an exact zero never flips a report.
        return format!("{:.9e}", 0.0);
    }
    format!("{x:.9e}")
}

/// Render the report: body lines sorted lexicographically, then timings.
pub fn render(body: &[String], timings: &[(&'static str, u128)]) -> String {
    let mut lines = body.to_vec();
    lines.sort();
    let mut out = String::new();
    for line in &lines {
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("\n[timings]\n");
    for (name, ms) in timings {
        out.push_str(&format!("{name} = {ms}\n"));
    }
    out
}

/// The deterministic part of a rendered report (everything before the
/// timing section).
pub fn strip_timings(text: &str) -> &str {
    match text.find("\n[timings]\n") {
        Some(i) => &text[..i],
        None => text,
    }
}

/// CSV with a single header line.
pub fn csv(header: &str, rows: &[String]) -> String {
    let mut out = String::with_capacity(header.len() + 1 + rows.len() * 32);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    out
}
