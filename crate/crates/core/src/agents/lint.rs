//! Static checks on coder scripts, run before anything is executed.
//!
//! Three rules are enforced: no imports (including `__import__`), at most
//! [`MAX_SCRIPT_LINES`] lines, and no rebinding of the injected variables.
//! String literals and comments are masked before scanning, so text inside
//! them never triggers a violation.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const MAX_SCRIPT_LINES: usize = 500;

/// Names bound by the sandbox before the script runs.
pub const INJECTED_NAMES: [&str; 11] = [
    "heart_rate",
    "systolic_bp",
    "diastolic_bp",
    "spo2",
    "respiratory_rate",
    "temperature",
    "age",
    "gender",
    "ethnicity",
    "pmh",
    "meds",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LintViolation {
    Import { line: usize },
    TooLong { lines: usize },
    Rebinds { line: usize, name: String },
}

impl fmt::Display for LintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LintViolation::Import { line } => {
                write!(f, "line {line}: imports are forbidden; use the provided np, stats, plt, sns")
            }
            LintViolation::TooLong { lines } => {
                write!(f, "script has {lines} lines; the limit is {MAX_SCRIPT_LINES}")
            }
            LintViolation::Rebinds { line, name } => {
                write!(f, "line {line}: `{name}` is provided by the sandbox and must not be reassigned")
            }
        }
    }
}

pub fn describe(violations: &[LintViolation]) -> String {
    violations.iter().map(|v| format!("- {v}")).collect::<Vec<_>>().join("\n")
}

/// Removes a surrounding markdown code fence if present.
pub fn strip_fences(text: &str) -> String {
    let trimmed = text.trim();
    let Some(open) = trimmed.find("```") else {
        return format!("{trimmed}\n");
    };
    let after_open = &trimmed[open + 3..];
    let body_start = after_open.find('\n').map(|i| i + 1).unwrap_or(after_open.len());
    let body = &after_open[body_start..];
    let body = match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    };
    let body = body.trim_end();
    format!("{body}\n")
}

/// Replaces string-literal contents and comments with spaces, keeping
/// newlines and quote characters so positions and line numbers survive.
fn mask(src: &str) -> String {
    let chars: Vec<char> = src.chars().collect();
    let mut out = String::with_capacity(src.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                out.push(' ');
                i += 1;
            }
            continue;
        }
        if c == '\'' || c == '"' {
            let triple = i + 2 < chars.len() && chars[i + 1] == c && chars[i + 2] == c;
            let delim = if triple { 3 } else { 1 };
            for _ in 0..delim {
                out.push(c);
            }
            i += delim;
            loop {
                if i >= chars.len() {
                    break;
                }
                let d = chars[i];
                if d == '\\' && i + 1 < chars.len() {
                    out.push(' ');
                    out.push(if chars[i + 1] == '\n' { '\n' } else { ' ' });
                    i += 2;
                    continue;
                }
                if d == c && (!triple || (i + 2 < chars.len() && chars[i + 1] == c && chars[i + 2] == c)) {
                    for _ in 0..delim {
                        out.push(c);
                    }
                    i += delim;
                    break;
                }
                if d == '\n' && !triple {
                    break;
                }
                out.push(if d == '\n' { '\n' } else { ' ' });
                i += 1;
            }
            continue;
        }
        out.push(c);
        i += 1;
    }
    out
}

struct Statement {
    line: usize,
    text: String,
}

/// Splits masked source into logical statements at depth-0 newlines and
/// semicolons, honouring backslash continuations.
fn statements(masked: &str) -> Vec<Statement> {
    let mut out = Vec::new();
    let mut depth: i32 = 0;
    let mut line = 1;
    let mut start_line = 1;
    let mut cur = String::new();
    let mut chars = masked.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth = (depth - 1).max(0),
            _ => {}
        }
        if c == '\\' && chars.peek() == Some(&'\n') {
            chars.next();
            line += 1;
            cur.push(' ');
            continue;
        }
        if (c == '\n' || c == ';') && depth == 0 {
            if !cur.trim().is_empty() {
                out.push(Statement {
                    line: start_line,
                    text: std::mem::take(&mut cur),
                });
            }
            cur.clear();
            if c == '\n' {
                line += 1;
            }
            start_line = line;
            continue;
        }
        if c == '\n' {
            line += 1;
            cur.push(' ');
        } else {
            cur.push(c);
        }
    }
    if !cur.trim().is_empty() {
        out.push(Statement { line: start_line, text: cur });
    }
    out
}

/// Byte offsets of depth-0 occurrences of `ch` in `s`.
fn top_level(s: &str, ch: char) -> Vec<usize> {
    let mut depth = 0i32;
    let mut hits = Vec::new();
    for (i, c) in s.char_indices() {
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            _ if c == ch && depth == 0 => hits.push(i),
            _ => {}
        }
    }
    hits
}

fn split_top(s: &str, ch: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut last = 0;
    for i in top_level(s, ch) {
        parts.push(&s[last..i]);
        last = i + ch.len_utf8();
    }
    parts.push(&s[last..]);
    parts
}

fn re(cell: &'static OnceLock<Regex>, pat: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pat).expect("valid regex"))
}

/// Names bound by an assignment target expression.
fn target_names(target: &str, out: &mut Vec<String>) {
    static IDENT: OnceLock<Regex> = OnceLock::new();
    static SUBSCRIPT: OnceLock<Regex> = OnceLock::new();
    let t = target.trim().trim_start_matches('*').trim();
    if t.is_empty() {
        return;
    }
    let parts = split_top(t, ',');
    if parts.len() > 1 {
        for p in parts {
            target_names(p, out);
        }
        return;
    }
    if (t.starts_with('(') && t.ends_with(')')) || (t.starts_with('[') && t.ends_with(']')) {
        target_names(&t[1..t.len() - 1], out);
        return;
    }
    if re(&IDENT, r"^[A-Za-z_]\w*$").is_match(t) {
        out.push(t.to_string());
    } else if let Some(c) = re(&SUBSCRIPT, r"^([A-Za-z_]\w*)\s*\[").captures(t) {
        out.push(c[1].to_string());
    }
}

const AUG_OPS: [&str; 13] = ["**", "//", ">>", "<<", "+", "-", "*", "/", "%", "&", "|", "^", "@"];

/// Targets of plain, chained, annotated and augmented assignments at depth 0.
fn assignment_targets(stmt: &str) -> Vec<String> {
    let bytes = stmt.as_bytes();
    let mut cuts: Vec<(usize, usize)> = Vec::new(); // (lhs_end, rhs_start)
    for i in top_level(stmt, '=') {
        let prev = if i > 0 { bytes[i - 1] } else { b' ' };
        let next = bytes.get(i + 1).copied().unwrap_or(b' ');
        if next == b'=' || prev == b'=' {
            continue;
        }
        if prev == b'!' || prev == b':' {
            continue;
        }
        if prev == b'<' || prev == b'>' {
            let prev2 = if i > 1 { bytes[i - 2] } else { b' ' };
            if prev2 != prev {
                continue; // comparison
            }
        }
        let mut lhs_end = i;
        for op in AUG_OPS {
            if stmt[..i].ends_with(op) {
                lhs_end = i - op.len();
                break;
            }
        }
        cuts.push((lhs_end, i + 1));
    }
    let mut names = Vec::new();
    let mut start = 0;
    for (lhs_end, rhs_start) in cuts {
        let mut lhs = &stmt[start..lhs_end];
        if let Some(&colon) = top_level(lhs, ':').first() {
            lhs = &lhs[..colon];
        }
        target_names(lhs, &mut names);
        start = rhs_start;
    }
    names
}

const BLOCK_KEYWORDS: [&str; 11] = [
    "if", "elif", "else", "while", "for", "with", "try", "except", "finally", "def", "class",
];

fn check_statement(stmt: &str, bound: &mut Vec<String>) {
    static FOR: OnceLock<Regex> = OnceLock::new();
    static DEF: OnceLock<Regex> = OnceLock::new();
    static AS: OnceLock<Regex> = OnceLock::new();
    static DEL: OnceLock<Regex> = OnceLock::new();
    static KW: OnceLock<Regex> = OnceLock::new();

    let s = stmt.trim();
    let s = s.strip_prefix("async ").map(str::trim_start).unwrap_or(s);
    let first_word = re(&KW, r"^([A-Za-z_]\w*)").captures(s).map(|c| c[1].to_string());

    if let Some(kw) = first_word.as_deref().filter(|k| BLOCK_KEYWORDS.contains(k)) {
        let colon = top_level(s, ':').into_iter().next();
        let (header, body) = match colon {
            Some(i) => (&s[..i], &s[i + 1..]),
            None => (s, ""),
        };
        match kw {
            "for" => {
                if let Some(c) = re(&FOR, r"^for\s+(.+?)\s+in\b").captures(header) {
                    target_names(&c[1], bound);
                }
            }
            "def" | "class" => {
                if let Some(c) = re(&DEF, r"^(?:def|class)\s+([A-Za-z_]\w*)").captures(header) {
                    bound.push(c[1].to_string());
                }
            }
            "with" | "except" => {
                for c in re(&AS, r"\bas\s+(\(?[A-Za-z_][\w\s,]*\)?)").captures_iter(header) {
                    target_names(&c[1], bound);
                }
            }
            _ => {}
        }
        if !body.trim().is_empty() {
            check_statement(body, bound);
        }
        return;
    }
    if let Some(c) = re(&DEL, r"^del\s+(.+)$").captures(s) {
        target_names(&c[1], bound);
        return;
    }
    bound.extend(assignment_targets(s));
}

/// Returns every violation found, or `Ok` for a clean script.
pub fn coder_static_lint(script: &str) -> Result<(), Vec<LintViolation>> {
    static IMPORT: OnceLock<Regex> = OnceLock::new();
    static FROM_IMPORT: OnceLock<Regex> = OnceLock::new();
    static WALRUS: OnceLock<Regex> = OnceLock::new();

    let mut violations = Vec::new();
    let n_lines = script.lines().count();
    if n_lines > MAX_SCRIPT_LINES {
        violations.push(LintViolation::TooLong { lines: n_lines });
    }

    let masked = mask(script);
    for (i, line) in masked.lines().enumerate() {
        let hit = line.contains("__import__")
            || line.split(';').any(|seg| {
                re(&IMPORT, r"^\s*import\s").is_match(seg)
                    || re(&FROM_IMPORT, r"^\s*from\s+\S+\s+import\b").is_match(seg)
            });
        if hit {
            violations.push(LintViolation::Import { line: i + 1 });
        }
        for c in re(&WALRUS, r"\b([A-Za-z_]\w*)\s*:=").captures_iter(line) {
            if INJECTED_NAMES.contains(&&c[1]) {
                violations.push(LintViolation::Rebinds {
                    line: i + 1,
                    name: c[1].to_string(),
                });
            }
        }
    }

    for stmt in statements(&masked) {
        let mut bound = Vec::new();
        check_statement(&stmt.text, &mut bound);
        for name in bound {
            if INJECTED_NAMES.contains(&name.as_str()) {
                violations.push(LintViolation::Rebinds { line: stmt.line, name });
            }
        }
    }
    violations.sort_by_key(|v| match v {
        LintViolation::TooLong { .. } => 0,
        LintViolation::Import { line } | LintViolation::Rebinds { line, .. } => *line,
    });
    violations.dedup();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flagged(src: &str) -> bool {
        coder_static_lint(src).is_err()
    }

    #[test]
    fn imports() {
        assert!(flagged("import os\n"));
        assert!(flagged("import\tos\n"));
        assert!(flagged("from scipy import stats\n"));
        assert!(flagged("def f():\n    import sys\n"));
        assert!(flagged("x = 1; import sys\n"));
        assert!(flagged("m = __import__('os')\n"));
        assert!(!flagged("important = 1\nimported_value = 2\n"));
        assert!(!flagged("label = 'import os'\n# import os\n"));
    }

    #[test]
    fn length_limit() {
        let ok = "x = 1\n".repeat(500);
        let long = "x = 1\n".repeat(501);
        assert!(!flagged(&ok));
        assert_eq!(coder_static_lint(&long), Err(vec![LintViolation::TooLong { lines: 501 }]));
    }

    #[test]
    fn rebinding_forms() {
        for src in [
            "heart_rate = []\n",
            "a, spo2 = 1, 2\n",
            "(a, (b, meds)) = x\n",
            "[pmh, c] = x\n",
            "a, *temperature = xs\n",
            "x = systolic_bp = 3\n",
            "ethnicity: str = 'x'\n",
            "age += 1\n",
            "age >>= 1\n",
            "diastolic_bp[0] = (t, 1)\n",
            "for respiratory_rate in range(3):\n    pass\n",
            "for i, gender in enumerate(x):\n    pass\n",
            "with open('f') as meds:\n    pass\n",
            "def age():\n    return 1\n",
            "class pmh:\n    pass\n",
            "if (spo2 := 3) > 2:\n    pass\n",
            "if True: heart_rate = []\n",
            "x = 1; spo2 = 2\n",
            "del heart_rate\n",
            "heart_rate = [\n    v for v in x\n]\n",
        ] {
            assert!(flagged(src), "missed: {src:?}");
        }
    }

    #[test]
    fn clean_scripts_pass() {
        let src = r#"
hr_vals = [v for _, v in heart_rate]
times = [t for t, _ in heart_rate]
if age >= 65 and len(spo2) != 0:
    elderly = True
ok = age <= 90 or age == 3
plt.plot(times, hr_vals, label="heart_rate = raw")
fig, ax = plt.subplots(2, 1, sharex=True)
sns.lineplot(x=times, y=hr_vals, ax=ax[0])
d = {'age': age, "meds": meds}
f = lambda temperature: temperature * 2
mean_hr = float(np.mean(hr_vals))
heart_rate_mean = mean_hr
def summarize(values, spo2=None):
    return sum(values)
x = heart_rate[0]
s = """
heart_rate = []
import os
"""
result = {"mean_hr": mean_hr}
interpretation = f"Mean HR {mean_hr:.1f} bpm"
save_plot("hr.png")
"#;
        assert_eq!(coder_static_lint(src), Ok(()));
    }

    #[test]
    fn line_numbers_point_at_statement() {
        let v = coder_static_lint("x = 1\n\nimport os\nage = 2\n").unwrap_err();
        assert_eq!(
            v,
            vec![
                LintViolation::Import { line: 3 },
                LintViolation::Rebinds {
                    line: 4,
                    name: "age".into()
                }
            ]
        );
    }

    #[test]
    fn fences() {
        assert_eq!(strip_fences("```python\nx = 1\n```"), "x = 1\n");
        assert_eq!(strip_fences("Here:\n```\ny = 2\n```\nthanks"), "y = 2\n");
        assert_eq!(strip_fences("z = 3"), "z = 3\n");
        assert_eq!(strip_fences("```python\nw = 4\n"), "w = 4\n");
    }
}
