//! Quotation, salutation and sign-off removal on raw message bodies.

use std::sync::LazyLock;

use regex::Regex;

static ATTRIBUTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*on\b.*\bwrote:?\s*$").unwrap());
static FORWARD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:-+\s*(?:forwarded message|original message)\s*-+|begin forwarded message:?)\s*$")
        .unwrap()
});

const NAME: &str = r"[A-Z][\w'.-]*";

static SALUTATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^(?i:hi|hello|hey|dear|hiya|greetings)(?:[\s,]+(?:{NAME}|(?i:all|team|there|everyone|guys))){{0,3}}\s*[,!.:]?$"
    ))
    .unwrap()
});
static CLOSE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^(?i:best|best regards|kind regards|warm regards|warmest regards|regards|cheers|sincerely|yours truly|yours|all the best|many thanks|thanks in advance|take care|talk soon)(?:[\s,]+{NAME}){{0,3}}\s*[,!.]?$"
    ))
    .unwrap()
});
// "Thanks" is only a sign-off in its comma form; "Thanks!" alone is content.
static THANKS_CLOSE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"^(?i:thanks|thank you|thx)\s*,(?:\s*{NAME}){{0,3}}\s*$")).unwrap()
});
static DASH_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"^-{{1,2}}\s*{NAME}(?:\s+{NAME})?$")).unwrap());
static BARE_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"^{NAME}(?:\s+{NAME})?$")).unwrap());

/// Drops `>`-quoted lines, and everything from an attribution line
/// ("On ... wrote:") or a forwarded-message marker onwards.
pub fn strip_quotation(body: &str) -> String {
    let mut kept = Vec::new();
    for line in body.lines() {
        if line.trim_start().starts_with('>') {
            continue;
        }
        if ATTRIBUTION.is_match(line) || FORWARD.is_match(line) {
            break;
        }
        kept.push(line);
    }
    kept.join("\n").trim().to_string()
}

fn is_close(line: &str) -> bool {
    CLOSE.is_match(line) || THANKS_CLOSE.is_match(line) || DASH_NAME.is_match(line)
}

/// Removes a leading salutation line and trailing sign-off lines
/// (including a `--` signature block). Blank lines are dropped and the last
/// remaining line is never removed.
pub fn strip_salutation_close(body: &str) -> String {
    let mut lines: Vec<&str> = body
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if let Some(sig) = lines.iter().position(|l| *l == "--") {
        if sig > 0 {
            lines.truncate(sig);
        }
    }
    if lines.len() > 1 && SALUTATION.is_match(lines[0]) {
        lines.remove(0);
    }
    while lines.len() > 1 {
        let last = lines[lines.len() - 1];
        if is_close(last) {
            lines.pop();
        } else if lines.len() > 2 && BARE_NAME.is_match(last) && is_close(lines[lines.len() - 2]) {
            lines.truncate(lines.len() - 2);
        } else {
            break;
        }
    }
    lines.join("\n")
}
