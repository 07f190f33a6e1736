use regex::Regex;
use std::sync::OnceLock;

fn definition() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(async\s+def|def|class)\s+\w").unwrap())
}

fn indent_of(line: &str) -> usize {
    line.chars().take_while(|c| *c == ' ' || *c == '\t').map(|c| if c == '\t' { 8 } else { 1 }).sum()
}

/// Chain of enclosing `class`/`def` headers for a Python edit at
/// `line_start`, outermost first, one per line. `anchor` is the first
/// non-blank line of the edit and sets the starting indentation. Empty when
/// the edit sits at module level.
pub fn python_structural_path(source: &str, line_start: u32, anchor: &str) -> String {
    let lines: Vec<&str> = source.lines().collect();
    let mut limit = if anchor.trim().is_empty() { usize::MAX } else { indent_of(anchor) };
    let mut chain = Vec::new();
    let upto = (line_start as usize).saturating_sub(1).min(lines.len());
    for line in lines[..upto].iter().rev() {
        if limit == 0 {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let indent = indent_of(line);
        if indent < limit || limit == usize::MAX {
            if definition().is_match(line) {
                chain.push(line.trim_end());
                limit = indent;
            } else if indent < limit {
                // A less-indented statement (if/for/with) narrows the scope.
                limit = limit.min(indent + 1);
            }
        }
    }
    chain.reverse();
    chain.join("\n")
}
