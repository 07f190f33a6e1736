use crate::corpus::EditHunk;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Row<'a> {
    Same(&'a str),
    Del(&'a str),
    Add(&'a str),
}

/// Line diff by longest common subsequence. Within a changed region
/// deletions come before insertions, as in git output.
fn line_diff<'a>(a: &[&'a str], b: &[&'a str]) -> Vec<Row<'a>> {
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[i][j] = if a[i] == b[j] { dp[i + 1][j + 1] + 1 } else { dp[i + 1][j].max(dp[i][j + 1]) };
        }
    }
    let (mut i, mut j) = (0, 0);
    let mut rows = Vec::with_capacity(n + m);
    while i < n || j < m {
        if i < n && j < m && a[i] == b[j] {
            rows.push(Row::Same(a[i]));
            i += 1;
            j += 1;
        } else if j == m || (i < n && dp[i + 1][j] >= dp[i][j + 1]) {
            rows.push(Row::Del(a[i]));
            i += 1;
        } else {
            rows.push(Row::Add(b[j]));
            j += 1;
        }
    }
    rows
}

fn split_lines(text: &str) -> Vec<&str> {
    text.lines().collect()
}

/// Prompt representation of a hunk: file path, structural path, and the
/// change as numbered diff rows `PRE POST M content`. Lines shared by the
/// pre and post content render as context rows. Post numbers are those of
/// the file with only this hunk applied.
pub fn serialize_hunk(h: &EditHunk) -> String {
    let pre = split_lines(&h.content_pre);
    let post = split_lines(&h.content_post);
    let rows = line_diff(&pre, &post);

    let last_pre = h.line_start as usize + pre.len().saturating_sub(1);
    let last_post = h.line_start as usize + post.len().saturating_sub(1);
    let width = last_pre.max(last_post).max(1).to_string().len();
    let blank = " ".repeat(width);

    let mut out = String::new();
    out.push_str("<file_path>");
    out.push_str(&h.file);
    out.push_str("</file_path>\n<structural_path>\n");
    if !h.structural_path.is_empty() {
        out.push_str(h.structural_path.trim_end_matches('\n'));
        out.push('\n');
    }
    out.push_str("</structural_path>\n<code>\n");
    let (mut pre_no, mut post_no) = (h.line_start as usize, h.line_start as usize);
    for row in rows {
        let (prefix, text) = match row {
            Row::Same(t) => {
                let p = format!("{pre_no:>width$} {post_no:>width$}  ");
                pre_no += 1;
                post_no += 1;
                (p, t)
            }
            Row::Del(t) => {
                let p = format!("{pre_no:>width$} {blank} -");
                pre_no += 1;
                (p, t)
            }
            Row::Add(t) => {
                let p = format!("{blank} {post_no:>width$} +");
                post_no += 1;
                (p, t)
            }
        };
        out.push_str(if text.is_empty() { prefix.trim_end() } else { &prefix });
        out.push_str(text);
        out.push('\n');
    }
    out.push_str("</code>");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_support::hunk;

    #[test]
    fn pure_insertion_rows() {
        let mut h = hunk(1, "a.py", 10, "", "x = 1\ny = 2\n");
        h.line_end = 9;
        let s = serialize_hunk(&h);
        assert!(s.contains("\n   10 +x = 1\n   11 +y = 2\n"), "{s}");
    }

    #[test]
    fn deletion_rows_blank_post_column() {
        let h = hunk(1, "a.py", 7, "gone\n", "");
        let s = serialize_hunk(&h);
        assert!(s.contains("\n7   -gone\n"), "{s}");
    }

    #[test]
    fn empty_structural_path() {
        let h = hunk(1, "a.py", 1, "a\n", "b\n");
        assert_eq!(
            serialize_hunk(&h),
            "<file_path>a.py</file_path>\n<structural_path>\n</structural_path>\n<code>\n1   -a\n  1 +b\n</code>"
        );
    }
}
