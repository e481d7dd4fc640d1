use std::fmt::Write as _;
use std::path::Path;

use super::AttentionBundle;
use crate::error::{Error, Result};

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

const STYLE: &str = "body{font-family:sans-serif;margin:1.5em}\
table{border-collapse:collapse}\
td,th{border:1px solid #ddd;padding:0;text-align:center;font-size:12px}\
th{padding:2px 6px;font-weight:normal}\
td.cell{width:28px;height:28px}\
th.row{text-align:right}\
th.col{writing-mode:vertical-rl;transform:rotate(180deg)}";

/// Renders one type's attention as a standalone XHTML document. Row `i`,
/// column `j` holds the weight query token `i` puts on key token `j`; cell
/// opacity is the weight divided by the matrix maximum, and the exact value
/// shows on hover.
pub fn render_heatmap(bundle: &AttentionBundle, slot_type: &str) -> Result<String> {
    let m = bundle.matrix(slot_type)?;
    let max = m.iter().flatten().copied().fold(0.0f64, f64::max);
    let toks: Vec<String> = bundle.tokens.iter().map(|t| escape(t)).collect();
    let title = format!("Attention for slot type {}", escape(slot_type));

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!DOCTYPE html>\n");
    s.push_str("<html xmlns=\"http://www.w3.org/1999/xhtml\" lang=\"en\">\n<head>\n");
    s.push_str("<meta charset=\"UTF-8\"/>\n");
    let _ = writeln!(s, "<title>{title}</title>");
    let _ = writeln!(s, "<style>{STYLE}</style>\n</head>\n<body>");
    let _ = writeln!(s, "<h1>{title}</h1>");
    let _ = writeln!(s, "<p class=\"utterance\">{}</p>", toks.join(" "));
    s.push_str("<table>\n<tr><th></th>");
    for t in &toks {
        let _ = write!(s, "<th class=\"col\">{t}</th>");
    }
    s.push_str("</tr>\n");
    for (i, row) in m.iter().enumerate() {
        let _ = write!(s, "<tr><th class=\"row\">{}</th>", toks[i]);
        for (j, &w) in row.iter().enumerate() {
            let opacity = if max > 0.0 { w / max } else { 0.0 };
            let _ = write!(
                s,
                "<td class=\"cell\" style=\"background-color:rgba(200,30,30,{opacity:.4})\" title=\"{} &#8594; {}: {w:.6}\"></td>",
                toks[i], toks[j]
            );
        }
        s.push_str("</tr>\n");
    }
    s.push_str("</table>\n</body>\n</html>\n");
    Ok(s)
}

pub fn write_heatmap(bundle: &AttentionBundle, slot_type: &str, path: &Path) -> Result<()> {
    let doc = render_heatmap(bundle, slot_type)?;
    std::fs::write(path, doc).map_err(|e| Error::io(path, e))
}
