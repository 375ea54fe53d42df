//! Line-oriented Markdown reader producing a heading tree of content blocks.
//!
//! Only the block structure matters here: ATX headings (`#`..`######`),
//! paragraphs, list items, fenced code and `$$` display math. Inline markup
//! is left untouched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Path component used for units that precede the first heading.
pub const ROOT_TITLE: &str = "<root>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Paragraph,
    ListItem,
    Code,
    Math,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub text: String,
    /// 1-based inclusive line range in the source document.
    pub lines: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub id: String,
    pub level: u8,
    pub title: String,
    pub line: usize,
    pub content: Vec<Block>,
    pub children: Vec<Section>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionTree {
    /// Blocks that appear before any heading.
    pub preamble: Vec<Block>,
    pub sections: Vec<Section>,
}

impl SectionTree {
    /// Number of headings in the document.
    pub fn heading_count(&self) -> usize {
        fn count(s: &Section) -> usize {
            1 + s.children.iter().map(count).sum::<usize>()
        }
        self.sections.iter().map(count).sum()
    }

    /// Visits every section depth-first in document order with its ancestor titles.
    pub fn walk<'a>(&'a self, mut f: impl FnMut(&'a Section, &[&'a str], Option<&'a Section>)) {
        fn go<'a>(
            s: &'a Section,
            parent: Option<&'a Section>,
            path: &mut Vec<&'a str>,
            f: &mut dyn FnMut(&'a Section, &[&'a str], Option<&'a Section>),
        ) {
            path.push(&s.title);
            f(s, path, parent);
            for c in &s.children {
                go(c, Some(s), path, f);
            }
            path.pop();
        }
        let mut path = Vec::new();
        for s in &self.sections {
            go(s, None, &mut path, &mut f);
        }
    }
}

fn heading(line: &str) -> Option<(u8, String)> {
    let trimmed = line.trim_start_matches(' ');
    if line.len() - trimmed.len() > 3 {
        return None;
    }
    let hashes = trimmed.bytes().take_while(|&b| b == b'#').count();
    if hashes == 0 || hashes > 6 {
        return None;
    }
    let rest = &trimmed[hashes..];
    if !rest.is_empty() && !rest.starts_with([' ', '\t']) {
        return None;
    }
    let mut title = rest.trim();
    // optional closing sequence: "## Title ##"
    let stripped = title.trim_end_matches('#');
    if stripped.len() < title.len() && (stripped.is_empty() || stripped.ends_with([' ', '\t'])) {
        title = stripped.trim_end();
    }
    Some((hashes as u8, title.to_string()))
}

fn fence_open(line: &str) -> Option<(char, usize)> {
    let t = line.trim_start();
    let c = t.chars().next()?;
    if c != '`' && c != '~' {
        return None;
    }
    let n = t.chars().take_while(|&x| x == c).count();
    (n >= 3).then_some((c, n))
}

fn is_fence_close(line: &str, c: char, n: usize) -> bool {
    let t = line.trim();
    t.chars().count() >= n && t.chars().all(|x| x == c)
}

fn is_thematic_break(line: &str) -> bool {
    let t: String = line.chars().filter(|c| !c.is_whitespace()).collect();
    t.len() >= 3
        && ['-', '*', '_']
            .iter()
            .any(|&m| t.chars().all(|c| c == m))
}

/// Returns the item text after a bullet or ordered-list marker.
fn list_item(line: &str) -> Option<&str> {
    let t = line.trim_start();
    let after = if let Some(r) = t.strip_prefix(['-', '*', '+']) {
        r
    } else {
        let digits = t.bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 || digits > 9 {
            return None;
        }
        t[digits..].strip_prefix(['.', ')'])?
    };
    if after.is_empty() {
        return Some("");
    }
    after.starts_with([' ', '\t']).then(|| after.trim_start())
}

/// Collapses all whitespace runs to single spaces and trims.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

enum Open {
    None,
    Paragraph(Vec<String>, usize),
    Item(Vec<String>, usize),
    Fence {
        marker: (char, usize),
        lines: Vec<String>,
        start: usize,
    },
    Math(Vec<String>, usize),
}

struct Builder {
    tree: SectionTree,
    /// Indices into nested `children` vectors leading to the open section.
    stack: Vec<(u8, usize)>,
    next_id: usize,
}

impl Builder {
    fn current(&mut self) -> &mut Vec<Block> {
        if self.stack.is_empty() {
            return &mut self.tree.preamble;
        }
        let mut sec = &mut self.tree.sections[self.stack[0].1];
        for &(_, i) in &self.stack[1..] {
            sec = &mut sec.children[i];
        }
        &mut sec.content
    }

    fn push_block(&mut self, kind: BlockKind, text: String, lines: (usize, usize)) {
        if !text.trim().is_empty() {
            self.current().push(Block { kind, text, lines });
        }
    }

    fn open_section(&mut self, level: u8, title: String, line: usize) {
        // Pop to the nearest open ancestor with a strictly smaller level; level
        // jumps (e.g. ## then ####) simply nest under the nearest ancestor.
        while self.stack.last().is_some_and(|&(l, _)| l >= level) {
            self.stack.pop();
        }
        let section = Section {
            id: format!("s{}", self.next_id),
            level,
            title,
            line,
            content: Vec::new(),
            children: Vec::new(),
        };
        self.next_id += 1;
        let siblings = if self.stack.is_empty() {
            &mut self.tree.sections
        } else {
            let mut sec = &mut self.tree.sections[self.stack[0].1];
            for &(_, i) in &self.stack[1..] {
                sec = &mut sec.children[i];
            }
            &mut sec.children
        };
        siblings.push(section);
        let idx = siblings.len() - 1;
        self.stack.push((level, idx));
    }

    fn close(&mut self, open: Open, last_line: usize) {
        match open {
            Open::None => {}
            Open::Paragraph(lines, start) => {
                self.push_block(BlockKind::Paragraph, normalize_ws(&lines.join(" ")), (start, last_line))
            }
            Open::Item(lines, start) => {
                self.push_block(BlockKind::ListItem, normalize_ws(&lines.join(" ")), (start, last_line))
            }
            Open::Fence { lines, start, .. } => {
                self.push_block(BlockKind::Code, lines.join("\n"), (start, last_line))
            }
            Open::Math(lines, start) => {
                self.push_block(BlockKind::Math, lines.join("\n"), (start, last_line))
            }
        }
    }
}

/// Parses a Markdown document into a tree of sections.
///
/// Malformed heading nesting is repaired rather than rejected: a heading that
/// skips levels becomes a direct child of the closest shallower heading.
pub fn parse_markdown(text: &str) -> Result<SectionTree> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut b = Builder {
        tree: SectionTree::default(),
        stack: Vec::new(),
        next_id: 0,
    };
    let mut open = Open::None;
    let mut prev_blank = false;
    let mut last_content_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');

        // Verbatim blocks consume lines until their terminator.
        match &mut open {
            Open::Fence { marker, lines, .. } => {
                lines.push(line.to_string());
                if lines.len() > 1 && is_fence_close(line, marker.0, marker.1) {
                    let done = std::mem::replace(&mut open, Open::None);
                    b.close(done, lineno);
                }
                prev_blank = false;
                last_content_line = lineno;
                continue;
            }
            Open::Math(lines, _) => {
                lines.push(line.to_string());
                if line.trim_end().ends_with("$$") {
                    let done = std::mem::replace(&mut open, Open::None);
                    b.close(done, lineno);
                }
                prev_blank = false;
                last_content_line = lineno;
                continue;
            }
            _ => {}
        }

        if line.trim().is_empty() {
            if let Open::Paragraph(..) = open {
                let done = std::mem::replace(&mut open, Open::None);
                b.close(done, last_content_line);
            }
            prev_blank = true;
            continue;
        }

        if let Some((level, title)) = heading(line) {
            let done = std::mem::replace(&mut open, Open::None);
            b.close(done, last_content_line);
            b.open_section(level, title, lineno);
            prev_blank = false;
            last_content_line = lineno;
            continue;
        }

        if let Some(marker) = fence_open(line) {
            let done = std::mem::replace(&mut open, Open::None);
            b.close(done, last_content_line);
            open = Open::Fence {
                marker,
                lines: vec![line.to_string()],
                start: lineno,
            };
        } else if line.trim_start().starts_with("$$") {
            let done = std::mem::replace(&mut open, Open::None);
            b.close(done, last_content_line);
            let t = line.trim();
            if t.len() > 4 && t.ends_with("$$") {
                b.push_block(BlockKind::Math, line.to_string(), (lineno, lineno));
            } else {
                open = Open::Math(vec![line.to_string()], lineno);
            }
        } else if is_thematic_break(line) {
            let done = std::mem::replace(&mut open, Open::None);
            b.close(done, last_content_line);
        } else if let Some(item) = list_item(line) {
            let done = std::mem::replace(&mut open, Open::None);
            b.close(done, last_content_line);
            open = Open::Item(vec![item.to_string()], lineno);
        } else {
            let indented = line.starts_with([' ', '\t']);
            let text = line.trim().trim_start_matches('>').trim().to_string();
            match &mut open {
                Open::Item(lines, _) if !prev_blank || indented => lines.push(text),
                Open::Paragraph(lines, _) => lines.push(text),
                _ => {
                    let done = std::mem::replace(&mut open, Open::None);
                    b.close(done, last_content_line);
                    open = Open::Paragraph(vec![text], lineno);
                }
            }
        }
        prev_blank = false;
        last_content_line = lineno;
    }
    b.close(open, last_content_line);
    Ok(b.tree)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_nesting() {
        let t = parse_markdown("# A\ntext\n## B\nmore").unwrap();
        assert!(t.preamble.is_empty());
        assert_eq!(t.sections.len(), 1);
        let a = &t.sections[0];
        assert_eq!((a.level, a.title.as_str()), (1, "A"));
        assert_eq!(a.content.len(), 1);
        assert_eq!(a.content[0].text, "text");
        assert_eq!(a.children.len(), 1);
        let b = &a.children[0];
        assert_eq!((b.level, b.title.as_str()), (2, "B"));
        assert_eq!(b.content[0].text, "more");
    }

    #[test]
    fn empty_document_is_rejected() {
        assert!(matches!(parse_markdown(""), Err(Error::EmptyInput)));
        assert!(matches!(parse_markdown("  \n\n"), Err(Error::EmptyInput)));
    }

    #[test]
    fn level_jump_is_repaired() {
        let t = parse_markdown("# A\n## C\n#### D").unwrap();
        let c = &t.sections[0].children[0];
        assert_eq!(c.title, "C");
        assert_eq!(c.children.len(), 1);
        assert_eq!(c.children[0].title, "D");
        assert_eq!(c.children[0].level, 4);
    }

    #[test]
    fn sibling_after_deeper_heading() {
        let t = parse_markdown("# A\n### X\n## B\n# C").unwrap();
        assert_eq!(t.sections.len(), 2);
        let a = &t.sections[0];
        assert_eq!(a.children.iter().map(|s| s.title.as_str()).collect::<Vec<_>>(), ["X", "B"]);
        assert_eq!(t.heading_count(), 4);
    }

    #[test]
    fn blocks_are_split_by_kind() {
        let md = "# T\nline one\nline two\n\n- item a\n  continued\n- item b\n\n```python\n# not a heading\nx = 1\n```\n\n$$\na^2 + b^2\n$$\n\n$$ e = mc^2 $$\n";
        let t = parse_markdown(md).unwrap();
        let c = &t.sections[0].content;
        let kinds: Vec<_> = c.iter().map(|b| b.kind).collect();
        assert_eq!(
            kinds,
            [
                BlockKind::Paragraph,
                BlockKind::ListItem,
                BlockKind::ListItem,
                BlockKind::Code,
                BlockKind::Math,
                BlockKind::Math
            ]
        );
        assert_eq!(c[0].text, "line one line two");
        assert_eq!(c[0].lines, (2, 3));
        assert_eq!(c[1].text, "item a continued");
        assert!(c[3].text.contains("# not a heading"));
        assert_eq!(t.heading_count(), 1);
    }

    #[test]
    fn preamble_and_breaks() {
        let t = parse_markdown("intro para\n\n---\n\n# H\n1. first\n2) second\n").unwrap();
        assert_eq!(t.preamble.len(), 1);
        assert_eq!(t.sections[0].content.len(), 2);
        assert_eq!(t.sections[0].content[1].text, "second");
    }

    #[test]
    fn heading_syntax_edge_cases() {
        assert_eq!(heading("## Title ##"), Some((2, "Title".into())));
        assert_eq!(heading("#hashtag"), None);
        assert_eq!(heading("####### seven"), None);
        assert_eq!(heading("    # code"), None);
        assert_eq!(heading("# C#"), Some((1, "C#".into())));
    }
}
