use super::indent_of;
use std::ops::Range;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SegmentKind {
    Function { name: String },
    Class { name: String },
    Statement,
}

/// A block of consecutive lines forming one statement at a given
/// indentation level. Built without parsing, so it also exists for text that
/// is syntactically broken.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    /// Whole lines: from the start of the first line to just past the last
    /// newline (or to end of input).
    pub span: Range<usize>,
    /// 1-based line numbers, inclusive.
    pub first_line: usize,
    pub last_line: usize,
    /// Offset of the `def`/`class` line (after any decorators).
    pub header: usize,
    pub indent: usize,
}

impl Segment {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.span.clone()]
    }

    pub fn name(&self) -> Option<&str> {
        match &self.kind {
            SegmentKind::Function { name } | SegmentKind::Class { name } => Some(name),
            SegmentKind::Statement => None,
        }
    }

    pub fn is_function(&self) -> bool {
        matches!(self.kind, SegmentKind::Function { .. })
    }

    /// For `def`/`class` blocks: true when nothing but comments and blank
    /// lines follows the header.
    pub fn body_is_code_free(&self, src: &str) -> bool {
        if self.kind == SegmentKind::Statement {
            return false;
        }
        let text = &src[self.header..self.span.end];
        let mut scan = Scanner::default();
        let mut lines = text.split_inclusive('\n');
        // consume the (possibly multi-line) header
        let mut last_header_line = "";
        for line in lines.by_ref() {
            scan.feed(line);
            last_header_line = line;
            if scan.clean() {
                break;
            }
        }
        let code = strip_comment(last_header_line).trim_end();
        if !code.ends_with(':') {
            return false;
        }
        lines.all(|l| {
            let t = l.trim();
            t.is_empty() || t.starts_with('#')
        })
    }
}

#[derive(Debug, Default, Clone)]
struct Scanner {
    depth: usize,
    string: Option<(char, bool)>,
    continuation: bool,
}

impl Scanner {
    fn clean(&self) -> bool {
        self.depth == 0 && self.string.is_none() && !self.continuation
    }

    fn feed(&mut self, line: &str) {
        self.continuation = false;
        let chars: Vec<char> = line.trim_end_matches(['\n', '\r']).chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if let Some((quote, triple)) = self.string {
                if c == '\\' {
                    i += 2;
                    continue;
                }
                if c == quote {
                    if !triple {
                        self.string = None;
                    } else if chars.get(i + 1) == Some(&quote) && chars.get(i + 2) == Some(&quote) {
                        self.string = None;
                        i += 3;
                        continue;
                    }
                }
                i += 1;
                continue;
            }
            match c {
                '#' => break,
                '"' | '\'' => {
                    let triple = chars.get(i + 1) == Some(&c) && chars.get(i + 2) == Some(&c);
                    self.string = Some((c, triple));
                    i += if triple { 3 } else { 1 };
                    continue;
                }
                '(' | '[' | '{' => self.depth += 1,
                ')' | ']' | '}' => self.depth = self.depth.saturating_sub(1),
                _ => {}
            }
            i += 1;
        }
        match self.string {
            Some((_, false)) => {
                // an unterminated single-quoted string only continues after a backslash
                if chars.last() == Some(&'\\') {
                    self.continuation = true;
                } else {
                    self.string = None;
                }
            }
            Some((_, true)) => {}
            None => {
                if strip_comment(line).trim_end().ends_with('\\') {
                    self.continuation = true;
                }
            }
        }
    }
}

fn strip_comment(line: &str) -> &str {
    // good enough for header lines, which rarely embed '#' in strings
    let mut in_str: Option<char> = None;
    for (i, c) in line.char_indices() {
        match in_str {
            Some(q) if c == q => in_str = None,
            Some(_) => {}
            None if c == '"' || c == '\'' => in_str = Some(c),
            None if c == '#' => return &line[..i],
            None => {}
        }
    }
    line
}

fn is_clause_keyword(code: &str) -> bool {
    ["else", "elif", "except", "finally"].iter().any(|kw| {
        code.strip_prefix(kw)
            .is_some_and(|rest| rest.starts_with([':', ' ', '(', '\t']))
    })
}

fn starts_definition(code: &str) -> bool {
    code.starts_with("def ")
        || code.starts_with("async def ")
        || code.starts_with("class ")
        || code.starts_with('@')
        || code.starts_with("import ")
        || code.starts_with("from ")
}

fn header_kind(code: &str) -> SegmentKind {
    let ident = |rest: &str| -> String {
        rest.trim_start()
            .chars()
            .take_while(|c| c.is_alphanumeric() || *c == '_')
            .collect()
    };
    if let Some(rest) = code.strip_prefix("async def ").or_else(|| code.strip_prefix("def ")) {
        let name = ident(rest);
        if !name.is_empty() {
            return SegmentKind::Function { name };
        }
    }
    if let Some(rest) = code.strip_prefix("class ") {
        let name = ident(rest);
        if !name.is_empty() {
            return SegmentKind::Class { name };
        }
    }
    SegmentKind::Statement
}

/// Splits the whole text into top-level segments.
pub fn segment(text: &str) -> Vec<Segment> {
    segment_block(text, 0..text.len(), 0)
}

/// Splits `region` of `text` into statements starting at exactly `base`
/// columns of indentation. Comment and blank lines that do not sit inside a
/// statement belong to no segment.
pub fn segment_block(text: &str, region: Range<usize>, base: usize) -> Vec<Segment> {
    struct Open {
        start: usize,
        first_line: usize,
        content_end: usize,
        last_line: usize,
        header: Option<usize>,
        decorators_only: bool,
    }

    let first_line_no = text[..region.start].matches('\n').count() + 1;
    let mut out = Vec::new();
    let mut scan = Scanner::default();
    let mut open: Option<Open> = None;
    let mut offset = region.start;

    let close = |open: Open, out: &mut Vec<Segment>| {
        let header = open.header.unwrap_or(open.start);
        let header_line = text[header..open.content_end].lines().next().unwrap_or("");
        let kind = header_kind(header_line.trim_start());
        out.push(Segment {
            kind,
            span: open.start..open.content_end,
            first_line: open.first_line,
            last_line: open.last_line,
            header,
            indent: base,
        });
    };

    for (idx, line) in text[region.clone()].split_inclusive('\n').enumerate() {
        let line_no = first_line_no + idx;
        let line_start = offset;
        let line_end = offset + line.len();
        offset = line_end;

        let stripped = line.trim();
        let is_blank = stripped.is_empty();
        let is_comment = stripped.starts_with('#');
        let ind = indent_of(line);
        let code = line.trim_start();

        let mut starts_new = false;
        if !is_blank && !is_comment && ind == base {
            if scan.clean() && !is_clause_keyword(code) {
                starts_new = true;
            } else if scan.string.is_none() && scan.depth > 0 && starts_definition(code) {
                // an unclosed bracket must not swallow the rest of the file
                scan = Scanner::default();
                starts_new = true;
            }
        }

        if starts_new {
            let continue_decorated = open.as_ref().is_some_and(|o| o.decorators_only);
            if continue_decorated {
                let o = open.as_mut().unwrap();
                o.content_end = line_end;
                o.last_line = line_no;
                if !code.starts_with('@') {
                    o.decorators_only = false;
                    o.header = Some(line_start);
                }
            } else {
                if let Some(o) = open.take() {
                    close(o, &mut out);
                }
                let decorator = code.starts_with('@');
                open = Some(Open {
                    start: line_start,
                    first_line: line_no,
                    content_end: line_end,
                    last_line: line_no,
                    header: if decorator { None } else { Some(line_start) },
                    decorators_only: decorator,
                });
            }
        } else if let Some(o) = open.as_mut() {
            let inside = !scan.clean() || (!is_blank && (ind > base || !is_comment));
            if inside {
                o.content_end = line_end;
                o.last_line = line_no;
            }
        }
        scan.feed(line);
    }
    if let Some(o) = open.take() {
        close(o, &mut out);
    }
    out
}
