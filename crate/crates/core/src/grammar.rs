//! The three-segment tagged output format.
//!
//! A well-formed response is `<think>…</think>` followed by `<class>…</class>`
//! and, when the [`OutputMode`] asks for it, `<extension>…</extension>`.
//! Whitespace is allowed around and between blocks and is stripped from the
//! spans. Everything else (leading or trailing text, repeated tags, nesting,
//! blank spans) is rejected with the first rule violated in reading order.

use serde::{Deserialize, Serialize};
use std::fmt;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const CLASS_OPEN: &str = "<class>";
pub const CLASS_CLOSE: &str = "</class>";
pub const EXTENSION_OPEN: &str = "<extension>";
pub const EXTENSION_CLOSE: &str = "</extension>";

/// All six tag delimiters, in block order (open, close) per block.
pub const TAGS: [&str; 6] = [
    THINK_OPEN,
    THINK_CLOSE,
    CLASS_OPEN,
    CLASS_CLOSE,
    EXTENSION_OPEN,
    EXTENSION_CLOSE,
];

/// Whether the response must carry an `<extension>` block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct OutputMode {
    pub extension_enabled: bool,
}

impl OutputMode {
    pub const CLASSIFY: OutputMode = OutputMode {
        extension_enabled: false,
    };
    pub const EXTENDED: OutputMode = OutputMode {
        extension_enabled: true,
    };

    fn block_count(self) -> usize {
        if self.extension_enabled {
            3
        } else {
            2
        }
    }
}

/// A parsed response. Spans are stored trimmed of ASCII whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredOutput {
    pub think: String,
    pub class_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extension: Option<String>,
}

impl StructuredOutput {
    pub fn new(think: impl Into<String>, class_label: impl Into<String>) -> Self {
        StructuredOutput {
            think: think.into(),
            class_label: class_label.into(),
            extension: None,
        }
    }

    pub fn with_extension(mut self, extension: impl Into<String>) -> Self {
        self.extension = Some(extension.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormatErrorKind {
    MissingTag,
    WrongOrder,
    NestedTag,
    EmptySpan,
    TrailingGarbage,
    DuplicateTag,
}

/// First format violation found while reading the response left to right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?} at character {position}")]
pub struct FormatError {
    pub kind: FormatErrorKind,
    /// Offset in characters (not bytes) from the start of the input.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenderError {
    #[error("{field} span contains the tag delimiter {tag}")]
    DelimiterInSpan {
        field: &'static str,
        tag: &'static str,
    },
    #[error("{field} span is empty or has surrounding whitespace")]
    InvalidSpan { field: &'static str },
    #[error("extension presence does not match the output mode")]
    ModeMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Think,
    Class,
    Extension,
}

impl Block {
    const ORDER: [Block; 3] = [Block::Think, Block::Class, Block::Extension];

    fn open(self) -> &'static str {
        match self {
            Block::Think => THINK_OPEN,
            Block::Class => CLASS_OPEN,
            Block::Extension => EXTENSION_OPEN,
        }
    }

    fn close(self) -> &'static str {
        match self {
            Block::Think => THINK_CLOSE,
            Block::Class => CLASS_CLOSE,
            Block::Extension => EXTENSION_CLOSE,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece<'a> {
    Open(Block),
    Close(Block),
    Text(&'a str),
}

/// Splits `text` into tags and the runs of text between them, with byte offsets.
fn lex(text: &str) -> Vec<(usize, Piece<'_>)> {
    let mut pieces = Vec::new();
    let bytes = text.as_bytes();
    let mut run_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            let rest = &text[i..];
            let tag = Block::ORDER.iter().find_map(|&b| {
                if rest.starts_with(b.open()) {
                    Some((Piece::Open(b), b.open().len()))
                } else if rest.starts_with(b.close()) {
                    Some((Piece::Close(b), b.close().len()))
                } else {
                    None
                }
            });
            if let Some((piece, len)) = tag {
                if run_start < i {
                    pieces.push((run_start, Piece::Text(&text[run_start..i])));
                }
                pieces.push((i, piece));
                i += len;
                run_start = i;
                continue;
            }
        }
        i += 1;
    }
    if run_start < text.len() {
        pieces.push((run_start, Piece::Text(&text[run_start..])));
    }
    pieces
}

fn is_blank(s: &str) -> bool {
    s.bytes().all(|b| b.is_ascii_whitespace())
}

fn char_offset(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

/// Parses a response under `mode`. Never panics; every input yields either a
/// [`StructuredOutput`] or the first [`FormatError`].
pub fn parse(text: &str, mode: OutputMode) -> Result<StructuredOutput, FormatError> {
    let fail = |kind, byte: usize| {
        Err(FormatError {
            kind,
            position: char_offset(text, byte),
        })
    };

    let needed = mode.block_count();
    let mut spans: [Option<&str>; 3] = [None, None, None];
    let mut done = 0usize;
    // Some(block, byte offset of span start) while inside a block.
    let mut open: Option<(Block, usize)> = None;

    for (pos, piece) in lex(text) {
        match open {
            Some((block, span_start)) => match piece {
                Piece::Text(_) => {}
                Piece::Open(_) => return fail(FormatErrorKind::NestedTag, pos),
                Piece::Close(b) if b == block => {
                    let span = text[span_start..pos].trim_ascii();
                    if span.is_empty() {
                        return fail(FormatErrorKind::EmptySpan, span_start);
                    }
                    spans[block.index()] = Some(span);
                    done += 1;
                    open = None;
                }
                Piece::Close(_) => return fail(FormatErrorKind::MissingTag, pos),
            },
            None => match piece {
                Piece::Text(t) if is_blank(t) => {}
                Piece::Text(_) => return fail(FormatErrorKind::TrailingGarbage, pos),
                _ if done == needed => {
                    let kind = match piece {
                        Piece::Open(b) | Piece::Close(b) if b.index() < done => {
                            FormatErrorKind::DuplicateTag
                        }
                        _ => FormatErrorKind::TrailingGarbage,
                    };
                    return fail(kind, pos);
                }
                Piece::Open(b) => {
                    let expected = Block::ORDER[done];
                    if b == expected {
                        open = Some((b, pos + b.open().len()));
                    } else if b.index() < done {
                        return fail(FormatErrorKind::DuplicateTag, pos);
                    } else {
                        return fail(FormatErrorKind::WrongOrder, pos);
                    }
                }
                Piece::Close(b) => {
                    let kind = if b.index() < done {
                        FormatErrorKind::DuplicateTag
                    } else if b == Block::ORDER[done] {
                        FormatErrorKind::MissingTag
                    } else {
                        FormatErrorKind::WrongOrder
                    };
                    return fail(kind, pos);
                }
            },
        }
    }

    if done < needed {
        return fail(FormatErrorKind::MissingTag, text.len());
    }
    Ok(StructuredOutput {
        think: spans[0].unwrap_or_default().to_string(),
        class_label: spans[1].unwrap_or_default().to_string(),
        extension: spans[2].map(str::to_string),
    })
}

/// 1 iff [`parse`] succeeds.
pub fn validate_format(text: &str, mode: OutputMode) -> u8 {
    u8::from(parse(text, mode).is_ok())
}

fn check_span(field: &'static str, span: &str) -> Result<(), RenderError> {
    if let Some(tag) = TAGS.iter().find(|t| span.contains(**t)) {
        return Err(RenderError::DelimiterInSpan { field, tag });
    }
    if span.is_empty() || span.trim_ascii().len() != span.len() {
        return Err(RenderError::InvalidSpan { field });
    }
    Ok(())
}

/// Canonical rendering with no whitespace between blocks.
pub fn render(s: &StructuredOutput, mode: OutputMode) -> Result<String, RenderError> {
    check_span("think", &s.think)?;
    check_span("class", &s.class_label)?;
    if s.extension.is_some() != mode.extension_enabled {
        return Err(RenderError::ModeMismatch);
    }
    let mut out = String::with_capacity(
        s.think.len() + s.class_label.len() + s.extension.as_ref().map_or(0, String::len) + 48,
    );
    out.push_str(THINK_OPEN);
    out.push_str(&s.think);
    out.push_str(THINK_CLOSE);
    out.push_str(CLASS_OPEN);
    out.push_str(&s.class_label);
    out.push_str(CLASS_CLOSE);
    if let Some(ext) = &s.extension {
        check_span("extension", ext)?;
        out.push_str(EXTENSION_OPEN);
        out.push_str(ext);
        out.push_str(EXTENSION_CLOSE);
    }
    Ok(out)
}

impl fmt::Display for OutputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.extension_enabled {
            "classification+extension"
        } else {
            "classification"
        })
    }
}
