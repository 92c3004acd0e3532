//! A small s-expression reader shared by the program, grammar and database
//! text formats.
//!
//! Atoms are runs of characters other than whitespace, parentheses and `"`.
//! Quoted strings support `\"` and `\\` escapes. `;` starts a comment that
//! runs to the end of the line.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Sexp {
    Atom(String, Pos),
    Str(String, Pos),
    List(Vec<Sexp>, Pos),
}

impl Sexp {
    pub fn pos(&self) -> Pos {
        match self {
            Sexp::Atom(_, p) | Sexp::Str(_, p) | Sexp::List(_, p) => *p,
        }
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom(a, _) => Some(a),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::List(items, _) => Some(items),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadError {
    pub pos: Pos,
    pub message: String,
}

impl fmt::Display for ReadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.pos, self.message)
    }
}

impl core::error::Error for ReadError {}

struct Reader<'a> {
    chars: core::iter::Peekable<core::str::Chars<'a>>,
    pos: Pos,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Reader {
            chars: text.chars().peekable(),
            pos: Pos { line: 1, col: 1 },
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.pos.line += 1;
            self.pos.col = 1;
        } else {
            self.pos.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        while let Some(&c) = self.chars.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == ';' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn err(&self, pos: Pos, message: impl Into<String>) -> ReadError {
        ReadError {
            pos,
            message: message.into(),
        }
    }

    fn read(&mut self) -> Result<Option<Sexp>, ReadError> {
        self.skip_trivia();
        let start = self.pos;
        let Some(&c) = self.chars.peek() else {
            return Ok(None);
        };
        match c {
            '(' => {
                self.bump();
                let mut items = Vec::new();
                loop {
                    self.skip_trivia();
                    match self.chars.peek() {
                        None => return Err(self.err(start, "unbalanced parentheses: missing ')'")),
                        Some(')') => {
                            self.bump();
                            return Ok(Some(Sexp::List(items, start)));
                        }
                        Some(_) => {
                            // read() only returns None at end of input, handled above
                            if let Some(item) = self.read()? {
                                items.push(item);
                            }
                        }
                    }
                }
            }
            ')' => Err(self.err(start, "unbalanced parentheses: unexpected ')'")),
            '"' => {
                self.bump();
                let mut text = String::new();
                loop {
                    match self.bump() {
                        None => return Err(self.err(start, "unterminated string")),
                        Some('"') => return Ok(Some(Sexp::Str(text, start))),
                        Some('\\') => match self.bump() {
                            Some('"') => text.push('"'),
                            Some('\\') => text.push('\\'),
                            Some('n') => text.push('\n'),
                            _ => return Err(self.err(start, "invalid escape in string")),
                        },
                        Some(c) => text.push(c),
                    }
                }
            }
            _ => {
                let mut atom = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == '"' || c == ';' {
                        break;
                    }
                    atom.push(c);
                    self.bump();
                }
                Ok(Some(Sexp::Atom(atom, start)))
            }
        }
    }
}

/// Reads every top-level form in `text`.
pub fn read_all(text: &str) -> Result<Vec<Sexp>, ReadError> {
    let mut reader = Reader::new(text);
    let mut out = Vec::new();
    while let Some(form) = reader.read()? {
        out.push(form);
    }
    Ok(out)
}

/// Reads exactly one form; trailing input is an error.
pub fn read_one(text: &str) -> Result<Sexp, ReadError> {
    let mut reader = Reader::new(text);
    let Some(form) = reader.read()? else {
        return Err(reader.err(reader.pos, "empty input"));
    };
    reader.skip_trivia();
    if reader.chars.peek().is_some() {
        return Err(reader.err(reader.pos, "trailing input after expression"));
    }
    Ok(form)
}

/// True when `text` can be written as a bare atom and read back unchanged.
pub fn is_bare_atom(text: &str) -> bool {
    !text.is_empty()
        && text
            .chars()
            .all(|c| !(c.is_whitespace() || c == '(' || c == ')' || c == '"' || c == ';' || c == '\\'))
}

/// Writes `text` as a quoted string literal.
pub fn write_quoted(out: &mut String, text: &str) {
    out.push('"');
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
}
