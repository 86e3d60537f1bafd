//! Recursive-descent parser for the proto3 subset plus the `Acc` option.

use thiserror::Error;

use super::{Label, ScalarKind, MAX_FIELD_NUMBER};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: {message}")]
    SyntaxError {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("{line}: duplicate field number {number} in message {message}")]
    DuplicateFieldNumber {
        message: String,
        number: u32,
        line: usize,
    },
    #[error("{line}:{col}: unknown or unsupported type `{name}`")]
    UnknownType {
        name: String,
        line: usize,
        col: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProtoFile {
    pub syntax: Option<String>,
    pub package: Option<String>,
    /// Every message, nested ones flattened, in declaration order (outer
    /// before inner).
    pub messages: Vec<MessageDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageDecl {
    /// Dotted name relative to the package, e.g. `Outer.Inner`.
    pub name: String,
    pub fields: Vec<FieldDecl>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TypeRef {
    Scalar(ScalarKind),
    /// A message type name, resolved by the compiler.
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDecl {
    pub name: String,
    pub number: u32,
    pub ty: TypeRef,
    pub label: Label,
    pub acc: bool,
    pub line: usize,
    pub col: usize,
}

// proto3 scalar types this dialect does not carry
const UNSUPPORTED_SCALARS: &[&str] = &[
    "uint32", "sint32", "sint64", "fixed32", "fixed64", "sfixed32", "sfixed64",
];

const UNSUPPORTED_KEYWORDS: &[&str] = &[
    "import",
    "service",
    "rpc",
    "enum",
    "oneof",
    "map",
    "reserved",
    "extensions",
    "extend",
    "option",
    "group",
    "required",
];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(u64),
    Str(String),
    Sym(char),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, message: &str| ParseError::SyntaxError {
        line,
        col,
        message: message.to_owned(),
    };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let bump = |i: &mut usize, line: &mut usize, col: &mut usize| {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        };
        if c.is_whitespace() {
            bump(&mut i, &mut line, &mut col);
        } else if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                bump(&mut i, &mut line, &mut col);
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            bump(&mut i, &mut line, &mut col);
            bump(&mut i, &mut line, &mut col);
            loop {
                if i >= chars.len() {
                    return Err(err(tl, tc, "unterminated comment"));
                }
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    bump(&mut i, &mut line, &mut col);
                    bump(&mut i, &mut line, &mut col);
                    break;
                }
                bump(&mut i, &mut line, &mut col);
            }
        } else if c.is_ascii_alphabetic() || c == '_' || c == '.' {
            let mut s = String::new();
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.')
            {
                s.push(chars[i]);
                bump(&mut i, &mut line, &mut col);
            }
            out.push(Token {
                tok: Tok::Ident(s),
                line: tl,
                col: tc,
            });
        } else if c.is_ascii_digit() {
            let mut s = String::new();
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                s.push(chars[i]);
                bump(&mut i, &mut line, &mut col);
            }
            let v = if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
                u64::from_str_radix(hex, 16)
            } else {
                s.parse()
            };
            let v = v.map_err(|_| err(tl, tc, "invalid integer literal"))?;
            out.push(Token {
                tok: Tok::Int(v),
                line: tl,
                col: tc,
            });
        } else if c == '"' || c == '\'' {
            bump(&mut i, &mut line, &mut col);
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None | Some('\n') => return Err(err(tl, tc, "unterminated string")),
                    Some(&q) if q == c => {
                        bump(&mut i, &mut line, &mut col);
                        break;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        bump(&mut i, &mut line, &mut col);
                    }
                }
            }
            out.push(Token {
                tok: Tok::Str(s),
                line: tl,
                col: tc,
            });
        } else if "{}[]=;,<>()".contains(c) {
            out.push(Token {
                tok: Tok::Sym(c),
                line: tl,
                col: tc,
            });
            bump(&mut i, &mut line, &mut col);
        } else {
            return Err(err(tl, tc, &format!("unexpected character `{c}`")));
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    file: ProtoFile,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(t: &Token, message: impl Into<String>) -> ParseError {
        ParseError::SyntaxError {
            line: t.line,
            col: t.col,
            message: message.into(),
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<(), ParseError> {
        let t = self.next();
        if t.tok == Tok::Sym(c) {
            Ok(())
        } else {
            Err(Self::error_at(&t, format!("expected `{c}`")))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, Token), ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) => Ok((s.clone(), t.clone())),
            _ => Err(Self::error_at(&t, format!("expected {what}"))),
        }
    }

    fn reject_keyword(t: &Token, word: &str) -> Result<(), ParseError> {
        if UNSUPPORTED_KEYWORDS.contains(&word) {
            return Err(Self::error_at(t, format!("`{word}` is not supported")));
        }
        Ok(())
    }

    fn parse_file(&mut self) -> Result<(), ParseError> {
        loop {
            let t = self.next();
            match &t.tok {
                Tok::Eof => return Ok(()),
                Tok::Sym(';') => {}
                Tok::Ident(w) if w == "syntax" => {
                    self.expect_sym('=')?;
                    let v = self.next();
                    let Tok::Str(s) = v.tok.clone() else {
                        return Err(Self::error_at(&v, "expected syntax string"));
                    };
                    if s != "proto3" {
                        return Err(Self::error_at(&v, format!("unsupported syntax `{s}`")));
                    }
                    self.file.syntax = Some(s);
                    self.expect_sym(';')?;
                }
                Tok::Ident(w) if w == "package" => {
                    let (name, _) = self.expect_ident("package name")?;
                    self.file.package = Some(name);
                    self.expect_sym(';')?;
                }
                Tok::Ident(w) if w == "message" => self.parse_message("")?,
                Tok::Ident(w) => {
                    Self::reject_keyword(&t, w)?;
                    return Err(Self::error_at(&t, format!("unexpected `{w}`")));
                }
                _ => return Err(Self::error_at(&t, "expected a top-level declaration")),
            }
        }
    }

    fn parse_message(&mut self, scope: &str) -> Result<(), ParseError> {
        let (name, name_tok) = self.expect_ident("message name")?;
        if name.contains('.') {
            return Err(Self::error_at(
                &name_tok,
                "message name may not contain `.`",
            ));
        }
        let full = if scope.is_empty() {
            name
        } else {
            format!("{scope}.{name}")
        };
        self.expect_sym('{')?;
        let index = self.file.messages.len();
        self.file.messages.push(MessageDecl {
            name: full.clone(),
            fields: Vec::new(),
            line: name_tok.line,
        });
        loop {
            let t = self.peek().clone();
            match &t.tok {
                Tok::Sym('}') => {
                    self.next();
                    return Ok(());
                }
                Tok::Sym(';') => {
                    self.next();
                }
                Tok::Ident(w) if w == "message" => {
                    self.next();
                    self.parse_message(&full)?;
                }
                Tok::Ident(_) => {
                    let field = self.parse_field()?;
                    let msg = &mut self.file.messages[index];
                    if msg.fields.iter().any(|f| f.number == field.number) {
                        return Err(ParseError::DuplicateFieldNumber {
                            message: full,
                            number: field.number,
                            line: field.line,
                        });
                    }
                    if msg.fields.iter().any(|f| f.name == field.name) {
                        return Err(Self::error_at(
                            &t,
                            format!("duplicate field name `{}`", field.name),
                        ));
                    }
                    msg.fields.push(field);
                }
                Tok::Eof => return Err(Self::error_at(&t, "unexpected end of file")),
                _ => return Err(Self::error_at(&t, "expected a field declaration")),
            }
        }
    }

    fn parse_field(&mut self) -> Result<FieldDecl, ParseError> {
        let (mut word, mut t) = self.expect_ident("field type")?;
        let start = t.clone();
        let mut label = Label::Singular;
        if word == "repeated" || word == "optional" {
            if word == "repeated" {
                label = Label::Repeated;
            }
            (word, t) = self.expect_ident("field type")?;
        }
        Self::reject_keyword(&t, &word)?;
        let ty = if let Some(kind) = ScalarKind::from_proto_name(&word) {
            TypeRef::Scalar(kind)
        } else if UNSUPPORTED_SCALARS.contains(&word.as_str()) {
            return Err(ParseError::UnknownType {
                name: word,
                line: t.line,
                col: t.col,
            });
        } else {
            TypeRef::Named(word)
        };
        let (name, name_tok) = self.expect_ident("field name")?;
        if name.contains('.') {
            return Err(Self::error_at(&name_tok, "field name may not contain `.`"));
        }
        self.expect_sym('=')?;
        let nt = self.next();
        let Tok::Int(number) = nt.tok else {
            return Err(Self::error_at(&nt, "expected field number"));
        };
        if number == 0 || number > MAX_FIELD_NUMBER as u64 {
            return Err(Self::error_at(&nt, "field number out of range"));
        }
        let mut acc = false;
        if self.peek().tok == Tok::Sym('[') {
            self.next();
            loop {
                acc = self.parse_option()?;
                let sep = self.next();
                match sep.tok {
                    Tok::Sym(',') => continue,
                    Tok::Sym(']') => break,
                    _ => return Err(Self::error_at(&sep, "expected `,` or `]`")),
                }
            }
        }
        self.expect_sym(';')?;
        Ok(FieldDecl {
            name,
            number: number as u32,
            ty,
            label,
            acc,
            line: start.line,
            col: start.col,
        })
    }

    /// Parses `Acc`, `acc = true` or `acc = false`; any other option is rejected.
    fn parse_option(&mut self) -> Result<bool, ParseError> {
        let (name, t) = self.expect_ident("field option")?;
        if !name.eq_ignore_ascii_case("acc") {
            return Err(Self::error_at(
                &t,
                format!("unsupported field option `{name}`"),
            ));
        }
        if self.peek().tok != Tok::Sym('=') {
            return Ok(true);
        }
        self.next();
        let v = self.next();
        match &v.tok {
            Tok::Ident(b) if b == "true" => Ok(true),
            Tok::Ident(b) if b == "false" => Ok(false),
            _ => Err(Self::error_at(&v, "expected `true` or `false`")),
        }
    }
}

/// Parses schema source text into a [`ProtoFile`].
pub fn parse_proto(src: &str) -> Result<ProtoFile, ParseError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        file: ProtoFile::default(),
    };
    p.parse_file()?;
    Ok(p.file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn photo_with_acc_label() {
        let f = parse_proto("message Photo { bytes image = 1 [Acc]; int64 size = 2; }").unwrap();
        assert_eq!(f.messages.len(), 1);
        let m = &f.messages[0];
        assert_eq!(m.name, "Photo");
        assert!(m.fields[0].acc);
        assert_eq!(m.fields[0].ty, TypeRef::Scalar(ScalarKind::Bytes));
        assert!(!m.fields[1].acc);
    }

    #[test]
    fn empty_file() {
        assert_eq!(parse_proto("").unwrap().messages.len(), 0);
        assert_eq!(parse_proto("// nothing\n").unwrap().messages.len(), 0);
    }

    #[test]
    fn duplicate_field_number() {
        let err = parse_proto("message M { int32 a = 1; int32 b = 1; }").unwrap_err();
        assert!(matches!(
            err,
            ParseError::DuplicateFieldNumber { number: 1, .. }
        ));
    }

    #[test]
    fn acc_spellings() {
        let f = parse_proto(
            "syntax = \"proto3\";\npackage demo;\nmessage M {\n  repeated bytes a = 1 [acc = true];\n  string b = 2 [Acc = false];\n  optional string c = 3 [ACC];\n}\n",
        )
        .unwrap();
        let acc: Vec<bool> = f.messages[0].fields.iter().map(|f| f.acc).collect();
        assert_eq!(acc, vec![true, false, true]);
        assert_eq!(f.messages[0].fields[0].label, Label::Repeated);
        assert_eq!(f.package.as_deref(), Some("demo"));
    }

    #[test]
    fn nested_messages_are_flattened() {
        let f = parse_proto("message A { message B { int32 x = 1; } B b = 1; }").unwrap();
        let names: Vec<&str> = f.messages.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, vec!["A", "A.B"]);
    }

    #[test]
    fn syntax_error_position() {
        let err = parse_proto("message M {\n  int32 a 1;\n}").unwrap_err();
        assert_eq!(
            err,
            ParseError::SyntaxError {
                line: 2,
                col: 11,
                message: "expected `=`".into()
            }
        );
    }

    #[test]
    fn unsupported_constructs() {
        assert!(matches!(
            parse_proto("message M { sint32 a = 1; }"),
            Err(ParseError::UnknownType { .. })
        ));
        assert!(matches!(
            parse_proto("enum E { A = 0; }"),
            Err(ParseError::SyntaxError { .. })
        ));
        assert!(matches!(
            parse_proto("message M { int32 a = 1 [packed = true]; }"),
            Err(ParseError::SyntaxError { .. })
        ));
        assert!(matches!(
            parse_proto("message M { int32 a = 0; }"),
            Err(ParseError::SyntaxError { .. })
        ));
    }
}
