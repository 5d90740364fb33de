//! Line-oriented sketching language.
//!
//! A program is free-form text in which drawing code is fenced by the
//! case-sensitive keywords `BEGIN` and `END`. Everything outside a fence is
//! prose. Inside a fence each non-blank line is one command:
//!
//! ```text
//! create_point   id x y color
//! create_line    id x1 y1 x2 y2 color
//! create_circle  id cx cy radius color
//! create_rectangle id x1 y1 x2 y2 color
//! create_arrow   id x1 y1 x2 y2 color
//! translate      id dx dy
//! rotate         id angle cx cy
//! delete         id
//! ```
//!
//! Coordinates are normalized: `(0, 0)` is the top-left corner of the image
//! and `(1, 1)` the bottom-right.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// The closed set of colors a command may name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Blue,
    Green,
    Purple,
    Black,
    Orange,
    Yellow,
    Cyan,
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Red,
        Color::Blue,
        Color::Green,
        Color::Purple,
        Color::Black,
        Color::Orange,
        Color::Yellow,
        Color::Cyan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Purple => "purple",
            Color::Black => "black",
            Color::Orange => "orange",
            Color::Yellow => "yellow",
            Color::Cyan => "cyan",
        }
    }

    pub fn from_name(name: &str) -> Option<Color> {
        Color::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [255, 0, 0],
            Color::Blue => [0, 0, 255],
            Color::Green => [0, 160, 0],
            Color::Purple => [128, 0, 128],
            Color::Black => [0, 0, 0],
            Color::Orange => [255, 140, 0],
            Color::Yellow => [255, 215, 0],
            Color::Cyan => [0, 190, 190],
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    CreatePoint { id: String, x: f64, y: f64, color: Color },
    CreateLine { id: String, x1: f64, y1: f64, x2: f64, y2: f64, color: Color },
    CreateCircle { id: String, cx: f64, cy: f64, radius: f64, color: Color },
    CreateRectangle { id: String, x1: f64, y1: f64, x2: f64, y2: f64, color: Color },
    CreateArrow { id: String, x1: f64, y1: f64, x2: f64, y2: f64, color: Color },
    Translate { id: String, dx: f64, dy: f64 },
    Rotate { id: String, angle: f64, cx: f64, cy: f64 },
    Delete { id: String },
}

impl Command {
    pub fn id(&self) -> &str {
        match self {
            Command::CreatePoint { id, .. }
            | Command::CreateLine { id, .. }
            | Command::CreateCircle { id, .. }
            | Command::CreateRectangle { id, .. }
            | Command::CreateArrow { id, .. }
            | Command::Translate { id, .. }
            | Command::Rotate { id, .. }
            | Command::Delete { id } => id,
        }
    }

    pub fn keyword(&self) -> &'static str {
        match self {
            Command::CreatePoint { .. } => "create_point",
            Command::CreateLine { .. } => "create_line",
            Command::CreateCircle { .. } => "create_circle",
            Command::CreateRectangle { .. } => "create_rectangle",
            Command::CreateArrow { .. } => "create_arrow",
            Command::Translate { .. } => "translate",
            Command::Rotate { .. } => "rotate",
            Command::Delete { .. } => "delete",
        }
    }

    pub fn is_create(&self) -> bool {
        matches!(
            self,
            Command::CreatePoint { .. }
                | Command::CreateLine { .. }
                | Command::CreateCircle { .. }
                | Command::CreateRectangle { .. }
                | Command::CreateArrow { .. }
        )
    }

    /// Canonical one-line text form; numbers carry exactly three decimals.
    pub fn canonical(&self) -> String {
        let n = fmt_num;
        match self {
            Command::CreatePoint { id, x, y, color } => {
                format!("create_point {id} {} {} {color}", n(*x), n(*y))
            }
            Command::CreateLine { id, x1, y1, x2, y2, color }
            | Command::CreateRectangle { id, x1, y1, x2, y2, color }
            | Command::CreateArrow { id, x1, y1, x2, y2, color } => format!(
                "{} {id} {} {} {} {} {color}",
                self.keyword(),
                n(*x1),
                n(*y1),
                n(*x2),
                n(*y2)
            ),
            Command::CreateCircle { id, cx, cy, radius, color } => {
                format!("create_circle {id} {} {} {} {color}", n(*cx), n(*cy), n(*radius))
            }
            Command::Translate { id, dx, dy } => format!("translate {id} {} {}", n(*dx), n(*dy)),
            Command::Rotate { id, angle, cx, cy } => {
                format!("rotate {id} {} {} {}", n(*angle), n(*cx), n(*cy))
            }
            Command::Delete { id } => format!("delete {id}"),
        }
    }
}

/// Formats a number rounded to three decimals, folding `-0.000` into `0.000`.
pub fn fmt_num(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

/// Commands parsed from one `BEGIN`/`END` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub commands: Vec<Command>,
    /// Byte offsets `(start, end)` of the block content in the originating text.
    pub source_span: (usize, usize),
}

impl Script {
    pub fn new(commands: Vec<Command>) -> Self {
        Script { commands, source_span: (0, 0) }
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }
}

impl fmt::Display for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonicalize(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    UnknownCommand,
    ArityError,
    NumberFormat,
    CoordOutOfRange,
    UnknownColor,
    MissingBegin,
    MissingEnd,
}

impl DiagnosticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticKind::UnknownCommand => "unknown-command",
            DiagnosticKind::ArityError => "arity-error",
            DiagnosticKind::NumberFormat => "number-format",
            DiagnosticKind::CoordOutOfRange => "coord-out-of-range",
            DiagnosticKind::UnknownColor => "unknown-color",
            DiagnosticKind::MissingBegin => "missing-begin",
            DiagnosticKind::MissingEnd => "missing-end",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    /// 1-based line number.
    pub line: usize,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl ParseDiagnostic {
    fn new(line: usize, kind: DiagnosticKind, message: impl Into<String>) -> Self {
        ParseDiagnostic { line, kind, message: message.into() }
    }
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.kind.as_str(), self.message)
    }
}

/// How literal coordinates outside the unit square are treated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordMode {
    /// Reject with `coord-out-of-range`.
    #[default]
    Strict,
    /// Clamp into `[0, 1]`.
    Lenient,
}

impl CoordMode {
    pub fn from_strict(strict: bool) -> Self {
        if strict {
            CoordMode::Strict
        } else {
            CoordMode::Lenient
        }
    }
}

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[+-]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)$").unwrap());

/// `END` needs no trailing boundary so prose glued onto it (`ENDfoo`) still
/// closes the block.
static KEYWORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bBEGIN\b|\bEND").unwrap());

fn parse_number(tok: &str) -> Option<f64> {
    if !NUMBER.is_match(tok) {
        return None;
    }
    tok.parse::<f64>().ok().filter(|v| v.is_finite())
}

struct LineParser<'a> {
    line: usize,
    keyword: &'a str,
    args: &'a [&'a str],
    mode: CoordMode,
    diags: Vec<ParseDiagnostic>,
}

impl<'a> LineParser<'a> {
    fn diag(&mut self, kind: DiagnosticKind, message: String) {
        self.diags.push(ParseDiagnostic::new(self.line, kind, message));
    }

    fn number(&mut self, idx: usize, name: &str) -> f64 {
        let tok = self.args[idx];
        match parse_number(tok) {
            Some(v) => v,
            None => {
                self.diag(
                    DiagnosticKind::NumberFormat,
                    format!("{}: `{tok}` is not a valid number for {name}", self.keyword),
                );
                0.0
            }
        }
    }

    fn coord(&mut self, idx: usize, name: &str) -> f64 {
        let before = self.diags.len();
        let v = self.number(idx, name);
        if self.diags.len() > before || (0.0..=1.0).contains(&v) {
            return v;
        }
        match self.mode {
            CoordMode::Strict => {
                self.diag(
                    DiagnosticKind::CoordOutOfRange,
                    format!("{}: {name}={v} lies outside [0, 1]", self.keyword),
                );
                v
            }
            CoordMode::Lenient => v.clamp(0.0, 1.0),
        }
    }

    fn radius(&mut self, idx: usize) -> f64 {
        let before = self.diags.len();
        let v = self.number(idx, "radius");
        if self.diags.len() > before {
            return v;
        }
        if v <= 0.0 {
            self.diag(
                DiagnosticKind::CoordOutOfRange,
                format!("{}: radius must be positive, got {v}", self.keyword),
            );
        } else if v > 1.0 {
            match self.mode {
                CoordMode::Strict => self.diag(
                    DiagnosticKind::CoordOutOfRange,
                    format!("{}: radius={v} exceeds 1", self.keyword),
                ),
                CoordMode::Lenient => return 1.0,
            }
        }
        v
    }

    fn color(&mut self, idx: usize) -> Color {
        let tok = self.args[idx];
        Color::from_name(tok).unwrap_or_else(|| {
            self.diag(
                DiagnosticKind::UnknownColor,
                format!("{}: unsupported color `{tok}`", self.keyword),
            );
            Color::Black
        })
    }

    fn two_points(&mut self) -> (f64, f64, f64, f64) {
        (self.coord(1, "x1"), self.coord(2, "y1"), self.coord(3, "x2"), self.coord(4, "y2"))
    }
}

fn expected_arity(keyword: &str) -> Option<usize> {
    // argument count after the keyword, id included
    Some(match keyword {
        "create_point" => 4,
        "create_line" | "create_rectangle" | "create_arrow" => 6,
        "create_circle" => 5,
        "translate" => 3,
        "rotate" => 4,
        "delete" => 1,
        _ => return None,
    })
}

fn parse_line(line: usize, tokens: &[&str], mode: CoordMode) -> Result<Command, Vec<ParseDiagnostic>> {
    let keyword = tokens[0];
    let args = &tokens[1..];
    match keyword {
        "BEGIN" => {
            return Err(vec![ParseDiagnostic::new(
                line,
                DiagnosticKind::MissingEnd,
                "BEGIN inside an open block",
            )])
        }
        "END" => {
            return Err(vec![ParseDiagnostic::new(
                line,
                DiagnosticKind::MissingBegin,
                "END without a matching BEGIN",
            )])
        }
        _ => {}
    }
    let Some(arity) = expected_arity(keyword) else {
        return Err(vec![ParseDiagnostic::new(
            line,
            DiagnosticKind::UnknownCommand,
            format!("unknown command `{keyword}`"),
        )]);
    };
    if args.len() != arity {
        return Err(vec![ParseDiagnostic::new(
            line,
            DiagnosticKind::ArityError,
            format!("{keyword} takes {arity} arguments, got {}", args.len()),
        )]);
    }

    let mut p = LineParser { line, keyword, args, mode, diags: Vec::new() };
    let id = args[0].to_string();
    let cmd = match keyword {
        "create_point" => {
            let (x, y) = (p.coord(1, "x"), p.coord(2, "y"));
            Command::CreatePoint { id, x, y, color: p.color(3) }
        }
        "create_line" => {
            let (x1, y1, x2, y2) = p.two_points();
            Command::CreateLine { id, x1, y1, x2, y2, color: p.color(5) }
        }
        "create_rectangle" => {
            let (x1, y1, x2, y2) = p.two_points();
            Command::CreateRectangle { id, x1, y1, x2, y2, color: p.color(5) }
        }
        "create_arrow" => {
            let (x1, y1, x2, y2) = p.two_points();
            Command::CreateArrow { id, x1, y1, x2, y2, color: p.color(5) }
        }
        "create_circle" => {
            let (cx, cy) = (p.coord(1, "cx"), p.coord(2, "cy"));
            let radius = p.radius(3);
            Command::CreateCircle { id, cx, cy, radius, color: p.color(4) }
        }
        "translate" => Command::Translate { id, dx: p.number(1, "dx"), dy: p.number(2, "dy") },
        "rotate" => {
            let angle = p.number(1, "angle");
            Command::Rotate { id, angle, cx: p.coord(2, "cx"), cy: p.coord(3, "cy") }
        }
        "delete" => Command::Delete { id },
        _ => unreachable!("arity table covers every keyword"),
    };
    if p.diags.is_empty() {
        Ok(cmd)
    } else {
        Err(p.diags)
    }
}

/// Parses the content of a single block (the text strictly between `BEGIN`
/// and `END`). Any diagnostic rejects the whole block.
pub fn parse_script(text: &str, mode: CoordMode) -> Result<Script, Vec<ParseDiagnostic>> {
    let mut commands = Vec::new();
    let mut diags = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        match parse_line(idx + 1, &tokens, mode) {
            Ok(cmd) => commands.push(cmd),
            Err(mut d) => diags.append(&mut d),
        }
    }
    if diags.is_empty() {
        Ok(Script { commands, source_span: (0, text.len()) })
    } else {
        Err(diags)
    }
}

/// Result of scanning free-form text for drawing blocks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    /// Successfully parsed blocks in source order.
    pub scripts: Vec<Script>,
    /// Diagnostics for rejected blocks, with line numbers relative to the scanned text.
    pub diagnostics: Vec<ParseDiagnostic>,
    /// Number of `BEGIN` keywords seen.
    pub begins: usize,
}

impl Extraction {
    /// True when the text attempted to draw at all.
    pub fn has_code(&self) -> bool {
        self.begins > 0
    }

    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset].iter().filter(|b| **b == b'\n').count() + 1
}

/// Scans `message` left to right; each `BEGIN` opens a block closed by the
/// next `END`. Text between blocks is ignored.
pub fn extract_blocks(message: &str, mode: CoordMode) -> Extraction {
    let mut out = Extraction::default();
    let mut open: Option<(usize, usize)> = None; // (keyword start, content start)

    for m in KEYWORD.find_iter(message) {
        match (m.as_str(), open) {
            ("BEGIN", None) => {
                out.begins += 1;
                open = Some((m.start(), m.end()));
            }
            ("BEGIN", Some((start, _))) => {
                out.begins += 1;
                out.diagnostics.push(ParseDiagnostic::new(
                    line_of(message, start),
                    DiagnosticKind::MissingEnd,
                    "BEGIN is not closed before the next BEGIN",
                ));
                open = Some((m.start(), m.end()));
            }
            ("END", Some((start, content_start))) => {
                let content = &message[content_start..m.start()];
                let base_line = line_of(message, start);
                match parse_script(content, mode) {
                    Ok(mut script) => {
                        script.source_span = (content_start, m.start());
                        out.scripts.push(script);
                    }
                    Err(diags) => out.diagnostics.extend(diags.into_iter().map(|mut d| {
                        d.line += base_line - 1;
                        d
                    })),
                }
                open = None;
            }
            _ => {} // END outside a block is prose
        }
    }
    if let Some((start, _)) = open {
        out.diagnostics.push(ParseDiagnostic::new(
            line_of(message, start),
            DiagnosticKind::MissingEnd,
            "BEGIN has no matching END",
        ));
    }
    out
}

/// Parses a standalone program file: at least one block is required.
pub fn parse_program(text: &str, mode: CoordMode) -> Result<Vec<Script>, Vec<ParseDiagnostic>> {
    let ex = extract_blocks(text, mode);
    if !ex.has_code() {
        return Err(vec![ParseDiagnostic::new(1, DiagnosticKind::MissingBegin, "no BEGIN block found")]);
    }
    if ex.diagnostics.is_empty() {
        Ok(ex.scripts)
    } else {
        Err(ex.diagnostics)
    }
}

/// Sample program: one block that creates and transforms shapes, followed
/// by a command after `END` that must be ignored.
pub const EXAMPLE_PROGRAM: &str = "BEGIN
create_point p1 0.2 0.2 red
create_line l1 0.2 0.2 0.8 0.8 blue
create_circle c1 0.5 0.5 0.1 green
create_arrow a1 0.3 0.3 0.7 0.7 purple
translate l1 0.1 0.1
rotate l1 45 0.5 0.5
END
create_rectangle r1 0.1 0.1 0.4 0.4 black
";

/// Deterministic text form used for duplicate detection.
pub fn canonicalize(script: &Script) -> String {
    script.commands.iter().map(Command::canonical).collect::<Vec<_>>().join("\n")
}

/// Canonical form of several blocks, one block per paragraph.
pub fn canonicalize_all(scripts: &[Script]) -> String {
    scripts.iter().map(canonicalize).collect::<Vec<_>>().join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;


    fn strict(text: &str) -> Result<Script, Vec<ParseDiagnostic>> {
        parse_script(text, CoordMode::Strict)
    }

    #[test]
    fn parses_single_point() {
        let s = strict("create_point p1 0.2 0.2 red").unwrap();
        assert_eq!(
            s.commands,
            vec![Command::CreatePoint { id: "p1".into(), x: 0.2, y: 0.2, color: Color::Red }]
        );
    }

    #[test]
    fn empty_block_is_empty_script() {
        assert!(strict("").unwrap().commands.is_empty());
        assert!(strict("\n   \n\t\n").unwrap().commands.is_empty());
    }

    #[test]
    fn unknown_command() {
        let d = strict("create_blob b1 0.1 0.1 red").unwrap_err();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::UnknownCommand);
        assert_eq!(d[0].line, 1);
    }

    #[test]
    fn keywords_are_case_sensitive() {
        let d = strict("Create_Point p1 0.2 0.2 red").unwrap_err();
        assert_eq!(d[0].kind, DiagnosticKind::UnknownCommand);
        let ex = extract_blocks("begin create_point p1 0.2 0.2 red end", CoordMode::Strict);
        assert!(!ex.has_code());
    }

    #[test]
    fn arity_number_and_color_errors() {
        let d = strict("create_point p1 0.2 red").unwrap_err();
        assert_eq!(d[0].kind, DiagnosticKind::ArityError);
        let d = strict("\ncreate_point p1 0.2 abc red").unwrap_err();
        assert_eq!((d[0].kind, d[0].line), (DiagnosticKind::NumberFormat, 2));
        let d = strict("create_point p1 0.2 0.2 magenta").unwrap_err();
        assert_eq!(d[0].kind, DiagnosticKind::UnknownColor);
        for bad in ["nan", "inf", "1e3", "0x1", "--1", "."] {
            let d = strict(&format!("translate p1 {bad} 0")).unwrap_err();
            assert_eq!(d[0].kind, DiagnosticKind::NumberFormat, "{bad}");
        }
    }

    #[test]
    fn number_forms() {
        let s = strict("translate p1 +.5 -3.\nrotate p1 -360 .5 1").unwrap();
        assert_eq!(s.commands[0], Command::Translate { id: "p1".into(), dx: 0.5, dy: -3.0 });
        assert_eq!(
            s.commands[1],
            Command::Rotate { id: "p1".into(), angle: -360.0, cx: 0.5, cy: 1.0 }
        );
    }

    #[test]
    fn strict_rejects_and_lenient_clamps() {
        let d = strict("create_line l1 -0.1 0.2 1.5 0.8 blue").unwrap_err();
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|d| d.kind == DiagnosticKind::CoordOutOfRange));
        let s = parse_script("create_line l1 -0.1 0.2 1.5 0.8 blue", CoordMode::Lenient).unwrap();
        assert_eq!(
            s.commands[0],
            Command::CreateLine { id: "l1".into(), x1: 0.0, y1: 0.2, x2: 1.0, y2: 0.8, color: Color::Blue }
        );
        // translation offsets are not coordinates
        assert!(strict("translate l1 -0.9 2").is_ok());
        let d = strict("create_circle c1 0.5 0.5 0 red").unwrap_err();
        assert_eq!(d[0].kind, DiagnosticKind::CoordOutOfRange);
    }

    #[test]
    fn every_bad_line_is_reported() {
        let d = strict("create_point p1 0.2 0.2 red\nfoo\ndelete\n").unwrap_err();
        let lines: Vec<_> = d.iter().map(|d| (d.line, d.kind)).collect();
        assert_eq!(
            lines,
            vec![(2, DiagnosticKind::UnknownCommand), (3, DiagnosticKind::ArityError)]
        );
    }

    #[test]
    fn example_program_ignores_trailing_rectangle() {
        let ex = extract_blocks(EXAMPLE_PROGRAM, CoordMode::Strict);
        assert!(ex.is_clean());
        assert_eq!(ex.scripts.len(), 1);
        let cmds = &ex.scripts[0].commands;
        assert_eq!(cmds.len(), 6);
        assert!(cmds.iter().all(|c| c.id() != "r1"));
        assert_eq!(cmds[5], Command::Rotate { id: "l1".into(), angle: 45.0, cx: 0.5, cy: 0.5 });
    }

    #[test]
    fn two_blocks_in_prose() {
        let text = "First I mark the peak. BEGIN\ncreate_point p1 0.2 0.2 red\nEND. \
                    Hmm, now a guide. BEGIN\ncreate_line l1 0.2 0.2 0.2 1 blue\nEND. Done.";
        let ex = extract_blocks(text, CoordMode::Strict);
        assert!(ex.is_clean());
        assert_eq!(ex.scripts.len(), 2);
        assert_eq!(ex.scripts[0].commands[0].id(), "p1");
        assert_eq!(ex.scripts[1].commands[0].id(), "l1");
        let (s, e) = ex.scripts[1].source_span;
        assert_eq!(text[s..e].trim(), "create_line l1 0.2 0.2 0.2 1 blue");
    }

    #[test]
    fn inline_block_on_one_line() {
        let ex = extract_blocks("I draw BEGIN create_point p 0.5 0.5 red END now.", CoordMode::Strict);
        assert_eq!(ex.scripts.len(), 1);
    }

    #[test]
    fn no_begin_means_no_blocks() {
        let ex = extract_blocks("The answer is 57. THE END", CoordMode::Strict);
        assert!(ex.scripts.is_empty() && ex.is_clean() && !ex.has_code());
        assert_eq!(
            parse_program("hello", CoordMode::Strict).unwrap_err()[0].kind,
            DiagnosticKind::MissingBegin
        );
    }

    #[test]
    fn missing_end_and_nested_begin() {
        let ex = extract_blocks("x\nBEGIN\ncreate_point p 0.1 0.1 red\n", CoordMode::Strict);
        assert!(ex.scripts.is_empty());
        assert_eq!(ex.diagnostics[0].kind, DiagnosticKind::MissingEnd);
        assert_eq!(ex.diagnostics[0].line, 2);

        let ex = extract_blocks(
            "BEGIN\ncreate_point p 0.1 0.1 red\nBEGIN\ndelete p\nEND",
            CoordMode::Strict,
        );
        assert_eq!(ex.scripts.len(), 1);
        assert_eq!(ex.scripts[0].commands, vec![Command::Delete { id: "p".into() }]);
        assert_eq!(ex.diagnostics.len(), 1);
        assert_eq!((ex.diagnostics[0].kind, ex.diagnostics[0].line), (DiagnosticKind::MissingEnd, 1));
    }

    #[test]
    fn block_diagnostic_lines_are_absolute() {
        let ex = extract_blocks("a\nb\nBEGIN\ncreate_point p 0.1 0.1 red\nfoo 1\nEND", CoordMode::Strict);
        assert_eq!(ex.diagnostics.len(), 1);
        assert_eq!(ex.diagnostics[0].line, 5);
    }

    #[test]
    fn canonical_formatting() {
        let s = Script::new(vec![Command::CreatePoint {
            id: "p1".into(),
            x: 0.20000,
            y: 0.2,
            color: Color::Red,
        }]);
        assert_eq!(canonicalize(&s), "create_point p1 0.200 0.200 red");
        let a = strict("  create_point   p1 0.2\t0.2 red  \n\n delete p1").unwrap();
        let b = strict("create_point p1 0.2 0.2 red\ndelete p1").unwrap();
        assert_eq!(canonicalize(&a), canonicalize(&b));
        let a = strict("create_point p1 0.2001 0.5 red").unwrap();
        let b = strict("create_point p1 0.2004 0.5 red").unwrap();
        assert_eq!(canonicalize(&a), canonicalize(&b));
        assert_eq!(fmt_num(-0.0001), "0.000");
    }
}
