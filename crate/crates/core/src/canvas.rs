//! Entity state that accumulates across drawing turns.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{fmt_num, Color, Command, Script};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pt {
    pub x: f64,
    pub y: f64,
}

impl Pt {
    pub const fn new(x: f64, y: f64) -> Self {
        Pt { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Geometry {
    Point { at: Pt },
    Line { from: Pt, to: Pt },
    Circle { center: Pt, radius: f64 },
    /// Corners in order top-left, top-right, bottom-right, bottom-left at creation.
    Rect { corners: [Pt; 4] },
    Arrow { tail: Pt, head: Pt },
}

impl Geometry {
    fn map_points(&self, f: impl Fn(Pt) -> Pt) -> Geometry {
        match self {
            Geometry::Point { at } => Geometry::Point { at: f(*at) },
            Geometry::Line { from, to } => Geometry::Line { from: f(*from), to: f(*to) },
            Geometry::Circle { center, radius } => Geometry::Circle { center: f(*center), radius: *radius },
            Geometry::Rect { corners } => Geometry::Rect { corners: corners.map(&f) },
            Geometry::Arrow { tail, head } => Geometry::Arrow { tail: f(*tail), head: f(*head) },
        }
    }

    pub fn points(&self) -> Vec<Pt> {
        match self {
            Geometry::Point { at } => vec![*at],
            Geometry::Line { from, to } => vec![*from, *to],
            Geometry::Circle { center, .. } => vec![*center],
            Geometry::Rect { corners } => corners.to_vec(),
            Geometry::Arrow { tail, head } => vec![*tail, *head],
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Geometry {
        self.map_points(|p| Pt::new(snap(p.x + dx), snap(p.y + dy)))
    }

    /// Rotates about `center` by `degrees`. With y pointing down, positive
    /// angles turn clockwise on screen.
    pub fn rotated(&self, degrees: f64, center: Pt) -> Geometry {
        let (sin, cos) = sin_cos_degrees(degrees);
        self.map_points(|p| {
            let (dx, dy) = (p.x - center.x, p.y - center.y);
            Pt::new(snap(center.x + cos * dx - sin * dy), snap(center.y + sin * dx + cos * dy))
        })
    }

    fn kind(&self) -> &'static str {
        match self {
            Geometry::Point { .. } => "point",
            Geometry::Line { .. } => "line",
            Geometry::Circle { .. } => "circle",
            Geometry::Rect { .. } => "rectangle",
            Geometry::Arrow { .. } => "arrow",
        }
    }
}

/// Snaps a transformed coordinate to a 1e-12 grid so that decimal inputs
/// produce decimal outputs (`0.2 + 0.1` is stored as `0.3`).
fn snap(v: f64) -> f64 {
    const GRID: f64 = 1e12;
    let s = (v * GRID).round() / GRID;
    if s.is_finite() {
        s
    } else {
        v
    }
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90.
pub fn sin_cos_degrees(degrees: f64) -> (f64, f64) {
    let turn = degrees.rem_euclid(360.0);
    if turn == 0.0 {
        (0.0, 1.0)
    } else if turn == 90.0 {
        (1.0, 0.0)
    } else if turn == 180.0 {
        (0.0, -1.0)
    } else if turn == 270.0 {
        (-1.0, 0.0)
    } else {
        degrees.to_radians().sin_cos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub geometry: Geometry,
    pub color: Color,
    /// Index of the script (0-based, counted on the canvas) that created it.
    pub created_turn: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RenderError {
    #[error("command {index} (`{command}`) refers to unknown entity `{id}`")]
    UnknownEntity { id: String, index: usize, command: String },
    #[error("image error: {message}")]
    Image { message: String },
}

/// Ordered, id-keyed entity state. Iteration order is creation order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Canvas {
    pub entities: IndexMap<String, Entity>,
    /// Number of scripts applied so far.
    pub turn: usize,
}

impl Canvas {
    pub fn new() -> Self {
        Canvas::default()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    /// Applies a whole script atomically, returning the new canvas.
    pub fn apply(&self, script: &Script) -> Result<Canvas, RenderError> {
        let mut next = self.clone();
        for (index, cmd) in script.commands.iter().enumerate() {
            next.apply_command(cmd, index)?;
        }
        next.turn += 1;
        Ok(next)
    }

    fn apply_command(&mut self, cmd: &Command, index: usize) -> Result<(), RenderError> {
        let unknown = |id: &str| RenderError::UnknownEntity {
            id: id.to_string(),
            index,
            command: cmd.canonical(),
        };
        let new_shape = match cmd {
            Command::CreatePoint { x, y, color, .. } => {
                Some((Geometry::Point { at: Pt::new(*x, *y) }, *color))
            }
            Command::CreateLine { x1, y1, x2, y2, color, .. } => Some((
                Geometry::Line { from: Pt::new(*x1, *y1), to: Pt::new(*x2, *y2) },
                *color,
            )),
            Command::CreateCircle { cx, cy, radius, color, .. } => Some((
                Geometry::Circle { center: Pt::new(*cx, *cy), radius: *radius },
                *color,
            )),
            Command::CreateRectangle { x1, y1, x2, y2, color, .. } => Some((
                Geometry::Rect {
                    corners: [Pt::new(*x1, *y1), Pt::new(*x2, *y1), Pt::new(*x2, *y2), Pt::new(*x1, *y2)],
                },
                *color,
            )),
            Command::CreateArrow { x1, y1, x2, y2, color, .. } => Some((
                Geometry::Arrow { tail: Pt::new(*x1, *y1), head: Pt::new(*x2, *y2) },
                *color,
            )),
            _ => None,
        };

        let id = cmd.id();
        if let Some((geometry, color)) = new_shape {
            let entity = Entity { id: id.to_string(), geometry, color, created_turn: self.turn };
            // re-creating an id replaces the entity in its original slot
            self.entities.insert(id.to_string(), entity);
            return Ok(());
        }
        match cmd {
            Command::Translate { dx, dy, .. } => {
                let e = self.entities.get_mut(id).ok_or_else(|| unknown(id))?;
                e.geometry = e.geometry.translated(*dx, *dy);
            }
            Command::Rotate { angle, cx, cy, .. } => {
                let e = self.entities.get_mut(id).ok_or_else(|| unknown(id))?;
                e.geometry = e.geometry.rotated(*angle, Pt::new(*cx, *cy));
            }
            Command::Delete { .. } => {
                self.entities.shift_remove(id).ok_or_else(|| unknown(id))?;
            }
            _ => unreachable!("create commands handled above"),
        }
        Ok(())
    }

    /// One canonical line per live entity.
    pub fn signature_lines(&self) -> BTreeSet<String> {
        self.entities.values().map(signature_line).collect()
    }

    /// Sorted, newline-joined canonical description of all live entities.
    pub fn entity_signature(&self) -> String {
        self.signature_lines().into_iter().collect::<Vec<_>>().join("\n")
    }

    /// True when this canvas holds nothing that `parent` does not.
    pub fn adds_nothing_to(&self, parent: &Canvas) -> bool {
        self.signature_lines().is_subset(&parent.signature_lines())
    }
}

fn signature_line(e: &Entity) -> String {
    let coords: Vec<String> = e.geometry.points().iter().flat_map(|p| [fmt_num(p.x), fmt_num(p.y)]).collect();
    let mut line = format!("{} {} {}", e.id, e.geometry.kind(), coords.join(" "));
    if let Geometry::Circle { radius, .. } = &e.geometry {
        line.push_str(&format!(" r={}", fmt_num(*radius)));
    }
    line.push(' ');
    line.push_str(e.color.name());
    line
}

/// Free-function form of [`Canvas::apply`].
pub fn apply(canvas: &Canvas, script: &Script) -> Result<Canvas, RenderError> {
    canvas.apply(script)
}

/// Free-function form of [`Canvas::entity_signature`].
pub fn entity_signature(canvas: &Canvas) -> String {
    canvas.entity_signature()
}
