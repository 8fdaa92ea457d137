//! ASCII gridworld maps.
//!
//! Maps use `#` for walls, `.` for floor, `S` for the start cell and `G` for
//! the goal cell, one row per line. The border must be walled.

use crate::error::{Error, Result};

pub const FOUR_ROOM: &str = include_str!("../assets/fourroom.txt");
pub const OPEN_ROOM: &str = include_str!("../assets/openroom.txt");

/// Names of the maps shipped with the crate.
pub const BUNDLED: [&str; 2] = ["fourroom", "openroom"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Wall,
    Floor,
    Start,
    Goal,
}

impl Cell {
    pub fn is_open(self) -> bool {
        self != Cell::Wall
    }

    fn glyph(self) -> char {
        match self {
            Cell::Wall => '#',
            Cell::Floor => '.',
            Cell::Start => 'S',
            Cell::Goal => 'G',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    /// Row-major cells.
    pub cells: Vec<Cell>,
}

impl GridSpec {
    /// Load a bundled map by name (`fourroom` or `openroom`).
    pub fn bundled(name: &str) -> Option<GridSpec> {
        let text = match name {
            "fourroom" => FOUR_ROOM,
            "openroom" => OPEN_ROOM,
            _ => return None,
        };
        Some(parse_grid_named(text, name).expect("bundled map is valid"))
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    /// Coordinates of the non-wall cells, in state-index order (row-major).
    pub fn open_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if self.cell(r, c).is_open() {
                    out.push((r, c));
                }
            }
        }
        out
    }

    pub fn find(&self, kind: Cell) -> Option<(usize, usize)> {
        let idx = self.cells.iter().position(|&c| c == kind)?;
        Some((idx / self.width, idx % self.width))
    }

    /// Render the map back to text (inverse of [`parse_grid`]).
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                s.push(self.cell(r, c).glyph());
            }
            s.push('\n');
        }
        s
    }
}

pub fn parse_grid(text: &str) -> Result<GridSpec> {
    parse_grid_named(text, "grid")
}

pub fn parse_grid_named(text: &str, name: &str) -> Result<GridSpec> {
    let lines: Vec<&str> = text.split('\n').collect();
    // tolerate a single trailing newline (and trailing blank lines)
    let end = lines.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1);
    let lines = &lines[..end];
    if lines.is_empty() {
        return Err(Error::Parse { line: 1, msg: "empty map".into() });
    }

    let width = lines[0].chars().count();
    let height = lines.len();
    let mut cells = Vec::with_capacity(width * height);
    let (mut starts, mut goals) = (0, 0);
    for (r, line) in lines.iter().enumerate() {
        let n = line.chars().count();
        if n != width {
            return Err(Error::Parse {
                line: r + 1,
                msg: format!("ragged row: expected {width} cells, found {n}"),
            });
        }
        for (c, ch) in line.chars().enumerate() {
            let cell = match ch {
                '#' => Cell::Wall,
                '.' => Cell::Floor,
                'S' => {
                    starts += 1;
                    Cell::Start
                }
                'G' => {
                    goals += 1;
                    Cell::Goal
                }
                other => {
                    return Err(Error::Parse {
                        line: r + 1,
                        msg: format!("unknown glyph {other:?} at column {}", c + 1),
                    })
                }
            };
            let border = r == 0 || c == 0 || r + 1 == height || c + 1 == width;
            if border && cell != Cell::Wall {
                return Err(Error::Parse {
                    line: r + 1,
                    msg: format!("border cell at column {} is not a wall", c + 1),
                });
            }
            cells.push(cell);
        }
    }
    if starts > 1 || goals > 1 {
        return Err(Error::Parse {
            line: 1,
            msg: format!("at most one S and one G allowed (found {starts} S, {goals} G)"),
        });
    }
    if !cells.iter().any(|c| matches!(c, Cell::Floor | Cell::Start)) {
        return Err(Error::Parse { line: 1, msg: "no floor cell".into() });
    }
    Ok(GridSpec { name: name.to_string(), width, height, cells })
}
