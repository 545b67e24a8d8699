//! Occupancy-grid world model: map-file parsing, agent-radius inflation,
//! and the ray/segment traversal queries shared by sensing and collision
//! checks.
//!
//! Map files are UTF-8 text. Line 1 is a header `cellsize <meters>`;
//! each following line is one row, `#` for occupied and `.` for free.
//! Boundary cells are forced occupied on load so the world is closed.

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Metric edge length of one grid cell, in meters.
pub const DEFAULT_CELL_SIZE: f64 = 0.1;
/// Agent radius used to inflate occupancy, in meters.
pub const DEFAULT_INFLATION_RADIUS: f64 = 0.1;

/// Errors raised while parsing a map file.
#[derive(Debug, Error)]
pub enum MalformedMap {
    #[error("missing `cellsize <meters>` header line")]
    MissingHeader,
    #[error("bad cell size {0:?}")]
    BadCellSize(String),
    #[error("ragged row {row}: expected {expected} cells, got {got}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("unknown glyph {glyph:?} at row {row}, col {col}")]
    UnknownGlyph { glyph: char, row: usize, col: usize },
    #[error("map must be at least 3x3 cells, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
}

/// A metric 2D world of square cells, row-major with row 0 at y = 0.
///
/// Two views are kept: the raw occupancy (what sensors see) and the
/// inflated view (what the agent's center may occupy). A cell is blocked
/// in the inflated view iff some occupied cell center lies within
/// `inflation_radius` of its center. The inflated mask is derived from the
/// raw occupancy, so recomputing it is idempotent.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    cell_size: f64,
    inflation_radius: f64,
    cells: Vec<bool>,
    blocked: Vec<bool>,
}

impl OccupancyGrid {
    /// Builds a grid from raw occupancy, closing the boundary and
    /// computing the inflated view.
    pub fn from_cells(
        width: usize,
        height: usize,
        cell_size: f64,
        mut cells: Vec<bool>,
    ) -> Result<Self, MalformedMap> {
        if width < 3 || height < 3 {
            return Err(MalformedMap::TooSmall { width, height });
        }
        assert_eq!(cells.len(), width * height, "occupancy length mismatch");
        for c in 0..width {
            cells[c] = true;
            cells[(height - 1) * width + c] = true;
        }
        for r in 0..height {
            cells[r * width] = true;
            cells[r * width + width - 1] = true;
        }
        let mut grid = Self {
            width,
            height,
            cell_size,
            inflation_radius: DEFAULT_INFLATION_RADIUS,
            cells,
            blocked: Vec::new(),
        };
        grid.recompute_inflation();
        Ok(grid)
    }

    /// Parses a map file (see module docs for the format).
    pub fn parse(text: &str) -> Result<Self, MalformedMap> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(MalformedMap::MissingHeader)?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("cellsize") {
            return Err(MalformedMap::MissingHeader);
        }
        let raw = parts.next().ok_or(MalformedMap::MissingHeader)?;
        let cell_size: f64 = raw
            .parse()
            .map_err(|_| MalformedMap::BadCellSize(raw.to_string()))?;
        if !cell_size.is_finite() || cell_size <= 0.0 {
            return Err(MalformedMap::BadCellSize(raw.to_string()));
        }

        let mut width = 0;
        let mut rows: Vec<Vec<bool>> = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let row_idx = rows.len();
            let mut row = Vec::new();
            for (col, glyph) in line.chars().enumerate() {
                match glyph {
                    '#' => row.push(true),
                    '.' => row.push(false),
                    _ => {
                        return Err(MalformedMap::UnknownGlyph {
                            glyph,
                            row: row_idx,
                            col,
                        })
                    }
                }
            }
            if rows.is_empty() {
                width = row.len();
            } else if row.len() != width {
                return Err(MalformedMap::RaggedRow {
                    row: row_idx,
                    expected: width,
                    got: row.len(),
                });
            }
            rows.push(row);
        }
        let height = rows.len();
        if width < 3 || height < 3 {
            return Err(MalformedMap::TooSmall { width, height });
        }
        let cells = rows.into_iter().flatten().collect();
        Self::from_cells(width, height, cell_size, cells)
    }

    /// Recomputes the inflated view from the raw occupancy. Calling this
    /// again never changes the mask.
    pub fn recompute_inflation(&mut self) {
        let mut offsets = Vec::new();
        let reach = (self.inflation_radius / self.cell_size).floor() as i64 + 1;
        let r2 = self.inflation_radius * self.inflation_radius;
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let d2 = (dr as f64 * self.cell_size).powi(2)
                    + (dc as f64 * self.cell_size).powi(2);
                if d2 <= r2 {
                    offsets.push((dr, dc));
                }
            }
        }
        let mut blocked = vec![false; self.cells.len()];
        for r in 0..self.height {
            for c in 0..self.width {
                if !self.cells[r * self.width + c] {
                    continue;
                }
                for &(dr, dc) in &offsets {
                    let rr = r as i64 + dr;
                    let cc = c as i64 + dc;
                    if rr >= 0 && cc >= 0 && (rr as usize) < self.height && (cc as usize) < self.width
                    {
                        blocked[rr as usize * self.width + cc as usize] = true;
                    }
                }
            }
        }
        self.blocked = blocked;
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn inflation_radius(&self) -> f64 {
        self.inflation_radius
    }

    /// World extent along x, in meters.
    pub fn width_m(&self) -> f64 {
        self.width as f64 * self.cell_size
    }

    /// World extent along y, in meters.
    pub fn height_m(&self) -> f64 {
        self.height as f64 * self.cell_size
    }

    /// Raw occupancy; out-of-bounds counts as occupied.
    pub fn occupied(&self, row: i64, col: i64) -> bool {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            return true;
        }
        self.cells[row as usize * self.width + col as usize]
    }

    /// Inflated view; out-of-bounds counts as blocked.
    pub fn blocked(&self, row: i64, col: i64) -> bool {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            return true;
        }
        self.blocked[row as usize * self.width + col as usize]
    }

    /// Cell containing a metric point; points outside the map get None.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let col = (x / self.cell_size).floor() as usize;
        let row = (y / self.cell_size).floor() as usize;
        if row >= self.height || col >= self.width {
            return None;
        }
        Some((row, col))
    }

    /// Metric center of a cell.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) * self.cell_size,
            (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// True when the metric point sits in a blocked (inflated) cell.
    pub fn point_blocked(&self, x: f64, y: f64) -> bool {
        match self.cell_of(x, y) {
            Some((r, c)) => self.blocked[r * self.width + c],
            None => true,
        }
    }

    /// True when the metric point sits in a raw-occupied cell.
    pub fn point_occupied(&self, x: f64, y: f64) -> bool {
        match self.cell_of(x, y) {
            Some((r, c)) => self.cells[r * self.width + c],
            None => true,
        }
    }

    /// All cells that are free in the inflated view.
    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if !self.blocked[r * self.width + c] {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Distance to the first raw-occupied cell along a ray, capped at
    /// `max_t`. `None` means no hit within the cap.
    pub fn raycast_occupied(&self, origin: (f64, f64), dir: (f64, f64), max_t: f64) -> Option<f64> {
        self.traverse(origin, dir, max_t, |r, c| self.occupied(r, c))
    }

    /// Distance to the first blocked (inflated) cell along a ray.
    pub fn raycast_blocked(&self, origin: (f64, f64), dir: (f64, f64), max_t: f64) -> Option<f64> {
        self.traverse(origin, dir, max_t, |r, c| self.blocked(r, c))
    }

    /// True when the straight segment from `from` to `to` crosses a
    /// blocked cell of the inflated view.
    pub fn segment_blocked(&self, from: (f64, f64), to: (f64, f64)) -> bool {
        let dx = to.0 - from.0;
        let dy = to.1 - from.1;
        let len = dx.hypot(dy);
        if len == 0.0 {
            return self.point_blocked(from.0, from.1);
        }
        self.raycast_blocked(from, (dx / len, dy / len), len).is_some()
    }

    /// Voxel traversal (Amanatides & Woo). Returns the parametric distance
    /// at which the ray first enters a cell satisfying `is_solid`, or 0.0
    /// if the origin cell itself is solid.
    fn traverse<F: Fn(i64, i64) -> bool>(
        &self,
        origin: (f64, f64),
        dir: (f64, f64),
        max_t: f64,
        is_solid: F,
    ) -> Option<f64> {
        let cs = self.cell_size;
        let mut col = (origin.0 / cs).floor() as i64;
        let mut row = (origin.1 / cs).floor() as i64;
        if is_solid(row, col) {
            return Some(0.0);
        }
        let step_c: i64 = if dir.0 > 0.0 { 1 } else { -1 };
        let step_r: i64 = if dir.1 > 0.0 { 1 } else { -1 };
        let mut t_max_x = if dir.0 != 0.0 {
            let next = if dir.0 > 0.0 {
                (col + 1) as f64 * cs
            } else {
                col as f64 * cs
            };
            (next - origin.0) / dir.0
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if dir.1 != 0.0 {
            let next = if dir.1 > 0.0 {
                (row + 1) as f64 * cs
            } else {
                row as f64 * cs
            };
            (next - origin.1) / dir.1
        } else {
            f64::INFINITY
        };
        let t_delta_x = if dir.0 != 0.0 {
            cs / dir.0.abs()
        } else {
            f64::INFINITY
        };
        let t_delta_y = if dir.1 != 0.0 {
            cs / dir.1.abs()
        } else {
            f64::INFINITY
        };

        loop {
            let t_entry;
            if t_max_x < t_max_y {
                t_entry = t_max_x;
                t_max_x += t_delta_x;
                col += step_c;
            } else {
                t_entry = t_max_y;
                t_max_y += t_delta_y;
                row += step_r;
            }
            if t_entry > max_t {
                return None;
            }
            if is_solid(row, col) {
                return Some(t_entry);
            }
        }
    }

    /// Canonical text form of the raw occupancy (header plus glyph rows);
    /// the map hash is taken over these bytes.
    pub fn canonical_text(&self) -> String {
        let mut out = format!("cellsize {:?}\n", self.cell_size);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(if self.cells[r * self.width + c] { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical text, lowercase hex.
    pub fn map_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_is_closed_on_parse() {
        let grid = OccupancyGrid::parse("cellsize 0.1\n...\n...\n...\n").unwrap();
        let occupied = (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .filter(|&(r, c)| grid.occupied(r, c))
            .count();
        assert_eq!(occupied, 8);
        assert!(!grid.occupied(1, 1));
    }

    #[test]
    fn header_cell_size_parsed() {
        let grid = OccupancyGrid::parse("cellsize 0.1\n...\n...\n...\n").unwrap();
        assert_eq!(grid.cell_size(), 0.1);
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = OccupancyGrid::parse("cellsize 0.1\n.....\n....\n.....\n").unwrap_err();
        assert!(matches!(err, MalformedMap::RaggedRow { .. }));
    }

    #[test]
    fn unknown_glyph_rejected() {
        let err = OccupancyGrid::parse("cellsize 0.1\n...\n.x.\n...\n").unwrap_err();
        assert!(matches!(err, MalformedMap::UnknownGlyph { glyph: 'x', .. }));
    }

    #[test]
    fn missing_header_rejected() {
        let err = OccupancyGrid::parse("...\n...\n...\n").unwrap_err();
        assert!(matches!(err, MalformedMap::MissingHeader));
    }

    #[test]
    fn inflation_blocks_four_neighbours_and_is_idempotent() {
        // 7x7 with a single interior obstacle at (3, 3).
        let text = "cellsize 0.1\n.......\n.......\n.......\n...#...\n.......\n.......\n.......\n";
        let mut grid = OccupancyGrid::parse(text).unwrap();
        assert!(grid.blocked(3, 3));
        assert!(grid.blocked(2, 3));
        assert!(grid.blocked(4, 3));
        assert!(grid.blocked(3, 2));
        assert!(grid.blocked(3, 4));
        // Diagonal neighbours are sqrt(2) * 0.1 away: outside the radius.
        assert!(!grid.blocked(2, 2));
        assert!(!grid.blocked(4, 4));

        let before = grid.clone();
        grid.recompute_inflation();
        assert_eq!(before.blocked, grid.blocked);
    }

    #[test]
    fn raycast_hits_wall_at_expected_distance() {
        // 40x5 corridor; the agent looks straight down +x at the far wall.
        let mut rows = String::from("cellsize 0.1\n");
        for r in 0..5 {
            let row: String = (0..40)
                .map(|c| if r == 0 || r == 4 || c == 0 || c == 39 { '#' } else { '.' })
                .collect();
            rows.push_str(&row);
            rows.push('\n');
        }
        let grid = OccupancyGrid::parse(&rows).unwrap();
        let t = grid
            .raycast_occupied((0.15, 0.25), (1.0, 0.0), 10.0)
            .unwrap();
        // Far wall cells start at x = 3.9.
        assert!((t - 3.75).abs() < 1e-12);
        assert!(grid
            .raycast_occupied((0.15, 0.25), (1.0, 0.0), 1.0)
            .is_none());
    }

    #[test]
    fn segment_blocked_detects_wall_crossings() {
        // 9x9 with an interior obstacle at (4, 4).
        let mut text = String::from("cellsize 0.1\n");
        for r in 0..9 {
            let row: String = (0..9).map(|c| if r == 4 && c == 4 { '#' } else { '.' }).collect();
            text.push_str(&row);
            text.push('\n');
        }
        let grid = OccupancyGrid::parse(&text).unwrap();
        // Straight through the inflated obstacle row.
        assert!(grid.segment_blocked((0.25, 0.45), (0.65, 0.45)));
        // Parallel segment two rows away stays clear.
        assert!(!grid.segment_blocked((0.25, 0.25), (0.65, 0.25)));
    }

    #[test]
    fn map_hash_tracks_content() {
        let a = OccupancyGrid::parse("cellsize 0.1\n...\n...\n...\n").unwrap();
        let b = OccupancyGrid::parse("cellsize 0.1\n...\n...\n...\n").unwrap();
        let c = OccupancyGrid::parse("cellsize 0.2\n...\n...\n...\n").unwrap();
        assert_eq!(a.map_hash(), b.map_hash());
        assert_ne!(a.map_hash(), c.map_hash());
    }
}
