//! Shortest paths on the inflated grid: A* with an octile heuristic,
//! Dijkstra distance fields, and arc-length parameterization of paths for
//! waypoint extraction.
//!
//! Grid motion is 8-connected with edge costs 1 and sqrt(2) in cell
//! units. Costs are carried exactly as `a + b*sqrt(2)` with integer a and
//! b, so optimality comparisons never touch floating point.

use crate::grid::OccupancyGrid;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use thiserror::Error;

/// Counts waypoint-extraction calls; evaluation asserts it stays flat at
/// test time.
static WAYPOINT_CALLS: AtomicU64 = AtomicU64::new(0);

/// Total number of waypoint-extraction calls made so far in this process.
pub fn waypoint_call_count() -> u64 {
    WAYPOINT_CALLS.load(AtomicOrdering::Relaxed)
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no path between the requested endpoints")]
    NoPath,
    #[error("endpoint lies in blocked space")]
    BlockedEndpoint,
    #[error("waypoint count must be at least 1")]
    InvalidN,
    #[error("fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
}

/// Exact path cost `straight + diagonal * sqrt(2)` in cell units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl GridCost {
    pub const ZERO: GridCost = GridCost { straight: 0, diagonal: 0 };

    pub fn add(self, other: GridCost) -> GridCost {
        GridCost {
            straight: self.straight + other.straight,
            diagonal: self.diagonal + other.diagonal,
        }
    }

    /// Metric value, meters.
    pub fn to_meters(self, cell_size: f64) -> f64 {
        (self.straight as f64 + self.diagonal as f64 * std::f64::consts::SQRT_2) * cell_size
    }
}

impl Ord for GridCost {
    fn cmp(&self, other: &Self) -> Ordering {
        let da = self.straight as i64 - other.straight as i64;
        let db = self.diagonal as i64 - other.diagonal as i64;
        if da == 0 && db == 0 {
            return Ordering::Equal;
        }
        if da >= 0 && db >= 0 {
            return Ordering::Greater;
        }
        if da <= 0 && db <= 0 {
            return Ordering::Less;
        }
        // Mixed signs: sign of da + db*sqrt(2) from da^2 vs 2*db^2.
        // Equality is impossible for nonzero integers.
        if da > 0 {
            if da * da > 2 * db * db {
                Ordering::Greater
            } else {
                Ordering::Less
            }
        } else if 2 * db * db > da * da {
            Ordering::Greater
        } else {
            Ordering::Less
        }
    }
}

impl PartialOrd for GridCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Octile distance between two cells: the admissible A* heuristic for
/// 8-connected motion.
pub fn octile(a: (usize, usize), b: (usize, usize)) -> GridCost {
    let dr = (a.0 as i64 - b.0 as i64).unsigned_abs() as u32;
    let dc = (a.1 as i64 - b.1 as i64).unsigned_abs() as u32;
    let diag = dr.min(dc);
    GridCost {
        straight: dr.max(dc) - diag,
        diagonal: diag,
    }
}

/// The eight neighbour moves. A diagonal move is forbidden only when both
/// flanking orthogonal cells are blocked.
fn neighbours(grid: &OccupancyGrid, r: usize, c: usize) -> Vec<((usize, usize), GridCost)> {
    const MOVES: [(i64, i64); 8] = [
        (-1, 0),
        (1, 0),
        (0, -1),
        (0, 1),
        (-1, -1),
        (-1, 1),
        (1, -1),
        (1, 1),
    ];
    let mut out = Vec::with_capacity(8);
    for &(dr, dc) in &MOVES {
        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
        if grid.blocked(nr, nc) {
            continue;
        }
        let diagonal = dr != 0 && dc != 0;
        if diagonal
            && grid.blocked(r as i64 + dr, c as i64)
            && grid.blocked(r as i64, c as i64 + dc)
        {
            continue;
        }
        let edge = if diagonal {
            GridCost { straight: 0, diagonal: 1 }
        } else {
            GridCost { straight: 1, diagonal: 0 }
        };
        out.push(((nr as usize, nc as usize), edge));
    }
    out
}

/// An optimal 8-connected grid path with its metric polyline and
/// cumulative arc length.
#[derive(Debug, Clone)]
pub struct PlannedPath {
    pub cells: Vec<(usize, usize)>,
    pub points: Vec<(f64, f64)>,
    pub arc_length: Vec<f64>,
    pub total_length: f64,
    /// Exact cost in cell units.
    pub cost: GridCost,
}

impl PlannedPath {
    /// Builds the arc-length parameterization of a metric polyline.
    pub fn from_points(points: Vec<(f64, f64)>) -> Self {
        let mut arc = Vec::with_capacity(points.len());
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                let q = points[i - 1];
                total += (p.0 - q.0).hypot(p.1 - q.1);
            }
            arc.push(total);
        }
        Self {
            cells: Vec::new(),
            points,
            arc_length: arc,
            total_length: total,
            cost: GridCost::ZERO,
        }
    }

    fn from_cells(grid: &OccupancyGrid, cells: Vec<(usize, usize)>, cost: GridCost) -> Self {
        let points: Vec<(f64, f64)> = cells.iter().map(|&(r, c)| grid.cell_center(r, c)).collect();
        let mut path = Self::from_points(points);
        path.cells = cells;
        path.cost = cost;
        path
    }

    /// Point at a given arc length, linearly interpolated on the polyline.
    fn point_at_arc(&self, s: f64) -> (f64, f64) {
        let last = *self.points.last().expect("path non-empty");
        if self.total_length <= 0.0 || s >= self.total_length {
            return last;
        }
        let s = s.max(0.0);
        // First vertex with arc >= s.
        let idx = self
            .arc_length
            .partition_point(|&a| a < s)
            .min(self.points.len() - 1);
        if idx == 0 {
            return self.points[0];
        }
        let (a0, a1) = (self.arc_length[idx - 1], self.arc_length[idx]);
        let (p0, p1) = (self.points[idx - 1], self.points[idx]);
        if a1 <= a0 {
            return p1;
        }
        let lambda = (s - a0) / (a1 - a0);
        (p0.0 + lambda * (p1.0 - p0.0), p0.1 + lambda * (p1.1 - p0.1))
    }

    /// Line-delimited `x y` vertices for plotting.
    pub fn vertex_lines(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&format!("{:?} {:?}\n", p.0, p.1));
        }
        out
    }
}

/// A* shortest path between two metric points on the inflated grid.
///
/// Deterministic: expansion ties are broken by lower heuristic, then
/// row-major cell order.
pub fn astar(
    grid: &OccupancyGrid,
    start: (f64, f64),
    goal: (f64, f64),
) -> Result<PlannedPath, PlanError> {
    let start_cell = grid.cell_of(start.0, start.1).ok_or(PlanError::BlockedEndpoint)?;
    let goal_cell = grid.cell_of(goal.0, goal.1).ok_or(PlanError::BlockedEndpoint)?;
    if grid.blocked(start_cell.0 as i64, start_cell.1 as i64)
        || grid.blocked(goal_cell.0 as i64, goal_cell.1 as i64)
    {
        return Err(PlanError::BlockedEndpoint);
    }

    let width = grid.width();
    let index = |cell: (usize, usize)| cell.0 * width + cell.1;

    #[derive(PartialEq, Eq)]
    struct Entry {
        f: GridCost,
        h: GridCost,
        idx: usize,
        cell: (usize, usize),
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> Ordering {
            // BinaryHeap is a max-heap; invert for a min-heap on
            // (f, h, row-major index).
            other
                .f
                .cmp(&self.f)
                .then_with(|| other.h.cmp(&self.h))
                .then_with(|| other.idx.cmp(&self.idx))
        }
    }
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }

    let n = width * grid.height();
    let mut g: Vec<Option<GridCost>> = vec![None; n];
    let mut parent: Vec<usize> = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();

    g[index(start_cell)] = Some(GridCost::ZERO);
    heap.push(Entry {
        f: octile(start_cell, goal_cell),
        h: octile(start_cell, goal_cell),
        idx: index(start_cell),
        cell: start_cell,
    });

    while let Some(Entry { cell, .. }) = heap.pop() {
        let ci = index(cell);
        if closed[ci] {
            continue;
        }
        closed[ci] = true;
        if cell == goal_cell {
            let mut cells = vec![cell];
            let mut cur = ci;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                cells.push((cur / width, cur % width));
            }
            cells.reverse();
            let cost = g[ci].expect("goal reached");
            return Ok(PlannedPath::from_cells(grid, cells, cost));
        }
        let g_here = g[ci].expect("expanded node has cost");
        for (next, edge) in neighbours(grid, cell.0, cell.1) {
            let ni = index(next);
            if closed[ni] {
                continue;
            }
            let tentative = g_here.add(edge);
            if g[ni].map_or(true, |best| tentative < best) {
                g[ni] = Some(tentative);
                parent[ni] = ci;
                let h = octile(next, goal_cell);
                heap.push(Entry {
                    f: tentative.add(h),
                    h,
                    idx: ni,
                    cell: next,
                });
            }
        }
    }
    Err(PlanError::NoPath)
}

/// Exact geodesic distances from a source point to every free cell.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub source: (f64, f64),
    width: usize,
    height: usize,
    cell_size: f64,
    costs: Vec<Option<GridCost>>,
    meters: Vec<f64>,
}

impl DistanceField {
    /// Geodesic distance at a metric point (nearest-cell lookup, no
    /// interpolation). Unreachable or blocked points read as infinity.
    pub fn query(&self, x: f64, y: f64) -> f64 {
        if x < 0.0 || y < 0.0 {
            return f64::INFINITY;
        }
        let col = (x / self.cell_size).floor() as usize;
        let row = (y / self.cell_size).floor() as usize;
        if row >= self.height || col >= self.width {
            return f64::INFINITY;
        }
        self.meters[row * self.width + col]
    }

    /// Exact cell-unit cost for a cell, if reachable.
    pub fn cost_at(&self, row: usize, col: usize) -> Option<GridCost> {
        self.costs.get(row * self.width + col).copied().flatten()
    }
}

/// Dijkstra over the 8-connected free cells from a metric source point.
pub fn distance_field(grid: &OccupancyGrid, source: (f64, f64)) -> Result<DistanceField, PlanError> {
    let source_cell = grid.cell_of(source.0, source.1).ok_or(PlanError::BlockedEndpoint)?;
    if grid.blocked(source_cell.0 as i64, source_cell.1 as i64) {
        return Err(PlanError::BlockedEndpoint);
    }
    let width = grid.width();
    let n = width * grid.height();
    let mut costs: Vec<Option<GridCost>> = vec![None; n];
    let mut closed = vec![false; n];

    #[derive(PartialEq, Eq)]
    struct Entry {
        d: GridCost,
        idx: usize,
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> Ordering {
            other.d.cmp(&self.d).then_with(|| other.idx.cmp(&self.idx))
        }
    }
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }

    let si = source_cell.0 * width + source_cell.1;
    costs[si] = Some(GridCost::ZERO);
    let mut heap = BinaryHeap::new();
    heap.push(Entry { d: GridCost::ZERO, idx: si });

    while let Some(Entry { d, idx }) = heap.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        let cell = (idx / width, idx % width);
        for (next, edge) in neighbours(grid, cell.0, cell.1) {
            let ni = next.0 * width + next.1;
            if closed[ni] {
                continue;
            }
            let nd = d.add(edge);
            if costs[ni].map_or(true, |best| nd < best) {
                costs[ni] = Some(nd);
                heap.push(Entry { d: nd, idx: ni });
            }
        }
    }

    let meters = costs
        .iter()
        .map(|c| c.map_or(f64::INFINITY, |c| c.to_meters(grid.cell_size())))
        .collect();
    Ok(DistanceField {
        source,
        width,
        height: grid.height(),
        cell_size: grid.cell_size(),
        costs,
        meters,
    })
}

/// Points at arc lengths (k/n) * total for k = 1..=n: `n` equidistant
/// waypoints ending exactly at the path endpoint. n = 1 returns only the
/// goal.
pub fn extract_waypoints(path: &PlannedPath, n: usize) -> Result<Vec<(f64, f64)>, PlanError> {
    if n == 0 {
        return Err(PlanError::InvalidN);
    }
    WAYPOINT_CALLS.fetch_add(1, AtomicOrdering::Relaxed);
    let last = *path.points.last().expect("path non-empty");
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        if k == n {
            out.push(last);
        } else {
            let s = (k as f64 / n as f64) * path.total_length;
            out.push(path.point_at_arc(s));
        }
    }
    Ok(out)
}

/// Point at fraction `f` of the path's arc length; f = 1 is exactly the
/// goal.
pub fn point_at_fraction(path: &PlannedPath, f: f64) -> Result<(f64, f64), PlanError> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(PlanError::InvalidFraction(f));
    }
    WAYPOINT_CALLS.fetch_add(1, AtomicOrdering::Relaxed);
    if f == 1.0 {
        return Ok(*path.points.last().expect("path non-empty"));
    }
    Ok(path.point_at_arc(f * path.total_length))
}
