//! Seeded random map generation: rooms connected by corridors, plus a
//! straight-corridor fixture used in tests and walkthroughs.

use crate::grid::OccupancyGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generates a rooms-and-corridors map. Rooms are rectangular, carved out
/// of solid rock, and consecutive rooms are joined by 5-cell-wide L-shaped
/// corridors so the inflated free space stays connected. Deterministic in
/// the seed.
pub fn rooms_and_corridors(width: usize, height: usize, cell_size: f64, seed: u64) -> OccupancyGrid {
    assert!(width >= 16 && height >= 16, "map too small for rooms");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = vec![true; width * height];

    let max_room = 9.min(width - 7).min(height - 7);
    let mut rooms: Vec<(usize, usize, usize, usize)> = Vec::new();
    for _ in 0..60 {
        if rooms.len() >= 6 {
            break;
        }
        let rw = rng.gen_range(5..=max_room);
        let rh = rng.gen_range(5..=max_room);
        let r0 = rng.gen_range(2..height - rh - 1);
        let c0 = rng.gen_range(2..width - rw - 1);
        let overlaps = rooms.iter().any(|&(or, oc, oh, ow)| {
            r0 <= or + oh && or <= r0 + rh && c0 <= oc + ow && oc <= c0 + rw
        });
        if overlaps {
            continue;
        }
        for r in r0..r0 + rh {
            for c in c0..c0 + rw {
                cells[r * width + c] = false;
            }
        }
        rooms.push((r0, c0, rh, rw));
    }

    let center = |room: (usize, usize, usize, usize)| (room.0 + room.2 / 2, room.1 + room.3 / 2);
    for i in 1..rooms.len() {
        let (ar, ac) = center(rooms[i - 1]);
        let (br, bc) = center(rooms[i]);
        carve_band_h(&mut cells, width, height, ar, ac, bc);
        carve_band_v(&mut cells, width, height, bc, ar, br);
    }

    OccupancyGrid::from_cells(width, height, cell_size, cells).expect("generated map valid")
}

fn carve_band_h(cells: &mut [bool], width: usize, height: usize, row: usize, c0: usize, c1: usize) {
    let (lo, hi) = if c0 <= c1 { (c0, c1) } else { (c1, c0) };
    for c in lo..=hi {
        for dr in -2i64..=2 {
            let r = row as i64 + dr;
            if r >= 1 && (r as usize) < height - 1 && c >= 1 && c < width - 1 {
                cells[r as usize * width + c] = false;
            }
        }
    }
}

fn carve_band_v(cells: &mut [bool], width: usize, height: usize, col: usize, r0: usize, r1: usize) {
    let (lo, hi) = if r0 <= r1 { (r0, r1) } else { (r1, r0) };
    for r in lo..=hi {
        for dc in -2i64..=2 {
            let c = col as i64 + dc;
            if c >= 1 && (c as usize) < width - 1 && r >= 1 && r < height - 1 {
                cells[r * width + c as usize] = false;
            }
        }
    }
}

/// A straight east-west corridor: `length` cells long, interior free band
/// three inflated-free rows tall. Handy as a fixture.
pub fn corridor(length: usize, cell_size: f64) -> OccupancyGrid {
    let height = 7;
    let mut cells = vec![true; length * height];
    for r in 1..height - 1 {
        for c in 1..length - 1 {
            cells[r * length + c] = false;
        }
    }
    OccupancyGrid::from_cells(length, height, cell_size, cells).expect("corridor valid")
}
