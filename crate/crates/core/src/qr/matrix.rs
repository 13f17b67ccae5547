//! Module placement: function patterns, zigzag codeword order, masking.

use alloc::vec;
use alloc::vec::Vec;

use super::{EccLevel, format_word, side_for_version, version_word};

struct Grid {
    side: usize,
    dark: Vec<bool>,
    function: Vec<bool>,
}

impl Grid {
    fn new(version: u8) -> Self {
        let side = side_for_version(version);
        Grid {
            side,
            dark: vec![false; side * side],
            function: vec![false; side * side],
        }
    }

    fn set_function(&mut self, x: usize, y: usize, dark: bool) {
        let i = y * self.side + x;
        self.dark[i] = dark;
        self.function[i] = true;
    }

    fn is_function(&self, x: usize, y: usize) -> bool {
        self.function[y * self.side + x]
    }
}

fn alignment_positions(version: u8) -> Vec<usize> {
    if version == 1 {
        return Vec::new();
    }
    let v = version as usize;
    let side = side_for_version(version);
    let count = v / 7 + 2;
    let step = (v * 8 + count * 3 + 5) / (count * 4 - 4) * 2;
    let mut result: Vec<usize> = (0..count - 1).map(|i| side - 7 - i * step).collect();
    result.push(6);
    result.reverse();
    result
}

fn draw_finder(grid: &mut Grid, cx: isize, cy: isize) {
    let side = grid.side as isize;
    for dy in -4..=4isize {
        for dx in -4..=4isize {
            let (x, y) = (cx + dx, cy + dy);
            if (0..side).contains(&x) && (0..side).contains(&y) {
                let dist = dx.abs().max(dy.abs());
                grid.set_function(x as usize, y as usize, dist != 2 && dist != 4);
            }
        }
    }
}

fn draw_format(grid: &mut Grid, word: u16) {
    let bit = |i: usize| word >> i & 1 == 1;
    let side = grid.side;
    for i in 0..6 {
        grid.set_function(8, i, bit(i));
    }
    grid.set_function(8, 7, bit(6));
    grid.set_function(8, 8, bit(7));
    grid.set_function(7, 8, bit(8));
    for i in 9..15 {
        grid.set_function(14 - i, 8, bit(i));
    }
    for i in 0..8 {
        grid.set_function(side - 1 - i, 8, bit(i));
    }
    for i in 8..15 {
        grid.set_function(8, side - 15 + i, bit(i));
    }
    grid.set_function(8, side - 8, true);
}

fn draw_function_patterns(grid: &mut Grid, version: u8) {
    let side = grid.side;
    for i in 0..side {
        grid.set_function(6, i, i % 2 == 0);
        grid.set_function(i, 6, i % 2 == 0);
    }
    draw_finder(grid, 3, 3);
    draw_finder(grid, side as isize - 4, 3);
    draw_finder(grid, 3, side as isize - 4);

    let positions = alignment_positions(version);
    let last = positions.len().saturating_sub(1);
    for (i, &ay) in positions.iter().enumerate() {
        for (j, &ax) in positions.iter().enumerate() {
            let corner = (i == 0 && j == 0) || (i == 0 && j == last) || (i == last && j == 0);
            if corner {
                continue;
            }
            for dy in -2..=2isize {
                for dx in -2..=2isize {
                    let dist = dx.abs().max(dy.abs());
                    grid.set_function(
                        (ax as isize + dx) as usize,
                        (ay as isize + dy) as usize,
                        dist != 1,
                    );
                }
            }
        }
    }

    // Placeholder format bits reserve the area; real bits come with the mask.
    draw_format(grid, 0);

    if version >= 7 {
        let word = version_word(version);
        for i in 0..18 {
            let dark = word >> i & 1 == 1;
            let a = side - 11 + i % 3;
            let b = i / 3;
            grid.set_function(a, b, dark);
            grid.set_function(b, a, dark);
        }
    }
}

/// Function-pattern map for a version, row-major.
pub fn function_modules(version: u8) -> Vec<bool> {
    let mut grid = Grid::new(version);
    draw_function_patterns(&mut grid, version);
    grid.function
}

/// Non-function modules in zigzag placement order.
fn placement_order(grid: &Grid) -> Vec<(usize, usize)> {
    let side = grid.side;
    let mut order = Vec::new();
    let mut right = side as isize - 1;
    while right >= 1 {
        if right == 6 {
            right = 5;
        }
        let upward = (right + 1) & 2 == 0;
        for vert in 0..side {
            let y = if upward { side - 1 - vert } else { vert };
            for j in 0..2 {
                let x = right as usize - j;
                if !grid.is_function(x, y) {
                    order.push((x, y));
                }
            }
        }
        right -= 2;
    }
    order
}

/// `(x, y)` of the eight modules of each codeword, most significant bit
/// first, in final interleaved codeword order.
pub fn codeword_positions(version: u8) -> Vec<[(usize, usize); 8]> {
    let mut grid = Grid::new(version);
    draw_function_patterns(&mut grid, version);
    placement_order(&grid)
        .chunks_exact(8)
        .map(|c| core::array::from_fn(|i| c[i]))
        .collect()
}

fn mask_applies(mask: u8, x: usize, y: usize) -> bool {
    match mask {
        0 => (x + y).is_multiple_of(2),
        1 => y.is_multiple_of(2),
        2 => x.is_multiple_of(3),
        3 => (x + y).is_multiple_of(3),
        4 => (x / 3 + y / 2).is_multiple_of(2),
        5 => x * y % 2 + x * y % 3 == 0,
        6 => (x * y % 2 + x * y % 3).is_multiple_of(2),
        7 => ((x + y) % 2 + x * y % 3).is_multiple_of(2),
        _ => unreachable!("mask ids are 0-7"),
    }
}

fn apply_mask(grid: &mut Grid, mask: u8) {
    let side = grid.side;
    for y in 0..side {
        for x in 0..side {
            if !grid.is_function(x, y) && mask_applies(mask, x, y) {
                grid.dark[y * side + x] ^= true;
            }
        }
    }
}

const PENALTY_RUN: u32 = 3;
const PENALTY_BOX: u32 = 3;
const PENALTY_FINDER: u32 = 40;
const PENALTY_BALANCE: u32 = 10;

fn line_penalty(line: &[bool]) -> u32 {
    let mut score = 0;
    let mut run = 1;
    for i in 1..=line.len() {
        if i < line.len() && line[i] == line[i - 1] {
            run += 1;
            continue;
        }
        if run >= 5 {
            score += PENALTY_RUN + (run - 5) as u32;
        }
        run = 1;
    }
    // 1:1:3:1:1 finder-like runs with four light modules on one side; the
    // symbol border counts as light.
    const CORE: [bool; 7] = [true, false, true, true, true, false, true];
    let n = line.len() as isize;
    let at = |i: isize| i >= 0 && i < n && line[i as usize];
    for start in -4..n {
        if (0..7).all(|k| at(start + k) == CORE[k as usize]) {
            if (1..=4).all(|k| !at(start - k)) {
                score += PENALTY_FINDER;
            }
            if (7..11).all(|k| !at(start + k)) {
                score += PENALTY_FINDER;
            }
        }
    }
    score
}

fn penalty(grid: &Grid) -> u32 {
    let side = grid.side;
    let mut score = 0;
    let mut column = vec![false; side];
    for i in 0..side {
        score += line_penalty(&grid.dark[i * side..(i + 1) * side]);
        for (y, cell) in column.iter_mut().enumerate() {
            *cell = grid.dark[y * side + i];
        }
        score += line_penalty(&column);
    }
    for y in 0..side - 1 {
        for x in 0..side - 1 {
            let c = grid.dark[y * side + x];
            if c == grid.dark[y * side + x + 1]
                && c == grid.dark[(y + 1) * side + x]
                && c == grid.dark[(y + 1) * side + x + 1]
            {
                score += PENALTY_BOX;
            }
        }
    }
    let dark = grid.dark.iter().filter(|&&d| d).count() as i64;
    let total = (side * side) as i64;
    let k = ((dark * 20 - total * 10).abs() + total - 1) / total - 1;
    score + k as u32 * PENALTY_BALANCE
}

/// Lays out `codewords` and returns the chosen mask and the final modules.
pub(super) fn build(version: u8, level: EccLevel, codewords: &[u8], mask: Option<u8>) -> (u8, Vec<bool>) {
    let mut grid = Grid::new(version);
    draw_function_patterns(&mut grid, version);
    let order = placement_order(&grid);
    for (bit_index, &(x, y)) in order.iter().enumerate().take(codewords.len() * 8) {
        let byte = codewords[bit_index / 8];
        grid.dark[y * grid.side + x] = byte >> (7 - bit_index % 8) & 1 == 1;
    }

    let choose = |m: u8| {
        let mut candidate = Grid {
            side: grid.side,
            dark: grid.dark.clone(),
            function: grid.function.clone(),
        };
        apply_mask(&mut candidate, m);
        draw_format(&mut candidate, format_word(level, m));
        candidate
    };
    let (mask_id, best) = match mask {
        Some(m) => (m, choose(m)),
        None => (0..8u8)
            .map(|m| (m, choose(m)))
            .min_by_key(|(_, g)| penalty(g))
            .expect("eight masks"),
    };
    (mask_id, best.dark)
}
