//! Zhang-Suen thinning with a final pass that breaks remaining 2x2 blocks.
//!
//! Candidates of each sub-iteration are re-checked one at a time before
//! deletion, so small components (a 2x2 square, a two-pixel-thick diagonal)
//! shrink instead of vanishing.

use crate::image::BinaryMap;

/// Neighbours P2..P9, clockwise from north.
const RING: [(isize, isize); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

fn ring(m: &BinaryMap, x: usize, y: usize) -> [bool; 8] {
    let mut n = [false; 8];
    for (k, (dx, dy)) in RING.iter().enumerate() {
        n[k] = m.get_signed(x as isize + dx, y as isize + dy);
    }
    n
}

/// Pixel can go without splitting its neighbourhood or eating an end point.
fn removable(n: &[bool; 8]) -> bool {
    let b = n.iter().filter(|&&v| v).count();
    let a = (0..8).filter(|&k| !n[k] && n[(k + 1) % 8]).count();
    (2..=6).contains(&b) && a == 1
}

fn passes_subiteration(n: &[bool; 8], first: bool) -> bool {
    let [p2, _, p4, _, p6, _, p8, _] = *n;
    if first {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

/// One-pixel-thick skeleton of `mask`.
pub fn skeletonize(mask: &BinaryMap) -> BinaryMap {
    let mut m = mask.clone();
    loop {
        let mut changed = false;
        for first in [true, false] {
            let candidates: Vec<(usize, usize)> = m
                .positives()
                .filter(|&(x, y)| {
                    let n = ring(&m, x, y);
                    removable(&n) && passes_subiteration(&n, first)
                })
                .collect();
            for (x, y) in candidates {
                if removable(&ring(&m, x, y)) {
                    m.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    break_blocks(&mut m);
    m
}

/// Removes a connectivity-preserving pixel from every all-ones 2x2 block.
pub fn break_blocks(m: &mut BinaryMap) {
    loop {
        let mut changed = false;
        for y in 0..m.height.saturating_sub(1) {
            for x in 0..m.width.saturating_sub(1) {
                let block = [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)];
                if !block.iter().all(|&(bx, by)| m.get(bx, by)) {
                    continue;
                }
                let victim = block
                    .iter()
                    .copied()
                    .find(|&(bx, by)| removable(&ring(m, bx, by)));
                // A block none of whose pixels is simple still loses one; thinness wins.
                let (vx, vy) = victim.unwrap_or(block[0]);
                m.set(vx, vy, false);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_shrinks_but_survives() {
        let mut m = BinaryMap::new(4, 4);
        for (x, y) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
            m.set(x, y, true);
        }
        let s = skeletonize(&m);
        assert!(s.count() >= 1 && s.is_thin());
    }
}
