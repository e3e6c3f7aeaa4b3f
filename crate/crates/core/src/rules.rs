//! Hand-written conflict-resolution rules and the jump model they share with
//! the oracle annotator.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::content::{extract_features, SegmentGrid, Tile, HEIGHT, WIDTH};

/// Widest gap (in columns) a player can clear.
pub const MAX_GAP_WIDTH: u32 = 4;
/// Horizontal reach of one jump: take-off and landing columns may be this far apart,
/// which clears a run of `MAX_GAP_WIDTH` empty columns.
pub const MAX_JUMP_SPAN: usize = MAX_GAP_WIDTH as usize + 1;
/// Highest up-step of one jump, in tiles.
pub const MAX_JUMP_RISE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleId {
    #[serde(rename = "R1_MAX_GAP")]
    MaxGap,
    #[serde(rename = "R2_FLOATING_ENEMY")]
    FloatingEnemy,
    #[serde(rename = "R3_PIPE_INTEGRITY")]
    PipeIntegrity,
    #[serde(rename = "R4_BOUNDARY_GROUND")]
    BoundaryGround,
    #[serde(rename = "R5_UNREACHABLE")]
    Unreachable,
    #[serde(rename = "R6_EMBEDDED_ITEM")]
    EmbeddedItem,
}

impl RuleId {
    pub const ALL: [RuleId; 6] = [
        RuleId::MaxGap,
        RuleId::FloatingEnemy,
        RuleId::PipeIntegrity,
        RuleId::BoundaryGround,
        RuleId::Unreachable,
        RuleId::EmbeddedItem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleId::MaxGap => "R1_MAX_GAP",
            RuleId::FloatingEnemy => "R2_FLOATING_ENEMY",
            RuleId::PipeIntegrity => "R3_PIPE_INTEGRITY",
            RuleId::BoundaryGround => "R4_BOUNDARY_GROUND",
            RuleId::Unreachable => "R5_UNREACHABLE",
            RuleId::EmbeddedItem => "R6_EMBEDDED_ITEM",
        }
    }

    pub fn check(self, g: &SegmentGrid) -> bool {
        match self {
            RuleId::MaxGap => extract_features(g).max_gap_width <= MAX_GAP_WIDTH,
            RuleId::FloatingEnemy => enemies_supported(g),
            RuleId::PipeIntegrity => pipes_intact(g),
            RuleId::BoundaryGround => boundary_ground(g),
            RuleId::Unreachable => is_traversable(g),
            RuleId::EmbeddedItem => no_embedded_coins(g),
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleVerdict {
    pub pass: bool,
    pub violations: Vec<RuleId>,
}

/// Evaluates every rule; violations are listed in rule order.
pub fn rule_filter(g: &SegmentGrid) -> RuleVerdict {
    let violations: Vec<RuleId> = RuleId::ALL.into_iter().filter(|r| !r.check(g)).collect();
    RuleVerdict {
        pass: violations.is_empty(),
        violations,
    }
}

pub fn enemies_supported(g: &SegmentGrid) -> bool {
    (0..HEIGHT).all(|r| {
        (0..WIDTH).all(|c| {
            g.get(r, c) != Tile::Enemy
                || (r + 1 < HEIGHT && matches!(g.get(r + 1, c), Tile::Ground | Tile::Platform))
        })
    })
}

pub fn pipes_intact(g: &SegmentGrid) -> bool {
    for c in 0..WIDTH {
        for r in 0..HEIGHT {
            match g.get(r, c) {
                Tile::PipeTop => {
                    let mut below = r + 1;
                    while below < HEIGHT && g.get(below, c) == Tile::PipeBody {
                        below += 1;
                    }
                    if below >= HEIGHT || g.get(below, c) != Tile::Ground {
                        return false;
                    }
                }
                Tile::PipeBody => {
                    let mut above = r;
                    while above > 0 && g.get(above - 1, c) == Tile::PipeBody {
                        above -= 1;
                    }
                    if above == 0 || g.get(above - 1, c) != Tile::PipeTop {
                        return false;
                    }
                }
                _ => {}
            }
        }
    }
    true
}

pub fn boundary_ground(g: &SegmentGrid) -> bool {
    !g.is_gap_column(0) && !g.is_gap_column(WIDTH - 1)
}

pub fn no_embedded_coins(g: &SegmentGrid) -> bool {
    (0..WIDTH).all(|c| match g.ground_top(c) {
        Some(top) => (top..HEIGHT).all(|r| g.get(r, c) != Tile::Coin),
        None => true,
    })
}

#[inline]
fn passable(g: &SegmentGrid, r: usize, c: usize) -> bool {
    !g.get(r, c).is_solid()
}

/// A cell the player's feet can occupy: open, with a solid tile directly beneath.
pub fn standable(g: &SegmentGrid, r: usize, c: usize) -> bool {
    r + 1 < HEIGHT && passable(g, r, c) && g.get(r + 1, c).is_solid()
}

/// One jump from feet cell `from` to feet cell `to` under the jump model.
///
/// A rising jump climbs in the take-off column and then travels at the landing
/// row; a level or falling jump travels at the take-off row and then drops in
/// the landing column. Every cell swept on the way must be open.
pub fn can_jump(g: &SegmentGrid, from: (usize, usize), to: (usize, usize)) -> bool {
    let ((r0, c0), (r1, c1)) = (from, to);
    if c0 == c1 || c0.abs_diff(c1) > MAX_JUMP_SPAN {
        return false;
    }
    if !standable(g, r0, c0) || !standable(g, r1, c1) {
        return false;
    }
    let (lo, hi) = (c0.min(c1), c0.max(c1));
    let between = lo + 1..hi;
    if r1 < r0 {
        if r0 - r1 > MAX_JUMP_RISE {
            return false;
        }
        (r1..=r0).all(|r| passable(g, r, c0)) && between.into_iter().all(|c| passable(g, r1, c))
    } else {
        between.into_iter().all(|c| passable(g, r0, c)) && (r0..=r1).all(|r| passable(g, r, c1))
    }
}

/// Whether some standable cell in the last column is reachable from some
/// standable cell in the first column (breadth-first search).
pub fn is_traversable(g: &SegmentGrid) -> bool {
    let mut seen = [[false; WIDTH]; HEIGHT];
    let mut queue = VecDeque::new();
    for r in 0..HEIGHT {
        if standable(g, r, 0) {
            seen[r][0] = true;
            queue.push_back((r, 0));
        }
    }
    while let Some((r, c)) = queue.pop_front() {
        if c == WIDTH - 1 {
            return true;
        }
        let lo = c.saturating_sub(MAX_JUMP_SPAN);
        let hi = (c + MAX_JUMP_SPAN).min(WIDTH - 1);
        for c2 in lo..=hi {
            for r2 in 0..HEIGHT {
                if !seen[r2][c2] && can_jump(g, (r, c), (r2, c2)) {
                    seen[r2][c2] = true;
                    queue.push_back((r2, c2));
                }
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_gap(width: usize, start: usize) -> SegmentGrid {
        let mut g = SegmentGrid::flat(2);
        for c in start..start + width {
            g.fill_ground(c, 0);
        }
        g
    }

    #[test]
    fn flat_passes() {
        let v = rule_filter(&SegmentGrid::flat(2));
        assert!(v.pass);
        assert!(v.violations.is_empty());
    }

    #[test]
    fn gap_widths() {
        assert!(rule_filter(&with_gap(4, 5)).pass);
        assert_eq!(
            rule_filter(&with_gap(5, 5)).violations,
            vec![RuleId::MaxGap, RuleId::Unreachable]
        );
    }

    #[test]
    fn climbing_limits() {
        let mut g = SegmentGrid::flat(2);
        for c in 8..WIDTH {
            g.fill_ground(c, 6);
        }
        assert!(is_traversable(&g), "4-tile step is climbable");
        for c in 8..WIDTH {
            g.fill_ground(c, 7);
        }
        assert!(!is_traversable(&g), "5-tile step is not");
        g.set(9, 5, Tile::Platform);
        assert!(is_traversable(&g), "platform breaks the climb into two jumps");
    }

    #[test]
    fn drops_are_unlimited() {
        let mut g = SegmentGrid::flat(10);
        for c in 8..WIDTH {
            g.fill_ground(c, 1);
        }
        assert!(is_traversable(&g));
    }

    #[test]
    fn ceiling_blocks_rising_jump() {
        let mut g = SegmentGrid::flat(2);
        for c in 8..WIDTH {
            g.fill_ground(c, 5);
        }
        assert!(is_traversable(&g));
        // Tunnel with a one-tile ceiling: no room to rise three tiles at its end.
        for c in 1..8 {
            for r in 0..=10 {
                g.set(r, c, Tile::Ground);
            }
        }
        assert!(!is_traversable(&g));
    }

    #[test]
    fn verdict_lists_all_violations() {
        let mut g = with_gap(6, 0);
        g.set(5, 10, Tile::Enemy);
        g.set(13, 12, Tile::Coin);
        let v = rule_filter(&g);
        assert!(!v.pass);
        assert_eq!(
            v.violations,
            vec![
                RuleId::MaxGap,
                RuleId::FloatingEnemy,
                RuleId::BoundaryGround,
                RuleId::Unreachable,
                RuleId::EmbeddedItem
            ]
        );
    }

    #[test]
    fn pipe_checks() {
        let mut g = SegmentGrid::flat(2);
        g.set(10, 6, Tile::PipeTop);
        g.set(11, 6, Tile::PipeBody);
        assert!(pipes_intact(&g));
        g.set(9, 9, Tile::PipeTop); // hovering top
        assert!(!pipes_intact(&g));
        let mut orphan = SegmentGrid::flat(2);
        orphan.set(11, 3, Tile::PipeBody);
        assert!(!pipes_intact(&orphan));
    }

    #[test]
    fn rule_ids_serialise_by_name() {
        assert_eq!(serde_json::to_string(&RuleId::Unreachable).unwrap(), "\"R5_UNREACHABLE\"");
        for r in RuleId::ALL {
            assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{r}\""));
        }
    }
}
