//! Independent test oracles shared by integration and acceptance tests.
//!
//! Nothing here calls into the library's rule or feature code; grids are read
//! as raw text rows.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

pub const ROWS: usize = 14;
pub const COLS: usize = 16;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/rules")
}

#[derive(Debug, Clone)]
pub struct RuleFixture {
    pub name: String,
    pub rows: Vec<String>,
    pub expected: Vec<String>,
}

/// Reads every `*.txt` fixture: an `# expect: ID,ID` (or `-`) line, then 14 rows.
pub fn load_rule_fixtures(dir: &Path) -> Vec<RuleFixture> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .expect("fixture dir")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).expect("fixture text");
            let mut lines = text.lines();
            let head = lines.next().expect("header");
            let wanted = head.strip_prefix("# expect:").expect("expect header").trim();
            let expected = if wanted == "-" {
                Vec::new()
            } else {
                wanted.split(',').map(|s| s.trim().to_string()).collect()
            };
            let rows: Vec<String> = lines.map(str::to_string).collect();
            assert_eq!(rows.len(), ROWS, "{}", p.display());
            RuleFixture {
                name: p.file_stem().unwrap().to_string_lossy().into_owned(),
                rows,
                expected,
            }
        })
        .collect()
}

fn at(rows: &[String], r: usize, c: usize) -> u8 {
    rows[r].as_bytes()[c]
}

fn blocks(ch: u8) -> bool {
    matches!(ch, b'X' | b'#' | b'T' | b'|')
}

fn feet_cell(rows: &[String], r: usize, c: usize) -> bool {
    r + 1 < ROWS && !blocks(at(rows, r, c)) && blocks(at(rows, r + 1, c))
}

/// Cells swept by a jump between two feet cells, or `None` if the jump is
/// out of range (more than 5 columns across or more than 4 rows up).
fn swept(from: (usize, usize), to: (usize, usize)) -> Option<Vec<(usize, usize)>> {
    let (r0, c0) = from;
    let (r1, c1) = to;
    let dx = c0.abs_diff(c1);
    if dx == 0 || dx > 5 {
        return None;
    }
    let step = |a: usize, b: usize| -> Vec<usize> {
        if a < b {
            (a + 1..b).collect()
        } else {
            (b + 1..a).rev().collect()
        }
    };
    let mut cells = Vec::new();
    if r1 < r0 {
        if r0 - r1 > 4 {
            return None;
        }
        // Straight up, then across at the landing height.
        for r in (r1..=r0).rev() {
            cells.push((r, c0));
        }
        for c in step(c0, c1) {
            cells.push((r1, c));
        }
    } else {
        // Across at take-off height, then straight down.
        for c in step(c0, c1) {
            cells.push((r0, c));
        }
        for r in r0..=r1 {
            cells.push((r, c1));
        }
    }
    Some(cells)
}

/// Exhaustive jump-graph search: build every edge between feet cells, then
/// grow the reachable set from column 0 to a fixpoint.
pub fn jump_graph_reachable(rows: &[String]) -> bool {
    let nodes: Vec<(usize, usize)> = (0..ROWS)
        .flat_map(|r| (0..COLS).map(move |c| (r, c)))
        .filter(|&(r, c)| feet_cell(rows, r, c))
        .collect();
    let n = nodes.len();
    let mut edge = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            if let Some(cells) = swept(nodes[i], nodes[j]) {
                edge[i][j] = cells.iter().all(|&(r, c)| !blocks(at(rows, r, c)));
            }
        }
    }
    let mut reach: Vec<bool> = nodes.iter().map(|&(_, c)| c == 0).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            if !reach[i] {
                continue;
            }
            for j in 0..n {
                if edge[i][j] && !reach[j] {
                    reach[j] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    nodes.iter().zip(&reach).any(|(&(_, c), &ok)| ok && c == COLS - 1)
}

/// Tiny deterministic generator so grid noise does not depend on the library RNG.
pub struct XorShift(pub u64);

impl XorShift {
    pub fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    pub fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next() % n as u64) as usize
    }
}

/// Terrain-like random rows: column heights plus scattered solid and open tiles.
pub fn noisy_rows(rng: &mut XorShift) -> Vec<String> {
    let symbols = b"-X#oET|";
    let mut g = vec![vec![b'-'; COLS]; ROWS];
    let mut h = 1 + rng.below(6);
    for c in 0..COLS {
        if rng.unit() < 0.3 {
            h = (h as i64 + rng.below(7) as i64 - 3).clamp(0, 11) as usize;
        }
        for r in ROWS - h..ROWS {
            g[r][c] = b'X';
        }
    }
    for _ in 0..rng.below(25) {
        let (r, c) = (rng.below(ROWS), rng.below(COLS));
        g[r][c] = symbols[rng.below(symbols.len())];
    }
    g.into_iter().map(|row| String::from_utf8(row).unwrap()).collect()
}

/// Central-difference estimate of the gradient of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative disagreement; denominators are floored at 1e-3.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}
