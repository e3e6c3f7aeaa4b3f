//! Tile-grid segment representation, its text encoding, feature extraction
//! and the scalar difficulty score used for binning.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rows in a segment. Row 0 is the top of the screen.
pub const HEIGHT: usize = 14;
/// Columns in a segment.
pub const WIDTH: usize = 16;
/// Number of cells in a segment.
pub const CELLS: usize = HEIGHT * WIDTH;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tile {
    Air,
    Ground,
    Platform,
    Coin,
    Enemy,
    PipeTop,
    PipeBody,
}

impl Tile {
    pub const ALL: [Tile; 7] = [
        Tile::Air,
        Tile::Ground,
        Tile::Platform,
        Tile::Coin,
        Tile::Enemy,
        Tile::PipeTop,
        Tile::PipeBody,
    ];

    pub fn symbol(self) -> char {
        match self {
            Tile::Air => '-',
            Tile::Ground => 'X',
            Tile::Platform => '#',
            Tile::Coin => 'o',
            Tile::Enemy => 'E',
            Tile::PipeTop => 'T',
            Tile::PipeBody => '|',
        }
    }

    pub fn from_symbol(c: char) -> Option<Tile> {
        Some(match c {
            '-' => Tile::Air,
            'X' => Tile::Ground,
            '#' => Tile::Platform,
            'o' => Tile::Coin,
            'E' => Tile::Enemy,
            'T' => Tile::PipeTop,
            '|' => Tile::PipeBody,
            _ => return None,
        })
    }

    /// Tiles a player can stand on or collide with.
    pub fn is_solid(self) -> bool {
        matches!(
            self,
            Tile::Ground | Tile::Platform | Tile::PipeTop | Tile::PipeBody
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("WrongDimensions: expected {HEIGHT} rows of {WIDTH} columns, found {detail}")]
    WrongDimensions { detail: String },
    #[error("UnknownSymbol: {ch:?} at row {row}, column {col}")]
    UnknownSymbol { row: usize, col: usize, ch: char },
}

/// One fixed-size game segment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SegmentGrid {
    cells: [[Tile; WIDTH]; HEIGHT],
}

impl Default for SegmentGrid {
    fn default() -> Self {
        Self::empty()
    }
}

impl SegmentGrid {
    /// All-air segment.
    pub fn empty() -> Self {
        SegmentGrid {
            cells: [[Tile::Air; WIDTH]; HEIGHT],
        }
    }

    /// Ground filled to `elevation` rows in every column.
    pub fn flat(elevation: usize) -> Self {
        let mut g = Self::empty();
        for c in 0..WIDTH {
            g.fill_ground(c, elevation);
        }
        g
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Tile {
        self.cells[row][col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, tile: Tile) {
        self.cells[row][col] = tile;
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Tile; WIDTH]> {
        self.cells.iter()
    }

    /// Clears column `col` and fills its bottom `elevation` rows with ground.
    pub fn fill_ground(&mut self, col: usize, elevation: usize) {
        let elevation = elevation.min(HEIGHT);
        for r in 0..HEIGHT {
            self.cells[r][col] = if r >= HEIGHT - elevation {
                Tile::Ground
            } else {
                Tile::Air
            };
        }
    }

    /// Row of the topmost ground tile in `col`, if any.
    pub fn ground_top(&self, col: usize) -> Option<usize> {
        (0..HEIGHT).find(|&r| self.cells[r][col] == Tile::Ground)
    }

    /// Rows from the bottom up to and including the topmost ground tile; 0 for a gap column.
    pub fn elevation(&self, col: usize) -> usize {
        self.ground_top(col).map_or(0, |r| HEIGHT - r)
    }

    pub fn is_gap_column(&self, col: usize) -> bool {
        self.ground_top(col).is_none()
    }

    /// Decodes a segment from its row strings.
    pub fn from_rows<S: AsRef<str>>(rows: &[S]) -> Result<Self, DecodeError> {
        if rows.len() != HEIGHT {
            return Err(DecodeError::WrongDimensions {
                detail: format!("{} rows", rows.len()),
            });
        }
        let mut g = Self::empty();
        for (r, line) in rows.iter().enumerate() {
            let line = line.as_ref();
            let n = line.chars().count();
            if n != WIDTH {
                return Err(DecodeError::WrongDimensions {
                    detail: format!("{n} columns in row {r}"),
                });
            }
            for (c, ch) in line.chars().enumerate() {
                g.cells[r][c] =
                    Tile::from_symbol(ch).ok_or(DecodeError::UnknownSymbol { row: r, col: c, ch })?;
            }
        }
        Ok(g)
    }

    /// Row strings, top to bottom.
    pub fn to_rows(&self) -> Vec<String> {
        self.cells
            .iter()
            .map(|row| row.iter().map(|t| t.symbol()).collect())
            .collect()
    }
}

/// Parses the 14-line text encoding. A single trailing LF is accepted.
pub fn decode_segment(text: &str) -> Result<SegmentGrid, DecodeError> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    let rows: Vec<&str> = body.split('\n').collect();
    SegmentGrid::from_rows(&rows)
}

/// 14 LF-terminated lines of 16 symbols.
pub fn encode_segment(grid: &SegmentGrid) -> String {
    let mut out = String::with_capacity(HEIGHT * (WIDTH + 1));
    for row in grid.rows() {
        out.extend(row.iter().map(|t| t.symbol()));
        out.push('\n');
    }
    out
}

impl fmt::Display for SegmentGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&encode_segment(self))
    }
}

impl FromStr for SegmentGrid {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_segment(s)
    }
}

impl Serialize for SegmentGrid {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SegmentGrid {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<String>::deserialize(deserializer)?;
        SegmentGrid::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Number of entries in [`ContentFeatures::to_vec`].
pub const FEATURE_COUNT: usize = 11;

/// Feature names in vector order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "gap_count",
    "max_gap_width",
    "enemy_count",
    "coin_count",
    "platform_count",
    "pipe_count",
    "elev_start",
    "elev_end",
    "max_elev_step",
    "density",
    "floating_count",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContentFeatures {
    pub gap_count: u32,
    pub max_gap_width: u32,
    pub enemy_count: u32,
    pub coin_count: u32,
    pub platform_count: u32,
    pub pipe_count: u32,
    pub elev_start: u32,
    pub elev_end: u32,
    pub max_elev_step: u32,
    pub density: f64,
    pub floating_count: u32,
}

impl ContentFeatures {
    pub fn to_vec(&self) -> [f64; FEATURE_COUNT] {
        [
            self.gap_count as f64,
            self.max_gap_width as f64,
            self.enemy_count as f64,
            self.coin_count as f64,
            self.platform_count as f64,
            self.pipe_count as f64,
            self.elev_start as f64,
            self.elev_end as f64,
            self.max_elev_step as f64,
            self.density,
            self.floating_count as f64,
        ]
    }

    /// Inverse of [`to_vec`](Self::to_vec); counts are rounded and floored at zero.
    pub fn from_vec(v: &[f64; FEATURE_COUNT]) -> Self {
        let n = |x: f64| x.round().max(0.0) as u32;
        ContentFeatures {
            gap_count: n(v[0]),
            max_gap_width: n(v[1]),
            enemy_count: n(v[2]),
            coin_count: n(v[3]),
            platform_count: n(v[4]),
            pipe_count: n(v[5]),
            elev_start: n(v[6]),
            elev_end: n(v[7]),
            max_elev_step: n(v[8]),
            density: v[9].clamp(0.0, 1.0),
            floating_count: n(v[10]),
        }
    }

    /// Enemies per column.
    pub fn enemy_density(&self) -> f64 {
        self.enemy_count as f64 / WIDTH as f64
    }
}

pub fn extract_features(grid: &SegmentGrid) -> ContentFeatures {
    let mut f = ContentFeatures::default();
    let elev: [usize; WIDTH] = std::array::from_fn(|c| grid.elevation(c));

    let mut run = 0u32;
    for &e in elev.iter().chain(std::iter::once(&1)) {
        if e == 0 {
            run += 1;
        } else if run > 0 {
            f.gap_count += 1;
            f.max_gap_width = f.max_gap_width.max(run);
            run = 0;
        }
    }

    f.elev_start = elev[0] as u32;
    f.elev_end = elev[WIDTH - 1] as u32;
    f.max_elev_step = elev
        .windows(2)
        .filter(|w| w[0] > 0 && w[1] > 0)
        .map(|w| w[0].abs_diff(w[1]) as u32)
        .max()
        .unwrap_or(0);

    let mut filled = 0u32;
    for r in 0..HEIGHT {
        for c in 0..WIDTH {
            let t = grid.get(r, c);
            if t != Tile::Air {
                filled += 1;
            }
            match t {
                Tile::Enemy => f.enemy_count += 1,
                Tile::Coin => f.coin_count += 1,
                Tile::Platform => f.platform_count += 1,
                Tile::PipeTop => f.pipe_count += 1,
                _ => {}
            }
            if matches!(t, Tile::Platform | Tile::Coin)
                && r + 1 < HEIGHT
                && grid.get(r + 1, c) == Tile::Air
                && r < HEIGHT - elev[c]
            {
                f.floating_count += 1;
            }
        }
    }
    f.density = filled as f64 / CELLS as f64;
    f
}

/// Weights of gap_count, max_gap_width, enemy_count and max_elev_step in the difficulty score.
pub const DIFFICULTY_WEIGHTS: [f64; 4] = [1.0, 0.5, 0.8, 0.3];
/// Normalisation constant of the difficulty score.
pub const DIFFICULTY_NORM: f64 = 8.0;

/// Scalar difficulty in [0, 1].
pub fn difficulty_score(f: &ContentFeatures) -> f64 {
    let [wg, ww, we, ws] = DIFFICULTY_WEIGHTS;
    let raw = wg * f.gap_count as f64
        + ww * f.max_gap_width as f64
        + we * f.enemy_count as f64
        + ws * f.max_elev_step as f64;
    (raw / DIFFICULTY_NORM).clamp(0.0, 1.0)
}

/// Number of equal-width difficulty bins.
pub const BIN_COUNT: usize = 5;

/// Difficulty bin, `floor(d * 5)` clamped to the last bin.
pub fn difficulty_bin(d: f64) -> usize {
    ((d * BIN_COUNT as f64).floor().max(0.0) as usize).min(BIN_COUNT - 1)
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid band {0:?}: expected lo:hi with lo <= hi")]
pub struct BandError(pub String);

impl Band {
    pub fn new(lo: f64, hi: f64) -> Result<Self, BandError> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(BandError(format!("{lo}:{hi}")));
        }
        Ok(Band { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

impl FromStr for Band {
    type Err = BandError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lo, hi) = s.split_once(':').ok_or_else(|| BandError(s.to_string()))?;
        let lo: f64 = lo.trim().parse().map_err(|_| BandError(s.to_string()))?;
        let hi: f64 = hi.trim().parse().map_err(|_| BandError(s.to_string()))?;
        Band::new(lo, hi)
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.lo, self.hi)
    }
}

/// Per-segment target bands. An absent band leaves that quantity unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlParams {
    pub enemy_density: Option<Band>,
    pub gap_frequency: Option<Band>,
    pub difficulty: Option<Band>,
}

impl ControlParams {
    pub fn is_unconstrained(&self) -> bool {
        self.enemy_density.is_none() && self.gap_frequency.is_none() && self.difficulty.is_none()
    }
}

/// True iff every present band contains its derived quantity.
pub fn matches_control(f: &ContentFeatures, c: &ControlParams) -> bool {
    let within = |band: &Option<Band>, x: f64| band.as_ref().is_none_or(|b| b.contains(x));
    within(&c.enemy_density, f.enemy_density())
        && within(&c.gap_frequency, f.gap_count as f64)
        && within(&c.difficulty, difficulty_score(f))
}
