//! Hilbert curve index mapping.
//!
//! Orientation: the order-1 motif visits (0,0) → (0,1) → (1,1) → (1,0), with
//! coordinates given as (x, y) = (column, row). Higher orders follow the usual
//! quadrant rotate/reflect recursion.

use std::sync::OnceLock;

use super::ImageError;
use crate::par;

/// Largest supported order (a 65536 × 65536 grid).
pub const MAX_ORDER: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HilbertOrder(u32);

impl HilbertOrder {
    pub fn new(n: u32) -> Result<Self, ImageError> {
        if (1..=MAX_ORDER).contains(&n) {
            Ok(HilbertOrder(n))
        } else {
            Err(ImageError::InvalidOrder(n))
        }
    }

    pub fn n(self) -> u32 {
        self.0
    }

    pub fn side(self) -> u32 {
        1 << self.0
    }

    pub fn capacity(self) -> u64 {
        1u64 << (2 * self.0)
    }
}

#[inline]
fn rot(s: u32, x: &mut u32, y: &mut u32, rx: u32, ry: u32) {
    if ry == 0 {
        if rx == 1 {
            *x = s - 1 - *x;
            *y = s - 1 - *y;
        }
        std::mem::swap(x, y);
    }
}

#[inline]
pub(crate) fn d2xy_raw(n: u32, d: u64) -> (u32, u32) {
    let (mut x, mut y) = (0u32, 0u32);
    let mut t = d;
    let mut s = 1u32;
    for _ in 0..n {
        let rx = (1 & (t >> 1)) as u32;
        let ry = (1 & (t ^ rx as u64)) as u32;
        rot(s, &mut x, &mut y, rx, ry);
        x += s * rx;
        y += s * ry;
        t >>= 2;
        s = s.wrapping_shl(1);
    }
    (x, y)
}

#[inline]
pub(crate) fn xy2d_raw(n: u32, x: u32, y: u32) -> u64 {
    let (mut x, mut y) = (x, y);
    let mut d = 0u64;
    let side = 1u32 << n;
    let mut s = if n == 0 { 0 } else { 1u32 << (n - 1) };
    while s > 0 {
        let rx = u32::from(x & s > 0);
        let ry = u32::from(y & s > 0);
        d += (s as u64) * (s as u64) * u64::from((3 * rx) ^ ry);
        rot(side, &mut x, &mut y, rx, ry);
        s >>= 1;
    }
    d
}

/// Curve index → grid coordinate.
pub fn hilbert_d2xy(order: HilbertOrder, d: u64) -> Result<(u32, u32), ImageError> {
    if d >= order.capacity() {
        return Err(ImageError::IndexOutOfRange {
            index: d,
            capacity: order.capacity(),
        });
    }
    Ok(d2xy_raw(order.n(), d))
}

/// Grid coordinate → curve index.
pub fn hilbert_xy2d(order: HilbertOrder, x: u32, y: u32) -> Result<u64, ImageError> {
    let side = order.side();
    if x >= side || y >= side {
        return Err(ImageError::CoordOutOfRange { x, y, side });
    }
    Ok(xy2d_raw(order.n(), x, y))
}

/// Smallest order whose grid holds `n_symbols` cells.
pub fn choose_order(n_symbols: u64) -> Result<HilbertOrder, ImageError> {
    if n_symbols == 0 {
        return Err(ImageError::EmptyInput);
    }
    let mut n = 1;
    while (1u64 << (2 * n)) < n_symbols {
        n += 1;
        if n > MAX_ORDER {
            return Err(ImageError::TooLarge(n_symbols));
        }
    }
    HilbertOrder::new(n)
}

// Every aligned 16×16 block of a Hilbert grid is an isometric copy of the
// order-4 curve. Filling goes block by block: the block's isometry is found
// from three probe points and the 256 cell offsets come from a table.
const BLOCK_ORDER: u32 = 4;
const BLOCK: u32 = 1 << BLOCK_ORDER;
const BLOCK_CELLS: usize = (BLOCK * BLOCK) as usize;

type BlockTable = [(u8, u8); BLOCK_CELLS];

fn block_tables() -> &'static [BlockTable; 8] {
    static TABLES: OnceLock<[BlockTable; 8]> = OnceLock::new();
    TABLES.get_or_init(|| {
        let m = (BLOCK - 1) as u8;
        let isometries: [fn(u8, u8, u8) -> (u8, u8); 8] = [
            |x, y, _| (x, y),
            |x, y, _| (y, x),
            |x, y, m| (m - x, m - y),
            |x, y, m| (m - y, m - x),
            |x, y, m| (m - x, y),
            |x, y, m| (x, m - y),
            |x, y, m| (y, m - x),
            |x, y, m| (m - y, x),
        ];
        let mut out = [[(0u8, 0u8); BLOCK_CELLS]; 8];
        for (g, iso) in isometries.iter().enumerate() {
            for (j, cell) in out[g].iter_mut().enumerate() {
                let (x, y) = d2xy_raw(BLOCK_ORDER, j as u64);
                *cell = iso(x as u8, y as u8, m);
            }
        }
        out
    })
}

fn block_isometry(n: u32, base: u64, ox: u32, oy: u32) -> &'static BlockTable {
    let probes = [0usize, 1, BLOCK_CELLS - 1];
    let local = probes.map(|j| {
        let (x, y) = d2xy_raw(n, base + j as u64);
        ((x - ox) as u8, (y - oy) as u8)
    });
    block_tables()
        .iter()
        .find(|t| probes.iter().zip(&local).all(|(&j, &p)| t[j] == p))
        .expect("hilbert block is not an isometric copy of the base curve")
}

/// Writes `lut[stream[d]]` (or `pad` past the stream end) at the grid cell of
/// curve index `d`, for every cell of a `side × side` row-major grid with `CH`
/// bytes per cell.
pub(crate) fn fill_hilbert<const CH: usize>(
    order: HilbertOrder,
    stream: &[u8],
    lut: &[[u8; CH]; 16],
    pad: [u8; CH],
    out: &mut [u8],
) {
    let n = order.n();
    let side = order.side() as usize;
    assert_eq!(out.len(), side * side * CH, "grid buffer size mismatch");
    let cell = |d: u64| -> [u8; CH] {
        match stream.get(d as usize) {
            Some(&s) => lut[(s & 0xF) as usize],
            None => pad,
        }
    };

    if n < BLOCK_ORDER {
        for d in 0..order.capacity() {
            let (x, y) = d2xy_raw(n, d);
            let off = (y as usize * side + x as usize) * CH;
            out[off..off + CH].copy_from_slice(&cell(d));
        }
        return;
    }

    let band_len = BLOCK as usize * side * CH;
    par::for_each_chunk_mut(out, band_len, |by, band| {
        let oy = by as u32 * BLOCK;
        for bx in 0..(side as u32 / BLOCK) {
            let ox = bx * BLOCK;
            let base = xy2d_raw(n, ox, oy) & !(BLOCK_CELLS as u64 - 1);
            let table = block_isometry(n, base, ox, oy);
            let full = (base as usize + BLOCK_CELLS) <= stream.len();
            for (j, &(dx, dy)) in table.iter().enumerate() {
                let d = base + j as u64;
                let v = if full {
                    lut[(stream[d as usize] & 0xF) as usize]
                } else {
                    cell(d)
                };
                let off = (dy as usize * side + ox as usize + dx as usize) * CH;
                band[off..off + CH].copy_from_slice(&v);
            }
        }
    });
}

/// Row-major counterpart of [`fill_hilbert`] on a `width`-wide grid.
pub(crate) fn fill_row_major<const CH: usize>(
    width: usize,
    stream: &[u8],
    lut: &[[u8; CH]; 16],
    pad: [u8; CH],
    out: &mut [u8],
) {
    let row_len = width * CH;
    par::for_each_chunk_mut(out, row_len, |row, buf| {
        let start = row * width;
        for (i, px) in buf.chunks_exact_mut(CH).enumerate() {
            let v = match stream.get(start + i) {
                Some(&s) => lut[(s & 0xF) as usize],
                None => pad,
            };
            px.copy_from_slice(&v);
        }
    });
}
