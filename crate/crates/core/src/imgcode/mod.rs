//! Byteplot image construction.
//!
//! A nibble stream is laid onto a square grid (Hilbert curve or row-major)
//! and coloured either through the 16-entry [`Palette`] or as greyscale.
//! The classic byte-level row-major greyscale byteplot is provided as a
//! baseline. [`resize_normalize`] turns any byteplot into the fixed-size
//! `[-1, 1]` tensor the networks consume.

mod archive;
mod hilbert;
mod palette;
mod resize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{bytes_to_nibbles, NibbleOrigin, NibbleStream};

pub use archive::{archive_png, is_png, read_png, write_png, ArchiveMeta};
pub use hilbert::{choose_order, hilbert_d2xy, hilbert_xy2d, HilbertOrder, MAX_ORDER};
pub use palette::{Palette, Rgb, DEFAULT_COLORS};
pub use resize::{resample_plane, resize_normalize, ModelInput};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("empty input")]
    EmptyInput,
    #[error("hilbert order {0} outside 1..={MAX_ORDER}")]
    InvalidOrder(u32),
    #[error("curve index {index} outside capacity {capacity}")]
    IndexOutOfRange { index: u64, capacity: u64 },
    #[error("coordinate ({x}, {y}) outside {side}x{side} grid")]
    CoordOutOfRange { x: u32, y: u32, side: u32 },
    #[error("{0} symbols exceed the largest supported grid")]
    TooLarge(u64),
    #[error("palette colours {0} and {1} are identical")]
    DuplicateColor(u8, u8),
    #[error("corrupt byteplot: {0}")]
    Corrupt(String),
    #[error("model resolution {0} must be a power of two >= 8")]
    InvalidResolution(usize),
    #[error("png: {0}")]
    Png(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Hilbert,
    #[serde(rename = "rowmajor")]
    RowMajor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Coloring {
    #[serde(rename = "rgb")]
    PaletteRgb,
    #[serde(rename = "greyscale")]
    Greyscale,
}

impl Layout {
    pub fn as_str(self) -> &'static str {
        match self {
            Layout::Hilbert => "hilbert",
            Layout::RowMajor => "rowmajor",
        }
    }
}

impl Coloring {
    pub fn as_str(self) -> &'static str {
        match self {
            Coloring::PaletteRgb => "rgb",
            Coloring::Greyscale => "greyscale",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Coloring::PaletteRgb => 3,
            Coloring::Greyscale => 1,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Coloring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hilbert" => Ok(Layout::Hilbert),
            "rowmajor" | "row_major" => Ok(Layout::RowMajor),
            _ => Err(format!("unknown layout `{s}` (expected hilbert|rowmajor)")),
        }
    }
}

impl FromStr for Coloring {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rgb" | "palette_rgb" => Ok(Coloring::PaletteRgb),
            "greyscale" | "grayscale" => Ok(Coloring::Greyscale),
            _ => Err(format!("unknown coloring `{s}` (expected rgb|greyscale)")),
        }
    }
}

/// A layout + colouring pair, i.e. one row of the encoding ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Encoding {
    pub layout: Layout,
    pub coloring: Coloring,
}

impl Encoding {
    pub const RGB_HILBERT: Encoding = Encoding {
        layout: Layout::Hilbert,
        coloring: Coloring::PaletteRgb,
    };
    pub const GREY_HILBERT: Encoding = Encoding {
        layout: Layout::Hilbert,
        coloring: Coloring::Greyscale,
    };
    /// Byte-level greyscale, left to right, fixed width.
    pub const GREY_ROW_MAJOR: Encoding = Encoding {
        layout: Layout::RowMajor,
        coloring: Coloring::Greyscale,
    };
}

impl Default for Encoding {
    fn default() -> Self {
        Encoding::RGB_HILBERT
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.layout, self.coloring)
    }
}

impl FromStr for Encoding {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (l, c) = s
            .split_once(':')
            .ok_or_else(|| format!("encoding `{s}` must look like layout:coloring"))?;
        Ok(Encoding {
            layout: l.parse()?,
            coloring: c.parse()?,
        })
    }
}

/// Pixel grid in row-major order, `channels` bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteplotImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
    pub layout: Layout,
    pub coloring: Coloring,
    /// Number of real (non-padding) symbols or bytes.
    pub payload_len: usize,
}

impl ByteplotImage {
    /// Side length for square images.
    pub fn side(&self) -> Option<usize> {
        (self.width == self.height).then_some(self.width)
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let off = (y * self.width + x) * self.channels;
        &self.pixels[off..off + self.channels]
    }

    /// Hilbert order of a square power-of-two image.
    pub fn hilbert_order(&self) -> Option<HilbertOrder> {
        let side = self.side()?;
        if !side.is_power_of_two() {
            return None;
        }
        HilbertOrder::new(side.trailing_zeros()).ok()
    }
}

fn square_side(layout: Layout, n_symbols: usize) -> Result<(HilbertOrder, usize), ImageError> {
    let order = choose_order(n_symbols as u64)?;
    let side = order.side() as usize;
    debug_assert!(layout == Layout::Hilbert || layout == Layout::RowMajor);
    Ok((order, side))
}

fn lay_out<const CH: usize>(
    stream: &[u8],
    layout: Layout,
    lut: &[[u8; CH]; 16],
    pad: [u8; CH],
) -> Result<(usize, Vec<u8>), ImageError> {
    if stream.is_empty() {
        return Err(ImageError::EmptyInput);
    }
    let (order, side) = square_side(layout, stream.len())?;
    let mut out = vec![0u8; side * side * CH];
    match layout {
        Layout::Hilbert => hilbert::fill_hilbert(order, stream, lut, pad, &mut out),
        Layout::RowMajor => hilbert::fill_row_major(side, stream, lut, pad, &mut out),
    }
    Ok((side, out))
}

/// Palette-coloured square byteplot. Padding cells take palette colour 0.
pub fn encode_image(
    stream: &NibbleStream,
    layout: Layout,
    palette: &Palette,
) -> Result<ByteplotImage, ImageError> {
    let (side, pixels) = lay_out(
        &stream.symbols,
        layout,
        palette.colors(),
        palette.color(0),
    )?;
    Ok(ByteplotImage {
        width: side,
        height: side,
        channels: 3,
        pixels,
        layout,
        coloring: Coloring::PaletteRgb,
        payload_len: stream.len(),
    })
}

pub(crate) const GREY_LUT: [[u8; 1]; 16] = {
    let mut t = [[0u8; 1]; 16];
    let mut i = 0;
    while i < 16 {
        t[i] = [(i * 17) as u8];
        i += 1;
    }
    t
};

/// Nibble `s` becomes intensity `17·s`, laid out on the Hilbert curve.
pub fn encode_greyscale_hilbert(stream: &NibbleStream) -> Result<ByteplotImage, ImageError> {
    let (side, pixels) = lay_out(&stream.symbols, Layout::Hilbert, &GREY_LUT, [0])?;
    Ok(ByteplotImage {
        width: side,
        height: side,
        channels: 1,
        pixels,
        layout: Layout::Hilbert,
        coloring: Coloring::Greyscale,
        payload_len: stream.len(),
    })
}

/// Classic byteplot: byte `i` becomes the intensity of pixel
/// `(i mod width, i div width)`; the last row is zero padded.
pub fn encode_greyscale_rowmajor(data: &[u8], width: usize) -> Result<ByteplotImage, ImageError> {
    if width == 0 {
        return Err(ImageError::Corrupt("row width must be at least 1".into()));
    }
    let height = data.len().div_ceil(width).max(1);
    let mut pixels = vec![0u8; width * height];
    pixels[..data.len()].copy_from_slice(data);
    Ok(ByteplotImage {
        width,
        height,
        channels: 1,
        pixels,
        layout: Layout::RowMajor,
        coloring: Coloring::Greyscale,
        payload_len: data.len(),
    })
}

/// Width heuristic for the row-major byteplot, keyed on file size.
pub fn nataraj_width(len: usize) -> usize {
    const KB: usize = 1024;
    match len {
        l if l < 10 * KB => 32,
        l if l < 30 * KB => 64,
        l if l < 60 * KB => 128,
        l if l < 100 * KB => 256,
        l if l < 200 * KB => 384,
        l if l < 500 * KB => 512,
        l if l < 1000 * KB => 768,
        _ => 1024,
    }
}

/// Inverse of [`encode_image`]: reads the first `payload_len` cells back in
/// curve order.
pub fn decode_image(img: &ByteplotImage, palette: &Palette) -> Result<NibbleStream, ImageError> {
    if img.coloring != Coloring::PaletteRgb || img.channels != 3 {
        return Err(ImageError::Corrupt("not a palette-coloured image".into()));
    }
    if img.pixels.len() != img.width * img.height * 3 {
        return Err(ImageError::Corrupt("pixel buffer size mismatch".into()));
    }
    if img.payload_len > img.width * img.height {
        return Err(ImageError::Corrupt("payload longer than grid".into()));
    }
    let position = |d: usize| -> Result<(usize, usize), ImageError> {
        match img.layout {
            Layout::Hilbert => {
                let order = img
                    .hilbert_order()
                    .ok_or_else(|| ImageError::Corrupt("hilbert image is not 2^n square".into()))?;
                let (x, y) = hilbert_d2xy(order, d as u64)?;
                Ok((x as usize, y as usize))
            }
            Layout::RowMajor => Ok((d % img.width, d / img.width)),
        }
    };
    let mut symbols = Vec::with_capacity(img.payload_len);
    for d in 0..img.payload_len {
        let (x, y) = position(d)?;
        let px = img.pixel(x, y);
        let rgb = [px[0], px[1], px[2]];
        let s = palette.symbol_of(rgb).ok_or_else(|| {
            ImageError::Corrupt(format!("pixel ({x}, {y}) colour {rgb:?} not in palette"))
        })?;
        symbols.push(s);
    }
    Ok(NibbleStream {
        symbols,
        origin: NibbleOrigin::ByteSequence,
        source_id: None,
    })
}

/// Encodes raw file bytes with the given layout/colouring pair.
///
/// `row_width` only applies to the row-major greyscale baseline and defaults
/// to [`nataraj_width`].
pub fn encode_bytes(
    data: &[u8],
    encoding: Encoding,
    palette: &Palette,
    row_width: Option<usize>,
) -> Result<ByteplotImage, ImageError> {
    if data.is_empty() {
        return Err(ImageError::EmptyInput);
    }
    match (encoding.layout, encoding.coloring) {
        (layout, Coloring::PaletteRgb) => encode_image(&bytes_to_nibbles(data), layout, palette),
        (Layout::Hilbert, Coloring::Greyscale) => encode_greyscale_hilbert(&bytes_to_nibbles(data)),
        (Layout::RowMajor, Coloring::Greyscale) => {
            encode_greyscale_rowmajor(data, row_width.unwrap_or_else(|| nataraj_width(data.len())))
        }
    }
}

/// Raw bytes straight to a network input.
pub fn prepare_model_input(
    data: &[u8],
    encoding: Encoding,
    palette: &Palette,
    resolution: usize,
) -> Result<ModelInput, ImageError> {
    let img = encode_bytes(data, encoding, palette, None)?;
    resize_normalize(&img, resolution)
}
