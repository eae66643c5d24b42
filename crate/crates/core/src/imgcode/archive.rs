//! Lossless PNG archival of byteplots.
//!
//! Palette images are stored as 8-bit indexed PNGs whose PLTE chunk is the
//! palette, greyscale images as 8-bit grey. Image metadata travels in a
//! `tEXt` chunk keyed `hilbyte` so a PNG can be decoded without the manifest.

use std::io::Cursor;

use serde::{Deserialize, Serialize};

use super::{
    bytes_to_nibbles, choose_order, hilbert, nataraj_width, ByteplotImage, Coloring, Encoding,
    ImageError, Layout, Palette, GREY_LUT,
};

const META_KEY: &str = "hilbyte";

/// Sidecar record describing an archived image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub payload_len: usize,
    pub layout: Layout,
    pub coloring: Coloring,
    pub order: Option<u32>,
    pub width: usize,
    pub height: usize,
    pub source_sha256: Option<String>,
}

impl ArchiveMeta {
    pub fn for_image(img: &ByteplotImage, source_sha256: Option<&str>) -> Self {
        ArchiveMeta {
            payload_len: img.payload_len,
            layout: img.layout,
            coloring: img.coloring,
            order: match img.layout {
                Layout::Hilbert => img.hilbert_order().map(|o| o.n()),
                Layout::RowMajor => None,
            },
            width: img.width,
            height: img.height,
            source_sha256: source_sha256.map(str::to_owned),
        }
    }

    /// Conventional archive file name: `<sha256>.<layout>.<coloring>.png`.
    pub fn file_name(&self) -> Option<String> {
        self.source_sha256
            .as_ref()
            .map(|sha| format!("{sha}.{}.{}.png", self.layout, self.coloring))
    }
}

fn png_err(e: impl std::fmt::Display) -> ImageError {
    ImageError::Png(e.to_string())
}

fn encode_png(
    meta: &ArchiveMeta,
    plte: Option<Vec<u8>>,
    data: &[u8],
) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::with_capacity(data.len() / 2 + 1024);
    {
        let mut enc = png::Encoder::new(&mut out, meta.width as u32, meta.height as u32);
        match plte {
            Some(p) => {
                enc.set_color(png::ColorType::Indexed);
                enc.set_palette(p);
            }
            None => enc.set_color(png::ColorType::Grayscale),
        }
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        enc.set_filter(png::FilterType::NoFilter);
        enc.set_adaptive_filter(png::AdaptiveFilterType::NonAdaptive);
        let text = serde_json::to_string(meta).map_err(png_err)?;
        enc.add_text_chunk(META_KEY.to_string(), text)
            .map_err(png_err)?;
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(data).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

/// Serialises an in-memory byteplot.
pub fn write_png(
    img: &ByteplotImage,
    palette: &Palette,
    source_sha256: Option<&str>,
) -> Result<Vec<u8>, ImageError> {
    let meta = ArchiveMeta::for_image(img, source_sha256);
    match img.coloring {
        Coloring::PaletteRgb => {
            let idx = img
                .pixels
                .chunks_exact(3)
                .map(|p| {
                    palette
                        .symbol_of([p[0], p[1], p[2]])
                        .ok_or_else(|| ImageError::Corrupt(format!("colour {p:?} not in palette")))
                })
                .collect::<Result<Vec<u8>, _>>()?;
            encode_png(&meta, Some(palette.plte_bytes()), &idx)
        }
        Coloring::Greyscale => encode_png(&meta, None, &img.pixels),
    }
}

/// Raw file bytes straight to PNG bytes without materialising RGB pixels.
///
/// Produces exactly the bytes of `write_png(encode_bytes(..))`.
pub fn archive_png(
    data: &[u8],
    encoding: Encoding,
    palette: &Palette,
    row_width: Option<usize>,
    source_sha256: Option<&str>,
) -> Result<Vec<u8>, ImageError> {
    if data.is_empty() {
        return Err(ImageError::EmptyInput);
    }
    if encoding == Encoding::GREY_ROW_MAJOR {
        let img = super::encode_greyscale_rowmajor(
            data,
            row_width.unwrap_or_else(|| nataraj_width(data.len())),
        )?;
        return write_png(&img, palette, source_sha256);
    }
    let nibbles = bytes_to_nibbles(data).symbols;
    let order = choose_order(nibbles.len() as u64)?;
    let side = order.side() as usize;
    let ident: [[u8; 1]; 16] = std::array::from_fn(|i| [i as u8]);
    let lut = match encoding.coloring {
        Coloring::PaletteRgb => &ident,
        Coloring::Greyscale => &GREY_LUT,
    };
    let mut grid = vec![0u8; side * side];
    match encoding.layout {
        Layout::Hilbert => hilbert::fill_hilbert(order, &nibbles, lut, [0], &mut grid),
        Layout::RowMajor => hilbert::fill_row_major(side, &nibbles, lut, [0], &mut grid),
    }
    drop(nibbles);
    let meta = ArchiveMeta {
        payload_len: data.len() * 2,
        layout: encoding.layout,
        coloring: encoding.coloring,
        order: (encoding.layout == Layout::Hilbert).then_some(order.n()),
        width: side,
        height: side,
        source_sha256: source_sha256.map(str::to_owned),
    };
    let plte = (encoding.coloring == Coloring::PaletteRgb).then(|| palette.plte_bytes());
    encode_png(&meta, plte, &grid)
}

/// Decodes a PNG written by [`write_png`] or [`archive_png`].
pub fn read_png(bytes: &[u8]) -> Result<(ByteplotImage, ArchiveMeta), ImageError> {
    let mut dec = png::Decoder::new_with_limits(
        Cursor::new(bytes),
        png::Limits { bytes: usize::MAX },
    );
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(png_err)?;
    let meta: ArchiveMeta = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|c| c.keyword == META_KEY)
        .ok_or_else(|| ImageError::Corrupt("missing hilbyte metadata chunk".into()))
        .and_then(|c| {
            serde_json::from_str(&c.text)
                .map_err(|e| ImageError::Corrupt(format!("bad metadata: {e}")))
        })?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(frame.buffer_size());
    let channels = match frame.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Grayscale => 1,
        other => return Err(ImageError::Corrupt(format!("unexpected colour type {other:?}"))),
    };
    if channels != meta.coloring.channels()
        || frame.width as usize != meta.width
        || frame.height as usize != meta.height
    {
        return Err(ImageError::Corrupt("metadata disagrees with image header".into()));
    }
    let img = ByteplotImage {
        width: meta.width,
        height: meta.height,
        channels,
        pixels: buf,
        layout: meta.layout,
        coloring: meta.coloring,
        payload_len: meta.payload_len,
    };
    Ok((img, meta))
}

/// True when `bytes` start with the PNG signature.
pub fn is_png(bytes: &[u8]) -> bool {
    bytes.starts_with(&[0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A])
}
