use super::ImageError;

pub type Rgb = [u8; 3];

/// The standard hex-digit colour table: digit `i` is drawn with `colors[i]`.
pub const DEFAULT_COLORS: [Rgb; 16] = [
    [0, 0, 0],
    [128, 0, 0],
    [154, 99, 36],
    [128, 128, 0],
    [70, 153, 144],
    [0, 0, 117],
    [230, 25, 75],
    [245, 130, 49],
    [255, 225, 25],
    [191, 239, 69],
    [60, 180, 75],
    [66, 212, 244],
    [67, 99, 216],
    [145, 30, 180],
    [240, 50, 230],
    [255, 255, 255],
];

/// Sixteen pairwise-distinct colours, one per nibble value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    colors: [Rgb; 16],
}

impl Default for Palette {
    fn default() -> Self {
        Palette {
            colors: DEFAULT_COLORS,
        }
    }
}

impl Palette {
    pub fn new(colors: [Rgb; 16]) -> Result<Self, ImageError> {
        for i in 0..16 {
            for j in (i + 1)..16 {
                if colors[i] == colors[j] {
                    return Err(ImageError::DuplicateColor(i as u8, j as u8));
                }
            }
        }
        Ok(Palette { colors })
    }

    pub fn colors(&self) -> &[Rgb; 16] {
        &self.colors
    }

    #[inline]
    pub fn color(&self, symbol: u8) -> Rgb {
        self.colors[(symbol & 0xF) as usize]
    }

    /// Reverse lookup; `None` for colours outside the palette.
    #[inline]
    pub fn symbol_of(&self, rgb: Rgb) -> Option<u8> {
        self.colors.iter().position(|&c| c == rgb).map(|i| i as u8)
    }

    /// Flattened `r, g, b, r, g, b, ...` bytes, as stored in a PNG PLTE chunk.
    pub fn plte_bytes(&self) -> Vec<u8> {
        self.colors.iter().flatten().copied().collect()
    }
}
