//! 3 × 5 bitmap glyphs for `[a-z0-9]`.

pub const GLYPH_W: usize = 3;
pub const GLYPH_H: usize = 5;
/// Blank columns between glyphs.
pub const GLYPH_GAP: usize = 1;

/// Rows top to bottom; bit 2 is the left column.
pub fn glyph(ch: char) -> Option<[u8; GLYPH_H]> {
    let rows = match ch {
        'a' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'b' => [0b110, 0b101, 0b110, 0b101, 0b110],
        'c' => [0b011, 0b100, 0b100, 0b100, 0b011],
        'd' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'e' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'f' => [0b111, 0b100, 0b110, 0b100, 0b100],
        'g' => [0b011, 0b100, 0b101, 0b101, 0b011],
        'h' => [0b101, 0b101, 0b111, 0b101, 0b101],
        'i' => [0b111, 0b010, 0b010, 0b010, 0b111],
        'j' => [0b001, 0b001, 0b001, 0b101, 0b010],
        'k' => [0b101, 0b101, 0b110, 0b101, 0b101],
        'l' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'm' => [0b101, 0b111, 0b111, 0b101, 0b101],
        'n' => [0b110, 0b101, 0b101, 0b101, 0b101],
        'o' => [0b010, 0b101, 0b101, 0b101, 0b010],
        'p' => [0b110, 0b101, 0b110, 0b100, 0b100],
        'q' => [0b010, 0b101, 0b101, 0b011, 0b001],
        'r' => [0b110, 0b101, 0b110, 0b101, 0b101],
        's' => [0b011, 0b100, 0b010, 0b001, 0b110],
        't' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'u' => [0b101, 0b101, 0b101, 0b101, 0b111],
        'v' => [0b101, 0b101, 0b101, 0b101, 0b010],
        'w' => [0b101, 0b101, 0b111, 0b111, 0b101],
        'x' => [0b101, 0b101, 0b010, 0b101, 0b101],
        'y' => [0b101, 0b101, 0b010, 0b010, 0b010],
        'z' => [0b111, 0b001, 0b010, 0b100, 0b111],
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b110, 0b001, 0b010, 0b100, 0b111],
        '3' => [0b110, 0b001, 0b010, 0b001, 0b110],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b110, 0b001, 0b110],
        '6' => [0b011, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b110],
        _ => return None,
    };
    Some(rows)
}

/// Unscaled pixel extent (width, height) of `label`.
pub fn label_extent(label: &str) -> (usize, usize) {
    let n = label.chars().count();
    if n == 0 {
        return (0, 0);
    }
    (n * GLYPH_W + (n - 1) * GLYPH_GAP, GLYPH_H)
}

/// Largest integer scale at which `label` fits in `max_w × max_h`, if any.
pub fn fit_scale(label: &str, max_w: usize, max_h: usize) -> Option<usize> {
    let (w, h) = label_extent(label);
    if w == 0 {
        return None;
    }
    let s = (max_w / w).min(max_h / h);
    (s >= 1).then_some(s)
}

/// Calls `paint(x, y)` for every lit pixel of `label` drawn at `scale` with
/// its top-left corner at `(x0, y0)`.
pub fn draw_label(label: &str, x0: usize, y0: usize, scale: usize, mut paint: impl FnMut(usize, usize)) {
    for (i, ch) in label.chars().enumerate() {
        let Some(rows) = glyph(ch) else { continue };
        let gx = x0 + i * (GLYPH_W + GLYPH_GAP) * scale;
        for (ry, bits) in rows.iter().enumerate() {
            for rx in 0..GLYPH_W {
                if bits >> (GLYPH_W - 1 - rx) & 1 == 1 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            paint(gx + rx * scale + dx, y0 + ry * scale + dy);
                        }
                    }
                }
            }
        }
    }
}
