//! Seeded synthetic screens: labelled rectangles on a slot grid, templated
//! referring expressions, and box-shaped ground-truth masks.

pub mod expression;
pub mod glyphs;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Record};
use crate::element::{BBox, Element};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

pub use expression::{generate_expression, Expression, Family};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedColor {
    pub name: String,
    pub rgb: [u8; 3],
}

/// Relative frequency of each expression family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateMix {
    pub text: f64,
    pub positional: f64,
    pub ordinal: f64,
    pub color: f64,
    pub relational: f64,
}

impl Default for TemplateMix {
    fn default() -> Self {
        Self {
            text: 0.5,
            positional: 0.2,
            ordinal: 0.05,
            color: 0.2,
            relational: 0.05,
        }
    }
}

impl TemplateMix {
    pub fn weight(&self, f: Family) -> f64 {
        match f {
            Family::Text => self.text,
            Family::Positional => self.positional,
            Family::Ordinal => self.ordinal,
            Family::Color => self.color,
            Family::Relational => self.relational,
        }
    }
}

pub const DEFAULT_LABELS: &[&str] = &[
    "send", "login", "menu", "home", "save", "open", "edit", "view", "help", "exit", "back",
    "next", "stop", "play", "copy", "paste", "find", "sort", "add", "new", "undo", "redo", "zoom",
    "print", "share", "like", "post", "chat", "mail", "cart", "buy", "sell", "pay", "info",
    "news", "blog", "shop", "map", "file", "user", "call", "ok", "yes", "no", "more", "less",
    "list", "link", "live", "join", "quit", "sign", "reset", "apply", "close", "tools", "music",
    "photo", "video", "cloud", "star", "game",
];

pub fn default_palette() -> Vec<NamedColor> {
    [
        ("red", [220, 50, 47]),
        ("green", [60, 170, 60]),
        ("blue", [50, 100, 220]),
        ("yellow", [230, 200, 40]),
        ("orange", [240, 140, 30]),
        ("purple", [140, 70, 180]),
        ("pink", [240, 120, 180]),
        ("teal", [40, 170, 170]),
    ]
    .into_iter()
    .map(|(name, rgb)| NamedColor {
        name: name.into(),
        rgb,
    })
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub min_elements: usize,
    pub max_elements: usize,
    pub expressions_per_screen: usize,
    pub labels: Vec<String>,
    pub palette: Vec<NamedColor>,
    pub background: [u8; 3],
    pub mix: TemplateMix,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 64,
            height: 64,
            grid_cols: 2,
            grid_rows: 4,
            min_elements: 3,
            max_elements: 8,
            expressions_per_screen: 4,
            labels: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
            palette: default_palette(),
            background: [245, 245, 245],
            mix: TemplateMix::default(),
        }
    }
}

/// Vertical gap between a slot edge and its rectangle.
pub const SLOT_INSET_Y: usize = 2;
/// Minimum horizontal gap between a slot edge and its rectangle.
pub const SLOT_INSET_X: usize = 1;
/// Border plus padding around a label inside its rectangle, per side.
pub const LABEL_MARGIN: usize = 2;

pub const MIN_LABELS: usize = 50;
pub const MIN_COLORS: usize = 6;

impl GeneratorSpec {
    fn slot_size(&self) -> (usize, usize) {
        (self.width / self.grid_cols.max(1), self.height / self.grid_rows.max(1))
    }

    fn max_rect(&self) -> (usize, usize) {
        let (sw, sh) = self.slot_size();
        (
            sw.saturating_sub(2 * SLOT_INSET_X),
            sh.saturating_sub(2 * SLOT_INSET_Y),
        )
    }

    /// Number of grid slots that can hold a rectangle with any vocabulary label.
    pub fn placeable_slots(&self) -> usize {
        let (rw, rh) = self.max_rect();
        let widest = self
            .labels
            .iter()
            .map(|l| glyphs::label_extent(l).0)
            .max()
            .unwrap_or(0);
        if rw >= widest + 2 * LABEL_MARGIN && rh >= glyphs::GLYPH_H + 2 * LABEL_MARGIN {
            self.grid_cols * self.grid_rows
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return fail("image extents must be positive".into());
        }
        let slots = self.placeable_slots();
        if slots < 3 {
            return fail(format!("only {slots} placeable slots; need at least 3"));
        }
        if self.min_elements == 0 || self.min_elements > self.max_elements || self.max_elements > slots {
            return fail(format!(
                "element range {}..={} must be non-empty and fit {slots} slots",
                self.min_elements, self.max_elements
            ));
        }
        if self.expressions_per_screen == 0 {
            return fail("expressions_per_screen must be positive".into());
        }
        let distinct: HashSet<_> = self.labels.iter().collect();
        if distinct.len() != self.labels.len() || self.labels.len() < MIN_LABELS {
            return fail(format!("need at least {MIN_LABELS} distinct labels"));
        }
        if let Some(bad) = self
            .labels
            .iter()
            .find(|l| l.is_empty() || !l.chars().all(|c| glyphs::glyph(c).is_some()))
        {
            return fail(format!("label {bad:?} must be non-empty [a-z0-9]"));
        }
        if let Some(bad) = self.labels.iter().find(|l| expression::is_reserved(l)) {
            return fail(format!("label {bad:?} collides with template vocabulary"));
        }
        let names: HashSet<_> = self.palette.iter().map(|c| &c.name).collect();
        if let Some(bad) = self.labels.iter().find(|l| names.contains(l)) {
            return fail(format!("label {bad:?} collides with a colour name"));
        }
        if names.len() != self.palette.len() || self.palette.len() < MIN_COLORS {
            return fail(format!("need at least {MIN_COLORS} distinct named colours"));
        }
        let m = &self.mix;
        let w = [m.text, m.positional, m.ordinal, m.color, m.relational];
        if w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return fail(format!("template mix weights {w:?} must be non-negative and sum to 1"));
        }
        Ok(())
    }
}

/// Pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Widget {
    pub label: String,
    /// Index into the generator palette.
    pub color: usize,
    pub rect: PixelRect,
}

/// One rendered screen. `elements[i]` describes `widgets[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Screen {
    pub width: usize,
    pub height: usize,
    /// Row-major 8-bit RGB.
    pub pixels: Vec<u8>,
    pub widgets: Vec<Widget>,
    pub elements: Vec<Element>,
}

impl Screen {
    pub fn image(&self) -> Tensor {
        let data = self.pixels.iter().map(|&v| f32::from(v) / 255.0).collect();
        Tensor::new(vec![self.height, self.width, 3], data).expect("positive extents")
    }

    pub fn mask(&self, widget: usize) -> BinaryMask {
        let r = self.widgets[widget].rect;
        BinaryMask::rect(self.height, self.width, r.x0, r.y0, r.x1, r.y1)
    }

    pub fn colors(&self) -> Vec<usize> {
        self.widgets.iter().map(|w| w.color).collect()
    }
}

fn luminance(rgb: [u8; 3]) -> f32 {
    (0.299 * f32::from(rgb[0]) + 0.587 * f32::from(rgb[1]) + 0.114 * f32::from(rgb[2])) / 255.0
}

/// Random number generator for screen `index` of `spec`.
pub fn screen_rng(spec: &GeneratorSpec, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    rng
}

/// Paints a filled, bordered rectangle with its label centred inside.
fn paint_widget(pixels: &mut [u8], width: usize, widget: &Widget, fill: [u8; 3]) {
    let r = widget.rect;
    let border = fill.map(|c| c / 2);
    let ink = if luminance(fill) < 0.5 { [255, 255, 255] } else { [0, 0, 0] };
    let mut put = |x: usize, y: usize, c: [u8; 3]| {
        let i = (y * width + x) * 3;
        pixels[i..i + 3].copy_from_slice(&c);
    };
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            let edge = y == r.y0 || y + 1 == r.y1 || x == r.x0 || x + 1 == r.x1;
            put(x, y, if edge { border } else { fill });
        }
    }
    let inner_w = r.x1 - r.x0 - 2 * LABEL_MARGIN;
    let inner_h = r.y1 - r.y0 - 2 * LABEL_MARGIN;
    let scale = glyphs::fit_scale(&widget.label, inner_w, inner_h).expect("validated to fit");
    let (lw, lh) = glyphs::label_extent(&widget.label);
    let lx = r.x0 + LABEL_MARGIN + (inner_w - lw * scale) / 2;
    let ly = r.y0 + LABEL_MARGIN + (inner_h - lh * scale) / 2;
    glyphs::draw_label(&widget.label, lx, ly, scale, |x, y| put(x, y, ink));
}

/// Renders a label alone on a rectangle of the given fill, for glyph checks.
pub fn render_label(label: &str, fill: [u8; 3], rect_w: usize, rect_h: usize) -> Vec<u8> {
    let mut pixels = vec![0u8; rect_w * rect_h * 3];
    let widget = Widget {
        label: label.into(),
        color: 0,
        rect: PixelRect {
            x0: 0,
            y0: 0,
            x1: rect_w,
            y1: rect_h,
        },
    };
    paint_widget(&mut pixels, rect_w, &widget, fill);
    pixels
}

/// Places `min_elements..=max_elements` labelled rectangles in distinct grid
/// slots and returns the screen with a uniformly chosen target.
pub fn render_screen(spec: &GeneratorSpec, rng: &mut impl Rng) -> Result<(Screen, usize)> {
    spec.validate()?;
    let (sw, sh) = spec.slot_size();
    let (max_w, rect_h) = spec.max_rect();
    let count = rng.gen_range(spec.min_elements..=spec.max_elements);
    let mut slots: Vec<usize> = (0..spec.grid_cols * spec.grid_rows).collect();
    slots.shuffle(rng);
    slots.truncate(count);
    let labels: Vec<&String> = spec.labels.choose_multiple(rng, count).collect();

    let mut pixels: Vec<u8> = std::iter::repeat(spec.background)
        .take(spec.width * spec.height)
        .flatten()
        .collect();
    let mut widgets = Vec::with_capacity(count);
    let mut elements = Vec::with_capacity(count);
    for (&slot, label) in slots.iter().zip(labels) {
        let (col, row) = (slot % spec.grid_cols, slot / spec.grid_cols);
        let min_w = glyphs::label_extent(label).0 + 2 * LABEL_MARGIN;
        let w = rng.gen_range(min_w..=max_w);
        let x0 = col * sw + SLOT_INSET_X + rng.gen_range(0..=max_w - w);
        let y0 = row * sh + SLOT_INSET_Y;
        let rect = PixelRect {
            x0,
            y0,
            x1: x0 + w,
            y1: y0 + rect_h,
        };
        let color = rng.gen_range(0..spec.palette.len());
        let widget = Widget {
            label: label.clone(),
            color,
            rect,
        };
        paint_widget(&mut pixels, spec.width, &widget, spec.palette[color].rgb);
        let bbox = BBox::from_pixels(rect.x0, rect.y0, rect.x1, rect.y1, spec.width, spec.height)?;
        elements.push(Element::new(label.clone(), bbox));
        widgets.push(widget);
    }
    let target = rng.gen_range(0..count);
    Ok((
        Screen {
            width: spec.width,
            height: spec.height,
            pixels,
            widgets,
            elements,
        },
        target,
    ))
}

/// A screen together with its generated (target, expression) pairs.
#[derive(Clone, Debug)]
pub struct ScreenSamples {
    pub screen_id: String,
    pub screen: Screen,
    pub expressions: Vec<(usize, Expression)>,
}

pub fn screen_id(index: usize) -> String {
    format!("s{index:06}")
}

/// Generates screen `index` and up to `expressions_per_screen` expressions
/// for distinct targets, each family drawn by the template mix.
pub fn generate_screen(spec: &GeneratorSpec, index: usize) -> Result<ScreenSamples> {
    let mut rng = screen_rng(spec, index as u64);
    let (screen, _) = render_screen(spec, &mut rng)?;
    let mut used = vec![false; screen.widgets.len()];
    let mut expressions = Vec::new();
    let wanted = spec.expressions_per_screen.min(screen.widgets.len());
    'outer: while expressions.len() < wanted {
        for _ in 0..32 {
            let family = expression::sample_family(&spec.mix, &mut rng);
            let options: Vec<(usize, Vec<String>)> = (0..screen.widgets.len())
                .filter(|&t| !used[t])
                .map(|t| (t, expression::phrasings(&screen, t, family, spec)))
                .filter(|(_, p)| !p.is_empty())
                .collect();
            if let Some((target, phrases)) = options.choose(&mut rng) {
                let text = phrases.choose(&mut rng).expect("non-empty").clone();
                used[*target] = true;
                expressions.push((*target, Expression { text, family }));
                continue 'outer;
            }
        }
        break;
    }
    if expressions.is_empty() {
        return Err(Error::invalid("generate_screen", format!("screen {index}: no unambiguous expression")));
    }
    Ok(ScreenSamples {
        screen_id: screen_id(index),
        screen,
        expressions,
    })
}

/// Screen counts for the train / val / test splits.
pub fn split_sizes(count: usize) -> (usize, usize, usize) {
    let val = (count as f64 * 0.1).round() as usize;
    let test = val;
    (count - val - test, val, test)
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Writes `count` screens to `out`: `images/`, `masks/` and one JSON-lines
/// file per split. Screens are assigned to splits in index order.
pub fn generate_dataset(spec: &GeneratorSpec, count: usize, out: &Path) -> Result<[usize; 3]> {
    spec.validate()?;
    if count < 10 {
        return Err(Error::invalid("generate_dataset", format!("count {count} is below 10")));
    }
    for dir in ["images", "masks"] {
        let p = out.join(dir);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let (n_train, n_val, _) = split_sizes(count);
    let mut lines: [String; 3] = Default::default();
    let mut pairs = [0usize; 3];
    for index in 0..count {
        let split = if index < n_train {
            0
        } else if index < n_train + n_val {
            1
        } else {
            2
        };
        let s = generate_screen(spec, index)?;
        let image_rel = format!("images/{}.png", s.screen_id);
        dataset::write_rgb_png(&out.join(&image_rel), s.screen.width, s.screen.height, &s.screen.pixels)?;
        for (target, expr) in &s.expressions {
            let mask_rel = format!("masks/{}_{}.png", s.screen_id, target);
            let mask = s.screen.mask(*target);
            dataset::write_mask_png(&out.join(&mask_rel), &mask)?;
            let record = Record {
                image: image_rel.clone(),
                elements: s.screen.elements.clone(),
                expression: expr.text.clone(),
                mask: mask_rel,
                screen_id: s.screen_id.clone(),
                family: Some(expr.family.name().to_string()),
                target_element_index: Some(*target),
            };
            lines[split].push_str(&serde_json::to_string(&record).expect("record serializes"));
            lines[split].push('\n');
            pairs[split] += 1;
        }
    }
    for (name, body) in SPLITS.iter().zip(&lines) {
        let p = out.join(format!("{name}.jsonl"));
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    let p = out.join("spec.json");
    let json = serde_json::to_string_pretty(spec).expect("spec serializes");
    fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(pairs)
}
