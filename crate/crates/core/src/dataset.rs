//! JSON-lines datasets with PNG images and masks.
//!
//! Each line holds `image` and `mask` paths (relative to the file), the
//! `elements`, the `expression` and a `screen_id`. Pixels map to reals as
//! value / 255; any nonzero mask value marks a referred pixel.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub image: String,
    pub elements: Vec<Element>,
    pub expression: String,
    pub mask: String,
    pub screen_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_element_index: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Sample {
    /// H × W × 3 in [0, 1]; shared by all expressions on the same screen.
    pub image: Arc<Tensor>,
    pub elements: Vec<Element>,
    pub expression: String,
    pub mask: BinaryMask,
    pub screen_id: String,
    pub family: Option<String>,
    pub target_element_index: Option<usize>,
}

/// Decoded 8-bit PNG.
pub struct Png {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn read_png(path: &Path) -> Result<Png> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, format!("bit depth {:?}; need 8", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::format(path, format!("colour type {other:?}; need RGB or grayscale"))),
    };
    buf.truncate(info.buffer_size());
    Ok(Png {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        data: buf,
    })
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let fail = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    };
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(data).map_err(fail)?;
    writer.finish().map_err(fail)
}

pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    write_png(path, width, height, png::ColorType::Rgb, rgb)
}

pub fn write_gray_png(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    write_png(path, width, height, png::ColorType::Grayscale, data)
}

/// Writes `mask` as grayscale with referred pixels at 255.
pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let data: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    write_gray_png(path, mask.width(), mask.height(), &data)
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let png = read_png(path)?;
    if png.channels != 3 {
        return Err(Error::format(path, "image must be 8-bit RGB"));
    }
    let data = png.data.iter().map(|&v| f32::from(v) / 255.0).collect();
    Tensor::new(vec![png.height, png.width, 3], data)
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let png = read_png(path)?;
    if png.channels != 1 {
        return Err(Error::format(path, "mask must be 8-bit grayscale"));
    }
    let data = png.data.iter().map(|&v| u8::from(v != 0)).collect();
    BinaryMask::new(png.height, png.width, data)
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let mut body = String::new();
    for r in records {
        body.push_str(&serde_json::to_string(r).expect("record serializes"));
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Loads every record of a JSON-lines file, decoding each distinct image once.
pub fn load_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let records = read_records(path)?;
    let mut images: HashMap<String, Arc<Tensor>> = HashMap::new();
    records
        .into_iter()
        .enumerate()
        .map(|(index, r)| load_record(base, r, &mut images).map_err(|e| Error::Sample { index, source: Box::new(e) }))
        .collect()
}

fn load_record(base: &Path, r: Record, images: &mut HashMap<String, Arc<Tensor>>) -> Result<Sample> {
    let image = match images.get(&r.image) {
        Some(t) => Arc::clone(t),
        None => {
            let t = Arc::new(read_image(&base.join(&r.image))?);
            images.insert(r.image.clone(), Arc::clone(&t));
            t
        }
    };
    let mask = read_mask(&base.join(&r.mask))?;
    if mask.height() != image.shape()[0] || mask.width() != image.shape()[1] {
        return Err(Error::shape("load_record", &[mask.height(), mask.width()], &image.shape()[..2]));
    }
    if mask.is_empty() {
        return Err(Error::invalid("load_record", format!("mask {} is empty", r.mask)));
    }
    if let Some(t) = r.target_element_index {
        if t >= r.elements.len() {
            return Err(Error::invalid(
                "load_record",
                format!("target_element_index {t} with {} elements", r.elements.len()),
            ));
        }
    }
    Ok(Sample {
        image,
        elements: r.elements,
        expression: r.expression,
        mask,
        screen_id: r.screen_id,
        family: r.family,
        target_element_index: r.target_element_index,
    })
}

/// Loads `<dir>/<split>.jsonl`.
pub fn load_split(dir: &Path, split: &str) -> Result<Vec<Sample>> {
    load_jsonl(&dir.join(format!("{split}.jsonl")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::BBox;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rgb: Vec<u8> = (0..5 * 4 * 3).map(|i| (i * 7) as u8).collect();
        let p = dir.path().join("a.png");
        write_rgb_png(&p, 5, 4, &rgb).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!((back.width, back.height, back.channels), (5, 4, 3));
        assert_eq!(back.data, rgb);
        let t = read_image(&p).unwrap();
        assert_eq!(t.shape(), &[4, 5, 3]);
        assert_eq!(t.data()[1], 7.0 / 255.0);

        let m = BinaryMask::rect(4, 5, 1, 1, 3, 2);
        let q = dir.path().join("m.png");
        write_mask_png(&q, &m).unwrap();
        assert_eq!(read_mask(&q).unwrap(), m);
        assert!(read_mask(&p).is_err());
        assert!(read_image(&q).is_err());
    }

    #[test]
    fn load_rejects_empty_mask_with_index() {
        let dir = tempfile::tempdir().unwrap();
        write_rgb_png(&dir.path().join("i.png"), 4, 4, &[0; 48]).unwrap();
        write_mask_png(&dir.path().join("full.png"), &BinaryMask::rect(4, 4, 0, 0, 4, 4)).unwrap();
        write_mask_png(&dir.path().join("empty.png"), &BinaryMask::zeros(4, 4)).unwrap();
        let rec = |mask: &str| Record {
            image: "i.png".into(),
            elements: vec![Element::new("ok", BBox::new(0.0, 0.0, 1.0, 1.0).unwrap())],
            expression: "the ok button".into(),
            mask: mask.into(),
            screen_id: "s0".into(),
            family: None,
            target_element_index: None,
        };
        let p = dir.path().join("d.jsonl");
        write_records(&p, &[rec("full.png"), rec("empty.png")]).unwrap();
        match load_jsonl(&p) {
            Err(Error::Sample { index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        write_records(&p, &[rec("full.png"), rec("full.png")]).unwrap();
        let s = load_jsonl(&p).unwrap();
        assert!(Arc::ptr_eq(&s[0].image, &s[1].image));
    }

    #[test]
    fn optional_fields_are_omitted() {
        let r = Record {
            image: "i.png".into(),
            elements: vec![],
            expression: "x".into(),
            mask: "m.png".into(),
            screen_id: "s".into(),
            family: None,
            target_element_index: None,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("family") && !json.contains("target_element_index"));
        let parsed: Record = serde_json::from_str(r#"{"image":"a","elements":[{"text":"t","bbox":[0,0,0.5,0.5]}],"expression":"e","mask":"m","screen_id":"s"}"#).unwrap();
        assert_eq!(parsed.elements[0].bbox.x1(), 0.5);
        assert!(serde_json::from_str::<Record>(r#"{"image":"a","elements":[{"text":"t","bbox":[0.5,0,0.5,0.5]}],"expression":"e","mask":"m","screen_id":"s"}"#).is_err());
    }
}
