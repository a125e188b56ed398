//! Screen elements, their embeddings, and attention against the expression.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::text::TextEncoder;

/// Axis-aligned box in normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f32; 4]", into = "[f32; 4]")]
pub struct BBox {
    x0: f32,
    y0: f32,
    x1: f32,
    y1: f32,
}

impl BBox {
    pub fn new(x0: f32, y0: f32, x1: f32, y1: f32) -> Result<Self> {
        let ok = (0.0..=1.0).contains(&x0)
            && (0.0..=1.0).contains(&y0)
            && (0.0..=1.0).contains(&x1)
            && (0.0..=1.0).contains(&y1)
            && x0 < x1
            && y0 < y1;
        if ok {
            Ok(Self { x0, y0, x1, y1 })
        } else {
            Err(Error::BBox(x0, y0, x1, y1))
        }
    }

    /// Box covering pixels `[px0, px1) × [py0, py1)` of a `width × height` image.
    pub fn from_pixels(px0: usize, py0: usize, px1: usize, py1: usize, width: usize, height: usize) -> Result<Self> {
        Self::new(
            px0 as f32 / width as f32,
            py0 as f32 / height as f32,
            px1 as f32 / width as f32,
            py1 as f32 / height as f32,
        )
    }

    pub fn x0(&self) -> f32 {
        self.x0
    }
    pub fn y0(&self) -> f32 {
        self.y0
    }
    pub fn x1(&self) -> f32 {
        self.x1
    }
    pub fn y1(&self) -> f32 {
        self.y1
    }

    pub fn coords(&self) -> [f32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    pub fn center(&self) -> (f32, f32) {
        ((self.x0 + self.x1) * 0.5, (self.y0 + self.y1) * 0.5)
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

impl TryFrom<[f32; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f32; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f32; 4] {
    fn from(b: BBox) -> Self {
        b.coords()
    }
}

/// A text annotation attached to a region of the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub text: String,
    pub bbox: BBox,
}

impl Element {
    pub fn new(text: impl Into<String>, bbox: BBox) -> Self {
        Self {
            text: text.into(),
            bbox,
        }
    }
}

/// Dense layer parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseLayer {
    pub weights: ParamId,
    pub bias: ParamId,
}

/// Applies `layers` in order with relu between them (not after the last).
pub fn dense_stack(g: &mut Graph<'_>, mut x: Var, layers: &[DenseLayer]) -> Result<Var> {
    for (i, layer) in layers.iter().enumerate() {
        let w = g.param(layer.weights);
        let b = g.param(layer.bias);
        x = g.dense(x, w, b)?;
        if i + 1 < layers.len() {
            x = g.relu(x);
        }
    }
    Ok(x)
}

/// Row i is `[x0, y0, x1, y1, text embedding...]` for element i.
pub fn element_features(elements: &[Element], encoder: &TextEncoder) -> Result<Tensor> {
    if elements.is_empty() {
        return Err(Error::invalid("element_features", "no elements"));
    }
    let width = 4 + encoder.dim;
    let mut data = Vec::with_capacity(elements.len() * width);
    for el in elements {
        data.extend_from_slice(&el.bbox.coords());
        data.extend_from_slice(encoder.encode(&el.text).as_slice());
    }
    Tensor::new(vec![elements.len(), width], data)
}

/// Element embeddings `[N, d_embed]` from the element network.
pub fn embed_elements(g: &mut Graph<'_>, features: Var, dnn: &[DenseLayer]) -> Result<Var> {
    dense_stack(g, features, dnn)
}

/// Embedding of a single element, evaluated outside any training graph.
pub fn embed_element(
    el: &Element,
    dnn: &[DenseLayer],
    params: &ParamStore,
    encoder: &TextEncoder,
) -> Result<Vec<f32>> {
    let mut g = Graph::new(params);
    let x = g.input(element_features(std::slice::from_ref(el), encoder)?);
    let e = embed_elements(&mut g, x, dnn)?;
    Ok(g.value(e).data().to_vec())
}

/// Output of [`attend_elements`].
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    /// Softmax weights, one per element.
    pub weights: Var,
    /// Each element embedding scaled by its weight, `[N, d_embed]`.
    pub attended: Var,
}

/// Scores every element against the expression with a shared projection,
/// normalizes the scores over the element set, and scales each embedding by
/// its weight.
pub fn attend_elements(
    g: &mut Graph<'_>,
    expression: Var,
    embeddings: Var,
    projection: &[DenseLayer],
) -> Result<Attention> {
    let rs = g.value(expression).shape().to_vec();
    let es = g.value(embeddings).shape().to_vec();
    if es.len() != 2 || rs.len() != 1 || es[1] != rs[0] {
        return Err(Error::shape("attend_elements", &rs, &es));
    }
    let r = dense_stack(g, expression, projection)?;
    let e = dense_stack(g, embeddings, projection)?;
    let logits = g.matvec(e, r)?;
    let weights = g.softmax(logits, Axis::Set);
    let attended = g.scale_rows(embeddings, weights)?;
    Ok(Attention { weights, attended })
}
