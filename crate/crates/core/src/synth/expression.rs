//! Templated referring expressions that pick out exactly one widget.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GeneratorSpec, Screen, TemplateMix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Text,
    Positional,
    Ordinal,
    Color,
    Relational,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Text,
        Family::Positional,
        Family::Ordinal,
        Family::Color,
        Family::Relational,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Text => "text",
            Family::Positional => "positional",
            Family::Ordinal => "ordinal",
            Family::Color => "color",
            Family::Relational => "relational",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expression {
    pub text: String,
    pub family: Family,
}

pub const ORDINALS: [&str; 8] = [
    "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth",
];

const TEMPLATE_WORDS: &[&str] = &[
    "the", "one", "button", "click", "top", "bottom", "left", "right", "above", "below", "of",
];

/// Whether `word` appears in the fixed template text.
pub fn is_reserved(word: &str) -> bool {
    TEMPLATE_WORDS.contains(&word) || ORDINALS.contains(&word)
}

/// Widget centre and extent in pixel units.
#[derive(Clone, Copy)]
struct Geom {
    cx: f64,
    cy: f64,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

fn geoms(screen: &Screen) -> Vec<Geom> {
    screen
        .widgets
        .iter()
        .map(|w| {
            let r = w.rect;
            Geom {
                cx: (r.x0 + r.x1) as f64 / 2.0,
                cy: (r.y0 + r.y1) as f64 / 2.0,
                x0: r.x0 as f64,
                y0: r.y0 as f64,
                x1: r.x1 as f64,
                y1: r.y1 as f64,
            }
        })
        .collect()
}

/// Indices of widgets sorted top-to-bottom, then left-to-right by top-left corner.
pub fn reading_order(screen: &Screen) -> Vec<usize> {
    let mut order: Vec<usize> = (0..screen.widgets.len()).collect();
    order.sort_by_key(|&i| {
        let r = screen.widgets[i].rect;
        (r.y0, r.x0)
    });
    order
}

fn unique<T: PartialEq>(items: &[T], target: usize) -> bool {
    items.iter().filter(|v| **v == items[target]).count() == 1
}

/// Every unambiguous phrasing of `family` for `target`; empty when none.
pub fn phrasings(screen: &Screen, target: usize, family: Family, spec: &GeneratorSpec) -> Vec<String> {
    let labels: Vec<&str> = screen.widgets.iter().map(|w| w.label.as_str()).collect();
    let g = geoms(screen);
    let (w, h) = (screen.width as f64, screen.height as f64);
    let mut out = Vec::new();
    match family {
        Family::Text => {
            if unique(&labels, target) {
                let l = labels[target];
                out.push(format!("the {l} button"));
                out.push(format!("click {l}"));
                out.push(format!("click the {l} button"));
            }
        }
        Family::Color => {
            let colors = screen.colors();
            if unique(&colors, target) {
                out.push(format!("the {} one", spec.palette[colors[target]].name));
            }
        }
        Family::Positional => {
            let quadrant: Vec<(bool, bool)> = g.iter().map(|q| (q.cy < h / 2.0, q.cx < w / 2.0)).collect();
            if unique(&quadrant, target) {
                let (top, left) = quadrant[target];
                out.push(format!(
                    "the {} {} one",
                    if top { "top" } else { "bottom" },
                    if left { "left" } else { "right" }
                ));
            }
            let others = || g.iter().enumerate().filter(|&(i, _)| i != target);
            if others().all(|(_, q)| q.cy > g[target].cy) {
                out.push("the top one".into());
            }
            if others().all(|(_, q)| q.cy < g[target].cy) {
                out.push("the bottom one".into());
            }
        }
        Family::Ordinal => {
            let rank = reading_order(screen).iter().position(|&i| i == target).expect("target in order");
            if let Some(word) = ORDINALS.get(rank) {
                out.push(format!("the {word} one"));
            }
        }
        Family::Relational => {
            for (a, anchor) in g.iter().enumerate() {
                if a == target || !unique(&labels, a) {
                    continue;
                }
                for rel in Relation::ALL {
                    let hits: Vec<usize> = (0..g.len()).filter(|&i| i != a && rel.holds(&g[i], anchor)).collect();
                    if hits == [target] {
                        out.push(format!("the one {} {}", rel.phrase(), labels[a]));
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy)]
enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    const ALL: [Relation; 4] = [Relation::LeftOf, Relation::RightOf, Relation::Above, Relation::Below];

    fn phrase(self) -> &'static str {
        match self {
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    /// Horizontal relations need the candidate centre inside the anchor's
    /// row band, vertical ones inside its column band.
    fn holds(self, c: &Geom, a: &Geom) -> bool {
        let row = a.y0 <= c.cy && c.cy < a.y1;
        let col = a.x0 <= c.cx && c.cx < a.x1;
        match self {
            Relation::LeftOf => row && c.cx < a.cx,
            Relation::RightOf => row && c.cx > a.cx,
            Relation::Above => col && c.cy < a.cy,
            Relation::Below => col && c.cy > a.cy,
        }
    }
}

pub(crate) fn sample_family(mix: &TemplateMix, rng: &mut impl Rng) -> Family {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for f in Family::ALL {
        acc += mix.weight(f);
        if u < acc {
            return f;
        }
    }
    *Family::ALL
        .iter()
        .rev()
        .find(|&&f| mix.weight(f) > 0.0)
        .expect("weights sum to 1")
}

/// Draws a family by mix weight, restricted to families with an unambiguous
/// phrasing for `target`, then a phrasing uniformly.
pub fn generate_expression(
    screen: &Screen,
    target: usize,
    spec: &GeneratorSpec,
    rng: &mut impl Rng,
) -> Result<Expression> {
    if target >= screen.widgets.len() {
        return Err(Error::invalid(
            "generate_expression",
            format!("target {target} of {} widgets", screen.widgets.len()),
        ));
    }
    let options: Vec<(Family, Vec<String>)> = Family::ALL
        .into_iter()
        .filter(|&f| spec.mix.weight(f) > 0.0)
        .map(|f| (f, phrasings(screen, target, f, spec)))
        .filter(|(_, p)| !p.is_empty())
        .collect();
    let total: f64 = options.iter().map(|(f, _)| spec.mix.weight(*f)).sum();
    if options.is_empty() {
        return Err(Error::invalid("generate_expression", format!("no unambiguous template for target {target}")));
    }
    let mut u = rng.gen::<f64>() * total;
    let mut pick = options.len() - 1;
    for (i, (f, _)) in options.iter().enumerate() {
        u -= spec.mix.weight(*f);
        if u < 0.0 {
            pick = i;
            break;
        }
    }
    let (family, phrases) = &options[pick];
    let text = phrases[rng.gen_range(0..phrases.len())].clone();
    Ok(Expression { text, family: *family })
}
