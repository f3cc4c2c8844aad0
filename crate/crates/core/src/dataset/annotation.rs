//! Aperio-style XML annotations (`Annotations/Annotation/Regions/Region/Vertices/Vertex`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed polygon in pixel coordinates (`x` to the right, `y` downward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::arg(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::arg("polygon vertices must be finite"));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Edges as `(start, end)` pairs, including the closing edge.
    pub fn edges(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }
}

/// Polygons recovered from one annotation file, plus skipped-region warnings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedAnnotation {
    pub polygons: Vec<Polygon>,
    pub warnings: Vec<String>,
}

fn attr_f64(node: roxmltree::Node<'_, '_>, name: &str, doc: &roxmltree::Document<'_>) -> Result<f64> {
    let line = doc.text_pos_at(node.range().start).row;
    let raw = node.attribute(name).ok_or_else(|| Error::Parse {
        line,
        message: format!("Vertex is missing the {name} attribute"),
    })?;
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("Vertex {name}={raw:?} is not a number"),
    })
}

/// One polygon per `Region`, vertex order preserved.
///
/// Regions with fewer than three vertices are skipped and reported in
/// [`ParsedAnnotation::warnings`]. A document without regions yields no polygons.
pub fn parse_annotation_xml(xml_text: &str) -> Result<ParsedAnnotation> {
    let doc = roxmltree::Document::parse(xml_text).map_err(|e| Error::Parse {
        line: e.pos().row,
        message: e.to_string(),
    })?;
    let mut out = ParsedAnnotation::default();
    for region in doc.descendants().filter(|n| n.has_tag_name("Region")) {
        let mut vertices = Vec::new();
        for vertex in region
            .children()
            .filter(|n| n.has_tag_name("Vertices"))
            .flat_map(|v| v.children())
            .filter(|n| n.has_tag_name("Vertex"))
        {
            vertices.push((attr_f64(vertex, "X", &doc)?, attr_f64(vertex, "Y", &doc)?));
        }
        if vertices.len() < 3 {
            let line = doc.text_pos_at(region.range().start).row;
            let id = region.attribute("Id").unwrap_or("?");
            let msg = format!(
                "line {line}: Region Id={id} has {} vertices; skipped",
                vertices.len()
            );
            log::warn!("{msg}");
            out.warnings.push(msg);
            continue;
        }
        out.polygons.push(Polygon::new(vertices).map_err(|e| Error::Parse {
            line: doc.text_pos_at(region.range().start).row,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
