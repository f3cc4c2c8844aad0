//! Parses a polygon annotation document and rasterizes it into a mask.
//!
//! `cargo run --release --example rasterize_annotations [out.png]`

use std::path::PathBuf;

use styleaug::dataset::{parse_annotation_xml, rasterize_polygons, write_mask};

const XML: &str = r#"<Annotations><Annotation><Regions>
  <Region Id="1"><Vertices>
    <Vertex X="4" Y="4"/><Vertex X="20" Y="6"/><Vertex X="14" Y="22"/>
  </Vertices></Region>
  <Region Id="2"><Vertices>
    <Vertex X="24" Y="20"/><Vertex X="30" Y="24"/><Vertex X="28" Y="30"/><Vertex X="21" Y="29"/>
  </Vertices></Region>
  <Region Id="3"><Vertices><Vertex X="1" Y="1"/><Vertex X="2" Y="2"/></Vertices></Region>
</Regions></Annotation></Annotations>"#;

fn main() -> styleaug::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("styleaug-mask.png"));
    let parsed = parse_annotation_xml(XML)?;
    for w in &parsed.warnings {
        println!("warning: {w}");
    }
    let mask = rasterize_polygons(&parsed.polygons, 32, 32);
    for i in 0..mask.height() {
        let row: String = (0..mask.width()).map(|j| if mask.get(i, j) { '#' } else { '.' }).collect();
        println!("{row}");
    }
    write_mask(&mask, &out)?;
    println!("{} polygons, {} foreground pixels, written to {}", parsed.polygons.len(), mask.count_ones(), out.display());
    Ok(())
}
