//! CSV interchange for per-frame object lists.
//!
//! Required header columns: `frame_id`, `class_name`, and either
//! `range_m,azimuth_rad` or `x_m,y_m` (Cartesian, `y` along boresight).
//! An optional `score` column carries detector confidences.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::catalog::{Annotation, ClassCatalog};
use crate::error::{Error, Result};

/// One parsed CSV row. Positions are not yet checked against any geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub frame_id: String,
    pub annotation: Annotation,
    pub score: Option<f64>,
    /// 1-based line in the source file.
    pub line: u64,
}

pub const ANNOTATION_HEADER: &str = "frame_id,range_m,azimuth_rad,class_name";

/// Cartesian → polar: `r = √(x²+y²)`, `θ = atan2(x, y)`.
pub fn polar_of(x: f64, y: f64) -> (f64, f64) {
    (x.hypot(y), x.atan2(y))
}

pub fn parse_annotations(reader: impl Read, catalog: &ClassCatalog) -> Result<Vec<AnnotationRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("annotation header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let frame_col = col("frame_id").ok_or_else(|| Error::Data("missing column frame_id".into()))?;
    let class_col = col("class_name").ok_or_else(|| Error::Data("missing column class_name".into()))?;
    let score_col = col("score");
    enum Pos {
        Polar(usize, usize),
        Cartesian(usize, usize),
    }
    let pos = match (col("range_m"), col("azimuth_rad"), col("x_m"), col("y_m")) {
        (Some(r), Some(a), _, _) => Pos::Polar(r, a),
        (_, _, Some(x), Some(y)) => Pos::Cartesian(x, y),
        _ => {
            return Err(Error::Data(
                "need range_m,azimuth_rad or x_m,y_m columns".into(),
            ))
        }
    };

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Data(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize, name: &str| -> Result<f64> {
            let v: f64 = field(k)
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: bad {name} {:?}", field(k))))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("line {line}: non-finite {name}")));
            }
            Ok(v)
        };
        let (range, azimuth) = match pos {
            Pos::Polar(r, a) => (num(r, "range_m")?, num(a, "azimuth_rad")?),
            Pos::Cartesian(x, y) => polar_of(num(x, "x_m")?, num(y, "y_m")?),
        };
        let class_name = field(class_col);
        let class_id = catalog
            .id_of(class_name)
            .ok_or_else(|| Error::Data(format!("line {line}: unknown class {class_name:?}")))?;
        let frame_id = field(frame_col).to_string();
        if frame_id.is_empty() {
            return Err(Error::Data(format!("line {line}: empty frame_id")));
        }
        let score = match score_col {
            Some(k) => Some(num(k, "score")?),
            None => None,
        };
        out.push(AnnotationRecord {
            frame_id,
            annotation: Annotation::new(range, azimuth, class_id),
            score,
            line,
        });
    }
    Ok(out)
}

pub fn read_annotations(path: impl AsRef<Path>, catalog: &ClassCatalog) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(file, catalog).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn format_annotations<'a>(
    rows: impl IntoIterator<Item = (&'a str, &'a Annotation)>,
    catalog: &ClassCatalog,
) -> Result<String> {
    let mut s = String::from(ANNOTATION_HEADER);
    s.push('\n');
    for (frame, a) in rows {
        let name = &catalog.spec(a.class_id)?.name;
        s.push_str(&format!("{frame},{},{},{name}\n", a.range, a.azimuth));
    }
    Ok(s)
}

pub fn write_annotations<'a>(
    path: impl AsRef<Path>,
    rows: impl IntoIterator<Item = (&'a str, &'a Annotation)>,
    catalog: &ClassCatalog,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_annotations(rows, catalog)?).map_err(|e| Error::io(path, e))
}
