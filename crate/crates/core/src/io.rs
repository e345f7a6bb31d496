//! Point-cloud files: ASCII PLY with float `x y z` vertex properties, and CSV
//! with an `x,y,z` header. Values are written with 17 significant digits so
//! a write/read round trip is lossless.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};

/// Reads a cloud, choosing the format from the file extension (`.ply`,
/// anything else is treated as CSV).
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = read_text(path)?;
    if is_ply(path) {
        parse_ply(&text)
    } else {
        parse_csv(&text)
    }
}

/// Writes a cloud in the format implied by the file extension.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let text = if is_ply(path) { format_ply(cloud) } else { format_csv(cloud) };
    let mut f = fs::File::create(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Reads a whole text file, naming the path in any I/O error.
pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

fn is_ply(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

fn number(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV text with an `x,y,z` header.
pub fn format_csv(cloud: &PointCloud) -> String {
    let mut s = String::from("x,y,z\n");
    for p in cloud.iter() {
        s.push_str(&format!("{},{},{}\n", number(p.x), number(p.y), number(p.z)));
    }
    s
}

/// ASCII PLY text with a single double-precision vertex element.
pub fn format_ply(cloud: &PointCloud) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    );
    for p in cloud.iter() {
        s.push_str(&format!("{} {} {}\n", number(p.x), number(p.y), number(p.z)));
    }
    s
}

fn parse_value(field: &str, line: usize, name: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("column '{name}': cannot parse '{}' as a number", field.trim())))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("column '{name}': non-finite value")));
    }
    Ok(v)
}

/// Parses CSV text; extra columns are ignored and header names are
/// matched case-insensitively.
pub fn parse_csv(text: &str) -> Result<PointCloud> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(1, e.to_string()))?.clone();
    let mut columns = [0usize; 3];
    for (slot, name) in columns.iter_mut().zip(["x", "y", "z"]) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::parse(1, format!("missing column '{name}'")))?;
    }
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut xyz = [0.0; 3];
        for ((v, &c), name) in xyz.iter_mut().zip(&columns).zip(["x", "y", "z"]) {
            let field = record.get(c).ok_or_else(|| Error::parse(line, format!("missing column '{name}'")))?;
            *v = parse_value(field, line, name)?;
        }
        points.push(Point::new(xyz[0], xyz[1], xyz[2]));
    }
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(PointCloud::new(points))
}

/// Parses ASCII PLY text; the vertex element must precede any other
/// element, whose rows are ignored.
pub fn parse_ply(text: &str) -> Result<PointCloud> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    if lines.next().map(|(_, l)| l) != Some("ply") {
        return Err(Error::parse(1, "missing 'ply' magic"));
    }
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut properties: Vec<String> = Vec::new();
    let mut ended = false;
    let mut last = 1;
    for (n, line) in lines.by_ref() {
        last = n;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(Error::parse(n, format!("unsupported format '{other}'"))),
            ["element", name, count] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    let c: usize = count.parse().map_err(|_| Error::parse(n, format!("bad vertex count '{count}'")))?;
                    vertex_count = Some(c);
                } else if vertex_count.is_none() {
                    return Err(Error::parse(n, "vertex element must come first"));
                }
            }
            ["property", "list", ..] if in_vertex => return Err(Error::parse(n, "list property on vertex element")),
            ["property", _, name] if in_vertex => properties.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => {
                ended = true;
                break;
            }
            _ => return Err(Error::parse(n, format!("unexpected header line '{line}'"))),
        }
    }
    if !ended {
        return Err(Error::parse(last, "missing end_header"));
    }
    let count = vertex_count.ok_or_else(|| Error::parse(last, "no vertex element"))?;
    let mut columns = [0usize; 3];
    for (slot, name) in columns.iter_mut().zip(["x", "y", "z"]) {
        *slot = properties
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::parse(last, format!("missing property '{name}'")))?;
    }
    let mut points = Vec::with_capacity(count);
    for (n, line) in lines {
        if points.len() == count {
            break;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < properties.len() {
            return Err(Error::parse(n, format!("expected {} values, got {}", properties.len(), fields.len())));
        }
        let mut xyz = [0.0; 3];
        for ((v, &c), name) in xyz.iter_mut().zip(&columns).zip(["x", "y", "z"]) {
            *v = parse_value(fields[c], n, name)?;
        }
        points.push(Point::new(xyz[0], xyz[1], xyz[2]));
        last = n;
    }
    if points.len() < count {
        return Err(Error::parse(last, format!("expected {count} vertices, got {}", points.len())));
    }
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(PointCloud::new(points))
}
