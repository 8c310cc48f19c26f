//! ASCII point cloud formats: XYZ, PLY 1.0 and OFF.
//!
//! Only the vertex positions are extracted; faces and extra per-vertex
//! properties are discarded. Binary PLY is deliberately unsupported —
//! convert before loading.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::point::{Point3, PointCloud};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn cloud_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_coord(tok: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("expected a number, got '{tok}'")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite coordinate '{tok}'")));
    }
    Ok(v)
}

/// Whitespace-separated `x y z [extra...]` lines; blank lines and lines
/// starting with `#` are skipped. Point order follows file order.
pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut points = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut toks = trimmed.split_whitespace();
        let mut next = |what: &str| -> Result<f64> {
            let tok = toks
                .next()
                .ok_or_else(|| parse_err(path, lineno, format!("missing {what} column")))?;
            parse_coord(tok, path, lineno)
        };
        let (x, y, z) = (next("x")?, next("y")?, next("z")?);
        points.push(Point3::new(x, y, z));
    }
    Ok(PointCloud::new(points, cloud_name(path)))
}

/// Write a cloud as XYZ. Coordinates use Rust's shortest-roundtrip float
/// formatting, so identical clouds produce byte-identical files.
pub fn write_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(cloud.len() * 24);
    for p in &cloud.points {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    let mut f = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(out.as_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct PlyElement {
    name: String,
    count: usize,
    /// Scalar property names in declaration order; list properties are
    /// rejected for the vertex element and tolerated elsewhere.
    properties: Vec<String>,
    has_list: bool,
}

/// ASCII PLY 1.0. Requires float x/y/z properties on the vertex element;
/// everything else (normals, colors, faces) is ignored.
pub fn load_ply_ascii(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut lines = reader.lines().enumerate().map(|(i, l)| {
        (
            i + 1,
            l.map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            }),
        )
    });

    let mut next_line = || -> Result<Option<(usize, String)>> {
        match lines.next() {
            Some((n, Ok(l))) => Ok(Some((n, l))),
            Some((_, Err(e))) => Err(e),
            None => Ok(None),
        }
    };

    // Header.
    let (n, magic) = next_line()?.ok_or_else(|| parse_err(path, 1, "empty file"))?;
    if magic.trim() != "ply" {
        return Err(parse_err(path, n, "missing 'ply' magic"));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut format_seen = false;
    loop {
        let (n, line) = next_line()?
            .ok_or_else(|| parse_err(path, 0, "unexpected end of file inside header"))?;
        let line = line.trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                let kind = toks.next().unwrap_or("");
                if kind != "ascii" {
                    return Err(Error::UnsupportedFormat(format!(
                        "PLY format '{kind}' (only ascii 1.0 is supported)"
                    )));
                }
                format_seen = true;
            }
            Some("element") => {
                let name = toks
                    .next()
                    .ok_or_else(|| parse_err(path, n, "element without a name"))?;
                let count: usize = toks
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(path, n, "element without a count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, n, "property before any element"))?;
                let rest: Vec<&str> = toks.collect();
                if rest.first() == Some(&"list") {
                    el.has_list = true;
                } else if let Some(name) = rest.last() {
                    el.properties.push(name.to_string());
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(parse_err(path, n, format!("unknown header keyword '{other}'")));
            }
        }
    }
    if !format_seen {
        return Err(parse_err(path, 0, "header has no 'format' line"));
    }

    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err(path, 0, "no vertex element declared"))?;
    let vertex = &elements[vertex_pos];
    if vertex.has_list {
        return Err(parse_err(
            path,
            0,
            "list property on the vertex element is not supported",
        ));
    }
    let coord_cols: Vec<usize> = ["x", "y", "z"]
        .iter()
        .map(|axis| {
            vertex
                .properties
                .iter()
                .position(|p| p == axis)
                .ok_or_else(|| parse_err(path, 0, format!("vertex element missing property '{axis}'")))
        })
        .collect::<Result<_>>()?;

    // Body: elements appear in declaration order; skip everything that
    // precedes the vertices, read the vertices, ignore the rest.
    for el in &elements[..vertex_pos] {
        for _ in 0..el.count {
            next_line()?.ok_or_else(|| {
                parse_err(path, 0, format!("truncated '{}' element data", el.name))
            })?;
        }
    }
    let mut points = Vec::with_capacity(vertex.count);
    for i in 0..vertex.count {
        let (n, line) = next_line()?.ok_or_else(|| {
            parse_err(
                path,
                0,
                format!("truncated vertex data: expected {} rows, got {i}", vertex.count),
            )
        })?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        let coord = |c: usize| -> Result<f64> {
            let tok = cols
                .get(c)
                .ok_or_else(|| parse_err(path, n, format!("vertex row has only {} columns", cols.len())))?;
            parse_coord(tok, path, n)
        };
        points.push(Point3::new(
            coord(coord_cols[0])?,
            coord(coord_cols[1])?,
            coord(coord_cols[2])?,
        ));
    }
    Ok(PointCloud::new(points, cloud_name(path)))
}

/// OFF mesh files (ModelNet's native format). Reads the vertex list,
/// discards faces. Accepts both the `OFF\n<nv> <nf> <ne>` form and the
/// single-line `OFF <nv> <nf> <ne>` variant.
pub fn load_off(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(line) => {
            let t = line.trim().to_string();
            if t.is_empty() || t.starts_with('#') {
                None
            } else {
                Some(Ok((i + 1, t)))
            }
        }
        Err(source) => Some(Err(Error::Io {
            path: path.to_path_buf(),
            source,
        })),
    });

    let (n, first) = lines
        .next()
        .transpose()?
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let counts_line: (usize, String);
    if first == "OFF" {
        counts_line = lines
            .next()
            .transpose()?
            .ok_or_else(|| parse_err(path, n, "missing vertex/face count line"))?;
    } else if let Some(rest) = first.strip_prefix("OFF") {
        counts_line = (n, rest.trim().to_string());
    } else {
        return Err(parse_err(path, n, "missing OFF magic"));
    }

    let (cn, counts) = counts_line;
    let nums: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(path, cn, format!("bad count line '{counts}'")))?;
    if nums.len() < 2 {
        return Err(parse_err(path, cn, "count line needs at least <nv> <nf>"));
    }
    let n_vertices = nums[0];

    let mut points = Vec::with_capacity(n_vertices);
    for i in 0..n_vertices {
        let (n, line) = lines.next().transpose()?.ok_or_else(|| {
            parse_err(
                path,
                0,
                format!("truncated vertex list: expected {n_vertices} rows, got {i}"),
            )
        })?;
        let mut toks = line.split_whitespace();
        let mut next = |what: &str| -> Result<f64> {
            let tok = toks
                .next()
                .ok_or_else(|| parse_err(path, n, format!("missing {what} column")))?;
            parse_coord(tok, path, n)
        };
        points.push(Point3::new(next("x")?, next("y")?, next("z")?));
    }
    // Face rows are intentionally not read.
    Ok(PointCloud::new(points, cloud_name(path)))
}

/// Dispatch on file extension: `.xyz`, `.ply`, `.off`.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("xyz") | Some("txt") => load_xyz(path),
        Some("ply") => load_ply_ascii(path),
        Some("off") => load_off(path),
        other => Err(Error::UnsupportedFormat(format!(
            "unknown point cloud extension {:?} for {} (expected .xyz, .ply or .off)",
            other.unwrap_or(""),
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn tmp_file(contents: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new()
            .suffix(&format!(".{ext}"))
            .tempfile()
            .unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn xyz_two_points() {
        let f = tmp_file("0 0 0\n1 0 0\n", "xyz");
        let cloud = load_xyz(f.path()).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points[1], Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn xyz_reports_line_number() {
        let f = tmp_file("a b c\n", "xyz");
        match load_xyz(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn xyz_skips_comments_and_extra_columns() {
        let f = tmp_file("# comment\n0.5 0.5 0.5 128 0 255\n", "xyz");
        let cloud = load_xyz(f.path()).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.points[0], Point3::new(0.5, 0.5, 0.5));
    }

    #[test]
    fn xyz_rejects_non_finite() {
        let f = tmp_file("0 0 0\nnan 1 2\n", "xyz");
        match load_xyz(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn xyz_missing_file_is_io_error() {
        assert!(matches!(
            load_xyz("/nonexistent/file.xyz"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn xyz_roundtrip_is_byte_stable() {
        let cloud = PointCloud::new(
            vec![Point3::new(0.1, -0.25, 1e-17), Point3::new(3.5, 0.0, -2.0)],
            "rt",
        );
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.xyz");
        let p2 = dir.path().join("b.xyz");
        write_xyz(&cloud, &p1).unwrap();
        write_xyz(&cloud, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let back = load_xyz(&p1).unwrap();
        assert_eq!(back.points, cloud.points);
    }

    const MINIMAL_PLY: &str = "ply\nformat ascii 1.0\nelement vertex 1\n\
        property float x\nproperty float y\nproperty float z\nend_header\n0.5 1.5 -2.5\n";

    #[test]
    fn ply_minimal_vertex() {
        let f = tmp_file(MINIMAL_PLY, "ply");
        let cloud = load_ply_ascii(f.path()).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.points[0], Point3::new(0.5, 1.5, -2.5));
    }

    #[test]
    fn ply_truncated_vertices() {
        let body = "ply\nformat ascii 1.0\nelement vertex 3\n\
            property float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 1 1\n";
        let f = tmp_file(body, "ply");
        assert!(matches!(load_ply_ascii(f.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn ply_extra_properties_ignored() {
        let body = "ply\nformat ascii 1.0\nelement vertex 2\n\
            property float x\nproperty float y\nproperty float z\n\
            property float nx\nproperty float ny\nproperty float nz\nend_header\n\
            1 2 3 0 0 1\n4 5 6 0 1 0\n";
        let f = tmp_file(body, "ply");
        let cloud = load_ply_ascii(f.path()).unwrap();
        assert_eq!(cloud.points[0], Point3::new(1.0, 2.0, 3.0));
        assert_eq!(cloud.points[1], Point3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn ply_binary_unsupported() {
        let body = "ply\nformat binary_little_endian 1.0\nelement vertex 1\n\
            property float x\nproperty float y\nproperty float z\nend_header\n";
        let f = tmp_file(body, "ply");
        assert!(matches!(
            load_ply_ascii(f.path()),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn ply_missing_coordinate_property() {
        let body = "ply\nformat ascii 1.0\nelement vertex 1\n\
            property float x\nproperty float y\nend_header\n0 0\n";
        let f = tmp_file(body, "ply");
        assert!(matches!(load_ply_ascii(f.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn ply_faces_ignored() {
        let body = "ply\nformat ascii 1.0\nelement vertex 3\n\
            property float x\nproperty float y\nproperty float z\n\
            element face 1\nproperty list uchar int vertex_indices\nend_header\n\
            0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let f = tmp_file(body, "ply");
        let cloud = load_ply_ascii(f.path()).unwrap();
        assert_eq!(cloud.len(), 3);
    }

    #[test]
    fn off_single_vertex() {
        let f = tmp_file("OFF\n1 0 0\n0 0 0\n", "off");
        let cloud = load_off(f.path()).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.points[0], Point3::ORIGIN);
    }

    #[test]
    fn off_missing_magic() {
        let f = tmp_file("1 0 0\n0 0 0\n", "off");
        assert!(matches!(load_off(f.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn off_tetrahedron_discards_faces() {
        let body = "OFF\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n\
            3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";
        let f = tmp_file(body, "off");
        let cloud = load_off(f.path()).unwrap();
        assert_eq!(cloud.len(), 4);
        assert_eq!(cloud.points[3], Point3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn off_single_line_header() {
        let f = tmp_file("OFF 2 0 0\n0 0 0\n1 1 1\n", "off");
        let cloud = load_off(f.path()).unwrap();
        assert_eq!(cloud.len(), 2);
    }

    #[test]
    fn off_truncated() {
        let f = tmp_file("OFF\n3 0 0\n0 0 0\n", "off");
        assert!(matches!(load_off(f.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn dispatch_by_extension() {
        let f = tmp_file("0 0 0\n", "xyz");
        assert_eq!(load_cloud(f.path()).unwrap().len(), 1);
        let f = tmp_file(MINIMAL_PLY, "ply");
        assert_eq!(load_cloud(f.path()).unwrap().len(), 1);
        let f = tmp_file("OFF\n1 0 0\n0 0 0\n", "off");
        assert_eq!(load_cloud(f.path()).unwrap().len(), 1);
        let f = tmp_file("", "pcd");
        assert!(matches!(
            load_cloud(f.path()),
            Err(Error::UnsupportedFormat(_))
        ));
    }
}
