//! STL reading and writing (binary and ASCII).
//!
//! Vertices are welded on read by exact coordinate equality.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::TriMesh;
use crate::linalg::Vec3;
use crate::scalar::Real;

const HEADER_LEN: usize = 80;
const FACET_LEN: usize = 50;

pub fn read_stl<T: Real>(path: impl AsRef<Path>) -> Result<TriMesh<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_stl(&bytes)
}

pub fn write_stl<T: Real>(mesh: &TriMesh<T>, path: impl AsRef<Path>, binary: bool) -> Result<()> {
    let path = path.as_ref();
    let bytes = if binary {
        to_binary_stl(mesh)
    } else {
        to_ascii_stl(mesh, "hullspace").into_bytes()
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses STL bytes, detecting binary vs ASCII.
pub fn parse_stl<T: Real>(bytes: &[u8]) -> Result<TriMesh<T>> {
    if bytes.is_empty() {
        return Err(Error::Parse {
            offset: 0,
            message: "empty file".into(),
        });
    }
    if bytes.len() >= HEADER_LEN + 4 {
        let count = u32::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 4].try_into().unwrap()) as usize;
        if HEADER_LEN + 4 + count * FACET_LEN == bytes.len() {
            return parse_binary(bytes, count);
        }
    }
    let trimmed = bytes.iter().position(|b| !b.is_ascii_whitespace()).unwrap_or(bytes.len());
    if bytes[trimmed..].starts_with(b"solid") {
        return parse_ascii(bytes);
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: "file too short for a binary STL header".into(),
        });
    }
    let count = u32::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 4].try_into().unwrap()) as usize;
    Err(Error::Parse {
        offset: HEADER_LEN,
        message: format!(
            "binary facet count {count} implies {} bytes, file has {}",
            HEADER_LEN + 4 + count * FACET_LEN,
            bytes.len()
        ),
    })
}

struct Welder<T> {
    index: HashMap<[u64; 3], usize>,
    vertices: Vec<Vec3<T>>,
    triangles: Vec<[usize; 3]>,
}

impl<T: Real> Welder<T> {
    fn new() -> Self {
        Self {
            index: HashMap::new(),
            vertices: Vec::new(),
            triangles: Vec::new(),
        }
    }

    fn vertex(&mut self, v: [f64; 3], offset: usize) -> Result<usize> {
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::Parse {
                offset,
                message: "non-finite vertex coordinate".into(),
            });
        }
        // +0.0 and -0.0 are the same point
        let key = v.map(|c| if c == 0.0 { 0u64 } else { c.to_bits() });
        let next = self.vertices.len();
        let id = *self.index.entry(key).or_insert(next);
        if id == next {
            self.vertices.push(Vec3::from_f64(v));
        }
        Ok(id)
    }

    fn facet(&mut self, corners: [[f64; 3]; 3], offset: usize) -> Result<()> {
        let a = self.vertex(corners[0], offset)?;
        let b = self.vertex(corners[1], offset)?;
        let c = self.vertex(corners[2], offset)?;
        if a == b || b == c || a == c {
            return Err(Error::Parse {
                offset,
                message: "degenerate facet (repeated vertex)".into(),
            });
        }
        self.triangles.push([a, b, c]);
        Ok(())
    }

    fn finish(self) -> Result<TriMesh<T>> {
        TriMesh::new(self.vertices, self.triangles)
    }
}

fn parse_binary<T: Real>(bytes: &[u8], count: usize) -> Result<TriMesh<T>> {
    let mut w = Welder::new();
    for f in 0..count {
        let base = HEADER_LEN + 4 + f * FACET_LEN;
        let read = |k: usize| {
            let o = base + 4 * k;
            f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64
        };
        // skip the stored normal (k = 0..3); it is recomputed from the winding
        let corners = [
            [read(3), read(4), read(5)],
            [read(6), read(7), read(8)],
            [read(9), read(10), read(11)],
        ];
        w.facet(corners, base)?;
    }
    w.finish()
}

struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        let rest = &self.text[self.pos..];
        let start = rest.find(|c: char| !c.is_whitespace())?;
        let tail = &rest[start..];
        let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
        let offset = self.pos + start;
        self.pos = offset + len;
        Some((offset, &tail[..len]))
    }

    fn rest_of_line(&mut self) {
        match self.text[self.pos..].find('\n') {
            Some(i) => self.pos += i + 1,
            None => self.pos = self.text.len(),
        }
    }

    fn expect(&mut self, word: &str) -> Result<usize> {
        match self.next() {
            Some((o, t)) if t == word => Ok(o),
            Some((o, t)) => Err(Error::Parse {
                offset: o,
                message: format!("expected `{word}`, found `{t}`"),
            }),
            None => Err(Error::Parse {
                offset: self.text.len(),
                message: format!("expected `{word}`, found end of file"),
            }),
        }
    }

    fn number(&mut self) -> Result<f64> {
        match self.next() {
            Some((o, t)) => t.parse::<f64>().map_err(|_| Error::Parse {
                offset: o,
                message: format!("invalid number `{t}`"),
            }),
            None => Err(Error::Parse {
                offset: self.text.len(),
                message: "expected number, found end of file".into(),
            }),
        }
    }
}

fn parse_ascii<T: Real>(bytes: &[u8]) -> Result<TriMesh<T>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        offset: e.valid_up_to(),
        message: "ASCII STL is not valid UTF-8".into(),
    })?;
    let mut tok = Tokens { text, pos: 0 };
    tok.expect("solid")?;
    tok.rest_of_line();
    let mut w = Welder::new();
    loop {
        let Some((offset, word)) = tok.next() else {
            return Err(Error::Parse {
                offset: text.len(),
                message: "missing `endsolid`".into(),
            });
        };
        match word {
            "endsolid" => break,
            "facet" => {
                tok.expect("normal")?;
                for _ in 0..3 {
                    tok.number()?;
                }
                tok.expect("outer")?;
                tok.expect("loop")?;
                let mut corners = [[0.0; 3]; 3];
                for c in corners.iter_mut() {
                    tok.expect("vertex")?;
                    for x in c.iter_mut() {
                        *x = tok.number()?;
                    }
                }
                tok.expect("endloop")?;
                tok.expect("endfacet")?;
                w.facet(corners, offset)?;
            }
            other => {
                return Err(Error::Parse {
                    offset,
                    message: format!("expected `facet` or `endsolid`, found `{other}`"),
                })
            }
        }
    }
    w.finish()
}

fn facet_normal(a: [f32; 3], b: [f32; 3], c: [f32; 3]) -> [f32; 3] {
    let d = |p: [f32; 3], q: [f32; 3]| [0, 1, 2].map(|k| q[k] as f64 - p[k] as f64);
    let (u, v) = (d(a, b), d(a, c));
    let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if len > 0.0 {
        n.map(|x| (x / len) as f32)
    } else {
        [0.0; 3]
    }
}

fn unit_normal<T: Real>(mesh: &TriMesh<T>, t: usize) -> Vec3<T> {
    let n = mesh.area_normal(t);
    let len = n.norm();
    if len > T::zero() {
        n * (T::one() / len)
    } else {
        Vec3::zero()
    }
}

pub fn to_binary_stl<T: Real>(mesh: &TriMesh<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 + FACET_LEN * mesh.triangle_count());
    let mut header = [0u8; HEADER_LEN];
    let tag = b"binary STL written by hullspace";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.triangle_count() as u32).to_le_bytes());
    for t in 0..mesh.triangle_count() {
        // normals from the stored single-precision corners, so that
        // rewriting a file read from disk reproduces it exactly
        let [a, b, c] = mesh.corners(t).map(|p| [0, 1, 2].map(|k| p[k].as_f64() as f32));
        let n = facet_normal(a, b, c);
        for v in [n, a, b, c] {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

pub fn to_ascii_stl<T: Real>(mesh: &TriMesh<T>, name: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "solid {name}");
    for t in 0..mesh.triangle_count() {
        let n = unit_normal(mesh, t);
        let _ = writeln!(s, "  facet normal {:e} {:e} {:e}", n.x.as_f64(), n.y.as_f64(), n.z.as_f64());
        s.push_str("    outer loop\n");
        for v in mesh.corners(t) {
            let _ = writeln!(s, "      vertex {:e} {:e} {:e}", v.x.as_f64(), v.y.as_f64(), v.z.as_f64());
        }
        s.push_str("    endloop\n  endfacet\n");
    }
    let _ = writeln!(s, "endsolid {name}");
    s
}
