//! ASCII point-cloud files: XYZ, OFF (vertices only) and PLY.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::geom::{Point, PointCloud};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Off,
    Ply,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .ok_or_else(|| Error::UnsupportedFormat(format!("{} has no extension", path.display())))?;
        ext.parse()
    }

    pub fn name(self) -> &'static str {
        match self {
            CloudFormat::Xyz => "xyz",
            CloudFormat::Off => "off",
            CloudFormat::Ply => "ply",
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" | "txt" => Ok(CloudFormat::Xyz),
            "off" => Ok(CloudFormat::Off),
            "ply" => Ok(CloudFormat::Ply),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(&text, format, path)
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    fs::write(path, format_cloud(cloud, format)).map_err(|e| Error::io(path, e))
}

/// Shortest decimal with at most 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{}", if x == 0.0 { 0.0 } else { x });
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn format_cloud(cloud: &PointCloud, format: CloudFormat) -> String {
    let mut out = String::new();
    match format {
        CloudFormat::Xyz => {}
        CloudFormat::Off => {
            let _ = writeln!(out, "OFF\n{} 0 0", cloud.len());
        }
        CloudFormat::Ply => {
            let _ = write!(
                out,
                "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
                cloud.len()
            );
        }
    }
    for p in cloud.points() {
        let _ = writeln!(out, "{} {} {}", format_sig9(p.x), format_sig9(p.y), format_sig9(p.z));
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, path: &'a Path) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            path,
            last: 0,
        }
    }

    /// Next line that is neither blank nor a `#` comment, with its 1-based number.
    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                return Some((i + 1, t));
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let last = self.last;
        self.next_content().ok_or_else(|| self.err(last + 1, format!("unexpected end of file, expected {what}")))
    }

    fn err(&self, line: usize, detail: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            detail: detail.into(),
        }
    }
}

fn parse_numbers(lines: &Lines<'_>, line: usize, text: &str, count: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| lines.err(line, format!("`{t}` is not a number"))))
        .collect::<Result<_>>()?;
    if values.len() < count {
        return Err(lines.err(line, format!("expected {count} values, found {}", values.len())));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(lines.err(line, format!("non-finite value {v}")));
    }
    Ok(values)
}

fn parse_count(lines: &Lines<'_>, line: usize, token: Option<&str>, what: &str) -> Result<usize> {
    token
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| lines.err(line, format!("missing or invalid {what}")))
}

pub fn parse_cloud(text: &str, format: CloudFormat, path: &Path) -> Result<PointCloud> {
    let mut lines = Lines::new(text, path);
    let mut points = Vec::new();
    match format {
        CloudFormat::Xyz => {
            while let Some((n, t)) = lines.next_content() {
                let v = parse_numbers(&lines, n, t, 3)?;
                if v.len() != 3 {
                    return Err(lines.err(n, format!("expected 3 values, found {}", v.len())));
                }
                points.push(Point::new(v[0], v[1], v[2]));
            }
        }
        CloudFormat::Off => {
            let (n, header) = lines.expect("OFF header")?;
            let rest = header
                .strip_prefix("OFF")
                .ok_or_else(|| lines.err(n, "missing OFF header"))?
                .trim();
            let (n, counts) = if rest.is_empty() { lines.expect("vertex count")? } else { (n, rest) };
            let nv = parse_count(&lines, n, counts.split_whitespace().next(), "vertex count")?;
            for _ in 0..nv {
                let (n, t) = lines.expect("vertex line")?;
                let v = parse_numbers(&lines, n, t, 3)?;
                points.push(Point::new(v[0], v[1], v[2]));
            }
        }
        CloudFormat::Ply => {
            let (n, magic) = lines.expect("ply header")?;
            if magic != "ply" {
                return Err(lines.err(n, "missing `ply` magic"));
            }
            let mut nv = None;
            let mut in_vertex = false;
            let mut props: Vec<String> = Vec::new();
            loop {
                let (n, t) = lines.expect("end_header")?;
                let mut tok = t.split_whitespace();
                match tok.next() {
                    Some("format") => {
                        if tok.next() != Some("ascii") {
                            return Err(Error::UnsupportedFormat("binary PLY".into()));
                        }
                    }
                    Some("comment") | Some("obj_info") => {}
                    Some("element") => {
                        let name = tok.next();
                        in_vertex = name == Some("vertex");
                        if in_vertex {
                            nv = Some(parse_count(&lines, n, tok.next(), "vertex count")?);
                        }
                    }
                    Some("property") => {
                        if in_vertex {
                            props.push(t.split_whitespace().last().unwrap_or_default().to_string());
                        }
                    }
                    Some("end_header") => break,
                    _ => return Err(lines.err(n, format!("unexpected header line `{t}`"))),
                }
            }
            let nv = nv.ok_or_else(|| lines.err(lines.last, "no vertex element"))?;
            let index = |name: &str| props.iter().position(|p| p == name);
            let (Some(ix), Some(iy), Some(iz)) = (index("x"), index("y"), index("z")) else {
                return Err(lines.err(lines.last, "vertex element lacks x/y/z properties"));
            };
            for _ in 0..nv {
                let (n, t) = lines.expect("vertex line")?;
                let v = parse_numbers(&lines, n, t, props.len())?;
                points.push(Point::new(v[ix], v[iy], v[iz]));
            }
        }
    }
    if points.is_empty() {
        return Err(lines.err(lines.last.max(1), "no points"));
    }
    PointCloud::new(points)
}
