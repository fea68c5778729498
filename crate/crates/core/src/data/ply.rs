//! ASCII PLY point clouds with `x y z red green blue` vertex properties.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Positions in scene units with RGB colors in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColoredPointCloud {
    pub points: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
}

impl ColoredPointCloud {
    pub fn new(points: Vec<[f64; 3]>, colors: Vec<[f64; 3]>) -> Result<Self> {
        let pc = ColoredPointCloud { points, colors };
        pc.validate()?;
        Ok(pc)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.colors.len() {
            return Err(Error::InvalidInput(format!(
                "{} points but {} colors",
                self.points.len(),
                self.colors.len()
            )));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite point position".into()));
        }
        if self.colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput("color outside [0, 1]".into()));
        }
        Ok(())
    }
}

const PROPS: [(&str, &[&str]); 6] = [
    ("x", &["float", "double", "float32", "float64"]),
    ("y", &["float", "double", "float32", "float64"]),
    ("z", &["float", "double", "float32", "float64"]),
    ("red", &["uchar", "uint8"]),
    ("green", &["uchar", "uint8"]),
    ("blue", &["uchar", "uint8"]),
];

pub fn parse_ply(text: &str) -> Result<ColoredPointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::parse(0, format!("unexpected end of file, expected {what}")))
    };
    let (n, l) = next("'ply'")?;
    if l != "ply" {
        return Err(Error::parse(n, "missing 'ply' magic"));
    }
    let mut count: Option<usize> = None;
    let mut props = 0;
    loop {
        let (n, l) = next("header line")?;
        let t: Vec<&str> = l.split_whitespace().collect();
        match t.as_slice() {
            ["format", "ascii", "1.0"] => {}
            ["format", ..] => return Err(Error::parse(n, "only 'format ascii 1.0' is supported")),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", c] if count.is_none() => {
                count = Some(c.parse().map_err(|_| Error::parse(n, "bad vertex count"))?);
            }
            ["element", ..] => return Err(Error::parse(n, "only a single vertex element is supported")),
            ["property", ty, name] => {
                let (want, types) = PROPS
                    .get(props)
                    .ok_or_else(|| Error::parse(n, "unexpected extra property"))?;
                if count.is_none() || name != want || !types.contains(ty) {
                    return Err(Error::parse(n, format!("expected property '{want}'")));
                }
                props += 1;
            }
            ["end_header"] => break,
            _ => return Err(Error::parse(n, format!("unrecognized header line '{l}'"))),
        }
    }
    let count = count.ok_or_else(|| Error::parse(0, "missing vertex element"))?;
    if props != PROPS.len() {
        return Err(Error::parse(0, "vertex element must have x y z red green blue"));
    }
    let mut pc = ColoredPointCloud::default();
    for _ in 0..count {
        let (n, l) = next("vertex line")?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 6 {
            return Err(Error::parse(n, format!("expected 6 values, found {}", t.len())));
        }
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = t[a]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(n, format!("bad coordinate '{}'", t[a])))?;
        }
        let mut c = [0.0; 3];
        for a in 0..3 {
            let v: u8 = t[3 + a]
                .parse()
                .map_err(|_| Error::parse(n, format!("bad color '{}'", t[3 + a])))?;
            c[a] = v as f64 / 255.0;
        }
        pc.points.push(p);
        pc.colors.push(c);
    }
    if let Some((n, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::parse(n, format!("trailing data '{l}'")));
    }
    Ok(pc)
}

/// Positions are written in shortest round-trip form; colors are quantized
/// to 8 bits.
pub fn format_ply(pc: &ColoredPointCloud) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        pc.len()
    );
    for (p, c) in pc.points.iter().zip(&pc.colors) {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        s.push_str(&format!("{:?} {:?} {:?} {} {} {}\n", p[0], p[1], p[2], q(c[0]), q(c[1]), q(c[2])));
    }
    s
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<ColoredPointCloud> {
    let bytes = fs::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::format(e.valid_up_to() as u64, "PLY is not UTF-8 text"))?;
    parse_ply(text)
}

pub fn save_ply(pc: &ColoredPointCloud, path: impl AsRef<Path>) -> Result<()> {
    pc.validate()?;
    fs::write(path, format_ply(pc))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cloud(n: usize) -> ColoredPointCloud {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let points = (0..n).map(|_| [rng.random_range(-50.0..50.0), rng.random(), rng.random::<f64>() * 1e-9]).collect();
        let colors = (0..n)
            .map(|_| [0, 1, 2].map(|_| rng.random_range(0..=255u8) as f64 / 255.0))
            .collect();
        ColoredPointCloud::new(points, colors).unwrap()
    }

    #[test]
    fn roundtrip_is_identical() {
        let pc = cloud(100);
        assert_eq!(parse_ply(&format_ply(&pc)).unwrap(), pc);
    }

    #[test]
    fn malformed_files_name_the_line() {
        let good = format_ply(&cloud(3));
        assert!(matches!(parse_ply(&good.replacen("ply", "plx", 1)), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_ply(&good.replace("property uchar red", "property uchar r")), Err(Error::Parse { line: 7, .. })));
        let short: String = good.lines().take(11).map(|l| format!("{l}\n")).collect();
        assert!(parse_ply(&short).is_err());
        let mut extra = good.clone();
        extra.push_str("1 2 3 4 5 6\n");
        assert!(matches!(parse_ply(&extra), Err(Error::Parse { line: 14, .. })));
        let mut lines: Vec<&str> = good.lines().collect();
        lines[10] = "0 0 0 256 0 0";
        let bad_color = lines.join("\n");
        assert!(matches!(parse_ply(&bad_color), Err(Error::Parse { line: 11, .. })));
    }
}
