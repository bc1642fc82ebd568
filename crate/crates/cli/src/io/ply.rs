//! Minimal PLY reader/writer: ascii and binary (either endianness), scalar
//! and list properties. Every value is carried as `f64`, which holds all
//! PLY scalar types exactly, so re-saving with the declared types
//! reproduces the payload bit for bit.

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Scalar::I8 => "char",
            Scalar::U8 => "uchar",
            Scalar::I16 => "short",
            Scalar::U16 => "ushort",
            Scalar::I32 => "int",
            Scalar::U32 => "uint",
            Scalar::F32 => "float",
            Scalar::F64 => "double",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], big: bool) -> f64 {
        macro_rules! get {
            ($t:ty, $n:expr) => {{
                let a: [u8; $n] = b[..$n].try_into().unwrap();
                (if big {
                    <$t>::from_be_bytes(a)
                } else {
                    <$t>::from_le_bytes(a)
                }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => get!(i16, 2),
            Scalar::U16 => get!(u16, 2),
            Scalar::I32 => get!(i32, 4),
            Scalar::U32 => get!(u32, 4),
            Scalar::F32 => get!(f32, 4),
            Scalar::F64 => get!(f64, 8),
        }
    }

    fn encode(self, v: f64, out: &mut Vec<u8>) {
        match self {
            Scalar::I8 => out.push(v as i8 as u8),
            Scalar::U8 => out.push(v as u8),
            Scalar::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            Scalar::U16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            Scalar::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            Scalar::U32 => out.extend_from_slice(&(v as u32).to_le_bytes()),
            Scalar::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Scalar::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Kind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Property {
    pub name: String,
    pub kind: Kind,
}

impl Property {
    pub fn scalar(name: &str, ty: Scalar) -> Self {
        Self {
            name: name.into(),
            kind: Kind::Scalar(ty),
        }
    }

    pub fn list(name: &str, count: Scalar, item: Scalar) -> Self {
        Self {
            name: name.into(),
            kind: Kind::List { count, item },
        }
    }
}

/// One element block. Scalar properties are stored column-wise in
/// `columns`; list properties row-wise in `lists`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
    pub columns: Vec<Vec<f64>>,
    pub lists: Vec<Vec<Vec<f64>>>,
}

impl Element {
    pub fn new(name: &str, count: usize) -> Self {
        Self {
            name: name.into(),
            count,
            ..Default::default()
        }
    }

    pub fn push_scalar(&mut self, name: &str, ty: Scalar, values: Vec<f64>) {
        assert_eq!(values.len(), self.count, "column `{name}` length");
        self.properties.push(Property::scalar(name, ty));
        self.columns.push(values);
        self.lists.push(Vec::new());
    }

    pub fn push_list(&mut self, name: &str, count: Scalar, item: Scalar, rows: Vec<Vec<f64>>) {
        assert_eq!(rows.len(), self.count, "list `{name}` length");
        self.properties.push(Property::list(name, count, item));
        self.columns.push(Vec::new());
        self.lists.push(rows);
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        let i = self.index(name)?;
        matches!(self.properties[i].kind, Kind::Scalar(_)).then(|| self.columns[i].as_slice())
    }

    pub fn list(&self, name: &str) -> Option<&[Vec<f64>]> {
        let i = self.index(name)?;
        matches!(self.properties[i].kind, Kind::List { .. }).then(|| self.lists[i].as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyFile {
    pub format: Format,
    pub comments: Vec<String>,
    pub elements: Vec<Element>,
}

impl PlyFile {
    pub fn new(elements: Vec<Element>) -> Self {
        Self {
            format: Format::BinaryLittleEndian,
            comments: Vec::new(),
            elements,
        }
    }

    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }

    /// Serializes as binary little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
        for c in &self.comments {
            header.push_str(&format!("comment {c}\n"));
        }
        for e in &self.elements {
            header.push_str(&format!("element {} {}\n", e.name, e.count));
            for p in &e.properties {
                match p.kind {
                    Kind::Scalar(s) => {
                        header.push_str(&format!("property {} {}\n", s.name(), p.name))
                    }
                    Kind::List { count, item } => header.push_str(&format!(
                        "property list {} {} {}\n",
                        count.name(),
                        item.name(),
                        p.name
                    )),
                }
            }
        }
        header.push_str("end_header\n");
        out.extend_from_slice(header.as_bytes());
        for e in &self.elements {
            for r in 0..e.count {
                for (k, p) in e.properties.iter().enumerate() {
                    match p.kind {
                        Kind::Scalar(s) => s.encode(e.columns[k][r], &mut out),
                        Kind::List { count, item } => {
                            let row = &e.lists[k][r];
                            count.encode(row.len() as f64, &mut out);
                            for &v in row {
                                item.encode(v, &mut out);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (format, comments, mut elements, body) = parse_header(bytes)?;
        match format {
            Format::Ascii => read_ascii(bytes, body, &mut elements)?,
            _ => read_binary(
                bytes,
                body,
                format == Format::BinaryBigEndian,
                &mut elements,
            )?,
        }
        Ok(Self {
            format,
            comments,
            elements,
        })
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Format, Vec<String>, Vec<Element>, usize)> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .with_context(|| format!("no `end_header` in the first {} bytes", bytes.len()))?;
    let mut body = end + END.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) != Some(&b'\n') {
        bail!("byte {body}: expected newline after end_header");
    }
    body += 1;
    let text = std::str::from_utf8(&bytes[..end]).context("header is not UTF-8")?;
    let mut format = None;
    let mut comments = Vec::new();
    let mut elements: Vec<Element> = Vec::new();
    let mut offset = 0;
    for (n, line) in text.lines().enumerate() {
        let at = offset;
        offset += line.len() + 1;
        let words: Vec<&str> = line.split_whitespace().collect();
        let fail = |m: &str| anyhow::anyhow!("byte {at} (header line {}): {m}: `{line}`", n + 1);
        match words.as_slice() {
            [] => {}
            ["ply"] if n == 0 => {}
            _ if n == 0 => return Err(fail("missing `ply` magic")),
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLittleEndian,
                    "binary_big_endian" => Format::BinaryBigEndian,
                    _ => return Err(fail("unknown format")),
                })
            }
            ["comment", ..] => {
                comments.push(line.trim_start()["comment".len()..].trim().to_string())
            }
            ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| fail("bad element count"))?;
                elements.push(Element::new(name, count));
            }
            ["property", "list", c, i, name] => {
                let e = elements
                    .last_mut()
                    .ok_or_else(|| fail("property before any element"))?;
                let count = Scalar::parse(c).ok_or_else(|| fail("unknown list count type"))?;
                let item = Scalar::parse(i).ok_or_else(|| fail("unknown list item type"))?;
                e.properties.push(Property::list(name, count, item));
            }
            ["property", ty, name] => {
                let e = elements
                    .last_mut()
                    .ok_or_else(|| fail("property before any element"))?;
                let s = Scalar::parse(ty).ok_or_else(|| fail("unknown property type"))?;
                e.properties.push(Property::scalar(name, s));
            }
            _ => return Err(fail("unrecognized header line")),
        }
    }
    let format = format.context("header has no format line")?;
    for e in &mut elements {
        let n = e.properties.len();
        e.columns = vec![Vec::with_capacity(e.count); n];
        e.lists = vec![Vec::new(); n];
    }
    Ok((format, comments, elements, body))
}

fn read_binary(bytes: &[u8], start: usize, big: bool, elements: &mut [Element]) -> Result<()> {
    let fixed = elements.iter().all(|e| {
        e.properties
            .iter()
            .all(|p| matches!(p.kind, Kind::Scalar(_)))
    });
    if fixed {
        let expected = start
            + elements
                .iter()
                .map(|e| {
                    e.count
                        * e.properties
                            .iter()
                            .map(|p| {
                                if let Kind::Scalar(s) = p.kind {
                                    s.size()
                                } else {
                                    0
                                }
                            })
                            .sum::<usize>()
                })
                .sum::<usize>();
        if bytes.len() != expected {
            bail!("expected {expected} bytes, got {}", bytes.len());
        }
    }
    let mut at = start;
    let mut take = |n: usize| -> Result<&[u8]> {
        if at + n > bytes.len() {
            bail!(
                "byte {at}: truncated, expected {} bytes, got {}",
                at + n,
                bytes.len()
            );
        }
        let s = &bytes[at..at + n];
        at += n;
        Ok(s)
    };
    for e in elements.iter_mut() {
        for _ in 0..e.count {
            for (k, p) in e.properties.iter().enumerate() {
                match p.kind {
                    Kind::Scalar(s) => e.columns[k].push(s.decode(take(s.size())?, big)),
                    Kind::List { count, item } => {
                        let n = count.decode(take(count.size())?, big);
                        if !(n >= 0.0) {
                            bail!("negative list length in `{}`", p.name);
                        }
                        let raw = take(n as usize * item.size())?;
                        e.lists[k].push(
                            raw.chunks_exact(item.size())
                                .map(|c| item.decode(c, big))
                                .collect(),
                        );
                    }
                }
            }
        }
    }
    if at != bytes.len() {
        bail!("expected {at} bytes, got {}", bytes.len());
    }
    Ok(())
}

fn read_ascii(bytes: &[u8], start: usize, elements: &mut [Element]) -> Result<()> {
    let text = std::str::from_utf8(&bytes[start..]).context("ascii body is not UTF-8")?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    for e in elements.iter_mut() {
        for r in 0..e.count {
            let line = lines.next().with_context(|| {
                format!(
                    "element `{}` row {r}: file ends after {} bytes",
                    e.name,
                    bytes.len()
                )
            })?;
            let mut words = line.split_whitespace().map(|w| {
                w.parse::<f64>()
                    .with_context(|| format!("element `{}` row {r}: bad number `{w}`", e.name))
            });
            let mut next = || {
                words
                    .next()
                    .with_context(|| format!("element `{}` row {r}: too few values", e.name))?
            };
            for (k, p) in e.properties.iter().enumerate() {
                match p.kind {
                    Kind::Scalar(_) => {
                        let v = next()?;
                        e.columns[k].push(v);
                    }
                    Kind::List { .. } => {
                        let n = next()? as usize;
                        let row = (0..n).map(|_| next()).collect::<Result<Vec<_>>>()?;
                        e.lists[k].push(row);
                    }
                }
            }
        }
    }
    Ok(())
}
