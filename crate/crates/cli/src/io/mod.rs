//! Asset files: colored meshes and Gaussian clouds as PLY, bound assets as
//! mesh PLY plus a binary sidecar, images as PNG.

pub mod ply;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use meshsplat::bind::DeformationStream;
use meshsplat::optimize::LossRecord;
use meshsplat::{BoundAsset, ColoredMesh, GaussianCloud3D, Image};

use ply::{Element, PlyFile, Scalar};

/// Zeroth spherical-harmonic basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const BOUND_MAGIC: &[u8; 4] = b"GDPB";
pub const BOUND_VERSION: u32 = 1;
const MID_GRAY: f64 = 0.5;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn column<'a>(e: &'a Element, name: &str) -> Result<&'a [f64]> {
    e.column(name)
        .with_context(|| format!("element `{}` has no scalar property `{name}`", e.name))
}

fn rows3(e: &Element, names: [&str; 3]) -> Result<Vec<[f64; 3]>> {
    let [a, b, c] = [
        column(e, names[0])?,
        column(e, names[1])?,
        column(e, names[2])?,
    ];
    Ok((0..e.count).map(|i| [a[i], b[i], c[i]]).collect())
}

pub fn mesh_to_ply(mesh: &ColoredMesh) -> PlyFile {
    let mut v = Element::new("vertex", mesh.vertices.len());
    for (k, name) in ["x", "y", "z"].iter().enumerate() {
        v.push_scalar(
            name,
            Scalar::F32,
            mesh.vertices.iter().map(|p| p[k]).collect(),
        );
    }
    for (k, name) in ["red", "green", "blue"].iter().enumerate() {
        v.push_scalar(
            name,
            Scalar::F32,
            mesh.colors.iter().map(|c| c[k]).collect(),
        );
    }
    let mut f = Element::new("face", mesh.triangles.len());
    f.push_list(
        "vertex_indices",
        Scalar::U8,
        Scalar::I32,
        mesh.triangles
            .iter()
            .map(|t| t.iter().map(|&i| i as f64).collect())
            .collect(),
    );
    PlyFile::new(vec![v, f])
}

/// Accepts float colors in [0, 1] or 8-bit colors; missing colors become
/// mid-gray. Polygons with more than three corners are fanned.
pub fn mesh_from_ply(p: &PlyFile) -> Result<ColoredMesh> {
    let v = p.element("vertex").context("no `vertex` element")?;
    let vertices = rows3(v, ["x", "y", "z"])?;
    let colors = match v.index("red") {
        None => vec![[MID_GRAY; 3]; vertices.len()],
        Some(i) => {
            let scale = match v.properties[i].kind {
                ply::Kind::Scalar(Scalar::F32 | Scalar::F64) => 1.0,
                _ => 1.0 / 255.0,
            };
            rows3(v, ["red", "green", "blue"])?
                .into_iter()
                .map(|c| c.map(|x| x * scale))
                .collect()
        }
    };
    let mut triangles = Vec::new();
    if let Some(f) = p.element("face") {
        let lists = f
            .list("vertex_indices")
            .or_else(|| f.list("vertex_index"))
            .context("face element has no `vertex_indices` list")?;
        for (r, poly) in lists.iter().enumerate() {
            ensure!(poly.len() >= 3, "face {r} has {} corners", poly.len());
            for k in 1..poly.len() - 1 {
                let t = [poly[0], poly[k], poly[k + 1]];
                ensure!(
                    t.iter().all(|&i| i >= 0.0 && (i as usize) < vertices.len()),
                    "face {r} indexes past {} vertices",
                    vertices.len()
                );
                triangles.push(t.map(|i| i as u32));
            }
        }
    }
    let mesh = ColoredMesh::new(vertices, colors, triangles);
    mesh.validate()?;
    Ok(mesh)
}

pub fn save_mesh(path: &Path, mesh: &ColoredMesh) -> Result<()> {
    write_bytes(path, &mesh_to_ply(mesh).to_bytes())
}

pub fn load_mesh(path: &Path) -> Result<ColoredMesh> {
    let p = PlyFile::from_bytes(&read_bytes(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    mesh_from_ply(&p).with_context(|| format!("loading mesh {}", path.display()))
}

const GAUSSIAN_FIELDS: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1",
    "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
];

/// A Gaussian point file in the common splatting layout. Columns are kept
/// as read, so properties this crate does not interpret (higher SH bands,
/// tool-specific fields) survive a load/save cycle untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFile {
    pub ply: PlyFile,
}

impl GaussianFile {
    pub fn from_cloud(cloud: &GaussianCloud3D) -> Self {
        let n = cloud.len();
        let mut v = Element::new("vertex", n);
        let col = |f: &dyn Fn(usize) -> f64| (0..n).map(f).collect::<Vec<f64>>();
        for k in 0..3 {
            v.push_scalar(
                GAUSSIAN_FIELDS[k],
                Scalar::F32,
                col(&|i| cloud.positions[i][k]),
            );
        }
        for k in 0..3 {
            v.push_scalar(GAUSSIAN_FIELDS[3 + k], Scalar::F32, vec![0.0; n]);
        }
        for k in 0..3 {
            v.push_scalar(
                GAUSSIAN_FIELDS[6 + k],
                Scalar::F32,
                col(&|i| (cloud.colors[i][k] - 0.5) / SH_C0),
            );
        }
        v.push_scalar("opacity", Scalar::F32, cloud.opacity_logits.clone());
        for k in 0..3 {
            v.push_scalar(
                GAUSSIAN_FIELDS[10 + k],
                Scalar::F32,
                col(&|i| cloud.log_scales[i][k]),
            );
        }
        for k in 0..4 {
            v.push_scalar(
                GAUSSIAN_FIELDS[13 + k],
                Scalar::F32,
                col(&|i| cloud.rotations[i][k]),
            );
        }
        Self {
            ply: PlyFile::new(vec![v]),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ply = PlyFile::from_bytes(bytes)?;
        let v = ply.element("vertex").context("no `vertex` element")?;
        for f in GAUSSIAN_FIELDS.iter().filter(|f| !f.starts_with('n')) {
            column(v, f)?;
        }
        Ok(Self { ply })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.ply.to_bytes()
    }

    fn vertex(&self) -> &Element {
        self.ply.element("vertex").expect("checked on load")
    }

    /// Property names outside the interpreted layout, in file order.
    pub fn extra_properties(&self) -> Vec<String> {
        self.vertex()
            .properties
            .iter()
            .map(|p| p.name.clone())
            .filter(|n| !GAUSSIAN_FIELDS.contains(&n.as_str()))
            .collect()
    }

    pub fn to_cloud(&self) -> Result<GaussianCloud3D> {
        let v = self.vertex();
        let c = |name: &str| column(v, name);
        let (x, y, z) = (c("x")?, c("y")?, c("z")?);
        let dc = [c("f_dc_0")?, c("f_dc_1")?, c("f_dc_2")?];
        let op = c("opacity")?;
        let s = [c("scale_0")?, c("scale_1")?, c("scale_2")?];
        let r = [c("rot_0")?, c("rot_1")?, c("rot_2")?, c("rot_3")?];
        let mut cloud = GaussianCloud3D::default();
        for i in 0..v.count {
            cloud.positions.push([x[i], y[i], z[i]]);
            cloud.colors.push(dc.map(|d| 0.5 + SH_C0 * d[i]));
            cloud.opacity_logits.push(op[i]);
            cloud.log_scales.push(s.map(|d| d[i]));
            cloud.rotations.push(r.map(|d| d[i]));
        }
        cloud.validate()?;
        Ok(cloud)
    }
}

pub fn save_gaussians(path: &Path, cloud: &GaussianCloud3D) -> Result<()> {
    write_bytes(path, &GaussianFile::from_cloud(cloud).to_bytes())
}

pub fn load_gaussians(path: &Path) -> Result<GaussianCloud3D> {
    GaussianFile::from_bytes(&read_bytes(path)?)
        .and_then(|f| f.to_cloud())
        .with_context(|| format!("loading Gaussians {}", path.display()))
}

/// Sidecar of a bound asset: `magic "GDPB"`, `u32` version, `u32`
/// Gaussians per triangle, `u32` triangle count, the barycentric template
/// (`3·N` `f32`), then per Gaussian color (3), opacity logit, in-plane
/// rotation (2) and log-scales (3), all little-endian `f32`.
pub fn bound_sidecar(asset: &BoundAsset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BOUND_MAGIC);
    for v in [
        BOUND_VERSION,
        asset.gaussians_per_triangle() as u32,
        asset.triangle_count() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for w in asset.weights.iter().flatten() {
        put(*w);
    }
    for i in 0..asset.len() {
        asset.colors[i].iter().for_each(|&c| put(c));
        put(asset.opacity_logits[i]);
        asset.rotations[i].iter().for_each(|&r| put(r));
        asset.log_scales[i].iter().for_each(|&s| put(s));
    }
    out
}

pub fn bound_from_parts(mesh: ColoredMesh, sidecar: &[u8]) -> Result<BoundAsset> {
    ensure!(
        sidecar.len() >= 16,
        "sidecar: expected at least 16 bytes, got {}",
        sidecar.len()
    );
    if &sidecar[..4] != BOUND_MAGIC {
        bail!("sidecar: bad magic {:?} at byte 0", &sidecar[..4]);
    }
    let u = |o: usize| u32::from_le_bytes(sidecar[o..o + 4].try_into().unwrap()) as usize;
    ensure!(
        u(4) == BOUND_VERSION as usize,
        "sidecar: unsupported version {} at byte 4",
        u(4)
    );
    let (n, tris) = (u(8), u(12));
    ensure!(
        tris == mesh.triangles.len(),
        "sidecar: {tris} triangles at byte 12, mesh has {}",
        mesh.triangles.len()
    );
    let expected = 16 + 4 * (3 * n + 9 * n * tris);
    ensure!(
        sidecar.len() == expected,
        "sidecar: expected {expected} bytes, got {}",
        sidecar.len()
    );
    let vals: Vec<f64> = sidecar[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let weights = vals[..3 * n]
        .chunks(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let mut asset = BoundAsset {
        mesh,
        weights,
        colors: Vec::new(),
        opacity_logits: Vec::new(),
        rotations: Vec::new(),
        log_scales: Vec::new(),
    };
    for g in vals[3 * n..].chunks(9) {
        asset.colors.push([g[0], g[1], g[2]]);
        asset.opacity_logits.push(g[3]);
        asset.rotations.push([g[4], g[5]]);
        asset.log_scales.push([g[6], g[7], g[8]]);
    }
    asset.validate()?;
    Ok(asset)
}

/// Sidecar path next to a bound mesh file.
pub fn sidecar_path(mesh_path: &Path) -> PathBuf {
    mesh_path.with_extension("gdpb")
}

/// Writes `<stem>.ply`, `<stem>.gdpb` and a baked free-Gaussian
/// `<stem>_baked.ply` for viewers.
pub fn save_bound(mesh_path: &Path, asset: &BoundAsset) -> Result<()> {
    save_mesh(mesh_path, &asset.mesh)?;
    write_bytes(&sidecar_path(mesh_path), &bound_sidecar(asset))?;
    let baked = meshsplat::bind::apply_deformation(asset, &asset.mesh.vertices, None)?;
    let stem = mesh_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("bound");
    save_gaussians(
        &mesh_path.with_file_name(format!("{stem}_baked.ply")),
        &baked,
    )
}

pub fn load_bound(mesh_path: &Path) -> Result<BoundAsset> {
    let mesh = load_mesh(mesh_path)?;
    let side = sidecar_path(mesh_path);
    bound_from_parts(mesh, &read_bytes(&side)?)
        .with_context(|| format!("loading {}", side.display()))
}

pub fn load_stream(path: &Path) -> Result<DeformationStream> {
    DeformationStream::from_bytes(&read_bytes(path)?)
        .with_context(|| format!("loading {}", path.display()))
}

pub fn save_stream(path: &Path, stream: &DeformationStream) -> Result<()> {
    write_bytes(path, &stream.to_bytes())
}

/// Frames placed side by side.
pub fn hstack(frames: &[Image]) -> Image {
    let h = frames.first().map_or(0, |f| f.height);
    let w: usize = frames.iter().map(|f| f.width).sum();
    let mut out = Image::zeros(w, h);
    let mut x0 = 0;
    for f in frames {
        for y in 0..h {
            for x in 0..f.width {
                out.set_pixel(x0 + x, y, f.pixel(x, y));
            }
        }
        x0 += f.width;
    }
    out
}

pub fn save_png(path: &Path, image: &Image) -> Result<()> {
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, image.width as u32, image.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().context("encoding PNG header")?;
        w.write_image_data(&image.to_rgb8())
            .context("encoding PNG data")?;
    }
    write_bytes(path, &bytes)
}

pub fn loss_csv(records: &[LossRecord]) -> String {
    let mut s = String::from("iteration,loss,mean_update,lr\n");
    for r in records {
        s.push_str(&format!(
            "{},{:e},{:e},{:e}\n",
            r.iteration, r.loss, r.mean_update, r.lr
        ));
    }
    s
}
