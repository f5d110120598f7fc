//! COLMAP sparse models (`cameras`, `images`, `points3D`), text and binary.
//!
//! Only undistorted pinhole cameras are accepted (`SIMPLE_PINHOLE`, `PINHOLE`).
//! 2D keypoint observations and point tracks are skipped on read and written
//! empty; the pipeline only needs poses, intrinsics and point colors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, write_file, ByteReader};
use crate::scene::Camera;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColmapFormat {
    Text,
    Binary,
}

impl ColmapFormat {
    /// Pick the format from the files present in `dir` (binary wins).
    pub fn detect(dir: &Path) -> Option<Self> {
        if dir.join("cameras.bin").is_file() {
            Some(ColmapFormat::Binary)
        } else if dir.join("cameras.txt").is_file() {
            Some(ColmapFormat::Text)
        } else {
            None
        }
    }

    fn ext(self) -> &'static str {
        match self {
            ColmapFormat::Text => "txt",
            ColmapFormat::Binary => "bin",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PinholeModel {
    SimplePinhole,
    Pinhole,
}

impl PinholeModel {
    fn id(self) -> i32 {
        match self {
            PinholeModel::SimplePinhole => 0,
            PinholeModel::Pinhole => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            PinholeModel::SimplePinhole => "SIMPLE_PINHOLE",
            PinholeModel::Pinhole => "PINHOLE",
        }
    }

    fn num_params(self) -> usize {
        match self {
            PinholeModel::SimplePinhole => 3,
            PinholeModel::Pinhole => 4,
        }
    }
}

/// COLMAP camera model names by id, used for error messages.
const MODEL_NAMES: [&str; 11] = [
    "SIMPLE_PINHOLE",
    "PINHOLE",
    "SIMPLE_RADIAL",
    "RADIAL",
    "OPENCV",
    "OPENCV_FISHEYE",
    "FULL_OPENCV",
    "FOV",
    "SIMPLE_RADIAL_FISHEYE",
    "RADIAL_FISHEYE",
    "THIN_PRISM_FISHEYE",
];

fn model_from_name(name: &str) -> Result<PinholeModel> {
    match name {
        "SIMPLE_PINHOLE" => Ok(PinholeModel::SimplePinhole),
        "PINHOLE" => Ok(PinholeModel::Pinhole),
        other => Err(Error::UnsupportedCameraModel(other.to_string())),
    }
}

fn model_from_id(id: i32) -> Result<PinholeModel> {
    match id {
        0 => Ok(PinholeModel::SimplePinhole),
        1 => Ok(PinholeModel::Pinhole),
        other => Err(Error::UnsupportedCameraModel(
            usize::try_from(other)
                .ok()
                .and_then(|i| MODEL_NAMES.get(i))
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("id {other}")),
        )),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColmapCamera {
    pub model: PinholeModel,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColmapImage {
    /// World-to-camera rotation (w, x, y, z), normalized.
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub camera_id: u32,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColmapPoint {
    pub xyz: [f64; 3],
    pub rgb: [u8; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColmapModel {
    pub cameras: BTreeMap<u32, ColmapCamera>,
    pub images: BTreeMap<u32, ColmapImage>,
    pub points: Vec<ColmapPoint>,
}

impl ColmapModel {
    pub fn camera_for(&self, image_id: u32) -> Result<Camera> {
        let img = self
            .images
            .get(&image_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no image with id {image_id}")))?;
        let c = self.cameras.get(&img.camera_id).ok_or(Error::MissingCamera {
            image_id,
            camera_id: img.camera_id,
        })?;
        Camera::from_quaternion(c.fx, c.fy, c.cx, c.cy, c.width, c.height, img.qvec, img.tvec)
    }

    /// Images whose name starts with `prefix`, sorted by name.
    pub fn images_with_prefix(&self, prefix: &str) -> Vec<(u32, &ColmapImage)> {
        let mut v: Vec<_> = self
            .images
            .iter()
            .filter(|(_, im)| im.name.starts_with(prefix))
            .map(|(id, im)| (*id, im))
            .collect();
        v.sort_by(|a, b| a.1.name.cmp(&b.1.name));
        v
    }

    pub fn find_image(&self, name: &str) -> Option<u32> {
        self.images.iter().find(|(_, im)| im.name == name).map(|(id, _)| *id)
    }

    fn validate(&self) -> Result<()> {
        for (id, im) in &self.images {
            if !self.cameras.contains_key(&im.camera_id) {
                return Err(Error::MissingCamera {
                    image_id: *id,
                    camera_id: im.camera_id,
                });
            }
        }
        Ok(())
    }
}

fn normalize_quat(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::DegenerateRotation);
    }
    Ok(q.map(|v| v / n))
}

fn camera_from_params(model: PinholeModel, width: u64, height: u64, p: &[f64]) -> Result<ColmapCamera> {
    let (fx, fy, cx, cy) = match model {
        PinholeModel::SimplePinhole => (p[0], p[0], p[1], p[2]),
        PinholeModel::Pinhole => (p[0], p[1], p[2], p[3]),
    };
    let width = usize::try_from(width).map_err(|_| Error::InvalidCamera(format!("width {width}")))?;
    let height = usize::try_from(height).map_err(|_| Error::InvalidCamera(format!("height {height}")))?;
    Ok(ColmapCamera {
        model,
        width,
        height,
        fx,
        fy,
        cx,
        cy,
    })
}

fn camera_params(c: &ColmapCamera) -> Vec<f64> {
    match c.model {
        PinholeModel::SimplePinhole => vec![c.fx, c.cx, c.cy],
        PinholeModel::Pinhole => vec![c.fx, c.fy, c.cx, c.cy],
    }
}

pub fn parse_colmap_model(dir: impl AsRef<Path>, format: ColmapFormat) -> Result<ColmapModel> {
    let dir = dir.as_ref();
    let load = |stem: &str| {
        let p = dir.join(format!("{stem}.{}", format.ext()));
        read_file(&p).map(|b| (b, p.display().to_string()))
    };
    let (cam, cam_name) = load("cameras")?;
    let (img, img_name) = load("images")?;
    let (pts, pts_name) = load("points3D")?;
    let model = match format {
        ColmapFormat::Text => ColmapModel {
            cameras: parse_cameras_text(&cam, &cam_name)?,
            images: parse_images_text(&img, &img_name)?,
            points: parse_points_text(&pts, &pts_name)?,
        },
        ColmapFormat::Binary => ColmapModel {
            cameras: parse_cameras_bin(&cam, &cam_name)?,
            images: parse_images_bin(&img, &img_name)?,
            points: parse_points_bin(&pts, &pts_name)?,
        },
    };
    model.validate()?;
    Ok(model)
}

pub fn write_colmap_model(model: &ColmapModel, dir: impl AsRef<Path>, format: ColmapFormat) -> Result<()> {
    let dir = dir.as_ref();
    let ext = format.ext();
    let (c, i, p) = match format {
        ColmapFormat::Text => (
            cameras_text(model).into_bytes(),
            images_text(model).into_bytes(),
            points_text(model).into_bytes(),
        ),
        ColmapFormat::Binary => (cameras_bin(model), images_bin(model), points_bin(model)),
    };
    write_file(&dir.join(format!("cameras.{ext}")), &c)?;
    write_file(&dir.join(format!("images.{ext}")), &i)?;
    write_file(&dir.join(format!("points3D.{ext}")), &p)
}

// ---- text ----

fn text_lines<'a>(bytes: &'a [u8], file: &str) -> Result<impl Iterator<Item = (usize, &'a str)>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        file: file.to_string(),
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count(),
        message: "invalid UTF-8".into(),
    })?;
    Ok(text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())))
}

fn parse_err(file: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(tok: &[&str], i: usize, what: &str, file: &str, line: usize) -> Result<T> {
    let s = tok.get(i).ok_or_else(|| parse_err(file, line, format!("missing {what}")))?;
    s.parse().map_err(|_| parse_err(file, line, format!("bad {what} `{s}`")))
}

fn parse_cameras_text(bytes: &[u8], file: &str) -> Result<BTreeMap<u32, ColmapCamera>> {
    let mut out = BTreeMap::new();
    for (ln, line) in text_lines(bytes, file)? {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        let id: u32 = field(&tok, 0, "camera id", file, ln)?;
        let model = model_from_name(tok.get(1).copied().unwrap_or(""))?;
        let w: u64 = field(&tok, 2, "width", file, ln)?;
        let h: u64 = field(&tok, 3, "height", file, ln)?;
        let params = (0..model.num_params())
            .map(|k| field::<f64>(&tok, 4 + k, "parameter", file, ln))
            .collect::<Result<Vec<_>>>()?;
        if tok.len() != 4 + model.num_params() {
            return Err(parse_err(file, ln, format!("{} expects {} parameters", model.name(), model.num_params())));
        }
        if out.insert(id, camera_from_params(model, w, h, &params)?).is_some() {
            return Err(parse_err(file, ln, format!("duplicate camera id {id}")));
        }
    }
    Ok(out)
}

fn parse_images_text(bytes: &[u8], file: &str) -> Result<BTreeMap<u32, ColmapImage>> {
    let mut out = BTreeMap::new();
    let mut lines = text_lines(bytes, file)?.filter(|(_, l)| !l.starts_with('#'));
    while let Some((ln, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        let id: u32 = field(&tok, 0, "image id", file, ln)?;
        let mut q = [0.0; 4];
        for (k, v) in q.iter_mut().enumerate() {
            *v = field(&tok, 1 + k, "quaternion", file, ln)?;
        }
        let mut t = [0.0; 3];
        for (k, v) in t.iter_mut().enumerate() {
            *v = field(&tok, 5 + k, "translation", file, ln)?;
        }
        let camera_id: u32 = field(&tok, 8, "camera id", file, ln)?;
        // Names may contain spaces; everything after the camera id is the name.
        let name = tok_name(line).unwrap_or("");
        if name.is_empty() {
            return Err(parse_err(file, ln, "missing image name"));
        }
        // The following line lists 2D observations; it may be empty.
        lines.next();
        let qvec = normalize_quat(q).map_err(|_| parse_err(file, ln, "zero quaternion"))?;
        let image = ColmapImage {
            qvec,
            tvec: t,
            camera_id,
            name: name.to_string(),
        };
        if out.insert(id, image).is_some() {
            return Err(parse_err(file, ln, format!("duplicate image id {id}")));
        }
    }
    Ok(out)
}

/// The name field: the text after the ninth whitespace-separated token.
fn tok_name(line: &str) -> Option<&str> {
    let mut rest = line;
    for _ in 0..9 {
        rest = rest.trim_start();
        let end = rest.find(char::is_whitespace)?;
        rest = &rest[end..];
    }
    Some(rest.trim())
}

fn parse_points_text(bytes: &[u8], file: &str) -> Result<Vec<ColmapPoint>> {
    let mut out = Vec::new();
    for (ln, line) in text_lines(bytes, file)? {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        let _id: u64 = field(&tok, 0, "point id", file, ln)?;
        let mut xyz = [0.0; 3];
        for (k, v) in xyz.iter_mut().enumerate() {
            *v = field(&tok, 1 + k, "position", file, ln)?;
        }
        let mut rgb = [0u8; 3];
        for (k, v) in rgb.iter_mut().enumerate() {
            *v = field(&tok, 4 + k, "color", file, ln)?;
        }
        out.push(ColmapPoint { xyz, rgb });
    }
    Ok(out)
}

fn cameras_text(m: &ColmapModel) -> String {
    let mut s = String::from("# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    let _ = writeln!(s, "# Number of cameras: {}", m.cameras.len());
    for (id, c) in &m.cameras {
        let _ = write!(s, "{id} {} {} {}", c.model.name(), c.width, c.height);
        for p in camera_params(c) {
            let _ = write!(s, " {p:?}");
        }
        s.push('\n');
    }
    s
}

fn images_text(m: &ColmapModel) -> String {
    let mut s = String::from(
        "# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n",
    );
    let _ = writeln!(s, "# Number of images: {}", m.images.len());
    for (id, im) in &m.images {
        let [qw, qx, qy, qz] = im.qvec;
        let [tx, ty, tz] = im.tvec;
        let _ = writeln!(s, "{id} {qw:?} {qx:?} {qy:?} {qz:?} {tx:?} {ty:?} {tz:?} {} {}", im.camera_id, im.name);
        s.push('\n');
    }
    s
}

fn points_text(m: &ColmapModel) -> String {
    let mut s = String::from("# 3D point list with one line of data per point:\n#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
    let _ = writeln!(s, "# Number of points: {}", m.points.len());
    for (i, p) in m.points.iter().enumerate() {
        let [x, y, z] = p.xyz;
        let [r, g, b] = p.rgb;
        let _ = writeln!(s, "{} {x:?} {y:?} {z:?} {r} {g} {b} 0", i + 1);
    }
    s
}

// ---- binary ----

fn parse_cameras_bin(bytes: &[u8], file: &str) -> Result<BTreeMap<u32, ColmapCamera>> {
    let mut r = ByteReader::new(bytes, file);
    let n = r.u64()?;
    let mut out = BTreeMap::new();
    for _ in 0..n {
        let id = r.u32()?;
        let model = model_from_id(r.i32()?)?;
        let w = r.u64()?;
        let h = r.u64()?;
        let mut params = [0.0; 4];
        for p in params.iter_mut().take(model.num_params()) {
            *p = r.f64()?;
        }
        if out.insert(id, camera_from_params(model, w, h, &params)?).is_some() {
            return Err(Error::InvalidArgument(format!("{file}: duplicate camera id {id}")));
        }
    }
    Ok(out)
}

fn parse_images_bin(bytes: &[u8], file: &str) -> Result<BTreeMap<u32, ColmapImage>> {
    let mut r = ByteReader::new(bytes, file);
    let n = r.u64()?;
    let mut out = BTreeMap::new();
    for _ in 0..n {
        let id = r.u32()?;
        let mut q = [0.0; 4];
        for v in &mut q {
            *v = r.f64()?;
        }
        let mut t = [0.0; 3];
        for v in &mut t {
            *v = r.f64()?;
        }
        let camera_id = r.u32()?;
        let mut name = Vec::new();
        loop {
            match r.u8()? {
                0 => break,
                b => name.push(b),
            }
        }
        let name = String::from_utf8(name)
            .map_err(|_| Error::InvalidArgument(format!("{file}: image {id} name is not UTF-8")))?;
        let n2d = r.u64()?;
        // x, y as f64 plus a u64 point id per observation
        let skip = n2d.checked_mul(24).and_then(|v| usize::try_from(v).ok()).unwrap_or(usize::MAX);
        r.take(skip)?;
        let qvec = normalize_quat(q)?;
        if out
            .insert(
                id,
                ColmapImage {
                    qvec,
                    tvec: t,
                    camera_id,
                    name,
                },
            )
            .is_some()
        {
            return Err(Error::InvalidArgument(format!("{file}: duplicate image id {id}")));
        }
    }
    Ok(out)
}

fn parse_points_bin(bytes: &[u8], file: &str) -> Result<Vec<ColmapPoint>> {
    let mut r = ByteReader::new(bytes, file);
    let n = r.u64()?;
    // id + xyz + rgb + error + track length
    let mut out = Vec::with_capacity(r.capacity_for(n, 8 + 24 + 3 + 8 + 8));
    for _ in 0..n {
        let _id = r.u64()?;
        let mut xyz = [0.0; 3];
        for v in &mut xyz {
            *v = r.f64()?;
        }
        let rgb = [r.u8()?, r.u8()?, r.u8()?];
        let _error = r.f64()?;
        let track = r.u64()?;
        let skip = track.checked_mul(8).and_then(|v| usize::try_from(v).ok()).unwrap_or(usize::MAX);
        r.take(skip)?;
        out.push(ColmapPoint { xyz, rgb });
    }
    Ok(out)
}

fn cameras_bin(m: &ColmapModel) -> Vec<u8> {
    let mut out = (m.cameras.len() as u64).to_le_bytes().to_vec();
    for (id, c) in &m.cameras {
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&c.model.id().to_le_bytes());
        out.extend_from_slice(&(c.width as u64).to_le_bytes());
        out.extend_from_slice(&(c.height as u64).to_le_bytes());
        for p in camera_params(c) {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    out
}

fn images_bin(m: &ColmapModel) -> Vec<u8> {
    let mut out = (m.images.len() as u64).to_le_bytes().to_vec();
    for (id, im) in &m.images {
        out.extend_from_slice(&id.to_le_bytes());
        for v in im.qvec.iter().chain(&im.tvec) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&im.camera_id.to_le_bytes());
        out.extend_from_slice(im.name.as_bytes());
        out.push(0);
        out.extend_from_slice(&0u64.to_le_bytes());
    }
    out
}

fn points_bin(m: &ColmapModel) -> Vec<u8> {
    let mut out = (m.points.len() as u64).to_le_bytes().to_vec();
    for (i, p) in m.points.iter().enumerate() {
        out.extend_from_slice(&(i as u64 + 1).to_le_bytes());
        for v in &p.xyz {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&p.rgb);
        out.extend_from_slice(&0f64.to_le_bytes());
        out.extend_from_slice(&0u64.to_le_bytes());
    }
    out
}
