//! Clip files and dataset directories.
//!
//! Text clips (`.clip`) start with one header line
//! `QMCLIP format_version=1 name=<name> motion_type=<type> fps=<fps> frame_count=<n>`
//! followed by one line of 24 space-separated numbers per frame. Binary clips
//! (`.clipb`) carry the same header fields followed by little-endian f64 frames.
//! A dataset directory holds clip files plus `manifest.tsv` (id, type, file).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Dataset, MotionClip, MotionError, MotionType, ReferenceFrame, FRAME_DIM};

pub const MANIFEST_FILE: &str = "manifest.tsv";
const TEXT_MAGIC: &str = "QMCLIP";
const BINARY_MAGIC: &[u8; 4] = b"QMCB";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipEncoding {
    Text,
    Binary,
}

impl ClipEncoding {
    pub fn extension(self) -> &'static str {
        match self {
            ClipEncoding::Text => "clip",
            ClipEncoding::Binary => "clipb",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MotionError + '_ {
    move |source| MotionError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn check_name(clip: &MotionClip) -> Result<(), MotionError> {
    if clip.name.is_empty() || clip.name.chars().any(char::is_whitespace) {
        return Err(MotionError::Invariant {
            clip: clip.name.clone(),
            frame: None,
            message: "clip names must be non-empty and contain no whitespace".into(),
        });
    }
    Ok(())
}

pub fn write_clip_text(clip: &MotionClip, path: &Path) -> Result<(), MotionError> {
    check_name(clip)?;
    let mut out = String::with_capacity(clip.frames.len() * FRAME_DIM * 24 + 128);
    out.push_str(&format!(
        "{TEXT_MAGIC} format_version={FORMAT_VERSION} name={} motion_type={} fps={:?} frame_count={}\n",
        clip.name,
        clip.motion_type,
        clip.fps,
        clip.frames.len()
    ));
    for frame in &clip.frames {
        let values = frame.to_array();
        let line: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

struct Header {
    name: String,
    motion_type: MotionType,
    fps: f64,
    frame_count: usize,
}

fn parse_header(line: &str, fallback: &str) -> Result<Header, MotionError> {
    let perr = |message: String| MotionError::Parse {
        clip: fallback.to_string(),
        frame: None,
        message,
    };
    let mut parts = line.split_whitespace();
    if parts.next() != Some(TEXT_MAGIC) {
        return Err(perr(format!("missing `{TEXT_MAGIC}` header")));
    }
    let mut version = None;
    let mut name = None;
    let mut motion_type = None;
    let mut fps = None;
    let mut frame_count = None;
    for kv in parts {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| perr(format!("malformed header field `{kv}`")))?;
        match k {
            "format_version" => version = Some(v.parse::<u32>().map_err(|e| perr(e.to_string()))?),
            "name" => name = Some(v.to_string()),
            "motion_type" => motion_type = Some(v.parse::<MotionType>().map_err(perr)?),
            "fps" => fps = Some(v.parse::<f64>().map_err(|e| perr(e.to_string()))?),
            "frame_count" => frame_count = Some(v.parse::<usize>().map_err(|e| perr(e.to_string()))?),
            other => return Err(perr(format!("unknown header field `{other}`"))),
        }
    }
    if version != Some(FORMAT_VERSION) {
        return Err(perr(format!("unsupported format_version {version:?}")));
    }
    Ok(Header {
        name: name.ok_or_else(|| perr("header missing name".into()))?,
        motion_type: motion_type.ok_or_else(|| perr("header missing motion_type".into()))?,
        fps: fps.ok_or_else(|| perr("header missing fps".into()))?,
        frame_count: frame_count.ok_or_else(|| perr("header missing frame_count".into()))?,
    })
}

pub fn read_clip_text(path: &Path) -> Result<MotionClip, MotionError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("?");
    let mut lines = text.lines();
    let header = parse_header(lines.next().unwrap_or(""), stem)?;
    let mut frames = Vec::with_capacity(header.frame_count);
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let values: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let values = values.map_err(|e| MotionError::Parse {
            clip: header.name.clone(),
            frame: Some(i),
            message: e.to_string(),
        })?;
        let frame = ReferenceFrame::from_slice(&values).map_err(|e| MotionError::Parse {
            clip: header.name.clone(),
            frame: Some(i),
            message: e.to_string(),
        })?;
        frames.push(frame);
    }
    finish(header, frames)
}

fn finish(header: Header, frames: Vec<ReferenceFrame>) -> Result<MotionClip, MotionError> {
    if frames.len() != header.frame_count {
        return Err(MotionError::Parse {
            clip: header.name,
            frame: None,
            message: format!("header declares {} frames, found {}", header.frame_count, frames.len()),
        });
    }
    let clip = MotionClip {
        name: header.name,
        motion_type: header.motion_type,
        fps: header.fps,
        frames,
    };
    clip.validate()?;
    Ok(clip)
}

pub fn write_clip_binary(clip: &MotionClip, path: &Path) -> Result<(), MotionError> {
    check_name(clip)?;
    let mut buf = Vec::with_capacity(clip.frames.len() * FRAME_DIM * 8 + 64);
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for s in [clip.name.as_str(), clip.motion_type.as_str()] {
        buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
        buf.extend_from_slice(s.as_bytes());
    }
    buf.extend_from_slice(&clip.fps.to_le_bytes());
    buf.extend_from_slice(&(clip.frames.len() as u64).to_le_bytes());
    for frame in &clip.frames {
        for v in frame.to_array() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    clip: String,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MotionError> {
        if self.pos + n > self.data.len() {
            return Err(MotionError::Parse {
                clip: self.clip.clone(),
                frame: None,
                message: "unexpected end of file".into(),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, MotionError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, MotionError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, MotionError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, MotionError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| MotionError::Parse {
            clip: self.clip.clone(),
            frame: None,
            message: e.to_string(),
        })
    }
}

pub fn read_clip_binary(path: &Path) -> Result<MotionClip, MotionError> {
    let data = fs::read(path).map_err(io_err(path))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("?").to_string();
    let mut c = Cursor {
        data: &data,
        pos: 0,
        clip: stem.clone(),
    };
    let perr = |message: String| MotionError::Parse {
        clip: stem.clone(),
        frame: None,
        message,
    };
    if c.take(4)? != BINARY_MAGIC {
        return Err(perr("bad magic".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(perr(format!("unsupported format_version {version}")));
    }
    let name = c.string()?;
    let motion_type = c.string()?.parse::<MotionType>().map_err(&perr)?;
    let fps = c.f64()?;
    let frame_count = c.u64()? as usize;
    c.clip = name.clone();
    let mut frames = Vec::with_capacity(frame_count);
    let mut values = [0.0; FRAME_DIM];
    for i in 0..frame_count {
        for v in values.iter_mut() {
            *v = c.f64().map_err(|_| MotionError::Parse {
                clip: name.clone(),
                frame: Some(i),
                message: "truncated frame".into(),
            })?;
        }
        frames.push(ReferenceFrame::from_slice(&values).expect("fixed length"));
    }
    if c.pos != data.len() {
        return Err(perr(format!("{} trailing bytes", data.len() - c.pos)));
    }
    finish(
        Header {
            name,
            motion_type,
            fps,
            frame_count,
        },
        frames,
    )
}

/// Reads a clip, choosing the decoder from the file extension.
pub fn read_clip(path: &Path) -> Result<MotionClip, MotionError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("clipb") => read_clip_binary(path),
        _ => read_clip_text(path),
    }
}

pub fn write_dataset(dataset: &Dataset, dir: &Path, encoding: ClipEncoding) -> Result<(), MotionError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = String::from("# id\tmotion_type\tfile\n");
    for (id, clip) in &dataset.clips {
        let file = format!("{id}.{}", encoding.extension());
        let path = dir.join(&file);
        match encoding {
            ClipEncoding::Text => write_clip_text(clip, &path)?,
            ClipEncoding::Binary => write_clip_binary(clip, &path)?,
        }
        manifest.push_str(&format!("{id}\t{}\t{file}\n", clip.motion_type));
    }
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest).map_err(io_err(&mpath))
}

/// Loads every clip of a dataset directory and validates it.
///
/// With a manifest the listed files are loaded and their types cross-checked;
/// without one every `.clip`/`.clipb` file is loaded with its stem as id.
pub fn load_dataset(dir: &Path) -> Result<Dataset, MotionError> {
    if !dir.exists() {
        return Err(MotionError::MissingPath(dir.to_path_buf()));
    }
    let mut dataset = Dataset::new();
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() {
        let text = fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(MotionError::Parse {
                    clip: MANIFEST_FILE.into(),
                    frame: None,
                    message: format!("line {}: expected 3 tab-separated columns", lineno + 1),
                });
            }
            let declared: MotionType = cols[1].parse().map_err(|message| MotionError::Parse {
                clip: cols[0].into(),
                frame: None,
                message,
            })?;
            let clip = read_clip(&dir.join(cols[2]))?;
            if clip.motion_type != declared {
                return Err(MotionError::Invariant {
                    clip: cols[0].into(),
                    frame: None,
                    message: format!("manifest says {declared}, file says {}", clip.motion_type),
                });
            }
            dataset.insert(cols[0], clip)?;
        }
    } else {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("clip" | "clipb")))
            .collect();
        files.sort();
        for path in files {
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            dataset.insert(id, read_clip(&path)?)?;
        }
    }
    if dataset.is_empty() {
        log::warn!("dataset {} contains no clips", dir.display());
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{synthesize_clip, GaitSpec};
    use crate::spatial::{rot_y, rot_z, Vec3};
    use crate::RobotModel;

    fn odd_clip() -> MotionClip {
        let frames = (0..7)
            .map(|k| {
                let t = k as f64;
                let joints = std::array::from_fn(|j| (t * 0.1 + j as f64).sin() * 1e-3 + 1.0 / 3.0);
                ReferenceFrame::new(joints, rot_z(0.1 * t) * rot_y(-0.05 * t), Vec3::new(t / 7.0, -1e-17, 0.3))
            })
            .collect();
        MotionClip {
            name: "odd".into(),
            motion_type: MotionType::Gallop,
            fps: 59.94,
            frames,
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("odd.clip");
        let clip = odd_clip();
        write_clip_text(&clip, &p).unwrap();
        assert_eq!(read_clip(&p).unwrap(), clip);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("odd.clipb");
        let clip = odd_clip();
        write_clip_binary(&clip, &p).unwrap();
        assert_eq!(read_clip(&p).unwrap(), clip);
    }

    #[test]
    fn loads_single_ten_second_clip() {
        let dir = tempfile::tempdir().unwrap();
        let clip = synthesize_clip(&GaitSpec::new(MotionType::Stand), &RobotModel::a1_like()).unwrap();
        let mut ds = Dataset::new();
        ds.insert("stand", clip).unwrap();
        write_dataset(&ds, dir.path(), ClipEncoding::Text).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded.get("stand").unwrap().frames.len(), 601);
    }

    #[test]
    fn empty_directory_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn missing_directory_is_error() {
        assert!(matches!(
            load_dataset(Path::new("/definitely/not/here")),
            Err(MotionError::MissingPath(_))
        ));
    }

    #[test]
    fn non_orthonormal_rotation_names_frame() {
        let dir = tempfile::tempdir().unwrap();
        let mut clip = odd_clip();
        clip.frames[4].rotation[(0, 1)] += 1e-3;
        // Bypass validation on write; the reader must reject it.
        write_clip_text(&clip, &dir.path().join("odd.clip")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        match err {
            MotionError::Invariant { frame, .. } => assert_eq!(frame, Some(4)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn parse_errors_report_frame_index() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.clip");
        let clip = odd_clip();
        write_clip_text(&clip, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = lines[3].replacen(' ', " x", 1);
        fs::write(&p, lines.join("\n")).unwrap();
        match read_clip(&p).unwrap_err() {
            MotionError::Parse { clip, frame, .. } => {
                assert_eq!(clip, "odd");
                assert_eq!(frame, Some(2));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn frame_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("odd.clip");
        write_clip_text(&odd_clip(), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap().replace("frame_count=7", "frame_count=8");
        fs::write(&p, text).unwrap();
        assert!(read_clip(&p).is_err());
    }

    #[test]
    fn manifest_type_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = Dataset::new();
        ds.insert("odd", odd_clip()).unwrap();
        write_dataset(&ds, dir.path(), ClipEncoding::Binary).unwrap();
        let m = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&m).unwrap().replace("gallop", "trot");
        fs::write(&m, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(MotionError::Invariant { .. })));
    }
}
