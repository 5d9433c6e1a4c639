//! File formats: vector maps (JSON), frame logs (JSON Lines), pose traces
//! and point clouds (CSV or a small binary layout).
//!
//! Coordinates are written with four decimals. Loading a saved value and
//! saving it again reproduces the same bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point2, Point3, Rect};
use crate::map::{FramePrediction, MapClass, MapElement, Pose2, VectorMap};

pub const MAP_SCHEMA_VERSION: u64 = 1;

const CLOUD_MAGIC: &[u8; 6] = b"MWPCLD";
const CLOUD_VERSION: u16 = 1;

/// Rounds to the 0.1 mm grid used in every file.
pub fn round4(v: f64) -> f64 {
    let r = (v * 1e4).round() / 1e4;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// On-disk form of a [`MapElement`], shared by map, frame and proposal files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementRecord {
    pub id: String,
    pub class: MapClass,
    pub closed: bool,
    pub confidence: Option<f64>,
    pub points: Vec<Vec<f64>>,
}

impl From<&MapElement> for ElementRecord {
    fn from(el: &MapElement) -> Self {
        let points = match &el.heights {
            Some(h) => el
                .points
                .iter()
                .zip(h)
                .map(|(p, z)| vec![round4(p.x), round4(p.y), round4(*z)])
                .collect(),
            None => el.points.iter().map(|p| vec![round4(p.x), round4(p.y)]).collect(),
        };
        ElementRecord {
            id: el.id.clone(),
            class: el.class,
            closed: el.closed,
            confidence: el.confidence.map(round4),
            points,
        }
    }
}

impl TryFrom<ElementRecord> for MapElement {
    type Error = Error;

    fn try_from(rec: ElementRecord) -> Result<Self> {
        let arity = rec.points.first().map_or(2, Vec::len);
        if arity != 2 && arity != 3 {
            return Err(Error::InvalidGeometry(format!(
                "element {}: points must be [x,y] or [x,y,z]",
                rec.id
            )));
        }
        if rec.points.iter().any(|p| p.len() != arity) {
            return Err(Error::InvalidGeometry(format!(
                "element {}: mixed 2D and 3D points",
                rec.id
            )));
        }
        let points = rec.points.iter().map(|p| Point2::new(p[0], p[1])).collect();
        let heights = (arity == 3).then(|| rec.points.iter().map(|p| p[2]).collect());
        let el = MapElement {
            id: rec.id,
            class: rec.class,
            points,
            heights,
            closed: rec.closed,
            confidence: rec.confidence,
        };
        el.validate()?;
        Ok(el)
    }
}

pub fn elements_to_records(elements: &[MapElement]) -> Vec<ElementRecord> {
    elements.iter().map(ElementRecord::from).collect()
}

pub fn records_to_elements(records: Vec<ElementRecord>) -> Result<Vec<MapElement>> {
    records.into_iter().map(MapElement::try_from).collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<serde_json::Value>,
    frame_id: String,
    bounds: [f64; 4],
    elements: Vec<ElementRecord>,
}

pub(crate) fn json_error(e: serde_json::Error) -> Error {
    Error::parse(e.line(), e.column(), e.to_string())
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn map_to_json(map: &VectorMap) -> String {
    let file = MapFile {
        version: None,
        frame_id: map.frame_id.clone(),
        bounds: map.bounds.to_array().map(round4),
        elements: elements_to_records(&map.elements),
    };
    let mut s = serde_json::to_string(&file).expect("map serializes");
    s.push('\n');
    s
}

pub fn map_from_json(text: &str) -> Result<VectorMap> {
    let file: MapFile = serde_json::from_str(text).map_err(json_error)?;
    if let Some(v) = &file.version {
        if v.as_u64() != Some(MAP_SCHEMA_VERSION) {
            return Err(Error::Version {
                found: v.to_string(),
                expected: MAP_SCHEMA_VERSION.to_string(),
            });
        }
    }
    VectorMap::new(
        file.frame_id,
        Rect::from_array(file.bounds),
        records_to_elements(file.elements)?,
    )
}

pub fn save_map(path: &Path, map: &VectorMap) -> Result<()> {
    write_atomic(path, map_to_json(map).as_bytes())
}

pub fn load_map(path: &Path) -> Result<VectorMap> {
    map_from_json(&read_file(path)?)
}

/// Hex SHA-256 of the canonical serialization of `map`.
pub fn map_content_hash(map: &VectorMap) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(map_to_json(map).as_bytes()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    t: f64,
    pose: [f64; 3],
    elements: Vec<ElementRecord>,
}

pub fn frame_to_json_line(fp: &FramePrediction) -> String {
    let rec = FrameRecord {
        t: round4(fp.pose.t),
        pose: [round4(fp.pose.x), round4(fp.pose.y), round4(fp.pose.yaw)],
        elements: elements_to_records(&fp.elements),
    };
    serde_json::to_string(&rec).expect("frame serializes")
}

pub fn frames_to_jsonl(frames: &[FramePrediction]) -> String {
    let mut s = String::new();
    for fp in frames {
        s.push_str(&frame_to_json_line(fp));
        s.push('\n');
    }
    s
}

pub fn frames_from_jsonl(text: &str) -> Result<Vec<FramePrediction>> {
    let mut frames = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(idx + 1, e.column(), e.to_string()))?;
        let fp = FramePrediction {
            pose: Pose2::new(rec.t, rec.pose[0], rec.pose[1], rec.pose[2]),
            elements: records_to_elements(rec.elements)?,
        };
        fp.validate()?;
        frames.push(fp);
    }
    Ok(frames)
}

pub fn save_frames(path: &Path, frames: &[FramePrediction]) -> Result<()> {
    write_atomic(path, frames_to_jsonl(frames).as_bytes())
}

pub fn load_frames(path: &Path) -> Result<Vec<FramePrediction>> {
    frames_from_jsonl(&read_file(path)?)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(line, 0, e.to_string())
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers().map_err(csv_error)?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::parse(
            1,
            0,
            format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

#[derive(Deserialize)]
struct PoseRow {
    t: f64,
    x: f64,
    y: f64,
    yaw: f64,
}

pub fn poses_from_csv(text: &str) -> Result<Vec<Pose2>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    check_header(&mut rdr, &["t", "x", "y", "yaw"])?;
    let mut poses = Vec::new();
    for row in rdr.deserialize::<PoseRow>() {
        let r = row.map_err(csv_error)?;
        poses.push(Pose2::new(r.t, r.x, r.y, r.yaw));
    }
    Ok(poses)
}

pub fn poses_to_csv(poses: &[Pose2]) -> String {
    let mut s = String::from("t,x,y,yaw\n");
    for p in poses {
        s.push_str(&format!(
            "{},{},{},{}\n",
            round4(p.t),
            round4(p.x),
            round4(p.y),
            round4(p.yaw)
        ));
    }
    s
}

pub fn load_poses(path: &Path) -> Result<Vec<Pose2>> {
    poses_from_csv(&read_file(path)?)
}

pub fn save_poses(path: &Path, poses: &[Pose2]) -> Result<()> {
    write_atomic(path, poses_to_csv(poses).as_bytes())
}

#[derive(Deserialize)]
struct CloudRow {
    x: f64,
    y: f64,
    z: f64,
}

pub fn pointcloud_from_csv(text: &str) -> Result<Vec<Point3>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    check_header(&mut rdr, &["x", "y", "z"])?;
    rdr.deserialize::<CloudRow>()
        .map(|row| {
            let r = row.map_err(csv_error)?;
            Ok(Point3::new(r.x, r.y, r.z))
        })
        .collect()
}

pub fn pointcloud_to_csv(points: &[Point3]) -> String {
    let mut s = String::from("x,y,z\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", round4(p.x), round4(p.y), round4(p.z)));
    }
    s
}

/// Binary cloud: `MWPCLD`, u16 version, u64 count, then `count` little-endian
/// f64 triples.
pub fn pointcloud_to_bytes(points: &[Point3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + points.len() * 24);
    out.extend_from_slice(CLOUD_MAGIC);
    out.extend_from_slice(&CLOUD_VERSION.to_le_bytes());
    out.extend_from_slice(&(points.len() as u64).to_le_bytes());
    for p in points {
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn pointcloud_from_bytes(bytes: &[u8]) -> Result<Vec<Point3>> {
    if bytes.len() < 16 || &bytes[..6] != CLOUD_MAGIC {
        return Err(Error::parse(0, 0, "missing point cloud header"));
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != CLOUD_VERSION {
        return Err(Error::Version {
            found: version.to_string(),
            expected: CLOUD_VERSION.to_string(),
        });
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != count.saturating_mul(24) {
        return Err(Error::parse(
            0,
            16,
            format!("header declares {count} points but body holds {} bytes", body.len()),
        ));
    }
    Ok(body
        .chunks_exact(24)
        .map(|c| {
            let f = |i: usize| f64::from_le_bytes(c[i * 8..i * 8 + 8].try_into().unwrap());
            Point3::new(f(0), f(1), f(2))
        })
        .collect())
}

/// Loads a cloud in either the CSV or the binary layout, sniffed from the
/// leading bytes.
pub fn load_pointcloud(path: &Path) -> Result<Vec<Point3>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(CLOUD_MAGIC) {
        return pointcloud_from_bytes(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|e| Error::parse(0, 0, e.to_string()))?;
    pointcloud_from_csv(&text)
}

pub fn save_pointcloud(path: &Path, points: &[Point3], binary: bool) -> Result<()> {
    if binary {
        write_atomic(path, &pointcloud_to_bytes(points))
    } else {
        write_atomic(path, pointcloud_to_csv(points).as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_map() -> VectorMap {
        let a = MapElement::new(
            "b1",
            MapClass::Boundary,
            vec![Point2::new(0.0, 3.048), Point2::new(50.0, 3.048)],
            false,
        )
        .unwrap();
        let mut c = MapElement::new(
            "cw",
            MapClass::Crosswalk,
            vec![
                Point2::new(10.0, -3.0),
                Point2::new(13.0, -3.0),
                Point2::new(13.0, 3.0),
                Point2::new(10.0, 3.0),
            ],
            true,
        )
        .unwrap()
        .with_confidence(0.75);
        c.heights = Some(vec![0.1, 0.2, 0.3, 0.4]);
        VectorMap::new("map", Rect::new(-5.0, -10.0, 55.0, 10.0), vec![a, c]).unwrap()
    }

    #[test]
    fn map_round_trip() {
        let map = sample_map();
        let text = map_to_json(&map);
        assert_eq!(map_from_json(&text).unwrap(), map);
    }

    #[test]
    fn empty_map_is_valid() {
        let map = VectorMap::empty("map", Rect::new(0.0, 0.0, 1.0, 1.0));
        let back = map_from_json(&map_to_json(&map)).unwrap();
        assert!(back.elements.is_empty());
    }

    #[test]
    fn unknown_class_names_token() {
        let text = r#"{"frame_id":"map","bounds":[0,0,10,10],"elements":[
            {"id":"a","class":"stopline","closed":false,"confidence":null,"points":[[0,0],[1,1]]}]}"#;
        match map_from_json(text) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("stopline"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let text = r#"{"version":7,"frame_id":"map","bounds":[0,0,1,1],"elements":[]}"#;
        assert!(matches!(map_from_json(text), Err(Error::Version { .. })));
        let ok = r#"{"version":1,"frame_id":"map","bounds":[0,0,1,1],"elements":[]}"#;
        assert!(map_from_json(ok).is_ok());
    }

    #[test]
    fn frames_parse_error_reports_line() {
        let good = r#"{"t":0.0,"pose":[0,0,0],"elements":[]}"#;
        let text = format!("{good}\n{good}\n{{\"t\":1.0,\"pose\":[0,0]}}\n");
        match frames_from_jsonl(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn poses_csv() {
        let poses = poses_from_csv("t,x,y,yaw\n0,1,2,0.5\n0.5,2,2,0.5\n").unwrap();
        assert_eq!(poses.len(), 2);
        assert_eq!(poses[1].x, 2.0);
        assert_eq!(poses_from_csv(&poses_to_csv(&poses)).unwrap(), poses);
        assert!(matches!(poses_from_csv("a,b\n1,2\n"), Err(Error::Parse { .. })));
        match poses_from_csv("t,x,y,yaw\n0,1,2,0\n1,oops,2,0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cloud_formats() {
        let pts = vec![Point3::new(1.0, 2.0, 3.0), Point3::new(-1.5, 0.25, 1e-3)];
        assert_eq!(pointcloud_from_csv(&pointcloud_to_csv(&pts)).unwrap(), pts);
        let bytes = pointcloud_to_bytes(&pts);
        assert_eq!(bytes.len(), 16 + 48);
        assert_eq!(pointcloud_from_bytes(&bytes).unwrap(), pts);

        let mut wrong_version = bytes.clone();
        wrong_version[6] = 9;
        assert!(matches!(
            pointcloud_from_bytes(&wrong_version),
            Err(Error::Version { .. })
        ));
        assert!(matches!(
            pointcloud_from_bytes(&bytes[..30]),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn files_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let map = sample_map();
        save_map(&path, &map).unwrap();
        assert_eq!(load_map(&path).unwrap(), map);

        let cloud = dir.path().join("c.bin");
        let pts = vec![Point3::new(0.1, 0.2, 0.3)];
        save_pointcloud(&cloud, &pts, true).unwrap();
        assert_eq!(load_pointcloud(&cloud).unwrap(), pts);
        save_pointcloud(&cloud, &pts, false).unwrap();
        assert_eq!(load_pointcloud(&cloud).unwrap(), pts);
    }

    #[test]
    fn hash_tracks_content() {
        let map = sample_map();
        let h = map_content_hash(&map);
        assert_eq!(h.len(), 64);
        let mut edited = map.clone();
        edited.elements[0].points[1].x += 0.5;
        assert_ne!(h, map_content_hash(&edited));
    }
}
