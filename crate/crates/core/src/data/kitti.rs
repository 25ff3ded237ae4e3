//! KITTI object label and detection text files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DONT_CARE: &str = "DontCare";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiObject {
    pub kind: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// (left, top, right, bottom) in pixels.
    pub bbox: [f64; 4],
    pub dimensions: [f64; 3],
    pub location: [f64; 3],
    pub rotation_y: f64,
    /// Present on detection lines only.
    pub score: Option<f64>,
}

impl KittiObject {
    pub fn is_dont_care(&self) -> bool {
        self.kind == DONT_CARE
    }

    pub fn height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    /// Box with every non-2D field at the KITTI "unknown" values.
    pub fn detection(kind: &str, bbox: [f64; 4], score: f64) -> Self {
        Self {
            kind: kind.to_string(),
            truncated: -1.0,
            occluded: -1,
            alpha: -10.0,
            bbox,
            dimensions: [-1.0; 3],
            location: [-1000.0; 3],
            rotation_y: -10.0,
            score: Some(score),
        }
    }
}

/// Parses label (15 fields) or detection (16 fields) text. Blank lines are skipped.
pub fn parse_kitti_labels(text: &str) -> Result<Vec<KittiObject>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 15 && fields.len() != 16 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 15 or 16 fields, found {}", fields.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            fields[k].parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("field {} (`{}`) is not a number", k + 1, fields[k]),
            })
        };
        let occluded_raw = num(2)?;
        if occluded_raw.fract() != 0.0 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("occlusion `{}` is not an integer", fields[2]),
            });
        }
        out.push(KittiObject {
            kind: fields[0].to_string(),
            truncated: num(1)?,
            occluded: occluded_raw as i32,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
            dimensions: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if fields.len() == 16 { Some(num(15)?) } else { None },
        });
    }
    Ok(out)
}

/// One line per object. Numbers use the shortest representation that parses
/// back to the same value, so `parse ∘ serialize` is the identity.
pub fn serialize_kitti(objects: &[KittiObject]) -> String {
    let mut s = String::new();
    for o in objects {
        let _ = write!(s, "{} {} {} {}", o.kind, o.truncated, o.occluded, o.alpha);
        for v in o.bbox.iter().chain(&o.dimensions).chain(&o.location) {
            let _ = write!(s, " {v}");
        }
        let _ = write!(s, " {}", o.rotation_y);
        if let Some(score) = o.score {
            let _ = write!(s, " {score}");
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

impl Difficulty {
    pub const LEVELS: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Self::Easy => "easy",
            Self::Moderate => "moderate",
            Self::Hard => "hard",
            Self::Ignored => "ignored",
        }
    }
}

/// Evaluation subset of groundtruth objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifficultyFilter {
    /// Cumulative bucket: an object counts if it is at least this easy.
    UpTo(Difficulty),
    /// Every non-DontCare object.
    All,
}

impl DifficultyFilter {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Self::UpTo(Difficulty::Easy)),
            "moderate" => Ok(Self::UpTo(Difficulty::Moderate)),
            "hard" => Ok(Self::UpTo(Difficulty::Hard)),
            "all" => Ok(Self::All),
            other => Err(Error::Input(format!(
                "unknown difficulty `{other}` (expected easy, moderate, hard or all)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::UpTo(d) => d.name(),
            Self::All => "all",
        }
    }

    pub fn admits(self, d: Difficulty) -> bool {
        match self {
            Self::UpTo(level) => d != Difficulty::Ignored && d <= level,
            Self::All => true,
        }
    }
}

/// Benchmark buckets by box height, occlusion and truncation.
pub fn kitti_difficulty(obj: &KittiObject) -> Difficulty {
    let h = obj.height();
    let (occ, trunc) = (obj.occluded, obj.truncated);
    if h >= 40.0 && occ <= 0 && trunc <= 0.15 {
        Difficulty::Easy
    } else if h >= 25.0 && occ <= 1 && trunc <= 0.30 {
        Difficulty::Moderate
    } else if h >= 25.0 && occ <= 2 && trunc <= 0.50 {
        Difficulty::Hard
    } else {
        Difficulty::Ignored
    }
}

/// Reads every `*.txt` file in a directory, keyed by file stem (image id).
pub fn read_kitti_dir(dir: &Path) -> Result<BTreeMap<String, Vec<KittiObject>>> {
    let mut out = BTreeMap::new();
    let entries =
        std::fs::read_dir(dir).map_err(|e| Error::Input(format!("cannot read directory {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let text = std::fs::read_to_string(&path)?;
        let objects = parse_kitti_labels(&text).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        out.insert(id, objects);
    }
    Ok(out)
}
