use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 6] = ["path", "patient_id", "eye", "label", "quality", "split"];

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Data(format!(
                        concat!("invalid ", stringify!($name), " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

text_enum!(Eye { Left => "L", Right => "R" });
text_enum!(Quality { High => "high", Low => "low" });
text_enum!(Split { Train => "train", Test => "test", Unassigned => "unassigned" });
text_enum!(Provenance { Real => "real", Synthetic => "synthetic", Augmented => "augmented" });

impl Quality {
    /// Expected `(height, width)` of images in this tier.
    pub fn dimensions(self) -> (usize, usize) {
        match self {
            Quality::High => (480, 640),
            Quality::Low => (1200, 1600),
        }
    }
}

/// One row of a manifest. `label` is kept as read so that cleaning can
/// reject values other than 0 and 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub path: PathBuf,
    pub patient_id: String,
    pub eye: Eye,
    pub label: i64,
    pub quality: Quality,
    pub split: Split,
}

impl ImageRecord {
    pub fn group(&self) -> (&str, Eye) {
        (&self.patient_id, self.eye)
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Sidecar {
    provenance: Option<Provenance>,
    source_manifest: Option<PathBuf>,
    #[serde(default)]
    derived_from: BTreeMap<String, String>,
}

/// Ordered image records plus where they came from. Record paths are
/// relative to `root`, the directory holding the manifest file.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ImageRecord>,
    pub provenance: Provenance,
    pub source_manifest: Option<PathBuf>,
    /// Base row path for every augmented row, keyed by the augmented path.
    pub derived_from: BTreeMap<PathBuf, PathBuf>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn to_slash(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, provenance: Provenance) -> Self {
        Manifest {
            root: root.into(),
            records: Vec::new(),
            provenance,
            source_manifest: None,
            derived_from: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, record: &ImageRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Paths unique; labels binary; augmented rows point at a row that is
    /// present in the manifest.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(&r.path) {
                return Err(Error::Data(format!("duplicate path {}", r.path.display())));
            }
            if r.label != 0 && r.label != 1 {
                return Err(Error::Data(format!(
                    "label {} on {} is not 0 or 1",
                    r.label,
                    r.path.display()
                )));
            }
        }
        for (derived, base) in &self.derived_from {
            if !seen.contains(base) {
                return Err(Error::Data(format!(
                    "{} derives from {}, which is not in the manifest",
                    derived.display(),
                    base.display()
                )));
            }
        }
        Ok(())
    }

    /// Reads a manifest CSV and its optional `.meta.json` sidecar.
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header != MANIFEST_HEADER {
            return Err(Error::Data(format!(
                "{}: header must be `{}`",
                path.display(),
                MANIFEST_HEADER.join(",")
            )));
        }
        let mut records = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            let ctx = |e: Error| Error::Data(format!("{} row {}: {e}", path.display(), line + 2));
            let label = row[3]
                .trim()
                .parse::<i64>()
                .map_err(|_| ctx(Error::Data(format!("label `{}` is not an integer", &row[3]))))?;
            records.push(ImageRecord {
                path: PathBuf::from(&row[0]),
                patient_id: row[1].to_owned(),
                eye: row[2].parse().map_err(ctx)?,
                label,
                quality: row[4].parse().map_err(ctx)?,
                split: row[5].parse().map_err(ctx)?,
            });
        }

        let side = sidecar_path(path);
        let sidecar: Sidecar = match fs::read(&side) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| Error::Data(format!("{}: {e}", side.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Sidecar::default(),
            Err(e) => return Err(Error::io(side, e)),
        };
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest {
            root,
            records,
            provenance: sidecar.provenance.unwrap_or(Provenance::Real),
            source_manifest: sidecar.source_manifest,
            derived_from: sidecar
                .derived_from
                .into_iter()
                .map(|(k, v)| (PathBuf::from(k), PathBuf::from(v)))
                .collect(),
        })
    }

    /// Writes the CSV plus sidecar. Record paths are written as stored, so
    /// they stay relative to `root`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(&mut buf);
            w.write_record(MANIFEST_HEADER)?;
            for r in &self.records {
                w.write_record([
                    to_slash(&r.path),
                    r.patient_id.clone(),
                    r.eye.to_string(),
                    r.label.to_string(),
                    r.quality.to_string(),
                    r.split.to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))?;

        let sidecar = Sidecar {
            provenance: Some(self.provenance),
            source_manifest: self.source_manifest.clone(),
            derived_from: self
                .derived_from
                .iter()
                .map(|(k, v)| (to_slash(k), to_slash(v)))
                .collect(),
        };
        let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
        let side = sidecar_path(path);
        fs::write(&side, json).map_err(|e| Error::io(side, e))
    }

    /// Re-expresses every record path relative to `new_root`.
    pub fn rebase(&self, new_root: &Path) -> Result<Manifest> {
        let mut out = self.clone();
        let map = |p: &Path| relative_path(&self.root.join(p), new_root);
        for r in &mut out.records {
            r.path = map(&r.path)?;
        }
        out.derived_from = self
            .derived_from
            .iter()
            .map(|(k, v)| Ok((map(k)?, map(v)?)))
            .collect::<Result<_>>()?;
        out.root = new_root.to_path_buf();
        Ok(out)
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    let abs = if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir()
            .map_err(|e| Error::io(p, e))?
            .join(p)
    };
    let mut out = PathBuf::new();
    for c in abs.components() {
        match c {
            Component::ParentDir => {
                out.pop();
            }
            Component::CurDir => {}
            other => out.push(other),
        }
    }
    Ok(out)
}

/// Path of `target` as seen from directory `base`.
pub fn relative_path(target: &Path, base: &Path) -> Result<PathBuf> {
    let t = absolute(target)?;
    let b = absolute(base)?;
    let tc: Vec<_> = t.components().collect();
    let bc: Vec<_> = b.components().collect();
    let common = tc.iter().zip(&bc).take_while(|(a, b)| a == b).count();
    let mut out = PathBuf::new();
    for _ in common..bc.len() {
        out.push("..");
    }
    for c in &tc[common..] {
        out.push(c);
    }
    Ok(out)
}
