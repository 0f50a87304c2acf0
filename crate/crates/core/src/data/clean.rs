use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::manifest::Manifest;
use super::ppm::load_ppm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    Label,
    Corrupt,
    Dimensions,
    Duplicate,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Label => "label",
            RejectReason::Corrupt => "corrupt",
            RejectReason::Dimensions => "dimensions",
            RejectReason::Duplicate => "duplicate",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub path: PathBuf,
    pub reason: RejectReason,
    pub detail: String,
}

type Digest32 = [u8; 32];

/// Drops rows with a non-binary label, an unreadable image, dimensions that
/// contradict the quality tier, or pixel content already seen on an earlier
/// row. Returns the surviving manifest and one rejection per dropped row.
pub fn clean_manifest(manifest: &Manifest) -> (Manifest, Vec<Rejection>) {
    let checked: Vec<std::result::Result<Digest32, (RejectReason, String)>> = manifest
        .records
        .par_iter()
        .map(|r| {
            if r.label != 0 && r.label != 1 {
                return Err((RejectReason::Label, format!("label {}", r.label)));
            }
            let img = load_ppm(manifest.resolve(r))
                .map_err(|e| (RejectReason::Corrupt, e.to_string()))?;
            let want = r.quality.dimensions();
            if (img.height(), img.width()) != want {
                return Err((
                    RejectReason::Dimensions,
                    format!(
                        "{}x{} but {} quality expects {}x{}",
                        img.height(),
                        img.width(),
                        r.quality,
                        want.0,
                        want.1
                    ),
                ));
            }
            let mut h = Sha256::new();
            h.update((img.height() as u64).to_le_bytes());
            h.update((img.width() as u64).to_le_bytes());
            h.update(img.pixels());
            Ok(h.finalize().into())
        })
        .collect();

    let mut out = manifest.clone();
    out.records.clear();
    let mut rejections = Vec::new();
    let mut seen: HashMap<Digest32, PathBuf> = HashMap::new();
    for (r, outcome) in manifest.records.iter().zip(checked) {
        let verdict = outcome.and_then(|digest| match seen.get(&digest) {
            Some(first) => Err((
                RejectReason::Duplicate,
                format!("same pixels as {}", first.display()),
            )),
            None => {
                seen.insert(digest, r.path.clone());
                Ok(())
            }
        });
        match verdict {
            Ok(()) => out.records.push(r.clone()),
            Err((reason, detail)) => rejections.push(Rejection {
                path: r.path.clone(),
                reason,
                detail,
            }),
        }
    }
    let kept: std::collections::HashSet<_> = out.records.iter().map(|r| r.path.clone()).collect();
    out.derived_from
        .retain(|derived, base| kept.contains(derived) && kept.contains(base));
    (out, rejections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{Eye, ImageRecord, Provenance, Quality, Split};
    use crate::data::ppm::{save_ppm, RawImage};

    fn setup(n: usize) -> (tempfile::TempDir, Manifest) {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new(dir.path(), Provenance::Real);
        for i in 0..n {
            let mut px = vec![0u8; 480 * 640 * 3];
            px[0] = i as u8;
            let name = format!("img{i}.ppm");
            save_ppm(&RawImage::new(480, 640, px).unwrap(), dir.path().join(&name)).unwrap();
            m.records.push(ImageRecord {
                path: name.into(),
                patient_id: format!("p{i}"),
                eye: Eye::Left,
                label: (i % 2) as i64,
                quality: Quality::High,
                split: Split::Unassigned,
            });
        }
        (dir, m)
    }

    #[test]
    fn clean_input_is_unchanged() {
        let (_d, m) = setup(3);
        let (out, rej) = clean_manifest(&m);
        assert_eq!(out, m);
        assert!(rej.is_empty());
    }

    #[test]
    fn each_rejection_reason() {
        let (dir, mut m) = setup(5);
        std::fs::write(dir.path().join("img1.ppm"), b"P6 640 480 255\n\x01\x02").unwrap();
        m.records[2].label = 3;
        m.records[3].quality = Quality::Low;
        let mut dup = m.records[0].clone();
        dup.path = "copy.ppm".into();
        std::fs::copy(dir.path().join("img0.ppm"), dir.path().join("copy.ppm")).unwrap();
        m.records.push(dup);

        let (out, rej) = clean_manifest(&m);
        let reasons: Vec<_> = rej.iter().map(|r| (r.path.clone(), r.reason)).collect();
        assert_eq!(
            reasons,
            vec![
                ("img1.ppm".into(), RejectReason::Corrupt),
                ("img2.ppm".into(), RejectReason::Label),
                ("img3.ppm".into(), RejectReason::Dimensions),
                ("copy.ppm".into(), RejectReason::Duplicate),
            ]
        );
        assert_eq!(out.len(), 2);
        let (again, rej2) = clean_manifest(&out);
        assert_eq!(again, out);
        assert!(rej2.is_empty());
    }
}
