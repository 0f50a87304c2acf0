use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::image::{augment, normalize, resize_bilinear, to_raw, AugmentOp};
use super::manifest::{relative_path, ImageRecord, Manifest, Provenance};
use super::ppm::{load_ppm, save_ppm, RawImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Normalizes and resizes one image to a square `[size, size, 3]` input.
pub fn preprocess(image: &RawImage, size: usize) -> Result<Tensor<f32>> {
    resize_bilinear(&normalize(image), size, size)
}

/// Loads and preprocesses the given records in parallel, preserving order.
pub fn load_inputs(manifest: &Manifest, records: &[&ImageRecord], size: usize) -> Result<Vec<Tensor<f32>>> {
    records
        .par_iter()
        .map(|r| preprocess(&load_ppm(manifest.resolve(r))?, size))
        .collect()
}

/// Stacks equally shaped `[H, W, C]` images into one `[N, H, W, C]` batch.
pub fn stack(images: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::shape("cannot stack an empty batch"))?;
    let mut shape = vec![images.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(images.len() * first.len());
    for img in images {
        if img.shape() != first.shape() {
            return Err(Error::shape(format!(
                "batch mixes shapes {:?} and {:?}",
                first.shape(),
                img.shape()
            )));
        }
        data.extend_from_slice(img.data());
    }
    Tensor::from_vec(shape, data)
}

/// Writes one augmented copy of every record for every op into
/// `out_dir/images` and returns a manifest rooted at `out_dir` holding the
/// originals followed by the new rows. The manifest is also saved as
/// `out_dir/manifest.csv`.
pub fn augment_dataset(manifest: &Manifest, ops: &[AugmentOp], out_dir: impl AsRef<Path>) -> Result<Manifest> {
    if ops.is_empty() {
        return Err(Error::param("at least one augmentation is required"));
    }
    let out_dir = out_dir.as_ref();
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;

    let mut out = manifest.rebase(out_dir)?;
    out.provenance = Provenance::Augmented;
    out.source_manifest = Some(relative_path(&manifest.root, out_dir)?);

    let jobs: Vec<(usize, AugmentOp)> = (0..manifest.len())
        .flat_map(|i| ops.iter().map(move |&op| (i, op)))
        .collect();
    let new_rows: Vec<ImageRecord> = jobs
        .par_iter()
        .map(|&(i, op)| {
            let base = &manifest.records[i];
            let t = normalize(&load_ppm(manifest.resolve(base))?);
            let stem = base
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let rel = Path::new("images").join(format!("{i:05}_{stem}_{op}.ppm"));
            save_ppm(&to_raw(&augment(&t, op)?)?, out_dir.join(&rel))?;
            Ok(ImageRecord {
                path: rel,
                ..base.clone()
            })
        })
        .collect::<Result<_>>()?;

    for (row, &(i, _)) in new_rows.iter().zip(&jobs) {
        out.derived_from
            .insert(row.path.clone(), out.records[i].path.clone());
    }
    out.records.extend(new_rows);
    out.save(out_dir.join("manifest.csv"))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{Eye, Quality, Split};
    use std::collections::HashSet;

    fn tiny_manifest(dir: &Path, n: usize) -> Manifest {
        let mut m = Manifest::new(dir, Provenance::Real);
        for i in 0..n {
            let px = (0..4 * 6 * 3).map(|k| ((k * 7 + i) % 256) as u8).collect();
            let name = format!("src{i}.ppm");
            save_ppm(&RawImage::new(4, 6, px).unwrap(), dir.join(&name)).unwrap();
            m.records.push(ImageRecord {
                path: name.into(),
                patient_id: format!("p{}", i / 2),
                eye: if i % 2 == 0 { Eye::Left } else { Eye::Right },
                label: (i % 3 == 0) as i64,
                quality: Quality::High,
                split: Split::Train,
            });
        }
        m
    }

    #[test]
    fn expands_by_op_count_and_preserves_labels() {
        let src = tempfile::tempdir().unwrap();
        let m = tiny_manifest(src.path(), 10);
        let out = tempfile::tempdir().unwrap();
        let ops = [AugmentOp::Rot90, AugmentOp::FlipH, AugmentOp::Contrast];
        let a = augment_dataset(&m, &ops, out.path()).unwrap();
        assert_eq!(a.len(), 40);
        a.validate().unwrap();
        for row in &a.records[10..] {
            let base_path = &a.derived_from[&row.path];
            let base = a.records.iter().find(|r| &r.path == base_path).unwrap();
            assert_eq!((row.label, row.group(), row.quality), (base.label, base.group(), base.quality));
            assert!(a.resolve(row).exists());
        }
        // originals remain reachable from the new root
        assert_eq!(
            load_ppm(a.resolve(&a.records[0])).unwrap(),
            load_ppm(m.resolve(&m.records[0])).unwrap()
        );
        let reloaded = Manifest::load(out.path().join("manifest.csv")).unwrap();
        assert_eq!(reloaded.records, a.records);
        assert_eq!(reloaded.provenance, Provenance::Augmented);
    }

    #[test]
    fn disjoint_out_dirs_never_collide() {
        let src = tempfile::tempdir().unwrap();
        let m = tiny_manifest(src.path(), 3);
        let o1 = tempfile::tempdir().unwrap();
        let o2 = tempfile::tempdir().unwrap();
        let a = augment_dataset(&m, &[AugmentOp::Rot180], o1.path()).unwrap();
        let b = augment_dataset(&m, &[AugmentOp::Rot180], o2.path()).unwrap();
        let pa: HashSet<_> = a.records[3..].iter().map(|r| a.resolve(r)).collect();
        let pb: HashSet<_> = b.records[3..].iter().map(|r| b.resolve(r)).collect();
        assert!(pa.is_disjoint(&pb));
        assert!(augment_dataset(&m, &[], o1.path()).is_err());
    }

    #[test]
    fn preprocess_and_stack() {
        let img = RawImage::new(4, 6, vec![255; 72]).unwrap();
        let t = preprocess(&img, 3).unwrap();
        assert_eq!(t.shape(), &[3, 3, 3]);
        assert!(t.data().iter().all(|&v| v == 1.0));
        let b = stack(&[&t, &t]).unwrap();
        assert_eq!(b.shape(), &[2, 3, 3, 3]);
        assert!(stack(&[]).is_err());
    }
}
