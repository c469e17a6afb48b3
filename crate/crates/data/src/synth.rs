//! Synthetic dataset fixtures: tiny on-disk datasets with class-correlated
//! pixel statistics, used wherever tests need a full data pipeline without
//! the real benchmark archives.

use crate::descriptor::DatasetDescriptor;
use crate::labels::LabelMap;
use crate::manifest::{Dataset, Split, SplitManifest};
use crate::DataError;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::path::Path;

/// Write a complete synthetic dataset (images + manifests) under `dir` and
/// load it. Each class gets a distinct mean color with per-image noise, so
/// frozen features carry usable class signal.
pub fn build_synthetic(
    dir: &Path,
    name: &str,
    classes: &[&str],
    train_per_class: usize,
    test_per_class: usize,
    side: u32,
    seed: u64,
) -> Result<Dataset, DataError> {
    let root = dir.join("images");
    let manifest_root = dir.join("manifests");
    std::fs::create_dir_all(manifest_root.join(name))?;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut train_entries = Vec::new();
    let mut test_entries = Vec::new();
    for (class_idx, class) in classes.iter().enumerate() {
        let class_dir = root.join(class);
        std::fs::create_dir_all(&class_dir)?;
        let base = [
            (40 + (class_idx * 53) % 200) as u8,
            (90 + (class_idx * 101) % 160) as u8,
            (20 + (class_idx * 37) % 220) as u8,
        ];
        for i in 0..train_per_class + test_per_class {
            let img = image::RgbImage::from_fn(side, side, |_, _| {
                let mut jitter = |b: u8| {
                    let noise = (rng.next_u32() % 41) as i16 - 20;
                    (b as i16 + noise).clamp(0, 255) as u8
                };
                image::Rgb([jitter(base[0]), jitter(base[1]), jitter(base[2])])
            });
            let rel = format!("{class}/{class}_{i:03}.png");
            img.save(root.join(&rel))
                .map_err(|e| DataError::BadManifest {
                    path: rel.clone(),
                    problem: e.to_string(),
                })?;
            if i < train_per_class {
                train_entries.push((rel, class.to_string()));
            } else {
                test_entries.push((rel, class.to_string()));
            }
        }
    }
    SplitManifest::new(Split::Train, "synthetic", train_entries)
        .write(&manifest_root.join(name).join(Split::Train.file_name()))?;
    SplitManifest::new(Split::Test, "synthetic", test_entries)
        .write(&manifest_root.join(name).join(Split::Test.file_name()))?;

    let descriptor = DatasetDescriptor {
        name: name.to_string(),
        image_count: classes.len() * (train_per_class + test_per_class),
        class_count: classes.len(),
        image_size: (side, side),
        modality: "synthetic rgb".to_string(),
    };
    let map_text = format!(
        "# {name} label map, version 1\n{}",
        classes
            .iter()
            .map(|c| format!("{c}\t{}\n", c.replace('_', " ")))
            .collect::<String>()
    );
    // make the fixture loadable through the custom-dataset path as well
    std::fs::write(
        manifest_root.join(name).join("descriptor.json"),
        serde_json::to_string_pretty(&descriptor).expect("descriptor serializes"),
    )?;
    std::fs::write(manifest_root.join(name).join("labelmap.tsv"), &map_text)?;
    let label_map = LabelMap::from_text(name, &map_text)?;
    Dataset::load_with(descriptor, label_map, &root, &manifest_root)
}
