//! Fixed descriptors for the nine benchmark datasets.

use crate::DataError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    /// Registry key (lowercase, underscores).
    pub name: String,
    pub image_count: usize,
    pub class_count: usize,
    /// Native image side lengths in pixels (width, height).
    pub image_size: (u32, u32),
    /// Sensor/modality tag.
    pub modality: String,
}

macro_rules! descriptor {
    ($name:expr, $images:expr, $classes:expr, $size:expr, $modality:expr) => {
        DatasetDescriptor {
            name: $name.to_string(),
            image_count: $images,
            class_count: $classes,
            image_size: ($size, $size),
            modality: $modality.to_string(),
        }
    };
}

/// All nine registered datasets.
pub fn all_builtin() -> Vec<DatasetDescriptor> {
    vec![
        descriptor!("uc_merced", 2100, 21, 256, "aerial rgb"),
        descriptor!("aid", 10000, 30, 600, "aerial rgb"),
        descriptor!("eurosat", 27000, 10, 64, "satellite rgb"),
        descriptor!("resisc45", 31500, 45, 256, "aerial rgb"),
        descriptor!("rsscn7", 2800, 7, 400, "aerial rgb"),
        descriptor!("siri_whu", 2400, 12, 200, "aerial rgb"),
        descriptor!("clrs", 15000, 25, 256, "aerial rgb"),
        descriptor!("optimal31", 1860, 31, 256, "aerial rgb"),
        descriptor!("mlrsnet", 109161, 47, 256, "aerial rgb"),
    ]
}

/// Look up one registered dataset.
pub fn builtin(name: &str) -> Result<DatasetDescriptor, DataError> {
    all_builtin()
        .into_iter()
        .find(|d| d.name == name)
        .ok_or_else(|| DataError::UnknownDataset(name.to_string()))
}

/// Human instructions for obtaining a dataset. Retrieval itself is out of
/// scope; this only points at the official distribution.
pub fn download_instructions(name: &str) -> Result<String, DataError> {
    let d = builtin(name)?;
    let source = match name {
        "uc_merced" => "http://weegee.vision.ucmerced.edu/datasets/landuse.html",
        "aid" => "https://captain-whu.github.io/AID/",
        "eurosat" => "https://github.com/phelber/EuroSAT (official RGB version)",
        "resisc45" => "https://www.tensorflow.org/datasets/catalog/resisc45 (NWPU-RESISC45)",
        "rsscn7" => "https://github.com/palewithout/RSSCN7",
        "siri_whu" => "http://www.lmars.whu.edu.cn/prof_web/zhongyanfei/e-code.html",
        "clrs" => "https://github.com/lehaifeng/CLRS",
        "optimal31" => "https://1drv.ms/u/s!AmHssM-7bVZbpRLwFaa-zjOD8HYo (Optimal-31)",
        "mlrsnet" => "https://data.mendeley.com/datasets/7j9bv9vwsx (MLRSNet)",
        _ => unreachable!(),
    };
    Ok(format!(
        "{name}: {count} images, {classes} classes.\n\
         Download from {source}\n\
         Unpack as <root>/{name}/<class folder>/<image>, then place the split\n\
         manifests under <manifests>/{name}/{{train,test}}.tsv.",
        count = d.image_count,
        classes = d.class_count,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_matches_published_descriptors() {
        let check = |name: &str, images: usize, classes: usize| {
            let d = builtin(name).unwrap();
            assert_eq!(d.image_count, images, "{name} image count");
            assert_eq!(d.class_count, classes, "{name} class count");
        };
        check("uc_merced", 2100, 21);
        check("aid", 10000, 30);
        check("eurosat", 27000, 10);
        check("resisc45", 31500, 45);
        check("rsscn7", 2800, 7);
        check("siri_whu", 2400, 12);
        check("clrs", 15000, 25);
        check("optimal31", 1860, 31);
        check("mlrsnet", 109161, 47);
        assert_eq!(all_builtin().len(), 9);
    }

    #[test]
    fn unknown_dataset_is_an_error() {
        assert!(matches!(
            builtin("imagenet"),
            Err(DataError::UnknownDataset(_))
        ));
    }

    #[test]
    fn instructions_cover_every_dataset() {
        for d in all_builtin() {
            let text = download_instructions(&d.name).unwrap();
            assert!(text.contains(&d.name));
        }
    }
}
