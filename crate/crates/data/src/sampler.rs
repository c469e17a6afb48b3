//! Class-balanced k-shot sampling with a per-(dataset, k, seed) derived RNG
//! stream. Manifests persist so every method consumes the identical draw.

use crate::guard::enter_training;
use crate::manifest::{Dataset, Split};
use crate::DataError;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeMap;
use std::path::Path;

/// Shot counts the protocol defines.
pub const ALLOWED_SHOTS: [usize; 5] = [1, 2, 4, 8, 16];

/// The exact (image id, class id) list drawn for a (dataset, k, seed)
/// triple; the unit of reproducibility shared by every method.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotManifest {
    pub dataset: String,
    pub k: usize,
    pub seed: u64,
    pub split_digest: String,
    pub items: Vec<(String, usize)>,
}

impl FewShotManifest {
    /// Content digest over the manifest (exact regeneration check).
    pub fn digest(&self) -> String {
        let mut buf = format!("{}|{}|{}|{}|", self.dataset, self.k, self.seed, self.split_digest);
        for (p, c) in &self.items {
            buf.push_str(p);
            buf.push('\t');
            buf.push_str(&c.to_string());
            buf.push('\n');
        }
        rsprompt_backbone::archive::digest_bytes(buf.as_bytes())
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::new();
        out.push_str(&format!(
            "# dataset={} k={} seed={} split_digest={}\n",
            self.dataset, self.k, self.seed, self.split_digest
        ));
        for (p, c) in &self.items {
            out.push_str(&format!("{p}\t{c}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        let mut dataset = String::new();
        let mut k = 0usize;
        let mut seed = 0u64;
        let mut split_digest = String::new();
        let mut items = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix('#') {
                for token in rest.split_whitespace() {
                    if let Some((key, value)) = token.split_once('=') {
                        match key {
                            "dataset" => dataset = value.to_string(),
                            "k" => k = value.parse().unwrap_or(0),
                            "seed" => seed = value.parse().unwrap_or(0),
                            "split_digest" => split_digest = value.to_string(),
                            _ => {}
                        }
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (p, c) = line.split_once('\t').ok_or_else(|| DataError::BadManifest {
                path: path.display().to_string(),
                problem: format!("line {}: expected path<TAB>class_id", i + 1),
            })?;
            let class: usize = c.parse().map_err(|_| DataError::BadManifest {
                path: path.display().to_string(),
                problem: format!("line {}: bad class id {c:?}", i + 1),
            })?;
            items.push((p.to_string(), class));
        }
        Ok(FewShotManifest {
            dataset,
            k,
            seed,
            split_digest,
            items,
        })
    }

    /// File name convention under the few-shot directory.
    pub fn file_name(dataset: &str, k: usize, seed: u64) -> String {
        format!("{dataset}_k{k}_seed{seed}.tsv")
    }
}

/// Derive the sampling RNG from (dataset, k, seed). The stream is disjoint
/// per triple, so draws never alias across settings or seeds.
fn derived_rng(dataset: &str, k: usize, seed: u64) -> ChaCha12Rng {
    let tag = format!("fewshot|{dataset}|k={k}|seed={seed}");
    let digest = rsprompt_backbone::archive::digest_bytes(tag.as_bytes());
    let mut key = [0u8; 32];
    for (i, chunk) in digest.as_bytes().chunks(2).take(32).enumerate() {
        key[i] = u8::from_str_radix(std::str::from_utf8(chunk).unwrap(), 16).unwrap();
    }
    ChaCha12Rng::from_seed(key)
}

/// Uniform integer in `[0, bound)` by rejection; stable across platforms.
fn uniform_below(rng: &mut ChaCha12Rng, bound: u64) -> u64 {
    assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return v % bound;
        }
    }
}

/// Draw exactly `k` training images per class, uniformly without
/// replacement. Same (dataset, k, seed) always regenerates bit-identically.
/// Draws for different `k` are independent: the k=8 manifest need not
/// contain the k=4 one.
pub fn sample_few_shot(
    dataset: &Dataset,
    k: usize,
    seed: u64,
) -> Result<FewShotManifest, DataError> {
    if !ALLOWED_SHOTS.contains(&k) {
        return Err(DataError::BadShotCount(k));
    }
    // sampling is a training-phase activity: test reads are barred
    let _phase = enter_training();
    debug_assert_eq!(dataset.train.split, Split::Train);

    // class -> train indices, in manifest order
    let mut per_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, (_, raw)) in dataset.train.items().iter().enumerate() {
        per_class.entry(dataset.class_id(raw)?).or_default().push(idx);
    }
    for class_id in 0..dataset.class_raw.len() {
        let available = per_class.get(&class_id).map_or(0, Vec::len);
        if available < k {
            return Err(DataError::NotEnoughImages {
                class: dataset.class_raw[class_id].clone(),
                available,
                needed: k,
            });
        }
    }

    let mut rng = derived_rng(&dataset.descriptor.name, k, seed);
    let mut items = Vec::with_capacity(k * per_class.len());
    for (class_id, indices) in &per_class {
        // partial Fisher-Yates: the first k slots become the draw
        let mut pool = indices.clone();
        for i in 0..k {
            let j = i + uniform_below(&mut rng, (pool.len() - i) as u64) as usize;
            pool.swap(i, j);
        }
        for &idx in pool.iter().take(k) {
            items.push((dataset.train.items()[idx].0.clone(), *class_id));
        }
    }
    Ok(FewShotManifest {
        dataset: dataset.descriptor.name.clone(),
        k,
        seed,
        split_digest: dataset.train.digest(),
        items,
    })
}

/// Draw a class-balanced validation sample from the train split, disjoint
/// from an existing few-shot draw, on its own derived stream.
pub fn sample_validation(
    dataset: &Dataset,
    exclude: &FewShotManifest,
    per_class: usize,
    seed: u64,
) -> Result<FewShotManifest, DataError> {
    let _phase = enter_training();
    let taken: std::collections::HashSet<&str> =
        exclude.items.iter().map(|(p, _)| p.as_str()).collect();
    let mut per_class_pool: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, (path, raw)) in dataset.train.items().iter().enumerate() {
        if !taken.contains(path.as_str()) {
            per_class_pool
                .entry(dataset.class_id(raw)?)
                .or_default()
                .push(idx);
        }
    }
    for class_id in 0..dataset.class_raw.len() {
        let available = per_class_pool.get(&class_id).map_or(0, Vec::len);
        if available < per_class {
            return Err(DataError::NotEnoughImages {
                class: dataset.class_raw[class_id].clone(),
                available,
                needed: per_class,
            });
        }
    }
    let tag = format!(
        "valshot|{}|k={}|seed={seed}",
        dataset.descriptor.name, exclude.k
    );
    let digest = rsprompt_backbone::archive::digest_bytes(tag.as_bytes());
    let mut key = [0u8; 32];
    for (i, chunk) in digest.as_bytes().chunks(2).take(32).enumerate() {
        key[i] = u8::from_str_radix(std::str::from_utf8(chunk).unwrap(), 16).unwrap();
    }
    let mut rng = ChaCha12Rng::from_seed(key);
    let mut items = Vec::with_capacity(per_class * per_class_pool.len());
    for (class_id, indices) in &per_class_pool {
        let mut pool = indices.clone();
        for i in 0..per_class {
            let j = i + uniform_below(&mut rng, (pool.len() - i) as u64) as usize;
            pool.swap(i, j);
        }
        for &idx in pool.iter().take(per_class) {
            items.push((dataset.train.items()[idx].0.clone(), *class_id));
        }
    }
    Ok(FewShotManifest {
        dataset: dataset.descriptor.name.clone(),
        k: per_class,
        seed,
        split_digest: dataset.train.digest(),
        items,
    })
}
