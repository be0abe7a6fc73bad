//! Dataset directories.
//!
//! A dataset directory holds `meta.toml` (the generating [`DataConfig`])
//! and one raw array per subset. Measurements are stacked as
//! `[count, len]`, images as `[count, n, n]`. Forward models are rebuilt
//! from the config, so the directory can always be regenerated exactly.

use std::fs;
use std::path::Path;

use kidot_core::synth::{DataConfig, Dataset};
use kidot_core::{ForwardModel, Image, Measurement};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{write_pgm16, RawArray};

const META: &str = "meta.toml";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    data: DataConfig,
}

/// A dataset together with the models that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDataset {
    pub config: DataConfig,
    pub fm_train: ForwardModel,
    pub fm_test: ForwardModel,
    pub data: Dataset,
}

impl StoredDataset {
    pub fn generate(config: &DataConfig) -> Result<Self> {
        let (fm_train, fm_test, data) = config.build()?;
        Ok(Self {
            config: config.clone(),
            fm_train,
            fm_test,
            data,
        })
    }

    pub fn problem(&self) -> kidot_core::training::Problem<'_> {
        kidot_core::training::Problem {
            fm_train: &self.fm_train,
            fm_test: &self.fm_test,
            data: &self.data,
        }
    }
}

fn stack_measurements(ys: &[&Measurement], len: usize) -> Result<RawArray> {
    let data = ys.iter().flat_map(|y| y.data().iter().copied()).collect();
    RawArray::new(vec![ys.len(), len], data)
}

fn stack_images(xs: &[&Image], n: usize) -> Result<RawArray> {
    let data = xs.iter().flat_map(|x| x.data().iter().copied()).collect();
    RawArray::new(vec![xs.len(), n, n], data)
}

fn ys(v: &[(Measurement, Image)]) -> Vec<&Measurement> {
    v.iter().map(|(y, _)| y).collect()
}

fn xs(v: &[(Measurement, Image)]) -> Vec<&Image> {
    v.iter().map(|(_, x)| x).collect()
}

fn mask_array(fm: &ForwardModel) -> Option<RawArray> {
    let m = fm.mask()?;
    let n = m.side();
    let data = m.keep().iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
    Some(RawArray {
        shape: vec![n, n],
        data,
    })
}

/// Writes `ds` into `dir` (created if missing).
pub fn save_dataset(dir: &Path, ds: &StoredDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let meta = Meta {
        format_version: FORMAT_VERSION,
        data: ds.config.clone(),
    };
    let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    let p = dir.join(META);
    fs::write(&p, text).map_err(Error::io(&p))?;

    let n = ds.config.side;
    let len = measurement_len(&ds.fm_test);
    let d = &ds.data;
    stack_measurements(&d.unpaired.iter().collect::<Vec<_>>(), len)?.write(&dir.join("unpaired_y.raw"))?;
    stack_images(&d.clean.iter().collect::<Vec<_>>(), n)?.write(&dir.join("clean_x.raw"))?;
    stack_measurements(&ys(&d.paired), len)?.write(&dir.join("paired_y.raw"))?;
    stack_images(&xs(&d.paired), n)?.write(&dir.join("paired_x.raw"))?;
    stack_measurements(&ys(&d.validation), len)?.write(&dir.join("validation_y.raw"))?;
    stack_images(&xs(&d.validation), n)?.write(&dir.join("validation_x.raw"))?;
    for (name, fm) in [("mask_train", &ds.fm_train), ("mask_test", &ds.fm_test)] {
        if let Some(m) = mask_array(fm) {
            m.write(&dir.join(format!("{name}.raw")))?;
            let img = Image::from_vec(m.shape[0], m.data)?;
            write_pgm16(&img, &dir.join(format!("{name}.pgm")))?;
        }
    }
    Ok(())
}

fn measurement_len(fm: &ForwardModel) -> usize {
    fm.zero_measurement().data().len()
}

fn read_measurements(dir: &Path, name: &str, fm: &ForwardModel, count: usize) -> Result<Vec<Measurement>> {
    let p = dir.join(name);
    let a = RawArray::read(&p)?;
    let len = measurement_len(fm);
    if a.shape != [count, len] {
        return Err(Error::corrupt(
            &p,
            format!("shape {:?}, expected [{count}, {len}]", a.shape),
        ));
    }
    let (rows, cols) = fm.range_shape();
    a.data
        .chunks_exact(len.max(1))
        .take(count)
        .map(|c| Ok(Measurement::new(fm.kind(), rows, cols, c.to_vec())?))
        .collect()
}

fn read_images(dir: &Path, name: &str, n: usize, count: usize) -> Result<Vec<Image>> {
    let p = dir.join(name);
    let a = RawArray::read(&p)?;
    if a.shape != [count, n, n] {
        return Err(Error::corrupt(
            &p,
            format!("shape {:?}, expected [{count}, {n}, {n}]", a.shape),
        ));
    }
    a.data
        .chunks_exact((n * n).max(1))
        .take(count)
        .map(|c| Ok(Image::from_vec(n, c.to_vec())?))
        .collect()
}

/// Reads a directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<StoredDataset> {
    let p = dir.join(META);
    let text = fs::read_to_string(&p).map_err(Error::io(&p))?;
    let meta: Meta = toml::from_str(&text).map_err(|e| Error::corrupt(&p, e.to_string()))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            path: p,
            found: meta.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let config = meta.data;
    let (fm_train, fm_test) = config.forward_models()?;
    let n = config.side;
    let c = config.counts;
    let pair = |ys: Vec<Measurement>, xs: Vec<Image>| ys.into_iter().zip(xs).collect::<Vec<_>>();
    let data = Dataset {
        unpaired: read_measurements(dir, "unpaired_y.raw", &fm_test, c.unpaired)?,
        clean: read_images(dir, "clean_x.raw", n, c.clean)?,
        paired: pair(
            read_measurements(dir, "paired_y.raw", &fm_train, c.paired)?,
            read_images(dir, "paired_x.raw", n, c.paired)?,
        ),
        validation: pair(
            read_measurements(dir, "validation_y.raw", &fm_test, c.validation)?,
            read_images(dir, "validation_x.raw", n, c.validation)?,
        ),
    };
    Ok(StoredDataset {
        config,
        fm_train,
        fm_test,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use kidot_core::synth::DatasetCounts;

    fn small() -> DataConfig {
        DataConfig {
            counts: DatasetCounts {
                unpaired: 3,
                clean: 2,
                paired: 2,
                validation: 1,
            },
            ..DataConfig::default()
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = StoredDataset::generate(&small()).unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn wrong_counts_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let ds = StoredDataset::generate(&small()).unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let mut other = ds.clone();
        other.config.counts.clean = 5;
        fs::write(
            dir.path().join(META),
            toml::to_string(&Meta {
                format_version: FORMAT_VERSION,
                data: other.config,
            })
            .unwrap(),
        )
        .unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Corrupt { .. })));
    }
}
