//! Tab-separated `image<TAB>label` dataset listings.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{netpbm, shapes, Sample};
use crate::error::{Result, SegError};
use crate::label::VOID;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<(PathBuf, PathBuf)>,
    pub num_classes: Option<usize>,
    pub void_index: u8,
}

impl DatasetManifest {
    /// Parses a manifest; relative paths resolve against its directory.
    /// `# num_classes = K` and `# void = V` comment lines set metadata.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut m = Self::parse(&text, &root)?;
        for (i, (img, lbl)) in m.entries.iter().enumerate() {
            for p in [img, lbl] {
                if !p.is_file() {
                    return Err(SegError::Data(format!("{}: entry {} names missing file {}", path.display(), i + 1, p.display())));
                }
            }
        }
        m.root = root;
        Ok(m)
    }

    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut m = Self { root: root.to_path_buf(), entries: Vec::new(), num_classes: None, void_index: VOID };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if let Some(comment) = line.trim_start().strip_prefix('#') {
                if let Some((k, v)) = comment.split_once('=') {
                    let bad = || SegError::Data(format!("manifest line {}: bad value `{}`", lineno + 1, v.trim()));
                    match k.trim() {
                        "num_classes" => m.num_classes = Some(v.trim().parse().map_err(|_| bad())?),
                        "void" => m.void_index = v.trim().parse().map_err(|_| bad())?,
                        _ => {}
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (img, lbl) = line
                .split_once('\t')
                .ok_or_else(|| SegError::Data(format!("manifest line {} is not `image<TAB>label`", lineno + 1)))?;
            m.entries.push((root.join(img.trim()), root.join(lbl.trim())));
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_sample(&self, i: usize) -> Result<Sample> {
        let (img, lbl) = &self.entries[i];
        let s = Sample::new(netpbm::load_image(img)?, netpbm::load_label(lbl)?)?;
        if let Some(k) = self.num_classes {
            s.label.validate(k)?;
        }
        Ok(s)
    }

    pub fn load_all(&self) -> Result<Vec<Sample>> {
        (0..self.len()).map(|i| self.load_sample(i)).collect()
    }
}

/// Writes `samples` as `images/NNNNN.ppm`, `labels/NNNNN.pgm` and
/// `manifest.tsv` under `dir`.
pub fn write_dataset(dir: &Path, samples: &[Sample], num_classes: usize) -> Result<DatasetManifest> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("labels"))?;
    let mut text = format!("# num_classes = {num_classes}\n# void = {VOID}\n");
    for (i, s) in samples.iter().enumerate() {
        let img = format!("images/{i:05}.ppm");
        let lbl = format!("labels/{i:05}.pgm");
        netpbm::save_image(&dir.join(&img), &s.image)?;
        netpbm::save_label(&dir.join(&lbl), &s.label)?;
        text.push_str(&format!("{img}\t{lbl}\n"));
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, text)?;
    DatasetManifest::load(&path)
}

/// Generates `n` shape images and writes them as a dataset under `dir`.
pub fn gen_shapes_dataset(dir: &Path, n: usize, side: usize, num_classes: usize, seed: u64) -> Result<DatasetManifest> {
    let samples = shapes::generate_shapes(0, n, side, num_classes, seed)?;
    write_dataset(dir, &samples, num_classes)
}
