use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::probe_wav;
use crate::dsp::DspParams;
use crate::error::{Error, Result};

const HEADER_TAG: &str = "#specpost-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clip_id: String,
    /// Relative to [`CorpusManifest::root`].
    pub audio_path: PathBuf,
    pub split: Split,
}

/// Train/test selection over a directory of clips.
///
/// On disk: one header line
/// `#specpost-manifest v1<TAB>sample_rate=<hz><TAB>dsp=<fingerprint><TAB>root=<dir>`
/// followed by `clip_id<TAB>relative_path<TAB>split` per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub sample_rate: u32,
    pub created_with: String,
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn split(&self, s: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == s)
    }

    pub fn count(&self, s: Split) -> usize {
        self.split(s).count()
    }

    pub fn audio_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.audio_path)
    }

    /// Record the parameters the pairs were (or will be) extracted with.
    pub fn stamp(&mut self, p: &DspParams) {
        self.created_with = p.fingerprint();
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{HEADER_TAG}\tsample_rate={}\tdsp={}\troot={}\n",
            self.sample_rate,
            self.created_with,
            self.root.display()
        );
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\n", e.clip_id, e.audio_path.display(), e.split));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|reason| Error::format(path, reason))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty manifest")?;
        let mut fields = header.split('\t');
        if fields.next() != Some(HEADER_TAG) {
            return Err(format!("bad header line {header:?}"));
        }
        let (mut sample_rate, mut created_with, mut root) = (None, None, None);
        for f in fields {
            match f.split_once('=') {
                Some(("sample_rate", v)) => {
                    sample_rate = Some(v.parse::<u32>().map_err(|e| format!("sample_rate: {e}"))?)
                }
                Some(("dsp", v)) => created_with = Some(v.to_string()),
                Some(("root", v)) => root = Some(PathBuf::from(v)),
                _ => return Err(format!("unknown header field {f:?}")),
            }
        }
        let mut entries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(format!("line {}: expected 3 tab-separated fields", i + 2));
            }
            if !seen.insert(cols[0].to_string()) {
                return Err(format!("duplicate clip id {:?}", cols[0]));
            }
            entries.push(ManifestEntry {
                clip_id: cols[0].to_string(),
                audio_path: PathBuf::from(cols[1]),
                split: cols[2].parse()?,
            });
        }
        Ok(Self {
            entries,
            sample_rate: sample_rate.ok_or("header lacks sample_rate")?,
            created_with: created_with.ok_or("header lacks dsp fingerprint")?,
            root: root.ok_or("header lacks root")?,
        })
    }
}

fn is_wav(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Seeded selection of `train_count + test_count` clips from `audio_dir`.
///
/// Files are listed in name order, shuffled with ChaCha8 seeded by `seed`;
/// the first `train_count` become train and the next `test_count` test.
pub fn build_manifest(audio_dir: &Path, train_count: usize, test_count: usize, seed: u64) -> Result<CorpusManifest> {
    let root = fs::canonicalize(audio_dir).map_err(|e| Error::io(audio_dir, e))?;
    let mut files: Vec<PathBuf> = fs::read_dir(&root)
        .map_err(|e| Error::io(&root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_wav(p))
        .collect();
    files.sort();
    let needed = train_count + test_count;
    if needed == 0 {
        return Err(Error::InvalidParam("train_count + test_count must be positive".into()));
    }
    if files.len() < needed {
        return Err(Error::InsufficientClips {
            needed,
            found: files.len(),
        });
    }

    let mut sample_rate = None;
    let mut seen = std::collections::HashSet::new();
    for f in &files {
        let info = probe_wav(f)?;
        if info.channels != 1 {
            return Err(Error::format(f, format!("expected mono audio, found {} channels", info.channels)));
        }
        match sample_rate {
            None => sample_rate = Some(info.sample_rate),
            Some(sr) if sr != info.sample_rate => {
                return Err(Error::format(
                    f,
                    format!("sample rate {} differs from corpus rate {sr}", info.sample_rate),
                ))
            }
            _ => {}
        }
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if stem.is_empty() || stem.contains('\t') || !seen.insert(stem.to_lowercase()) {
            return Err(Error::format(f, "clip id is empty, contains a tab, or is not unique"));
        }
    }
    let sample_rate = sample_rate.expect("at least one file");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    files.shuffle(&mut rng);
    let entries = files
        .into_iter()
        .take(needed)
        .enumerate()
        .map(|(i, f)| ManifestEntry {
            clip_id: f.file_stem().and_then(|s| s.to_str()).expect("checked above").to_string(),
            audio_path: f.strip_prefix(&root).expect("listed under root").to_path_buf(),
            split: if i < train_count { Split::Train } else { Split::Test },
        })
        .collect();
    Ok(CorpusManifest {
        entries,
        sample_rate,
        created_with: DspParams::for_rate(sample_rate).fingerprint(),
        root,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{write_wav, Waveform};

    fn corpus(n: usize, sr: u32) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..n {
            let w = Waveform::new(vec![0.01 * i as f64; 400], sr);
            write_wav(&dir.path().join(format!("clip{i:02}.wav")), &w).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        dir
    }

    #[test]
    fn deterministic_and_partitioned() {
        let dir = corpus(10, 16000);
        let a = build_manifest(dir.path(), 9, 1, 7).unwrap();
        let b = build_manifest(dir.path(), 9, 1, 7).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(a.count(Split::Train), 9);
        assert_eq!(a.count(Split::Test), 1);
        assert_eq!(a.sample_rate, 16000);
        let c = build_manifest(dir.path(), 9, 1, 8).unwrap();
        assert_ne!(a.entries, c.entries);
        let mut ids: Vec<_> = a.entries.iter().map(|e| e.clip_id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn text_round_trip() {
        let dir = corpus(4, 8000);
        let mut m = build_manifest(dir.path(), 2, 1, 0).unwrap();
        m.stamp(&DspParams::for_rate(8000));
        let path = dir.path().join("manifest.tsv");
        m.write(&path).unwrap();
        assert_eq!(CorpusManifest::read(&path).unwrap(), m);
        assert!(m.audio_path(&m.entries[0]).is_file());
    }

    #[test]
    fn count_and_rate_errors() {
        let dir = corpus(5, 16000);
        assert!(matches!(
            build_manifest(dir.path(), 9, 1, 0),
            Err(Error::InsufficientClips { needed: 10, found: 5 })
        ));
        write_wav(&dir.path().join("odd.wav"), &Waveform::new(vec![0.0; 100], 8000)).unwrap();
        match build_manifest(dir.path(), 3, 1, 0) {
            Err(Error::Format { path, .. }) => assert!(path.ends_with("odd.wav")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(CorpusManifest::parse("").is_err());
        assert!(CorpusManifest::parse("hello\n").is_err());
        let h = format!("{HEADER_TAG}\tsample_rate=1\tdsp=x\troot=/r\n");
        assert!(CorpusManifest::parse(&format!("{h}a\tb\n")).is_err());
        assert!(CorpusManifest::parse(&format!("{h}a\tb\tvalid\n")).is_err());
        assert!(CorpusManifest::parse(&format!("{h}a\tb\ttrain\na\tc\ttest\n")).is_err());
    }
}
