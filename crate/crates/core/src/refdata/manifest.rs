use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io_util::write_atomic;

pub const MANIFEST_HEADER: &str = "#refcomp-manifest v1";

/// One ranked reference for a target. Paths are stored as written in the file;
/// relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub rank: usize,
    pub partial: PathBuf,
    pub complete: PathBuf,
    pub mask: PathBuf,
    pub cd: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceManifest {
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    /// Targets in file order, each with its references in rank order.
    pub targets: Vec<(PathBuf, Vec<ManifestEntry>)>,
}

impl ReferenceManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn references(&self, target: &Path) -> Option<&[ManifestEntry]> {
        self.targets
            .iter()
            .find(|(t, _)| t == target)
            .map(|(_, e)| e.as_slice())
    }

    /// Looks a target up by stored path, resolved path, or file name.
    pub fn find_target(&self, query: &Path) -> Option<(&Path, &[ManifestEntry])> {
        let canon = |p: &Path| std::fs::canonicalize(p).ok();
        let q = canon(query);
        self.targets
            .iter()
            .find(|(t, _)| {
                t.as_path() == query
                    || (q.is_some() && canon(&self.resolve(t)) == q)
            })
            .or_else(|| {
                let name = query.file_name()?;
                self.targets.iter().find(|(t, _)| t.file_name() == Some(name))
            })
            .map(|(t, e)| (t.as_path(), e.as_slice()))
    }

    pub fn row_count(&self) -> usize {
        self.targets.iter().map(|(_, e)| e.len()).sum()
    }
}

fn path_field(p: &Path) -> Result<&str> {
    let s = p
        .to_str()
        .ok_or_else(|| Error::invalid(format!("path {} is not valid UTF-8", p.display())))?;
    if s.contains('\t') || s.contains('\n') {
        return Err(Error::invalid(format!("path {s:?} contains a tab or newline")));
    }
    Ok(s)
}

pub fn save_manifest(path: &Path, manifest: &ReferenceManifest) -> Result<()> {
    let mut out = String::new();
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for (target, entries) in &manifest.targets {
        for e in entries {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{:.16e}",
                path_field(target)?,
                e.rank,
                path_field(&e.partial)?,
                path_field(&e.complete)?,
                path_field(&e.mask)?,
                e.cd
            )
            .expect("writing to a String");
        }
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_manifest(path: &Path) -> Result<ReferenceManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == MANIFEST_HEADER => {}
        _ => return Err(perr(1, format!("missing header {MANIFEST_HEADER:?}"))),
    }
    let mut manifest = ReferenceManifest {
        base_dir,
        targets: Vec::new(),
    };
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(perr(lineno, format!("expected 6 tab-separated fields, found {}", f.len())));
        }
        let rank: usize = f[1]
            .parse()
            .map_err(|_| perr(lineno, format!("bad rank {:?}", f[1])))?;
        let cd: f64 = f[5]
            .parse()
            .map_err(|_| perr(lineno, format!("bad cd value {:?}", f[5])))?;
        if !cd.is_finite() || cd < 0.0 {
            return Err(perr(lineno, format!("cd value {cd} must be finite and non-negative")));
        }
        let target = PathBuf::from(f[0]);
        let entry = ManifestEntry {
            rank,
            partial: PathBuf::from(f[2]),
            complete: PathBuf::from(f[3]),
            mask: PathBuf::from(f[4]),
            cd,
        };
        for p in [&target, &entry.partial, &entry.complete, &entry.mask] {
            let resolved = manifest.resolve(p);
            if !resolved.is_file() {
                return Err(perr(lineno, format!("referenced file {} does not exist", resolved.display())));
            }
        }
        let list = match manifest.targets.last_mut() {
            Some((t, list)) if *t == target => list,
            _ => {
                if manifest.targets.iter().any(|(t, _)| *t == target) {
                    return Err(perr(lineno, format!("rows for {} are not contiguous", target.display())));
                }
                manifest.targets.push((target, Vec::new()));
                &mut manifest.targets.last_mut().expect("just pushed").1
            }
        };
        if rank != list.len() + 1 {
            return Err(perr(lineno, format!("expected rank {}, found {rank}", list.len() + 1)));
        }
        if let Some(prev) = list.last() {
            if cd < prev.cd {
                return Err(perr(lineno, "references are not sorted by ascending cd".into()));
            }
        }
        list.push(entry);
    }
    let n = manifest.targets.first().map(|(_, e)| e.len());
    if let Some((t, e)) = manifest.targets.iter().find(|(_, e)| Some(e.len()) != n) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{} has {} references, expected {}", t.display(), e.len(), n.unwrap_or(0)),
        });
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, name: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, b"x").unwrap();
        PathBuf::from(name)
    }

    fn sample(dir: &Path) -> ReferenceManifest {
        let t = touch(dir, "t.pcb");
        let mut entries = Vec::new();
        for (rank, cd) in [(1, 0.1f64 / 3.0), (2, 0.2), (3, std::f64::consts::PI)] {
            entries.push(ManifestEntry {
                rank,
                partial: touch(dir, &format!("p{rank}.pcb")),
                complete: touch(dir, &format!("c{rank}.pcb")),
                mask: touch(dir, &format!("m{rank}.pcb")),
                cd,
            });
        }
        ReferenceManifest {
            base_dir: dir.to_path_buf(),
            targets: vec![(t, entries)],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample(dir.path());
        let path = dir.path().join("refs.tsv");
        save_manifest(&path, &m).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back, m);
        assert!(std::fs::read_to_string(&path).unwrap().starts_with(MANIFEST_HEADER));
    }

    #[test]
    fn truncated_line_names_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample(dir.path());
        let path = dir.path().join("refs.tsv");
        save_manifest(&path, &m).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let cut = &lines[2][..lines[2].rfind('\t').unwrap()];
        lines[2] = cut;
        std::fs::write(&path, lines.join("\n")).unwrap();
        match load_manifest(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample(dir.path());
        let path = dir.path().join("refs.tsv");
        save_manifest(&path, &m).unwrap();
        std::fs::remove_file(dir.path().join("m2.pcb")).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Parse { line: 3, .. })));
    }
}
