//! Stage manifests: what a stage read, what it wrote, and under which config.
//!
//! A stage whose manifest still matches its config hash and input hashes, and
//! whose outputs are intact, is a cache hit and is not recomputed. Wall time
//! is execution metadata and plays no part in cache decisions or any
//! determinism comparison.

use std::io::Read;
use std::path::{Path, PathBuf};

use cma_core::error::{CmaError, Result};
use cma_core::seeding::hex_string;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_ECHO_FILE: &str = "config.resolved";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    /// `(relative name, sha256)` of every declared input.
    pub inputs: Vec<(String, String)>,
    /// `(relative name, sha256)` of every produced artifact.
    pub outputs: Vec<(String, String)>,
    pub wall_seconds: f64,
    pub cache_hit: bool,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_string(&hasher.finalize()))
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("stage = {}\n", self.stage));
        s.push_str(&format!("config_hash = {}\n", self.config_hash));
        for (name, hash) in &self.inputs {
            s.push_str(&format!("input {name} {hash}\n"));
        }
        for (name, hash) in &self.outputs {
            s.push_str(&format!("output {name} {hash}\n"));
        }
        s.push_str(&format!("wall_seconds = {}\n", self.wall_seconds));
        s.push_str(&format!("cache_hit = {}\n", self.cache_hit));
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut manifest = Manifest::default();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("input ") {
                let (name, hash) = rest.rsplit_once(' ').ok_or_else(|| {
                    CmaError::Parse(format!("manifest line {}: bad input", lineno + 1))
                })?;
                manifest.inputs.push((name.to_owned(), hash.to_owned()));
            } else if let Some(rest) = line.strip_prefix("output ") {
                let (name, hash) = rest.rsplit_once(' ').ok_or_else(|| {
                    CmaError::Parse(format!("manifest line {}: bad output", lineno + 1))
                })?;
                manifest.outputs.push((name.to_owned(), hash.to_owned()));
            } else if let Some((key, value)) = line.split_once(" = ") {
                match key {
                    "stage" => manifest.stage = value.to_owned(),
                    "config_hash" => manifest.config_hash = value.to_owned(),
                    "wall_seconds" => {
                        manifest.wall_seconds = value.parse().map_err(|_| {
                            CmaError::Parse(format!("manifest line {}: bad wall", lineno + 1))
                        })?
                    }
                    "cache_hit" => {
                        manifest.cache_hit = value.parse().map_err(|_| {
                            CmaError::Parse(format!("manifest line {}: bad flag", lineno + 1))
                        })?
                    }
                    other => {
                        return Err(CmaError::Parse(format!(
                            "manifest line {}: unknown key {other}",
                            lineno + 1
                        )))
                    }
                }
            } else {
                return Err(CmaError::Parse(format!("manifest line {}: malformed", lineno + 1)));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), self.to_text())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Self::parse(&text)
    }
}

/// Declared input for a stage run: a label for the manifest plus the path.
pub struct StageInput {
    pub name: String,
    pub path: PathBuf,
}

pub fn stage_input(name: &str, path: &Path) -> StageInput {
    StageInput { name: name.to_owned(), path: path.to_owned() }
}

/// Run `produce` unless a valid manifest shows this stage already ran with
/// the same config and inputs and its outputs are intact. `produce` returns
/// the relative names of the artifacts it wrote into `dir`.
pub fn run_stage<F>(
    stage: &str,
    dir: &Path,
    config_hash: &str,
    config_echo: &str,
    inputs: &[StageInput],
    produce: F,
) -> Result<Manifest>
where
    F: FnOnce() -> Result<Vec<String>>,
{
    let input_hashes: Vec<(String, String)> = inputs
        .iter()
        .map(|i| Ok((i.name.clone(), hash_file(&i.path)?)))
        .collect::<Result<_>>()?;

    if let Ok(previous) = Manifest::load(dir) {
        let outputs_intact = previous.outputs.iter().all(|(name, hash)| {
            hash_file(&dir.join(name)).map(|h| h == *hash).unwrap_or(false)
        });
        if previous.stage == stage
            && previous.config_hash == config_hash
            && previous.inputs == input_hashes
            && outputs_intact
        {
            let hit = Manifest { cache_hit: true, ..previous };
            hit.save(dir)?;
            return Ok(hit);
        }
    }

    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CONFIG_ECHO_FILE), config_echo)?;
    let started = std::time::Instant::now();
    let produced = produce()?;
    let wall_seconds = started.elapsed().as_secs_f64();

    let outputs: Vec<(String, String)> = produced
        .iter()
        .map(|name| Ok((name.clone(), hash_file(&dir.join(name))?)))
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        stage: stage.to_owned(),
        config_hash: config_hash.to_owned(),
        inputs: input_hashes,
        outputs,
        wall_seconds,
        cache_hit: false,
    };
    manifest.save(dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_text_round_trip() {
        let manifest = Manifest {
            stage: "synth".into(),
            config_hash: "abc123".into(),
            inputs: vec![("config".into(), "ff00".into())],
            outputs: vec![("taxonomy.tsv".into(), "0a0b".into())],
            wall_seconds: 0.125,
            cache_hit: false,
        };
        let back = Manifest::parse(&manifest.to_text()).unwrap();
        assert_eq!(manifest, back);
    }

    #[test]
    fn second_run_is_a_cache_hit() {
        let dir = tempfile::tempdir().unwrap();
        let stage_dir = dir.path().join("stage");
        std::fs::create_dir_all(&stage_dir).unwrap();
        let mut runs = 0;
        let mut hits = Vec::new();
        for _ in 0..2 {
            let out_path = stage_dir.join("out.txt");
            let manifest = run_stage("demo", &stage_dir, "hash1", "echo", &[], || {
                runs += 1;
                std::fs::write(&out_path, "payload")?;
                Ok(vec!["out.txt".to_owned()])
            })
            .unwrap();
            hits.push(manifest.cache_hit);
        }
        assert_eq!(runs, 1, "second run must be served from cache");
        assert_eq!(hits, vec![false, true]);
        assert!(Manifest::load(&stage_dir).unwrap().cache_hit);
    }

    #[test]
    fn config_change_invalidates_the_cache() {
        let dir = tempfile::tempdir().unwrap();
        let stage_dir = dir.path().join("stage");
        std::fs::create_dir_all(&stage_dir).unwrap();
        let mut runs = 0;
        for hash in ["h1", "h2"] {
            let out_path = stage_dir.join("out.txt");
            run_stage("demo", &stage_dir, hash, "echo", &[], || {
                runs += 1;
                std::fs::write(&out_path, format!("payload {runs}"))?;
                Ok(vec!["out.txt".to_owned()])
            })
            .unwrap();
        }
        assert_eq!(runs, 2);
    }

    #[test]
    fn damaged_outputs_invalidate_the_cache() {
        let dir = tempfile::tempdir().unwrap();
        let stage_dir = dir.path().join("stage");
        std::fs::create_dir_all(&stage_dir).unwrap();
        let mut runs = 0;
        let out_path = stage_dir.join("out.txt");
        for _ in 0..2 {
            run_stage("demo", &stage_dir, "h", "echo", &[], || {
                runs += 1;
                std::fs::write(&out_path, "payload")?;
                Ok(vec!["out.txt".to_owned()])
            })
            .unwrap();
            std::fs::write(&out_path, "corrupted").unwrap();
        }
        assert_eq!(runs, 2);
    }
}
