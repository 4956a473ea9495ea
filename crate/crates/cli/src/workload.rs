//! Seeded synthetic workloads.
//!
//! * `different`: independent random files.
//! * `similar`: one random file written repeatedly.
//! * `checkpoint`: a random base image followed by versions, each derived
//!   from the one before by insert, delete and overwrite edits.

use std::fmt;
use std::str::FromStr;

use anyhow::{bail, ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorkloadKind {
    Different,
    Similar,
    Checkpoint,
}

impl FromStr for WorkloadKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "different" => WorkloadKind::Different,
            "similar" => WorkloadKind::Similar,
            "checkpoint" | "checkpoint_synthetic" => WorkloadKind::Checkpoint,
            _ => bail!("unknown workload {s:?} (different|similar|checkpoint)"),
        })
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WorkloadKind::Different => "different",
            WorkloadKind::Similar => "similar",
            WorkloadKind::Checkpoint => "checkpoint",
        })
    }
}

/// Relative weights of the edit kinds in a checkpoint workload.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EditMix {
    pub insert: f64,
    pub delete: f64,
    pub overwrite: f64,
}

impl Default for EditMix {
    fn default() -> Self {
        EditMix { insert: 1.0, delete: 1.0, overwrite: 2.0 }
    }
}

impl FromStr for EditMix {
    type Err = anyhow::Error;

    /// `insert:delete:overwrite`, e.g. `1:1:2`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s.split(':').map(str::parse).collect::<Result<_, _>>()?;
        let [insert, delete, overwrite] = parts[..] else { bail!("edit mix must be insert:delete:overwrite") };
        let mix = EditMix { insert, delete, overwrite };
        mix.validate()?;
        Ok(mix)
    }
}

impl EditMix {
    fn validate(&self) -> Result<()> {
        let w = [self.insert, self.delete, self.overwrite];
        ensure!(w.iter().all(|x| x.is_finite() && *x >= 0.0), "edit weights must be >= 0");
        ensure!(w.iter().sum::<f64>() > 0.0, "at least one edit weight must be positive");
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub file_size: usize,
    pub file_count: usize,
    /// Fraction of the file edited per checkpoint version.
    pub mutation_rate: f64,
    pub mix: EditMix,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            kind: WorkloadKind::Similar,
            file_size: 16 << 20,
            file_count: 10,
            mutation_rate: 0.01,
            mix: EditMix::default(),
            seed: 1,
        }
    }
}

/// Largest single edit, in bytes.
const MAX_EDIT: usize = 512;

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!((0.0..=1.0).contains(&self.mutation_rate), "mutation rate must be in [0, 1]");
        self.mix.validate()
    }

    /// Total bytes the workload produces (exact for different/similar,
    /// nominal for checkpoint).
    pub fn nominal_bytes(&self) -> u64 {
        (self.file_size * self.file_count) as u64
    }

    /// The files in write order. Each file is generated on demand.
    pub fn files(&self) -> Result<Files> {
        self.validate()?;
        Ok(Files { spec: *self, next: 0, current: None, rng: ChaCha8Rng::seed_from_u64(self.seed ^ 0xED17) })
    }

    /// File `i` as written under `run`: one per file for `different`, a
    /// single file otherwise.
    pub fn file_name(&self, run: &str, i: usize) -> String {
        match self.kind {
            WorkloadKind::Different => format!("run{run}/file{i}"),
            _ => format!("run{run}/file"),
        }
    }
}

pub fn random_file(len: usize, seed: u64) -> Vec<u8> {
    let mut v = vec![0u8; len];
    ChaCha8Rng::seed_from_u64(seed).fill(&mut v[..]);
    v
}

pub struct Files {
    spec: WorkloadSpec,
    next: usize,
    current: Option<Vec<u8>>,
    rng: ChaCha8Rng,
}

impl Iterator for Files {
    type Item = Vec<u8>;

    fn next(&mut self) -> Option<Vec<u8>> {
        let s = &self.spec;
        if self.next >= s.file_count {
            return None;
        }
        let i = self.next;
        self.next += 1;
        let file = match s.kind {
            WorkloadKind::Different => random_file(s.file_size, s.seed.wrapping_add(i as u64)),
            WorkloadKind::Similar => self.current.get_or_insert_with(|| random_file(s.file_size, s.seed)).clone(),
            WorkloadKind::Checkpoint => {
                let next = match self.current.take() {
                    None => random_file(s.file_size, s.seed),
                    Some(prev) => mutate(&prev, s.mutation_rate, &s.mix, &mut self.rng),
                };
                self.current = Some(next.clone());
                next
            }
        };
        Some(file)
    }
}

/// Applies edits totalling `rate * len` bytes at uniform positions.
pub fn mutate(data: &[u8], rate: f64, mix: &EditMix, rng: &mut impl Rng) -> Vec<u8> {
    let mut out = data.to_vec();
    let mut budget = (rate * data.len() as f64).round() as usize;
    let total = mix.insert + mix.delete + mix.overwrite;
    while budget > 0 {
        let len = rng.gen_range(1..=MAX_EDIT.min(budget));
        budget -= len;
        let pick = rng.gen::<f64>() * total;
        let at = rng.gen_range(0..=out.len());
        if pick < mix.insert || out.is_empty() {
            let fresh: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            out.splice(at..at, fresh);
        } else if pick < mix.insert + mix.delete {
            let end = (at + len).min(out.len());
            out.drain(at..end);
        } else {
            let end = (at + len).min(out.len());
            rng.fill(&mut out[at..end]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: WorkloadKind) -> WorkloadSpec {
        WorkloadSpec { kind, file_size: 10_000, file_count: 3, ..WorkloadSpec::default() }
    }

    #[test]
    fn similar_repeats_one_file() {
        let files: Vec<_> = spec(WorkloadKind::Similar).files().unwrap().collect();
        assert_eq!(files.len(), 3);
        assert!(files.iter().all(|f| f == &files[0]));
    }

    #[test]
    fn different_files_differ() {
        let files: Vec<_> = spec(WorkloadKind::Different).files().unwrap().collect();
        assert_ne!(files[0], files[1]);
        assert_ne!(files[1], files[2]);
    }

    #[test]
    fn deterministic_given_seed() {
        for kind in [WorkloadKind::Different, WorkloadKind::Similar, WorkloadKind::Checkpoint] {
            let a: Vec<_> = spec(kind).files().unwrap().collect();
            let b: Vec<_> = spec(kind).files().unwrap().collect();
            assert_eq!(a, b);
        }
        let other = WorkloadSpec { seed: 2, ..spec(WorkloadKind::Different) };
        assert_ne!(other.files().unwrap().next(), spec(WorkloadKind::Different).files().unwrap().next());
    }

    #[test]
    fn zero_mutation_keeps_versions() {
        let s = WorkloadSpec { mutation_rate: 0.0, ..spec(WorkloadKind::Checkpoint) };
        let files: Vec<_> = s.files().unwrap().collect();
        assert!(files.iter().all(|f| f == &files[0]));
    }

    #[test]
    fn mutation_changes_versions() {
        let s = WorkloadSpec { mutation_rate: 0.05, ..spec(WorkloadKind::Checkpoint) };
        let files: Vec<_> = s.files().unwrap().collect();
        assert_ne!(files[0], files[1]);
        assert_ne!(files[1], files[2]);
    }

    #[test]
    fn parsing() {
        assert_eq!("checkpoint".parse::<WorkloadKind>().unwrap(), WorkloadKind::Checkpoint);
        assert!("x".parse::<WorkloadKind>().is_err());
        assert_eq!("1:0:0".parse::<EditMix>().unwrap(), EditMix { insert: 1.0, delete: 0.0, overwrite: 0.0 });
        assert!("0:0:0".parse::<EditMix>().is_err());
        assert!("1:2".parse::<EditMix>().is_err());
        assert!(WorkloadSpec { mutation_rate: 1.5, ..WorkloadSpec::default() }.validate().is_err());
    }
}
